import warnings

import numpy as np
import pytest

from flipflop import io
from flipflop.fit import SensitivityRow
from flipflop.kinetics import DecayCurve
from flipflop.rates import RateTriple


def test_rates_round_trip_is_exact(tmp_path, rng):
    rates = rng.random((5, 3)) * 10.0 ** rng.uniform(-7, 1, (5, 3))
    ids = np.array([3, 9, 11, 40, 41])
    path = io.write_rates(tmp_path / "r.csv", (ids, rates))
    back = io.read_rates(path)
    assert [t.ion_id for t in back] == ids.tolist()
    assert np.array_equal(np.array([t.as_array() for t in back]), rates)
    assert path.read_text().splitlines()[0] == "ion_id,R_ab_Hz,R_bc_Hz,R_ac_Hz"
    again = io.write_rates(tmp_path / "r2.csv", back)
    assert again.read_bytes() == path.read_bytes()


def test_histogram_round_trip(tmp_path):
    centres, counts = np.array([-2.125, -1.875]), np.array([4, 7])
    path = io.write_histogram(tmp_path / "h.csv", centres, counts)
    c, n = io.read_histogram(path)
    assert np.array_equal(c, centres) and np.array_equal(n, counts)


def test_decay_round_trip_with_metadata(tmp_path, rng):
    t = np.geomspace(1e-3, 3000, 20)
    pops = rng.random((20, 2)) + 0.1
    sd = rng.random((20, 2)) * 0.01 + 1e-3
    curve = DecayCurve(t, pops, ("a", "c"), sd, "applied", 4.6)
    back = io.read_decay(io.write_decay(tmp_path / "d.csv", curve))
    assert back.levels == ("a", "c") and back.field_regime == "applied" and back.t0 == 4.6
    assert np.array_equal(back.times, t)
    assert np.array_equal(back.populations, pops)
    assert np.array_equal(back.weights, sd)


def test_spectrum_round_trip(tmp_path):
    x = np.linspace(-5, 45, 11)
    y = np.sin(x) ** 2
    gx, gy = io.read_spectrum(io.write_spectrum(tmp_path / "s.csv", x, y))
    assert np.array_equal(gx, x) and np.array_equal(gy, y)


def test_malformed_row_reports_line(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("# field_regime=zero\ntime_s,pop_a\n0.1,1.0\n0.2,abc\n")
    with pytest.raises(io.DataFormatError, match=r"bad.csv:4"):
        io.read_decay(path)
    path.write_text("time_s,pop_a\n0.1,1.0,3\n")
    with pytest.raises(io.DataFormatError, match=r":2: expected 2 fields"):
        io.read_decay(path)


def test_non_monotone_times_name_rows(tmp_path):
    path = tmp_path / "t.csv"
    path.write_text("time_s,pop_a\n0.1,1.0\n0.3,0.9\n0.2,0.8\n0.4,0.7\n")
    with pytest.raises(io.DataFormatError, match=r"1->2 \(lines 3, 4\)"):
        io.read_decay(path)


@pytest.mark.parametrize(
    "header",
    ["t,pop_a", "time_s,pop_x", "time_s,pop_a,sd_b", "time_s,pop_a,extra"],
)
def test_bad_decay_headers(tmp_path, header):
    path = tmp_path / "h.csv"
    path.write_text(header + "\n" + ",".join(["1"] * len(header.split(","))) + "\n")
    with pytest.raises(io.DataFormatError):
        io.read_decay(path)


def test_missing_file_and_header(tmp_path):
    with pytest.raises(FileNotFoundError):
        io.read_rates(tmp_path / "nope.csv")
    (tmp_path / "empty.csv").write_text("# only a comment\n")
    with pytest.raises(io.DataFormatError, match="no header"):
        io.read_rates(tmp_path / "empty.csv")


def test_ingest_moving_average_and_normalization(tmp_path):
    t = np.array([1e-3, 2e-3, 3e-3, 0.1, 1.0])
    pops = np.array([0.8, 0.9, 1.0, 0.5, 0.25])
    curve = DecayCurve(t, pops, ("a",), np.full(5, 0.01))
    path = io.write_decay(tmp_path / "d.csv", curve)
    got = io.ingest_decay(path, moving_average_ms=5.0)
    assert got.populations[0, 0] == 1.0
    assert got.times.tolist() == [3e-3, 0.1, 1.0]
    assert got.populations[1:, 0] == pytest.approx([0.5 / 0.9, 0.25 / 0.9])
    raw = io.ingest_decay(path, normalize=False)
    assert np.array_equal(raw.populations[:, 0], pops)


def test_ingest_without_sd_warns(tmp_path):
    path = tmp_path / "d.csv"
    path.write_text("time_s,pop_b\n1,0.5\n2,0.25\n")
    with pytest.warns(UserWarning, match="uniform weights"):
        got = io.ingest_decay(path, field_regime="applied")
    assert np.array_equal(got.weights, np.full((2, 1), 2.0))  # 1 / first value
    assert got.field_regime == "applied"


def test_ingest_rejects_non_positive(tmp_path):
    path = tmp_path / "d.csv"
    path.write_text("time_s,pop_a,sd_a\n1,0.5,0.1\n2,-0.1,0.1\n")
    with pytest.raises(io.DataFormatError, match="must be > 0"):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            io.ingest_decay(path)


def test_trace_and_sensitivity_writers(tmp_path):
    trace = np.array([[0, 0, 3.0, 3.0], [0, 1, 2.0, 2.0], [1, 0, 5.0, 2.0]])
    text = io.write_trace(tmp_path / "t.csv", trace).read_text().splitlines()
    assert text[0] == "restart,evaluation,score,best_score" and text[2] == "0,1,2,2"
    rows = [SensitivityRow("gamma_ab", 0.5, 0.25, 0.1)]
    text = io.write_sensitivity(tmp_path / "s.csv", rows).read_text().splitlines()
    assert text[1] == "gamma_ab,0.5,0.25,0.10000000000000001"


def test_rate_triple_list_writer(tmp_path):
    path = io.write_rates(tmp_path / "r.csv", [RateTriple(0.1, 0.2, 0.3, 7)])
    assert path.read_text().splitlines()[1].startswith("7,0.1")
