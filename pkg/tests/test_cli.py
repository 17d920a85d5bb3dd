import numpy as np
import pytest

from flipflop import io, pipeline
from flipflop.cli import main
from flipflop.config import load_config
from flipflop.crystal import read_lattice
from flipflop.kinetics import class_curve
from flipflop.rates import FieldRegime

from conftest import write_small_config


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out = capsys.readouterr()
    return code, out.out, out.err


def test_missing_lattice_is_an_input_error(tmp_path, capsys):
    cfg = write_small_config(tmp_path, {"path = y2sio5_site1.lattice": "path = nowhere/missing.lattice"})
    code, _, err = run(capsys, "rates", "--config", cfg, "--out-dir", tmp_path)
    assert code == 2
    assert "missing.lattice" in err


def test_seed_changes_rates(small_config, tmp_path, capsys):
    for seed in (1, 2):
        assert run(capsys, "rates", "--config", small_config, "--regime", "zero", "--seed", seed, "--out-dir", tmp_path / str(seed))[0] == 0
    a = (tmp_path / "1" / "rates_zero.csv").read_bytes()
    b = (tmp_path / "2" / "rates_zero.csv").read_bytes()
    assert a != b


def test_rates_writes_histograms_and_svg(small_config, tmp_path, capsys):
    code, out, _ = run(capsys, "--svg", "rates", "--config", small_config, "--out-dir", tmp_path)
    assert code == 0
    assert out.count("histogram mode") == 6
    for regime in ("zero", "applied"):
        assert (tmp_path / f"hist_{regime}.svg").read_text().startswith("<svg")
        for pair in ("ab", "bc", "ac"):
            centres, counts = io.read_histogram(tmp_path / f"hist_{regime}_{pair}.csv")
            assert counts.sum() == len(io.read_rates(tmp_path / f"rates_{regime}.csv"))


def test_worker_count_does_not_change_outputs(small_config, tmp_path, capsys):
    for w in (1, 8):
        d = tmp_path / f"w{w}"
        assert run(capsys, "rates", "--config", small_config, "--workers", w, "--out-dir", d)[0] == 0
        assert run(capsys, "decay", "--config", small_config, "--regime", "applied", "--workers", w, "--out-dir", d)[0] == 0
    for name in ("rates_zero.csv", "rates_applied.csv", "decay_applied.csv"):
        assert (tmp_path / "w1" / name).read_bytes() == (tmp_path / "w8" / name).read_bytes()


def test_single_ion_decay_matches_class_curve(small_config, tmp_path, capsys):
    cfg = load_config(small_config)
    ens = pipeline.build_ensemble(cfg)
    ion = int(pipeline.select_centers(cfg, ens)[0])
    assert run(capsys, "decay", "--config", small_config, "--ion", ion, "--out-dir", tmp_path)[0] == 0
    curve = io.read_decay(tmp_path / f"decay_zero_ion{ion}.csv")
    rates = pipeline.couplings(cfg, ens, FieldRegime.ZERO, np.array([ion])).rates(cfg.density("zero"))
    for k, lv in enumerate("abc"):
        expected = class_curve(rates[0], lv, curve.times)
        assert np.allclose(curve.populations[:, k], expected, rtol=1e-12, atol=0)


def test_bad_ion_id(small_config, tmp_path, capsys):
    code, _, err = run(capsys, "decay", "--config", small_config, "--ion", 10**9, "--out-dir", tmp_path)
    assert code == 2 and "not in ensemble" in err


def test_applied_decay_is_continuous_at_ramp(small_config, tmp_path, capsys):
    assert run(capsys, "decay", "--config", small_config, "--regime", "applied", "--out-dir", tmp_path)[0] == 0
    curve = io.read_decay(tmp_path / "decay_applied.csv")
    assert curve.t0 == 4.6
    i = int(np.searchsorted(curve.times, curve.t0))
    assert curve.times[i] == curve.t0
    # neighbouring samples bracket the value at t0; no jump
    step = np.abs(np.diff(curve.populations[i - 1 : i + 2], axis=0))
    assert np.all(step < 0.02)
    assert np.all(np.diff(curve.populations, axis=0) <= 1e-12)


def test_spectrum_burn_zero_peaks(tmp_path, capsys):
    code, out, _ = run(capsys, "spectrum", "--burn", 0, "--out-dir", tmp_path)
    assert code == 0
    assert "peaks at 0.00, 4.60, 9.40" in out
    assert "I    " in out or "class" in out
    grid, absorption = io.read_spectrum(tmp_path / "spectrum_0MHz.csv")
    assert grid[0] < 0 < grid[-1] and absorption.min() >= 0


def test_spectrum_off_resonance(tmp_path, capsys):
    code, _, err = run(capsys, "spectrum", "--burn", 1.0, "--out-dir", tmp_path)
    assert code == 2 and "nearest" in err


def test_gen_lattice_demo_reads_back(tmp_path, capsys):
    assert run(capsys, "gen-lattice-demo", "--out-dir", tmp_path)[0] == 0
    lat = read_lattice(tmp_path / "demo.lattice")
    assert len(lat.fractional) == 5
    assert set(lat.site_label) == {1, 2}


def _decay_csv(path, rows):
    path.write_text("# field_regime=zero\ntime_s,pop_a,sd_a\n" + "".join(rows))
    return path


def test_fit_dry_run(tmp_path, capsys):
    data = _decay_csv(tmp_path / "z.csv", ["0.01,1.0,0.02\n", "1,0.8,0.02\n", "100,0.5,0.02\n"])
    code, out, _ = run(capsys, "fit", "--zero", data, "--dry-run", "--out-dir", tmp_path)
    assert code == 0 and "dry run" in out and "3 points" in out
    assert not (tmp_path / "fit_report.txt").exists()


def test_fit_malformed_csv_names_line(tmp_path, capsys):
    data = _decay_csv(tmp_path / "z.csv", ["0.01,1.0,0.02\n", "1,oops,0.02\n"])
    code, _, err = run(capsys, "fit", "--zero", data, "--dry-run")
    assert code == 2
    assert "z.csv:4" in err


@pytest.mark.parametrize(
    "argv, message",
    [
        (["fit", "--dry-run"], "at least one"),
        (["fit", "--zero", "missing.csv", "--dry-run"], "missing.csv"),
    ],
)
def test_fit_input_errors(tmp_path, capsys, argv, message):
    code, _, err = run(capsys, *argv)
    assert code == 2 and message in err


def test_fit_budget_floor(tmp_path, capsys):
    data = _decay_csv(tmp_path / "z.csv", ["0.01,1.0,0.02\n", "1,0.8,0.02\n"])
    code, _, err = run(capsys, "fit", "--zero", data, "--budget", 50, "--dry-run")
    assert code == 2 and "budget" in err


def test_workers_must_be_positive(capsys):
    code, _, err = run(capsys, "--workers", 0, "spectrum")
    assert code == 2 and "workers" in err
