"""CSV readers and writers. Floats are written with 17 significant digits so
every file re-reads to the same binary values.

Decay files may start with ``# key=value`` metadata lines (``field_regime``,
``t0_s``); they carry the annotations that are not columns.
"""

from __future__ import annotations

import csv
import io as _io
import warnings
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .kinetics import LEVELS, DecayCurve
from .rates import RateTriple

FLOAT_FMT = "{:.17g}"


class DataFormatError(ValueError):
    pass


def _fmt(v) -> str:
    if isinstance(v, str):
        return v
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return FLOAT_FMT.format(float(v))


def _write(path: Path, header: Sequence[str], rows: Iterable[Sequence], meta: dict | None = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    buf = _io.StringIO()
    for k, v in (meta or {}).items():
        buf.write(f"# {k}={v}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_fmt(v) for v in row])
    path.write_text(buf.getvalue(), encoding="utf-8")
    return path


def _read(path: Path) -> tuple[dict, list[str], list[tuple[int, list[str]]]]:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"data file not found: {path}")
    meta, header, rows = {}, None, []
    with path.open(encoding="utf-8", newline="") as fh:
        for lineno, line in enumerate(fh, start=1):
            text = line.strip()
            if not text:
                continue
            if text.startswith("#"):
                if header is None and "=" in text:
                    k, v = text[1:].split("=", 1)
                    meta[k.strip()] = v.strip()
                continue
            cells = [c.strip() for c in next(csv.reader([text]))]
            if header is None:
                header = cells
            else:
                rows.append((lineno, cells))
    if header is None:
        raise DataFormatError(f"{path}: no header row")
    return meta, header, rows


def _floats(path, header, rows) -> np.ndarray:
    out = np.empty((len(rows), len(header)))
    for i, (lineno, cells) in enumerate(rows):
        if len(cells) != len(header):
            raise DataFormatError(f"{path}:{lineno}: expected {len(header)} fields, got {len(cells)}")
        try:
            out[i] = [float(c) for c in cells]
        except ValueError as exc:
            raise DataFormatError(f"{path}:{lineno}: {exc}") from exc
        if not np.all(np.isfinite(out[i])):
            raise DataFormatError(f"{path}:{lineno}: non-finite value")
    return out


# --------------------------------------------------------------------------- rates

RATE_HEADER = ("ion_id", "R_ab_Hz", "R_bc_Hz", "R_ac_Hz")
HIST_HEADER = ("bin_center_log10Hz", "count")


def write_rates(path, triples: Sequence[RateTriple] | tuple[np.ndarray, np.ndarray]) -> Path:
    if isinstance(triples, tuple):
        ids, rates = triples
        rows = ((int(i), *r) for i, r in zip(ids, rates))
    else:
        rows = ((t.ion_id, t.R_ab, t.R_bc, t.R_ac) for t in triples)
    return _write(path, RATE_HEADER, rows)


def read_rates(path) -> list[RateTriple]:
    _, header, rows = _read(path)
    if tuple(header) != RATE_HEADER:
        raise DataFormatError(f"{path}: expected header {','.join(RATE_HEADER)}")
    data = _floats(path, header, rows)
    return [RateTriple(float(r[1]), float(r[2]), float(r[3]), int(r[0])) for r in data]


def write_histogram(path, centers: np.ndarray, counts: np.ndarray) -> Path:
    return _write(path, HIST_HEADER, ((float(c), int(n)) for c, n in zip(centers, counts)))


def read_histogram(path) -> tuple[np.ndarray, np.ndarray]:
    _, header, rows = _read(path)
    if tuple(header) != HIST_HEADER:
        raise DataFormatError(f"{path}: expected header {','.join(HIST_HEADER)}")
    data = _floats(path, header, rows)
    return data[:, 0], data[:, 1].astype(int)


# --------------------------------------------------------------------------- decay


def write_decay(path, curve: DecayCurve) -> Path:
    header = ["time_s"] + [f"pop_{lv}" for lv in curve.levels]
    cols = [curve.times] + [curve.populations[:, k] for k in range(len(curve.levels))]
    if curve.weights is not None:
        header += [f"sd_{lv}" for lv in curve.levels]
        cols += [curve.weights[:, k] for k in range(len(curve.levels))]
    meta = {"field_regime": curve.field_regime}
    if curve.t0 is not None:
        meta["t0_s"] = repr(float(curve.t0))
    return _write(path, header, zip(*cols), meta)


def read_decay(path, field_regime: str | None = None) -> DecayCurve:
    """Parse a decay CSV exactly as written; see ``ingest_decay`` for preprocessing."""
    meta, header, rows = _read(path)
    if not header or header[0] != "time_s":
        raise DataFormatError(f"{path}: first column must be time_s")
    pops = [h for h in header[1:] if h.startswith("pop_")]
    sds = [h for h in header[1:] if h.startswith("sd_")]
    levels = tuple(h[4:] for h in pops)
    if not levels or any(lv not in LEVELS for lv in levels) or len(pops) + len(sds) != len(header) - 1:
        raise DataFormatError(f"{path}: columns must be time_s, pop_<level>..., optional sd_<level>...")
    if sds and tuple(h[3:] for h in sds) != levels:
        raise DataFormatError(f"{path}: sd columns must match the pop columns")
    data = _floats(path, header, rows)
    times = data[:, 0]
    bad = np.nonzero(np.diff(times) <= 0)[0]
    if len(bad):
        pairs = ", ".join(f"{i}->{i + 1} (lines {rows[i][0]}, {rows[i + 1][0]})" for i in bad[:10])
        raise DataFormatError(f"{path}: times not strictly increasing at rows {pairs}")
    n = len(levels)
    weights = data[:, 1 + n : 1 + 2 * n] if sds else None
    regime = field_regime or meta.get("field_regime", "zero")
    t0 = float(meta["t0_s"]) if "t0_s" in meta else None
    return DecayCurve(times, data[:, 1 : 1 + n], levels, weights, regime, t0)


def ingest_decay(
    path,
    moving_average_ms: float | None = None,
    normalize: bool = True,
    field_regime: str | None = None,
) -> DecayCurve:
    """Load measured decay data for fitting.

    Points up to ``moving_average_ms`` are averaged into one point at the
    last such time; with ``normalize`` each level is then divided by its
    first value (so the first point is exactly 1). Missing sd columns give
    uniform weights of 1 with a warning. Non-positive populations or
    weights are rejected because the score divides by them.
    """
    curve = read_decay(path, field_regime)
    times, pops = curve.times, curve.populations
    weights = curve.weights
    if weights is None:
        warnings.warn(f"{path}: no sd columns, using uniform weights", UserWarning, stacklevel=2)
        weights = np.ones_like(pops)
    if moving_average_ms is not None:
        cut = times <= moving_average_ms * 1e-3
        m = int(cut.sum())
        if m > 1:
            head_p = pops[:m].mean(axis=0)
            head_w = np.sqrt(np.mean(weights[:m] ** 2, axis=0) / m)
            times = np.concatenate([[times[m - 1]], times[m:]])
            pops = np.vstack([head_p, pops[m:]])
            weights = np.vstack([head_w, weights[m:]])
    if normalize:
        scale = pops[0].copy()
        if np.any(scale <= 0):
            raise DataFormatError(f"{path}: cannot normalize, first population is <= 0")
        pops = pops / scale
        weights = weights / scale
    bad = np.argwhere((pops <= 0) | (weights <= 0))
    if len(bad):
        raise DataFormatError(f"{path}: populations and weights must be > 0 (first bad row index {int(bad[0, 0])})")
    return DecayCurve(times, pops, curve.levels, weights, curve.field_regime, curve.t0)


# --------------------------------------------------------------------------- spectrum and fit

SPECTRUM_HEADER = ("detuning_MHz", "absorption_au")
TRACE_HEADER = ("restart", "evaluation", "score", "best_score")


def write_spectrum(path, grid: np.ndarray, absorption: np.ndarray) -> Path:
    return _write(path, SPECTRUM_HEADER, zip(grid, absorption))


def read_spectrum(path) -> tuple[np.ndarray, np.ndarray]:
    _, header, rows = _read(path)
    if tuple(header) != SPECTRUM_HEADER:
        raise DataFormatError(f"{path}: expected header {','.join(SPECTRUM_HEADER)}")
    data = _floats(path, header, rows)
    return data[:, 0], data[:, 1]


def write_trace(path, trace: np.ndarray) -> Path:
    rows = ((int(r[0]), int(r[1]), r[2], r[3]) for r in trace)
    return _write(path, TRACE_HEADER, rows)


def write_sensitivity(path, rows) -> Path:
    return _write(
        path,
        ("parameter", "delta_minus5pct", "delta_plus5pct", "relative"),
        ((r.name, r.minus, r.plus, r.relative) for r in rows),
    )
