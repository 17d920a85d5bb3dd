"""Closed-form three-level flip-flop kinetics and ensemble decay curves.

Rate equations (populations N_a, N_b, N_c)::

    dN_a/dt = R_ab N_b + R_ac N_c - (R_ab + R_ac) N_a   (and cyclic)

have eigen-rates 0 and K +/- sigma with

    K = R_ab + R_ac + R_bc
    sigma^2 = R_ab^2 + R_ac^2 + R_bc^2 - R_ab R_ac - R_ab R_bc - R_ac R_bc.

All evaluators work on arrays: rates shaped (..., 3) broadcast against times.
The 1/sigma terms are rewritten as exp(-(K-sigma)t) * (1 - exp(-2 sigma t)) / (2 sigma),
which is finite and accurate down to sigma = 0.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import least_squares

from .rates import RateTriple

logger = logging.getLogger(__name__)

LEVELS = ("a", "b", "c")
SIGMA_SERIES_THRESHOLD = 1e-9

# class-difference initial conditions: (peak, background) per probed level
CLASS_INITS = {
    "a": ((1.0, 0.0, 0.0), (0.0, 0.0, 1.0)),
    "b": ((0.0, 1.0, 0.0), (0.0, 0.0, 1.0)),
    "c": ((0.0, 0.0, 1.0), (1.0, 0.0, 0.0)),
}


@dataclass(frozen=True)
class InitialPopulations:
    n_a: float
    n_b: float
    n_c: float

    def __post_init__(self):
        if min(self.n_a, self.n_b, self.n_c) < 0 or self.n_a + self.n_b + self.n_c <= 0:
            raise ValueError("initial populations must be >= 0 with a positive total")

    def as_array(self) -> np.ndarray:
        return np.array([self.n_a, self.n_b, self.n_c])


@dataclass(frozen=True)
class KineticsSolution:
    """Derived constants of one rate triple (all Hz)."""

    A1: float
    A2: float
    A3: float
    K: float
    sigma: float

    @classmethod
    def from_rates(cls, triple) -> "KineticsSolution":
        r = _as_rates(triple)
        ab, bc, ac = r
        K, sigma, _ = _constants(r)
        return cls(ab + ac - 2 * bc, ab + bc - 2 * ac, ac + bc - 2 * ab, float(K), float(sigma))

    @property
    def slow_rate(self) -> float:
        return self.K - self.sigma

    @property
    def fast_rate(self) -> float:
        return self.K + self.sigma


@dataclass(eq=False)
class DecayCurve:
    """Populations of one or more levels on a time grid.

    ``populations`` and ``weights`` are (n_times, n_levels), columns ordered
    as ``levels``. ``t0`` marks the end of a field ramp, if any.
    """

    times: np.ndarray
    populations: np.ndarray
    levels: tuple[str, ...] = LEVELS
    weights: np.ndarray | None = None
    field_regime: str = "zero"
    t0: float | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        pops = np.asarray(self.populations, dtype=float)
        if pops.ndim == 1:
            pops = pops[:, None]
        self.populations = pops
        self.levels = tuple(self.levels)
        if any(lv not in LEVELS for lv in self.levels) or len(set(self.levels)) != len(self.levels):
            raise ValueError(f"levels must be distinct entries of {LEVELS}")
        if pops.shape != (len(self.times), len(self.levels)):
            raise ValueError("populations must be (n_times, n_levels)")
        if len(self.times) > 1 and np.any(np.diff(self.times) <= 0):
            raise ValueError("times must be strictly increasing")
        if not np.all(np.isfinite(pops)):
            raise ValueError("populations must be finite")
        if self.weights is not None:
            self.weights = np.asarray(self.weights, dtype=float)
            if self.weights.ndim == 1:
                self.weights = self.weights[:, None]
            if self.weights.shape != pops.shape:
                raise ValueError("weights must match populations")

    def level(self, name: str) -> np.ndarray:
        return self.populations[:, self.levels.index(name)]


def _as_rates(triple) -> np.ndarray:
    if isinstance(triple, RateTriple):
        r = triple.as_array()
    else:
        r = np.asarray(triple, dtype=float)
    if r.shape[-1] != 3:
        raise ValueError("rates must have a trailing axis of length 3 (R_ab, R_bc, R_ac)")
    if np.any(r < 0) or not np.all(np.isfinite(r)):
        raise ValueError("rates must be finite and >= 0")
    return r


def _constants(r: np.ndarray):
    ab, bc, ac = r[..., 0], r[..., 1], r[..., 2]
    K = ab + bc + ac
    sigma = np.sqrt(0.5 * ((ab - bc) ** 2 + (bc - ac) ** 2 + (ab - ac) ** 2))
    products = ab * bc + ab * ac + bc * ac
    # K - sigma = (K^2 - sigma^2) / (K + sigma), free of cancellation
    denom = K + sigma
    slow = np.divide(3.0 * products, denom, out=np.zeros_like(K), where=denom > 0)
    return K, sigma, slow


def _modes(r: np.ndarray, t: np.ndarray):
    """e^{-Kt} cosh(sigma t) and e^{-Kt} sinh(sigma t)/sigma, broadcast to (..., n_t)."""
    K, sigma, slow = _constants(r)
    K, sigma, slow = K[..., None], sigma[..., None], slow[..., None]
    t = np.asarray(t, dtype=float)
    e_slow = np.exp(-slow * t)
    e_fast = np.exp(-(K + sigma) * t)
    x = sigma * t
    with np.errstate(divide="ignore", invalid="ignore"):
        sinhc = -np.expm1(-2.0 * x) / (2.0 * sigma)
    # sigma << K: series of (1 - e^{-2x}) / (2 sigma) in x
    small = (sigma <= SIGMA_SERIES_THRESHOLD * K) & (x < 1e-3)
    series = t * (1.0 - x + (2.0 / 3.0) * x**2)
    sinhc = np.where(small | (sigma == 0), series, sinhc)
    cosh_term = 0.5 * (e_slow + e_fast)
    sinh_term = e_slow * sinhc
    return cosh_term, sinh_term


def evolve(triple, init, t) -> np.ndarray:
    """Populations (N_a, N_b, N_c) at times ``t``; returns (..., n_t, 3)."""
    r = _as_rates(triple)
    n = init.as_array() if isinstance(init, InitialPopulations) else np.asarray(init, dtype=float)
    t = np.atleast_1d(np.asarray(t, dtype=float))
    if np.any(t < 0):
        raise ValueError("t must be >= 0")
    ab, bc, ac = r[..., 0:1], r[..., 1:2], r[..., 2:3]
    A1, A2, A3 = ab + ac - 2 * bc, ab + bc - 2 * ac, ac + bc - 2 * ab
    na, nb, nc = n[..., 0:1], n[..., 1:2], n[..., 2:3]
    total = (na + nb + nc) / 3.0
    ch, sh = _modes(r, t)
    # N_k = total/3 + (Y_k cosh - X_k sinh/sigma) e^{-Kt} / 3
    xs = (na * A1 + nb * A3 + nc * A2, na * A3 + nb * A2 + nc * A1, na * A2 + nb * A1 + nc * A3)
    ys = (2 * na - nb - nc, 2 * nb - na - nc, 2 * nc - na - nb)
    return np.stack([total + (y * ch - x * sh) / 3.0 for x, y in zip(xs, ys)], axis=-1)


def class_curve(triple, level: str, t) -> np.ndarray:
    """Peak-minus-background population of the probed level, per ion: (..., n_t)."""
    r = _as_rates(triple)
    t = np.atleast_1d(np.asarray(t, dtype=float))
    if np.any(t < 0):
        raise ValueError("t must be >= 0")
    ab, bc, ac = r[..., 0:1], r[..., 1:2], r[..., 2:3]
    ch, sh = _modes(r, t)
    if level == "a":
        return ch - (ac - bc) * sh
    if level == "b":
        return ch - (bc - ac) * sh
    if level == "c":
        return ch - (ac - ab) * sh
    raise ValueError(f"level must be one of {LEVELS}")


@dataclass(frozen=True)
class Ramp:
    """Zero-field evolution up to ``t0``, then the in-field rates."""

    t0: float
    zero_field_rates: np.ndarray  # (n_ions, 3)


def _rates_array(triples) -> np.ndarray:
    if len(triples) and isinstance(triples[0], RateTriple):
        return np.array([tr.as_array() for tr in triples])
    return _as_rates(np.asarray(triples, dtype=float).reshape(-1, 3))


def ensemble_curve(rates: np.ndarray, level: str, times: np.ndarray, ramp: Ramp | None = None) -> np.ndarray:
    """Ensemble-averaged class curve of one level; ``rates`` is (n_ions, 3)."""
    times = np.asarray(times, dtype=float)
    if len(rates) == 0:
        raise ValueError("at least one ion is required")
    if ramp is None:
        return _mean_over_ions(class_curve(rates, level, times))
    zf = ramp.zero_field_rates
    if zf.shape != rates.shape:
        raise ValueError("zero-field and in-field rate lists must cover the same ions")
    before = times < ramp.t0
    out = np.empty_like(times)
    if before.any():
        out[before] = _mean_over_ions(class_curve(zf, level, times[before]))
    after = ~before
    if after.any():
        peak, background = CLASS_INITS[level]
        k = LEVELS.index(level)
        t0 = np.array([ramp.t0])
        start_peak = evolve(zf, peak, t0)[:, 0, :]
        start_bg = evolve(zf, background, t0)[:, 0, :]
        dt = times[after] - ramp.t0
        diff = evolve(rates, start_peak, dt)[..., k] - evolve(rates, start_bg, dt)[..., k]
        curve = _mean_over_ions(diff)
        # rescale so the in-field branch starts at the zero-field ensemble value at t0
        reference = _mean_over_ions(class_curve(zf, level, t0))[0]
        start = _mean_over_ions(start_peak[:, k : k + 1] - start_bg[:, k : k + 1])[0]
        scale = reference / start if start != 0 else 1.0
        out[after] = curve * scale
    return out


def _mean_over_ions(values: np.ndarray) -> np.ndarray:
    # fixed ion-order accumulation, independent of chunking
    return np.add.reduce(values, axis=0) / values.shape[0]


def ensemble_decay(
    triples,
    level: str | tuple[str, ...] | None,
    times,
    ramp: dict | Ramp | None = None,
    field_regime: str = "zero",
) -> DecayCurve:
    """Average the per-ion class curves over the ensemble.

    ``ramp`` may be a ``Ramp`` or ``{"t0": s, "zero_field_triples": [...]}``;
    both rate lists must cover the same ions in the same order.
    """
    rates = _rates_array(triples)
    if isinstance(ramp, dict):
        zf = ramp["zero_field_triples"]
        if len(zf) and isinstance(zf[0], RateTriple) and len(triples) and isinstance(triples[0], RateTriple):
            if [a.ion_id for a in zf] != [b.ion_id for b in triples]:
                raise ValueError("zero-field and in-field triples have different ion ids")
        ramp = Ramp(float(ramp["t0"]), _rates_array(zf))
    levels = LEVELS if level is None else ((level,) if isinstance(level, str) else tuple(level))
    times = np.asarray(times, dtype=float)
    pops = np.column_stack([ensemble_curve(rates, lv, times, ramp) for lv in levels])
    return DecayCurve(times, pops, levels, None, field_regime, None if ramp is None else ramp.t0)


# --------------------------------------------------------------------------- #
# macroscopic comparison


@dataclass(frozen=True)
class BiexpFit:
    w1: float
    tau1: float
    w2: float
    tau2: float
    cost: float
    converged: bool

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        return self.w1 * np.exp(-t / self.tau1) + self.w2 * np.exp(-t / self.tau2)


def biexponential_fit(curve: DecayCurve | tuple[np.ndarray, np.ndarray], level: str | None = None) -> BiexpFit:
    """Least-squares fit of w e^{-t/tau1} + (1 - w) e^{-t/tau2}, tau1 <= tau2.

    A single-exponential input converges to w -> 1 or w -> 0 with the
    unused time constant left wherever the optimizer stopped.
    """
    if isinstance(curve, DecayCurve):
        t = curve.times
        y = curve.level(level) if level is not None else curve.populations[:, 0]
    else:
        t, y = (np.asarray(v, dtype=float) for v in curve)
    if len(t) < 4:
        raise ValueError("at least 4 points are needed for a bi-exponential fit")
    tpos = t[t > 0]
    lo = np.log(tpos.min() / 10 if len(tpos) else 1e-3)
    hi = np.log(t.max() * 100)

    def model(p):
        w, l1, dl = p
        tau1 = np.exp(l1)
        tau2 = np.exp(l1 + dl)
        return w * np.exp(-t / tau1) + (1 - w) * np.exp(-t / tau2)

    best = None
    for start in np.linspace(lo + 1, hi - 3, 6):
        for gap in (1.0, 4.0, 8.0):
            res = least_squares(
                lambda p: model(p) - y,
                x0=[0.5, start, gap],
                bounds=([0.0, lo, 0.0], [1.0, hi, hi - lo]),
                xtol=1e-15,
                ftol=1e-15,
                gtol=1e-15,
                max_nfev=4000,
            )
            if best is None or res.cost < best.cost:
                best = res
    w, l1, dl = best.x
    if not best.success:
        warnings.warn("bi-exponential fit did not converge", RuntimeWarning, stacklevel=2)
    return BiexpFit(float(w), float(np.exp(l1)), float(1 - w), float(np.exp(l1 + dl)), float(best.cost), bool(best.success))


def single_exponential_fit(t: np.ndarray, y: np.ndarray) -> tuple[float, float, float]:
    """Fit A e^{-t/tau}; returns (A, tau, residual sum of squares)."""
    t = np.asarray(t, dtype=float)
    y = np.asarray(y, dtype=float)
    lo, hi = np.log(max(t[t > 0].min(), 1e-9) / 10), np.log(t.max() * 100)
    best = None
    for start in np.linspace(lo + 1, hi - 1, 8):
        res = least_squares(lambda p: p[0] * np.exp(-t / np.exp(p[1])) - y, x0=[1.0, start], bounds=([0, lo], [2, hi]))
        if best is None or res.cost < best.cost:
            best = res
    return float(best.x[0]), float(np.exp(best.x[1])), float(2 * best.cost)
