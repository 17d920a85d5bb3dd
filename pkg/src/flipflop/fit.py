"""Fit the six linewidth parameters to measured decay curves.

score = sum over regimes, levels and times of ((p_e - p_m) / (w p_e))^2

Coupling strengths sum_j |M_j|^2 do not depend on the fitted parameters, so
``ModelContext`` holds them per field regime and each evaluation only
re-applies the Lorentzian factor: O(ions) work per candidate.

The search is a bounded Nelder-Mead simplex in a unit cube over
log10(Gamma) and log10(kappa), restarted from Latin-hypercube points.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.optimize import minimize
from scipy.stats import qmc
from sklearn.base import BaseEstimator

from .kinetics import DecayCurve, Ramp, ensemble_curve
from .rates import DensityParams, EnsembleCouplings, FieldRegime

logger = logging.getLogger(__name__)

PARAM_NAMES = ("gamma_ab", "gamma_bc", "gamma_ac", "kappa_ab", "kappa_bc", "kappa_ac")


@dataclass(frozen=True)
class FitParams:
    """Gamma in kHz, kappa dimensionless."""

    gamma_ab: float
    gamma_bc: float
    gamma_ac: float
    kappa_ab: float = 1.0
    kappa_bc: float = 1.0
    kappa_ac: float = 1.0

    def __post_init__(self):
        if min(self.gamma) < 0:
            raise ValueError("linewidths must be >= 0")
        if min(self.kappa) < 1:
            raise ValueError("kappa must be >= 1")

    @property
    def gamma(self) -> tuple[float, float, float]:
        return (self.gamma_ab, self.gamma_bc, self.gamma_ac)

    @property
    def kappa(self) -> tuple[float, float, float]:
        return (self.kappa_ab, self.kappa_bc, self.kappa_ac)

    def as_array(self) -> np.ndarray:
        return np.array(self.gamma + self.kappa, dtype=float)

    @classmethod
    def from_array(cls, values) -> "FitParams":
        return cls(*(float(v) for v in values))


@dataclass(frozen=True)
class FitBounds:
    gamma: tuple[float, float] = (0.01, 100.0)
    kappa: tuple[float, float] = (1.0, 20.0)

    def __post_init__(self):
        if not 0 < self.gamma[0] < self.gamma[1]:
            raise ValueError("gamma bounds must satisfy 0 < lo < hi")
        if not 1 <= self.kappa[0] < self.kappa[1]:
            raise ValueError("kappa bounds must satisfy 1 <= lo < hi")

    def arrays(self) -> tuple[np.ndarray, np.ndarray]:
        lo = np.array([self.gamma[0]] * 3 + [self.kappa[0]] * 3)
        hi = np.array([self.gamma[1]] * 3 + [self.kappa[1]] * 3)
        return lo, hi

    def contains(self, p: FitParams) -> bool:
        lo, hi = self.arrays()
        x = p.as_array()
        return bool(np.all(x >= lo) and np.all(x <= hi))

    def to_unit(self, p: FitParams) -> np.ndarray:
        lo, hi = (np.log10(a) for a in self.arrays())
        return (np.log10(p.as_array()) - lo) / (hi - lo)

    def from_unit(self, u: np.ndarray) -> FitParams:
        lo, hi = (np.log10(a) for a in self.arrays())
        x = 10 ** (lo + np.clip(u, 0.0, 1.0) * (hi - lo))
        # pin the edges exactly so rounding never leaves the box
        alo, ahi = self.arrays()
        return FitParams.from_array(np.clip(x, alo, ahi))


@dataclass(eq=False)
class ModelContext:
    """Cached couplings per regime plus the regime constants."""

    couplings: dict[FieldRegime, EnsembleCouplings]
    T2: dict[FieldRegime, float]
    t0: float = 4.6
    normalize: str = "exact"

    def __post_init__(self):
        self.couplings = {FieldRegime(k): v for k, v in self.couplings.items()}
        self.T2 = {FieldRegime(k): float(v) for k, v in self.T2.items()}
        ids = [tuple(c.center_ids) for c in self.couplings.values()]
        if len(set(ids)) > 1:
            raise ValueError("all regimes must share the same centre ions")
        if self.normalize not in ("exact", "first"):
            raise ValueError("normalize must be 'exact' or 'first'")

    @classmethod
    def from_config(cls, cfg, ensemble=None, centers=None, workers: int = 1) -> "ModelContext":
        from . import pipeline

        ensemble = pipeline.build_ensemble(cfg) if ensemble is None else ensemble
        if centers is None:
            centers = pipeline.select_centers(cfg, ensemble)
        cache = {r: pipeline.couplings(cfg, ensemble, r, centers, workers) for r in FieldRegime}
        T2 = {r: cfg.field_setting(r).T2 for r in FieldRegime}
        return cls(cache, T2, cfg.kinetics.t0, cfg.kinetics.normalize)

    def rates(self, params: FitParams, regime: FieldRegime | str) -> np.ndarray:
        regime = FieldRegime(regime)
        kappa = (1.0, 1.0, 1.0) if regime is FieldRegime.ZERO else params.kappa
        density = DensityParams(self.T2[regime], params.gamma, kappa, regime)
        return self.couplings[regime].rates(density)

    def model_curve(self, params: FitParams, experiment: DecayCurve, _rates: dict | None = None) -> np.ndarray:
        """Model populations on the experiment's grid, (n_times, n_levels)."""
        rates = _rates if _rates is not None else {}
        regime = FieldRegime(experiment.field_regime)
        for r in {FieldRegime.ZERO, regime}:
            if r not in rates:
                rates[r] = self.rates(params, r)
        ramp = None
        if regime is FieldRegime.APPLIED:
            t0 = self.t0 if experiment.t0 is None else experiment.t0
            ramp = Ramp(t0, rates[FieldRegime.ZERO])
        cols = [ensemble_curve(rates[regime], lv, experiment.times, ramp) for lv in experiment.levels]
        out = np.column_stack(cols)
        if self.normalize == "first":
            out = out / out[0]
        return out


def validate_experiment(curve: DecayCurve) -> None:
    if curve.weights is None:
        raise ValueError("experiments need per-point weights")
    if np.any(curve.weights <= 0):
        raise ValueError("weights must be > 0")
    if np.any(curve.populations <= 0):
        raise ValueError("experimental populations must be > 0 for the relative score")
    FieldRegime(curve.field_regime)


def residuals(params: FitParams, experiments: Sequence[DecayCurve], context: ModelContext) -> list[np.ndarray]:
    """Weighted relative residuals (p_e - p_m) / (w p_e) per experiment."""
    cache: dict = {}
    out = []
    for exp in experiments:
        pm = context.model_curve(params, exp, cache)
        out.append((exp.populations - pm) / (exp.weights * exp.populations))
    return out


def score(params: FitParams, experiments: Sequence[DecayCurve], context: ModelContext) -> float:
    total = 0.0
    for r in residuals(params, experiments, context):
        total += float(np.sum(r**2))
    return total


@dataclass(frozen=True)
class SensitivityRow:
    name: str
    minus: float  # score change at -5 %
    plus: float  # score change at +5 %
    relative: float  # mean |change| / best score

    @property
    def magnitude(self) -> float:
        return 0.5 * (abs(self.minus) + abs(self.plus))


@dataclass(eq=False)
class FitResult:
    params: FitParams
    score: float
    residuals: list[np.ndarray]
    trace: np.ndarray  # (n_evals, 4): restart, evaluation, score, best-so-far
    sensitivity: list[SensitivityRow]
    no_improvement: bool
    start_scores: np.ndarray
    evaluations: int
    messages: list[str] = field(default_factory=list)

    def report(self) -> str:
        lines = ["best parameters:"]
        units = ("kHz",) * 3 + ("",) * 3
        for name, value, unit in zip(PARAM_NAMES, self.params.as_array(), units):
            lines.append(f"  {name:9s} = {value:.6g} {unit}".rstrip())
        lines.append(f"score = {self.score:.6g}")
        lines.append(f"evaluations = {self.evaluations}")
        if self.no_improvement:
            lines.append("WARNING: no restart improved on its starting point")
        lines.append("sensitivity (score change for -5% / +5%):")
        for row in self.sensitivity:
            lines.append(f"  {row.name:9s} {row.minus:+.4g} {row.plus:+.4g}  relative {row.relative:.3g}")
        return "\n".join(lines)


def sensitivity_table(
    objective: Callable[[FitParams], float], best: FitParams, best_score: float, bounds: FitBounds, step: float = 0.05
) -> list[SensitivityRow]:
    lo, hi = bounds.arrays()
    rows = []
    for k, name in enumerate(PARAM_NAMES):
        deltas = []
        for sign in (-1, 1):
            x = best.as_array()
            x[k] = np.clip(x[k] * (1 + sign * step), lo[k], hi[k])
            deltas.append(objective(FitParams.from_array(x)) - best_score)
        mean_abs = 0.5 * (abs(deltas[0]) + abs(deltas[1]))
        rel = mean_abs / best_score if best_score > 0 else math.inf if mean_abs > 0 else 0.0
        rows.append(SensitivityRow(name, deltas[0], deltas[1], rel))
    return rows


def _initial_simplex(u0: np.ndarray, size: float = 0.1) -> np.ndarray:
    simplex = [u0]
    for k in range(len(u0)):
        v = u0.copy()
        v[k] = v[k] + size if v[k] + size <= 1 else v[k] - size
        simplex.append(v)
    return np.array(simplex)


def optimize(
    experiments: Sequence[DecayCurve],
    context: ModelContext | None,
    bounds: FitBounds = FitBounds(),
    budget: int = 5000,
    restarts: int = 16,
    seed: int = 7,
    workers: int = 1,
    objective: Callable[[FitParams], float] | None = None,
    xatol: float = 1e-6,
    fatol: float = 1e-10,
) -> FitResult:
    """Multi-start bounded Nelder-Mead; ``budget`` is the total evaluation count.

    ``objective`` replaces the decay-curve score (test hook); then
    ``experiments`` and ``context`` may be empty/None.
    """
    if budget < 100:
        raise ValueError("budget must be >= 100")
    if restarts < 1:
        raise ValueError("restarts must be >= 1")
    if objective is None:
        if context is None or not experiments:
            raise ValueError("experiments and a model context are required")
        for exp in experiments:
            validate_experiment(exp)

        def objective(p: FitParams) -> float:
            return score(p, experiments, context)

    per_start = max(budget // restarts, 7)
    starts = qmc.LatinHypercube(d=len(PARAM_NAMES), seed=np.random.default_rng(seed)).random(restarts)

    def run(k: int):
        trace = []

        def f(u):
            val = objective(bounds.from_unit(u))
            if not np.isfinite(val):
                val = np.inf
            trace.append(val)
            return val

        start_score = f(starts[k])
        res = minimize(
            f,
            starts[k],
            method="Nelder-Mead",
            bounds=[(0.0, 1.0)] * len(PARAM_NAMES),
            options={
                "maxfev": per_start - 1,
                "xatol": xatol,
                "fatol": fatol,
                "adaptive": True,
                "initial_simplex": _initial_simplex(starts[k]),
            },
        )
        return start_score, np.clip(res.x, 0, 1), float(res.fun), trace, res.message

    if workers > 1 and restarts > 1:
        with ThreadPoolExecutor(workers) as pool:
            runs = list(pool.map(run, range(restarts)))
    else:
        runs = [run(k) for k in range(restarts)]

    start_scores = np.array([r[0] for r in runs])
    finals = np.array([r[2] for r in runs])
    best_k = int(np.argmin(finals))
    best_u = runs[best_k][1]
    best = bounds.from_unit(best_u)
    best_score = objective(best)
    no_improvement = bool(np.all(finals >= start_scores))
    if no_improvement:
        best_k = int(np.argmin(start_scores))
        best = bounds.from_unit(starts[best_k])
        best_score = float(start_scores[best_k])
        logger.warning("no restart improved on its starting point")

    rows = []
    for k, (_, _, _, trace, _) in enumerate(runs):
        for i, val in enumerate(trace):
            rows.append((k, i, val))
    trace = np.array(rows, dtype=float).reshape(-1, 3)
    best_so_far = np.minimum.accumulate(trace[:, 2]) if len(trace) else np.zeros(0)
    trace = np.column_stack([trace, best_so_far])

    sens = sensitivity_table(objective, best, best_score, bounds)
    res = residuals(best, experiments, context) if context is not None and experiments else []
    return FitResult(
        best,
        float(best_score),
        res,
        trace,
        sens,
        no_improvement,
        start_scores,
        len(trace),
        [str(r[4]) for r in runs],
    )


class DecayFitter(BaseEstimator):
    """Estimator-style wrapper around ``optimize``.

    ``fit`` takes a list of ``DecayCurve`` experiments; ``predict`` returns the
    model populations for each experiment's grid; ``score`` is the negated
    fit score so that larger is better.
    """

    def __init__(self, context=None, gamma_bounds=(0.01, 100.0), kappa_bounds=(1.0, 20.0), budget=5000, restarts=16, seed=7, workers=1):
        self.context = context
        self.gamma_bounds = gamma_bounds
        self.kappa_bounds = kappa_bounds
        self.budget = budget
        self.restarts = restarts
        self.seed = seed
        self.workers = workers

    def fit(self, X, y=None):
        if self.context is None:
            raise ValueError("DecayFitter needs a ModelContext")
        bounds = FitBounds(tuple(self.gamma_bounds), tuple(self.kappa_bounds))
        self.result_ = optimize(list(X), self.context, bounds, self.budget, self.restarts, self.seed, self.workers)
        self.params_ = self.result_.params
        return self

    def _check_fitted(self):
        if not hasattr(self, "params_"):
            raise RuntimeError("DecayFitter is not fitted yet")

    def predict(self, X) -> list[np.ndarray]:
        self._check_fitted()
        return [self.context.model_curve(self.params_, exp) for exp in X]

    def score(self, X, y=None) -> float:
        self._check_fitted()
        return -score(self.params_, list(X), self.context)
