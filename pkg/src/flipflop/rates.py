"""Golden-rule flip-flop rates per ion and their reduction to (R_ab, R_bc, R_ac).

For pathway x -> y of ion i with neighbours j,

    R = (2 pi / hbar) sum_j |h M_j|^2 f / h = 4 pi^2 f sum_j M_j^2,

with M_j the flip-flop amplitude in Hz and f the Lorentzian overlap
(1/pi) G_hom / (G_hom^2 + (kappa G_xy)^2) in 1/Hz. Every pathway rate is
divided by 6 (the neighbour occupies one of six levels).

Only f depends on the fitted linewidths, so ``EnsembleCouplings`` caches
sum_j |M_j|^2 once per (ensemble, field) and rates are rescaled cheaply.
"""

from __future__ import annotations

import enum
import logging
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .constants import KHZ
from .crystal import DopedEnsemble, NeighborSet, neighbor_table
from .dipole import PAIRS, PATHWAYS, coupling_tensor, pathway_amplitudes
from .spinham import HyperfineSystem, SpinParams, build_tensors, eigensystem

logger = logging.getLogger(__name__)

NEIGHBOR_LEVELS = 6
_PAIR_OF_PATHWAY = np.array([PAIRS.index(p[0]) for p in PATHWAYS])
GOLDEN_RULE_FACTOR = 4.0 * np.pi**2 / NEIGHBOR_LEVELS


class FieldRegime(str, enum.Enum):
    ZERO = "zero"
    APPLIED = "applied"


@dataclass(frozen=True)
class DensityParams:
    """Linewidth parameters of the density of states for one field regime.

    ``gamma`` are the inhomogeneous linewidths (Gamma_ab, Gamma_bc, Gamma_ac)
    in kHz; ``kappa`` their field multipliers.
    """

    T2: float
    gamma: tuple[float, float, float]
    kappa: tuple[float, float, float] = (1.0, 1.0, 1.0)
    regime: FieldRegime = FieldRegime.ZERO

    def __post_init__(self):
        object.__setattr__(self, "regime", FieldRegime(self.regime))
        object.__setattr__(self, "gamma", tuple(float(g) for g in self.gamma))
        object.__setattr__(self, "kappa", tuple(float(k) for k in self.kappa))
        if not self.T2 > 0:
            raise ValueError("T2 must be > 0")
        if len(self.gamma) != 3 or min(self.gamma) < 0:
            raise ValueError("three inhomogeneous linewidths >= 0 are required")
        if len(self.kappa) != 3:
            raise ValueError("three kappa values are required")
        if self.regime is FieldRegime.ZERO and self.kappa != (1.0, 1.0, 1.0):
            raise ValueError("kappa must be 1 in the zero-field regime")
        if min(self.kappa) < 1:
            raise ValueError("kappa must be >= 1")

    @property
    def gamma_hom(self) -> float:
        return homogeneous_linewidth(self.T2)


def homogeneous_linewidth(T2: float) -> float:
    """Gamma_hom = 1 / (pi T2), in Hz."""
    return 1.0 / (np.pi * T2)


def density_of_states(pair: str, params: DensityParams) -> float:
    """Lorentzian overlap (1/pi) G_hom / (G_hom^2 + (kappa G_xy)^2) in 1/Hz."""
    k = PAIRS.index(pair)
    g_hom = params.gamma_hom
    detuning = params.kappa[k] * params.gamma[k] * KHZ
    return g_hom / (g_hom**2 + detuning**2) / np.pi


def density_vector(params: DensityParams) -> np.ndarray:
    return np.array([density_of_states(p, params) for p in PAIRS])


@dataclass(frozen=True, eq=False)
class PathwayRates:
    """Twelve pathway rates in Hz, ordered as ``dipole.PATHWAYS``."""

    rates: np.ndarray
    empty: bool = False

    def __getitem__(self, key: tuple[str, str]) -> float:
        from .spinham import LEVEL_INDEX

        x, y = (LEVEL_INDEX[k] for k in key)
        for idx, (_, px, py) in enumerate(PATHWAYS):
            if (px, py) in ((x, y), (y, x)):
                return float(self.rates[idx])
        raise KeyError(key)


@dataclass(frozen=True)
class RateTriple:
    R_ab: float
    R_bc: float
    R_ac: float
    ion_id: int = -1

    def __post_init__(self):
        if min(self.R_ab, self.R_bc, self.R_ac) < 0:
            raise ValueError("rates must be >= 0")

    def as_array(self) -> np.ndarray:
        return np.array([self.R_ab, self.R_bc, self.R_ac])


def reduce_to_triple(p: PathwayRates | np.ndarray, ion_id: int = -1) -> RateTriple:
    arr = reduce_array(np.asarray(p.rates if isinstance(p, PathwayRates) else p))
    return RateTriple(*map(float, arr), ion_id=ion_id)


def reduce_array(rates: np.ndarray) -> np.ndarray:
    """(..., 12) pathway rates -> (..., 3) effective rates.

    Rates leaving the same origin are summed, then the two origins of a pair
    are averaged: R_ab = ((+a>+b + +a>-b) + (-a>+b + -a>-b)) / 2.
    """
    out = np.zeros(rates.shape[:-1] + (3,))
    for k in range(3):
        block = rates[..., _PAIR_OF_PATHWAY == k]  # +x>+y, +x>-y, -x>+y, -x>-y
        out[..., k] = 0.5 * ((block[..., 0] + block[..., 1]) + (block[..., 2] + block[..., 3]))
    return out


def origin_sums(rates: np.ndarray) -> np.ndarray:
    """(..., 3, 2): the (I+II) and (III+IV) sums per pair."""
    out = np.zeros(rates.shape[:-1] + (3, 2))
    for k in range(3):
        block = rates[..., _PAIR_OF_PATHWAY == k]
        out[..., k, 0] = block[..., 0] + block[..., 1]
        out[..., k, 1] = block[..., 2] + block[..., 3]
    return out


def pathway_rates(
    center: HyperfineSystem,
    center_tensor: np.ndarray,
    neighbors: NeighborSet,
    neighbor_systems: list[HyperfineSystem],
    neighbor_tensors: list[np.ndarray],
    params: DensityParams,
) -> PathwayRates:
    """Golden-rule rates of one centre ion over its neighbour set."""
    if len(neighbors) == 0:
        warnings.warn("empty neighbour set: rates are zero", RuntimeWarning, stacklevel=2)
        return PathwayRates(np.zeros(len(PATHWAYS)), empty=True)
    for s in neighbor_systems:
        if not np.array_equal(s.field, center.field):
            raise ValueError("all hyperfine systems must be computed at the same field")
    coupling = coupling_tensor(center_tensor[None], np.array(neighbor_tensors), neighbors.displacements)
    ops_j = np.array([s.operator_elements() for s in neighbor_systems])
    amp = pathway_amplitudes(center.operator_elements()[None], ops_j, coupling)
    strength = np.sum(np.abs(amp) ** 2, axis=0)
    dos = density_vector(params)[_PAIR_OF_PATHWAY]
    return PathwayRates(GOLDEN_RULE_FACTOR * dos * strength)


# --------------------------------------------------------------------------- #
# ensemble level

CouplingFn = Callable[[np.ndarray, np.ndarray, np.ndarray], np.ndarray]


@dataclass(frozen=True, eq=False)
class EnsembleCouplings:
    """Per-centre coupling strengths sum_j |M_j|^2 (Hz^2) for the 12 pathways.

    Independent of linewidths; combine with ``DensityParams`` via ``rates``.
    """

    center_ids: np.ndarray
    strength: np.ndarray  # (n_centres, 12)
    field: np.ndarray
    neighbor_distances: np.ndarray  # (n_centres, k) nm

    def pathway_rates(self, params: DensityParams) -> np.ndarray:
        dos = density_vector(params)[_PAIR_OF_PATHWAY]
        return GOLDEN_RULE_FACTOR * self.strength * dos

    def rates(self, params: DensityParams) -> np.ndarray:
        """(n_centres, 3) effective rates (R_ab, R_bc, R_ac) in Hz."""
        return reduce_array(self.pathway_rates(params))

    def pair_strength(self) -> np.ndarray:
        """(n_centres, 3) reduced strengths: rates = 4 pi^2/6 * this * f_pair."""
        return reduce_array(self.strength)

    def subset(self, idx: np.ndarray) -> "EnsembleCouplings":
        return EnsembleCouplings(self.center_ids[idx], self.strength[idx], self.field, self.neighbor_distances[idx])


def class_systems(spin: SpinParams, field: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Operator elements (4, 3, 6, 6) and Zeeman tensors (4, 3, 3) per orientation class."""
    ops = np.array([eigensystem(spin, c, field).operator_elements() for c in range(4)])
    tensors = np.array([build_tensors(spin, c)[0] for c in range(4)])
    return ops, tensors


def _strength_block(orient, ops, tensors, center_ids, nb_ids, nb_disp, coupling_fn):
    ci = orient[center_ids]
    cj = orient[nb_ids]
    coupling = coupling_fn(tensors[ci][:, None], tensors[cj], nb_disp)
    amp = pathway_amplitudes(ops[ci][:, None], ops[cj], coupling)
    # fixed summation order over the sorted neighbour axis
    sq = np.abs(amp) ** 2
    total = np.zeros((sq.shape[0], sq.shape[2]))
    for k in range(sq.shape[1]):
        total += sq[:, k, :]
    return total


def ensemble_couplings(
    ensemble: DopedEnsemble,
    spin: SpinParams,
    field: np.ndarray,
    neighbor_count: int = 20,
    core_margin: float = 20.0,
    centers: np.ndarray | None = None,
    workers: int = 1,
    block: int = 1024,
    coupling_fn: CouplingFn = coupling_tensor,
) -> EnsembleCouplings:
    """Cache sum_j |<y_i x_j|H_dd|x_i y_j>|^2 for every core centre and pathway.

    ``coupling_fn`` replaces the dipolar tensor (test hook, e.g. isotropic coupling).
    Output order follows ``centers`` (default: core ions by id) and is
    identical for any ``workers``.
    """
    if neighbor_count < 1:
        raise ValueError("neighbor_count must be >= 1")
    field = np.asarray(field, dtype=float)
    if centers is None:
        centers = ensemble.core_ids(core_margin)
    centers = np.asarray(centers, dtype=int)
    table = neighbor_table(ensemble, centers, neighbor_count, workers=workers)
    ops, tensors = class_systems(spin, field)
    n_nb = table.ids.shape[1]
    if n_nb == 0:
        warnings.warn("empty neighbour sets: rates are zero", RuntimeWarning, stacklevel=2)
        return EnsembleCouplings(centers, np.zeros((len(centers), len(PATHWAYS))), field, table.distances)
    slices = [slice(s, s + block) for s in range(0, len(centers), block)]

    def work(sl):
        try:
            return _strength_block(
                ensemble.orientation, ops, tensors, centers[sl], table.ids[sl], table.displacements[sl], coupling_fn
            )
        except Exception as exc:
            raise RuntimeError(f"rate evaluation failed for ions {centers[sl][:1]}..{centers[sl][-1:]}: {exc}") from exc

    if workers > 1 and len(slices) > 1:
        with ThreadPoolExecutor(workers) as pool:
            parts = list(pool.map(work, slices))
    else:
        parts = [work(sl) for sl in slices]
    strength = np.concatenate(parts) if parts else np.zeros((0, len(PATHWAYS)))
    return EnsembleCouplings(centers, strength, field, table.distances)


def ensemble_rates(
    ensemble: DopedEnsemble,
    spin: SpinParams,
    field: np.ndarray,
    params: DensityParams,
    neighbor_count: int = 20,
    core_margin: float = 20.0,
    centers: np.ndarray | None = None,
    workers: int = 1,
) -> list[RateTriple]:
    cache = ensemble_couplings(ensemble, spin, field, neighbor_count, core_margin, centers, workers)
    return [RateTriple(*map(float, r), ion_id=int(i)) for i, r in zip(cache.center_ids, cache.rates(params))]


def log_histogram(values: np.ndarray, bin_width: float = 0.25, lo: float = -10.0, hi: float = 4.0):
    """Histogram of log10(values) on fixed edges; returns (bin_centres, counts).

    The [lo, hi] range grows in whole bins to hold every positive value;
    zero rates have no logarithm and are left out.
    """
    v = np.asarray(values, dtype=float)
    logs = np.log10(v[v > 0])
    if logs.size:
        lo = min(lo, lo + np.floor((logs.min() - lo) / bin_width) * bin_width)
        hi = max(hi, lo + np.ceil((logs.max() - lo) / bin_width + 1e-9) * bin_width)
    n = int(round((hi - lo) / bin_width))
    edges = lo + bin_width * np.arange(n + 1)
    counts, _ = np.histogram(logs, bins=edges)
    return 0.5 * (edges[1:] + edges[:-1]), counts


def histogram_mode(values: np.ndarray, bin_width: float = 0.25) -> float:
    """Centre (log10 Hz) of the most populated fixed-width bin."""
    centers, counts = log_histogram(values, bin_width)
    return float(centers[np.argmax(counts)])
