"""Config-driven assembly: ensemble, centre selection and cached couplings."""

from __future__ import annotations

import numpy as np

from .config import RunConfig
from .crystal import DopedEnsemble, generate_ensemble, read_lattice
from .rates import EnsembleCouplings, FieldRegime, ensemble_couplings


def build_ensemble(cfg: RunConfig) -> DopedEnsemble:
    lattice = read_lattice(cfg.lattice_path)
    e = cfg.ensemble
    return generate_ensemble(lattice, cfg.site, e.sphere_radius, e.doping_fraction, e.seed)


def select_centers(cfg: RunConfig, ensemble: DopedEnsemble, max_centers: int | None = None) -> np.ndarray:
    """Core ions, optionally thinned to ``max_centers`` by a seed-derived draw (sorted by id)."""
    core = ensemble.core_ids(cfg.ensemble.core_margin)
    limit = cfg.ensemble.max_centers if max_centers is None else max_centers
    if limit and limit < len(core):
        # separate stream from the doping draw, still a function of the config seed
        rng = np.random.default_rng(np.random.SeedSequence(cfg.ensemble.seed, spawn_key=(1,)))
        core = np.sort(rng.choice(core, size=limit, replace=False))
    return core


def couplings(
    cfg: RunConfig,
    ensemble: DopedEnsemble,
    regime: FieldRegime | str,
    centers: np.ndarray | None = None,
    workers: int = 1,
) -> EnsembleCouplings:
    if centers is None:
        centers = select_centers(cfg, ensemble)
    return ensemble_couplings(
        ensemble,
        cfg.spin,
        cfg.field_setting(regime).field,
        neighbor_count=cfg.ensemble.neighbor_count,
        centers=centers,
        workers=workers,
    )
