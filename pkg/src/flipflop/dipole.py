"""Magnetic dipole-dipole flip-flop matrix elements between two ions.

The moment of ion i is mu_s = h g_sp I_p (g in Hz/T), so the coupling is

    H_dd / h = sum_pq C_pq I_p^i I_q^j,
    C = (mu0 h / 4 pi r^3) [G_i G_j^T - 3 (G_i r^)(G_j r^)^T],

with C in Hz. The twelve flip-flop pathways skip same-level and
parity-only (+k <-> -k) exchanges.
"""

from __future__ import annotations

import numpy as np

from .constants import KHZ_PER_MT_TO_HZ_PER_T, MU_0, NM, PLANCK
from .spinham import LEVEL_INDEX, HyperfineSystem

PAIRS = ("ab", "bc", "ac")
_PAIR_LEVELS = {"ab": (0, 1), "bc": (1, 2), "ac": (0, 2)}


def _pathways():
    out = []
    for pair in PAIRS:
        lo, hi = _PAIR_LEVELS[pair]
        for x in (2 * lo, 2 * lo + 1):
            for y in (2 * hi, 2 * hi + 1):
                out.append((pair, x, y))
    return tuple(out)


# (pair, x, y) with x from the lower-lettered level; each unordered pathway once
PATHWAYS = _pathways()
PATHWAY_X = np.array([p[1] for p in PATHWAYS])
PATHWAY_Y = np.array([p[2] for p in PATHWAYS])


class CoincidentIonsError(ValueError):
    pass


def coupling_tensor(m_i: np.ndarray, m_j: np.ndarray, r_ij: np.ndarray) -> np.ndarray:
    """Dipolar coupling tensor C (Hz) for Zeeman tensors in kHz/mT and r in nm.

    Broadcasts over leading dimensions: ``m_i``/``m_j`` (..., 3, 3), ``r_ij`` (..., 3).
    """
    r = np.asarray(r_ij, dtype=float) * NM
    dist = np.linalg.norm(r, axis=-1)
    if np.any(dist == 0):
        raise CoincidentIonsError("coincident ions: |r_ij| = 0")
    rhat = r / dist[..., None]
    gi = np.asarray(m_i, dtype=float) * KHZ_PER_MT_TO_HZ_PER_T
    gj = np.asarray(m_j, dtype=float) * KHZ_PER_MT_TO_HZ_PER_T
    # C_pq = g^i_ps g^j_qs - 3 r_s r_t g^i_ps g^j_qt
    direct = np.einsum("...ps,...qs->...pq", gi, gj)
    ui = np.einsum("...ps,...s->...p", gi, rhat)
    uj = np.einsum("...qt,...t->...q", gj, rhat)
    angular = direct - 3.0 * ui[..., :, None] * uj[..., None, :]
    prefactor = MU_0 / (4.0 * np.pi) * PLANCK / dist**3
    return prefactor[..., None, None] * angular


def flipflop_element(
    sys_i: HyperfineSystem, sys_j: HyperfineSystem, coupling: np.ndarray, x: str | int, y: str | int
) -> float:
    """|<y_i x_j| H_dd |x_i y_j>| in Hz, without building the joint-space operator."""
    if sys_i.states.shape != sys_j.states.shape:
        raise ValueError("spin dimensions of the two ions differ")
    x = LEVEL_INDEX[x] if isinstance(x, str) else int(x)
    y = LEVEL_INDEX[y] if isinstance(y, str) else int(y)
    if x == y or x // 2 == y // 2:
        raise ValueError("same-level and parity-only transitions are excluded")
    ei = sys_i.operator_elements()
    ej = sys_j.operator_elements()
    return float(abs(np.einsum("pq,p,q->", coupling, ei[:, y, x], ej[:, x, y])))


def pathway_amplitudes(ops_i: np.ndarray, ops_j: np.ndarray, coupling: np.ndarray) -> np.ndarray:
    """Flip-flop amplitudes (complex, Hz) for all twelve pathways.

    ``ops_i``/``ops_j`` are <x|I_p|y> arrays of shape (..., 3, 6, 6) and
    ``coupling`` is (..., 3, 3). Returns (..., 12).
    """
    a_i = ops_i[..., :, PATHWAY_Y, PATHWAY_X]  # <y|I_p|x> on ion i
    a_j = ops_j[..., :, PATHWAY_X, PATHWAY_Y]  # <x|I_q|y> on ion j
    return np.einsum("...pq,...pk,...qk->...k", coupling, a_i, a_j)
