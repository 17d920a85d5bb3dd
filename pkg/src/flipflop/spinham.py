"""Effective nuclear spin Hamiltonian H = B.M.I + I.Q.I and its hyperfine levels.

Conventions
-----------
* Euler angles are active ZYZ: R(alpha, beta, gamma) = Rz(alpha) Ry(beta) Rz(gamma).
* g tensor in kHz/mT, D and E in MHz, fields in mT, energies in MHz.
* Spin matrices are in the |I, m> basis with m descending.
* Six levels are labelled (+a, -a, +b, -b, +c, -c) in ascending energy.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .constants import KHZ_PER_MT_TO_MHZ_PER_MT

logger = logging.getLogger(__name__)

LABELS = ("+a", "-a", "+b", "-b", "+c", "-c")
LEVEL_INDEX = {lab: i for i, lab in enumerate(LABELS)}
DEGENERACY_TOL_MHZ = 1e-9


class LabelCrossingError(RuntimeError):
    """Ascending-energy pairing would mix levels from different hyperfine pairs."""


class EigensolverError(RuntimeError):
    pass


@lru_cache(maxsize=None)
def _spin_operators(two_i: int):
    spin = two_i / 2.0
    m = spin - np.arange(two_i + 1)
    raising = np.zeros((two_i + 1, two_i + 1))
    for k in range(1, two_i + 1):
        raising[k - 1, k] = np.sqrt(spin * (spin + 1) - m[k] * (m[k] + 1))
    ix = (raising + raising.T) / 2.0
    iy = (raising - raising.T) / 2.0j
    iz = np.diag(m)
    ops = np.array([ix, iy, iz], dtype=complex)
    ops.setflags(write=False)
    return ops


def spin_operators(spin: float) -> np.ndarray:
    """Angular momentum matrices (Ix, Iy, Iz) stacked as a (3, d, d) array."""
    two_i = 2 * spin
    if spin < 0.5 or abs(two_i - round(two_i)) > 1e-12:
        raise ValueError(f"nuclear spin must be a positive half-integer, got {spin}")
    return _spin_operators(int(round(two_i)))


def euler_rotation(alpha: float, beta: float, gamma: float) -> np.ndarray:
    """Active ZYZ rotation matrix; angles in radians."""

    def rz(t):
        c, s = np.cos(t), np.sin(t)
        return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])

    c, s = np.cos(beta), np.sin(beta)
    ry = np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])
    return rz(alpha) @ ry @ rz(gamma)


@dataclass(frozen=True)
class SpinParams:
    """Spin Hamiltonian parameters; all angles in radians.

    ``orientation_euler`` holds one ZYZ triple per orientation class (4 rows).
    """

    nuclear_spin: float
    g_principal: tuple[float, float, float]
    zeeman_euler: tuple[float, float, float]
    D: float
    E: float
    quad_euler: tuple[float, float, float]
    orientation_euler: tuple[tuple[float, float, float], ...] = ((0.0, 0.0, 0.0),) * 4

    def __post_init__(self):
        spin_operators(self.nuclear_spin)
        if len(self.g_principal) != 3 or not np.all(np.isfinite(self.g_principal)):
            raise ValueError("g_principal needs three finite values")
        if not (np.isfinite(self.D) and np.isfinite(self.E)):
            raise ValueError("D and E must be finite")
        if len(self.orientation_euler) != 4:
            raise ValueError("exactly four orientation-class rotations are required")

    @property
    def dim(self) -> int:
        return int(round(2 * self.nuclear_spin)) + 1


def build_tensors(params: SpinParams, orientation_class: int) -> tuple[np.ndarray, np.ndarray]:
    """Zeeman (kHz/mT) and quadrupole (MHz) tensors in the D1/D2/b frame."""
    if orientation_class not in range(4):
        raise ValueError("orientation_class must be in 0..3")
    rm = euler_rotation(*params.zeeman_euler)
    rq = euler_rotation(*params.quad_euler)
    m = rm @ np.diag(params.g_principal) @ rm.T
    q = rq @ np.diag([params.E - params.D / 3, -params.E - params.D / 3, 2 * params.D / 3]) @ rq.T
    ro = euler_rotation(*params.orientation_euler[orientation_class])
    m = ro @ m @ ro.T
    q = ro @ q @ ro.T
    # exact symmetry; removes rounding asymmetry from the triple products
    return (m + m.T) / 2, (q + q.T) / 2


def hamiltonian(m: np.ndarray, q: np.ndarray, field: np.ndarray, spin: float) -> np.ndarray:
    """H in MHz for tensors M (kHz/mT), Q (MHz) and field B (mT)."""
    ops = spin_operators(spin)
    b = np.asarray(field, dtype=float)
    zeeman = np.einsum("p,pq,qij->ij", b, m, ops) * KHZ_PER_MT_TO_MHZ_PER_MT
    quad = np.einsum("pq,pik,qkj->ij", q, ops, ops)
    h = zeeman + quad
    return (h + h.conj().T) / 2


@dataclass(frozen=True, eq=False)
class HyperfineSystem:
    energies: np.ndarray  # (6,) MHz ascending
    states: np.ndarray  # (d, 6) columns are eigenvectors
    field: np.ndarray
    orientation_class: int = 0
    labels: tuple[str, ...] = LABELS
    _elements: np.ndarray | None = field(default=None, repr=False, compare=False)

    def operator_elements(self) -> np.ndarray:
        """<x|I_p|y> for p in x, y, z: array (3, 6, 6)."""
        if self._elements is None:
            ops = spin_operators((self.states.shape[0] - 1) / 2)
            el = np.einsum("ix,pij,jy->pxy", self.states.conj(), ops, self.states)
            el.setflags(write=False)
            object.__setattr__(self, "_elements", el)
        return self._elements

    def pair_splitting(self) -> np.ndarray:
        return self.energies[1::2] - self.energies[0::2]


def _fix_gauge(vecs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Make each column's largest-magnitude component real positive."""
    mag = np.abs(vecs)
    lead = np.argmax(mag >= mag.max(axis=0) * (1 - 1e-9), axis=0)
    phase = vecs[lead, np.arange(vecs.shape[1])]
    return vecs * (np.abs(phase) / phase), lead


def _diagonalize(h: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    try:
        w, v = np.linalg.eigh(h)
    except np.linalg.LinAlgError as exc:
        logger.error("eigensolver failed for matrix:\n%s", np.array2string(h, precision=6))
        raise EigensolverError(str(exc)) from exc
    if not np.all(np.isfinite(w)):
        logger.error("eigensolver returned non-finite values for matrix:\n%s", np.array2string(h, precision=6))
        raise EigensolverError("non-finite eigenvalues")
    return w, v


def eigensystem(
    params: SpinParams,
    orientation_class: int,
    field: np.ndarray,
    probe_axis: np.ndarray = (0.0, 0.0, 1.0),
    check_labels: bool = True,
) -> HyperfineSystem:
    """Diagonalize the spin Hamiltonian and label the six levels.

    Inside an exactly degenerate pair the basis is fixed by diagonalizing the
    Zeeman operator along ``probe_axis`` (default b) restricted to the pair,
    so the zero-field states are the B -> 0 limit along that axis. Each
    vector's largest component is made real positive; a degenerate pair is
    ordered by the basis index of that component.
    """
    if params.dim != 6:
        raise ValueError("hyperfine labelling needs a six-level system (I = 5/2)")
    b = np.asarray(field, dtype=float)
    if b.shape != (3,) or not np.all(np.isfinite(b)):
        raise ValueError("field must be a finite 3-vector (mT)")
    m, q = build_tensors(params, orientation_class)
    h = hamiltonian(m, q, b, params.nuclear_spin)
    w, v = _diagonalize(h)
    scale = max(1.0, float(np.max(np.abs(w))))
    probe = None
    for k in range(3):
        sl = slice(2 * k, 2 * k + 2)
        if abs(w[2 * k + 1] - w[2 * k]) < DEGENERACY_TOL_MHZ * scale:
            if probe is None:
                probe = hamiltonian(m, np.zeros((3, 3)), np.asarray(probe_axis, float), params.nuclear_spin)
            sub = v[:, sl]
            _, rot = np.linalg.eigh(sub.conj().T @ probe @ sub)
            v[:, sl] = sub @ rot
    v, lead = _fix_gauge(v)
    for k in range(3):
        if abs(w[2 * k + 1] - w[2 * k]) < DEGENERACY_TOL_MHZ * scale and lead[2 * k + 1] < lead[2 * k]:
            v[:, [2 * k, 2 * k + 1]] = v[:, [2 * k + 1, 2 * k]]
            w[[2 * k, 2 * k + 1]] = w[[2 * k + 1, 2 * k]]
    if check_labels and np.any(b):
        _check_pairing(params, orientation_class, v)
    return HyperfineSystem(w, v, b.copy(), orientation_class)


@lru_cache(maxsize=64)
def _zero_field_projectors(params: SpinParams, orientation_class: int) -> np.ndarray:
    sys0 = eigensystem(params, orientation_class, np.zeros(3), check_labels=False)
    v = sys0.states
    return np.array([v[:, 2 * k : 2 * k + 2] @ v[:, 2 * k : 2 * k + 2].conj().T for k in range(3)])


def _check_pairing(params: SpinParams, orientation_class: int, states: np.ndarray) -> None:
    proj = _zero_field_projectors(params, orientation_class)
    weight = np.real(np.einsum("ix,kij,jx->kx", states.conj(), proj, states))
    owner = np.argmax(weight, axis=0)
    expected = np.repeat(np.arange(3), 2)
    if np.any(owner != expected):
        raise LabelCrossingError(
            f"level pairing by energy order interleaves hyperfine pairs (zero-field parentage {owner.tolist()})"
        )
