import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from flipflop.spinham import (
    LABELS,
    LabelCrossingError,
    SpinParams,
    build_tensors,
    eigensystem,
    euler_rotation,
    hamiltonian,
    spin_operators,
)

import oracles

angles = st.floats(-np.pi, np.pi, allow_nan=False)


def random_params(rng, spread=1.0):
    return SpinParams(
        nuclear_spin=2.5,
        g_principal=tuple(rng.uniform(5, 150, 3)),
        zeeman_euler=tuple(rng.uniform(-np.pi, np.pi, 3)),
        D=float(rng.uniform(2, 8)),
        E=float(rng.uniform(0, 1.5)),
        quad_euler=tuple(rng.uniform(-np.pi, np.pi, 3)),
        orientation_euler=tuple(tuple(rng.uniform(-np.pi, np.pi, 3) * spread) for _ in range(4)),
    )


@pytest.mark.parametrize("spin", [0.5, 1.0, 1.5, 2.5, 3.5])
def test_spin_algebra(spin):
    ix, iy, iz = spin_operators(spin)
    assert np.allclose(ix @ iy - iy @ ix, 1j * iz, atol=1e-12)
    assert np.allclose(iy @ iz - iz @ iy, 1j * ix, atol=1e-12)
    assert np.allclose(iz @ ix - ix @ iz, 1j * iy, atol=1e-12)
    casimir = ix @ ix + iy @ iy + iz @ iz
    assert np.allclose(casimir, spin * (spin + 1) * np.eye(len(iz)), atol=1e-12)
    for op in (ix, iy, iz):
        assert np.allclose(op, op.conj().T)


def test_spin_operators_match_ladder_oracle():
    assert np.allclose(spin_operators(2.5), oracles.spin_matrices(2.5), atol=1e-14)


@pytest.mark.parametrize("bad", [0.0, 0.75, -1.5])
def test_bad_spin_rejected(bad):
    with pytest.raises(ValueError):
        spin_operators(bad)


@settings(max_examples=50, deadline=None)
@given(a=angles, b=angles, c=angles)
def test_euler_rotation_matches_scipy(a, b, c):
    r = euler_rotation(a, b, c)
    assert np.allclose(r, oracles.rotation((a, b, c)), atol=1e-12)
    assert np.allclose(r @ r.T, np.eye(3), atol=1e-12)
    assert np.linalg.det(r) == pytest.approx(1.0)


def test_tensors_symmetric_traceless_and_reconstruct(bundled_cfg):
    sp = bundled_cfg.spin
    for c in range(4):
        m, q = build_tensors(sp, c)
        assert np.array_equal(m, m.T) and np.array_equal(q, q.T)
        assert abs(np.trace(q)) < 1e-12
        assert np.allclose(np.sort(np.linalg.eigvalsh(m)), np.sort(sp.g_principal), atol=1e-10)
        om, oq = oracles.tensors(sp, c)
        assert np.allclose(m, om, atol=1e-10) and np.allclose(q, oq, atol=1e-12)


def test_zero_field_splittings(bundled_cfg):
    sys0 = eigensystem(bundled_cfg.spin, 0, np.zeros(3))
    e = sys0.energies
    assert np.allclose(sys0.pair_splitting(), 0, atol=1e-9)
    assert e[2] - e[0] == pytest.approx(10.19, abs=0.01)
    assert e[4] - e[2] == pytest.approx(17.30, abs=0.02)


def test_eigenbasis_complete_and_orthonormal(bundled_cfg, rng):
    for _ in range(20):
        b = rng.normal(size=3) * 5
        s = eigensystem(bundled_cfg.spin, int(rng.integers(4)), b, check_labels=False)
        v = s.states
        assert np.allclose(v.conj().T @ v, np.eye(6), atol=1e-12)
        assert np.allclose(v @ v.conj().T, np.eye(6), atol=1e-12)
        m, q = build_tensors(bundled_cfg.spin, s.orientation_class)
        h = hamiltonian(m, q, b, 2.5)
        assert np.allclose(v @ np.diag(s.energies) @ v.conj().T, h, atol=1e-10)


def test_eigenvalues_match_characteristic_polynomial(rng):
    for _ in range(5):
        params = random_params(rng)
        field = rng.normal(size=3) * 20
        m, q = oracles.tensors(params, 0)
        ref = oracles.charpoly_eigenvalues(oracles.spin_hamiltonian(m, q, field))
        got = eigensystem(params, 0, field, check_labels=False).energies
        assert len(ref) == 6
        assert np.allclose(got, ref, atol=1e-8)


def test_gauge_largest_component_real_positive(bundled_cfg, rng):
    for field in (np.zeros(3), rng.normal(size=3)):
        v = eigensystem(bundled_cfg.spin, 1, field, check_labels=False).states
        for col in v.T:
            k = np.argmax(np.abs(col))
            assert abs(col[k].imag) < 1e-12 and col[k].real > 0


def test_zero_field_states_are_low_field_limit(bundled_cfg):
    # degenerate pairs are resolved along b, so states at B -> 0 along b agree
    sp = bundled_cfg.spin
    s0 = eigensystem(sp, 0, np.zeros(3))
    s1 = eigensystem(sp, 0, np.array([0.0, 0.0, 1e-6]))
    for k in range(3):
        sl = slice(2 * k, 2 * k + 2)
        # within a pair the zero-field order is by basis index, not energy
        overlap = np.abs(s0.states[:, sl].conj().T @ s1.states[:, sl])
        assert np.allclose(np.sort(overlap.ravel()), [0, 0, 1, 1], atol=1e-6)


def test_degeneracy_lifted_linearly_with_richardson_slope(bundled_cfg):
    sp = bundled_cfg.spin
    axis = np.array([0.0, 0.0, 1.0])
    s0 = eigensystem(sp, 0, np.zeros(3))
    m, _ = build_tensors(sp, 0)
    probe = hamiltonian(m, np.zeros((3, 3)), axis, 2.5)
    for k in range(3):
        pair = s0.states[:, 2 * k : 2 * k + 2]
        analytic = np.sort(np.linalg.eigvalsh(pair.conj().T @ probe @ pair))

        def slope(b):
            e = eigensystem(sp, 0, axis * b).energies
            return (e[2 * k : 2 * k + 2] - s0.energies[2 * k : 2 * k + 2]) / b

        rich = 2 * slope(0.01) - slope(0.02)
        assert np.allclose(rich, analytic, rtol=0.01, atol=1e-6)


def test_levels_ascend_with_expected_labels(bundled_cfg):
    s = eigensystem(bundled_cfg.spin, 2, np.array([0.0, 0.0, 7.33]))
    assert s.labels == LABELS
    assert np.all(np.diff(s.energies) > 0)


def _tracked_sweep(params, cls, direction, fields):
    prev = eigensystem(params, cls, direction * fields[0]).states
    for b in fields[1:]:
        try:
            cur = eigensystem(params, cls, direction * b)
        except LabelCrossingError:
            return "raised"
        overlap = np.abs(prev.conj().T @ cur.states)
        assert np.array_equal(np.argmax(overlap, axis=1) // 2, np.arange(6) // 2)
        prev = cur.states
    return "stable"


@pytest.mark.parametrize("cls", range(4))
def test_label_stability_sweep(bundled_cfg, rng, cls):
    fields = np.arange(1, 101) * 0.1
    for direction in [np.array([0.0, 0.0, 1.0])] + list(rng.normal(size=(5, 3))):
        direction = direction / np.linalg.norm(direction)
        assert _tracked_sweep(bundled_cfg.spin, cls, direction, fields) == "stable"


def test_label_crossing_raises_at_high_field(bundled_cfg):
    with pytest.raises(LabelCrossingError):
        eigensystem(bundled_cfg.spin, 0, np.array([0.0, 0.0, 400.0]))


def test_params_validation():
    with pytest.raises(ValueError):
        SpinParams(2.5, (1.0, 2.0), (0, 0, 0), 1.0, 0.1, (0, 0, 0))
    with pytest.raises(ValueError):
        SpinParams(2.5, (1.0, 2.0, 3.0), (0, 0, 0), np.nan, 0.1, (0, 0, 0))
    with pytest.raises(ValueError, match="six-level"):
        eigensystem(SpinParams(1.5, (1.0, 2.0, 3.0), (0, 0, 0), 1.0, 0.1, (0, 0, 0)), 0, np.zeros(3))


def test_invariants_over_random_hamiltonians(rng):
    # invariant suite: Hermiticity, traceless Q, orthonormal eigenbasis
    for _ in range(1000):
        params = random_params(rng)
        cls = int(rng.integers(4))
        m, q = build_tensors(params, cls)
        field = rng.normal(size=3) * rng.uniform(0, 10)
        h = hamiltonian(m, q, field, 2.5)
        assert np.allclose(h, h.conj().T, atol=1e-12)
        assert abs(np.trace(q)) < 1e-12
        v = eigensystem(params, cls, field, check_labels=False).states
        assert np.allclose(v.conj().T @ v, np.eye(6), atol=1e-12)
