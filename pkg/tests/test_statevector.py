from functools import reduce

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from noisycluster.statevector import (
    Gate2x2,
    StateError,
    StateVector,
    apply_1q,
    apply_cphase,
    basis_state,
    fidelity,
    inner,
    new_plus_state,
    product_state,
    project_xy,
)

angles = st.floats(-2 * np.pi, 2 * np.pi, allow_nan=False)


def dense(state: StateVector) -> np.ndarray:
    """Big-endian vector in label order, built independently of the kernels."""
    return state.tensor().reshape(-1)


def op_on(n, pos, g):
    mats = [np.eye(2)] * n
    mats[pos] = g
    return reduce(np.kron, mats)


def cphase_dense(n, i, j, theta):
    d = np.ones(2 ** n, dtype=complex)
    for k in range(2 ** n):
        bits = format(k, f"0{n}b")
        if bits[i] == "1" and bits[j] == "1":
            d[k] = -np.exp(1j * theta)
    return np.diag(d)


def test_plus_state_amplitudes():
    s = new_plus_state(3)
    assert s.labels == (1, 2, 3)
    assert np.allclose(s.amplitudes, 2 ** -1.5)


def test_amplitude_bit_order():
    s = basis_state(("a", "b", "c"), "100")
    assert s.amplitude("100") == 1
    assert s.amplitude("001") == 0
    assert dense(s)[4] == 1


def test_invalid_states():
    with pytest.raises(StateError):
        StateVector((1, 1), np.zeros(4))
    with pytest.raises(StateError):
        StateVector((1, 2), np.zeros(3))
    with pytest.raises(StateError):
        new_plus_state(0)
    with pytest.raises(StateError):
        apply_cphase(new_plus_state(2), 1, 1)
    with pytest.raises(StateError):
        project_xy(new_plus_state(2), 1, 0.0, 2)


def test_gate_names_round_trip():
    for g in (Gate2x2.h(), Gate2x2.x(), Gate2x2.rz(0.3), Gate2x2.rx(-1.2)):
        assert np.allclose(Gate2x2.from_name(g.name).matrix, g.matrix)
    with pytest.raises(StateError):
        Gate2x2.from_name("T")


def test_rotation_conventions():
    assert np.allclose(Gate2x2.rz(0.4).matrix, np.diag([np.exp(-0.2j), np.exp(0.2j)]))
    h = Gate2x2.h().matrix
    assert np.allclose(h @ Gate2x2.rz(0.7).matrix @ h, Gate2x2.rx(0.7).matrix)


@given(theta=angles)
@settings(max_examples=25, deadline=None)
def test_cphase_matches_dense_matrix(theta):
    rng = np.random.default_rng(1)
    v = rng.normal(size=8) + 1j * rng.normal(size=8)
    s = StateVector.from_tensor((1, 2, 3), v.reshape(2, 2, 2))
    out = apply_cphase(s, 1, 3, theta)
    assert np.allclose(dense(out), cphase_dense(3, 0, 2, theta) @ v)


def test_ideal_cphase_is_cz():
    s = product_state((1, 2), [(0, 1), (0, 1)])
    assert np.isclose(apply_cphase(s, 1, 2).amplitude("11"), -1)


def test_one_qubit_gate_matches_dense(rng):
    v = rng.normal(size=8) + 1j * rng.normal(size=8)
    s = StateVector.from_tensor(("a", "b", "c"), v.reshape(2, 2, 2))
    g = Gate2x2.rx(0.9)
    assert np.allclose(dense(apply_1q(s, "b", g)), op_on(3, 1, g.matrix) @ v)


@given(alpha=angles, outcome=st.sampled_from([0, 1]))
@settings(max_examples=40, deadline=None)
def test_projection_matches_dense(alpha, outcome):
    rng = np.random.default_rng(7)
    v = rng.normal(size=4) + 1j * rng.normal(size=4)
    v /= np.linalg.norm(v)
    s = StateVector.from_tensor((1, 2), v.reshape(2, 2))
    bra = np.array([1, (1 if outcome == 0 else -1) * np.exp(-1j * alpha)]) / np.sqrt(2)
    expected = np.kron(bra, np.eye(2)) @ v
    p, reduced = project_xy(s, 1, alpha, outcome)
    assert np.isclose(p, np.vdot(expected, expected).real)
    assert reduced.labels == (2,)
    assert np.isclose(abs(np.vdot(expected / np.sqrt(p), dense(reduced))), 1)


@given(alpha=angles)
@settings(max_examples=25, deadline=None)
def test_born_probabilities_sum_to_one(alpha):
    rng = np.random.default_rng(3)
    v = rng.normal(size=8) + 1j * rng.normal(size=8)
    s = StateVector.from_tensor((1, 2, 3), (v / np.linalg.norm(v)).reshape(2, 2, 2))
    p0, _ = project_xy(s, 2, alpha, 0)
    p1, _ = project_xy(s, 2, alpha, 1)
    assert np.isclose(p0 + p1, 1)


def test_eigenstate_projection_is_certain():
    alpha = 0.8
    plus = np.array([1, np.exp(1j * alpha)]) / np.sqrt(2)
    s = product_state((1, 2), [plus, (1, 0)])
    p, _ = project_xy(s, 1, alpha, 0)
    assert np.isclose(p, 1)
    p, reduced = project_xy(s, 1, alpha, 1)
    assert p < 1e-14 and reduced is None


@given(perm=st.permutations([0, 1, 2]))
@settings(max_examples=10, deadline=None)
def test_reorder_preserves_state(perm):
    rng = np.random.default_rng(11)
    v = rng.normal(size=8) + 1j * rng.normal(size=8)
    s = StateVector.from_tensor(("x", "y", "z"), (v / np.linalg.norm(v)).reshape(2, 2, 2))
    labels = [s.labels[i] for i in perm]
    r = s.reorder(labels)
    assert r.labels == tuple(labels)
    assert np.isclose(fidelity(s, r), 1)
    assert np.isclose(inner(r, s), 1)


@given(a=angles, b=angles)
@settings(max_examples=20, deadline=None)
def test_cphases_commute_and_preserve_norm(a, b):
    s = new_plus_state(3)
    one = apply_cphase(apply_cphase(s, 1, 2, a), 2, 3, b)
    two = apply_cphase(apply_cphase(s, 2, 3, b), 1, 2, a)
    assert np.allclose(one.amplitudes, two.amplitudes)
    assert np.isclose(one.norm(), 1)
