import itertools
from functools import reduce

import numpy as np
import pytest

from noisycluster.cluster import PhaseAssignment, builtin_layout, slot_name
from noisycluster.protocols import (
    CNOT,
    BudgetExceeded,
    InputState,
    bbb3_matrix,
    branch_states,
    cnot_protocol,
    equivalent_circuit,
    rotation_protocol,
    run_cnot,
    run_protocol,
    run_rotation,
    run_transfer,
    transfer_protocol,
)
from noisycluster.statevector import Gate2x2

from conftest import random_qubit

H = Gate2x2.h().matrix
X = np.array([[0, 1], [1, 0]])
Z = np.diag([1, -1])


def bra(alpha, s):
    return np.array([1, (1 if s == 0 else -1) * np.exp(-1j * alpha)]) / np.sqrt(2)


def dense_cphase(n, i, j, theta):
    d = np.ones(2 ** n, dtype=complex)
    for k in range(2 ** n):
        b = format(k, f"0{n}b")
        if b[i] == b[j] == "1":
            d[k] = -np.exp(1j * theta)
    return np.diag(d)


def project_first(v, alpha, s):
    """Contract the leading qubit of a big-endian vector with <+-alpha|."""
    return np.kron(bra(alpha, s), np.eye(len(v) // 2)) @ v


def test_input_states():
    s = InputState.real(0.6)
    assert np.allclose(s.amplitudes, [0.6, 0.8])
    b = InputState.bloch(np.pi / 2, 0.3)
    assert np.isclose(abs(b.amplitudes[1]), np.sqrt(0.5))
    assert np.allclose(InputState.from_vector([0, 1j]).amplitudes, [0, 1j])
    with pytest.raises(ValueError):
        InputState(0.5, 0.5)
    with pytest.raises(ValueError):
        InputState.real(1.5)


@pytest.mark.parametrize("run", [
    lambda q: run_transfer(3, input_state=q[0]),
    lambda q: run_transfer(5, input_state=q[0]),
    lambda q: run_rotation("rot5", (0.3, -0.8, 1.9), input_state=q[0]),
    lambda q: run_rotation("rot7", (0.3, -0.8, 1.9), input_state=q[0]),
    lambda q: run_cnot("cnot4", control=q[0], target=q[1]),
    lambda q: run_cnot("helix", control=q[0], target=q[1]),
    lambda q: run_cnot("squashed-i", control=q[0], target=q[1]),
], ids=["transfer3", "transfer5", "rot5", "rot7", "cnot4", "helix", "squashed-i"])
def test_zero_phase_every_branch_is_perfect(run, rng):
    q = [InputState.from_vector(random_qubit(rng)) for _ in range(2)]
    result = run(q)
    m = len(result.branches)
    assert np.isclose(result.total_probability, 1, atol=1e-10)
    for b in result.branches:
        assert np.isclose(b.fidelity, 1, atol=1e-10)
        assert np.isclose(b.probability, 1 / m, atol=1e-10)


def test_zero_inputs_cnot_variants():
    zero = InputState(1.0, 0.0)
    for variant in ("cnot4", "helix", "squashed-i-redundant"):
        r = run_cnot(variant, control=zero, target=zero)
        assert min(b.fidelity for b in r.branches) > 1 - 1e-10


def test_transfer_at_pi_matches_brute_force():
    # N=3 with theta=pi: every edge is the identity, so fidelity depends on the input only
    psi = np.array([0.6, 0.8j])
    theta = np.pi
    state = reduce(np.kron, [psi, np.ones(2) / np.sqrt(2), np.ones(2) / np.sqrt(2)])
    state = dense_cphase(3, 1, 2, theta) @ dense_cphase(3, 0, 1, theta) @ state
    expected = {}
    for s1, s2 in itertools.product((0, 1), repeat=2):
        v = project_first(project_first(state, 0.0, s1), 0.0, s2)
        p = np.vdot(v, v).real
        frame = np.linalg.matrix_power(X, s2) @ np.linalg.matrix_power(Z, s1)
        out = frame.conj().T @ v / np.sqrt(p)
        expected[(s1, s2)] = (p, abs(np.vdot(psi, out)) ** 2)
    result = run_transfer(3, PhaseAssignment.common(theta), InputState.from_vector(psi))
    for b in result.branches:
        p, f = expected[(b.outcomes[1], b.outcomes[2])]
        assert np.isclose(b.probability, p)
        if p > 1e-12:
            assert np.isclose(b.fidelity, f)


def test_even_transfer_targets_hadamard(rng):
    proto = transfer_protocol(4)
    assert np.allclose(proto.target, H)
    psi = InputState.from_vector(random_qubit(rng))
    r = run_protocol(proto, [psi])
    assert min(b.fidelity for b in r.branches) > 1 - 1e-10


def test_transfer_budget():
    with pytest.raises(BudgetExceeded):
        run_transfer(21)


def final3(a, euler, t):
    """Normalized output on qubit 5, written term by term from the closed form."""
    zeta, nu, xi = euler
    b = np.sqrt(1 - a * a)
    e = lambda v: np.exp(1j * v)  # noqa: E731
    plus = a * (1 + e(xi) + e(nu) - e(xi + nu + t[1])) \
        + b * (1 + e(nu) - e(xi + t[0]) + e(xi + nu + t[0] + t[1]))
    minus = a * (1 + e(xi) - e(nu + t[2]) + e(xi + nu + t[1] + t[2])) \
        + b * (1 - e(xi + t[0]) - e(nu + t[2]) - e(xi + nu + t[0] + t[1] + t[2]))
    v = plus * np.array([1, 1]) + minus * e(zeta) * np.array([1, -e(t[3])])
    return v / np.linalg.norm(v)


def test_postselected_rotation_matches_closed_form(rng):
    for _ in range(10):
        a = rng.uniform()
        euler = tuple(rng.uniform(-np.pi, np.pi, 3))
        t = rng.uniform(-1.5, 1.5, 4)
        phases = {slot_name(i, i + 1): t[i - 1] for i in range(1, 5)}
        r = run_rotation("rot5", euler, phases, InputState.real(a), mode="postselect-zeros")
        (b,) = r.branches
        out = b.raw_output.amplitudes
        assert np.isclose(abs(np.vdot(final3(a, euler, t), out)), 1, atol=1e-10)


def test_rot7_matches_rot5_without_noise(rng):
    euler = (0.7, 0.2, -1.1)
    psi = InputState.from_vector(random_qubit(rng))
    f5 = run_rotation("rot5", euler, input_state=psi).average_fidelity
    f7 = run_rotation("rot7", euler, input_state=psi).average_fidelity
    assert np.isclose(f5, 1) and np.isclose(f7, 1)


def test_rot7_is_worse_with_noise():
    euler = (np.pi / 4, 0.0, 0.0)
    psi = InputState.real(0.3)
    f5 = run_rotation("rot5", euler, PhaseAssignment.common(0.5), psi).average_fidelity
    f7 = run_rotation("rot7", euler, PhaseAssignment.common(0.5), psi).average_fidelity
    assert f7 < f5 < 1


def test_cnot4_matches_sixteen_amplitude_oracle(rng):
    # sites 1..4 on a chain; target enters at 1, control at 3; outputs 2 and 4
    for _ in range(10):
        c, t = random_qubit(rng), random_qubit(rng)
        state = reduce(np.kron, [t, np.ones(2) / np.sqrt(2), c, np.ones(2) / np.sqrt(2)])
        for i, j in ((0, 1), (1, 2), (2, 3)):
            state = dense_cphase(4, i, j, 0.0) @ state
        tensor = state.reshape(2, 2, 2, 2)
        result = run_cnot("cnot4", control=InputState.from_vector(c), target=InputState.from_vector(t))
        for b in result.branches:
            s1, s3 = b.outcomes[1], b.outcomes[3]
            out = np.einsum("a,c,abcd->bd", bra(0.0, s1), bra(0.0, s3), tensor)   # (site 2, site 4)
            out = np.kron(np.linalg.matrix_power(X, s1), np.linalg.matrix_power(X, s1 ^ s3)) @ out.reshape(-1)
            out = np.kron(H, H) @ out
            out = out.reshape(2, 2).T.reshape(-1)       # (control on 4, target on 2)
            out /= np.linalg.norm(out)
            assert np.isclose(abs(np.vdot(CNOT @ np.kron(c, t), out)), 1)
            assert np.isclose(b.fidelity, 1)


def test_cnot_circuit_equivalence_at_zero_phase():
    # squashed-I and cnot4 realise the same logical gate once their frames are decoded
    for variant in ("squashed-i", "cnot4", "helix"):
        proto = cnot_protocol(variant)
        assert np.allclose(proto.target, CNOT)
    assert np.allclose(equivalent_circuit("squashed-i"), equivalent_circuit("helix"))


def test_squashed_i_postselected_is_a_single_branch():
    r = run_cnot("squashed-i", PhaseAssignment.common(0.6), InputState.real(0.5), InputState.real(0.5),
                 mode="postselect-zeros")
    assert len(r.branches) == 1
    assert all(v == 0 for v in r.branches[0].outcomes.values())
    assert 0 < r.branches[0].fidelity < 1


def test_bbb3_matrix_closed_form():
    assert np.allclose(bbb3_matrix(np.pi / 2, 0), np.diag([1 - 1j, 1 + 1j, 1 + 1j, 1 - 1j]) / np.sqrt(2))
    assert np.allclose(bbb3_matrix(0.0, 0), np.diag([2, 0, 0, 2]) / np.sqrt(2))
    for alpha in (0.3, 1.1, -2.0):
        e = np.exp(-1j * alpha)
        assert np.allclose(bbb3_matrix(alpha, 1), np.diag([1 - e, 1 + e, 1 + e, 1 - e]) / np.sqrt(2))
        total = bbb3_matrix(alpha, 0) + bbb3_matrix(alpha, 1)
        assert np.allclose(total, 2 * np.eye(4) / np.sqrt(2))


def test_staged_and_monolithic_states_agree(rng):
    layout = builtin_layout("box")
    phases = {s: rng.uniform(-1, 1) for s in layout.slots()}
    inputs = [random_qubit(rng), random_qubit(rng)]
    params = {"alpha": 0.4, "beta": -0.3}
    staged = branch_states(layout, inputs, phases, params, schedule="blocks")
    mono = branch_states(layout, inputs, phases, params, schedule="monolithic")
    assert len(staged) == len(mono) == 4
    for (o1, p1, s1), (o2, p2, s2) in zip(staged, mono):
        assert o1 == o2
        assert np.isclose(p1, p2, atol=1e-12)
        assert np.allclose(s1.amplitudes, s2.amplitudes, atol=1e-10)


def test_wrong_number_of_inputs():
    with pytest.raises(ValueError):
        run_protocol(cnot_protocol("cnot4"), [InputState(1.0, 0.0)])
    with pytest.raises(ValueError):
        rotation_protocol("rot9", (0, 0, 0))
