import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from noisycluster.averaging import (
    FidelityReport,
    GaussianScheme,
    InputAverage,
    SweepSpec,
    bloch_average,
    bloch_nodes,
    estimate_cost,
    fidelity_batch,
    gaussian_average,
    moment_tensor,
    product_nodes,
    real_a_nodes,
    sweep,
    threshold_crossing,
    common_theta_curve,
)
from noisycluster.protocols import BudgetExceeded, rotation_protocol, run_protocol, transfer_protocol


def test_bloch_average_identities(rng):
    assert np.isclose(bloch_average(lambda s: 1.0), 1.0)
    assert np.isclose(bloch_average(lambda s: abs(s.amplitudes[0]) ** 2), 0.5)
    assert np.isclose(bloch_average(lambda s: abs(s.amplitudes[0]) ** 4), 1 / 3)
    # Monte Carlo cross-check with Haar-random qubits
    v = rng.normal(size=(200000, 2)) + 1j * rng.normal(size=(200000, 2))
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    assert abs(np.mean(abs(v[:, 0]) ** 4) - 1 / 3) < 5e-3


def test_node_weights():
    psi, w = product_nodes(bloch_nodes(), 1)
    assert np.isclose(w.sum(), 1)
    assert np.allclose(np.linalg.norm(psi, axis=0), 1)
    psi, w = product_nodes(real_a_nodes(), 1)
    assert np.isclose(w.sum(), 1)
    assert np.allclose(psi.imag, 0)
    # a uniform on [0, 1]: E[a^2] = 1/3
    assert np.isclose(w @ psi[0].real ** 2, 1 / 3)


@given(st.floats(0.05, 2.0))
@settings(max_examples=25, deadline=None)
def test_gauss_hermite_characteristic_function(sigma):
    est = gaussian_average(lambda ph: np.cos(ph["t"]), ["t"], sigma, GaussianScheme("gauss-hermite", order=30))
    assert np.isclose(est.value, np.exp(-sigma ** 2 / 2), atol=1e-10)
    assert est.stderr == 0


def test_zero_and_negative_sigma():
    est = gaussian_average(lambda ph: np.cos(ph["t"]) + 0 * ph["u"], ["t", "u"], 0.0)
    assert est.value == 1.0 and est.scheme == "exact"
    with pytest.raises(ValueError):
        gaussian_average(lambda ph: ph["t"], ["t"], -0.1)
    with pytest.raises(ValueError):
        GaussianScheme("simpson")


def test_monte_carlo_matches_quadrature_for_transfer():
    proto = transfer_protocol(3)
    inputs = InputAverage()
    cache = {}
    f = lambda ph: fidelity_batch(proto, ph, "exhaustive", inputs, cache)  # noqa: E731
    slots = proto.layout.slots()
    gh = gaussian_average(f, slots, 0.7, GaussianScheme("gauss-hermite", order=20))
    mc = gaussian_average(f, slots, 0.7, GaussianScheme("monte-carlo", samples=4000, seed=3))
    assert abs(gh.value - mc.value) < 3 * mc.stderr + 1e-12
    assert mc.stderr > 0


def test_moment_tensor_matches_direct_loop(rng):
    proto = transfer_protocol(3)
    phases = {s: rng.uniform(-1, 1) for s in proto.layout.slots()}
    fast = fidelity_batch(proto, {k: np.array([v]) for k, v in phases.items()}, "exhaustive", InputAverage())[0]
    psi, w = product_nodes(bloch_nodes(), 1)
    slow = sum(wi * run_protocol(proto, [psi[:, i]], phases).average_fidelity for i, wi in enumerate(w))
    assert np.isclose(fast, slow, atol=1e-12)


def test_moment_tensor_haar_closed_form(rng):
    # sum_b over Kraus-like maps: avg |<psi|A|psi>|^2 = (|tr A|^2 + tr A^dag A) / 6 for a qubit
    psi, w = product_nodes(bloch_nodes(), 1)
    q = moment_tensor(psi, w)
    a = rng.normal(size=(2, 2)) + 1j * rng.normal(size=(2, 2))
    got = np.einsum("ij,kl,ijkl", a, a.conj(), q).real
    want = (abs(np.trace(a)) ** 2 + np.trace(a.conj().T @ a).real) / 6
    assert np.isclose(got, want)


def test_postselected_average_for_real_inputs():
    proto = rotation_protocol("rot5", (np.pi / 4, 0.0, 0.0))
    inputs = InputAverage("real-a")
    zero = {s: np.zeros(1) for s in proto.layout.slots()}
    assert np.isclose(fidelity_batch(proto, zero, "postselect-zeros", inputs)[0], 1)
    noisy = {s: np.full(1, 0.4) for s in proto.layout.slots()}
    val = fidelity_batch(proto, noisy, "postselect-zeros", inputs)[0]
    psi, w = product_nodes(real_a_nodes(), 1)
    direct = sum(wi * run_protocol(proto, [psi[:, i]], {s: 0.4 for s in zero}, "postselect-zeros").average_fidelity
                 for i, wi in enumerate(w))
    assert np.isclose(val, direct, atol=1e-12)


def test_continuity_near_zero_sigma():
    spec = SweepSpec("transfer", (3,), "sigma", (0.0, 1e-4), coupling="iid-per-edge")
    rep = sweep(spec)
    col = rep.column("N=3")
    assert col[0] == pytest.approx(1.0)
    assert abs(col[1] - col[0]) < 1e-6


def test_report_validation():
    with pytest.raises(ValueError):
        FidelityReport("x", "theta", (0.0, 0.0), {"a": (1.0, 1.0)})
    with pytest.raises(ValueError):
        FidelityReport("x", "theta", (0.0, 0.1), {"a": (1.0, 1.2)})
    with pytest.raises(ValueError):
        FidelityReport("x", "theta", (0.0, 0.1), {"a": (1.0,)})
    with pytest.raises(ValueError):
        SweepSpec("transfer", (3,), "sigma", (-0.1,))


def test_sweep_is_deterministic_and_seeded():
    mk = lambda seed: SweepSpec("transfer", (3, 5), "sigma", (0.3, 0.6), coupling="iid-per-edge",  # noqa: E731
                                scheme=GaussianScheme("monte-carlo", samples=300, seed=seed))
    a, b, c = sweep(mk(1)), sweep(mk(1)), sweep(mk(2))
    assert a.columns == b.columns and a.stderr == b.stderr
    assert a.columns != c.columns


def test_budget_is_enforced():
    spec = SweepSpec("transfer", (3, 5, 7), "theta", (0.0, 0.5), budget=10)
    assert estimate_cost(spec) > 10
    with pytest.raises(BudgetExceeded):
        sweep(spec)


def test_paired_rotation_difference_is_non_negative():
    spec = SweepSpec("rotation", ("rot5", "rot7"), "sigma", (0.3, 0.8), mode="postselect-zeros",
                     inputs=InputAverage("real-a"), coupling="iid-per-edge", euler=(np.pi / 4, 0.0, 0.0),
                     scheme=GaussianScheme("monte-carlo", samples=2000, seed=5), paired=(("rot5", "rot7"),))
    rep = sweep(spec)
    diff = rep.difference("rot5", "rot7")
    err = np.asarray(rep.stderr["rot5-rot7"])
    assert np.all(diff > -3 * err)
    assert np.all(err < np.hypot(rep.stderr["rot5"], rep.stderr["rot7"]))


def test_threshold_crossing_of_transfer():
    f = common_theta_curve(transfer_protocol(3))
    t = threshold_crossing(f, 0.0, 2.0)
    assert np.isclose(f(t), 2 / 3, atol=1e-8)
    assert f(0.0) == pytest.approx(1.0)
