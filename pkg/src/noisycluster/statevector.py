"""Dense pure-state simulator used as the substrate for every cluster protocol.

Amplitudes are stored flat, little-endian in label position: bit ``j`` of the
integer index is the computational value of ``labels[j]``.  The low-level
kernels (``_cphase_kernel``, ``_project_kernel``, ``_apply_1q_kernel``) work on
tensors with arbitrary leading batch axes so the protocol drivers can push
whole batches of phase samples through one measurement tree.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Hashable, Iterable, Sequence

import numpy as np

PROB_FLOOR = 1e-14
NORM_TOL = 1e-12

_SQRT2_INV = 1 / np.sqrt(2)


class StateError(ValueError):
    """Raised for malformed states or invalid operations on them."""


@dataclass(frozen=True)
class Gate2x2:
    name: str
    matrix: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=complex)
        if m.shape != (2, 2):
            raise StateError(f"gate {self.name!r} must be 2x2, got {m.shape}")
        object.__setattr__(self, "matrix", m)

    @classmethod
    def _named(cls, name, matrix):
        g = cls(name, matrix)
        if not np.allclose(g.matrix.conj().T @ g.matrix, np.eye(2), atol=1e-12):
            raise StateError(f"gate {name!r} is not unitary")
        return g

    @classmethod
    def h(cls):
        return cls._named("H", np.array([[1, 1], [1, -1]]) * _SQRT2_INV)

    @classmethod
    def x(cls):
        return cls._named("X", [[0, 1], [1, 0]])

    @classmethod
    def y(cls):
        return cls._named("Y", [[0, -1j], [1j, 0]])

    @classmethod
    def z(cls):
        return cls._named("Z", [[1, 0], [0, -1]])

    @classmethod
    def identity(cls):
        return cls._named("I", np.eye(2))

    @classmethod
    def rz(cls, alpha: float):
        """exp(-i alpha Z / 2) = diag(e^{-i alpha/2}, e^{i alpha/2})."""
        return cls._named(f"Rz({alpha!r})", np.diag([np.exp(-0.5j * alpha), np.exp(0.5j * alpha)]))

    @classmethod
    def rx(cls, alpha: float):
        c, s = np.cos(alpha / 2), np.sin(alpha / 2)
        return cls._named(f"Rx({alpha!r})", [[c, -1j * s], [-1j * s, c]])

    @classmethod
    def from_name(cls, name: str) -> "Gate2x2":
        """Inverse of ``.name`` for the named constructors."""
        simple = {"H": cls.h, "X": cls.x, "Y": cls.y, "Z": cls.z, "I": cls.identity}
        if name in simple:
            return simple[name]()
        for prefix, ctor in (("Rz(", cls.rz), ("Rx(", cls.rx)):
            if name.startswith(prefix) and name.endswith(")"):
                return ctor(float(name[len(prefix):-1]))
        raise StateError(f"unknown gate name {name!r}")


# ---------------------------------------------------------------------------
# kernels on (batch..., 2, 2, ..., 2) tensors
# ---------------------------------------------------------------------------

def _apply_1q_kernel(t: np.ndarray, axis: int, g: np.ndarray) -> np.ndarray:
    out = np.tensordot(g, t, axes=([1], [axis]))
    return np.moveaxis(out, 0, axis)


def _cphase_kernel(t: np.ndarray, ax_a: int, ax_b: int, factor, batch_ndim: int = 0) -> np.ndarray:
    """Multiply the |1>_a|1>_b block by ``factor`` (scalar or batch-shaped array)."""
    t = t.copy()
    idx = [slice(None)] * t.ndim
    idx[ax_a] = 1
    idx[ax_b] = 1
    idx = tuple(idx)
    factor = np.asarray(factor)
    if factor.ndim:
        factor = factor.reshape(factor.shape + (1,) * (t.ndim - 2 - batch_ndim))
    t[idx] = t[idx] * factor
    return t


def _project_kernel(t: np.ndarray, axis: int, alpha, outcome: int, batch_ndim: int = 0) -> np.ndarray:
    """Contract ``axis`` with <+-alpha| = (<0| +- e^{-i alpha} <1|)/sqrt2, unnormalized."""
    sign = 1.0 if outcome == 0 else -1.0
    t0 = np.take(t, 0, axis=axis)
    t1 = np.take(t, 1, axis=axis)
    phase = np.exp(-1j * np.asarray(alpha, dtype=float))
    if phase.ndim:
        phase = phase.reshape(phase.shape + (1,) * (t0.ndim - batch_ndim))
    return (t0 + sign * phase * t1) * _SQRT2_INV


def cphase_factor(theta):
    """Phase picked up by |11> under the noisy controlled-phase gate: -e^{i theta}."""
    return -np.exp(1j * np.asarray(theta, dtype=float))


# ---------------------------------------------------------------------------
# StateVector
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class StateVector:
    labels: tuple
    amplitudes: np.ndarray

    def __post_init__(self):
        amps = np.asarray(self.amplitudes, dtype=complex).reshape(-1)
        labels = tuple(self.labels)
        if len(set(labels)) != len(labels):
            raise StateError(f"duplicate labels in {labels}")
        if amps.size != 2 ** len(labels):
            raise StateError(f"{amps.size} amplitudes for {len(labels)} qubits")
        amps.setflags(write=False)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "amplitudes", amps)

    @property
    def num_qubits(self) -> int:
        return len(self.labels)

    def norm(self) -> float:
        return float(np.linalg.norm(self.amplitudes))

    def position(self, site: Hashable) -> int:
        try:
            return self.labels.index(site)
        except ValueError:
            raise StateError(f"site {site!r} is not live in state {self.labels}") from None

    def tensor(self) -> np.ndarray:
        """View with axis ``i`` holding ``labels[i]`` (flat storage is little-endian)."""
        n = self.num_qubits
        if n == 0:
            return self.amplitudes.copy()
        return np.transpose(self.amplitudes.reshape([2] * n), list(range(n - 1, -1, -1)))

    @classmethod
    def from_tensor(cls, labels: Sequence, t: np.ndarray) -> "StateVector":
        n = len(labels)
        if n == 0:
            return cls((), np.asarray(t).reshape(1))
        flat = np.transpose(t, list(range(n - 1, -1, -1))).reshape(-1)
        return cls(tuple(labels), flat)

    def amplitude(self, bits: str) -> complex:
        """Amplitude of a basis string; the leftmost character is ``labels[0]``."""
        if len(bits) != self.num_qubits:
            raise StateError(f"expected {self.num_qubits} bits, got {bits!r}")
        index = sum(int(b) << j for j, b in enumerate(bits))
        return complex(self.amplitudes[index])

    def reorder(self, labels: Sequence) -> "StateVector":
        if sorted(map(repr, labels)) != sorted(map(repr, self.labels)) or len(labels) != self.num_qubits:
            raise StateError(f"label sets differ: {tuple(labels)} vs {self.labels}")
        perm = [self.position(s) for s in labels]
        return StateVector.from_tensor(labels, np.transpose(self.tensor(), perm))

    def normalized(self) -> "StateVector":
        nrm = self.norm()
        if nrm < np.sqrt(PROB_FLOOR):
            raise StateError("cannot normalize a (near) zero vector")
        return StateVector(self.labels, self.amplitudes / nrm)


def product_state(labels: Sequence, single_qubit_states: Iterable) -> StateVector:
    """Tensor product of single-qubit amplitude pairs, one per label."""
    t = np.ones((), dtype=complex)
    for amp in single_qubit_states:
        t = np.multiply.outer(t, np.asarray(amp, dtype=complex))
    return StateVector.from_tensor(tuple(labels), t)


def new_plus_state(n: int, labels: Sequence | None = None) -> StateVector:
    if n < 1:
        raise StateError("need at least one qubit")
    labels = tuple(range(1, n + 1)) if labels is None else tuple(labels)
    if len(labels) != n:
        raise StateError(f"{n} qubits but {len(labels)} labels")
    return StateVector(labels, np.full(2 ** n, 2 ** (-n / 2), dtype=complex))


def basis_state(labels: Sequence, bits: str) -> StateVector:
    return product_state(labels, [(1, 0) if b == "0" else (0, 1) for b in bits])


def apply_1q(state: StateVector, site, g: Gate2x2 | np.ndarray) -> StateVector:
    m = g.matrix if isinstance(g, Gate2x2) else np.asarray(g, dtype=complex)
    pos = state.position(site)
    return StateVector.from_tensor(state.labels, _apply_1q_kernel(state.tensor(), pos, m))


def apply_cphase(state: StateVector, a, b, theta: float = 0.0) -> StateVector:
    """Noisy controlled-phase diag(1, 1, 1, -e^{i theta}); theta=0 is the ideal gate."""
    if a == b:
        raise StateError("controlled phase needs two distinct sites")
    pa, pb = state.position(a), state.position(b)
    t = _cphase_kernel(state.tensor(), pa, pb, cphase_factor(theta))
    return StateVector.from_tensor(state.labels, t)


def project_xy(state: StateVector, site, alpha: float, outcome: int):
    """Measure ``site`` in {|+>^alpha, |->^alpha}; outcome 0 is |+>^alpha.

    Returns ``(probability, reduced)`` with the measured qubit removed.  For a
    branch below the probability floor ``reduced`` is None.
    """
    if outcome not in (0, 1):
        raise StateError(f"outcome must be 0 or 1, got {outcome!r}")
    pos = state.position(site)
    t = _project_kernel(state.tensor(), pos, alpha, outcome)
    labels = state.labels[:pos] + state.labels[pos + 1:]
    prob = float(np.sum(np.abs(t) ** 2))
    if prob < PROB_FLOOR:
        return prob, None
    return prob, StateVector.from_tensor(labels, t / np.sqrt(prob))


def inner(x: StateVector, y: StateVector) -> complex:
    """<x|y> after aligning y to x's label order."""
    y = y.reorder(x.labels)
    return complex(np.vdot(x.amplitudes, y.amplitudes))


def fidelity(x: StateVector, y: StateVector) -> float:
    return float(abs(inner(x, y)) ** 2)


def correlation_eigencheck(state: StateVector, layout, site, tol: float = 1e-10):
    """Apply K = X_site * prod Z_neighbour and compare with +-state.

    Returns ``(eigenvalue, residual)``.  ``eigenvalue`` is +1 or -1 when the
    state is an eigenstate within ``tol``, otherwise None; ``residual`` is the
    smaller of ||K psi - psi|| and ||K psi + psi||.
    """
    if site not in layout.sites:
        raise StateError(f"site {site!r} not in layout")
    out = apply_1q(state, site, Gate2x2.x())
    for nb in layout.neighbors(site):
        out = apply_1q(out, nb, Gate2x2.z())
    plus = float(np.linalg.norm(out.amplitudes - state.amplitudes))
    minus = float(np.linalg.norm(out.amplitudes + state.amplitudes))
    if plus <= tol:
        return 1, plus
    if minus <= tol:
        return -1, minus
    return None, min(plus, minus)
