"""Byproduct (Pauli-frame) algebra for measurement patterns.

A frame on ``n`` logical lines is the operator ``i**phase * prod_k X_k^x Z_k^z``.
It sits *after* the logical circuit: the cluster delivers ``frame @ U_g |psi>``
and the decoding operator is ``frame^dagger``.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass
from functools import reduce
from typing import Mapping, Sequence

import numpy as np

from .cluster import AngleSpec, ClusterLayout, LayoutError, strip_redundant
from .statevector import Gate2x2

_I2 = np.eye(2, dtype=complex)
_X = np.array([[0, 1], [1, 0]], dtype=complex)
_Z = np.diag([1.0, -1.0]).astype(complex)
_H = np.array([[1, 1], [1, -1]], dtype=complex) / np.sqrt(2)
_CZ = np.diag([1, 1, 1, -1]).astype(complex)


class FrameError(ValueError):
    pass


def _is_clifford_angle(alpha: float, tol: float = 1e-12) -> bool:
    q = alpha / (np.pi / 2)
    return abs(q - round(q)) < tol


@dataclass(frozen=True)
class PauliFrame:
    bits: tuple          # ((x, z), ...) per logical line
    phase: int = 0       # global factor i**phase

    def __post_init__(self):
        bits = tuple((int(x) & 1, int(z) & 1) for x, z in self.bits)
        object.__setattr__(self, "bits", bits)
        object.__setattr__(self, "phase", int(self.phase) % 4)

    @classmethod
    def identity(cls, n: int) -> "PauliFrame":
        return cls(((0, 0),) * n)

    @classmethod
    def single(cls, n: int, line: int, x: int = 0, z: int = 0) -> "PauliFrame":
        bits = [(0, 0)] * n
        bits[line] = (x, z)
        return cls(tuple(bits))

    @property
    def num_lines(self) -> int:
        return len(self.bits)

    def x(self, line: int) -> int:
        return self.bits[line][0]

    def z(self, line: int) -> int:
        return self.bits[line][1]

    def is_identity(self, ignore_phase: bool = True) -> bool:
        return all(b == (0, 0) for b in self.bits) and (ignore_phase or self.phase == 0)

    def __mul__(self, other: "PauliFrame") -> "PauliFrame":
        """Operator product self @ other."""
        if self.num_lines != other.num_lines:
            raise FrameError("frames act on different numbers of lines")
        phase = self.phase + other.phase
        bits = []
        for (x1, z1), (x2, z2) in zip(self.bits, other.bits):
            phase += 2 * (z1 & x2)          # Z X = -X Z
            bits.append((x1 ^ x2, z1 ^ z2))
        return PauliFrame(tuple(bits), phase)

    def line_matrix(self, line: int) -> np.ndarray:
        x, z = self.bits[line]
        return np.linalg.matrix_power(_X, x) @ np.linalg.matrix_power(_Z, z)

    def matrix(self) -> np.ndarray:
        """Full operator, line 0 as the most significant tensor factor."""
        m = reduce(np.kron, [self.line_matrix(k) for k in range(self.num_lines)], np.eye(1))
        return (1j ** self.phase) * m

    def decoding(self) -> "PauliFrame":
        """Hermitian conjugate; X^x Z^z dagger = Z^z X^x = (-1)^(xz) X^x Z^z."""
        extra = sum(2 * (x & z) for x, z in self.bits)
        return PauliFrame(self.bits, -self.phase + extra)

    def label(self) -> str:
        names = {(0, 0): "I", (1, 0): "X", (0, 1): "Z", (1, 1): "XZ"}
        return " (x) ".join(names[b] for b in self.bits)


# ---------------------------------------------------------------------------
# propagation
# ---------------------------------------------------------------------------

def _paulis(k: int):
    for combo in itertools.product(((0, 0), (1, 0), (0, 1), (1, 1)), repeat=k):
        yield combo, reduce(np.kron, [np.linalg.matrix_power(_X, x) @ np.linalg.matrix_power(_Z, z)
                                      for x, z in combo], np.eye(1))


def conjugate(frame: PauliFrame, lines: Sequence[int], unitary: np.ndarray) -> PauliFrame:
    """Frame after pushing it through ``unitary`` acting on ``lines``: G P G^dagger."""
    k = len(lines)
    u = np.asarray(unitary, dtype=complex)
    u = u / np.sqrt(abs(np.linalg.det(u)) ** (1 / u.shape[0]))
    sub = PauliFrame(tuple(frame.bits[l] for l in lines)).matrix()
    m = u @ sub @ u.conj().T
    for combo, p in _paulis(k):
        c = np.vdot(p, m) / p.shape[0]
        if abs(abs(c) - 1) < 1e-9 and np.allclose(m, c * p, atol=1e-9):
            steps = int(round(np.angle(c) / (np.pi / 2))) % 4
            if abs(c - 1j ** steps) > 1e-9:
                raise FrameError("gate maps the frame outside the Pauli group")
            bits = list(frame.bits)
            for l, b in zip(lines, combo):
                bits[l] = b
            return PauliFrame(tuple(bits), frame.phase + steps)
    raise FrameError("gate is not Clifford on this frame")


@dataclass(frozen=True)
class Gate:
    kind: str                # "H", "RZ", "CZ", "U"
    lines: tuple
    angle: float = 0.0
    unitary: np.ndarray | None = None

    @classmethod
    def h(cls, line):
        return cls("H", (line,))

    @classmethod
    def rz(cls, line, angle):
        return cls("RZ", (line,), float(angle))

    @classmethod
    def cz(cls, a, b):
        return cls("CZ", (a, b))

    def matrix(self) -> np.ndarray:
        if self.kind == "H":
            return _H
        if self.kind == "RZ":
            return Gate2x2.rz(self.angle).matrix
        if self.kind == "CZ":
            return _CZ
        return self.unitary


def propagate(frame: PauliFrame, gate: Gate, adapt: bool | None = None):
    """Push ``frame`` through ``gate``: returns (frame', gate') with
    gate @ frame == frame' @ gate' (up to global phase bookkeeping).

    Clifford gates come back unchanged.  A z rotation by a non-Clifford angle
    (or any angle when ``adapt`` is true) keeps the frame and flips its angle
    when the line carries an X component.
    """
    if gate.kind == "RZ":
        line = gate.lines[0]
        if adapt is None:
            adapt = not _is_clifford_angle(gate.angle)
        if adapt:
            if frame.x(line):
                return frame, Gate.rz(line, -gate.angle)
            return frame, gate
    return conjugate(frame, gate.lines, gate.matrix()), gate


# ---------------------------------------------------------------------------
# closed forms
# ---------------------------------------------------------------------------

def transfer_frame(outcomes: Sequence[int], n: int) -> PauliFrame:
    """Byproduct after x-measuring sites 1..N-1 of an odd linear chain."""
    if n % 2 == 0:
        raise FrameError("closed form holds for odd N; even chains carry an extra Hadamard")
    if len(outcomes) != n - 1:
        raise FrameError(f"need {n - 1} outcomes for N={n}")
    z = reduce(lambda a, b: a ^ b, outcomes[0::2], 0)
    x = reduce(lambda a, b: a ^ b, outcomes[1::2], 0)
    return PauliFrame(((x, z),))


def cnot4_frame(s1: int, s3: int) -> PauliFrame:
    return PauliFrame(((s1, 0), (s1 ^ s3, 0)))


_SQ_GX7 = (2, 3, 5, 6)
_SQ_GX15 = (2, 3, 8, 10, 12, 14)
_SQ_GZ7 = (1, 3, 4, 5, 8, 9, 11)
_SQ_GZ15 = (9, 11, 13)
SQUASHED_I_MEASURED = (1, 2, 3, 4, 5, 6, 8, 9, 10, 11, 12, 13, 14)


def squashed_i_frame(outcomes: Mapping[int, int]) -> PauliFrame:
    """Exponents of the squashed-I CNOT byproduct; lines are (output 7, output 15)."""
    missing = [s for s in SQUASHED_I_MEASURED if s not in outcomes]
    if missing:
        raise FrameError(f"missing outcomes for sites {missing}")
    par = lambda sites: sum(outcomes[s] for s in sites) % 2  # noqa: E731
    return PauliFrame(((par(_SQ_GX7), (par(_SQ_GZ7) + 1) % 2), (par(_SQ_GX15), par(_SQ_GZ15))))


def rotation_angles(euler: Sequence[float], outcomes_so_far: Sequence[int]) -> float:
    """Angle for the next site of the five-qubit rotation pattern.

    ``euler`` is (zeta, nu, xi) for U = Rx(zeta) Rz(nu) Rx(xi); with k outcomes
    known, returns the angle of site k+1.
    """
    zeta, nu, xi = euler
    s = list(outcomes_so_far)
    k = len(s)
    if k == 0:
        return 0.0
    if k == 1:
        return (-1) ** s[0] * (-xi)
    if k == 2:
        return (-1) ** s[1] * (-nu)
    if k == 3:
        return (-1) ** (s[0] ^ s[2]) * (-zeta)
    raise FrameError("the rotation pattern measures only four sites")


def rotation_frame(outcomes: Sequence[int]) -> PauliFrame:
    s1, s2, s3, s4 = outcomes
    return PauliFrame(((s2 ^ s4, s1 ^ s3),))


# ---------------------------------------------------------------------------
# equivalent circuits of layouts
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Step:
    kind: str            # "bbb1", "cz", "bridge"
    lines: tuple
    site: object = None
    spec: AngleSpec | None = None


def bbb3_unitary(alpha: float, outcome: int = 0) -> np.ndarray:
    """Effective diagonal two-line operator of the bridge measurement (scaled by sqrt 2)."""
    e = np.exp(-1j * alpha)
    sgn = 1 if outcome == 0 else -1
    return np.diag([1 + sgn * e, 1 - sgn * e, 1 - sgn * e, 1 + sgn * e]) / np.sqrt(2)


def equivalent_program(layout: ClusterLayout) -> tuple:
    """Translate a layout into its sequence of building-block steps.

    Each measured site is either the current site of a logical line (a BBB1
    step moving the line to its unique fresh neighbour) or a bridge whose two
    live neighbours are current sites of two lines (a BBB3 step).  Edges
    between current sites of different lines are controlled-phase gates.
    Redundant sites are treated as already removed.
    """
    layout = strip_redundant(layout)
    current = {site: k for k, site in enumerate(layout.inputs)}
    done: set = set()
    used: set = set()
    steps: list = []

    def fire_cz():
        for a, b in layout.edges:
            if (a, b) not in used and a in current and b in current:
                la, lb = current[a], current[b]
                if la == lb:
                    raise LayoutError(f"edge ({a},{b}) joins two sites of one line")
                steps.append(Step("cz", (la, lb)))
                used.add((a, b))

    def key(a, b):
        return tuple(sorted((a, b)))

    fire_cz()
    for site, spec in layout.pattern:
        live = [n for n in layout.neighbors(site) if n not in done and key(site, n) not in used]
        if site in current:
            line = current.pop(site)
            fresh = [n for n in live if n not in current]
            if len(fresh) != 1:
                raise LayoutError(f"{layout.name}: site {site} has no unique successor ({fresh})")
            nxt = fresh[0]
            steps.append(Step("bbb1", (line,), site, spec))
            used.add(key(site, nxt))
            current[nxt] = line
        else:
            if len(live) != 2 or not all(n in current for n in live):
                raise LayoutError(f"{layout.name}: site {site} is neither a line site nor a bridge")
            la, lb = current[live[0]], current[live[1]]
            steps.append(Step("bridge", (la, lb), site, spec))
            used.update(key(site, n) for n in live)
        done.add(site)
        fire_cz()
    if set(used) != set(layout.edges):
        raise LayoutError(f"{layout.name}: edges {sorted(set(layout.edges) - used)} never act")
    final = {line: site for site, line in current.items()}
    if tuple(final[k] for k in range(layout.num_lines)) != layout.outputs:
        raise LayoutError(f"{layout.name}: lines do not end on the declared outputs")
    return tuple(steps)


@dataclass
class ProgramTrace:
    frame: PauliFrame
    angles: dict          # site -> measurement angle actually used
    unitary: np.ndarray   # ideal logical circuit (line 0 most significant)


def _embed(u: np.ndarray, lines: Sequence[int], n: int) -> np.ndarray:
    """Lift a gate on ``lines`` to the full n-line space (line 0 most significant)."""
    k = len(lines)
    full = np.zeros((2 ** n, 2 ** n), dtype=complex)
    t = u.reshape([2] * (2 * k))
    for idx in itertools.product((0, 1), repeat=n):
        for out_sub in itertools.product((0, 1), repeat=k):
            amp = t[tuple(out_sub) + tuple(idx[l] for l in lines)]
            if amp == 0:
                continue
            o = list(idx)
            for l, v in zip(lines, out_sub):
                o[l] = v
            full[int("".join(map(str, o)), 2), int("".join(map(str, idx)), 2)] += amp
    return full


def trace_program(layout: ClusterLayout, outcomes: Mapping, params: Mapping | None = None,
                  program: tuple | None = None) -> ProgramTrace:
    """Propagate byproducts through the layout's equivalent circuit.

    Returns the final frame, the measurement angles the pattern prescribes
    for these outcomes, and the ideal logical unitary.  Adaptive angles are
    cross-checked against the propagated X components.
    """
    program = equivalent_program(layout) if program is None else program
    n = layout.num_lines
    frame = PauliFrame.identity(n)
    unitary = np.eye(2 ** n, dtype=complex)
    angles = {}
    for step in program:
        if step.kind == "cz":
            frame, _ = propagate(frame, Gate.cz(*step.lines))
            unitary = _embed(_CZ, step.lines, n) @ unitary
            continue
        s = outcomes[step.site]
        base = step.spec.value(params, {d: 0 for d in step.spec.deps})
        angles[step.site] = step.spec.value(params, outcomes)
        if step.kind == "bbb1":
            (line,) = step.lines
            adaptive = bool(step.spec.deps)
            if adaptive:
                parity = sum(outcomes[d] for d in step.spec.deps) % 2
                if parity != frame.x(line):
                    raise FrameError(f"adaptive angle of site {step.site} disagrees with the frame")
            elif frame.x(line) and not _is_clifford_angle(base):
                raise FrameError(f"site {step.site} needs an adaptive angle")
            frame, _ = propagate(frame, Gate.rz(line, -base), adapt=adaptive)
            frame, _ = propagate(frame, Gate.h(line))
            frame = PauliFrame.single(n, line, x=s) * frame
            unitary = _embed(_H @ Gate2x2.rz(-base).matrix, (line,), n) @ unitary
        else:
            if step.spec.deps or not _is_clifford_angle(base) or _is_clifford_angle(base / 2):
                raise FrameError(f"bridge {step.site} must be measured at +-pi/2")
            t0 = bbb3_unitary(base, 0)
            frame = conjugate(frame, step.lines, t0)
            zz = PauliFrame.identity(n)
            if s:
                bits = list(zz.bits)
                for l in step.lines:
                    bits[l] = (0, 1)
                zz = PauliFrame(tuple(bits))
            frame = zz * frame
            unitary = _embed(t0, step.lines, n) @ unitary
    return ProgramTrace(frame, angles, unitary)
