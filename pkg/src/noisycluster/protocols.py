"""End-to-end measurement protocols on (noisy) clusters.

The engine works with branch maps: for each set of outcomes it produces the
linear map ``M_s`` from logical input amplitudes to (decoded) output
amplitudes, so ``||M_s psi||^2`` is the Born probability of that branch and
``M_s psi / ||M_s psi||`` the post-measurement logical state.  Maps are
computed for a whole batch of phase assignments at once.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from functools import reduce
from typing import Callable, Mapping, Sequence

import numpy as np

from .cluster import (
    ClusterLayout,
    LayoutError,
    PhaseAssignment,
    builtin_layout,
    linear,
    slot_name,
)
from .pauliframe import (
    PauliFrame,
    cnot4_frame,
    equivalent_program,
    rotation_angles,
    rotation_frame,
    squashed_i_frame,
    trace_program,
    transfer_frame,
)
from .statevector import (
    Gate2x2,
    StateVector,
    _apply_1q_kernel,
    _cphase_kernel,
    _project_kernel,
    cphase_factor,
)

H = Gate2x2.h().matrix
CNOT = np.array([[1, 0, 0, 0], [0, 1, 0, 0], [0, 0, 0, 1], [0, 0, 1, 0]], dtype=complex)
SWAP = np.array([[1, 0, 0, 0], [0, 0, 1, 0], [0, 1, 0, 0], [0, 0, 0, 1]], dtype=complex)

MAX_EXHAUSTIVE_BRANCHES = 2 ** 14
HALF_PI = np.pi / 2


class BudgetExceeded(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# inputs
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class InputState:
    """a|0> + b e^{i phi}|1> with a, b >= 0 and a^2 + b^2 = 1."""
    a: float
    b: float
    phi: float = 0.0

    def __post_init__(self):
        if self.a < -1e-15 or self.b < -1e-15 or abs(self.a ** 2 + self.b ** 2 - 1) > 1e-12:
            raise ValueError(f"not a normalized input: a={self.a}, b={self.b}")

    @classmethod
    def real(cls, a: float) -> "InputState":
        if not 0 <= a <= 1:
            raise ValueError("a must lie in [0, 1]")
        return cls(a, float(np.sqrt(1 - a * a)))

    @classmethod
    def bloch(cls, polar: float, azimuth: float) -> "InputState":
        return cls(float(abs(np.cos(polar / 2))), float(abs(np.sin(polar / 2))), float(azimuth))

    @classmethod
    def from_vector(cls, v) -> "InputState":
        v = np.asarray(v, dtype=complex)
        v = v / np.linalg.norm(v)
        if abs(v[0]) > 1e-15:
            v = v * np.exp(-1j * np.angle(v[0]))
        return cls(float(abs(v[0])), float(abs(v[1])), float(np.angle(v[1])))

    @property
    def amplitudes(self) -> np.ndarray:
        return np.array([self.a, self.b * np.exp(1j * self.phi)], dtype=complex)


# ---------------------------------------------------------------------------
# engine
# ---------------------------------------------------------------------------

def _phase_arrays(layout: ClusterLayout, phases) -> tuple[dict, int]:
    """Normalize phases to slot -> (B,) arrays."""
    if phases is None:
        phases = PhaseAssignment.zero()
    if isinstance(phases, PhaseAssignment):
        phases = phases.for_layout(layout)
    out = {}
    size = 1
    for slot in layout.slots():
        if slot not in phases:
            raise LayoutError(f"uncovered phase slot {slot}")
        arr = np.atleast_1d(np.asarray(phases[slot], dtype=float))
        out[slot] = arr
        size = max(size, arr.size)
    for slot, arr in out.items():
        if arr.size not in (1, size):
            raise ValueError("phase batches have inconsistent sizes")
        out[slot] = np.broadcast_to(arr, (size,))
    return out, size


class _Sim:
    """Tensor (B, in_0..in_{k-1}, live qubits...) with lazy entangling."""

    def __init__(self, layout: ClusterLayout, phases: dict, batch: int, schedule: str):
        self.layout = layout
        self.phases = phases
        self.k = layout.num_lines
        eye = np.eye(2 ** self.k, dtype=complex).reshape([2] * (2 * self.k))
        self.t = np.broadcast_to(eye, (batch,) + eye.shape).copy()
        self.labels = list(layout.inputs)
        self.pending = set(layout.edges)
        self.schedule = schedule

    def axis(self, site) -> int:
        return 1 + self.k + self.labels.index(site)

    def add(self, site):
        if site not in self.labels:
            self.t = np.multiply.outer(self.t, np.array([1, 1], dtype=complex) / np.sqrt(2))
            self.labels.append(site)

    def entangle(self, edges):
        for a, b in sorted(edges):
            if (a, b) not in self.pending:
                continue
            self.add(a)
            self.add(b)
            factor = cphase_factor(self.phases[slot_name(a, b)])
            self.t = _cphase_kernel(self.t, self.axis(a), self.axis(b), factor, batch_ndim=1)
            self.pending.discard((a, b))

    def prepare(self, site):
        self.entangle([e for e in self.pending if site in e])

    def measure(self, site, alpha, outcome):
        t = _project_kernel(self.t, self.axis(site), alpha, outcome)
        child = object.__new__(_Sim)
        child.__dict__.update(self.__dict__)
        child.t = t
        child.labels = [s for s in self.labels if s != site]
        child.pending = set(self.pending)
        return child

    def rotate(self, site, gate: np.ndarray):
        self.t = _apply_1q_kernel(self.t, self.axis(site), gate)

    def finish(self) -> np.ndarray:
        self.entangle(list(self.pending))
        perm = [0] + list(range(1, 1 + self.k)) + [self.axis(s) for s in self.layout.outputs]
        t = np.transpose(self.t, perm)
        b = t.shape[0]
        d = 2 ** self.k
        return np.transpose(t.reshape(b, d, d), (0, 2, 1))


@dataclass
class Branch:
    outcomes: dict
    maps: np.ndarray          # (B, d_out, d_in), raw (undecoded) branch maps


def branch_maps(layout: ClusterLayout, phases=None, params: Mapping | None = None,
                mode: str = "exhaustive", schedule: str = "lazy",
                angle_fn: Callable | None = None) -> list:
    """Enumerate measurement branches of ``layout``.

    ``mode`` is ``exhaustive`` or ``postselect-zeros``.  ``schedule`` chooses
    when edges act: ``monolithic`` (all before any measurement), ``blocks``
    (stage by stage per the concatenation record) or ``lazy`` (each edge just
    before one of its sites is measured).  Redundant sites are removed first,
    measured in the y basis, with their local corrections applied.
    """
    phase_map, batch = _phase_arrays(layout, phases)
    measured = [s for s, _ in layout.pattern]
    n_meas = len(measured) + len(layout.redundant)
    if mode == "exhaustive" and 2 ** n_meas > MAX_EXHAUSTIVE_BRANCHES:
        raise BudgetExceeded(f"{2 ** n_meas} branches exceed the budget of {MAX_EXHAUSTIVE_BRANCHES}")
    if mode not in ("exhaustive", "postselect-zeros"):
        raise ValueError(f"unknown mode {mode!r}")
    outcomes_for = (0, 1) if mode == "exhaustive" else (0,)

    root = _Sim(layout, phase_map, batch, schedule)
    if schedule == "monolithic":
        root.entangle(list(root.pending))
    elif schedule == "blocks":
        if layout.blocks is None:
            raise LayoutError(f"{layout.name} has no concatenation record")
    elif schedule != "lazy":
        raise ValueError(f"unknown schedule {schedule!r}")

    # staged schedule: block i's edges go in right before its first measurement
    block_of = {}
    if schedule == "blocks":
        for i, blk in enumerate(layout.blocks):
            for s in blk.measured:
                block_of[s] = i

    results = []

    def remove(sim, idx, outcomes):
        if idx == len(layout.redundant):
            return walk(sim, 0, outcomes, set())
        r = layout.redundant[idx]
        sim.prepare(r)
        for s in outcomes_for:
            child = sim.measure(r, HALF_PI, s)
            nbs = [n for n in layout.neighbors(r)]
            for n in nbs:
                child.add(n)
                child.rotate(n, Gate2x2.rz(-HALF_PI if s == 0 else HALF_PI).matrix)
            remove(child, idx + 1, {**outcomes, r: s})

    def walk(sim, idx, outcomes, staged):
        if idx == len(measured):
            if schedule == "blocks":
                for blk in layout.blocks:
                    sim.entangle(blk.edges)
            results.append(Branch(dict(outcomes), sim.finish()))
            return
        site, spec = layout.pattern[idx]
        if schedule == "blocks":
            upto = block_of[site]
            for i in range(upto + 1):
                if i not in staged:
                    sim.entangle(layout.blocks[i].edges)
                    staged = staged | {i}
        sim.prepare(site)
        if angle_fn is not None:
            alpha = angle_fn(site, outcomes)
        else:
            alpha = spec.value(params, outcomes)
        for s in outcomes_for:
            walk(sim.measure(site, alpha, s), idx + 1, {**outcomes, site: s}, staged)

    remove(root, 0, {})
    return results


def branch_states(layout: ClusterLayout, inputs, phases=None, params=None, schedule="lazy",
                  mode="exhaustive"):
    """(outcomes, probability, normalized output StateVector) for every branch."""
    psi = reduce(np.kron, [np.asarray(v, dtype=complex) for v in inputs])
    out = []
    for br in branch_maps(layout, phases, params, mode, schedule):
        for b in range(br.maps.shape[0]):
            v = br.maps[b] @ psi
            p = float(np.vdot(v, v).real)
            state = None
            if p > 1e-14:
                t = (v / np.sqrt(p)).reshape([2] * layout.num_lines)
                state = StateVector.from_tensor(layout.outputs, t)
            out.append((br.outcomes, p, state))
    return out


# ---------------------------------------------------------------------------
# protocol definitions
# ---------------------------------------------------------------------------

@dataclass
class Protocol:
    """Everything needed to turn branch maps into decoded fidelities."""
    name: str
    layout: ClusterLayout
    target: np.ndarray                     # ideal logical gate on the user's input order
    decoder: Callable[[Mapping], PauliFrame]
    params: dict = field(default_factory=dict)
    angle_fn: Callable | None = None
    input_lines: tuple = (0,)              # user input j is encoded on line input_lines[j]
    output_lines: tuple = (0,)             # user output j is read from line output_lines[j]
    dressing: np.ndarray | None = None     # local unitary applied to outputs (line order) after decoding

    @property
    def num_inputs(self) -> int:
        return len(self.input_lines)

    def decoded_maps(self, phases=None, mode="exhaustive", schedule="lazy") -> list:
        """Branches with maps from user-ordered inputs to user-ordered decoded outputs."""
        k = self.layout.num_lines
        p_in = _line_permutation(self.input_lines, k)
        p_out = _line_permutation(self.output_lines, k).T
        out = []
        for br in branch_maps(self.layout, phases, self.params, mode, schedule, self.angle_fn):
            dec = self.decoder(br.outcomes).decoding().matrix()
            m = dec @ br.maps
            if self.dressing is not None:
                m = self.dressing @ m
            out.append(Branch(br.outcomes, p_out @ m @ p_in))
        return out


def _line_permutation(order: Sequence[int], k: int) -> np.ndarray:
    """Matrix taking user-ordered qubits to line-ordered qubits."""
    d = 2 ** k
    p = np.zeros((d, d))
    for idx in itertools.product((0, 1), repeat=k):
        lines = [0] * k
        for j, line in enumerate(order):
            lines[line] = idx[j]
        p[int("".join(map(str, lines)), 2), int("".join(map(str, idx)), 2)] = 1
    return p


def _program_decoder(layout, params=None):
    program = equivalent_program(layout)

    def decode(outcomes):
        return trace_program(layout, outcomes, params, program).frame
    return decode


def layout_protocol(name: str, params: Mapping | None = None) -> Protocol:
    """Generic protocol for a built-in layout: decode with the propagated frame and
    compare with the layout's own equivalent circuit."""
    layout = builtin_layout(name)
    params = dict(params or {})
    zero = {s: 0 for s, _ in layout.pattern}
    target = trace_program(layout, zero, params).unitary
    k = layout.num_lines
    return Protocol(name, layout, target, _program_decoder(layout, params), params,
                    input_lines=tuple(range(k)), output_lines=tuple(range(k)))


def transfer_protocol(n: int) -> Protocol:
    if n < 2:
        raise ValueError("transfer needs N >= 2")
    layout = linear(n)
    if n % 2:
        return Protocol(f"transfer({n})", layout, np.eye(2, dtype=complex),
                        lambda o: transfer_frame([o[i] for i in range(1, n)], n))
    return Protocol(f"transfer({n})", layout, H.copy(), _program_decoder(layout))


def _euler_unitary(euler) -> np.ndarray:
    zeta, nu, xi = euler
    return Gate2x2.rx(zeta).matrix @ Gate2x2.rz(nu).matrix @ Gate2x2.rx(xi).matrix


def rotation_protocol(variant: str, euler: Sequence[float]) -> Protocol:
    if variant not in ("rot5", "rot7"):
        raise ValueError(f"unknown rotation variant {variant!r}")
    layout = builtin_layout(variant)
    order = [s for s, _ in layout.pattern]
    zeta, nu, xi = euler
    params = {"alpha": -xi, "beta": -nu, "gamma": -zeta}

    def angle(site, outcomes):
        k = order.index(site)
        return rotation_angles(euler, [outcomes[s] for s in order[:k]])

    return Protocol(variant, layout, _euler_unitary(euler),
                    lambda o: rotation_frame([o[s] for s in order]), params, angle)


def _cnot_control_target_target() -> np.ndarray:
    return CNOT.copy()


def cnot_protocol(variant: str) -> Protocol:
    """CNOT protocols; user inputs are (control, target)."""
    if variant in ("squashed-i", "squashed-i-redundant"):
        layout = builtin_layout(variant)
        return Protocol(variant, layout, CNOT.copy(), squashed_i_frame,
                        input_lines=(0, 1), output_lines=(0, 1))
    if variant == "helix":
        layout = builtin_layout("helix")
        # outputs are relabelled: the control leaves on line 1, the target on line 0
        return Protocol(variant, layout, CNOT.copy(), _program_decoder(layout),
                        input_lines=(0, 1), output_lines=(1, 0))
    if variant == "cnot4":
        layout = builtin_layout("cnot4")
        # read out in the sigma_x eigenbases: line 1 (input 3) controls line 0 (input 1)
        return Protocol(variant, layout, CNOT.copy(), lambda o: cnot4_frame(o[1], o[3]),
                        input_lines=(1, 0), output_lines=(1, 0), dressing=np.kron(H, H))
    raise ValueError(f"unknown CNOT variant {variant!r}")


# ---------------------------------------------------------------------------
# results
# ---------------------------------------------------------------------------

@dataclass
class BranchRecord:
    outcomes: dict
    probability: float
    raw_output: StateVector | None
    decoded_output: StateVector | None
    fidelity: float


@dataclass
class ProtocolResult:
    protocol: str
    layout: str
    phases: dict
    mode: str
    branches: list
    target_state: np.ndarray

    @property
    def total_probability(self) -> float:
        return float(sum(b.probability for b in self.branches))

    @property
    def average_fidelity(self) -> float:
        """Born-weighted mean over the recorded branches (renormalized when postselected)."""
        w = np.array([b.probability for b in self.branches])
        f = np.array([b.fidelity for b in self.branches])
        return float(np.sum(w * f) / np.sum(w))

    @property
    def uniform_fidelity(self) -> float:
        return float(np.mean([b.fidelity for b in self.branches if b.decoded_output is not None]))


def run_protocol(protocol: Protocol, inputs: Sequence, phases=None, mode: str = "exhaustive",
                 schedule: str = "lazy") -> ProtocolResult:
    vecs = [v.amplitudes if isinstance(v, InputState) else np.asarray(v, dtype=complex) for v in inputs]
    if len(vecs) != protocol.num_inputs:
        raise ValueError(f"{protocol.name} takes {protocol.num_inputs} inputs")
    psi = reduce(np.kron, vecs)
    target = protocol.target @ psi
    k = protocol.layout.num_lines
    user_out = [protocol.layout.outputs[l] for l in protocol.output_lines]
    p_in = _line_permutation(protocol.input_lines, k)
    p_out = _line_permutation(protocol.output_lines, k).T
    raw = {tuple(sorted(b.outcomes.items())): b for b in
           branch_maps(protocol.layout, phases, protocol.params, mode, schedule, protocol.angle_fn)}
    records = []
    for br in protocol.decoded_maps(phases, mode, schedule):
        raw_map = raw[tuple(sorted(br.outcomes.items()))].maps[0]
        v_raw = p_out @ raw_map @ p_in @ psi
        v = br.maps[0] @ psi
        p = float(np.vdot(v, v).real)
        if p > 1e-14:
            dec = StateVector.from_tensor(user_out, (v / np.sqrt(p)).reshape([2] * k))
            rawst = StateVector.from_tensor(user_out, (v_raw / np.sqrt(p)).reshape([2] * k))
            fid = float(abs(np.vdot(target, v)) ** 2 / p)
        else:
            dec = rawst = None
            fid = 0.0
        records.append(BranchRecord(br.outcomes, p, rawst, dec, fid))
    resolved = phases.for_layout(protocol.layout) if isinstance(phases, PhaseAssignment) else dict(phases or {})
    return ProtocolResult(protocol.name, protocol.layout.name, resolved, mode, records, target)


def run_transfer(n: int, phases=None, input_state=InputState(1.0, 0.0), mode="exhaustive"):
    if mode == "exhaustive" and 2 ** (n - 1) > MAX_EXHAUSTIVE_BRANCHES:
        raise BudgetExceeded(f"N={n} needs {2 ** (n - 1)} branches")
    return run_protocol(transfer_protocol(n), [input_state], phases, mode)


def run_rotation(variant: str, euler, phases=None, input_state=InputState(1.0, 0.0), mode="exhaustive"):
    return run_protocol(rotation_protocol(variant, euler), [input_state], phases, mode)


def run_cnot(variant: str, phases=None, control=InputState(1.0, 0.0), target=InputState(1.0, 0.0),
             mode="exhaustive"):
    return run_protocol(cnot_protocol(variant), [control, target], phases, mode)


def bbb3_matrix(alpha: float, outcome: int) -> np.ndarray:
    """Effective two-line operator of BBB3 by tomography over computational inputs.

    Columns are the projected output for each basis input, scaled by sqrt 2 so
    the result matches the closed-form transfer matrix.
    """
    layout = builtin_layout("bbb3")
    cols = []
    for bits in itertools.product((0, 1), repeat=2):
        inputs = [np.eye(2)[b] for b in bits]
        psi = reduce(np.kron, inputs)
        (br,) = [b for b in branch_maps(layout, None, {"alpha": alpha}) if b.outcomes[2] == outcome]
        cols.append(br.maps[0] @ psi * np.sqrt(2))
    return np.array(cols).T


# ---------------------------------------------------------------------------
# hand-assembled equivalent circuits (line 0 is the most significant qubit)
# ---------------------------------------------------------------------------

CZ = np.diag([1, 1, 1, -1]).astype(complex)


def _step(alpha: float) -> np.ndarray:
    return H @ Gate2x2.rz(-alpha).matrix


def equivalent_circuit(name: str, params: Mapping | None = None) -> np.ndarray:
    """Ideal logical gate of a built-in layout when every outcome is zero.

    Assembled directly from H, Rz and CZ so that it can be checked against the
    propagated frames and the simulator.  For the CNOT layouts the result is
    expressed on (control, target) as seen by the user.
    """
    p = {"alpha": 0.0, "beta": 0.0, "gamma": 0.0, **(params or {})}
    if name.startswith("linear(") and name.endswith(")"):
        n = int(name[7:-1])
        return np.linalg.matrix_power(H, n - 1)
    if name == "bbb1":
        return _step(p["alpha"])
    if name == "bbb2":
        return CZ.copy()
    if name == "bbb3":
        if not np.isclose(abs(np.sin(p["alpha"])), 1):
            raise ValueError("bbb3 is only unitary for alpha = +-pi/2")
        # CNOT (1 x Rz) CNOT: a phase depending only on the parity of the two lines
        return CNOT @ np.kron(np.eye(2), Gate2x2.rz(p["alpha"]).matrix) @ CNOT
    if name == "box":
        return CZ @ np.kron(_step(p["alpha"]), _step(p["beta"])) @ CZ
    if name == "cnot4":
        return np.kron(np.eye(2), H) @ CZ @ np.kron(H, np.eye(2))
    if name == "bridge-ebb":
        parity = CNOT @ np.kron(np.eye(2), Gate2x2.rz(HALF_PI).matrix) @ CNOT
        return np.kron(_step(HALF_PI), _step(HALF_PI)) @ parity
    if name in ("rot5", "rot7"):
        # steps at 0, alpha, beta, gamma with alpha = -xi, beta = -nu, gamma = -zeta
        return _step(p["gamma"]) @ _step(p["beta"]) @ _step(p["alpha"]) @ _step(0.0)
    if name in ("squashed-i", "squashed-i-redundant", "helix"):
        return CNOT.copy()
    raise ValueError(f"no equivalent circuit for {name!r}")


def oracle_protocol(name: str, params: Mapping | None = None) -> Protocol:
    """Protocol for ``name`` whose target is the hand-assembled circuit."""
    if name in ("squashed-i", "squashed-i-redundant", "helix"):
        return cnot_protocol(name)
    if name.startswith("linear("):
        n = int(name[7:-1])
        proto = transfer_protocol(n)
        proto.target = equivalent_circuit(name)
        return proto
    proto = layout_protocol(name, params)
    proto.target = equivalent_circuit(name, params)
    return proto
