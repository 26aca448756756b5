"""Cluster layouts, their (noisy) states, concatenation and redundant-site removal."""
from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from typing import Mapping, Sequence

import numpy as np

from .statevector import (
    Gate2x2,
    StateError,
    StateVector,
    apply_1q,
    apply_cphase,
    product_state,
    project_xy,
)

HALF_PI = np.pi / 2


class LayoutError(ValueError):
    pass


def slot_name(a, b) -> str:
    a, b = sorted((a, b))
    return f"theta_{a}_{b}"


@dataclass(frozen=True)
class AngleSpec:
    """Measurement angle in the xy plane: (-1)^(xor of outcomes at ``deps``) * base.

    ``base`` is a number or the name of a protocol parameter.
    """
    base: float | str = 0.0
    deps: tuple = ()

    def value(self, params: Mapping[str, float] | None = None, outcomes: Mapping | None = None) -> float:
        if isinstance(self.base, str):
            if not params or self.base not in params:
                raise LayoutError(f"angle parameter {self.base!r} not supplied")
            base = float(params[self.base])
        else:
            base = float(self.base)
        parity = 0
        for d in self.deps:
            if outcomes is None or d not in outcomes:
                raise LayoutError(f"adaptive angle needs outcome of site {d!r} first")
            parity ^= outcomes[d]
        return -base if parity else base


@dataclass(frozen=True)
class Block:
    """One concatenation stage: the edges it entangles and the sites it measures."""
    edges: tuple
    measured: tuple


@dataclass(frozen=True)
class ClusterLayout:
    name: str
    sites: tuple
    edges: tuple
    inputs: tuple            # inputs[k] is the input site of logical line k
    outputs: tuple           # outputs[k] is the output site of logical line k
    pattern: tuple           # ((site, AngleSpec), ...) in mandatory order
    redundant: tuple = ()
    blocks: tuple | None = None

    def __post_init__(self):
        edges = tuple(sorted({tuple(sorted(e)) for e in self.edges}))
        object.__setattr__(self, "edges", edges)
        object.__setattr__(self, "pattern", tuple((s, a if isinstance(a, AngleSpec) else AngleSpec(a))
                                                  for s, a in self.pattern))
        self.validate()

    # -- structure -----------------------------------------------------------
    def validate(self):
        sites = set(self.sites)
        if len(sites) != len(self.sites):
            raise LayoutError(f"{self.name}: duplicate sites")
        for a, b in self.edges:
            if a == b:
                raise LayoutError(f"{self.name}: self-loop on {a}")
            if a not in sites or b not in sites:
                raise LayoutError(f"{self.name}: edge ({a},{b}) references unknown site")
        if len(self.inputs) != len(self.outputs) or not self.inputs:
            raise LayoutError(f"{self.name}: need one input and one output per logical line")
        if len(set(self.inputs)) != len(self.inputs) or len(set(self.outputs)) != len(self.outputs):
            raise LayoutError(f"{self.name}: lines share an input or output site")
        measured = [s for s, _ in self.pattern]
        if len(set(measured)) != len(measured):
            raise LayoutError(f"{self.name}: site measured twice")
        outs = set(self.outputs)
        if outs & set(measured) or outs & set(self.redundant):
            raise LayoutError(f"{self.name}: output site in measurement pattern")
        if set(measured) & set(self.redundant):
            raise LayoutError(f"{self.name}: redundant site in measurement pattern")
        expected = sites - outs - set(self.redundant)
        if set(measured) != expected:
            raise LayoutError(f"{self.name}: pattern must cover exactly {sorted(expected)}")
        for s, spec in self.pattern:
            for d in spec.deps:
                if d not in measured or measured.index(d) >= measured.index(s):
                    raise LayoutError(f"{self.name}: angle of {s} depends on later site {d}")

    @property
    def num_lines(self) -> int:
        return len(self.inputs)

    @property
    def body(self) -> tuple:
        io = set(self.inputs) | set(self.outputs)
        return tuple(s for s in self.sites if s not in io)

    def role(self, site) -> str:
        if site in self.inputs and site in self.outputs:
            return "input/output"
        if site in self.inputs:
            return "input"
        if site in self.outputs:
            return "output"
        if site in self.redundant:
            return "redundant"
        if site in self.sites:
            return "body"
        raise LayoutError(f"site {site!r} not in layout {self.name}")

    def neighbors(self, site) -> tuple:
        out = []
        for a, b in self.edges:
            if a == site:
                out.append(b)
            elif b == site:
                out.append(a)
        return tuple(out)

    def slots(self) -> tuple:
        return tuple(slot_name(a, b) for a, b in self.edges)

    def angle_of(self, site) -> AngleSpec:
        for s, spec in self.pattern:
            if s == site:
                return spec
        raise LayoutError(f"site {site!r} is not measured in {self.name}")

    def with_angles(self, angles: Mapping) -> "ClusterLayout":
        pattern = tuple((s, angles.get(s, spec)) for s, spec in self.pattern)
        return replace(self, pattern=pattern)

    def with_order(self, order: Sequence) -> "ClusterLayout":
        specs = dict(self.pattern)
        return replace(self, pattern=tuple((s, specs[s]) for s in order))

    def renamed(self, name: str) -> "ClusterLayout":
        return replace(self, name=name)

    # -- serialization ---------------------------------------------------------
    def to_dict(self) -> dict:
        d = {
            "name": self.name,
            "sites": list(self.sites),
            "edges": [list(e) for e in self.edges],
            "inputs": list(self.inputs),
            "outputs": list(self.outputs),
            "roles": {str(s): self.role(s) for s in self.sites},
            "pattern": [[s, spec.base, list(spec.deps)] for s, spec in self.pattern],
            "redundant": list(self.redundant),
        }
        if self.blocks is not None:
            d["blocks"] = [{"edges": [list(e) for e in b.edges], "measured": list(b.measured)}
                           for b in self.blocks]
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1)

    @classmethod
    def from_dict(cls, d: Mapping) -> "ClusterLayout":
        try:
            blocks = d.get("blocks")
            if blocks is not None:
                blocks = tuple(Block(tuple(tuple(e) for e in b["edges"]), tuple(b["measured"])) for b in blocks)
            layout = cls(
                name=d["name"],
                sites=tuple(d["sites"]),
                edges=tuple(tuple(e) for e in d["edges"]),
                inputs=tuple(d["inputs"]),
                outputs=tuple(d["outputs"]),
                pattern=tuple((s, AngleSpec(base, tuple(deps))) for s, base, deps in d["pattern"]),
                redundant=tuple(d.get("redundant", ())),
                blocks=blocks,
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise LayoutError(f"malformed layout document: {exc}") from exc
        roles = d.get("roles")
        if roles is not None and roles != {str(s): layout.role(s) for s in layout.sites}:
            raise LayoutError("roles field disagrees with inputs/outputs/redundant")
        return layout

    @classmethod
    def from_json(cls, text: str) -> "ClusterLayout":
        return cls.from_dict(json.loads(text))


# ---------------------------------------------------------------------------
# phases
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PhaseAssignment:
    """Unwanted phases on the entangling gates.

    mode is one of ``zero``, ``common`` (``theta``), ``explicit`` (``values``:
    slot -> theta; missing slots are an error) or ``gaussian`` (``sigma``, ``seed``:
    i.i.d. normal phases per edge).
    """
    mode: str = "zero"
    theta: float = 0.0
    values: Mapping = field(default_factory=dict)
    sigma: float = 0.0
    seed: int | None = None

    @classmethod
    def zero(cls):
        return cls("zero")

    @classmethod
    def common(cls, theta: float):
        return cls("common", theta=float(theta))

    @classmethod
    def explicit(cls, values: Mapping):
        return cls("explicit", values=dict(values))

    @classmethod
    def gaussian(cls, sigma: float, seed: int | None = None):
        if sigma < 0:
            raise LayoutError("sigma must be non-negative")
        return cls("gaussian", sigma=float(sigma), seed=seed)

    def resolve(self, slots: Sequence[str]) -> dict:
        if self.mode == "zero":
            return {s: 0.0 for s in slots}
        if self.mode == "common":
            return {s: self.theta for s in slots}
        if self.mode == "explicit":
            missing = [s for s in slots if s not in self.values]
            if missing:
                raise LayoutError(f"uncovered phase slots: {missing}")
            return {s: self.values[s] for s in slots}
        if self.mode == "gaussian":
            rng = np.random.default_rng(self.seed)
            draws = rng.normal(0.0, self.sigma, size=len(slots))
            return dict(zip(slots, map(float, draws)))
        raise LayoutError(f"unknown phase mode {self.mode!r}")

    def for_layout(self, layout: ClusterLayout) -> dict:
        return self.resolve(layout.slots())


# Named aliases used when discussing the squashed-I bridge.
SQUASHED_I_ALIASES = {"theta_R4": slot_name(4, 5), "theta_C4": slot_name(4, 8),
                      "theta_8": slot_name(8, 12), "theta_12": slot_name(12, 13)}


def _as_phase_map(layout: ClusterLayout, phases) -> dict:
    if phases is None:
        return PhaseAssignment.zero().for_layout(layout)
    if isinstance(phases, PhaseAssignment):
        return phases.for_layout(layout)
    phases = dict(phases)
    missing = [s for s in layout.slots() if s not in phases]
    if missing:
        raise LayoutError(f"uncovered phase slots: {missing}")
    return phases


# ---------------------------------------------------------------------------
# states
# ---------------------------------------------------------------------------

def entangle_all(layout: ClusterLayout, phases=None) -> StateVector:
    """S_D applied to |+> on every site of the layout."""
    return encode_inputs(layout, None, phases)


def encode_inputs(layout: ClusterLayout, inputs, phases=None) -> StateVector:
    """Input sites prepared in the given single-qubit states, the rest in |+>,
    then every edge gate applied with its phase."""
    theta = _as_phase_map(layout, phases)
    plus = np.array([1, 1]) / np.sqrt(2)
    amps = {s: plus for s in layout.sites}
    if inputs is not None:
        if len(inputs) != layout.num_lines:
            raise LayoutError(f"{layout.name} takes {layout.num_lines} inputs, got {len(inputs)}")
        for site, psi in zip(layout.inputs, inputs):
            psi = np.asarray(psi, dtype=complex)
            if psi.shape != (2,) or abs(np.linalg.norm(psi) - 1) > 1e-10:
                raise LayoutError(f"input for site {site} must be a normalized 2-vector")
            amps[site] = psi
    state = product_state(layout.sites, [amps[s] for s in layout.sites])
    for a, b in layout.edges:
        state = apply_cphase(state, a, b, theta[slot_name(a, b)])
    return state


# ---------------------------------------------------------------------------
# building blocks and concatenation
# ---------------------------------------------------------------------------

def bbb1(alpha: float | str = "alpha") -> ClusterLayout:
    return ClusterLayout("bbb1", (1, 2), ((1, 2),), (1,), (2,), ((1, AngleSpec(alpha)),),
                         blocks=(Block(((1, 2),), (1,)),))


def bbb2() -> ClusterLayout:
    return ClusterLayout("bbb2", (1, 2), ((1, 2),), (1, 2), (1, 2), (), blocks=(Block(((1, 2),), ()),))


def bbb3(alpha: float | str = "alpha") -> ClusterLayout:
    return ClusterLayout("bbb3", (1, 2, 3), ((1, 2), (2, 3)), (1, 3), (1, 3), ((2, AngleSpec(alpha)),),
                         blocks=(Block(((1, 2), (2, 3)), (2,)),))


def concat(blocks: Sequence, name: str = "concat") -> ClusterLayout:
    """Glue layouts in order.  Each entry is ``layout`` or ``(layout, site_map)``.

    A block input mapped onto the current output of an existing logical line
    continues that line; any other input opens a new line.  Every other block
    site must be new to the union.
    """
    sites: list = []
    edges: set = set()
    pattern: list = []
    stages: list = []
    line_inputs: list = []
    current: list = []          # current output site of each global line
    consumed: set = set()       # sites measured so far

    for entry in blocks:
        layout, site_map = (entry, None) if isinstance(entry, ClusterLayout) else entry
        site_map = dict(site_map or {})
        rel = lambda s: site_map.get(s, s)  # noqa: E731
        mapped = [rel(s) for s in layout.sites]
        if len(set(mapped)) != len(mapped):
            raise LayoutError(f"site map for {layout.name} is not injective")
        if layout.redundant:
            raise LayoutError("cannot concatenate layouts with redundant sites")
        glued = set()
        for k, s in enumerate(layout.inputs):
            g = rel(s)
            if g in consumed:
                raise LayoutError(f"role conflict: site {g} was already measured")
            if g in current:
                glued.add(g)
            elif g in sites:
                raise LayoutError(f"overlap violation: input {g} is an interior site of the union")
            else:
                line_inputs.append(g)
                current.append(g)
                glued.add(g)
        for s in layout.sites:
            g = rel(s)
            if g in sites and g not in glued:
                raise LayoutError(f"overlap violation: site {g} shared outside the gluing")
        for g in mapped:
            if g not in sites:
                sites.append(g)
        for k, s in enumerate(layout.inputs):
            g = rel(s)
            current[current.index(g)] = rel(layout.outputs[k])
        edges |= {tuple(sorted((rel(a), rel(b)))) for a, b in layout.edges}
        for s, spec in layout.pattern:
            pattern.append((rel(s), AngleSpec(spec.base, tuple(rel(d) for d in spec.deps))))
            consumed.add(rel(s))
        sub_blocks = layout.blocks if layout.blocks is not None else (Block(layout.edges, tuple(s for s, _ in layout.pattern)),)
        for b in sub_blocks:
            stages.append(Block(tuple(tuple(sorted((rel(x), rel(y)))) for x, y in b.edges),
                                tuple(rel(s) for s in b.measured)))

    return ClusterLayout(name, tuple(sites), tuple(edges), tuple(line_inputs), tuple(current),
                         tuple(pattern), blocks=tuple(stages))


def linear(n: int, angles: Sequence | None = None, name: str | None = None) -> ClusterLayout:
    if n < 1:
        raise LayoutError("linear cluster needs n >= 1")
    if n == 1:
        return ClusterLayout(name or "linear(1)", (1,), (), (1,), (1,), (), blocks=())
    angles = list(angles) if angles is not None else [0.0] * (n - 1)
    parts = [(bbb1(angles[i]), {1: i + 1, 2: i + 2}) for i in range(n - 1)]
    return concat(parts, name=name or f"linear({n})")


def _rot5() -> ClusterLayout:
    lay = linear(5, [0.0, "alpha", "beta", "gamma"], name="rot5")
    return lay.with_angles({2: AngleSpec("alpha", (1,)), 3: AngleSpec("beta", (2,)),
                            4: AngleSpec("gamma", (1, 3))})


def _rot7() -> ClusterLayout:
    chain = tuple((i, i + 1) for i in range(1, 7))
    pattern = ((1, AngleSpec(0.0)), (2, AngleSpec("alpha", (1,))), (4, AngleSpec("beta", (2,))),
               (5, AngleSpec("gamma", (1, 4))))
    return ClusterLayout("rot7", tuple(range(1, 8)), chain, (1,), (7,), pattern, redundant=(3, 6))


def _box() -> ClusterLayout:
    parts = [(bbb2(), {1: 1, 2: 2}),
             (bbb1("alpha"), {1: 1, 2: 3}),
             (bbb1("beta"), {1: 2, 2: 4}),
             (bbb2(), {1: 3, 2: 4})]
    return concat(parts, name="box")


def _cnot4() -> ClusterLayout:
    parts = [(bbb1(0.0), {1: 1, 2: 2}),
             (bbb2(), {1: 2, 2: 3}),
             (bbb1(0.0), {1: 3, 2: 4})]
    return concat(parts, name="cnot4")


def _bridge_ebb() -> ClusterLayout:
    parts = [(bbb3(HALF_PI), {1: 1, 2: 2, 3: 3}),
             (bbb1(HALF_PI), {1: 1, 2: 4}),
             (bbb1(HALF_PI), {1: 3, 2: 5})]
    return concat(parts, name="bridge-ebb")


_X, _Y = 0.0, HALF_PI


def _squashed_i() -> ClusterLayout:
    step = lambda a, b, ang: (bbb1(ang), {1: a, 2: b})  # noqa: E731
    parts = [step(1, 2, _X), step(2, 3, _Y), step(3, 4, _Y),
             step(9, 10, _X), step(10, 11, _X), step(11, 12, _X),
             (bbb3(_Y), {1: 4, 2: 8, 3: 12}),
             step(4, 5, _Y), step(5, 6, _Y), step(6, 7, _Y),
             step(12, 13, _Y), step(13, 14, _X), step(14, 15, _X)]
    return concat(parts, name="squashed-i")


def _squashed_i_redundant() -> ClusterLayout:
    base = _squashed_i()
    edges = tuple(e for e in base.edges if e != (8, 12)) + ((8, 16), (12, 16))
    return ClusterLayout("squashed-i-redundant", base.sites + (16,), edges, base.inputs, base.outputs,
                         base.pattern, redundant=(16,))


def _helix() -> ClusterLayout:
    step = lambda a, b: (bbb1(0.0), {1: a, 2: b})  # noqa: E731
    box = _box().with_angles({1: AngleSpec(0.0), 2: AngleSpec(0.0)})
    parts = [step(5, 1), step(7, 10), step(10, 2), box, step(3, 6), step(6, 9), step(4, 8)]
    return concat(parts, name="helix")


_BUILTINS = {
    "bbb1": bbb1,
    "bbb2": bbb2,
    "bbb3": bbb3,
    "box": _box,
    "cnot4": _cnot4,
    "rot5": _rot5,
    "rot7": _rot7,
    "bridge-ebb": _bridge_ebb,
    "squashed-i": _squashed_i,
    "squashed-i-redundant": _squashed_i_redundant,
    "helix": _helix,
}

BUILTIN_NAMES = tuple(_BUILTINS) + ("linear(N)",)


def builtin_layout(name: str) -> ClusterLayout:
    if name.startswith("linear(") and name.endswith(")"):
        return linear(int(name[7:-1]))
    try:
        return _BUILTINS[name]()
    except KeyError:
        raise LayoutError(f"unknown layout {name!r}; choose from {BUILTIN_NAMES}") from None


# ---------------------------------------------------------------------------
# redundant sites
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LocalCorrectionRecord:
    operations: tuple = ()   # ((site, gate name), ...)

    def apply(self, state: StateVector) -> StateVector:
        for site, name in self.operations:
            state = apply_1q(state, site, Gate2x2.from_name(name))
        return state

    def __add__(self, other: "LocalCorrectionRecord") -> "LocalCorrectionRecord":
        return LocalCorrectionRecord(self.operations + other.operations)


def remove_redundant(state: StateVector, layout: ClusterLayout, site, outcome: int):
    """Remove a degree-two redundant site so its neighbours become directly bonded.

    The site is measured in the sigma_y eigenbasis (xy angle pi/2).  At zero
    phase the projected state equals the reduced cluster up to Rz(-+pi/2) on
    both neighbours; those rotations are returned, not applied.
    """
    if site not in layout.redundant:
        raise LayoutError(f"site {site!r} is not redundant in {layout.name}")
    nbs = [n for n in layout.neighbors(site) if n in state.labels]
    if len(nbs) != 2:
        raise LayoutError(f"redundant site {site!r} must have exactly two live neighbours")
    prob, reduced = project_xy(state, site, HALF_PI, outcome)
    if reduced is None:
        raise StateError(f"zero-probability branch removing site {site!r}")
    angle = -HALF_PI if outcome == 0 else HALF_PI
    record = LocalCorrectionRecord(tuple((n, Gate2x2.rz(angle).name) for n in nbs))
    return prob, reduced, record


def reduced_layout(layout: ClusterLayout, site) -> ClusterLayout:
    """Layout after ``remove_redundant``: site dropped, its two neighbours bonded."""
    a, b = layout.neighbors(site)
    edges = tuple(e for e in layout.edges if site not in e) + ((a, b),)
    return ClusterLayout(layout.name, tuple(s for s in layout.sites if s != site), edges, layout.inputs,
                         layout.outputs, layout.pattern,
                         redundant=tuple(r for r in layout.redundant if r != site))


def strip_redundant(layout: ClusterLayout) -> ClusterLayout:
    for r in layout.redundant:
        layout = reduced_layout(layout, r)
    return layout
