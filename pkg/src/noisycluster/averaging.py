"""Outcome, input-state and phase averages of protocol fidelities.

Input averages use fixed quadrature rules.  Because a branch fidelity is a
quartic form in the input amplitudes, an input rule collapses to a moment
tensor ``Q[i,j,k,l] = sum_p w_p conj(psi_i) psi_j psi_k conj(psi_l)`` and
Born-weighted outcome averages reduce to one contraction per branch.
"""
from __future__ import annotations

import itertools
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from functools import reduce
from typing import Callable, Mapping, Sequence

import numpy as np
from scipy.optimize import brentq

from .protocols import (
    BudgetExceeded,
    InputState,
    Protocol,
    cnot_protocol,
    rotation_protocol,
    transfer_protocol,
)

CLASSICAL_THRESHOLD = 2.0 / 3.0
DEFAULT_GH_ORDER = 20
DEFAULT_MC_SAMPLES = 20000
MAX_GH_DIMENSIONS = 4
DEFAULT_BUDGET = 10 ** 10
CHUNK = 4096


# ---------------------------------------------------------------------------
# input measures
# ---------------------------------------------------------------------------

def bloch_nodes(n_polar: int = 16, n_azimuth: int = 16):
    """Uniform sphere rule: Gauss-Legendre in cos(polar) times trapezoid in azimuth."""
    if n_polar < 1 or n_azimuth < 1:
        raise ValueError("quadrature orders must be positive")
    x, w = np.polynomial.legendre.leggauss(n_polar)
    phis = 2 * np.pi * np.arange(n_azimuth) / n_azimuth
    states, weights = [], []
    for xi, wi in zip(x, w):
        for phi in phis:
            states.append(InputState.bloch(float(np.arccos(xi)), float(phi)))
            weights.append(wi / (2 * n_azimuth))
    return states, np.array(weights)


def real_a_nodes(order: int = 24):
    """Real inputs a|0> + sqrt(1-a^2)|1> with a uniform on [0, 1]."""
    if order < 1:
        raise ValueError("quadrature order must be positive")
    x, w = np.polynomial.legendre.leggauss(order)
    return [InputState.real(float((xi + 1) / 2)) for xi in x], w / 2


def input_nodes(measure: str, order: int | None = None):
    if measure == "bloch":
        n = order or 16
        return bloch_nodes(n, n)
    if measure == "real-a":
        return real_a_nodes(order or 24)
    raise ValueError(f"unknown input measure {measure!r}")


def bloch_average(evaluator: Callable[[InputState], float], n_polar: int = 16, n_azimuth: int = 16) -> float:
    """(1/4pi) * integral of ``evaluator`` over the Bloch sphere."""
    states, weights = bloch_nodes(n_polar, n_azimuth)
    return float(sum(w * evaluator(s) for s, w in zip(states, weights)))


def product_nodes(single, num_qubits: int):
    """Tensor-product rule: (amplitude columns (d, P), weights (P,))."""
    states, weights = single
    cols, ws = [], []
    for combo in itertools.product(range(len(states)), repeat=num_qubits):
        cols.append(reduce(np.kron, [states[i].amplitudes for i in combo]))
        ws.append(np.prod([weights[i] for i in combo]))
    return np.array(cols).T, np.array(ws)


def moment_tensor(psi: np.ndarray, w: np.ndarray) -> np.ndarray:
    return np.einsum("p,ip,jp,kp,lp->ijkl", w, psi.conj(), psi, psi, psi.conj())


# ---------------------------------------------------------------------------
# protocol evaluators
# ---------------------------------------------------------------------------

@dataclass
class InputAverage:
    """Fixed input rule for one protocol; ``fixed`` pins explicit inputs instead."""
    measure: str = "bloch"
    order: int | None = None
    fixed: tuple | None = None

    def nodes(self, num_inputs: int):
        if self.fixed is not None:
            if len(self.fixed) != num_inputs:
                raise ValueError(f"need {num_inputs} fixed inputs, got {len(self.fixed)}")
            psi = reduce(np.kron, [s.amplitudes for s in self.fixed])
            return psi[:, None], np.ones(1)
        return product_nodes(input_nodes(self.measure, self.order), num_inputs)


def fidelity_batch(protocol: Protocol, phases: Mapping, mode: str, inputs: InputAverage,
                   _cache: dict | None = None) -> np.ndarray:
    """Input- and outcome-averaged fidelity for each phase sample of the batch.

    Exhaustive mode weights branches by their Born probability.  Postselected
    mode uses the all-zero branch and its conditional (renormalized) fidelity.
    """
    key = id(protocol), mode, repr(inputs)
    if _cache is not None and key in _cache:
        psi, w, q = _cache[key]
    else:
        psi, w = inputs.nodes(protocol.num_inputs)
        q = moment_tensor(psi, w) if mode == "exhaustive" else None
        if _cache is not None:
            _cache[key] = psi, w, q
    udag = protocol.target.conj().T
    total = 0.0
    for br in protocol.decoded_maps(phases, mode):
        a = udag @ br.maps
        if mode == "exhaustive":
            total = total + np.einsum("bij,bkl,ijkl->b", a, a.conj(), q).real
        else:
            v = a @ psi
            num = np.abs(np.einsum("ip,bip->bp", psi.conj(), v)) ** 2
            den = np.sum(np.abs(v) ** 2, axis=1)
            with np.errstate(divide="ignore", invalid="ignore"):
                ratio = np.where(den > 1e-300, num / den, 0.0)
            total = total + ratio @ w
    return np.clip(np.asarray(total, dtype=float), 0.0, 1.0)


def branch_count(protocol: Protocol, mode: str) -> int:
    if mode == "postselect-zeros":
        return 1
    return 2 ** (len(protocol.layout.pattern) + len(protocol.layout.redundant))


# ---------------------------------------------------------------------------
# phase averages
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GaussianScheme:
    kind: str = "auto"              # auto | gauss-hermite | monte-carlo
    order: int = DEFAULT_GH_ORDER
    samples: int = DEFAULT_MC_SAMPLES
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ("auto", "gauss-hermite", "monte-carlo"):
            raise ValueError(f"unknown scheme {self.kind!r}")
        if self.order < 1 or self.samples < 2:
            raise ValueError("scheme sizes must be positive")

    def resolve(self, dims: int) -> str:
        if self.kind != "auto":
            return self.kind
        return "gauss-hermite" if dims <= MAX_GH_DIMENSIONS else "monte-carlo"


@dataclass
class GaussianEstimate:
    value: float
    stderr: float
    scheme: str
    evaluations: int
    samples: np.ndarray | None = field(default=None, repr=False)


def gaussian_points(slots: Sequence[str], sigma: float, scheme: GaussianScheme, coupling: str):
    """Phase samples and weights for a mean-zero Gaussian of width ``sigma``."""
    if sigma < 0:
        raise ValueError(f"sigma must be non-negative, got {sigma}")
    if coupling not in ("common-theta", "iid-per-edge"):
        raise ValueError(f"unknown coupling {coupling!r}")
    slots = list(slots)
    dims = 1 if coupling == "common-theta" else len(slots)
    kind = scheme.resolve(dims)
    if sigma == 0:
        return {s: np.zeros(1) for s in slots}, np.ones(1), "exact"
    if kind == "gauss-hermite":
        x, w = np.polynomial.hermite.hermgauss(scheme.order)
        nodes = np.sqrt(2) * sigma * x
        weights = w / np.sqrt(np.pi)
        grid = np.array(list(itertools.product(range(scheme.order), repeat=dims))).T
        draws = nodes[grid]
        wts = np.prod(weights[grid], axis=0)
    else:
        rng = np.random.default_rng(scheme.seed)
        draws = rng.normal(0.0, sigma, size=(dims, scheme.samples))
        wts = np.full(scheme.samples, 1.0 / scheme.samples)
    if coupling == "common-theta":
        phases = {s: draws[0] for s in slots}
    else:
        phases = {s: draws[i] for i, s in enumerate(slots)}
    return phases, wts, kind


def gaussian_average(evaluator: Callable[[Mapping], np.ndarray], slots: Sequence[str], sigma: float,
                     scheme: GaussianScheme = GaussianScheme(), coupling: str = "iid-per-edge") -> GaussianEstimate:
    """Expectation of ``evaluator`` over Gaussian phases centred on zero.

    ``evaluator`` maps slot -> (B,) phase arrays to (B,) values.  Monte Carlo
    estimates carry a standard error; quadrature reports zero.
    """
    phases, wts, kind = gaussian_points(slots, sigma, scheme, coupling)
    n = wts.size
    values = np.empty(n)
    for start in range(0, n, CHUNK):
        sl = slice(start, start + CHUNK)
        values[sl] = np.broadcast_to(evaluator({s: v[sl] for s, v in phases.items()}), values[sl].shape)
    mean = float(values @ wts)
    stderr = float(values.std(ddof=1) / np.sqrt(n)) if kind == "monte-carlo" else 0.0
    return GaussianEstimate(mean, stderr, kind, n, values)


# ---------------------------------------------------------------------------
# sweeps and reports
# ---------------------------------------------------------------------------

@dataclass
class FidelityReport:
    name: str
    axis_name: str
    axis: tuple
    columns: dict                         # column label -> tuple of fidelities
    stderr: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)
    threshold: float = CLASSICAL_THRESHOLD

    def __post_init__(self):
        ax = np.asarray(self.axis, dtype=float)
        if ax.size > 1 and np.any(np.diff(ax) <= 0):
            raise ValueError("grid axis must be strictly increasing")
        for label, vals in self.columns.items():
            if len(vals) != len(self.axis):
                raise ValueError(f"column {label!r} has {len(vals)} values for {len(self.axis)} grid points")
            arr = np.asarray(vals, dtype=float)
            if np.any(arr < -1e-12) or np.any(arr > 1 + 1e-12):
                raise ValueError(f"column {label!r} leaves [0, 1]")

    def column(self, label) -> np.ndarray:
        return np.asarray(self.columns[label], dtype=float)

    def difference(self, a, b) -> np.ndarray:
        """Pointwise a - b; uses the paired series when both were sampled together."""
        return self.column(a) - self.column(b)


@dataclass
class SweepSpec:
    """One curve per entry of ``variants`` over a theta or sigma grid."""
    protocol: str                           # transfer | rotation | cnot
    variants: tuple                         # N values, rot5/rot7 or CNOT variant names
    axis_name: str                          # theta | sigma
    grid: tuple
    mode: str = "exhaustive"
    inputs: InputAverage = field(default_factory=InputAverage)
    coupling: str = "common-theta"          # used for sigma sweeps
    scheme: GaussianScheme = field(default_factory=GaussianScheme)
    euler: tuple = (0.0, 0.0, 0.0)
    budget: int = DEFAULT_BUDGET
    name: str = "sweep"
    paired: tuple = ()                      # (label_a, label_b) differences to report with paired stderr

    def __post_init__(self):
        if self.axis_name not in ("theta", "sigma"):
            raise ValueError(f"axis must be theta or sigma, got {self.axis_name!r}")
        if self.mode not in ("exhaustive", "postselect-zeros"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.axis_name == "sigma" and any(g < 0 for g in self.grid):
            raise ValueError("sigma grid must be non-negative")


def make_protocol(spec: SweepSpec, variant) -> Protocol:
    if spec.protocol == "transfer":
        return transfer_protocol(int(variant))
    if spec.protocol == "rotation":
        return rotation_protocol(str(variant), spec.euler)
    if spec.protocol == "cnot":
        return cnot_protocol(str(variant))
    raise ValueError(f"unknown protocol {spec.protocol!r}")


def column_label(spec: SweepSpec, variant) -> str:
    return f"N={variant}" if spec.protocol == "transfer" else str(variant)


def _threads() -> int:
    try:
        return max(1, int(os.environ.get("MBQC_THREADS", "1")))
    except ValueError:
        return 1


def estimate_cost(spec: SweepSpec) -> int:
    total = 0
    for variant in spec.variants:
        p = make_protocol(spec, variant)
        # exhaustive mode contracts a moment tensor, so input nodes only cost when postselecting
        n_in = 1 if spec.mode == "exhaustive" else len(spec.inputs.nodes(p.num_inputs)[1])
        per_point = branch_count(p, spec.mode) * n_in
        if spec.axis_name == "sigma":
            dims = 1 if spec.coupling == "common-theta" else len(p.layout.slots())
            kind = spec.scheme.resolve(dims)
            per_point *= spec.scheme.order ** dims if kind == "gauss-hermite" else spec.scheme.samples
        total += per_point * len(spec.grid)
    return total


def sweep(spec: SweepSpec) -> FidelityReport:
    """Evaluate every curve of ``spec``; deterministic for a given seed."""
    cost = estimate_cost(spec)
    if cost > spec.budget:
        raise BudgetExceeded(f"sweep needs ~{cost:.3g} evaluations, budget is {spec.budget:.3g}")
    protocols = {column_label(spec, v): make_protocol(spec, v) for v in spec.variants}
    cache: dict = {}

    def point(index: int):
        g = float(spec.grid[index])
        out, err, samples = {}, {}, {}
        if spec.axis_name == "theta":
            for label, p in protocols.items():
                phases = {s: np.array([g]) for s in p.layout.slots()}
                out[label] = float(fidelity_batch(p, phases, spec.mode, spec.inputs, cache)[0])
                err[label] = 0.0
            return out, err, samples
        # one seed per grid point, shared by every curve so curves are paired
        seed = int(np.random.SeedSequence([spec.scheme.seed, index]).generate_state(1)[0])
        scheme = GaussianScheme(spec.scheme.kind, spec.scheme.order, spec.scheme.samples, seed)
        all_slots = sorted(set().union(*[p.layout.slots() for p in protocols.values()]))
        for label, p in protocols.items():
            slots = p.layout.slots()
            dims = 1 if spec.coupling == "common-theta" else len(slots)
            if scheme.resolve(dims) == "monte-carlo" and spec.coupling == "iid-per-edge":
                # draw over the union of slots so shared edges get the same samples across curves
                est = gaussian_average(lambda ph, p=p: fidelity_batch(p, ph, spec.mode, spec.inputs, cache),
                                       all_slots, g, scheme, spec.coupling)
            else:
                est = gaussian_average(lambda ph, p=p: fidelity_batch(p, ph, spec.mode, spec.inputs, cache),
                                       slots, g, scheme, spec.coupling)
            out[label], err[label], samples[label] = est.value, est.stderr, est
        return out, err, samples

    workers = _threads()
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            results = list(pool.map(point, range(len(spec.grid))))
    else:
        results = [point(i) for i in range(len(spec.grid))]

    labels = list(protocols)
    columns = {l: tuple(r[0][l] for r in results) for l in labels}
    stderr = {l: tuple(r[1][l] for r in results) for l in labels}
    for a, b in spec.paired:
        diffs, errs = [], []
        for r in results:
            ea, eb = r[2].get(a), r[2].get(b)
            if ea is not None and ea.samples is not None and ea.samples.size == eb.samples.size and ea.scheme == "monte-carlo":
                d = ea.samples - eb.samples
                diffs.append(float(d.mean()))
                errs.append(float(d.std(ddof=1) / np.sqrt(d.size)))
            else:
                diffs.append(r[0][a] - r[0][b])
                errs.append(float(np.hypot(r[1][a], r[1][b])))
        stderr[f"{a}-{b}"] = tuple(errs)
        stderr[f"{a}-{b}:value"] = tuple(diffs)
    meta = {
        "protocol": spec.protocol,
        "mode": spec.mode,
        "inputs": asdict(spec.inputs) if spec.inputs.fixed is None else {"fixed": [asdict(s) for s in spec.inputs.fixed]},
        "coupling": spec.coupling if spec.axis_name == "sigma" else "common-theta",
        "scheme": asdict(spec.scheme),
        "euler": list(spec.euler),
        "evaluations": cost,
    }
    return FidelityReport(spec.name, spec.axis_name, tuple(float(g) for g in spec.grid), columns, stderr, meta)


def threshold_crossing(f: Callable[[float], float], lo: float, hi: float, level: float = CLASSICAL_THRESHOLD) -> float:
    """Root of f(x) = level in [lo, hi]."""
    return float(brentq(lambda x: f(x) - level, lo, hi, xtol=1e-8))


def common_theta_curve(protocol: Protocol, mode: str = "exhaustive", inputs: InputAverage | None = None):
    """theta -> averaged fidelity at equal phase on every edge."""
    inputs = inputs or InputAverage()
    cache: dict = {}

    def f(theta: float) -> float:
        phases = {s: np.array([theta]) for s in protocol.layout.slots()}
        return float(fidelity_batch(protocol, phases, mode, inputs, cache)[0])
    return f


# ---------------------------------------------------------------------------
# figure presets
# ---------------------------------------------------------------------------

EULER_SETS = (
    (np.pi / 4, 0.0, 0.0),
    (np.pi / 2, np.pi / 2, 0.0),
    (0.0, np.pi / 4, np.pi / 4),
    (0.0, np.pi, 0.0),
)
FIGURES = ("fig6a", "fig6b", "fig8a", "fig8b", "fig9a", "fig9b")
CNOT_VARIANTS = ("cnot4", "helix", "squashed-i", "squashed-i-redundant")


def _grid(lo, hi, step):
    n = int(round((hi - lo) / step))
    return tuple(round(lo + i * step, 10) for i in range(n + 1))


def figure_specs(name: str, seed: int = 0, samples: int = DEFAULT_MC_SAMPLES) -> list:
    """Sweeps behind a named figure; most figures need one spec, fig6 needs one per Euler set."""
    sigmas = _grid(0.0, 1.0, 0.1)
    scheme = GaussianScheme("auto", DEFAULT_GH_ORDER, samples, seed)
    if name == "fig9a":
        return [SweepSpec("transfer", (3, 5, 7, 9), "theta", _grid(0.0, 1.2, 0.05), name=name)]
    if name == "fig9b":
        return [SweepSpec("transfer", (3, 5, 7, 9), "sigma", sigmas, coupling="iid-per-edge",
                          scheme=scheme, name=name)]
    if name in ("fig6a", "fig6b"):
        variants = ("rot5",) if name == "fig6a" else ("rot5", "rot7")
        paired = () if name == "fig6a" else (("rot5", "rot7"),)
        # rot5 has four edges, rot7 six: force one scheme so the difference is paired
        kind = "auto" if name == "fig6a" else "monte-carlo"
        return [SweepSpec("rotation", variants, "sigma", sigmas, mode="postselect-zeros",
                          inputs=InputAverage("real-a", 24), coupling="iid-per-edge",
                          scheme=GaussianScheme(kind, DEFAULT_GH_ORDER, samples, seed), euler=tuple(e),
                          name=f"{name}[{i}]", paired=paired)
                for i, e in enumerate(EULER_SETS)]
    if name == "fig8a":
        # the a=c surface is produced by one spec per a value
        return [SweepSpec("cnot", ("squashed-i",), "theta", _grid(0.0, 1.0, 0.05), mode="postselect-zeros",
                          inputs=InputAverage(fixed=(InputState.real(a), InputState.real(a))), name=f"fig8a[a={a}]")
                for a in _grid(0.05, 0.95, 0.05)]
    if name == "fig8b":
        return [SweepSpec("cnot", CNOT_VARIANTS, "sigma", _grid(0.0, 1.0, 0.2), mode="postselect-zeros",
                          inputs=InputAverage("real-a", 8), coupling="iid-per-edge",
                          scheme=GaussianScheme("monte-carlo", DEFAULT_GH_ORDER, samples, seed), name=name,
                          paired=tuple(zip(CNOT_VARIANTS, CNOT_VARIANTS[1:])))]
    raise ValueError(f"unknown figure {name!r}; choose from {FIGURES}")
