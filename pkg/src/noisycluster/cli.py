"""Command-line runner for noisy cluster-state experiments.

Every command writes one CSV table.  Settings come from an optional JSON
config file (``--config``) with command-line flags taking precedence.

Exit codes: 0 success, 1 failed verification, 2 configuration error,
3 evaluation budget exceeded.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
import tempfile
from dataclasses import asdict, dataclass, fields
from typing import Sequence

import numpy as np

from . import averaging as av
from .cluster import PhaseAssignment, builtin_layout, entangle_all
from .protocols import (
    BudgetExceeded,
    InputState,
    bbb3_matrix,
    branch_maps,
    cnot_protocol,
    oracle_protocol,
    rotation_protocol,
    run_protocol,
    transfer_protocol,
)
from .statevector import correlation_eigencheck

COMMANDS = ("transfer", "rotate", "cnot", "bbb3", "verify", "sweep", "figure")
SUITES = ("stabilizer", "staging", "oracle", "all")
CNOT_VARIANTS = ("squashed-i", "squashed-i-redundant", "helix", "cnot4")


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    command: str = "transfer"
    variant: str | None = None
    n: int = 3
    theta: float = 0.0
    sigma: float | None = None
    coupling: str = "iid-per-edge"
    scheme: str = "auto"
    order: int = av.DEFAULT_GH_ORDER
    samples: int = av.DEFAULT_MC_SAMPLES
    average: str = "none"               # none | bloch | real-a
    a: float = 1.0
    c: float = 1.0
    euler: tuple = (0.0, 0.0, 0.0)
    alpha: float = float(np.pi / 2)
    outcome: int = 0
    mode: str = "exhaustive"
    protocol: str = "transfer"          # sweep only
    variants: tuple = ()                # sweep only
    axis: str = "theta"                 # sweep only
    grid: tuple = (0.0, 1.0, 0.1)       # sweep only: start, stop, step (inclusive)
    suite: str = "all"
    figure: str | None = None
    seed: int = 0
    budget: int = av.DEFAULT_BUDGET
    output: str | None = None

    def validate(self) -> "ExperimentConfig":
        def bad(name, why):
            raise ConfigError(f"field {name!r}: {why}")
        if self.command not in COMMANDS:
            bad("command", f"must be one of {COMMANDS}")
        if self.mode not in ("exhaustive", "postselect-zeros"):
            bad("mode", "must be exhaustive or postselect-zeros")
        if self.average not in ("none", "bloch", "real-a"):
            bad("average", "must be none, bloch or real-a")
        if self.coupling not in ("common-theta", "iid-per-edge"):
            bad("coupling", "must be common-theta or iid-per-edge")
        if self.scheme not in ("auto", "gauss-hermite", "monte-carlo"):
            bad("scheme", "must be auto, gauss-hermite or monte-carlo")
        if self.sigma is not None and self.sigma < 0:
            bad("sigma", "must be non-negative")
        if self.order < 1 or self.samples < 2:
            bad("order" if self.order < 1 else "samples", "too small")
        for name in ("a", "c"):
            if not 0 <= getattr(self, name) <= 1:
                bad(name, "must lie in [0, 1]")
        if len(self.euler) != 3:
            bad("euler", "needs three angles (zeta, nu, xi)")
        if self.outcome not in (0, 1):
            bad("outcome", "must be 0 or 1")
        if self.n < 2:
            bad("n", "must be at least 2")
        if self.command == "cnot" and self.variant not in CNOT_VARIANTS:
            bad("variant", f"must be one of {CNOT_VARIANTS}")
        if self.command == "rotate" and self.variant not in ("rot5", "rot7"):
            bad("variant", "must be rot5 or rot7")
        if self.command == "verify" and self.suite not in SUITES:
            bad("suite", f"must be one of {SUITES}")
        if self.command == "figure" and self.figure not in av.FIGURES:
            bad("figure", f"must be one of {av.FIGURES}")
        if self.command == "sweep":
            if self.axis not in ("theta", "sigma"):
                bad("axis", "must be theta or sigma")
            if self.protocol not in ("transfer", "rotation", "cnot"):
                bad("protocol", "must be transfer, rotation or cnot")
            if len(self.grid) != 3 or self.grid[2] <= 0 or self.grid[1] < self.grid[0]:
                bad("grid", "needs start <= stop and a positive step")
            if not self.variants:
                bad("variants", "sweep needs at least one variant")
        if self.budget < 1:
            bad("budget", "must be positive")
        return self

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True, indent=2)

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"field {unknown[0]!r}: unknown setting")
        data = dict(data)
        for key in ("euler", "variants", "grid"):
            if key in data and data[key] is not None:
                data[key] = tuple(data[key])
        return cls(**data)

    @classmethod
    def from_json(cls, text: str) -> "ExperimentConfig":
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"line {exc.lineno}: {exc.msg}") from None
        if not isinstance(data, dict):
            raise ConfigError("line 1: config must be a JSON object")
        return cls.from_dict(data)


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------

def _floats(text: str) -> tuple:
    try:
        return tuple(float(x) for x in text.split(",") if x.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _words(text: str) -> tuple:
    return tuple(x.strip() for x in text.split(",") if x.strip())


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="noisycluster", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        # defaults are None so that only explicit flags override the config file
        p.add_argument("--config", help="JSON file with ExperimentConfig fields")
        p.add_argument("--output", "-o", help="CSV path (stdout if omitted)")
        p.add_argument("--seed", type=int)
        p.add_argument("--budget", type=int)

    def noise(p):
        p.add_argument("--theta", type=float, help="common unwanted phase on every edge")
        p.add_argument("--sigma", type=float, help="Gaussian width; averages over phases when given")
        p.add_argument("--coupling", choices=("common-theta", "iid-per-edge"))
        p.add_argument("--scheme", choices=("auto", "gauss-hermite", "monte-carlo"))
        p.add_argument("--order", type=int)
        p.add_argument("--samples", type=int)
        p.add_argument("--average", choices=("none", "bloch", "real-a"), help="average over inputs")
        p.add_argument("--mode", choices=("exhaustive", "postselect-zeros"))

    p = sub.add_parser("transfer", help="information flow along a linear cluster")
    common(p)
    noise(p)
    p.add_argument("--n", type=int)
    p.add_argument("--a", type=float, help="input a|0> + sqrt(1-a^2)|1>")

    p = sub.add_parser("rotate", help="Euler rotation on 5 or 7 qubits")
    common(p)
    noise(p)
    p.add_argument("--variant", choices=("rot5", "rot7"))
    p.add_argument("--euler", type=_floats, help="zeta,nu,xi")
    p.add_argument("--a", type=float)

    p = sub.add_parser("cnot", help="CNOT layouts")
    common(p)
    noise(p)
    p.add_argument("--variant", choices=CNOT_VARIANTS)
    p.add_argument("--a", type=float, help="control a|0> + sqrt(1-a^2)|1>")
    p.add_argument("--c", type=float, help="target c|0> + sqrt(1-c^2)|1>")

    p = sub.add_parser("bbb3", help="effective two-line matrix of the bridge block")
    common(p)
    p.add_argument("--alpha", type=float)
    p.add_argument("--outcome", type=int, choices=(0, 1))

    p = sub.add_parser("verify", help="run invariant suites")
    common(p)
    p.add_argument("--suite", choices=SUITES)

    p = sub.add_parser("sweep", help="fidelity curves over a theta or sigma grid")
    common(p)
    noise(p)
    p.add_argument("--protocol", choices=("transfer", "rotation", "cnot"))
    p.add_argument("--variants", type=_words, help="comma list: N values, rot5/rot7 or CNOT variants")
    p.add_argument("--axis", choices=("theta", "sigma"))
    p.add_argument("--grid", type=_floats, help="start,stop,step")
    p.add_argument("--euler", type=_floats)

    p = sub.add_parser("figure", help="data behind a named figure")
    common(p)
    p.add_argument("figure", choices=av.FIGURES)
    p.add_argument("--samples", type=int)
    return parser


def config_from_args(argv: Sequence[str] | None = None) -> ExperimentConfig:
    parser = build_parser()
    ns = vars(parser.parse_args(argv))
    path = ns.pop("config", None)
    base = {}
    if path:
        try:
            with open(path, encoding="utf-8") as fh:
                base = json.loads(fh.read())
        except OSError as exc:
            raise ConfigError(f"config file: {exc}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: line {exc.lineno}: {exc.msg}") from None
        if not isinstance(base, dict):
            raise ConfigError(f"{path}: line 1: config must be a JSON object")
        if base.get("command", ns["command"]) != ns["command"]:
            raise ConfigError(f"field 'command': file says {base['command']!r}, flags say {ns['command']!r}")
    merged = {**base, **{k: v for k, v in ns.items() if v is not None}}
    default_variant = {"cnot": "squashed-i", "rotate": "rot5"}.get(merged.get("command"))
    if default_variant and merged.get("variant") is None:
        merged["variant"] = default_variant
    if merged.get("command") == "sweep" and "variants" in merged:
        merged["variants"] = tuple(merged["variants"])
    return ExperimentConfig.from_dict(merged).validate()


# ---------------------------------------------------------------------------
# CSV output
# ---------------------------------------------------------------------------

def _fmt(x) -> str:
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


def render_csv(header: Sequence[str], rows: Sequence[Sequence]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        if len(row) != len(header):
            raise ValueError("row width does not match header")
        w.writerow([_fmt(x) for x in row])
    return buf.getvalue()


def write_atomic(path: str, text: str) -> None:
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=".csv")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def _scheme(cfg: ExperimentConfig) -> av.GaussianScheme:
    return av.GaussianScheme(cfg.scheme, cfg.order, cfg.samples, cfg.seed)


def _protocol_and_inputs(cfg: ExperimentConfig):
    if cfg.command == "transfer":
        return transfer_protocol(cfg.n), (InputState.real(cfg.a),)
    if cfg.command == "rotate":
        return rotation_protocol(cfg.variant, cfg.euler), (InputState.real(cfg.a),)
    return cnot_protocol(cfg.variant), (InputState.real(cfg.a), InputState.real(cfg.c))


def _single_run(cfg: ExperimentConfig):
    protocol, inputs = _protocol_and_inputs(cfg)
    slots = protocol.layout.slots()
    if cfg.sigma is None and cfg.average == "none":
        result = run_protocol(protocol, inputs, PhaseAssignment.common(cfg.theta), cfg.mode)
        order = [s for s, _ in protocol.layout.pattern]
        header = ["outcomes", "probability", "fidelity"]
        rows = []
        for b in result.branches:
            bits = "".join(str(b.outcomes[s]) for s in list(protocol.layout.redundant) + order)
            rows.append([bits, b.probability, b.fidelity])
        return header, rows
    inputs_avg = av.InputAverage(fixed=inputs) if cfg.average == "none" else av.InputAverage(cfg.average)
    evaluator = lambda ph: av.fidelity_batch(protocol, ph, cfg.mode, inputs_avg)  # noqa: E731
    if cfg.sigma is None:
        value = float(evaluator({s: np.array([cfg.theta]) for s in slots})[0])
        return ["theta", "fidelity"], [[cfg.theta, value]]
    scheme = _scheme(cfg)
    dims = 1 if cfg.coupling == "common-theta" else len(slots)
    draws = scheme.order ** dims if scheme.resolve(dims) == "gauss-hermite" else scheme.samples
    cost = draws * av.branch_count(protocol, cfg.mode)
    if cfg.sigma > 0 and cost > cfg.budget:
        raise BudgetExceeded(f"~{cost:.3g} evaluations exceed the budget of {cfg.budget:.3g}")
    est = av.gaussian_average(evaluator, slots, cfg.sigma, scheme, cfg.coupling)
    return ["sigma", "fidelity", "stderr", "scheme", "evaluations"], [[cfg.sigma, est.value, est.stderr, est.scheme, est.evaluations]]


def _bbb3(cfg: ExperimentConfig):
    m = bbb3_matrix(cfg.alpha, cfg.outcome)
    rows = [[i, j, float(m[i, j].real), float(m[i, j].imag)] for i in range(4) for j in range(4)]
    return ["row", "col", "re", "im"], rows


def _grid(cfg: ExperimentConfig) -> tuple:
    start, stop, step = cfg.grid
    n = int(np.floor((stop - start) / step + 1e-9))
    return tuple(round(start + i * step, 12) for i in range(n + 1))


def report_rows(report: av.FidelityReport, prefix: Sequence = ()):
    labels = list(report.columns)
    errs = [k for k in report.stderr if not k.endswith(":value")]
    pairs = [k for k in errs if k not in labels]
    header = [report.axis_name] + labels + [f"stderr({l})" for l in labels]
    header += [f"{p}" for p in pairs] + [f"stderr({p})" for p in pairs]
    if report.meta.get("protocol") == "transfer":
        header.append("threshold")
    rows = []
    for i, g in enumerate(report.axis):
        row = list(prefix) + [g] + [report.columns[l][i] for l in labels]
        row += [report.stderr.get(l, (0.0,) * len(report.axis))[i] for l in labels]
        row += [report.stderr[f"{p}:value"][i] for p in pairs] + [report.stderr[p][i] for p in pairs]
        if report.meta.get("protocol") == "transfer":
            row.append(report.threshold)
        rows.append(row)
    return header, rows


def _sweep(cfg: ExperimentConfig):
    variants = tuple(int(v) for v in cfg.variants) if cfg.protocol == "transfer" else cfg.variants
    inputs = av.InputAverage("bloch") if cfg.average in ("none", "bloch") else av.InputAverage(cfg.average)
    spec = av.SweepSpec(cfg.protocol, variants, cfg.axis, _grid(cfg), mode=cfg.mode, inputs=inputs,
                        coupling=cfg.coupling, scheme=_scheme(cfg), euler=tuple(cfg.euler),
                        budget=cfg.budget, name="sweep")
    return report_rows(av.sweep(spec))


def _figure(cfg: ExperimentConfig):
    specs = av.figure_specs(cfg.figure, cfg.seed, cfg.samples)
    for s in specs:
        s.budget = cfg.budget
    if cfg.figure in ("fig9a", "fig9b", "fig8b"):
        return report_rows(av.sweep(specs[0]))
    if cfg.figure == "fig8a":
        header, rows = None, []
        for spec in specs:
            rep = av.sweep(spec)
            a = spec.inputs.fixed[0].a
            h, r = report_rows(rep, prefix=(a,))
            header = ["a"] + h[:2]
            rows += [row[:3] for row in r]
        return header, rows
    header, rows = None, []
    for i, spec in enumerate(specs):
        rep = av.sweep(spec)
        zeta, nu, xi = spec.euler
        h, r = report_rows(rep, prefix=(i, zeta, nu, xi))
        if cfg.figure == "fig6a":
            header = ["euler_set", "zeta", "nu", "xi", "sigma", "F_R5", "stderr(F_R5)"]
            rows += [row[:7] for row in r]
        else:
            header = ["euler_set", "zeta", "nu", "xi", "sigma", "F_R5", "F_R7", "F_R5-F_R7", "stderr(F_R5-F_R7)"]
            rows += [row[:7] + row[9:11] for row in r]
    return header, rows


# ---------------------------------------------------------------------------
# verification suites
# ---------------------------------------------------------------------------

VERIFY_LAYOUTS = ("bbb1", "bbb2", "bbb3", "box", "cnot4", "rot5", "rot7", "bridge-ebb", "helix",
                  "squashed-i", "squashed-i-redundant")
ORACLE_LAYOUTS = ("bbb1", "bbb2", "bbb3", "box", "cnot4", "rot5", "rot7", "bridge-ebb", "helix", "squashed-i")
ORACLE_PARAMS = {"alpha": 0.37, "beta": -1.1, "gamma": 2.2}


def stabilizer_checks(noisy_theta: float = 0.5):
    """(name, passed, detail) per layout: ideal +1 everywhere, noisy fails everywhere."""
    out = []
    for name in VERIFY_LAYOUTS:
        layout = builtin_layout(name)
        ideal = entangle_all(layout, PhaseAssignment.zero())
        noisy = entangle_all(layout, PhaseAssignment.common(noisy_theta))
        ok_ideal = all(correlation_eigencheck(ideal, layout, s)[0] == 1 for s in layout.sites)
        residuals = [correlation_eigencheck(noisy, layout, s)[1] for s in layout.sites]
        ok_noisy = all(r > 1e-6 for r in residuals)
        out.append((f"stabilizer:{name}", ok_ideal and ok_noisy, f"min noisy residual {min(residuals):.3g}"))
    return out


def staging_checks(seed: int = 0, tol: float = 1e-10):
    """Staged and monolithic entangling agree branch by branch."""
    rng = np.random.default_rng(seed)
    out = []
    for name in VERIFY_LAYOUTS:
        layout = builtin_layout(name)
        if layout.blocks is None:
            continue
        params = {"alpha": 0.3, "beta": -0.8, "gamma": 1.3}
        for label, phases in (("zero", PhaseAssignment.zero()),
                              ("random", {s: rng.uniform(-np.pi, np.pi) for s in layout.slots()})):
            mono = {tuple(sorted(b.outcomes.items())): b.maps for b in branch_maps(layout, phases, params, schedule="monolithic")}
            worst = 0.0
            for sched in ("blocks", "lazy"):
                for b in branch_maps(layout, phases, params, schedule=sched):
                    worst = max(worst, float(np.max(np.abs(b.maps - mono[tuple(sorted(b.outcomes.items()))]))))
            out.append((f"staging:{name}:{label}", worst < tol, f"max deviation {worst:.3g}"))
    return out


def oracle_checks(n_inputs: int = 20, seed: int = 0, tol: float = 1e-10):
    """Decoded outputs equal the hand-assembled circuits at zero phase."""
    rng = np.random.default_rng(seed)
    out = []
    for name in ORACLE_LAYOUTS:
        params = dict(ORACLE_PARAMS, alpha=np.pi / 2) if name == "bbb3" else ORACLE_PARAMS
        proto = oracle_protocol(name, params)
        d = proto.target.shape[0]
        psis = rng.normal(size=(d, n_inputs)) + 1j * rng.normal(size=(d, n_inputs))
        psis /= np.linalg.norm(psis, axis=0)
        ideal = proto.target @ psis
        worst = 0.0
        for br in proto.decoded_maps():
            v = br.maps[0] @ psis
            fid = np.abs(np.sum(ideal.conj() * v, axis=0)) ** 2 / np.sum(np.abs(v) ** 2, axis=0)
            worst = max(worst, float(np.max(np.abs(1 - fid))))
        out.append((f"oracle:{name}", worst < tol, f"max |1-F| {worst:.3g}"))
    return out


def _verify(cfg: ExperimentConfig):
    checks = []
    if cfg.suite in ("stabilizer", "all"):
        checks += stabilizer_checks()
    if cfg.suite in ("staging", "all"):
        checks += staging_checks(cfg.seed)
    if cfg.suite in ("oracle", "all"):
        checks += oracle_checks(seed=cfg.seed)
    rows = [[name, "pass" if ok else "FAIL", detail] for name, ok, detail in checks]
    return ["check", "status", "detail"], rows, all(ok for _, ok, _ in checks)


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------

def run(cfg: ExperimentConfig) -> int:
    """Execute ``cfg`` and write its CSV; returns the exit status."""
    ok = True
    if cfg.command in ("transfer", "rotate", "cnot"):
        header, rows = _single_run(cfg)
    elif cfg.command == "bbb3":
        header, rows = _bbb3(cfg)
    elif cfg.command == "verify":
        header, rows, ok = _verify(cfg)
    elif cfg.command == "sweep":
        header, rows = _sweep(cfg)
    else:
        header, rows = _figure(cfg)
    text = render_csv(header, rows)
    if cfg.output:
        write_atomic(cfg.output, text)
    else:
        sys.stdout.write(text)
    return 0 if ok else 1


def main(argv: Sequence[str] | None = None) -> int:
    try:
        cfg = config_from_args(argv)
        return run(cfg)
    except BudgetExceeded as exc:
        print(f"budget exceeded: {exc}", file=sys.stderr)
        return 3
    except (ConfigError, ValueError, TypeError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
