"""Experiment runner: flat ``key=value`` configuration in, CSV reports out.

    kimura-spde <command> --config <path> [--out <dir>] [--seed <u64>] [--threads <n>]

Commands: identities, chaos, mc, ratio, holder, bounds, all.  Every
asserted check becomes a row of ``ledger.csv``; the exit status is 0 iff
no row has a margin below ``-bounds.slack * |bound|``, which can be
recomputed from the CSV alone (:func:`ledger_exit_status`).  Exit 2 means
a configuration or computation error.
"""
from __future__ import annotations

import argparse
import io
import math
import os
import sys
import time
from dataclasses import dataclass, field
from typing import Any, Callable, NamedTuple

import numpy as np

from . import __version__, _backend, chaos, kernel, montecarlo, specfun
from .errors import AccuracyError, DomainError, NumericError
from .noise import CovKernel, FieldGrid, NoiseModel

COMMANDS = ("identities", "chaos", "mc", "ratio", "holder", "bounds", "all")
KERNEL_KINDS = ("dirac-white", "white", "riesz", "exponential")

EXIT_OK = 0
EXIT_BOUND = 1
EXIT_ERROR = 2


class _Key(NamedTuple):
    kind: type
    default: Any
    check: Callable[[Any], bool] | None = None
    requirement: str = ""


def _positive(v) -> bool:
    return v > 0


def _unit_open(v) -> bool:
    return 0 < v < 1


_SCHEMA: dict[str, _Key] = {
    "command": _Key(str, "all", lambda v: v in COMMANDS, f"one of {', '.join(COMMANDS)}"),
    "seed": _Key(int, 0, lambda v: 0 <= v < 2 ** 64, "a 64-bit unsigned integer"),
    "threads": _Key(int, 1, _positive, "> 0"),
    "output.dir": _Key(str, "out"),
    "kernel.nu": _Key(float, 0.0, lambda v: v < 1, "< 1"),
    "quad.rel_tol": _Key(float, 1e-6, lambda v: 0 < v <= 1e-2, "in (0, 1e-2]"),
    "quad.abs_tol": _Key(float, 1e-10, lambda v: 0 < v <= 1e-2, "in (0, 1e-2]"),
    "quad.base_points": _Key(int, 16, lambda v: v >= 2, ">= 2"),
    "quad.panels": _Key(int, 8, _positive, "> 0"),
    "quad.spread": _Key(float, 8.0, _positive, "> 0"),
    "quad.time_levels": _Key(int, 14, _positive, "> 0"),
    "noise.beta": _Key(float, 0.0, lambda v: v >= 0, ">= 0"),
    "noise.eps": _Key(float, 0.25, _positive, "> 0"),
    "noise.spatial.kind": _Key(str, "dirac-white", lambda v: v in KERNEL_KINDS, f"one of {', '.join(KERNEL_KINDS)}"),
    "noise.spatial.h": _Key(float, None, _unit_open, "in (0, 1)"),
    "noise.spatial.scale": _Key(float, None, _positive, "> 0"),
    "noise.temporal.kind": _Key(str, "dirac-white", lambda v: v in KERNEL_KINDS, f"one of {', '.join(KERNEL_KINDS)}"),
    "noise.temporal.h": _Key(float, None, _unit_open, "in (0, 1)"),
    "noise.temporal.scale": _Key(float, None, _positive, "> 0"),
    "grid.z_max": _Key(float, 2.0, _positive, "> 0"),
    "grid.nz": _Key(int, 32, _positive, "> 0"),
    "grid.t_max": _Key(float, 1.0, _positive, "> 0"),
    "grid.nt": _Key(int, 32, _positive, "> 0"),
    "chaos.n_levels": _Key(int, 5, lambda v: 1 <= v <= chaos.WHITE_MAX_LEVELS, f"in [1, {chaos.WHITE_MAX_LEVELS}]"),
    "chaos.space_points": _Key(int, 160, lambda v: v >= 16, ">= 16"),
    "chaos.time_refine": _Key(int, 4, _positive, "> 0"),
    "chaos.cell_refine": _Key(int, 3, _positive, "> 0"),
    "mc.n_paths": _Key(int, 1000, lambda v: v >= montecarlo.MIN_PATHS, f">= {montecarlo.MIN_PATHS}"),
    "mc.time_substeps": _Key(int, 8, lambda v: v >= 4, ">= 4"),
    "mc.space_refine": _Key(int, 4, _positive, "> 0"),
    "mc.batch_size": _Key(int, 64, _positive, "> 0"),
    "mc.gate": _Key(float, 3.0, _positive, "> 0"),
    "mc.pass_fraction": _Key(float, 0.95, lambda v: 0 < v <= 1, "in (0, 1]"),
    "bounds.slack": _Key(float, 1e-3, lambda v: v >= 0, ">= 0"),
    "identities.points": _Key(int, 8, lambda v: v >= 2, ">= 2"),
    "identities.mass_tol": _Key(float, 1e-6, _positive, "> 0"),
    "identities.energy_tol": _Key(float, 1e-5, _positive, "> 0"),
    "identities.semigroup_tol": _Key(float, 1e-5, _positive, "> 0"),
    "identities.semigroup_samples": _Key(int, 20, _positive, "> 0"),
    "holder.t": _Key(float, 0.5, _positive, "> 0"),
    "holder.k_max": _Key(int, 10, lambda v: 4 <= v <= 30, "in [4, 30]"),
    "holder.theta": _Key(float, 0.1, _positive, "> 0"),
    "holder.samples": _Key(int, 1000, _positive, "> 0"),
}


class Violation(NamedTuple):
    key: str
    message: str

    def __str__(self) -> str:
        return f"{self.key}: {self.message}"


class ConfigError(DomainError):
    """Every problem found in a configuration, not just the first."""

    def __init__(self, violations: list[Violation]):
        self.violations = violations
        super().__init__("invalid configuration:\n" + "\n".join(f"  {v}" for v in violations))


@dataclass(frozen=True)
class ExperimentConfig:
    values: dict
    kernel: kernel.KernelParams
    quad: kernel.QuadratureSpec
    noise: NoiseModel
    grid: FieldGrid
    chaos: chaos.ChaosConfig
    sim: montecarlo.SimScheme
    given: frozenset = field(default_factory=frozenset)

    def __getitem__(self, key: str):
        return self.values[key]

    @property
    def command(self) -> str:
        return self.values["command"]

    def to_text(self) -> str:
        return "".join(f"{k}={_echo(self.values[k])}\n" for k in sorted(self.values) if self.values[k] is not None)


def _echo(v) -> str:
    return repr(v) if isinstance(v, float) else str(v)


def _convert(kind: type, raw: str):
    if kind is str:
        return raw
    value = float(raw)
    if not math.isfinite(value):
        raise ValueError("not finite")
    if kind is int:
        if not value.is_integer():
            raise ValueError("not an integer")
        return int(raw) if raw.lstrip("+-").isdigit() else int(value)
    return value


def _noise_kernel(values: dict, axis: str) -> CovKernel:
    kind = values[f"noise.{axis}.kind"]
    h, scale = values[f"noise.{axis}.h"], values[f"noise.{axis}.scale"]
    if kind in ("dirac-white", "white"):
        if h is not None or scale is not None:
            raise DomainError("white noise takes neither h nor scale")
        return CovKernel.white()
    if kind == "riesz":
        if h is None or scale is not None:
            raise DomainError("riesz noise needs h and no scale")
        return CovKernel.riesz(h)
    if scale is None or h is not None:
        raise DomainError("exponential noise needs scale and no h")
    return CovKernel.exponential(scale)


def _build(values: dict, bad: set, problems: list[Violation]) -> dict:
    """Construct the module objects section by section, collecting their invariant errors."""
    built: dict[str, Any] = {}

    def attempt(name: str, keys: tuple[str, ...], fn):
        if any(k in bad or k.split(".")[0] in bad for k in keys):
            return
        if any(dep not in built for dep in _DEPENDS.get(name, ())):
            return
        try:
            built[name] = fn()
        except DomainError as exc:
            problems.append(Violation(name, str(exc)))
            bad.add(name)

    v = values
    attempt("kernel", ("kernel.nu",), lambda: kernel.KernelParams(v["kernel.nu"]))
    attempt("quad", tuple(k for k in v if k.startswith("quad.")), lambda: kernel.QuadratureSpec(
        base_points=v["quad.base_points"], panels=v["quad.panels"], spread=v["quad.spread"],
        time_levels=v["quad.time_levels"], rel_tol=v["quad.rel_tol"], abs_tol=v["quad.abs_tol"]))
    attempt("noise.spatial", ("noise.spatial.kind", "noise.spatial.h", "noise.spatial.scale"),
            lambda: _noise_kernel(v, "spatial"))
    attempt("noise.temporal", ("noise.temporal.kind", "noise.temporal.h", "noise.temporal.scale"),
            lambda: _noise_kernel(v, "temporal"))
    attempt("noise", ("noise.beta",), lambda: NoiseModel(built["noise.spatial"], built["noise.temporal"],
                                                         v["noise.beta"]))
    attempt("grid", tuple(k for k in v if k.startswith("grid.")),
            lambda: FieldGrid.uniform(v["grid.z_max"], v["grid.nz"], v["grid.t_max"], v["grid.nt"]))
    attempt("chaos", tuple(k for k in v if k.startswith("chaos.")) + ("noise.beta", "noise.eps"),
            lambda: chaos.ChaosConfig(n_levels=v["chaos.n_levels"], grid=built["grid"], beta=v["noise.beta"],
                                      eps=v["noise.eps"], space_points=v["chaos.space_points"],
                                      time_refine=v["chaos.time_refine"], cell_refine=v["chaos.cell_refine"]))
    attempt("mc", tuple(k for k in v if k.startswith("mc.")) + ("seed", "noise.beta"),
            lambda: montecarlo.SimScheme(built["grid"], n_paths=v["mc.n_paths"], seed=v["seed"],
                                         beta=v["noise.beta"], time_substeps=v["mc.time_substeps"],
                                         space_refine=v["mc.space_refine"], batch_size=v["mc.batch_size"]))
    return built


_DEPENDS = {"noise": ("noise.spatial", "noise.temporal"), "chaos": ("grid",), "mc": ("grid",)}


def parse_config(text: str, overrides: dict | None = None) -> ExperimentConfig:
    """Parse flat ``key=value`` lines (``#`` starts a comment) into a validated config.

    ``overrides`` (already typed values, e.g. from command-line flags) take
    precedence over the text.  All violations are gathered before raising
    :class:`ConfigError`.
    """
    problems: list[Violation] = []
    seen: dict[str, int] = {}
    raw: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        if "=" not in body:
            problems.append(Violation(f"line {lineno}", f"expected key=value, got {body!r}"))
            continue
        key, value = (s.strip() for s in body.split("=", 1))
        if key in seen:
            problems.append(Violation(key, f"duplicate key (lines {seen[key]} and {lineno})"))
            continue
        seen[key] = lineno
        if key not in _SCHEMA:
            problems.append(Violation(key, f"unknown key (line {lineno})"))
            continue
        raw[key] = value

    values = {k: spec.default for k, spec in _SCHEMA.items()}
    bad: set[str] = set()
    for key, text_value in raw.items():
        spec = _SCHEMA[key]
        try:
            values[key] = _convert(spec.kind, text_value)
        except ValueError:
            problems.append(Violation(key, f"expected {spec.kind.__name__}, got {text_value!r}"))
            bad.add(key)
    for key, value in (overrides or {}).items():
        if value is not None:
            values[key] = value
    for key, spec in _SCHEMA.items():
        if key in bad or values[key] is None or spec.check is None:
            continue
        if not spec.check(values[key]):
            problems.append(Violation(key, f"must be {spec.requirement}, got {values[key]!r}"))
            bad.add(key)
    if values["noise.spatial.kind"] == "white":
        values["noise.spatial.kind"] = "dirac-white"
    if values["noise.temporal.kind"] == "white":
        values["noise.temporal.kind"] = "dirac-white"

    built = _build(values, bad, problems)
    if problems:
        raise ConfigError(problems)
    return ExperimentConfig(values, built["kernel"], built["quad"], built["noise"], built["grid"],
                            built["chaos"], built["mc"], frozenset(raw))


# -- stages ------------------------------------------------------------------------

class StageError(RuntimeError):
    """A module raised while running a stage; the message names module and parameters."""


@dataclass
class RunOutput:
    ledger: chaos.BoundLedger = field(default_factory=chaos.BoundLedger)
    files: dict[str, str] = field(default_factory=dict)
    wall: dict[str, float] = field(default_factory=dict)
    tables: dict[str, Any] = field(default_factory=dict)

    def merge(self, ledger: chaos.BoundLedger) -> None:
        self.ledger.rows.extend(ledger.rows)
        self.ledger.constants.update(ledger.constants)


def _stage(module: str, params: str):
    def wrap(fn):
        def inner(cfg: ExperimentConfig, out: RunOutput):
            start = time.perf_counter()
            try:
                fn(cfg, out)
            except (DomainError, AccuracyError, NumericError) as exc:
                raise StageError(f"{module} ({params.format(**_fmt_values(cfg))}): "
                                 f"{type(exc).__name__}: {exc}") from exc
            out.wall[fn.__name__.lstrip("_")] = time.perf_counter() - start
        return inner
    return wrap


def _fmt_values(cfg: ExperimentConfig) -> dict:
    return {k.replace(".", "_"): v for k, v in cfg.values.items()}


def _rel(value: float, reference: float) -> float:
    return abs(value - reference) / max(abs(reference), 1e-300)


_ONE_F_ONE_12 = specfun.hypergeometric([1.0], [2.0])


@_stage("kernel/specfun", "nu={kernel_nu}, points={identities_points}")
def _identities(cfg: ExperimentConfig, out: RunOutput) -> None:
    rows: list[tuple] = []
    n = cfg["identities.points"]
    grid = np.geomspace(1e-2, 10.0, n)
    for z in grid:
        for t in grid:
            rows.append(("mass", z, t, kernel.mass_q0_quadrature(z, t, cfg.quad), kernel.mass_q0(z, t),
                         cfg["identities.mass_tol"]))
            u_exact = float(kernel.energy_U(z / t))
            rows.append(("energy", z, t, kernel.energy_U_quadrature(z, t, cfg.quad), u_exact,
                         cfg["identities.energy_tol"]))
            out.ledger.add(1, z, t, u_exact, "energy_U_half", 0.5)
    rng = np.random.default_rng(cfg["seed"])
    for _ in range(cfg["identities.semigroup_samples"]):
        z, w = rng.uniform(0.1, 3.0, 2)
        s, t = rng.uniform(0.1, 1.0, 2)
        rows.append(("semigroup", z, w, kernel.semigroup_compose(cfg.kernel, z, w, s, t, cfg.quad),
                     kernel.q_nu(cfg.kernel, z, w, s + t), cfg["identities.semigroup_tol"]))
    for x in np.geomspace(1e-8, 50.0, 12):
        rows.append(("hyp1f1_1_2", x, math.nan, specfun.pfq(_ONE_F_ONE_12, x), math.expm1(x) / x, 1e-10))
    for a in range(1, 7):
        spec = specfun.hypergeometric([1.0], [a + 1.0])
        for x in (0.5, 1.0, 2.0, 5.0, 10.0, 20.0, 30.0):
            lower = specfun.gamma_fn(a) - specfun.incomplete_gamma_upper(a, x)
            rows.append(("incomplete_gamma", float(a), x, specfun.pfq(spec, x), a * math.exp(x) * x ** -a * lower,
                         1e-8))
    for x in (0.0, 1.0, 10.0):
        res = specfun.bessel_i_prime_identity_check(x, 1e-5)
        rows.append(("bessel_i_prime", x, math.nan, res, 0.0, 1e-6))

    text = io.StringIO()
    text.write("name,x,y,value,reference,residual,tolerance\n")
    for name, x, y, value, ref, tol in rows:
        resid = abs(value) if name == "bessel_i_prime" else _rel(value, ref)
        text.write(",".join([name] + [chaos._fmt(float(v)) for v in (x, y, value, ref, resid, tol)]) + "\n")
        out.ledger.add(-1, x, y, resid, f"identity_{name}", tol)
    out.files["identities.csv"] = text.getvalue()


def _table(cfg: ExperimentConfig, out: RunOutput, beta: float | None = None):
    """The chaos table for the configured noise, built once per beta."""
    beta = cfg.noise.beta if beta is None else beta
    key = f"chaos_{beta!r}"
    if key not in out.tables:
        ccfg = cfg.chaos if beta == cfg.noise.beta else chaos.ChaosConfig(
            n_levels=cfg.chaos.n_levels, grid=cfg.grid, beta=beta, eps=cfg.chaos.eps,
            space_points=cfg.chaos.space_points, time_refine=cfg.chaos.time_refine,
            cell_refine=cfg.chaos.cell_refine)
        if cfg.noise.is_white:
            out.tables[key] = chaos.chaos_white(ccfg)
        else:
            model = NoiseModel(cfg.noise.spatial, cfg.noise.temporal, beta)
            out.tables[key] = chaos.chaos_colored(ccfg, model)
    return out.tables[key]


def _moment_ledger(table) -> chaos.BoundLedger:
    return chaos.white_ledger(table) if table.kind == "white" else chaos.colored_ledger(table)


@_stage("chaos", "beta={noise_beta}, n_levels={chaos_n_levels}, grid={grid_nz}x{grid_nt}")
def _chaos(cfg: ExperimentConfig, out: RunOutput) -> None:
    table = _table(cfg, out)
    out.files["chaos.csv"] = chaos.table_text(table)
    out.merge(_moment_ledger(table))


@_stage("chaos", "beta={noise_beta}, n_levels={chaos_n_levels}, grid={grid_nz}x{grid_nt}")
def _bounds(cfg: ExperimentConfig, out: RunOutput) -> None:
    table = _table(cfg, out)
    out.merge(_moment_ledger(table))
    if table.beta > 0:
        out.merge(chaos.ratio_ledger(table))


@_stage("chaos", "beta={noise_beta}, eps={noise_eps}, grid={grid_nz}x{grid_nt}")
def _ratio(cfg: ExperimentConfig, out: RunOutput) -> None:
    table = _table(cfg, out)
    text = io.StringIO()
    text.write("z,t,ratio,tail\n")
    for z in table.grid.z:
        for t in table.grid.t:
            value, tail = chaos.ratio_moment(table, float(z), float(t))
            text.write(",".join(chaos._fmt(float(v)) for v in (z, t, value, tail)) + "\n")
    out.files["ratio.csv"] = text.getvalue()
    out.merge(chaos.ratio_ledger(table))


@_stage("chaos", "beta={noise_beta}, t={holder_t}, k_max={holder_k_max}")
def _holder(cfg: ExperimentConfig, out: RunOutput) -> None:
    if not cfg.noise.is_white:
        raise DomainError("the increment moments need white noise")
    table = _table(cfg, out)
    t = cfg["holder.t"]
    pairs = [(2.0 ** -k, 2.0 ** (1 - k)) for k in range(1, cfg["holder.k_max"] + 1)]
    incs = [chaos.increment_moment(table, z1, z2, t) for z1, z2 in pairs]
    fit = chaos.fit_loglog_slope([z2 - z1 for z1, z2 in pairs], [m.value for m in incs])
    text = io.StringIO()
    text.write(f"# slope {chaos._fmt(fit.slope)} ci95 [{chaos._fmt(fit.lower)}, {chaos._fmt(fit.upper)}] "
               f"intercept {chaos._fmt(fit.intercept)}\n")
    text.write("z1,z2,dz,value,tail\n")
    for (z1, z2), m in zip(pairs, incs):
        text.write(",".join(chaos._fmt(v) for v in (z1, z2, z2 - z1, m.value, m.tail)) + "\n")
    out.files["holder.csv"] = text.getvalue()
    theta = cfg["holder.theta"]
    beta = cfg.noise.beta
    if theta < min(beta - 0.25, 0.125):
        out.ledger.add(-1, math.nan, t, 2.0 * theta, "holder_slope", fit.slope)

    rng = np.random.default_rng(cfg["seed"])
    m = cfg["holder.samples"]
    z1, z2, w = rng.uniform(0.0, 4.0, (3, m))
    s = rng.uniform(0.01, 1.0, m)
    diff = np.abs(np.asarray(kernel.kernel_difference(z1, z2, w, s)))
    ratio = diff / chaos.kernel_holder_bound(z1, z2, s)
    out.ledger.add(-1, math.nan, math.nan, float(np.max(ratio)), "kernel_holder_ratio", 1.0)
    out.ledger.constants["M_holder"] = (chaos.HOLDER_M, "(2e)^(-1/2)")


@_stage("montecarlo", "beta={noise_beta}, n_paths={mc_n_paths}, seed={seed}, grid={grid_nz}x{grid_nt}")
def _mc(cfg: ExperimentConfig, out: RunOutput) -> None:
    report = montecarlo.simulate_moments(cfg.sim, cfg.noise, threads=cfg["threads"])
    out.files["moments.csv"] = report.to_text()
    table = _table(cfg, out)
    rows = montecarlo.compare_chaos_mc(report, table, cfg["mc.gate"])
    out.files["reconciliation.csv"] = montecarlo.reconciliation_text(rows)
    if cfg.noise.temporal.is_white:
        flagged = sum(r.flagged for r in rows) / len(rows)
        out.ledger.add(-1, math.nan, math.nan, flagged, "mc_flagged_fraction", 1.0 - cfg["mc.pass_fraction"])


_PLAN = {
    "identities": (_identities,),
    "chaos": (_chaos,),
    "bounds": (_bounds,),
    "ratio": (_ratio,),
    "holder": (_holder,),
    "mc": (_mc,),
}


def _plan(cfg: ExperimentConfig) -> tuple:
    if cfg.command != "all":
        return _PLAN[cfg.command]
    # chaos plus ratio covers every row of bounds
    stages = [_identities, _chaos]
    if cfg.noise.beta > 0:
        stages.append(_ratio)
    if cfg.noise.is_white:
        stages.append(_holder)
    stages.append(_mc)
    return tuple(stages)


EMPTY_MOMENTS = "z,t,mean,mean_se,ratio,ratio_se\n"


def run(cfg: ExperimentConfig) -> tuple[int, RunOutput]:
    """Run the configured command in memory; returns (exit status, output)."""
    out = RunOutput()
    out.ledger.constants["bound_slack"] = (cfg["bounds.slack"], "relative slack used for the exit status")
    for stage in _plan(cfg):
        stage(cfg, out)
    out.files.setdefault("moments.csv", EMPTY_MOMENTS)
    out.files.setdefault("reconciliation.csv", ",".join(montecarlo.ReconciliationRow._fields) + "\n")
    out.files["ledger.csv"] = out.ledger.to_text()
    return ledger_exit_status(out.files["ledger.csv"]), out


def ledger_exit_status(text: str) -> int:
    """0 iff every ledger row clears its bound within the recorded relative slack."""
    ledger = chaos.BoundLedger.from_text(text)
    slack = ledger.constants.get("bound_slack", (0.0, ""))[0]
    return EXIT_BOUND if ledger.violations(rel_slack=slack) else EXIT_OK


def write_outputs(cfg: ExperimentConfig, out: RunOutput, status: int, directory: str) -> None:
    os.makedirs(directory, exist_ok=True)
    for name, content in sorted(out.files.items()):
        with open(os.path.join(directory, name), "w", encoding="utf-8", newline="\n") as fh:
            fh.write(content)
    manifest = io.StringIO()
    manifest.write(cfg.to_text())
    manifest.write(f"library.version={__version__}\n")
    manifest.write(f"library.compiled_core={_backend.COMPILED}\n")
    manifest.write(f"numpy.version={np.__version__}\n")
    for name, secs in out.wall.items():
        manifest.write(f"wall.{name}={secs:.3f}\n")
    manifest.write(f"exit_status={status}\n")
    with open(os.path.join(directory, "manifest.txt"), "w", encoding="utf-8", newline="\n") as fh:
        fh.write(manifest.getvalue())


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="kimura-spde", description="Stochastic Kimura equation experiments.")
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", required=True, help="flat key=value configuration file")
    p.add_argument("--out", help="output directory (overrides output.dir)")
    p.add_argument("--seed", type=int, help="64-bit seed (overrides seed)")
    p.add_argument("--threads", type=int, help="worker threads (overrides threads)")
    return p


def main(argv: list[str] | None = None) -> int:
    args = _parser().parse_args(argv)
    try:
        with open(args.config, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        print(f"cannot read config: {exc}", file=sys.stderr)
        return EXIT_ERROR
    overrides = {"command": args.command, "seed": args.seed, "threads": args.threads, "output.dir": args.out}
    try:
        cfg = parse_config(text, overrides)
    except ConfigError as exc:
        print(exc, file=sys.stderr)
        return EXIT_ERROR
    try:
        status, out = run(cfg)
    except StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    write_outputs(cfg, out, status, cfg["output.dir"])
    bad = chaos.BoundLedger.from_text(out.files["ledger.csv"]).violations(rel_slack=cfg["bounds.slack"])
    for row in bad[:20]:
        print(f"bound violated: {row.bound_name} n={row.n} z={row.z:.6g} t={row.t:.6g} "
              f"value={row.value:.6g} bound={row.bound_value:.6g}", file=sys.stderr)
    return status


if __name__ == "__main__":
    sys.exit(main())
