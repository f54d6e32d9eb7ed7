"""Config-driven command line: ``plapbench <command> --config run.ini --out dir``.

A config file holds one ``[run]`` block (``seed``, ``out``, ``threads``) and
one block per command, each a flat list of ``key = value`` lines. Unknown
blocks and keys are rejected. Field and range rules live in :data:`SCHEMA`
and are mirrored in ``schema.json``.
"""

from __future__ import annotations

import argparse
import configparser
import io
import json
import math
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable

import numpy as np

from . import experiments as ex
from .analytic import parse_analytic
from .dualnorm import (DualSettings, density_functional, dual_seminorm,
                       weak_derivative_functional)
from .fracnorm import (FAMILIES, SeminormParams, besov_seminorm, nikolskii_seminorm,
                       slobodeckii_seminorm)
from .grid import Region, ScalarField, build_grid, sample_field
from .kfunctional import COUPLES, InterpolationParams, interpolation_profile
from .plap import (DirichletProblem, EnergyParams, solve_dirichlet, verify_energy_estimate,
                   verify_sobolev_estimate)
from .report import csv_text, to_json

COMMANDS = ("solve", "seminorm", "dualnorm", "kfunc", "verify-energy", "verify-sobolev",
            "sweep-sharpness", "check-scaling")


class ConfigError(ValueError):
    """Invalid config; the message names the offending field."""


# -- schema ------------------------------------------------------------------

@dataclass(frozen=True)
class Field:
    kind: str  # int | float | str | floats | ints | field
    default: Any
    check: Callable[[Any], bool] | None = None
    rule: str = ""
    doc: str = ""


def _open(lo, hi):
    return lambda x: lo < x < hi


def _pos(x):
    return x > 0


_GRID = {
    "dim": Field("int", 2, lambda n: n in (1, 2, 3), "in {1,2,3}", "space dimension N"),
    "h": Field("float", 2 ** -4, _pos, "out of (0,inf)", "grid spacing"),
    "half_width": Field("float", 1.25, _pos, "out of (0,inf)", "grid box half side"),
}
_PDE = {
    **_GRID,
    "p": Field("float", 4.0, lambda p: p > 2, "out of (2,inf)", "growth exponent"),
    "eps": Field("float", 1e-8, _pos, "out of (0,inf)", "regularization"),
    "radius": Field("float", 1.0, _pos, "out of (0,inf)", "Dirichlet ball radius"),
    "f": Field("field", "constant(value=1)", doc="right-hand side"),
    "g": Field("field", "constant(value=0)", doc="boundary values"),
    "tol": Field("float", 1e-8, _pos, "out of (0,inf)", "Newton residual tolerance"),
    "max_iter": Field("int", 200, _pos, "out of [1,inf)", "Newton iterations per stage"),
}

SCHEMA: dict[str, dict[str, Field]] = {
    "run": {
        "seed": Field("int", 0, lambda s: s >= 0, "out of [0,inf)", "random seed"),
        "out": Field("str", "results", doc="output directory"),
        "threads": Field("int", 1, _pos, "out of [1,inf)", "compiled-kernel threads"),
    },
    "solve": dict(_PDE),
    "verify-energy": dict(_PDE),
    "verify-sobolev": {
        **_PDE,
        "s": Field("float", 0.9, _open(0, 1.0000001), "out of (0,1]", "source smoothness"),
        "r": Field("float", 0.5, _pos, "out of (0,inf)", "inner radius"),
        "outer": Field("float", 0.9, _pos, "out of (0,inf)", "outer radius R"),
    },
    "seminorm": {
        **_GRID,
        "field": Field("field", "hat(radius=1)", doc="analytic field"),
        "family": Field("str", "slobodeckii", lambda s: s in FAMILIES, "one of " + "|".join(FAMILIES)),
        "beta": Field("float", 0.5, _pos, "out of (0,inf)", "smoothness"),
        "q": Field("float", 2.0, lambda q: q >= 1, "out of [1,inf)", "integrability"),
        "region": Field("float", 0.0, lambda r: r >= 0, "out of [0,inf)",
                        "ball radius; 0 means all of space (slobodeckii) or the grid"),
    },
    "dualnorm": {
        **_GRID,
        "field": Field("field", "constant(value=1)", doc="density or derivative data"),
        "form": Field("str", "density", lambda s: s in ("density", "derivative"),
                      "one of density|derivative"),
        "axis": Field("int", 0, lambda a: a >= 0, "out of [0,inf)", "derivative axis"),
        "sigma": Field("float", 1.0, _open(0, 1.0000001), "out of (0,1]", "test smoothness"),
        "r": Field("float", 2.0, lambda r: r > 1, "out of (1,inf)", "test integrability"),
        "radius": Field("float", 1.0, _pos, "out of (0,inf)", "support ball"),
        "restarts": Field("int", 5, lambda n: n >= 0, "out of [0,inf)", "random restarts"),
    },
    "kfunc": {
        **_GRID,
        "field": Field("field", "hat(radius=1)", doc="analytic field"),
        "theta": Field("float", 0.5, _open(0, 1), "out of (0,1)"),
        "q": Field("float", 2.0, lambda q: 1 < q < math.inf, "out of (1,inf)"),
        "couple": Field("str", "D0", lambda c: c in COUPLES, "one of " + "|".join(COUPLES)),
        "radius": Field("float", 1.0, _pos, "out of (0,inf)", "ball radius"),
        "t_points": Field("int", 40, lambda n: n >= 2, "out of [2,inf)"),
    },
    "sweep-sharpness": {
        "dim": Field("int", 3, lambda n: n in (1, 2, 3), "in {1,2,3}"),
        "p": Field("float", 3.0, lambda p: p > 2, "out of (2,inf)"),
        "alphas": Field("floats", (), doc="exponents; empty means alpha_tilde + 0.05 k, |k| <= 2"),
        "s": Field("float", 0.0, lambda s: 0 <= s <= 1, "out of [0,1]",
                   "source smoothness for alpha_s; 0 disables"),
        "radius": Field("float", 0.9, _pos, "out of (0,inf)"),
        "ladder": Field("int", 10, lambda n: n >= 4, "out of [4,inf)"),
        "levels": Field("ints", (4, 8), lambda v: len(v) > 0 and min(v) >= 2,
                        "needs entries >= 2", "points per shell radius"),
    },
    "check-scaling": {
        "dim": Field("int", 2, lambda n: n in (1, 2, 3), "in {1,2,3}"),
        "p": Field("float", 4.0, lambda p: p > 2, "out of (2,inf)"),
        "f": Field("field", "gaussian(width=0.5)"),
        "ball_radius": Field("float", 1.0, _pos, "out of (0,inf)"),
        "r": Field("float", 0.5, _pos, "out of (0,inf)"),
        "outer": Field("float", 0.9, _pos, "out of (0,inf)"),
        "s": Field("float", 0.9, _open(0, 1.0000001), "out of (0,1]"),
        "h": Field("float", 2 ** -4, _pos, "out of (0,inf)"),
        "half_width": Field("float", 1.25, _pos, "out of (0,inf)"),
        "eps": Field("float", 1e-8, _pos, "out of (0,inf)"),
        "lambdas": Field("floats", (1.0, 2.0), lambda v: len(v) > 0 and min(v) > 0,
                         "needs positive entries"),
        "mode": Field("str", "similar", lambda m: m in ("similar", "fixed_extent"),
                      "one of similar|fixed_extent"),
    },
}


def _parse(name: str, spec: Field, text: str):
    try:
        if spec.kind == "int":
            return int(text)
        if spec.kind == "float":
            return float(text)
        if spec.kind in ("floats", "ints"):
            conv = int if spec.kind == "ints" else float
            return tuple(conv(t) for t in text.replace(",", " ").split())
        if spec.kind == "field":
            parse_analytic(text)
            return text.strip()
        return text.strip()
    except ValueError as err:
        raise ConfigError(f"{name}: cannot parse {text!r} ({err})") from None


def _format(value) -> str:
    if isinstance(value, tuple):
        return ", ".join(_format(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _validate(section: str, values: dict[str, Any]) -> None:
    for key, val in values.items():
        spec = SCHEMA[section][key]
        if spec.check is not None and not spec.check(val):
            raise ConfigError(f"{key} {spec.rule}" if spec.rule.startswith("out of")
                              else f"{key} must be {spec.rule}: {val!r}")
    if section == "seminorm":
        beta, fam = values["beta"], values["family"]
        if fam == "slobodeckii" and not 0 < beta < 1:
            raise ConfigError("beta out of (0,1)")
        if fam == "nikolskii" and not 0 < beta <= 1:
            raise ConfigError("beta out of (0,1]")
        if fam == "besov" and not 0 < beta < 2:
            raise ConfigError("beta out of (0,2)")
    if section in ("verify-sobolev", "check-scaling") and not values["r"] < values["outer"]:
        raise ConfigError("r must be below outer")
    if section == "verify-sobolev":
        p = values["p"]
        if not (p - 2) / p < values["s"]:
            raise ConfigError(f"s out of ((p-2)/p,1] = ({(p - 2) / p:.6g},1]")
    if section == "dualnorm" and values["form"] == "derivative" and values["axis"] >= values["dim"]:
        raise ConfigError("axis out of [0,dim)")


@dataclass
class RunConfig:
    """One command with its parameter block, seed, output directory and threads."""

    command: str
    params: dict[str, Any] = field(default_factory=dict)
    seed: int = 0
    out: str = "results"
    threads: int = 1

    def __post_init__(self):
        if self.command not in COMMANDS:
            raise ConfigError(f"command: unknown {self.command!r}; expected one of {COMMANDS}")
        block = SCHEMA[self.command]
        unknown = sorted(set(self.params) - set(block))
        if unknown:
            raise ConfigError(f"{unknown[0]}: unknown key in [{self.command}]")
        full = {k: f.default for k, f in block.items()}
        full.update(self.params)
        self.params = full
        _validate(self.command, self.params)
        _validate("run", {"seed": self.seed, "out": self.out, "threads": self.threads})

    @classmethod
    def from_text(cls, text: str, command: str, **overrides) -> "RunConfig":
        parser = configparser.ConfigParser(interpolation=None, strict=True)
        parser.optionxform = str
        try:
            parser.read_string(text)
        except configparser.Error as err:
            raise ConfigError(f"config: {err}") from None
        for sec in parser.sections():
            if sec not in SCHEMA:
                raise ConfigError(f"[{sec}]: unknown block")
        if command not in COMMANDS:
            raise ConfigError(f"command: unknown {command!r}; expected one of {COMMANDS}")
        run = {}
        if parser.has_section("run"):
            for key, text_val in parser.items("run"):
                if key not in SCHEMA["run"]:
                    raise ConfigError(f"{key}: unknown key in [run]")
                run[key] = _parse(key, SCHEMA["run"][key], text_val)
        params = {}
        if parser.has_section(command):
            for key, text_val in parser.items(command):
                if key not in SCHEMA[command]:
                    raise ConfigError(f"{key}: unknown key in [{command}]")
                params[key] = _parse(key, SCHEMA[command][key], text_val)
        run.update({k: v for k, v in overrides.items() if v is not None})
        return cls(command, params, **run)

    def to_text(self) -> str:
        buf = io.StringIO()
        buf.write(f"[run]\nseed = {self.seed}\nout = {self.out}\nthreads = {self.threads}\n\n")
        buf.write(f"[{self.command}]\n")
        for key in SCHEMA[self.command]:
            buf.write(f"{key} = {_format(self.params[key])}\n")
        return buf.getvalue()


def schema_document() -> dict:
    """JSON description of every block, as shipped in ``schema.json``."""
    def enc(v):
        return list(v) if isinstance(v, tuple) else v
    return {"schema_version": 1,
            "blocks": {sec: {k: {"type": f.kind, "default": enc(f.default),
                                 "rule": f.rule, "doc": f.doc}
                             for k, f in block.items()}
                       for sec, block in SCHEMA.items()}}


# -- dispatch ----------------------------------------------------------------

def _grid(prm):
    return build_grid(prm["dim"], prm["half_width"], prm["h"])


def _field(grid, text, support=None):
    return sample_field(grid, parse_analytic(text), support, singularity="clip")


def _node_rows(u: ScalarField):
    pts = u.grid.points()
    return [list(map(float, x)) + [float(v)] for x, v in zip(pts, u.values.ravel())]


def _node_header(dim):
    return [f"x{j}" for j in range(dim)] + ["value"]


class _Out:
    def __init__(self, root: Path, command: str):
        self.root = root
        self.command = command
        self.files: list[Path] = []

    def json(self, record, kind=None):
        path = self.root / f"{self.command}.json"
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(to_json(record, kind or self.command))
        self.files.append(path)

    def csv(self, name, header, rows):
        path = self.root / name
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(csv_text(header, rows))
        self.files.append(path)


def _solve(prm):
    grid = _grid(prm)
    f = _field(grid, prm["f"])
    g = _field(grid, prm["g"])
    prob = DirichletProblem(Region.ball(prm["radius"]), f, g, EnergyParams(prm["p"], prm["eps"]))
    return prob, g, solve_dirichlet(prob, prm["tol"], prm["max_iter"])


def _solve_summary(rep):
    return {"iterations": rep.iterations, "residual_norm": rep.residual_norm,
            "energy": rep.energy, "converged": rep.converged, "tolerance": rep.tolerance,
            "eps_schedule": rep.eps_schedule, "gradient_fallbacks": rep.gradient_fallbacks,
            "energy_trace": rep.energy_trace}


def _cmd_solve(cfg, out):
    _, _, rep = _solve(cfg.params)
    out.json({"config": cfg.params, "report": _solve_summary(rep)}, "SolveReport")
    out.csv("solution.csv", _node_header(rep.u_eps.grid.dimension), _node_rows(rep.u_eps))
    return rep.converged


def _cmd_verify_energy(cfg, out):
    prob, g, rep = _solve(cfg.params)
    est = verify_energy_estimate(rep, g, prob)
    out.json({"config": cfg.params, "solve": _solve_summary(rep), "estimate": est},
             "EstimateReport")
    return rep.converged


def _cmd_verify_sobolev(cfg, out):
    prm = cfg.params
    prob, _, rep = _solve(prm)
    est = verify_sobolev_estimate(rep.u_eps, prob.f, prm["p"], prm["s"], prm["r"], prm["outer"],
                                  prm["eps"])
    out.json({"config": prm, "solve": _solve_summary(rep), "estimate": est}, "EstimateReport")
    return rep.converged


def _cmd_seminorm(cfg, out):
    prm = cfg.params
    grid = _grid(prm)
    region = Region.ball(prm["region"]) if prm["region"] > 0 else None
    u = _field(grid, prm["field"], region)
    sp = SeminormParams(prm["beta"], prm["q"], prm["family"])
    if prm["family"] == "slobodeckii":
        res = slobodeckii_seminorm(u, sp, region, details=True)
    elif prm["family"] == "besov":
        res = besov_seminorm(u, sp, details=True)
    else:
        res = nikolskii_seminorm(u, sp, details=True)
    out.json({"config": prm, "result": res}, "SeminormResult")
    return True


def _cmd_dualnorm(cfg, out):
    prm = cfg.params
    grid = _grid(prm)
    ball = Region.ball(prm["radius"])
    u = _field(grid, prm["field"])
    F = density_functional(u) if prm["form"] == "density" else \
        weak_derivative_functional(u, prm["axis"])
    res = dual_seminorm(F, prm["sigma"], prm["r"], ball,
                        DualSettings(restarts=prm["restarts"], seed=cfg.seed))
    summary = {"value": res.value, "primal_params": res.primal_params,
               "iterations": res.iterations, "converged": res.converged,
               "restarts": res.restarts, "ratios": res.ratios}
    out.json({"config": prm, "seed": cfg.seed, "result": summary}, "DualNormResult")
    out.csv("maximizer.csv", _node_header(grid.dimension), _node_rows(res.maximizer))
    return res.converged


def _cmd_kfunc(cfg, out):
    prm = cfg.params
    grid = _grid(prm)
    ball = Region.ball(prm["radius"])
    u = _field(grid, prm["field"])
    ip = InterpolationParams(prm["theta"], prm["q"], prm["couple"])
    t = np.geomspace(1e-3 * prm["radius"], 1e3 * prm["radius"], prm["t_points"])
    prof = interpolation_profile(u, ip, ball, t)
    rows = prof.rows()
    out.json({"config": prm, "profile_integral": prof.profile_integral, "body": prof.body,
              "tail_low": prof.tail_low, "tail_high": prof.tail_high,
              "converged": prof.converged, "points": rows}, "KProfile")
    out.csv("profile.csv", ["t", "K", "part_x_norm", "part_y_norm", "converged"],
            [[r["t"], r["K"], r["part_x_norm"], r["part_y_norm"], int(r["converged"])]
             for r in rows])
    out.csv("plot.csv", ["x", "y"], [[r["t"], r["K"]] for r in rows])
    return prof.converged


def _cmd_sweep(cfg, out):
    prm = cfg.params
    N, p = prm["dim"], prm["p"]
    at = ex.alpha_tilde(N, p)
    alphas = prm["alphas"] or tuple(at + 0.05 * k for k in range(-2, 3))
    s = prm["s"] or None
    scan = {}
    for a in alphas:
        try:
            spec = ex.SharpnessSpec(N, p, a, s, prm["radius"], prm["ladder"], prm["levels"])
        except ValueError as err:
            raise ConfigError(f"alphas: {err}") from None
        scan[float(a)] = ex.sharpness_sweep(spec)
    rows = [r for a in alphas for r in scan[float(a)]]
    header = ["alpha", "delta", "level", "annulus_integral", "shell_integral",
              "fitted_exponent", "verdict"]
    out.csv("sweep.csv", header, [[r.alpha, r.delta, r.level, r.annulus_integral,
                                   r.shell_integral, r.fitted_exponent, r.verdict] for r in rows])
    finest = max(prm["levels"])
    for i, a in enumerate(alphas):
        out.csv(f"plot_{i}.csv", ["x", "y"],
                [[r.delta, r.annulus_integral] for r in scan[float(a)] if r.level == finest])
    verdicts = {str(a): ex.final_verdict(scan[float(a)])[0] for a in alphas}
    out.json({"config": prm, "alpha_tilde": at,
              "alpha_s": None if s is None else ex.alpha_s(N, p, s),
              "predicted_exponents": {str(a): ex.annulus_exponent(N, p, a) for a in alphas},
              "verdicts": verdicts, "transition_alpha": ex.transition_alpha(scan),
              "plots": {f"plot_{i}.csv": a for i, a in enumerate(alphas)}}, "SweepSummary")
    return True


def _cmd_scaling(cfg, out):
    prm = cfg.params
    spec = ex.ScalingCheckSpec(prm["dim"], prm["p"], parse_analytic(prm["f"]), prm["ball_radius"],
                               prm["r"], prm["outer"], prm["s"], prm["h"], prm["half_width"],
                               prm["eps"], prm["lambdas"], prm["mode"])
    rep = ex.scaling_invariance_check(spec)
    out.json({"config": prm, "report": rep}, "ScalingReport")
    header = ["lam", "lhs", "energy_term", "source_term", "implied_constant",
              "predicted_factor", "lhs_factor", "rhs_factor"]
    out.csv("scaling.csv", header, [[getattr(r, k) for k in header] for r in rep.rows])
    out.csv("plot.csv", ["x", "y"], [[r.lam, r.lhs] for r in rep.rows])
    return True


_HANDLERS = {
    "solve": _cmd_solve, "seminorm": _cmd_seminorm, "dualnorm": _cmd_dualnorm,
    "kfunc": _cmd_kfunc, "verify-energy": _cmd_verify_energy,
    "verify-sobolev": _cmd_verify_sobolev, "sweep-sharpness": _cmd_sweep,
    "check-scaling": _cmd_scaling,
}


def _set_threads(n: int) -> None:
    import numba
    n = max(1, min(n, numba.config.NUMBA_NUM_THREADS))
    if n != numba.config.NUMBA_NUM_THREADS:
        numba.config.THREADING_LAYER = "workqueue"
        numba.set_num_threads(n)


def run_config(cfg: RunConfig) -> tuple[int, list[Path]]:
    """Run one command; return ``(status, written files)``.

    Status 0 means the run finished and every solver converged, 1 means it
    finished with an unconverged solver.
    """
    _set_threads(cfg.threads)
    np.random.seed(cfg.seed)
    out = _Out(Path(cfg.out), cfg.command)
    ok = _HANDLERS[cfg.command](cfg, out)
    cfg_path = Path(cfg.out) / f"{cfg.command}.ini"
    cfg_path.write_text(cfg.to_text())
    out.files.append(cfg_path)
    return (0 if ok else 1), out.files


def main(argv: list[str] | None = None) -> int:
    ap = argparse.ArgumentParser(prog="plapbench", description=__doc__.splitlines()[0])
    ap.add_argument("command", choices=COMMANDS)
    ap.add_argument("--config", help="config file with [run] and per-command blocks")
    ap.add_argument("--out", help="output directory (overrides [run] out)")
    ap.add_argument("--seed", type=int, help="random seed (overrides [run] seed)")
    ap.add_argument("--threads", type=int, help="threads for compiled kernels")
    ap.add_argument("--print-schema", action="store_true", help="print the config schema and exit")
    args = ap.parse_args(argv)
    if args.print_schema:
        print(json.dumps(schema_document(), indent=2))
        return 0
    try:
        text = Path(args.config).read_text() if args.config else ""
        cfg = RunConfig.from_text(text, args.command, seed=args.seed, out=args.out,
                                  threads=args.threads)
        status, files = run_config(cfg)
    except (ConfigError, ValueError, OSError) as err:
        print(f"plapbench: error: {err}", file=sys.stderr)
        return 2
    for f in files:
        print(f)
    return status


if __name__ == "__main__":
    sys.exit(main())
