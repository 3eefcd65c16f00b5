"""Command-line driver: ``fbsns <subcommand> [--config FILE] [flags]``.

Every run writes its fields (binary format of ``fbsns.io``), CSV tables and
``manifest.json`` (config echo, code version, wall time, key results and
sha256 checksums of every output file) into the output directory.  The
directory is ``--output``, else ``output.dir``, else ``$FBSNS_OUTPUT_DIR/<subcommand>``,
else ``./fbsns-out/<subcommand>``.

Exit codes: 0 success, 1 solver failure, 2 invalid configuration.
"""

from __future__ import annotations

import argparse
import copy
import hashlib
import json
import math
import os
import sys
import time
import warnings
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from .burgers import BurgersProblem, cole_hopf_oracle, energy_identity_check, max_principle_check, solve_burgers
from .config import PRESETS, SUBCOMMANDS, RunConfig, load_config_file, parse_config, set_path
from .exceptions import ConfigError, MaxPrincipleViolation, PicardDivergenceError
from .fbscheme import SchemeConfig, run_grid_scheme
from .fields import Grid, VectorField, l2_norm, sup_norm, upsample
from .io import load_field, save_field, write_table_csv
from .lagrangian import measure_preservation_check, webber_velocity
from .leray import (
    TruncationSpec,
    leray_complement,
    p_eps_bound_check,
    pressure_gradient_exact,
    pressure_gradient_mc,
    pressure_gradient_mc_triple,
    pressure_gradient_truncated_exact,
)
from .navier_stokes import NsProblem, convergence_study, divergence_report, reynolds_monitor, solve_ns, taylor_green_exact
from .presets import random_bandlimited, random_solenoidal, taylor_green
from .spacetime import SpaceTimeField
from .stochastic import RngStream, log_quadrature

__all__ = ["main", "build_parser", "run", "ENV_OUTPUT_DIR", "EXIT_OK", "EXIT_SOLVER", "EXIT_CONFIG"]

ENV_OUTPUT_DIR = "FBSNS_OUTPUT_DIR"
EXIT_OK, EXIT_SOLVER, EXIT_CONFIG = 0, 1, 2
MANIFEST_VERSION = 1

# flag name -> (config key path, type, help)
_COMMON_FLAGS = {
    "dim": ("grid.dim", int, "spatial dimension"),
    "n": ("grid.n", int, "points per axis"),
    "period": ("grid.period", float, "box period L"),
    "T": ("time.T", float, "terminal time"),
    "steps": ("time.steps", int, "time steps"),
    "nu": ("physics.nu", float, "viscosity"),
    "preset": ("field.preset", str, f"input field: {', '.join(PRESETS)}"),
    "amplitude": ("field.amplitude", float, "preset amplitude"),
    "kmax": ("field.kmax", int, "band limit of random presets"),
    "field-seed": ("field.seed", int, "seed of random presets"),
    "input": ("field.path", str, "input field file (binary format) for preset 'file'"),
    "seed": ("sampling.seed", int, "Monte Carlo seed"),
    "stream": ("sampling.stream", int, "Monte Carlo stream id"),
    "n-jobs": ("sampling.n_jobs", int, "worker threads"),
    "output": ("output.dir", str, "output directory"),
}
_SUB_FLAGS = {
    "leray": {
        "N": ("truncation.N", float, "truncation level"),
        "eps": ("truncation.eps", float, "one-sided regularization (replaces N)"),
        "M": ("sampling.M", int, "Monte Carlo samples"),
        "K": ("sampling.K", int, "time-quadrature nodes"),
        "estimator": ("leray.estimator", str, "exact | truncated | single | triple | both"),
        "seeds": ("checks.seeds", int, "random field pairs for the P^eps bound sweep"),
    },
    "burgers": {
        "alpha": ("physics.alpha", float, "nonlinearity coefficient"),
        "tol": ("solver.tol", float, "Picard tolerance"),
        "max-iter": ("solver.max_iter", int, "Picard iteration cap"),
        "seeds": ("checks.seeds", int, "random data sets for the maximum-principle sweep"),
    },
    "ns": {
        "mode": ("solver.mode", str, "exact | truncated_multiplier | monte_carlo"),
        "N": ("truncation.N", float, "truncation level"),
        "M": ("sampling.M", int, "Monte Carlo samples (monte_carlo mode)"),
        "K": ("sampling.K", int, "time-quadrature nodes"),
        "tol": ("solver.tol", float, "Picard tolerance"),
        "max-iter": ("solver.max_iter", int, "Picard iteration cap"),
    },
    "scheme": {
        "h": ("scheme.h", float, "time step"),
        "N": ("truncation.N", float, "truncation level"),
        "Q": ("sampling.Q", int, "Gauss-Hermite nodes per axis"),
        "expectation": ("scheme.expectation", str, "gauss_hermite | monte_carlo"),
        "interpolation": ("scheme.interpolation", str, "linear | cubic"),
        "pressure": ("scheme.pressure", str, "multiplier | mc_triple | off"),
    },
    "lagrangian": {
        "M": ("sampling.M", int, "paths per evaluation point"),
        "t": ("lagrangian.t", float, "evaluation time"),
        "eval-n": ("lagrangian.eval_n", int, "evaluation grid points per axis"),
        "upsample": ("lagrangian.upsample", int, "spectral upsampling of the velocity tables"),
        "measure-points": ("lagrangian.measure_points", int, "seed points of the measure test (0 skips it)"),
    },
    "convergence": {
        "N-list": ("convergence.N_list", None, "comma-separated truncation levels"),
    },
}

# boolean switches: flag name -> (config key path, help)
_REFINE = ("checks.refine", "also run at doubled resolution and report the refinement ratios")
_SWITCHES = {
    "ns": {"forward": ("solver.forward", "treat the preset as a forward initial datum and write forward-time output")},
    "burgers": {"refine": _REFINE},
    "scheme": {"refine": _REFINE},
    "lagrangian": {"refine": ("checks.refine", "also run at 2x and 4x the step count on one Brownian path and report the bias ratio")},
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fbsns", description="Probabilistic Navier-Stokes and Burgers solvers.")
    parser.add_argument("--version", action="version", version=f"fbsns {__version__}")
    subs = parser.add_subparsers(dest="subcommand", required=True)
    for name in SUBCOMMANDS:
        p = subs.add_parser(name, help=f"run the {name} experiment")
        p.add_argument("--config", help="YAML config file or a previous manifest.json")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override any config key (YAML value)")
        for flag, (key, typ, help_) in {**_COMMON_FLAGS, **_SUB_FLAGS.get(name, {})}.items():
            kw = {"type": typ} if typ is not None else {}
            p.add_argument(f"--{flag}", dest=key, default=argparse.SUPPRESS, help=f"{help_} [{key}]", **kw)
        for flag, (key, help_) in _SWITCHES.get(name, {}).items():
            p.add_argument(f"--{flag}", dest=key, action="store_true", default=argparse.SUPPRESS, help=f"{help_} [{key}]")
    return parser


def _flags(ns: argparse.Namespace) -> dict:
    flags = {k: v for k, v in vars(ns).items() if "." in k}
    if "convergence.N_list" in flags:
        try:
            flags["convergence.N_list"] = [float(x) for x in str(flags["convergence.N_list"]).split(",")]
        except ValueError as exc:
            raise ConfigError("convergence.N_list", f"cannot parse {flags['convergence.N_list']!r}") from exc
    for item in ns.set:
        if "=" not in item:
            raise ConfigError(item, "--set expects KEY=VALUE")
        key, value = item.split("=", 1)
        flags[key.strip()] = yaml.safe_load(value)
    return flags


# ----------------------------------------------------------------------------- inputs


def _refined(cfg: RunConfig, **changes) -> RunConfig:
    """Copy of ``cfg`` with dotted keys (``__`` for ``.``) replaced."""
    data = copy.deepcopy(cfg.data)
    for key, value in changes.items():
        set_path(data, key.replace("__", "."), value)
    return RunConfig(cfg.subcommand, data, cfg.overrides)


def _grid(cfg: RunConfig) -> Grid:
    return Grid(cfg["grid.dim"], cfg["grid.n"], cfg["grid.period"])


def _field(cfg: RunConfig) -> VectorField:
    g = _grid(cfg)
    preset, amp = cfg["field.preset"], cfg["field.amplitude"]
    if preset == "taylor-green":
        return taylor_green(g, amp)
    if preset in ("random-bandlimited", "random", "heat"):
        return random_bandlimited(g, cfg["field.seed"], cfg["field.kmax"], amp)
    if preset == "random-solenoidal":
        return random_solenoidal(g, cfg["field.seed"], cfg["field.kmax"], amp)
    if preset == "cole-hopf-1d":
        return VectorField(g, amp * np.sin(2 * np.pi * g.coords()[0] / g.L)[None])
    if preset == "zero":
        return VectorField.zeros(g)
    try:
        f = load_field(cfg["field.path"])
    except (OSError, ValueError) as exc:
        raise ConfigError("field.path", str(exc)) from exc
    if not isinstance(f, VectorField) or f.grid != g:
        raise ConfigError("field.path", f"file holds {f.grid}, config expects {g}")
    return f


def _spec(cfg: RunConfig) -> TruncationSpec:
    try:
        if cfg["truncation.eps"] is not None:
            return TruncationSpec(eps=cfg["truncation.eps"])
        return TruncationSpec(N=cfg["truncation.N"])
    except ValueError as exc:
        raise ConfigError("truncation", str(exc)) from exc


def _stream(cfg: RunConfig) -> RngStream:
    return RngStream(cfg["sampling.seed"], cfg["sampling.stream"])


def _times(cfg: RunConfig) -> np.ndarray:
    return np.linspace(0.0, cfg["time.T"], cfg["time.steps"] + 1)


def _snapshot_indices(n_times: int, count: int) -> list[int]:
    if count <= 0:
        return []
    return sorted(set(np.linspace(0, n_times - 1, min(count, n_times)).round().astype(int).tolist()))


def _write_snapshots(out: Path, sol: SpaceTimeField, count: int, forward: bool = False) -> list[dict]:
    rows = []
    for k in _snapshot_indices(len(sol), count):
        t = float(sol.times[k])
        f = sol.fields[k]
        if forward:
            t = sol.T - t
            f = -f
        name = f"u_{k:05d}.fbsd"
        save_field(out / name, f)
        rows.append({"index": k, "time": repr(t), "file": name})
    return rows


# ----------------------------------------------------------------------------- runners


def _p_eps_sweep(cfg: RunConfig, out: Path) -> dict:
    """The P^eps norm bound over ``checks.seeds`` random band-limited pairs."""
    g = _grid(cfg)
    eps_list = [cfg["truncation.eps"]] if cfg["truncation.eps"] is not None else [0.1, 0.01]
    base, kmax, amp = cfg["field.seed"], cfg["field.kmax"], cfg["field.amplitude"]
    rows, violations, slack = [], 0, math.inf
    for eps in eps_list:
        for k in range(cfg["checks.seeds"]):
            phi = random_bandlimited(g, base + 2 * k, kmax, amp)
            psi = random_bandlimited(g, base + 2 * k + 1, kmax, amp)
            rep = p_eps_bound_check(phi, psi, eps, strict=False)
            violations += not rep.holds
            rows.append({"eps": eps, "pair": k, "lhs": repr(rep.lhs), "rhs": repr(rep.rhs), "slack": repr(float(rep.slack))})
            slack = min(slack, rep.slack)
    write_table_csv(out / "p_eps_bound.csv", rows)
    return {"p_eps_checks": len(rows), "p_eps_violations": violations, "p_eps_min_slack": slack}


def _run_leray(cfg: RunConfig, out: Path) -> dict:
    u = _field(cfg)
    kind = cfg["leray.estimator"]
    exact = pressure_gradient_exact(u, u)
    g = u.grid
    uh = g.fft(u.components)
    conv = np.stack([sum(u.components[j] * g.ifft(1j * g.xi_d[j] * uh[i]) for j in range(g.dim)) for i in range(g.dim)])
    div_uu = np.stack([sum(g.ifft(1j * g.xi_d[j] * g.fft(u.components[i] * u.components[j])) for j in range(g.dim)) for i in range(g.dim)])
    ref_norm = l2_norm(exact) or 1.0
    res = {
        "exact_vs_minus_convection": l2_norm(exact + VectorField(g, conv)) / ref_norm,
        "exact_vs_minus_gradient_part": l2_norm(exact + leray_complement(VectorField(g, div_uu))) / ref_norm,
    }
    if cfg["checks.seeds"] > 0:
        res.update(_p_eps_sweep(cfg, out))
    if kind == "exact":
        save_field(out / "pressure_gradient.fbsd", exact)
        return res
    spec = _spec(cfg)
    oracle = pressure_gradient_truncated_exact(u, u, spec)
    save_field(out / "oracle.fbsd", oracle)
    res["truncated_vs_exact"] = l2_norm(oracle - exact) / ref_norm
    if kind == "truncated":
        return res
    if spec.N is None:
        raise ConfigError("truncation.eps", "Monte Carlo estimators need a finite window; set truncation.N")
    kw = dict(antithetic=cfg["sampling.antithetic"], batch_size=cfg["sampling.batch_size"], n_jobs=cfg["sampling.n_jobs"])
    M, K, stream = cfg["sampling.M"], cfg["sampling.K"], _stream(cfg)
    ests = {}
    if kind in ("single", "both"):
        ests["single"] = pressure_gradient_mc(u, u, spec, log_quadrature(*spec.interval, K=K), M, stream, **kw)
    if kind in ("triple", "both"):
        # an independent stream so the two estimators can be compared by their combined stderr
        ts = stream.split(1) if kind == "both" else stream
        ests["triple"] = pressure_gradient_mc_triple(u, u, spec, log_quadrature(*spec.triple_interval, K=K), M, ts, **kw)
    idx = np.indices(g.shape).reshape(g.dim, -1).T
    for name, est in ests.items():
        prefix = "" if len(ests) == 1 else f"{name}_"
        save_field(out / f"{prefix}mean.fbsd", est.mean)
        save_field(out / f"{prefix}stderr.fbsd", est.stderr)
        z = est.z_scores(oracle)
        rows = []
        for c in range(g.dim):
            m, o, se, zc = (a[c].ravel() for a in (est.mean.components, oracle.components, est.stderr.components, z))
            for node, mi, oi, si, zi in zip(idx, m, o, se, zc):
                rows.append({**{f"i{a}": int(node[a]) for a in range(g.dim)}, "component": c, "estimate": repr(float(mi)), "oracle": repr(float(oi)), "error": repr(float(mi - oi)), "stderr": repr(float(si)), "z": repr(float(zi))})
        write_table_csv(out / f"{prefix}nodes.csv", rows)
        res[f"{prefix}z_rms"] = float(np.sqrt(np.mean(z**2)))
        res[f"{prefix}fraction_within_3_stderr"] = float(np.mean(np.abs(z) <= 3))
        res[f"{prefix}relative_l2_error"] = l2_norm(est.mean - oracle) / (l2_norm(oracle) or 1.0)
        res[f"{prefix}samples"] = est.samples
    if kind == "both":
        a, b = ests["single"], ests["triple"]
        se = np.hypot(a.stderr.components, b.stderr.components)
        with np.errstate(divide="ignore", invalid="ignore"):
            zd = np.where(se > 0, np.abs(a.mean.components - b.mean.components) / se, 0.0)
        res["agreement_max_z"] = float(zd.max())
        res["agreement_within_3_stderr"] = float(np.mean(zd <= 3))
    return res


def _burgers_alpha(cfg: RunConfig) -> float:
    return 0.0 if cfg["field.preset"] == "heat" else cfg["physics.alpha"]


def _solve_burgers(cfg: RunConfig, phi: VectorField | None = None):
    psi = _field(cfg)
    alpha = _burgers_alpha(cfg)
    problem = BurgersProblem(psi, cfg["physics.nu"], cfg["time.T"], _times(cfg), alpha=alpha, phi=phi)
    sol = solve_burgers(problem, tol=cfg["solver.tol"], max_iter=cfg["solver.max_iter"])
    oracle = None
    if cfg["field.preset"] == "cole-hopf-1d" and alpha == 1.0 and phi is None:
        oracle = cole_hopf_oracle(psi, problem.nu, problem.T, problem.time_grid)
    return problem, sol, oracle


def _linf_error(sol: SpaceTimeField, oracle: SpaceTimeField) -> float:
    return max(float(np.max(np.abs(a.components - b.components))) for a, b in zip(sol.fields, oracle.fields))


def _max_principle_sweep(cfg: RunConfig, out: Path) -> dict:
    """Maximum principle on random terminal data and forcing, with and without the nonlinearity."""
    g, amp, kmax = _grid(cfg), cfg["field.amplitude"], cfg["field.kmax"]
    alphas = sorted({0.0, cfg["physics.alpha"]})
    rows, violations, slack = [], 0, math.inf
    for k in range(cfg["checks.seeds"]):
        psi = random_bandlimited(g, cfg["field.seed"] + k, kmax, amp)
        phi = random_bandlimited(g, 1000 + cfg["field.seed"] + k, kmax, 0.4 * amp)
        for alpha in alphas:
            problem = BurgersProblem(psi, cfg["physics.nu"], cfg["time.T"], _times(cfg), alpha=alpha, phi=phi)
            sol = solve_burgers(problem, tol=cfg["solver.tol"], max_iter=cfg["solver.max_iter"])
            try:
                s_k = max_principle_check(problem, sol).min_slack
            except MaxPrincipleViolation:
                violations, s_k = violations + 1, -math.inf
            slack = min(slack, s_k)
            rows.append({"seed": cfg["field.seed"] + k, "alpha": alpha, "min_slack": repr(float(s_k))})
    write_table_csv(out / "max_principle.csv", rows)
    finite = [float(r["min_slack"]) for r in rows if math.isfinite(float(r["min_slack"]))]
    return {"max_principle_solves": len(rows), "max_principle_violations": violations, "max_principle_sweep_min_slack": min(finite) if finite else math.nan}


def _run_burgers(cfg: RunConfig, out: Path) -> dict:
    problem, sol, oracle = _solve_burgers(cfg)
    mp = max_principle_check(problem, sol)
    energy = energy_identity_check(problem, sol, 0)
    rows = []
    for k, (t, f) in enumerate(zip(sol.times, sol.fields)):
        row = {"time": repr(float(t)), "l2": repr(l2_norm(f)), "sup": repr(sup_norm(f)), "energy_lhs": repr(float(energy.lhs[k])), "energy_rhs": repr(float(energy.rhs[k]))}
        if oracle is not None:
            row["oracle_linf_error"] = repr(float(np.max(np.abs(f.components - oracle.fields[k].components))))
        rows.append(row)
    write_table_csv(out / "diagnostics.csv", rows)
    write_table_csv(out / "snapshots.csv", _write_snapshots(out, sol, cfg["solver.snapshots"]))
    res = {"iterations": sol.iterations, "final_residual": sol.final_residual, "max_principle_min_slack": mp.min_slack, "energy_residual": energy.residual}
    if oracle is not None:
        res["oracle_linf_error"] = _linf_error(sol, oracle)
    if cfg["checks.refine"]:
        fine = _refined(cfg, grid__n=2 * cfg["grid.n"], time__steps=2 * cfg["time.steps"])
        fp, fs, fo = _solve_burgers(fine)
        res["fine_energy_residual"] = energy_identity_check(fp, fs, 0).residual
        res["energy_residual_ratio"] = res["energy_residual"] / res["fine_energy_residual"]
        if fo is not None:
            res["fine_oracle_linf_error"] = _linf_error(fs, fo)
            res["oracle_error_ratio"] = res["oracle_linf_error"] / res["fine_oracle_linf_error"]
    if cfg["checks.seeds"] > 0:
        res.update(_max_principle_sweep(cfg, out))
    return res


def _ns_problem(cfg: RunConfig, forward: bool = False) -> NsProblem:
    G = _field(cfg)
    if forward:
        G = -G
    return NsProblem(G, cfg["physics.nu"], cfg["time.T"], _times(cfg))


def _run_ns(cfg: RunConfig, out: Path) -> dict:
    forward = cfg["solver.forward"]
    problem = _ns_problem(cfg, forward)
    mode = cfg["solver.mode"]
    kw = {}
    if mode != "exact":
        spec = _spec(cfg)
        if spec.N is None:
            raise ConfigError("truncation.eps", "the truncated solver needs truncation.N")
        problem = problem.with_truncation(spec)
        if mode == "monte_carlo":
            kw = dict(M=cfg["sampling.M"], quad=log_quadrature(*spec.interval, K=cfg["sampling.K"]), stream=_stream(cfg))
    sol = solve_ns(problem, projection_mode=mode, tol=cfg["solver.tol"], max_iter=cfg["solver.max_iter"], dealias=cfg["solver.dealias"], **kw)
    div = divergence_report(sol)
    ms = cfg["reynolds.m"]
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        reps = {m: reynolds_monitor(problem, sol, m=m, R0=cfg["reynolds.R0"]) for m in ms}
    rows = []
    for k, (t, f) in enumerate(zip(sol.times, sol.fields)):
        row = {"time": repr(float(sol.T - t) if forward else float(t)), "energy": repr(0.5 * l2_norm(f) ** 2)}
        for m in ms:
            row[f"H{m}_norm"] = repr(float(reps[m].norms[k]))
        row["divergence"] = repr(float(div[k]))
        row["reynolds"] = repr(reps[ms[0]].R)
        rows.append(row)
    if forward:
        rows.reverse()
    write_table_csv(out / "diagnostics.csv", rows)
    write_table_csv(out / "snapshots.csv", _write_snapshots(out, sol, cfg["solver.snapshots"], forward))
    res = {"iterations": sol.iterations, "final_residual": sol.final_residual, "max_divergence": float(div.max()), "forward": forward}
    for m in ms:
        res[f"reynolds_m{m}"] = reps[m].R
        res[f"reynolds_m{m}_status"] = reps[m].status
    if cfg["field.preset"] == "taylor-green" and mode == "exact":
        ref = taylor_green_exact(problem.G, problem.nu, sol.times)
        res["taylor_green_l2_error"] = max(l2_norm(a - b) for a, b in zip(sol.fields, ref.fields))
    return res


def _run_convergence(cfg: RunConfig, out: Path) -> dict:
    problem = _ns_problem(cfg)
    rep = convergence_study(problem, cfg["convergence.N_list"], tol=cfg["solver.tol"], max_iter=cfg["solver.max_iter"], dealias=cfg["solver.dealias"])
    write_table_csv(out / "convergence.csv", [{"N": r["N"], "error": repr(r["error"]), "stderr": r.get("stderr", "")} for r in rep.rows()])
    return {"N_values": list(rep.N_values), "errors": list(rep.errors), "slope": rep.slope, "strictly_decreasing": rep.strictly_decreasing, "failed": list(rep.failed), "reference_norm": rep.reference_norm}


def _scheme_level(cfg: RunConfig, spec: TruncationSpec, with_reference: bool):
    problem = _ns_problem(cfg)
    sc = SchemeConfig(
        h=cfg["scheme.h"], N=spec.N, expectation_rule=cfg["scheme.expectation"], Q=cfg["sampling.Q"], M=cfg["scheme.M"],
        interpolation=cfg["scheme.interpolation"], pressure=cfg["scheme.pressure"], pressure_M=cfg["sampling.M"], pressure_K=cfg["sampling.K"],
        seed=cfg["sampling.seed"],
    )
    sol = run_grid_scheme(problem, sc, n_jobs=cfg["sampling.n_jobs"])
    ref = None
    if with_reference:
        mild = NsProblem(problem.G, problem.nu, problem.T, sol.times, truncation=spec)
        ref = solve_ns(mild, "truncated_multiplier", tol=cfg["solver.tol"], max_iter=cfg["solver.max_iter"])
    return problem, sol, ref


def _scheme_constant(problem: NsProblem, h: float, distance: float) -> float:
    """``distance / (||G|| (h + delta^2))``, the constant of the first-order error bound."""
    return distance / l2_norm(problem.G) / (h + problem.grid.spacing**2)


def _run_scheme(cfg: RunConfig, out: Path) -> dict:
    spec = _spec(cfg)
    if spec.N is None:
        raise ConfigError("truncation.eps", "the grid scheme needs truncation.N")
    refine = cfg["checks.refine"]
    problem, sol, ref = _scheme_level(cfg, spec, cfg["scheme.reference"] or refine)
    rows = []
    for k, (t, f) in enumerate(zip(sol.times, sol.fields)):
        row = {"time": repr(float(t)), "energy": repr(0.5 * l2_norm(f) ** 2)}
        if ref is not None:
            row["distance_to_mild"] = repr(l2_norm(f - ref.fields[k]))
        rows.append(row)
    write_table_csv(out / "steps.csv", rows)
    write_table_csv(out / "snapshots.csv", _write_snapshots(out, sol, cfg["solver.snapshots"]))
    res = {"steps": len(sol) - 1}
    if ref is not None:
        res["distance_to_mild"] = max(l2_norm(a - b) for a, b in zip(sol.fields, ref.fields))
    if refine:
        # delta halves and h quarters, so h + delta^2 shrinks by four
        fine = _refined(cfg, grid__n=2 * cfg["grid.n"], scheme__h=cfg["scheme.h"] / 4)
        fp, fs, fr = _scheme_level(fine, spec, True)
        res["fine_distance_to_mild"] = max(l2_norm(a - b) for a, b in zip(fs.fields, fr.fields))
        res["C_coarse"] = _scheme_constant(problem, cfg["scheme.h"], res["distance_to_mild"])
        res["C_fine"] = _scheme_constant(fp, fine["scheme.h"], res["fine_distance_to_mild"])
        res["C_drift"] = res["C_fine"] / res["C_coarse"] - 1.0
    return res


def _run_lagrangian(cfg: RunConfig, out: Path) -> dict:
    problem = _ns_problem(cfg)
    u = solve_ns(problem, "exact", tol=cfg["solver.tol"], max_iter=cfg["solver.max_iter"])
    t = cfg["lagrangian.t"]
    eg = Grid(problem.grid.dim, cfg["lagrangian.eval_n"], problem.grid.L)
    steps = max(1, int(round(cfg["time.steps"] * (problem.T - t) / problem.T)))
    r = webber_velocity(
        problem.G, u, problem.nu, t, cfg["sampling.M"], steps, _stream(cfg), eval_grid=eg,
        upsample_factor=cfg["lagrangian.upsample"], batch_size=cfg["sampling.batch_size"], with_gauge=cfg["lagrangian.gauge"],
    )
    _, ref_vals = _resample(u.at(t), eg)
    ref = VectorField(eg, ref_vals)
    save_field(out / "estimate.fbsd", r.estimate.mean)
    save_field(out / "stderr.fbsd", r.estimate.stderr)
    res = {
        "relative_gap": r.relative_gap(ref),
        "relative_stderr": r.relative_stderr(ref),
        "allowance_dt_plus_delta2": (problem.T - t) / steps + problem.grid.spacing**2,
        "det_min": r.det_min,
        "n_steps": steps,
    }
    if r.decomposition is not None:
        res["decomposition_gap"] = l2_norm(r.decomposition.mean - ref) / l2_norm(ref)
        res["decomposition_stderr"] = l2_norm(r.decomposition.stderr) / l2_norm(ref)
        save_field(out / "gauge.fbsd", r.gauge.mean)
    if cfg["lagrangian.measure_points"] > 0:
        m = measure_preservation_check(u, problem.nu, t, cfg["lagrangian.measure_points"], steps, _stream(cfg).split(1), cells=cfg["lagrangian.cells"])
        res.update(measure_z_max=m.z_max, measure_passed=m.passed)
    if cfg["checks.refine"]:
        res.update(_lagrangian_refinement(cfg, problem, u, eg, ref, steps))
    write_table_csv(out / "report.csv", [{"quantity": k, "value": repr(v)} for k, v in res.items()])
    return res


def _lagrangian_refinement(cfg: RunConfig, problem: NsProblem, u: SpaceTimeField, eg: Grid, ref: VectorField, steps: int) -> dict:
    """Step counts ``S, 2S, 4S`` driven by one Brownian path resolved at ``4S``.

    With a first-order bias the successive differences of the means shrink by two.
    """
    t = cfg["lagrangian.t"]
    res, means = {}, []
    for mult in (1, 2, 4):
        S = mult * steps
        r = webber_velocity(
            problem.G, u, problem.nu, t, cfg["sampling.M"], S, _stream(cfg), eval_grid=eg,
            upsample_factor=cfg["lagrangian.upsample"], batch_size=cfg["sampling.batch_size"], noise_steps=4 * steps,
        )
        means.append(r.estimate.mean)
        gap, se = r.relative_gap(ref), r.relative_stderr(ref)
        bound = 3 * se + (problem.T - t) / S + problem.grid.spacing**2
        res[f"S{S}_gap"] = gap
        res[f"S{S}_bound"] = bound
        res[f"S{S}_within_bound"] = bool(gap <= bound)
    res["bias_ratio"] = l2_norm(means[0] - means[1]) / l2_norm(means[1] - means[2])
    return res


def _resample(f: VectorField, target: Grid) -> tuple[Grid, np.ndarray]:
    """Spectral restriction or prolongation of a band-limited field onto ``target``."""
    g = f.grid
    if target.n >= g.n:
        if target.n % g.n:
            raise ValueError("target grid must be a multiple or divisor of the source grid")
        return upsample(np.asarray(f.components), g, target.n // g.n)
    if g.n % target.n:
        raise ValueError("target grid must be a multiple or divisor of the source grid")
    step = g.n // target.n
    sl = (slice(None),) + (slice(None, None, step),) * g.dim
    return target, np.asarray(f.components)[sl]


_RUNNERS = {
    "leray": _run_leray,
    "burgers": _run_burgers,
    "ns": _run_ns,
    "convergence": _run_convergence,
    "scheme": _run_scheme,
    "lagrangian": _run_lagrangian,
}


def _output_dir(cfg: RunConfig) -> Path:
    if cfg["output.dir"]:
        return Path(cfg["output.dir"])
    env = os.environ.get(ENV_OUTPUT_DIR)
    root = Path(env) if env else Path("fbsns-out")
    return root / cfg.subcommand


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _jsonable(v):
    if isinstance(v, dict):
        return {k: _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, np.generic):
        v = v.item()
    if isinstance(v, float) and not math.isfinite(v):
        return repr(v)
    return v


def _previous_files(path) -> dict | None:
    """Checksums listed in a manifest used as the config, else ``None``."""
    try:
        doc = json.loads(Path(path).read_text())
    except (OSError, ValueError):
        return None
    files = doc.get("files") if isinstance(doc, dict) else None
    return files if isinstance(files, dict) else None


def run(cfg: RunConfig, expected_files: dict | None = None) -> tuple[int, dict]:
    """Execute ``cfg`` and write the manifest; returns ``(exit_code, manifest)``.

    With ``expected_files`` (checksums of an earlier run) the manifest records
    whether this run ``reproduced`` them byte for byte.
    """
    out = _output_dir(cfg)
    out.mkdir(parents=True, exist_ok=True)
    old = out / "manifest.json"
    if old.exists():
        # drop the previous run's outputs so checksums cover this run only
        try:
            listed = json.loads(old.read_text()).get("files", {})
        except (OSError, ValueError):
            listed = {}
        for name in listed:
            (out / Path(name).name).unlink(missing_ok=True)
        old.unlink()
    t0 = time.perf_counter()
    status, error, results = "ok", None, {}
    code = EXIT_OK
    try:
        results = _RUNNERS[cfg.subcommand](cfg, out)
    except (PicardDivergenceError, MaxPrincipleViolation) as exc:
        status, code = "solver_failed", EXIT_SOLVER
        error = {"type": type(exc).__name__, "message": str(exc), "residuals": list(getattr(exc, "residuals", []))}
    wall = time.perf_counter() - t0
    files = {p.name: _sha256(p) for p in sorted(out.iterdir()) if p.is_file() and p.name != "manifest.json"}
    manifest = {
        "manifest_version": MANIFEST_VERSION,
        "package": "fbsns",
        "version": __version__,
        "subcommand": cfg.subcommand,
        "status": status,
        "config": cfg.to_dict(),
        "overrides": list(cfg.overrides),
        "seed": cfg["sampling.seed"],
        "stream": cfg["sampling.stream"],
        "wall_time_s": wall,
        "results": _jsonable(results),
        "files": files,
    }
    if expected_files is not None:
        manifest["reproduced"] = files == expected_files
    if error is not None:
        manifest["error"] = _jsonable(error)
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))
    return code, manifest


def main(argv=None) -> int:
    parser = build_parser()
    try:
        ns = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else EXIT_OK
    try:
        file_data = load_config_file(ns.config) if ns.config else {}
        cfg = parse_config(ns.subcommand, file_data, _flags(ns))
        expected = _previous_files(ns.config) if ns.config else None
        code, manifest = run(cfg, expected)
    except (ConfigError, ValueError) as exc:
        # invalid inputs surface as ValueError from the solvers' own checks
        print(f"fbsns: invalid configuration: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    out = _output_dir(cfg)
    if code == EXIT_OK:
        summary = ", ".join(f"{k}={v}" for k, v in manifest["results"].items() if not isinstance(v, (list, dict)))
        print(f"fbsns {cfg.subcommand}: ok ({manifest['wall_time_s']:.2f} s) -> {out}\n  {summary}")
        if "reproduced" in manifest:
            print(f"  reproduced={manifest['reproduced']} ({len(expected)} files compared)")
    else:
        print(f"fbsns {cfg.subcommand}: solver failed: {manifest['error']['message']}", file=sys.stderr)
    return code


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
