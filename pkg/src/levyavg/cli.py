"""Command-line entry point.

One binary, eight subcommands: hypotheses, average, simulate, converge,
khasminskii, window, moments, validate-noise.  A run resolves its
configuration (defaults < config file < flags), hashes the resolved
document, and writes everything into an output directory namespaced by
that hash, so identical configs land in the same place and reruns are
byte-comparable.  Wall-clock timings go to a sidecar CSV; results.csv
holds only deterministic columns.

Exit codes: 0 success, 2 validation/verdict failure, 1 error,
64 usage, 65 stale cache, 66 unreadable config.
"""

from __future__ import annotations

import argparse
import datetime
import hashlib
import json
import os
import re
import sys
from pathlib import Path

import numpy as np

from . import __version__
from . import rng as rngmod
from .averaging import AveragedCoefficient, FbarConfig, build_fbar_table
from .errors import LevyAvgError, StaleCache
from .harness import (StudyConfig, averaging_window_study, khasminskii_study,
                      moment_and_regularity_study, strong_error_study)
from .levy_noise import JumpMeasure, LevyTriplet, generate_noise, validate_noise
from .model import load_model, verify_hypotheses
from .parallel import default_threads
from .simulate import TimeGrid, simulate_coupled
from .levy_noise import NoiseBundle

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_VERDICT = 2
EXIT_USAGE = 64
EXIT_STALE = 65
EXIT_CONFIG = 66


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"{self.prog}: error: {message}\n")
        raise SystemExit(EXIT_USAGE)


# ---------------------------------------------------------------------------
# small grammar for flags
# ---------------------------------------------------------------------------

_DYADIC = re.compile(r"^2\^-(\d+)$")
_DYADIC_RANGE = re.compile(r"^2\^-(\d+)\.\.2\^-(\d+)$")


def parse_eps(text: str):
    """'2^-4..2^-9', '2^-4', comma lists, or float literals."""
    m = _DYADIC_RANGE.match(text)
    if m:
        a, b = int(m.group(1)), int(m.group(2))
        step = 1 if b >= a else -1
        return [2.0 ** -k for k in range(a, b + step, step)]
    out = []
    for part in text.split(","):
        part = part.strip()
        m = _DYADIC.match(part)
        out.append(2.0 ** -int(m.group(1)) if m else float(part))
    return out


def parse_range(text: str):
    lo, hi = text.split("..")
    return float(lo), float(hi)


def parse_theta_grid(text: str):
    if ".." in text:
        spec, _, step = text.partition(":")
        lo, hi = parse_range(spec)
        st = float(step) if step else 1.0
        n = int(round((hi - lo) / st))
        return [lo + k * st for k in range(n + 1)]
    return [float(v) for v in text.split(",")]


def parse_triplet(text: str) -> LevyTriplet:
    """'rho,sigma,none' | 'rho,sigma,uniform:rate:low:high[:c]' |
    'rho,sigma,atoms:rate:z[:c]'."""
    rho_s, sigma_s, jump = text.split(",", 2)
    rho, sigma = float(rho_s), float(sigma_s)
    jump = jump.strip()
    if jump == "none":
        return LevyTriplet(drift=rho, sigma=sigma)
    kind, *args = jump.split(":")
    if kind == "uniform":
        rate, low, high = (float(a) for a in args[:3])
        c = float(args[3]) if len(args) > 3 else 1.0
        return LevyTriplet(drift=rho, sigma=sigma,
                           jump_measure=JumpMeasure.uniform(rate, low, high, c))
    if kind == "atoms":
        rate, z = float(args[0]), float(args[1])
        c = float(args[2]) if len(args) > 2 else 1.0
        return LevyTriplet(drift=rho, sigma=sigma,
                           jump_measure=JumpMeasure.atoms([z], [rate], c))
    raise ValueError(f"unknown jump spec {jump!r}")


def parse_p_list(text: str):
    return [int(v) for v in text.split(",")]


# ---------------------------------------------------------------------------
# manifests and run directories
# ---------------------------------------------------------------------------

def config_hash(cfg: dict) -> str:
    blob = json.dumps(cfg, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:12]


def make_run_dir(out_root: str, subcommand: str, cfg: dict) -> Path:
    run_dir = Path(out_root) / f"{subcommand}-{config_hash(cfg)}"
    run_dir.mkdir(parents=True, exist_ok=True)
    return run_dir


def write_manifest(run_dir: Path, subcommand: str, cfg: dict, outputs):
    manifest = {
        "tool": "levyavg",
        "version": __version__,
        "subcommand": subcommand,
        "config": cfg,
        "config_hash": config_hash(cfg),
        "master_seed": cfg.get("seed"),
        "created_utc": datetime.datetime.now(datetime.timezone.utc).isoformat(),
        "outputs": sorted(outputs),
    }
    with open(run_dir / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
    with open(run_dir / "study.json", "w") as fh:
        json.dump(cfg, fh, indent=2, sort_keys=True)


def _load_config_file(path):
    if path is None:
        return {}
    try:
        with open(path) as fh:
            return json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise _ConfigUnreadable(f"cannot read config {path}: {exc}") from exc


class _ConfigUnreadable(Exception):
    pass


def _resolve(args, file_cfg: dict, defaults: dict) -> dict:
    """defaults < config file < explicit flags."""
    cfg = dict(defaults)
    cfg.update({k: v for k, v in file_cfg.items() if k in defaults or k == "model_config"})
    for key in defaults:
        v = getattr(args, key.replace("-", "_"), None)
        if v is not None:
            cfg[key] = v
    return cfg


def _report(run_dir: Path, title: str, lines):
    with open(run_dir / "report.md", "w") as fh:
        fh.write(f"# {title}\n\n")
        for ln in lines:
            fh.write(ln + "\n")


def _study_config(cfg: dict) -> StudyConfig:
    delta_rule = cfg["delta_rule"]
    if isinstance(delta_rule, str) and delta_rule.startswith("fixed:"):
        delta_rule = float(delta_rule.split(":", 1)[1])
    return StudyConfig(
        eps_list=parse_eps(cfg["eps"]) if isinstance(cfg["eps"], str) else list(cfg["eps"]),
        p_list=parse_p_list(cfg["p"]) if isinstance(cfg["p"], str) else list(cfg["p"]),
        paths=int(cfg["paths"]),
        horizon=float(cfg["horizon"]),
        slow_step=float(cfg["step"]),
        delta_rule=delta_rule,
        master_seed=int(cfg["seed"]),
        threads=int(cfg["threads"]),
    )


def _get_model(cfg: dict):
    spec = cfg["model"]
    if isinstance(spec, str) and not spec.startswith("builtin:"):
        with open(spec) as fh:
            spec = json.load(fh)
    elif cfg.get("model_config"):
        spec = cfg["model_config"]
    return load_model(spec)


def _verdict_exit(verdicts: dict) -> int:
    bools = [v for v in verdicts.values() if isinstance(v, bool)]
    return EXIT_OK if all(bools) else EXIT_VERDICT


def _fbar_for(model, cfg: dict, run_dir: Path, outputs: list):
    cache = cfg.get("fbar_cache")
    if cache and Path(cache).exists():
        return AveragedCoefficient.load(cache)
    fb_cfg = FbarConfig(t_burn=float(cfg["fbar_burn"]), t_avg=float(cfg["fbar_avg"]),
                        replicas=int(cfg["fbar_replicas"]), step=float(cfg["fbar_step"]),
                        seed=int(cfg["seed"]))
    box = parse_range(cfg["fbar_box"]) if isinstance(cfg["fbar_box"], str) else cfg["fbar_box"]
    table = build_fbar_table(model, box, int(cfg["fbar_nodes"]), fb_cfg,
                             threads=int(cfg["threads"]))
    table.save(run_dir / "fbar.csv")
    outputs.append("fbar.csv")
    if cache:
        table.save(cache)
    return table


# ---------------------------------------------------------------------------
# subcommand handlers
# ---------------------------------------------------------------------------

_STUDY_DEFAULTS = {
    "model": "builtin:benchmark", "eps": "2^-4..2^-9", "p": "1,2", "paths": 100,
    "horizon": 1.0, "step": 1.0 / 32.0, "delta_rule": "khasminskii", "seed": 0,
    "threads": None, "out": "runs",
    "fbar_cache": None, "fbar_box": "-2..2", "fbar_nodes": 17,
    "fbar_replicas": 8, "fbar_avg": 400.0, "fbar_burn": 5.0, "fbar_step": 0.01,
}


def _finalize_study(run_dir: Path, subcmd: str, cfg: dict, table, outputs, extra_lines=()):
    table.to_csv(run_dir / "results.csv")
    table.timings_csv(run_dir / "timings.csv")
    outputs += ["results.csv", "timings.csv", "report.md", "manifest.json", "study.json"]
    lines = [f"- config hash: `{config_hash(cfg)}`"]
    for k, v in sorted(table.slopes.items()):
        lines.append(f"- slope {k}: {v:.4f}")
    for k, v in sorted(table.verdicts.items()):
        lines.append(f"- verdict {k}: {v}")
    lines += list(extra_lines)
    _report(run_dir, f"levyavg {subcmd}", lines)
    write_manifest(run_dir, subcmd, cfg, outputs)
    return _verdict_exit(table.verdicts)


def cmd_converge(args) -> int:
    # the fine slow step keeps the discretization floor (the sup-over-nodes
    # proxy gap) below the epsilon trend across the default ladder
    cfg = _resolve(args, _load_config_file(args.config),
                   dict(_STUDY_DEFAULTS, step=1.0 / 256.0, paths=200))
    if cfg["threads"] is None:
        cfg["threads"] = default_threads()
    run_dir = make_run_dir(cfg["out"], "converge", cfg)
    model = _get_model(cfg)
    outputs = []
    fbar = _fbar_for(model, cfg, run_dir, outputs)
    table = strong_error_study(model, fbar, _study_config(cfg))
    extra = [f"- fbar max stderr: {fbar.max_stderr():.3e}",
             f"- fbar domain exceeded: {fbar.domain_exceeded}"]
    return _finalize_study(run_dir, "converge", cfg, table, outputs, extra)


def cmd_khasminskii(args) -> int:
    cfg = _resolve(args, _load_config_file(args.config),
                   dict(_STUDY_DEFAULTS, eps="2^-4..2^-8", step=1.0 / 64.0))
    if cfg["threads"] is None:
        cfg["threads"] = default_threads()
    run_dir = make_run_dir(cfg["out"], "khasminskii", cfg)
    model = _get_model(cfg)
    table = khasminskii_study(model, _study_config(cfg))
    return _finalize_study(run_dir, "khasminskii", cfg, table, [])


def cmd_window(args) -> int:
    defaults = dict(_STUDY_DEFAULTS, w_list="1,2,4,8", replicas=2000, eps="2^-6")
    cfg = _resolve(args, _load_config_file(args.config), defaults)
    if cfg["threads"] is None:
        cfg["threads"] = default_threads()
    run_dir = make_run_dir(cfg["out"], "window", cfg)
    model = _get_model(cfg)
    outputs = []
    fbar = _fbar_for(model, cfg, run_dir, outputs)
    w_list = [float(v) for v in str(cfg["w_list"]).split(",")]
    table = averaging_window_study(model, fbar, _study_config(cfg),
                                   w_list=w_list, replicas=int(cfg["replicas"]))
    return _finalize_study(run_dir, "window", cfg, table, outputs)


def cmd_moments(args) -> int:
    defaults = dict(_STUDY_DEFAULTS, eps="2^-2..2^-9", alpha="")
    cfg = _resolve(args, _load_config_file(args.config), defaults)
    if cfg["threads"] is None:
        cfg["threads"] = default_threads()
    run_dir = make_run_dir(cfg["out"], "moments", cfg)
    model = _get_model(cfg)
    alphas = [float(v) for v in str(cfg["alpha"]).split(",") if v]
    table = moment_and_regularity_study(model, _study_config(cfg), alphas=alphas)
    return _finalize_study(run_dir, "moments", cfg, table, [])


def cmd_simulate(args) -> int:
    defaults = dict(_STUDY_DEFAULTS, eps="2^-4", dump_paths=0)
    cfg = _resolve(args, _load_config_file(args.config), defaults)
    if cfg["threads"] is None:
        cfg["threads"] = default_threads()
    run_dir = make_run_dir(cfg["out"], "simulate", cfg)
    model = _get_model(cfg)
    scfg = _study_config(cfg)
    eps = scfg.eps_list[0]
    meps = model.with_eps(eps)
    grid = TimeGrid.for_eps(scfg.horizon, scfg.slow_step, eps)
    outputs = []
    sups = []
    n_dump = int(cfg["dump_paths"])
    for m in range(scfg.paths):
        bundle = generate_noise(meps.nu1, meps.nu2, grid, eps, meps.dim,
                                scfg.master_seed, unit=rngmod.compose_unit(0, m))
        path = simulate_coupled(meps, grid, bundle)
        sups.append(path.sup_x)
        if m < n_dump:
            name = f"path_{m:04d}.csv"
            _dump_path(run_dir / name, path, meps.dim)
            outputs.append(name)
    from .harness import ConvergenceTable, StudyRow, _mean_stderr
    table = ConvergenceTable(kind="simulate")
    for p in scfg.p_list:
        err, se = _mean_stderr(np.array(sups) ** (2 * p))
        table.rows.append(StudyRow("x_sup_moment", eps, p, 0.0, err, se, scfg.paths, 0, 0.0))
    return _finalize_study(run_dir, "simulate", cfg, table, outputs)


def _dump_path(path_file, path, d):
    with open(path_file, "w") as fh:
        cols = ["t"] + [f"X_{k+1}" for k in range(d)] + [f"Y_{k+1}" for k in range(d)]
        fh.write(",".join(cols) + "\n")
        for i, t in enumerate(path.times):
            vals = [repr(float(t))] + [repr(float(v)) for v in path.x[i]] \
                + [repr(float(v)) for v in path.y[i]]
            fh.write(",".join(vals) + "\n")


def cmd_average(args) -> int:
    defaults = {"model": "builtin:benchmark", "box": "-2..2", "nodes": 17,
                "replicas": 8, "avg": 400.0, "burn": 5.0, "fbar_step": 0.01,
                "seed": 0, "threads": None, "out": "runs"}
    cfg = _resolve(args, _load_config_file(args.config), defaults)
    if cfg["threads"] is None:
        cfg["threads"] = default_threads()
    run_dir = make_run_dir(cfg["out"], "average", cfg)
    model = _get_model(cfg)
    fb_cfg = FbarConfig(t_burn=float(cfg["burn"]), t_avg=float(cfg["avg"]),
                        replicas=int(cfg["replicas"]), step=float(cfg["fbar_step"]),
                        seed=int(cfg["seed"]))
    table = build_fbar_table(model, parse_range(cfg["box"]), int(cfg["nodes"]),
                             fb_cfg, threads=int(cfg["threads"]))
    table.save(run_dir / "fbar.csv")
    lines = [f"- nodes: {len(table.x_nodes)}",
             f"- max stderr: {table.max_stderr():.3e}",
             f"- interpolant Lipschitz constant: {table.lipschitz:.4f}"]
    _report(run_dir, "levyavg average", lines)
    write_manifest(run_dir, "average", cfg, ["fbar.csv", "report.md", "manifest.json", "study.json"])
    return EXIT_OK


def cmd_hypotheses(args) -> int:
    defaults = {"model": "builtin:benchmark", "box": "-3..3", "samples": 10_000,
                "seed": 0, "out": "runs"}
    cfg = _resolve(args, _load_config_file(args.config), defaults)
    run_dir = make_run_dir(cfg["out"], "hypotheses", cfg)
    model = _get_model(cfg)
    rep = verify_hypotheses(model, parse_range(cfg["box"]), int(cfg["samples"]),
                            int(cfg["seed"]))
    doc = {
        "box": list(rep.box), "n_samples": rep.n_samples, "seed": rep.seed,
        "beta1": rep.beta1, "beta2_hat": rep.beta2_hat, "beta4_hat": rep.beta4_hat,
        "c1_hat": rep.c1_hat, "c2_hat": rep.c2_hat, "c3_hat": rep.c3_hat,
        "c4_hat": rep.c4_hat, "c5_hat": rep.c5_hat, "f_sup": rep.f_sup,
        "kappa_hat": rep.kappa_hat, "eta_hat": rep.eta_hat,
        "flags": rep.flags(), "failures": rep.failures,
        "declared": rep.declared.to_dict(),
    }
    with open(run_dir / "hypotheses.json", "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
    lines = [f"- kappa_hat: {rep.kappa_hat:.4f}", f"- eta_hat: {rep.eta_hat:.4f}"]
    lines += [f"- {k}: {'pass' if v else 'FAIL'}" for k, v in sorted(rep.flags().items())]
    _report(run_dir, "levyavg hypotheses", lines)
    write_manifest(run_dir, "hypotheses", cfg,
                   ["hypotheses.json", "report.md", "manifest.json", "study.json"])
    return EXIT_OK if rep.all_pass else EXIT_VERDICT


def cmd_validate_noise(args) -> int:
    defaults = {"triplet": "0,1,none", "theta_grid": "-5..5", "samples": 100_000,
                "dt": 1.0, "seed": 0, "tol": 0.02, "out": "runs"}
    cfg = _resolve(args, _load_config_file(args.config), defaults)
    run_dir = make_run_dir(cfg["out"], "validate-noise", cfg)
    triplet = parse_triplet(cfg["triplet"])
    thetas = parse_theta_grid(cfg["theta_grid"])
    res = validate_noise(triplet, thetas, n=int(cfg["samples"]), dt=float(cfg["dt"]),
                         seed=int(cfg["seed"]), tol=float(cfg["tol"]))
    doc = {"thetas": list(map(float, res["thetas"])),
           "abs_error": list(map(float, res["abs_error"])),
           "max_abs_error": res["max_abs_error"], "passed": res["passed"],
           "tolerance": res["tolerance"], "n_samples": res["n_samples"]}
    with open(run_dir / "noise.json", "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
    _report(run_dir, "levyavg validate-noise",
            [f"- max |emp - analytic| = {res['max_abs_error']:.5f} "
             f"(tolerance {res['tolerance']})",
             f"- verdict: {'pass' if res['passed'] else 'FAIL'}"])
    write_manifest(run_dir, "validate-noise", cfg,
                   ["noise.json", "report.md", "manifest.json", "study.json"])
    return EXIT_OK if res["passed"] else EXIT_VERDICT


# ---------------------------------------------------------------------------
# parser wiring
# ---------------------------------------------------------------------------

def build_parser() -> _Parser:
    parser = _Parser(prog="levyavg",
                     description="Slow-fast Levy SDE simulation and averaging studies")
    parser.add_argument("--version", action="version", version=f"levyavg {__version__}")
    sub = parser.add_subparsers(dest="subcommand", required=True)

    def common(p, fbar=False):
        p.add_argument("--config", help="JSON config file; flags override its fields")
        p.add_argument("--model")
        p.add_argument("--seed", type=int)
        p.add_argument("--out")
        p.add_argument("--threads", type=int)

    def study_flags(p):
        p.add_argument("--eps")
        p.add_argument("--p")
        p.add_argument("--paths", type=int)
        p.add_argument("--horizon", type=float)
        p.add_argument("--step", type=float)
        p.add_argument("--delta-rule", dest="delta_rule",
                       help="'khasminskii' or 'fixed:<value>'")

    def fbar_flags(p):
        p.add_argument("--fbar-cache", dest="fbar_cache")
        p.add_argument("--fbar-box", dest="fbar_box")
        p.add_argument("--fbar-nodes", dest="fbar_nodes", type=int)
        p.add_argument("--fbar-replicas", dest="fbar_replicas", type=int)
        p.add_argument("--fbar-avg", dest="fbar_avg", type=float)
        p.add_argument("--fbar-burn", dest="fbar_burn", type=float)

    p = sub.add_parser("converge", help="Theorem-1 strong-error ladder")
    common(p); study_flags(p); fbar_flags(p)
    p.set_defaults(fn=cmd_converge)

    p = sub.add_parser("khasminskii", help="auxiliary-process gap study")
    common(p); study_flags(p)
    p.set_defaults(fn=cmd_khasminskii)

    p = sub.add_parser("window", help="averaging-window scaling study")
    common(p); study_flags(p); fbar_flags(p)
    p.add_argument("--w-list", dest="w_list")
    p.add_argument("--replicas", type=int)
    p.set_defaults(fn=cmd_window)

    p = sub.add_parser("moments", help="moment and regularity tables")
    common(p); study_flags(p)
    p.add_argument("--alpha")
    p.set_defaults(fn=cmd_moments)

    p = sub.add_parser("simulate", help="coupled paths, optional trajectory dump")
    common(p); study_flags(p)
    p.add_argument("--dump-paths", dest="dump_paths", type=int)
    p.set_defaults(fn=cmd_simulate)

    p = sub.add_parser("average", help="build and cache an fbar table")
    common(p)
    p.add_argument("--box")
    p.add_argument("--nodes", type=int)
    p.add_argument("--replicas", type=int)
    p.add_argument("--avg", type=float)
    p.add_argument("--burn", type=float)
    p.set_defaults(fn=cmd_average)

    p = sub.add_parser("hypotheses", help="numerical hypothesis audit")
    common(p)
    p.add_argument("--box")
    p.add_argument("--samples", type=int)
    p.set_defaults(fn=cmd_hypotheses)

    p = sub.add_parser("validate-noise", help="empirical vs analytic CF check")
    common(p)
    p.add_argument("--triplet")
    p.add_argument("--theta-grid", dest="theta_grid")
    p.add_argument("--samples", type=int)
    p.add_argument("--dt", type=float)
    p.add_argument("--tol", type=float)
    p.set_defaults(fn=cmd_validate_noise)

    return parser


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    try:
        return args.fn(args)
    except _ConfigUnreadable as exc:
        print(f"levyavg: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except StaleCache as exc:
        print(f"levyavg: {exc}", file=sys.stderr)
        return EXIT_STALE
    except LevyAvgError as exc:
        print(f"levyavg: {exc}", file=sys.stderr)
        return EXIT_ERROR
    except (OSError, ValueError, KeyError) as exc:
        print(f"levyavg: {exc}", file=sys.stderr)
        return EXIT_ERROR


def main():
    sys.exit(run())
