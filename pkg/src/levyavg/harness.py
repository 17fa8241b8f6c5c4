"""Convergence studies: strong averaging error across an epsilon ladder,
Khasminskii block gaps, the averaging-window functional, and moment /
regularity tables.

Every (epsilon, path) cell draws its noise from a substream keyed by
(master seed, epsilon index, path index), so cells are independent work
items that parallelize freely; per-path statistics are reduced in path
order, which makes the output CSV byte-stable for any thread count.
Monotone-trend verdicts always carry their Monte Carlo standard errors;
none of them is a raw inequality.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from . import rng as rngmod
from .errors import BlowUp, InvalidBlock, InvalidGrid
from .levy_noise import frozen_noise, generate_noise
from .model import SlowFastModel
from .parallel import run_indexed
from .simulate import TimeGrid, simulate_auxiliary, simulate_coupled, simulate_frozen, simulate_reduced


@dataclass(frozen=True)
class StudyConfig:
    """Common knobs for all studies.

    delta_rule is "khasminskii" (delta = eps * sqrt(-ln eps), snapped to
    the slow grid) or a fixed float.  paths >= 2 gives meaningful
    standard errors; a single path is allowed for determinism checks.
    """

    eps_list: Sequence[float]
    p_list: Sequence[int] = (1, 2)
    paths: int = 100
    horizon: float = 1.0
    slow_step: float = 1.0 / 32.0
    delta_rule: object = "khasminskii"
    master_seed: int = 0
    threads: int = 1
    n_sub: Optional[int] = None
    delta_list: Optional[Sequence[float]] = None
    bound_factor: float = 2.0
    window_step: float = 0.01
    out_dir: Optional[str] = None

    def __post_init__(self):
        for e in self.eps_list:
            if not 0 < e < 1:
                raise InvalidGrid(f"eps values must be in (0, 1), got {e}")
        if self.paths < 1:
            raise InvalidGrid("need at least one path")

    def delta_for(self, eps: float) -> float:
        h = self.slow_step
        if self.delta_rule == "khasminskii":
            raw = eps * math.sqrt(-math.log(eps))
        else:
            raw = float(self.delta_rule)
        snapped = max(1, round(raw / h)) * h
        if snapped >= self.horizon:
            raise InvalidBlock(f"delta({eps}) = {snapped} must stay below T = {self.horizon}")
        return snapped


@dataclass
class StudyRow:
    metric: str
    eps: float
    p: int
    delta: float
    error: float
    stderr: float
    paths: int
    failures: int
    wall_ms: float


@dataclass
class ConvergenceTable:
    """Rows plus fitted log-log slopes and study verdicts.

    results.csv carries the deterministic columns only; wall times go to
    a sidecar so that re-running a manifest reproduces results.csv byte
    for byte.
    """

    kind: str
    rows: list = field(default_factory=list)
    slopes: dict = field(default_factory=dict)
    verdicts: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    def to_csv(self, path):
        with open(path, "w") as fh:
            fh.write("metric,eps,p,delta,error,stderr,paths,failures\n")
            for r in self.rows:
                fh.write(f"{r.metric},{float(r.eps)!r},{r.p},{float(r.delta)!r},"
                         f"{float(r.error)!r},{float(r.stderr)!r},{r.paths},{r.failures}\n")

    def timings_csv(self, path):
        with open(path, "w") as fh:
            fh.write("metric,eps,p,delta,wall_ms,paths\n")
            for r in self.rows:
                fh.write(f"{r.metric},{r.eps!r},{r.p},{r.delta!r},{r.wall_ms:.3f},{r.paths}\n")

    def select(self, metric: str, p: int = None):
        return [r for r in self.rows if r.metric == metric and (p is None or r.p == p)]


def _mean_stderr(vals: np.ndarray):
    vals = np.asarray(vals, dtype=float)
    m = float(vals.mean())
    s = float(vals.std(ddof=1) / math.sqrt(vals.size)) if vals.size > 1 else 0.0
    return m, s


def _fit_slope(xs, ys):
    xs = np.log(np.asarray(xs, dtype=float))
    ys = np.log(np.asarray(ys, dtype=float))
    A = np.vstack([xs, np.ones_like(xs)]).T
    sol, *_ = np.linalg.lstsq(A, ys, rcond=None)
    return float(sol[0])


# ---------------------------------------------------------------------------
# strong averaging error (the headline study)
# ---------------------------------------------------------------------------

def strong_error_study(model: SlowFastModel, fbar: Callable, cfg: StudyConfig) -> ConvergenceTable:
    """E sup_t ||X^eps - Xbar||^{2p} across the epsilon ladder.

    For every (eps, path) cell the coupled and reduced runs share the
    identical slow Brownian cells and n1 events; the fast noise is an
    independent substream.  sup over grid nodes stands in for sup over
    [0, T].  A path that blows up is counted in the failures column and
    excluded from the average; the study continues.
    """
    table = ConvergenceTable(kind="converge")
    for ei, eps in enumerate(cfg.eps_list):
        grid = TimeGrid.for_eps(cfg.horizon, cfg.slow_step, eps, cfg.n_sub)
        meps = model.with_eps(eps)

        def task(m):
            bundle = generate_noise(meps.nu1, meps.nu2, grid, eps, meps.dim,
                                    cfg.master_seed, unit=rngmod.compose_unit(ei, m))
            try:
                cp = simulate_coupled(meps, grid, bundle)
                rp = simulate_reduced(meps, fbar, grid, bundle)
            except BlowUp:
                return np.nan
            return float(np.linalg.norm(cp.x - rp.x, axis=1).max())

        t0 = time.perf_counter()
        sups = np.array(run_indexed(task, cfg.paths, cfg.threads))
        wall = (time.perf_counter() - t0) * 1e3
        fails = int(np.isnan(sups).sum())
        good = sups[~np.isnan(sups)]
        delta = cfg.delta_for(eps)
        for p in cfg.p_list:
            if good.size:
                err, se = _mean_stderr(good ** (2 * p))
            else:
                err, se = np.nan, np.nan
            table.rows.append(StudyRow("strong_error", eps, p, delta, err, se,
                                       cfg.paths, fails, wall))
    for p in cfg.p_list:
        rows = table.select("strong_error", p)
        pts = [(r.eps, r.error) for r in rows if np.isfinite(r.error) and r.error > 0]
        if len(pts) >= 2:
            table.slopes[f"p={p}"] = _fit_slope([a for a, _ in pts], [b for _, b in pts])
    _trend_verdict(table, "strong_error", cfg)
    return table


def _trend_verdict(table: ConvergenceTable, metric: str, cfg: StudyConfig):
    """Strict decrease within MC error along the ladder, plus end ratio."""
    for p in cfg.p_list:
        rows = sorted(table.select(metric, p), key=lambda r: -r.eps)
        ok = all(
            rows[i + 1].error < rows[i].error
            + 3 * math.hypot(rows[i].stderr, rows[i + 1].stderr)
            for i in range(len(rows) - 1))
        table.verdicts[f"decreasing_p{p}"] = bool(ok)
        if len(rows) >= 2 and rows[0].error > 0:
            table.verdicts[f"end_ratio_p{p}"] = rows[-1].error / rows[0].error


# ---------------------------------------------------------------------------
# Khasminskii block gaps
# ---------------------------------------------------------------------------

def khasminskii_study(model: SlowFastModel, cfg: StudyConfig) -> ConvergenceTable:
    """Gaps to the auxiliary pair: E sup_t ||X - X_hat||^{2p} and the worst
    grid node of E ||Y_t - Y_hat_t||^{2p}, per (eps, delta)."""
    table = ConvergenceTable(kind="khasminskii")
    for ei, eps in enumerate(cfg.eps_list):
        grid = TimeGrid.for_eps(cfg.horizon, cfg.slow_step, eps, cfg.n_sub)
        meps = model.with_eps(eps)
        deltas = list(cfg.delta_list) if cfg.delta_list else [cfg.delta_for(eps)]

        def task(m):
            bundle = generate_noise(meps.nu1, meps.nu2, grid, eps, meps.dim,
                                    cfg.master_seed, unit=rngmod.compose_unit(ei, m))
            try:
                cp = simulate_coupled(meps, grid, bundle)
            except BlowUp:
                return None
            out = []
            for dl in deltas:
                aux = simulate_auxiliary(meps, dl, grid, bundle, coupled=cp)
                out.append((float(aux.x_gap.max()), aux.y_gap[aux.uniform_idx]))
            return out

        t0 = time.perf_counter()
        results = run_indexed(task, cfg.paths, cfg.threads)
        wall = (time.perf_counter() - t0) * 1e3
        fails = sum(1 for r in results if r is None)
        results = [r for r in results if r is not None]
        for di, dl in enumerate(deltas):
            xg = np.array([r[di][0] for r in results])
            yg = np.array([r[di][1] for r in results])      # (paths, n_uniform)
            for p in cfg.p_list:
                err, se = _mean_stderr(xg ** (2 * p))
                table.rows.append(StudyRow("x_gap", eps, p, dl, err, se,
                                           cfg.paths, fails, wall))
                node_means = (yg ** (2 * p)).mean(axis=0)
                worst = int(np.argmax(node_means))
                err_y, se_y = _mean_stderr(yg[:, worst] ** (2 * p))
                table.rows.append(StudyRow("y_gap", eps, p, dl, err_y, se_y,
                                           cfg.paths, fails, wall))
    _trend_verdict_khas(table, cfg)
    return table


def _trend_verdict_khas(table: ConvergenceTable, cfg: StudyConfig):
    for p in cfg.p_list:
        rows = sorted(table.select("x_gap", p), key=lambda r: -r.eps)
        by_eps = {}
        for r in rows:
            by_eps.setdefault(r.eps, r)
        seq = [by_eps[e] for e in sorted(by_eps, reverse=True)]
        ok = all(seq[i + 1].error <= seq[i].error
                 + 3 * math.hypot(seq[i].stderr, seq[i + 1].stderr)
                 for i in range(len(seq) - 1))
        table.verdicts[f"x_gap_nonincreasing_p{p}"] = bool(ok)


# ---------------------------------------------------------------------------
# averaging-window functional (Lemma-6 shape)
# ---------------------------------------------------------------------------

def averaging_window_study(model: SlowFastModel, fbar: Callable, cfg: StudyConfig,
                           w_list: Sequence[float] = (1.0, 2.0, 4.0, 8.0),
                           replicas: int = 2000, pair_burn: float = 0.25) -> ConvergenceTable:
    """E || int_0^{D/eps} S_{D - eps s} [f(x, Y_s) - fbar(x)] ds ||^2 vs D/eps.

    Starting pairs (x, y) are harvested from one coupled run at the first
    epsilon of the ladder, at uniform block boundaries past a burn-in
    fraction; each replica runs the frozen-fast equation at natural speed
    over the window [0, D/eps] and integrates the semigroup-weighted
    fluctuation by left-point quadrature.
    """
    eps = cfg.eps_list[0]
    meps = model.with_eps(eps)
    grid = TimeGrid.for_eps(cfg.horizon, cfg.slow_step, eps, cfg.n_sub)
    bundle = generate_noise(meps.nu1, meps.nu2, grid, eps, meps.dim,
                            cfg.master_seed, unit=rngmod.compose_unit(0xFFF, 0))
    cp = simulate_coupled(meps, grid, bundle)
    first = int(pair_burn * len(cp.uniform_idx))
    pool_idx = cp.uniform_idx[first:]
    pairs = [(cp.x[i], cp.y[i]) for i in pool_idx]

    table = ConvergenceTable(kind="window", meta={"eps": eps, "replicas": replicas})
    lam = model.space.eigenvalues
    for wi, w in enumerate(w_list):
        horizon = float(w)
        n_steps = max(2, round(horizon / cfg.window_step))
        wgrid = TimeGrid(horizon=horizon, n_slow=1, n_sub=n_steps)
        delta = w * eps

        def task(r):
            x, y = pairs[r % len(pairs)]
            noise = frozen_noise(meps.nu2, wgrid, meps.dim, cfg.master_seed,
                                 unit=rngmod.compose_unit(wi, r),
                                 streams=(rngmod.WINDOW_W2, rngmod.WINDOW_N2))
            path = simulate_frozen(meps, x, y, wgrid, noise)
            fb = np.broadcast_to(np.asarray(fbar(x), dtype=float), (meps.dim,))
            fx = np.broadcast_to(
                np.asarray(meps.coeffs.f(path.frozen_x[None, :], path.y), dtype=float),
                path.y.shape)
            dt = np.diff(path.times)
            weights = np.exp(-np.outer(delta - eps * path.times[:-1], lam))
            integral = ((fx[:-1] - fb[None, :]) * weights * dt[:, None]).sum(axis=0)
            return float(np.dot(integral, integral))

        t0 = time.perf_counter()
        vals = np.array(run_indexed(task, replicas, cfg.threads))
        wall = (time.perf_counter() - t0) * 1e3
        err, se = _mean_stderr(vals)
        table.rows.append(StudyRow("window", eps, 1, delta, err, se, replicas, 0, wall))

    ws = np.array(list(w_list), dtype=float)
    es = np.array([r.error for r in table.rows])
    table.slopes["window"] = _fit_slope(ws, es)
    table.verdicts["slope_in_band"] = bool(0.7 <= table.slopes["window"] <= 1.3)
    return table


# ---------------------------------------------------------------------------
# moment and regularity tables
# ---------------------------------------------------------------------------

def moment_and_regularity_study(model: SlowFastModel, cfg: StudyConfig,
                                alphas: Sequence[float] = ()) -> ConvergenceTable:
    """Uniform-in-eps boundedness tables.

    Per epsilon: E sup_t ||X||^{2p} (path sup over the slow grid), the
    worst uniform node of E ||Y_t||^{2p}, and for each alpha the worst
    uniform node of E ||X_t||_alpha^{2p} (p >= 2 only; the admissible
    alpha range is empty at p = 1).  The verdict is max-over-eps /
    min-over-eps below cfg.bound_factor.
    """
    lam = model.space.eigenvalues
    table = ConvergenceTable(kind="moments")
    for ei, eps in enumerate(cfg.eps_list):
        grid = TimeGrid.for_eps(cfg.horizon, cfg.slow_step, eps, cfg.n_sub)
        meps = model.with_eps(eps)

        def task(m):
            bundle = generate_noise(meps.nu1, meps.nu2, grid, eps, meps.dim,
                                    cfg.master_seed, unit=rngmod.compose_unit(ei, m))
            try:
                cp = simulate_coupled(meps, grid, bundle)
            except BlowUp:
                return None
            xu = cp.x[cp.uniform_idx]
            yu = cp.y[cp.uniform_idx]
            ynorm = np.linalg.norm(yu, axis=1)
            fna = {a: np.sqrt(xu ** 2 @ lam ** (2 * a)) for a in alphas}
            return cp.sup_x, ynorm, fna

        t0 = time.perf_counter()
        results = run_indexed(task, cfg.paths, cfg.threads)
        wall = (time.perf_counter() - t0) * 1e3
        fails = sum(1 for r in results if r is None)
        results = [r for r in results if r is not None]
        sups = np.array([r[0] for r in results])
        ymat = np.array([r[1] for r in results])
        for p in cfg.p_list:
            err, se = _mean_stderr(sups ** (2 * p))
            table.rows.append(StudyRow("x_sup_moment", eps, p, 0.0, err, se,
                                       cfg.paths, fails, wall))
            node_means = (ymat ** (2 * p)).mean(axis=0)
            worst = int(np.argmax(node_means))
            err_y, se_y = _mean_stderr(ymat[:, worst] ** (2 * p))
            table.rows.append(StudyRow("y_moment", eps, p, 0.0, err_y, se_y,
                                       cfg.paths, fails, wall))
            for a in alphas:
                if p < 2 or not a < min(1 / (4 * p), (p - 1) / (4 * p)):
                    continue
                amat = np.array([r[2][a] for r in results])
                nm = (amat ** (2 * p)).mean(axis=0)
                worst = int(np.argmax(nm))
                err_a, se_a = _mean_stderr(amat[:, worst] ** (2 * p))
                table.rows.append(StudyRow(f"x_frac_moment_a{a:g}", eps, p, 0.0,
                                           err_a, se_a, cfg.paths, fails, wall))
    metrics = sorted({r.metric for r in table.rows})
    for metric in metrics:
        for p in cfg.p_list:
            rows = table.select(metric, p)
            vals = [r.error for r in rows if np.isfinite(r.error)]
            if len(vals) >= 2 and min(vals) > 0:
                ratio = max(vals) / min(vals)
                table.verdicts[f"{metric}_p{p}_ratio"] = ratio
                table.verdicts[f"{metric}_p{p}_bounded"] = bool(ratio < cfg.bound_factor)
    return table
