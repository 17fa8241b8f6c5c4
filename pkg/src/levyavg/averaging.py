"""Averaged drift estimation from the frozen-fast dynamics.

f_bar(x) is the invariant-measure average of f(x, .); it is estimated
by ergodic time averages of replicated frozen-fast trajectories
(burn-in, then a long window), which Hypothesis 4 justifies.  The
invariant measure itself is never represented -- only integrals of f
against it are exposed.  Tables over a box are interpolated with a
piecewise cubic through Chebyshev-Lobatto nodes; off-table queries
extrapolate linearly and bump a warning counter instead of failing.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.interpolate import CubicSpline

from . import rng as rngmod
from .errors import BlowUp, NoSignal, StaleCache, UnsupportedModel
from .levy_noise import frozen_noise
from .model import SlowFastModel
from .parallel import run_indexed
from .simulate import TimeGrid, simulate_frozen

_FBAR_MAGIC = "# levyavg-fbar v1"


@dataclass(frozen=True)
class FbarConfig:
    """Budget for one ergodic average: burn-in, window, replicas, step.

    t_burn = None applies the conservative default 10 / eta_declared.
    """

    t_burn: Optional[float] = None
    t_avg: float = 200.0
    replicas: int = 16
    step: float = 0.01
    seed: int = 0
    unit_base: int = 0
    stderr_tol: float = np.inf

    def resolve_burn(self, model: SlowFastModel) -> float:
        if self.t_burn is not None:
            return self.t_burn
        return 10.0 / model.constants.eta


@dataclass
class FbarEstimate:
    value: np.ndarray
    stderr: np.ndarray
    flagged: bool = False          # stderr above the configured tolerance


def estimate_fbar(model: SlowFastModel, x, cfg: FbarConfig = FbarConfig()) -> FbarEstimate:
    """Time-average f(x, Y^{x,y0}_t) over (t_burn, t_burn + t_avg].

    Replicas start from the model's y0 and use independent substreams;
    the standard error comes from the replica spread.
    """
    t_burn = cfg.resolve_burn(model)
    horizon = t_burn + cfg.t_avg
    n_steps = max(1, round(horizon / cfg.step))
    grid = TimeGrid(horizon=horizon, n_slow=1, n_sub=n_steps)
    xf = np.full(model.dim, float(x)) if np.ndim(x) == 0 else np.asarray(x, dtype=float)

    def one(r):
        noise = frozen_noise(model.nu2, grid, model.dim, cfg.seed,
                             unit=cfg.unit_base + r)
        path = simulate_frozen(model, xf, model.y0, grid, noise)
        fvals = np.broadcast_to(
            np.asarray(model.coeffs.f(xf[None, :], path.y), dtype=float),
            path.y.shape)
        return path.time_average(fvals, t_burn, horizon)

    means = np.array([one(r) for r in range(cfg.replicas)])
    value = means.mean(axis=0)
    stderr = (means.std(axis=0, ddof=1) / np.sqrt(cfg.replicas)
              if cfg.replicas > 1 else np.full_like(value, np.nan))
    return FbarEstimate(value=value, stderr=stderr,
                        flagged=bool(np.any(stderr > cfg.stderr_tol)))


# ---------------------------------------------------------------------------
# tabulated averaged drift
# ---------------------------------------------------------------------------

@dataclass
class AveragedCoefficient:
    """Interpolated f_bar table on a 1-d box (scalar spectral space).

    Calling it inside [x_nodes[0], x_nodes[-1]] evaluates the cubic
    interpolant; outside, it extrapolates linearly from the boundary
    value and slope and increments ``domain_exceeded``.
    """

    x_nodes: np.ndarray
    values: np.ndarray
    stderr: np.ndarray
    burn_in: float
    horizon: float
    replicas: int
    ok_mask: np.ndarray = None
    domain_exceeded: int = 0
    _spline: CubicSpline = field(default=None, repr=False)

    def __post_init__(self):
        if self.ok_mask is None:
            self.ok_mask = np.isfinite(self.values)
        good = self.ok_mask
        if good.sum() < 2:
            raise UnsupportedModel("averaged-drift table needs at least two good nodes")
        self._spline = CubicSpline(self.x_nodes[good], self.values[good])
        lo, hi = self.x_nodes[good][0], self.x_nodes[good][-1]
        der = self._spline.derivative()
        self._lo, self._hi = float(lo), float(hi)
        self._lo_val, self._hi_val = float(self._spline(lo)), float(self._spline(hi))
        self._lo_slope, self._hi_slope = float(der(lo)), float(der(hi))

    @property
    def lipschitz(self) -> float:
        """Max interpolant slope over a dense evaluation grid."""
        xs = np.linspace(self._lo, self._hi, 4096)
        return float(np.max(np.abs(self._spline.derivative()(xs))))

    def __call__(self, x):
        xv = float(np.asarray(x).reshape(-1)[0])
        if xv < self._lo:
            self.domain_exceeded += 1
            out = self._lo_val + self._lo_slope * (xv - self._lo)
        elif xv > self._hi:
            self.domain_exceeded += 1
            out = self._hi_val + self._hi_slope * (xv - self._hi)
        else:
            out = float(self._spline(xv))
        return np.array([out])

    def max_stderr(self) -> float:
        return float(np.nanmax(self.stderr[self.ok_mask]))

    # -- cache round trip ------------------------------------------------

    def save(self, path):
        meta = {"burn_in": self.burn_in, "horizon": self.horizon,
                "replicas": self.replicas}
        with open(path, "w") as fh:
            fh.write(_FBAR_MAGIC + "\n")
            fh.write("# meta " + json.dumps(meta, sort_keys=True) + "\n")
            fh.write("x,value,stderr,ok\n")
            for xn, v, s, ok in zip(self.x_nodes, self.values, self.stderr, self.ok_mask):
                fh.write(f"{float(xn)!r},{float(v)!r},{float(s)!r},{int(ok)}\n")

    @staticmethod
    def load(path) -> "AveragedCoefficient":
        try:
            with open(path) as fh:
                lines = [ln.rstrip("\n") for ln in fh]
        except OSError as exc:
            raise StaleCache(f"cannot read fbar cache {path}: {exc}") from exc
        if not lines or lines[0] != _FBAR_MAGIC:
            raise StaleCache(f"{path}: not a levyavg fbar table (refit with 'average')")
        try:
            meta = json.loads(lines[1].removeprefix("# meta "))
            rows = [ln.split(",") for ln in lines[3:] if ln]
            xs = np.array([float(r[0]) for r in rows])
            vals = np.array([float(r[1]) for r in rows])
            errs = np.array([float(r[2]) for r in rows])
            ok = np.array([bool(int(r[3])) for r in rows])
        except (IndexError, ValueError, json.JSONDecodeError) as exc:
            raise StaleCache(f"{path}: corrupted fbar table ({exc}); refit with 'average'") from exc
        return AveragedCoefficient(x_nodes=xs, values=vals, stderr=errs,
                                   burn_in=meta["burn_in"], horizon=meta["horizon"],
                                   replicas=meta["replicas"], ok_mask=ok)


def chebyshev_nodes(lo: float, hi: float, n: int) -> np.ndarray:
    """Chebyshev-Lobatto points on [lo, hi] (ascending, endpoints included)."""
    j = np.arange(n)
    return 0.5 * (lo + hi) - 0.5 * (hi - lo) * np.cos(np.pi * j / (n - 1))


def build_fbar_table(model: SlowFastModel, x_box, n_nodes: int,
                     cfg: FbarConfig = FbarConfig(), threads: int = 1) -> AveragedCoefficient:
    """Estimate f_bar at Chebyshev-spaced nodes and interpolate.

    Only scalar spectral spaces are tabulated; a failed node (BlowUp)
    is masked out rather than aborting the table.
    """
    if model.dim != 1:
        raise UnsupportedModel("fbar tables are built for scalar (d=1) spaces")
    if n_nodes < 2:
        raise UnsupportedModel("need n_nodes >= 2")
    lo, hi = float(x_box[0]), float(x_box[1])
    nodes = chebyshev_nodes(lo, hi, n_nodes)

    def one(j):
        node_cfg = FbarConfig(t_burn=cfg.t_burn, t_avg=cfg.t_avg, replicas=cfg.replicas,
                              step=cfg.step, seed=cfg.seed,
                              unit_base=rngmod.compose_unit(j + 1, 0),
                              stderr_tol=cfg.stderr_tol)
        try:
            est = estimate_fbar(model, nodes[j], node_cfg)
            return float(est.value[0]), float(est.stderr[0]), True
        except BlowUp:
            return np.nan, np.nan, False

    rows = run_indexed(one, n_nodes, threads)
    values = np.array([r[0] for r in rows])
    errs = np.array([r[1] for r in rows])
    ok = np.array([r[2] for r in rows])
    return AveragedCoefficient(x_nodes=nodes, values=values, stderr=errs,
                               burn_in=cfg.resolve_burn(model), horizon=cfg.t_avg,
                               replicas=cfg.replicas, ok_mask=ok)


# ---------------------------------------------------------------------------
# mixing-rate measurement
# ---------------------------------------------------------------------------

@dataclass
class MixingReport:
    """Squared-bias curve E||E f(x, Y_t) - f_bar(x)||^2 and fitted decay."""

    lags: np.ndarray
    curve: np.ndarray
    noise_floor: np.ndarray
    eta_hat: float
    fit_residual: float
    eta_declared: float
    used: np.ndarray
    fbar_value: np.ndarray
    fbar_stderr: np.ndarray


@dataclass(frozen=True)
class MixingConfig:
    replicas: int = 2000
    step: float = 0.01
    seed: int = 0
    fbar: FbarConfig = FbarConfig(t_burn=5.0, t_avg=400.0, replicas=8)
    floor_factor: float = 10.0


def estimate_mixing(model: SlowFastModel, x, y0, lags: Sequence[float],
                    cfg: MixingConfig = MixingConfig(), threads: int = 1) -> MixingReport:
    """Monte Carlo squared-bias curve over replicas, with an exponential fit.

    The log curve is fitted by least squares on the lags where the curve
    exceeds ``floor_factor`` times the Monte Carlo noise floor; if no lag
    clears the floor the model mixes faster than measurable (NoSignal).
    """
    lags = np.asarray(lags, dtype=float)
    if lags.size < 2 or np.any(np.diff(lags) <= 0) or lags[0] <= 0:
        raise NoSignal("lags must be increasing and positive")
    horizon = float(lags[-1])
    n_steps = max(1, round(horizon / cfg.step))
    grid = TimeGrid(horizon=horizon, n_slow=1, n_sub=n_steps)
    d = model.dim
    xf = np.full(d, float(x)) if np.ndim(x) == 0 else np.asarray(x, dtype=float)
    y0v = np.full(d, float(y0)) if np.ndim(y0) == 0 else np.asarray(y0, dtype=float)

    fb = estimate_fbar(model, xf, cfg.fbar)

    def one(r):
        noise = frozen_noise(model.nu2, grid, d, cfg.seed,
                             unit=rngmod.compose_unit(0, r),
                             streams=(rngmod.MIX_W2, rngmod.MIX_N2))
        path = simulate_frozen(model, xf, y0v, grid, noise)
        idx = np.clip(np.searchsorted(path.times, lags), 0, path.times.size - 1)
        # snap to the nearest node (lags are grid nodes up to float noise)
        left = np.clip(idx - 1, 0, path.times.size - 1)
        snap = np.where(np.abs(path.times[left] - lags) < np.abs(path.times[idx] - lags),
                        left, idx)
        return np.asarray(
            np.broadcast_to(np.asarray(model.coeffs.f(xf[None, :], path.y[snap]), dtype=float),
                            (lags.size, d)))

    samples = np.array(run_indexed(one, cfg.replicas, threads))   # (R, L, d)
    mean_f = samples.mean(axis=0)
    var_f = samples.var(axis=0, ddof=1)
    curve = np.sum((mean_f - fb.value[None, :]) ** 2, axis=1)
    floor = var_f.sum(axis=1) / cfg.replicas + float(np.sum(fb.stderr ** 2))

    used = curve > cfg.floor_factor * floor
    if not used.any():
        raise NoSignal("mixing curve is at the noise floor for every lag")
    A = np.vstack([lags[used], np.ones(used.sum())]).T
    sol, *_ = np.linalg.lstsq(A, np.log(curve[used]), rcond=None)
    fit = A @ sol
    resid = float(np.sqrt(np.mean((np.log(curve[used]) - fit) ** 2)))
    return MixingReport(lags=lags, curve=curve, noise_floor=floor,
                        eta_hat=float(-sol[0]), fit_residual=resid,
                        eta_declared=model.constants.eta, used=used,
                        fbar_value=fb.value, fbar_stderr=fb.stderr)
