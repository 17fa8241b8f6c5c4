"""Jump-adapted exponential Euler stepping for the slow-fast system.

All four systems -- coupled slow-fast, frozen fast, reduced averaged,
and the blockwise auxiliary pair -- advance in mild form: over a cell
of length dt the update is

    state <- S_dt (state + dt * (drift - compensator) + diffusion * dW),

with the semigroup applied exactly (diagonal exponentials), jump epochs
inserted into the grid so jumps land at their exact times, left limits
in every jump coefficient, and compensators integrated by the measure's
quadrature rule between events.  The fast component uses S_{dt/eps},
drift dt/eps, and diffusion 1/sqrt(eps), so its invariant law is
independent of eps.

Between the coupled and reduced runs the slow update consumes identical
Gaussian cells and jump events from one NoiseBundle, which is what makes
strong-error measurement meaningful; the bundle's ``consumed`` counters
let tests assert the reduced run never touches the fast streams.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import BlowUp, InvalidBlock, InvalidGrid, InvalidPairing
from .levy_noise import NoiseBundle
from .model import SlowFastModel


@dataclass
class RunCounters:
    """Cheap instrumentation: how many runs of each kind were executed."""

    coupled: int = 0
    reduced: int = 0
    frozen: int = 0
    auxiliary: int = 0

    def reset(self):
        self.coupled = self.reduced = self.frozen = self.auxiliary = 0


counters = RunCounters()


# ---------------------------------------------------------------------------
# grids
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TimeGrid:
    """Uniform slow grid with n_sub fast substeps per slow cell.

    Jump epochs are not part of the grid itself; they are merged in when
    a NoiseBundle is generated (jump-adapted refinement).
    """

    horizon: float
    n_slow: int
    n_sub: int = 1

    def __post_init__(self):
        if self.horizon <= 0:
            raise InvalidGrid(f"horizon must be > 0, got {self.horizon}")
        if self.n_slow < 1 or self.n_sub < 1:
            raise InvalidGrid("need n_slow >= 1 and n_sub >= 1")

    @property
    def h(self) -> float:
        return self.horizon / self.n_slow

    @property
    def h_fast(self) -> float:
        return self.h / self.n_sub

    def slow_nodes(self) -> np.ndarray:
        return np.linspace(0.0, self.horizon, self.n_slow + 1)

    def fast_nodes(self) -> np.ndarray:
        # built per slow cell so slow nodes appear bit-exactly
        slow = self.slow_nodes()
        if self.n_sub == 1:
            return slow
        offs = np.arange(self.n_sub) / self.n_sub
        inner = slow[:-1, None] + np.diff(slow)[:, None] * offs[None, :]
        return np.append(inner.ravel(), slow[-1])

    @staticmethod
    def regular(horizon: float, h: float, h_fast: float = None) -> "TimeGrid":
        n_slow = _exact_divisions(horizon, h, "h")
        n_sub = 1 if h_fast is None else _exact_divisions(horizon / n_slow, h_fast, "h_fast")
        return TimeGrid(horizon=horizon, n_slow=n_slow, n_sub=n_sub)

    @staticmethod
    def for_eps(horizon: float, h: float, eps: float, n_sub: int = None) -> "TimeGrid":
        """Default fast substep h_fast = eps * h, so the fast equation sees
        O(h) resolution in its natural time."""
        n_slow = _exact_divisions(horizon, h, "h")
        if n_sub is None:
            n_sub = max(1, round(1.0 / eps))
        return TimeGrid(horizon=horizon, n_slow=n_slow, n_sub=n_sub)


def _exact_divisions(total: float, step: float, what: str) -> int:
    if step <= 0 or step > total * (1 + 1e-12):
        raise InvalidGrid(f"{what} must lie in (0, {total}], got {step}")
    n = max(1, round(total / step))
    if abs(n * step - total) > 1e-9 * max(1.0, abs(total)):
        raise InvalidGrid(f"{what}={step} does not divide the interval {total}")
    return n


# ---------------------------------------------------------------------------
# path containers
# ---------------------------------------------------------------------------

@dataclass
class PathPair:
    """Coupled trajectories on the slow grid (uniform nodes + n1 epochs)."""

    times: np.ndarray
    x: np.ndarray              # (n_nodes, d)
    y: np.ndarray
    sup_x: float
    sup_y: float
    noise: NoiseBundle
    uniform_idx: np.ndarray


@dataclass
class SlowPath:
    times: np.ndarray
    x: np.ndarray
    sup_x: float
    noise: NoiseBundle
    uniform_idx: np.ndarray


@dataclass
class FrozenPath:
    """Frozen-fast trajectory on its fine grid (substeps + n2 epochs)."""

    times: np.ndarray
    y: np.ndarray
    sup_y: float
    frozen_x: np.ndarray
    noise: NoiseBundle

    def time_average(self, values: np.ndarray, t_from: float, t_to: float) -> np.ndarray:
        """Left-point time average of per-node values over (t_from, t_to]."""
        t = self.times
        dt = np.diff(t)
        mask = (t[:-1] >= t_from) & (t[:-1] < t_to)
        w = dt[mask]
        return (values[:-1][mask] * w[:, None]).sum(axis=0) / w.sum()


@dataclass
class AuxiliaryPair:
    """Khasminskii block processes and their gaps to the coupled path."""

    times: np.ndarray
    x_hat: np.ndarray
    y_hat: np.ndarray
    delta: float
    coupled: PathPair
    x_gap: np.ndarray          # ||X - X_hat|| per node
    y_gap: np.ndarray          # ||Y - Y_hat|| per node
    uniform_idx: np.ndarray


def _norm(v: np.ndarray) -> float:
    return math.sqrt(float(np.dot(v, v)))


class _Decay:
    """Memoized diagonal semigroup factors exp(-lambda dt)."""

    def __init__(self, lam: np.ndarray):
        self.lam = lam
        self.cache = {}

    def __call__(self, dt: float) -> np.ndarray:
        v = self.cache.get(dt)
        if v is None:
            v = np.exp(-self.lam * dt)
            self.cache[dt] = v
        return v


# ---------------------------------------------------------------------------
# integrators
# ---------------------------------------------------------------------------

def simulate_coupled(model: SlowFastModel, grid: TimeGrid, noise: NoiseBundle) -> PathPair:
    """Integrate the coupled system on one noise realization.

    The fast component advances over every fine cell with the slow
    argument frozen at the start of the enclosing slow cell; the slow
    component advances once per slow cell using the fast value at the
    cell start.  Raises BlowUp (carrying the partial path) if the state
    leaves the finite range.
    """
    counters.coupled += 1
    d = model.dim
    eps = model.eps
    cs = model.coeffs
    st, ft = noise.slow_times, noise.fine_times
    sif = noise.slow_in_fine
    w1, w2 = noise.w1, noise.w2
    n1j, n2j = noise.n1_jumps, noise.n2_jumps
    has_j1 = model.nu1.total_rate > 0
    has_j2 = model.nu2.total_rate > 0
    decay = _Decay(model.space.eigenvalues)
    sqeps = math.sqrt(eps)

    X = model.x0.copy()
    Y = model.y0.copy()
    n_nodes = st.size
    xs = np.empty((n_nodes, d))
    ys = np.empty((n_nodes, d))
    xs[0], ys[0] = X, Y
    sup_x, sup_y = _norm(X), _norm(Y)

    for i in range(n_nodes - 1):
        Xa = X
        Ya = Y
        for j in range(sif[i], sif[i + 1]):
            dtf = ft[j + 1] - ft[j]
            u = dtf / eps
            drift = cs.F(Xa, Y) - (model.comp_H(Xa, Y) if has_j2 else 0.0)
            Y = decay(u) * (Y + u * drift + cs.G(Xa, Y) * w2[j] / sqeps)
            if has_j2:
                zl = n2j.get(j + 1)
                if zl is not None:
                    for z in zl:
                        Y = Y + cs.H(Xa, Y, z)
        dts = st[i + 1] - st[i]
        fmc = cs.f(Xa, Ya) - (model.comp_h(Xa) if has_j1 else 0.0)
        X = decay(dts) * (Xa + dts * fmc + cs.g(Xa) * w1[i])
        if has_j1:
            zl = n1j.get(i + 1)
            if zl is not None:
                for z in zl:
                    X = X + cs.h(X, z)
        if not (np.all(np.isfinite(X)) and np.all(np.isfinite(Y))):
            partial = PathPair(times=st[: i + 1], x=xs[: i + 1], y=ys[: i + 1],
                               sup_x=sup_x, sup_y=sup_y, noise=noise,
                               uniform_idx=noise.uniform_idx)
            raise BlowUp(st[i + 1], partial=partial)
        xs[i + 1], ys[i + 1] = X, Y
        sup_x = max(sup_x, _norm(X))
        sup_y = max(sup_y, _norm(Y))

    noise.consumed["w1"] += n_nodes - 1
    noise.consumed["w2"] += ft.size - 1
    noise.consumed["n1"] += len(noise.n1)
    noise.consumed["n2"] += len(noise.n2)
    return PathPair(times=st, x=xs, y=ys, sup_x=sup_x, sup_y=sup_y,
                    noise=noise, uniform_idx=noise.uniform_idx)


def simulate_reduced(model: SlowFastModel, fbar: Callable, grid: TimeGrid,
                     noise: NoiseBundle) -> SlowPath:
    """Integrate the reduced equation on the slow part of a bundle.

    fbar is any map x -> averaged drift (an AveragedCoefficient or a
    plain callable).  Consumes exactly the w1 cells and n1 events that
    the coupled run consumes, and nothing from the fast streams.
    """
    counters.reduced += 1
    d = model.dim
    cs = model.coeffs
    st = noise.slow_times
    w1 = noise.w1
    n1j = noise.n1_jumps
    has_j1 = model.nu1.total_rate > 0
    decay = _Decay(model.space.eigenvalues)

    X = model.x0.copy()
    n_nodes = st.size
    xs = np.empty((n_nodes, d))
    xs[0] = X
    sup_x = _norm(X)

    for i in range(n_nodes - 1):
        Xa = X
        dts = st[i + 1] - st[i]
        fv = np.broadcast_to(np.asarray(fbar(Xa), dtype=float), (d,))
        fmc = fv - (model.comp_h(Xa) if has_j1 else 0.0)
        X = decay(dts) * (Xa + dts * fmc + cs.g(Xa) * w1[i])
        if has_j1:
            zl = n1j.get(i + 1)
            if zl is not None:
                for z in zl:
                    X = X + cs.h(X, z)
        if not np.all(np.isfinite(X)):
            partial = SlowPath(times=st[: i + 1], x=xs[: i + 1], sup_x=sup_x,
                               noise=noise, uniform_idx=noise.uniform_idx)
            raise BlowUp(st[i + 1], partial=partial)
        xs[i + 1] = X
        sup_x = max(sup_x, _norm(X))

    noise.consumed["w1"] += n_nodes - 1
    noise.consumed["n1"] += len(noise.n1)
    return SlowPath(times=st, x=xs, sup_x=sup_x, noise=noise,
                    uniform_idx=noise.uniform_idx)


def simulate_frozen(model: SlowFastModel, x, y0, grid: TimeGrid,
                    noise_fast: NoiseBundle) -> FrozenPath:
    """Integrate the frozen-fast equation at natural speed (eps = 1).

    The slow argument is pinned at x; noise_fast must carry unit-rate
    n2 events (see levy_noise.frozen_noise).
    """
    counters.frozen += 1
    d = model.dim
    cs = model.coeffs
    ft = noise_fast.fine_times
    w2 = noise_fast.w2
    n2j = noise_fast.n2_jumps
    has_j2 = model.nu2.total_rate > 0
    decay = _Decay(model.space.eigenvalues)

    xf = np.full(d, float(x)) if np.ndim(x) == 0 else np.asarray(x, dtype=float)
    Y = np.full(d, float(y0)) if np.ndim(y0) == 0 else np.asarray(y0, dtype=float).copy()
    n_nodes = ft.size
    ys = np.empty((n_nodes, d))
    ys[0] = Y
    sup_y = _norm(Y)

    for j in range(n_nodes - 1):
        dtf = ft[j + 1] - ft[j]
        drift = cs.F(xf, Y) - (model.comp_H(xf, Y) if has_j2 else 0.0)
        Y = decay(dtf) * (Y + dtf * drift + cs.G(xf, Y) * w2[j])
        if has_j2:
            zl = n2j.get(j + 1)
            if zl is not None:
                for z in zl:
                    Y = Y + cs.H(xf, Y, z)
        if not np.all(np.isfinite(Y)):
            raise BlowUp(ft[j + 1], partial=FrozenPath(times=ft[: j + 1], y=ys[: j + 1],
                                                       sup_y=sup_y, frozen_x=xf,
                                                       noise=noise_fast))
        ys[j + 1] = Y
        sup_y = max(sup_y, _norm(Y))

    noise_fast.consumed["w2"] += n_nodes - 1
    noise_fast.consumed["n2"] += len(noise_fast.n2)
    return FrozenPath(times=ft, y=ys, sup_y=sup_y, frozen_x=xf, noise=noise_fast)


def simulate_auxiliary(model: SlowFastModel, delta: float, grid: TimeGrid,
                       noise: NoiseBundle, coupled: Optional[PathPair] = None) -> AuxiliaryPair:
    """Build the Khasminskii auxiliary pair on blocks of length delta.

    Y_hat restarts each block from the coupled fast state with the slow
    argument frozen at the coupled slow state of the block start,
    consuming the identical fast noise.  X_hat equals the coupled slow
    path plus the accumulated staleness integral of f, since every other
    slow term is driven by the true path and cancels in the difference.
    """
    counters.auxiliary += 1
    if coupled is None:
        coupled = simulate_coupled(model, grid, noise)
    h = grid.h
    m = round(delta / h)
    if m < 1 or abs(m * h - delta) > 1e-9 * max(1.0, delta):
        raise InvalidBlock(f"delta={delta} is not a multiple of the slow step h={h}")

    d = model.dim
    eps = model.eps
    cs = model.coeffs
    st, ft = noise.slow_times, noise.fine_times
    sif = noise.slow_in_fine
    w2 = noise.w2
    n2j = noise.n2_jumps
    has_j2 = model.nu2.total_rate > 0
    decay = _Decay(model.space.eigenvalues)
    sqeps = math.sqrt(eps)

    reset_nodes = set(int(i) for i in noise.uniform_idx[::m])
    n_nodes = st.size
    yhat = np.empty((n_nodes, d))
    xhat = np.empty((n_nodes, d))
    xhat[0] = coupled.x[0]
    D = np.zeros(d)
    Yh = coupled.y[0].copy()
    Xblk = coupled.x[0]
    yhat[0] = Yh

    for i in range(n_nodes - 1):
        if i in reset_nodes:
            Yh = coupled.y[i].copy()
            Xblk = coupled.x[i]
        Yh_a = Yh
        for j in range(sif[i], sif[i + 1]):
            dtf = ft[j + 1] - ft[j]
            u = dtf / eps
            drift = cs.F(Xblk, Yh) - (model.comp_H(Xblk, Yh) if has_j2 else 0.0)
            Yh = decay(u) * (Yh + u * drift + cs.G(Xblk, Yh) * w2[j] / sqeps)
            if has_j2:
                zl = n2j.get(j + 1)
                if zl is not None:
                    for z in zl:
                        Yh = Yh + cs.H(Xblk, Yh, z)
        dts = st[i + 1] - st[i]
        D = D + dts * (cs.f(Xblk, Yh_a) - cs.f(coupled.x[i], coupled.y[i]))
        if not np.all(np.isfinite(Yh)):
            raise BlowUp(st[i + 1], partial=None)
        yhat[i + 1] = Yh
        xhat[i + 1] = coupled.x[i + 1] + D

    x_gap = np.linalg.norm(coupled.x - xhat, axis=1)
    y_gap = np.linalg.norm(coupled.y - yhat, axis=1)
    return AuxiliaryPair(times=st, x_hat=xhat, y_hat=yhat, delta=m * h,
                         coupled=coupled, x_gap=x_gap, y_gap=y_gap,
                         uniform_idx=noise.uniform_idx)


# ---------------------------------------------------------------------------
# energy-identity diagnostic
# ---------------------------------------------------------------------------

def energy_residual(path: PathPair, model: SlowFastModel, noise: NoiseBundle,
                    p: int = 1) -> np.ndarray:
    """LHS - RHS of the ||X||^{2p} energy identity, per slow node.

    The drift pairing along the semigroup flow is evaluated exactly
    (||S_dt V||^{2p} - ||V||^{2p} with V the pre-flow increment vector);
    the f-pairing, Ito correction p(2p-1) ||X||^{2p-2} ||g||^2, and the
    -2p ||X||^{2p-2} <h, X> nu compensator term use left-point
    quadrature.  The difference terms ||X+h||^{2p} - ||X||^{2p} appear
    against both the compensated measure and nu; their nu parts cancel
    identically, so the accumulation keeps their exact net: the raw
    difference at each inserted epoch.  A jump therefore contributes
    zero residual by construction.
    """
    if noise is not path.noise:
        raise InvalidPairing("path was not produced from this noise bundle")
    if p < 1 or int(p) != p:
        raise InvalidPairing(f"p must be a positive integer, got {p}")
    p = int(p)
    cs = model.coeffs
    st = path.times
    xs, ys = path.x, path.y
    w1 = noise.w1
    n1j = noise.n1_jumps
    has_j1 = model.nu1.total_rate > 0
    decay = _Decay(model.space.eigenvalues)

    def val(v):
        return float(np.dot(v, v)) ** p

    res = np.zeros(st.size)
    rhs = val(xs[0])
    for i in range(st.size - 1):
        Xa = xs[i]
        Ya = ys[i]
        dts = st[i + 1] - st[i]
        nrm2 = float(np.dot(Xa, Xa))
        pref = nrm2 ** (p - 1)
        fv = np.broadcast_to(np.asarray(cs.f(Xa, Ya), dtype=float), Xa.shape)
        gv = np.broadcast_to(np.asarray(cs.g(Xa), dtype=float), Xa.shape)
        comp = model.comp_h(Xa) if has_j1 else np.zeros_like(Xa)
        comp = np.broadcast_to(np.asarray(comp, dtype=float), Xa.shape)
        fmc = fv - comp
        V = Xa + dts * fmc + gv * w1[i]
        Xb = decay(dts) * V
        rhs += val(Xb) - val(V)                                     # A-pairing, exact flow
        rhs += 2 * p * pref * float(np.dot(fv, Xa)) * dts           # f pairing
        rhs += 2 * p * pref * float(np.dot(gv * w1[i], Xa))         # diffusion martingale
        rhs += p * (2 * p - 1) * pref * float(np.dot(gv, gv)) * dts  # Ito correction
        if has_j1:
            rhs -= 2 * p * pref * float(np.dot(comp, Xa)) * dts     # <h, X> nu term
            zl = n1j.get(i + 1)
            if zl is not None:
                Xc = Xb
                for z in zl:
                    Xn = Xc + cs.h(Xc, z)
                    rhs += val(Xn) - val(Xc)                        # exact jump bookkeeping
                    Xc = Xn
        res[i + 1] = val(xs[i + 1]) - rhs
    return res
