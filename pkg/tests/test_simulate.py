import math
from dataclasses import replace

import numpy as np
import pytest

from conftest import make_model
from levyavg import rng
from levyavg.errors import BlowUp, InvalidBlock, InvalidGrid, InvalidPairing
from levyavg.levy_noise import JumpMeasure, coarsen_bundle, frozen_noise, generate_noise
from levyavg.simulate import (TimeGrid, energy_residual, simulate_auxiliary,
                              simulate_coupled, simulate_frozen, simulate_reduced)

UNIF = JumpMeasure.uniform(rate=1.0, low=-0.5, high=0.5, cutoff_c=1.0)


def _bundle(model, grid, seed=1, unit=0):
    return generate_noise(model.nu1, model.nu2, grid, model.eps, model.dim,
                          seed, unit=unit)


# ---------------------------------------------------------------------------
# grids
# ---------------------------------------------------------------------------

def test_grid_nodes_nested_bitwise():
    grid = TimeGrid(horizon=1.0, n_slow=10, n_sub=7)
    slow, fast = grid.slow_nodes(), grid.fast_nodes()
    assert fast.size == 71
    assert np.all(np.isin(slow, fast))
    assert fast[0] == 0.0 and fast[-1] == 1.0
    assert grid.h_fast <= grid.h <= grid.horizon


def test_grid_validation():
    with pytest.raises(InvalidGrid):
        TimeGrid(horizon=0.0, n_slow=4)
    with pytest.raises(InvalidGrid):
        TimeGrid.regular(1.0, 0.3)          # 0.3 does not divide 1
    g = TimeGrid.regular(1.0, 0.25, 0.05)
    assert g.n_slow == 4 and g.n_sub == 5
    assert TimeGrid.for_eps(2.0, 0.25, 0.125).n_sub == 8


# ---------------------------------------------------------------------------
# coupled integrator
# ---------------------------------------------------------------------------

def test_deterministic_semigroup_flow():
    # all noise off, f = 0: X_t = S_t X0 exactly
    m = make_model(x0=1.0, y0=1.0)
    grid = TimeGrid.for_eps(1.0, 1 / 32, m.eps)
    path = simulate_coupled(m, grid, _bundle(m, grid))
    assert abs(path.x[-1, 0] - math.exp(-1.0)) < 1e-12
    assert np.allclose(path.x[:, 0], np.exp(-path.times), atol=1e-12)


def test_determinism_bitwise(benchmark):
    m = benchmark.with_eps(0.25)
    grid = TimeGrid.for_eps(1.0, 1 / 16, m.eps)
    a = simulate_coupled(m, grid, _bundle(m, grid, seed=3, unit=4))
    b = simulate_coupled(m, grid, _bundle(m, grid, seed=3, unit=4))
    assert np.array_equal(a.x, b.x) and np.array_equal(a.y, b.y)


def test_matches_direct_single_scale_integrator(benchmark):
    # independent re-expression of the scheme: one merged loop with the
    # epsilon scalings written out longhand
    m = benchmark.with_eps(0.5)
    grid = TimeGrid.for_eps(1.0, 1 / 8, m.eps)
    noise = _bundle(m, grid, seed=11)
    path = simulate_coupled(m, grid, noise)

    lam = m.space.eigenvalues
    eps = m.eps
    X = m.x0.copy()
    Y = m.y0.copy()
    st, ft, sif = noise.slow_times, noise.fine_times, noise.slow_in_fine
    for i in range(st.size - 1):
        Xa, Ya = X, Y
        for j in range(sif[i], sif[i + 1]):
            dt = ft[j + 1] - ft[j]
            drift = (np.tanh(Xa) - Y) - m.comp_H(Xa, Y)
            Y = np.exp(-lam * dt / eps) * (Y + dt / eps * drift
                                           + 0.5 * noise.w2[j] / math.sqrt(eps))
            for z in noise.n2_jumps.get(j + 1, []):
                Y = Y + 0.2 * z + 0.0 * Y
        dts = st[i + 1] - st[i]
        V = Xa + dts * (np.sin(Xa + Ya) - m.comp_h(Xa)) + 0.5 * np.cos(Xa) * noise.w1[i]
        X = np.exp(-lam * dts) * V
        for z in noise.n1_jumps.get(i + 1, []):
            X = X + 0.1 * z * np.sin(X)
    assert np.max(np.abs(path.x[-1] - X)) < 1e-10
    assert np.max(np.abs(path.y[-1] - Y)) < 1e-10


def test_sup_trackers_match_recomputation(benchmark):
    m = benchmark.with_eps(0.25)
    grid = TimeGrid.for_eps(1.0, 1 / 16, m.eps)
    path = simulate_coupled(m, grid, _bundle(m, grid, seed=9))
    assert path.sup_x == pytest.approx(np.linalg.norm(path.x, axis=1).max(), abs=0)
    assert path.sup_y == pytest.approx(np.linalg.norm(path.y, axis=1).max(), abs=0)


@pytest.mark.filterwarnings("ignore:overflow")
def test_blowup_carries_partial_path():
    m = make_model(f=lambda x, y: 1e308 * x + 0.0 * y, x0=10.0, f_bound=np.inf)
    grid = TimeGrid.for_eps(1.0, 1 / 8, m.eps)
    with pytest.raises(BlowUp) as exc:
        simulate_coupled(m, grid, _bundle(m, grid))
    assert exc.value.partial is not None
    assert np.all(np.isfinite(exc.value.partial.x))
    assert exc.value.t <= 1.0


def test_self_convergence_under_step_refinement(benchmark):
    # strong order ~1/2: successive-difference ratios in [0.4, 1.0],
    # differences decreasing, common noise via bundle coarsening
    m = benchmark.with_eps(0.25)
    hs = [1 / 16, 1 / 32, 1 / 64, 1 / 128]
    grids = [TimeGrid.for_eps(1.0, h, m.eps) for h in hs]
    n_paths = 1000
    ends = np.zeros((len(hs), n_paths))
    for k in range(n_paths):
        fine = _bundle(m, grids[-1], seed=21, unit=k)
        for gi, g in enumerate(grids):
            b = fine if gi == len(grids) - 1 else coarsen_bundle(fine, g)
            ends[gi, k] = simulate_coupled(m, g, b).x[-1, 0]
    diffs = [np.abs(ends[i] - ends[i + 1]).mean() for i in range(len(hs) - 1)]
    assert diffs[0] > diffs[1] > diffs[2]
    for r in (diffs[1] / diffs[0], diffs[2] / diffs[1]):
        assert 0.4 <= r <= 1.0


# ---------------------------------------------------------------------------
# frozen-fast integrator
# ---------------------------------------------------------------------------

def test_frozen_linear_ode_limit():
    # G = 0, rates 0, x = 0: Y_t = e^{-2t} y0 (drift tanh(0) - 2y)
    m = make_model(F=lambda x, y: np.tanh(x) - y, y0=1.0)
    grid = TimeGrid(horizon=2.0, n_slow=1, n_sub=2000)
    nf = frozen_noise(m.nu2, grid, 1, 5)
    path = simulate_frozen(m, 0.0, 1.0, grid, nf)
    # first-order accuracy: bias ~ e^{-4} * T * dt
    assert abs(path.y[-1, 0] - math.exp(-4.0)) < 1e-4


def test_frozen_ou_stationary_moments(benchmark_nojump):
    # x = 1: mean tanh(1)/2, variance sigma_G^2 / 4, within 3 SE
    m = benchmark_nojump
    T, R = 205.0, 16
    grid = TimeGrid(horizon=T, n_slow=1, n_sub=round(T / 0.01))
    means, variances = [], []
    for r in range(R):
        nf = frozen_noise(m.nu2, grid, 1, 31, unit=r)
        path = simulate_frozen(m, 1.0, 1.0, grid, nf)
        ym = path.time_average(path.y, 5.0, T)[0]
        yv = path.time_average(path.y ** 2, 5.0, T)[0] - ym ** 2
        means.append(ym)
        variances.append(yv)
    se_m = np.std(means, ddof=1) / math.sqrt(R)
    se_v = np.std(variances, ddof=1) / math.sqrt(R)
    assert abs(np.mean(means) - math.tanh(1.0) / 2) < 3 * se_m
    assert abs(np.mean(variances) - 0.0625) < 3 * se_v


# ---------------------------------------------------------------------------
# reduced integrator
# ---------------------------------------------------------------------------

def test_reduced_deterministic_flow():
    m = make_model(x0=1.0)
    grid = TimeGrid.for_eps(1.0, 1 / 32, m.eps)
    path = simulate_reduced(m, lambda x: 0.0 * x, grid, _bundle(m, grid))
    assert abs(path.x[-1, 0] - math.exp(-1.0)) < 1e-12


def test_reduced_determinism(benchmark):
    m = benchmark.with_eps(0.25)
    grid = TimeGrid.for_eps(1.0, 1 / 16, m.eps)
    fb = lambda x: np.sin(x)
    a = simulate_reduced(m, fb, grid, _bundle(m, grid, seed=2, unit=1))
    b = simulate_reduced(m, fb, grid, _bundle(m, grid, seed=2, unit=1))
    assert np.array_equal(a.x, b.x)


def test_reduced_equals_coupled_with_pinned_slow_argument(benchmark):
    # f'(x, y) := f(x, y*) makes the coupled slow path identical to the
    # reduced path driven by fbar(x) = f(x, y*) on the same noise
    ystar = 0.7
    pinned = replace(benchmark, coeffs=replace(benchmark.coeffs,
                                               f=lambda x, y: np.sin(x + ystar)))
    m = pinned.with_eps(0.25)
    grid = TimeGrid.for_eps(1.0, 1 / 16, m.eps)
    noise = _bundle(m, grid, seed=13)
    cp = simulate_coupled(m, grid, noise)
    rp = simulate_reduced(m, lambda x: np.sin(x + ystar), grid, noise)
    assert np.max(np.abs(cp.x - rp.x)) < 1e-10


def test_reduced_never_touches_fast_streams(benchmark):
    m = benchmark.with_eps(0.25)
    grid = TimeGrid.for_eps(1.0, 1 / 16, m.eps)
    noise = _bundle(m, grid, seed=4)
    simulate_reduced(m, lambda x: np.sin(x), grid, noise)
    assert noise.consumed["w2"] == 0 and noise.consumed["n2"] == 0
    assert noise.consumed["w1"] == noise.slow_times.size - 1
    assert noise.consumed["n1"] == len(noise.n1)


# ---------------------------------------------------------------------------
# auxiliary pair
# ---------------------------------------------------------------------------

def test_auxiliary_single_block_is_frozen_fast(benchmark):
    # delta >= T: Y_hat is the fast path with slow argument pinned at X0
    m = benchmark.with_eps(0.25)
    grid = TimeGrid.for_eps(1.0, 1 / 8, m.eps)
    noise = _bundle(m, grid, seed=17)
    cp = simulate_coupled(m, grid, noise)
    aux = simulate_auxiliary(m, 1.0, grid, noise, coupled=cp)

    lam = m.space.eigenvalues
    eps = m.eps
    Y = m.y0.copy()
    X0 = m.x0
    ft = noise.fine_times
    got = {0: Y.copy()}
    for j in range(ft.size - 1):
        dt = ft[j + 1] - ft[j]
        drift = m.coeffs.F(X0, Y) - m.comp_H(X0, Y)
        Y = np.exp(-lam * dt / eps) * (Y + dt / eps * drift
                                       + m.coeffs.G(X0, Y) * noise.w2[j] / math.sqrt(eps))
        for z in noise.n2_jumps.get(j + 1, []):
            Y = Y + m.coeffs.H(X0, Y, z)
        got[j + 1] = Y.copy()
    oracle = np.array([got[j] for j in noise.slow_in_fine])
    assert np.max(np.abs(aux.y_hat - oracle)) < 1e-12


def test_auxiliary_yfree_f_gap_is_pure_staleness(benchmark):
    # f independent of y: X_hat - X is only the f(X_blk) - f(X_s) staleness,
    # which shrinks with delta
    yfree = replace(benchmark, coeffs=replace(benchmark.coeffs,
                                              f=lambda x, y: np.sin(x)))
    m = yfree.with_eps(0.25)
    grid = TimeGrid.for_eps(1.0, 1 / 32, m.eps)
    gaps = {}
    for delta in (1 / 32, 1 / 4):
        vals = []
        for k in range(40):
            noise = _bundle(m, grid, seed=23, unit=k)
            aux = simulate_auxiliary(m, delta, grid, noise)
            vals.append(aux.x_gap.max())
        gaps[delta] = np.mean(vals)
    assert gaps[1 / 32] < gaps[1 / 4]
    assert gaps[1 / 32] < 5e-3


def test_auxiliary_block_alignment_enforced(benchmark):
    m = benchmark.with_eps(0.25)
    grid = TimeGrid.for_eps(1.0, 1 / 8, m.eps)
    noise = _bundle(m, grid, seed=2)
    with pytest.raises(InvalidBlock):
        simulate_auxiliary(m, 1.5 * grid.h, grid, noise)


def test_auxiliary_khasminskii_gap_shrinks_with_delta(benchmark):
    # Lemma-5 trend at fixed eps: halving delta lowers the X-gap
    m = benchmark.with_eps(2 ** -6)
    grid = TimeGrid.for_eps(1.0, 1 / 32, m.eps)
    out = {}
    for delta in (1 / 32, 1 / 8):
        vals = []
        for k in range(40):
            noise = _bundle(m, grid, seed=29, unit=k)
            aux = simulate_auxiliary(m, delta, grid, noise)
            vals.append(aux.x_gap.max() ** 2)
        out[delta] = (np.mean(vals), np.std(vals, ddof=1) / math.sqrt(len(vals)))
    assert out[1 / 32][0] < out[1 / 8][0] + 3 * math.hypot(out[1 / 32][1], out[1 / 8][1])


# ---------------------------------------------------------------------------
# energy-identity diagnostic
# ---------------------------------------------------------------------------

def test_energy_residual_deterministic_zero():
    m = make_model(x0=1.3)
    grid = TimeGrid.for_eps(1.0, 1 / 32, m.eps)
    noise = _bundle(m, grid)
    path = simulate_coupled(m, grid, noise)
    for p in (1, 2, 3):
        res = energy_residual(path, m, noise, p=p)
        assert np.max(np.abs(res)) < 1e-8


def test_energy_residual_shrinks_with_step(benchmark):
    m = benchmark.with_eps(0.25)
    sizes = {}
    for h in (1 / 32, 1 / 64):
        grid = TimeGrid.for_eps(1.0, h, m.eps)
        tot = 0.0
        for k in range(100):
            noise = _bundle(m, grid, seed=37, unit=k)
            path = simulate_coupled(m, grid, noise)
            tot += np.abs(energy_residual(path, m, noise, p=1)).max()
        sizes[h] = tot / 100
    assert sizes[1 / 32] / sizes[1 / 64] >= 1.5


def test_energy_residual_jump_bookkeeping_exact():
    # pure-jump slow dynamics with exactly-cancelling compensator: every
    # term except the exact jump differences vanishes, so the residual is
    # identically zero even at p = 2
    nu = JumpMeasure.atoms([-0.3, 0.3], [1.0, 1.0], cutoff_c=1.0)
    m = make_model(h=lambda x, z: z + 0.0 * x, nu1=nu, nu2=None, x0=1.0)
    grid = TimeGrid.for_eps(1.0, 1 / 16, m.eps)
    noise = _bundle(m, grid, seed=41)
    assert len(noise.n1) > 0
    path = simulate_coupled(m, grid, noise)
    res = energy_residual(path, m, noise, p=2)
    assert np.max(np.abs(res)) == 0.0


def test_energy_residual_requires_matching_noise(benchmark):
    m = benchmark.with_eps(0.25)
    grid = TimeGrid.for_eps(1.0, 1 / 16, m.eps)
    n1 = _bundle(m, grid, seed=1)
    n2 = _bundle(m, grid, seed=1)
    path = simulate_coupled(m, grid, n1)
    with pytest.raises(InvalidPairing):
        energy_residual(path, m, n2, p=1)
