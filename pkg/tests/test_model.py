import math
import pickle
from dataclasses import replace

import numpy as np
import pytest

from levyavg.errors import CoefficientError, UnsupportedModel
from levyavg.model import (ExprFn, builtin_benchmark, builtin_benchmark16,
                           eval_coefficients, load_model, verify_hypotheses)


def test_eval_at_origin(benchmark):
    vals = eval_coefficients(benchmark, [0.0], [0.0])
    assert vals.f == pytest.approx([0.0])
    assert vals.F == pytest.approx([0.0])


def test_eval_standard_points(benchmark):
    vals = eval_coefficients(benchmark, [1.0], [0.0])
    assert vals.F[0] == pytest.approx(math.tanh(1.0), abs=1e-12)
    vals2 = eval_coefficients(benchmark, [math.pi / 2], [0.0], z=0.5)
    assert vals2.h[0] == pytest.approx(0.05)
    assert vals2.H[0] == pytest.approx(0.1)


def test_eval_deterministic(benchmark):
    a = eval_coefficients(benchmark, [0.3], [0.7], z=0.1)
    b = eval_coefficients(benchmark, [0.3], [0.7], z=0.1)
    for u, v in zip(a, b):
        if u is not None:
            assert np.array_equal(u, v)


def test_eval_nonfinite_raises(benchmark):
    bad = replace(benchmark, coeffs=replace(benchmark.coeffs, g=lambda x: np.log(x)))
    with pytest.raises(CoefficientError, match="coefficient g"):
        eval_coefficients(bad, [-1.0], [0.0])


def test_frozen_fast_drift_is_linear(benchmark):
    # A y + F(x, y) = tanh x - 2y for the benchmark
    rng = np.random.default_rng(0)
    for _ in range(100):
        x, y = rng.uniform(-3, 3, 2)
        drift = -benchmark.space.eigenvalues[0] * y + benchmark.coeffs.F(np.array([x]), np.array([y]))[0]
        assert drift == pytest.approx(math.tanh(x) - 2 * y, abs=1e-12)


def test_benchmark_monotonicity_identity(benchmark):
    rng = np.random.default_rng(1)
    for _ in range(1000):
        x = rng.uniform(-3, 3, (1,))
        y1, y2 = rng.uniform(-3, 3, (2, 1))
        lhs = float(((benchmark.coeffs.F(x, y1) - benchmark.coeffs.F(x, y2)) * (y1 - y2))[0])
        assert lhs == pytest.approx(-float((y1 - y2)[0] ** 2), abs=1e-12)


def test_benchmark_audit_passes(benchmark):
    rep = verify_hypotheses(benchmark, (-3, 3), 10_000, seed=0)
    assert rep.all_pass
    assert rep.kappa_hat > 0.5 and rep.eta_hat > 0.5
    assert rep.beta4_hat == pytest.approx(-1.0, abs=1e-9)


def test_audit_flags_antidissipative_drift(benchmark):
    bad = replace(benchmark, coeffs=replace(benchmark.coeffs, F=lambda x, y: y + 0.0 * x))
    rep = verify_hypotheses(bad, (-3, 3), 4000, seed=0)
    assert rep.beta2_hat <= 0
    assert not rep.flags()["h1_dissipativity"]


def test_audit_flags_unbounded_f(benchmark):
    bad = replace(benchmark, coeffs=replace(benchmark.coeffs, f=lambda x, y: x + 0.0 * y))
    rep = verify_hypotheses(bad, (-10, 10), 4000, seed=0)
    assert not rep.flags()["h3_growth"]
    assert "h3_growth" in rep.failures


def test_audit_stable_under_doubling(benchmark):
    a = verify_hypotheses(benchmark, (-3, 3), 10_000, seed=0)
    b = verify_hypotheses(benchmark, (-3, 3), 20_000, seed=0)
    for k in ("beta2_hat", "c1_hat", "c3_hat", "kappa_hat", "eta_hat"):
        va, vb = getattr(a, k), getattr(b, k)
        assert abs(vb - va) / max(abs(va), 1e-12) < 0.05


def test_audit_reproducible(benchmark):
    a = verify_hypotheses(benchmark, (-3, 3), 2000, seed=5)
    b = verify_hypotheses(benchmark, (-3, 3), 2000, seed=5)
    assert a.c1_hat == b.c1_hat and a.kappa_hat == b.kappa_hat


def test_flags_monotone_in_tolerance(benchmark):
    bad = replace(benchmark, coeffs=replace(benchmark.coeffs, F=lambda x, y: 0.05 * y - 0.0 * x))
    rep = verify_hypotheses(bad, (-3, 3), 2000, seed=0)
    passed = [all(rep.flags(tol).values()) for tol in (0.0, 0.5, 5.0, 50.0)]
    assert passed == sorted(passed)  # once passing, stays passing


def test_expression_model_matches_builtin(benchmark):
    cfg = {
        "space": {"kind": "scalar"},
        "eps": 0.1,
        "coeffs": {"f": "sin(x+y)", "g": "0.5*cos(x)", "h": "0.1*z*sin(x)",
                   "F": "tanh(x)-y", "G": "0.5", "H": "0.2*z", "f_bound": 1.0},
        "nu1": {"kind": "uniform", "rate": 1.0, "params": {"low": -0.5, "high": 0.5},
                "cutoff_c": 1.0},
        "nu2": {"kind": "uniform", "rate": 1.0, "params": {"low": -0.5, "high": 0.5},
                "cutoff_c": 1.0},
        "constants": {"beta1": 1.0, "beta2": 0.5, "beta3": 0.5, "beta4": 0.0,
                      "c1": 1.8, "c2": 0.05, "c3": 1.5, "c4": 0.05, "c5": 0.05},
        "x0": 1.0, "y0": 1.0,
    }
    m = load_model(cfg)
    rng = np.random.default_rng(3)
    for _ in range(50):
        x, y, z = rng.uniform(-2, 2, 3)
        xv, yv = np.array([x]), np.array([y])
        assert m.coeffs.f(xv, yv) == pytest.approx(benchmark.coeffs.f(xv, yv))
        assert m.coeffs.F(xv, yv) == pytest.approx(benchmark.coeffs.F(xv, yv))
        assert m.coeffs.h(xv, z) == pytest.approx(benchmark.coeffs.h(xv, z))


def test_expression_rejects_unsafe():
    with pytest.raises(UnsupportedModel):
        ExprFn("__import__('os')", ("x",))
    with pytest.raises(UnsupportedModel):
        ExprFn("x + unknown", ("x",))
    with pytest.raises(UnsupportedModel):
        ExprFn("open('f')", ("x",))


def test_expression_pickles():
    fn = ExprFn("sin(x) + 2*y", ("x", "y"))
    fn2 = pickle.loads(pickle.dumps(fn))
    assert fn2(0.3, 0.5) == pytest.approx(fn(0.3, 0.5))


def test_builtin_lookup_and_eps():
    m = load_model("builtin:benchmark", eps=0.25)
    assert m.eps == 0.25
    m16 = load_model("builtin:benchmark16")
    assert m16.dim == 16
    with pytest.raises(UnsupportedModel):
        load_model("builtin:nope")


def test_declared_margins_enforced():
    m = builtin_benchmark()
    bad_consts = replace(m.constants, c1=5.0)
    with pytest.raises(UnsupportedModel):
        replace(m, constants=bad_consts)
    with pytest.raises(UnsupportedModel):
        m.with_eps(1.5)


def test_benchmark16_shapes():
    m = builtin_benchmark16()
    assert m.x0.shape == (16,)
    vals = eval_coefficients(m, m.x0, m.y0)
    assert vals.f.shape == (16,)
