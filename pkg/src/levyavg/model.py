"""Slow-fast model definition: coefficient maps, hypothesis constants,
and the numerical hypothesis audit.

Coefficients act componentwise in the eigenbasis for d > 1 presets
(Nemytskii convention), so a scalar map like sin(x + y) lifts to any
truncation dimension without a spatial grid.  Hypotheses are audited by
random sampling on a user-declared box; "globally" is therefore an
explicit extrapolation recorded in the report, not a symbolic proof.
"""

from __future__ import annotations

import ast
import math
from dataclasses import dataclass, field, replace
from typing import Callable, NamedTuple, Optional

import numpy as np

from . import rng as rngmod
from .errors import CoefficientError, InvalidExponent, UnsupportedModel
from .levy_noise import JumpMeasure
from .spectral import SpectralSpace


# ---------------------------------------------------------------------------
# safe arithmetic expressions (config-driven coefficients)
# ---------------------------------------------------------------------------

_EXPR_FUNCS = {
    "sin": np.sin, "cos": np.cos, "tan": np.tan, "tanh": np.tanh,
    "sinh": np.sinh, "cosh": np.cosh, "exp": np.exp, "abs": np.abs,
    "sqrt": np.sqrt, "log": np.log,
}
_EXPR_CONSTS = {"pi": math.pi, "e": math.e}
_ALLOWED_BINOPS = (ast.Add, ast.Sub, ast.Mult, ast.Div, ast.Pow)
_ALLOWED_UNARY = (ast.USub, ast.UAdd)


def _check_expr(node: ast.AST, names: set):
    if isinstance(node, ast.Expression):
        _check_expr(node.body, names)
    elif isinstance(node, ast.BinOp) and isinstance(node.op, _ALLOWED_BINOPS):
        _check_expr(node.left, names)
        _check_expr(node.right, names)
    elif isinstance(node, ast.UnaryOp) and isinstance(node.op, _ALLOWED_UNARY):
        _check_expr(node.operand, names)
    elif isinstance(node, ast.Call):
        if not (isinstance(node.func, ast.Name) and node.func.id in _EXPR_FUNCS) or node.keywords:
            raise UnsupportedModel(f"function not allowed in expression: {ast.dump(node)}")
        for a in node.args:
            _check_expr(a, names)
    elif isinstance(node, ast.Name):
        if node.id not in names and node.id not in _EXPR_CONSTS:
            raise UnsupportedModel(f"unknown name in expression: {node.id!r}")
    elif isinstance(node, ast.Constant):
        if not isinstance(node.value, (int, float)):
            raise UnsupportedModel(f"only numeric literals allowed, got {node.value!r}")
    else:
        raise UnsupportedModel(f"syntax not allowed in expression: {ast.dump(node)}")


class ExprFn:
    """Coefficient compiled from a small arithmetic expression.

    Picklable via its source string, so expression models cross process
    boundaries in parallel studies.
    """

    def __init__(self, source: str, argnames):
        self.source = source
        self.argnames = tuple(argnames)
        self._compile()

    def _compile(self):
        tree = ast.parse(self.source, mode="eval")
        _check_expr(tree, set(self.argnames))
        code = compile(tree, f"<coefficient {self.source!r}>", "eval")
        env = {"__builtins__": {}}
        env.update(_EXPR_FUNCS)
        env.update(_EXPR_CONSTS)

        def fn(*args):
            local = dict(zip(self.argnames, args))
            return eval(code, env, local)

        self._fn = fn

    def __call__(self, *args):
        return self._fn(*args)

    def __getstate__(self):
        return {"source": self.source, "argnames": self.argnames}

    def __setstate__(self, state):
        self.__init__(state["source"], state["argnames"])

    def __repr__(self):
        return f"ExprFn({self.source!r})"


# ---------------------------------------------------------------------------
# model types
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CoefficientSet:
    """Maps (f, g, h, F, G, H); f must be globally bounded by f_bound."""

    f: Callable    # f(x, y) slow drift
    g: Callable    # g(x) slow diffusion
    h: Callable    # h(x, z) slow jump coefficient
    F: Callable    # F(x, y) fast drift
    G: Callable    # G(x, y) fast diffusion
    H: Callable    # H(x, y, z) fast jump coefficient
    f_bound: float = np.inf
    sources: Optional[dict] = None   # expression strings when config-loaded


@dataclass(frozen=True)
class HypothesisConstants:
    beta1: float
    beta2: float
    beta3: float
    beta4: float
    c1: float
    c2: float
    c3: float
    c4: float
    c5: float

    @property
    def kappa(self) -> float:
        return 2 * self.beta1 + 2 * self.beta2 - self.c3 - self.c5

    @property
    def eta(self) -> float:
        return 2 * self.beta1 - 2 * self.beta4 - self.c1 - self.c2

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in
                ("beta1", "beta2", "beta3", "beta4", "c1", "c2", "c3", "c4", "c5")}


@dataclass(frozen=True)
class SlowFastModel:
    space: SpectralSpace
    coeffs: CoefficientSet
    eps: float
    nu1: JumpMeasure
    nu2: JumpMeasure
    constants: HypothesisConstants
    x0: np.ndarray = None
    y0: np.ndarray = None
    name: str = "model"

    def __post_init__(self):
        if not 0 < self.eps < 1:
            raise UnsupportedModel(f"eps must be in (0, 1), got {self.eps}")
        if self.constants.kappa <= 0 or self.constants.eta <= 0:
            raise UnsupportedModel(
                f"declared constants violate the dissipativity margins: "
                f"kappa={self.constants.kappa:.4g}, eta={self.constants.eta:.4g}")
        d = self.space.dim
        for attr, val in (("x0", self.x0), ("y0", self.y0)):
            if val is None:
                val = np.zeros(d)
            arr = np.full(d, float(val)) if np.ndim(val) == 0 else np.asarray(val, dtype=float)
            if arr.shape != (d,):
                raise UnsupportedModel(f"{attr} must have shape ({d},)")
            object.__setattr__(self, attr, arr)

    @property
    def dim(self) -> int:
        return self.space.dim

    def with_eps(self, eps: float) -> "SlowFastModel":
        return replace(self, eps=eps)

    # compensator drifts, evaluated by the measure's quadrature rule
    def comp_h(self, x: np.ndarray):
        """int h(x, z) nu1(dz); zero for a null measure."""
        if self.nu1.total_rate == 0:
            return 0.0
        return self.nu1.integrate(lambda z: self.coeffs.h(x[:, None], z))

    def comp_H(self, x: np.ndarray, y: np.ndarray):
        """int H(x, y, z) nu2(dz)."""
        if self.nu2.total_rate == 0:
            return 0.0
        return self.nu2.integrate(lambda z: self.coeffs.H(x[:, None], y[:, None], z))


class CoefficientValues(NamedTuple):
    f: np.ndarray
    g: np.ndarray
    F: np.ndarray
    G: np.ndarray
    h: Optional[np.ndarray] = None
    H: Optional[np.ndarray] = None


def eval_coefficients(model: SlowFastModel, x, y, z: float = None) -> CoefficientValues:
    """Evaluate all coefficient maps at (x, y) and optionally a jump size z."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    vals = {}
    todo = [("f", lambda: model.coeffs.f(x, y)), ("g", lambda: model.coeffs.g(x)),
            ("F", lambda: model.coeffs.F(x, y)), ("G", lambda: model.coeffs.G(x, y))]
    if z is not None:
        todo += [("h", lambda: model.coeffs.h(x, z)), ("H", lambda: model.coeffs.H(x, y, z))]
    for name, fn in todo:
        v = np.asarray(fn(), dtype=float)
        if not np.all(np.isfinite(v)):
            raise CoefficientError(f"coefficient {name} non-finite at x={x}, y={y}, z={z}")
        vals[name] = v
    return CoefficientValues(**vals)


# ---------------------------------------------------------------------------
# builtin models
# ---------------------------------------------------------------------------

def _bench_f(x, y):
    return np.sin(x + y)


def _bench_g(x):
    return 0.5 * np.cos(x)


def _bench_h(x, z):
    return 0.1 * z * np.sin(x)


def _bench_F(x, y):
    return np.tanh(x) - y


def _bench_G(x, y):
    return 0.5 + 0.0 * (x + y)


def _bench_H(x, y, z):
    return 0.2 * z + 0.0 * (x + y)


_BENCH_CONSTANTS = HypothesisConstants(
    beta1=1.0, beta2=0.5, beta3=0.5, beta4=0.0,
    c1=1.8, c2=0.05, c3=1.5, c4=0.05, c5=0.05,
)


def builtin_benchmark(eps: float = 0.1) -> SlowFastModel:
    """Scalar benchmark satisfying Hypotheses 1-4.

    f = sin(x+y), g = 0.5 cos x, h = 0.1 z sin x, F = tanh x - y,
    G = 0.5, H = 0.2 z; both jump measures are compound Poisson with
    rate 1 and uniform[-0.5, 0.5] sizes, cutoff c = 1.
    """
    coeffs = CoefficientSet(f=_bench_f, g=_bench_g, h=_bench_h,
                            F=_bench_F, G=_bench_G, H=_bench_H, f_bound=1.0)
    nu = JumpMeasure.uniform(rate=1.0, low=-0.5, high=0.5, cutoff_c=1.0)
    return SlowFastModel(space=SpectralSpace.scalar(1.0), coeffs=coeffs, eps=eps,
                         nu1=nu, nu2=nu, constants=_BENCH_CONSTANTS,
                         x0=1.0, y0=1.0, name="benchmark")


def builtin_benchmark16(eps: float = 0.1) -> SlowFastModel:
    """Benchmark coefficients on the d = 16 Laplacian spectrum preset."""
    coeffs = CoefficientSet(f=_bench_f, g=_bench_g, h=_bench_h,
                            F=_bench_F, G=_bench_G, H=_bench_H, f_bound=1.0)
    nu = JumpMeasure.uniform(rate=1.0, low=-0.5, high=0.5, cutoff_c=1.0)
    k = np.arange(1, 17, dtype=float)
    consts = replace(_BENCH_CONSTANTS, beta3=8.0)
    return SlowFastModel(space=SpectralSpace.laplacian(16), coeffs=coeffs, eps=eps,
                         nu1=nu, nu2=nu, constants=consts,
                         x0=1.0 / k, y0=1.0 / k, name="benchmark16")


_BUILTINS = {"benchmark": builtin_benchmark, "benchmark16": builtin_benchmark16}


def load_model(spec, eps: float = None) -> SlowFastModel:
    """Build a model from 'builtin:<name>' or a config dict."""
    if isinstance(spec, str):
        if spec.startswith("builtin:"):
            name = spec.split(":", 1)[1]
            if name not in _BUILTINS:
                raise UnsupportedModel(f"unknown builtin model {name!r}")
            model = _BUILTINS[name]()
        else:
            raise UnsupportedModel(f"model spec must be 'builtin:<name>' or a config dict, got {spec!r}")
    else:
        model = _model_from_config(spec)
    if eps is not None:
        model = model.with_eps(eps)
    return model


def _model_from_config(cfg: dict) -> SlowFastModel:
    space = SpectralSpace.from_config(cfg.get("space", {"kind": "scalar"}))
    cc = cfg["coeffs"]
    sources = {k: cc[k] for k in ("f", "g", "h", "F", "G", "H")}
    coeffs = CoefficientSet(
        f=ExprFn(cc["f"], ("x", "y")),
        g=ExprFn(cc["g"], ("x",)),
        h=ExprFn(cc["h"], ("x", "z")),
        F=ExprFn(cc["F"], ("x", "y")),
        G=ExprFn(cc["G"], ("x", "y")),
        H=ExprFn(cc["H"], ("x", "y", "z")),
        f_bound=float(cc.get("f_bound", np.inf)),
        sources=sources,
    )
    consts = HypothesisConstants(**{k: float(v) for k, v in cfg["constants"].items()})
    return SlowFastModel(
        space=space, coeffs=coeffs, eps=float(cfg.get("eps", 0.1)),
        nu1=JumpMeasure.from_config(cfg.get("nu1", {"kind": "null"})),
        nu2=JumpMeasure.from_config(cfg.get("nu2", {"kind": "null"})),
        constants=consts, x0=cfg.get("x0", 0.0), y0=cfg.get("y0", 0.0),
        name=cfg.get("name", "config-model"),
    )


# ---------------------------------------------------------------------------
# hypothesis audit
# ---------------------------------------------------------------------------

@dataclass
class HypothesisReport:
    """Empirical hypothesis constants sampled on a box.

    Estimates are measured surrogates: Lipschitz and growth quotients are
    maxima over sampled pairs, the dissipativity margin beta2_hat is a
    minimum given the declared beta3, and beta4_hat is the maximal
    monotonicity ratio of F in y.  kappa_hat and eta_hat combine the
    estimates, so eta_hat uses the measured beta4 (for the benchmark that
    is -1, much sharper than the declared 0).
    """

    box: tuple
    n_samples: int
    seed: int
    declared: HypothesisConstants
    beta1: float = 0.0
    beta2_hat: float = 0.0
    beta4_hat: float = 0.0
    c1_hat: float = 0.0
    c2_hat: float = 0.0
    c3_hat: float = 0.0
    c4_hat: float = 0.0
    c5_hat: float = 0.0
    f_sup: float = 0.0
    f_bound: float = np.inf
    kappa_hat: float = 0.0
    eta_hat: float = 0.0
    failures: dict = field(default_factory=dict)   # hypothesis -> reason

    def margins(self) -> dict:
        """Signed slack per hypothesis; a pass means margin > -tol."""
        out = {
            "h1_dissipativity": min(self.beta1, self.beta2_hat),
            "h2_lipschitz": np.inf if np.isfinite(self.c1_hat) and np.isfinite(self.c2_hat) else -np.inf,
            "h3_growth": self._f_margin(),
            "h4_margins": min(self.kappa_hat, self.eta_hat),
        }
        for name in self.failures:
            out[name] = -np.inf
        return out

    def _f_margin(self) -> float:
        if not all(np.isfinite(v) for v in (self.c3_hat, self.c4_hat, self.c5_hat, self.f_sup)):
            return -np.inf
        return self.f_bound - self.f_sup if np.isfinite(self.f_bound) else np.inf

    def flags(self, tol: float = 0.0) -> dict:
        return {k: bool(v > -tol) for k, v in self.margins().items()}

    @property
    def all_pass(self) -> bool:
        return all(self.flags().values())


def _sample_box_pairs(box, dim, n, stream):
    (xlo, xhi), (ylo, yhi) = box
    x1 = stream.uniform(xlo, xhi, (n, dim))
    y1 = stream.uniform(ylo, yhi, (n, dim))
    # half independent partners, half local perturbations across scales
    x2 = stream.uniform(xlo, xhi, (n, dim))
    y2 = stream.uniform(ylo, yhi, (n, dim))
    half = n // 2
    span = max(xhi - xlo, yhi - ylo)
    r = np.exp(stream.uniform(np.log(1e-3 * span), np.log(0.5 * span), (half, 1)))
    direc = stream.standard_normal((half, 2 * dim))
    direc /= np.linalg.norm(direc, axis=1, keepdims=True)
    x2[:half] = np.clip(x1[:half] + r * direc[:, :dim], xlo, xhi)
    y2[:half] = np.clip(y1[:half] + r * direc[:, dim:], ylo, yhi)
    return x1, y1, x2, y2


def verify_hypotheses(model: SlowFastModel, sample_box=(-3.0, 3.0), n_samples: int = 10_000,
                      seed: int = 0) -> HypothesisReport:
    """Audit Hypotheses 1-4 numerically on a sample box.

    Growth quotients for the jump coefficients (C4, C5) are read as
    large-argument rates: samples with denominator below unit scale say
    nothing about growth and would blow up the quotient of any
    coefficient without an (x, y)-vanishing factor, so they are skipped.
    Non-finite quotients are reported as per-hypothesis failures rather
    than raised.
    """
    if np.ndim(sample_box[0]) == 0:
        sample_box = (tuple(sample_box), tuple(sample_box))
    if n_samples < 2:
        raise UnsupportedModel("need n_samples >= 2")
    d = model.dim
    nu1, nu2 = model.nu1, model.nu2
    cs = model.coeffs
    stream = rngmod.substream(seed, rngmod.HYP, 0)
    x1, y1, x2, y2 = _sample_box_pairs(sample_box, d, n_samples, stream)

    rep = HypothesisReport(box=sample_box, n_samples=n_samples, seed=seed,
                           declared=model.constants, beta1=model.space.beta1,
                           f_bound=cs.f_bound)
    qs = (2, 4, 6)
    n = n_samples

    def as_nd(v):
        return np.broadcast_to(np.asarray(v, dtype=float), (n, d))

    def as_ndm(v, m):
        return np.broadcast_to(np.asarray(v, dtype=float), (n, d, m))

    with np.errstate(all="ignore"):
        sq = lambda a: np.sum(as_nd(a) ** 2, axis=1)
        nx2 = np.sum((x1 - x2) ** 2, axis=1)
        ny2 = np.sum((y1 - y2) ** 2, axis=1)
        sep2 = nx2 + ny2
        ok = sep2 > 1e-24

        # H1: monotonicity of F in y at shared x, and dissipativity margin of y.F
        dF = as_nd(cs.F(x1, y1)) - as_nd(cs.F(x1, y2))
        mono = np.sum(dF * (y1 - y2), axis=1) / np.where(ny2 > 1e-24, ny2, np.nan)
        rep.beta4_hat = _safe_max(mono, rep, "h1_dissipativity")
        yF = np.sum(as_nd(cs.F(x1, y1)) * y1, axis=1)
        ny = np.sum(y1 ** 2, axis=1)
        floor = ny >= 0.09
        margin = (model.constants.beta3 - yF[floor]) / ny[floor]
        rep.beta2_hat = _safe_min(margin, rep, "h1_dissipativity")

        # H2: combined Lipschitz quotient (C1) and H q-moment quotient (C2)
        num = sq(cs.f(x1, y1) - cs.f(x2, y2)) + sq(np.asarray(cs.g(x1)) - np.asarray(cs.g(x2))) \
            + sq(np.asarray(cs.F(x1, y1)) - np.asarray(cs.F(x2, y2))) \
            + sq(np.asarray(cs.G(x1, y1)) - np.asarray(cs.G(x2, y2)))
        if nu1.total_rate > 0:
            dh = nu1.integrate(lambda z: np.sum(
                (as_ndm(cs.h(x1[:, :, None], z), z.size)
                 - as_ndm(cs.h(x2[:, :, None], z), z.size)) ** 2, axis=1))
            num = num + dh
        rep.c1_hat = _safe_max(num[ok] / sep2[ok], rep, "h2_lipschitz")
        if nu2.total_rate > 0:
            c2 = 0.0
            for q in qs:
                dq = nu2.integrate(lambda z: np.sum(
                    (as_ndm(cs.H(x1[:, :, None], y1[:, :, None], z), z.size)
                     - as_ndm(cs.H(x2[:, :, None], y2[:, :, None], z), z.size)) ** 2,
                    axis=1) ** (q / 2))
                den = nx2 ** (q / 2) + ny2 ** (q / 2)
                good = ok & (den > 1e-24)
                c2 = max(c2, _safe_max(np.asarray(dq)[good] / den[good], rep, "h2_lipschitz"))
            rep.c2_hat = c2
        else:
            rep.c2_hat = 0.0

        # H3: boundedness of f and growth quotients (C3, C4, C5)
        rep.f_sup = float(np.max(np.abs(as_nd(cs.f(x1, y1)))))
        gx2 = sq(cs.f(x1, y1)) + sq(cs.g(x1)) + sq(cs.F(x1, y1)) + sq(cs.G(x1, y1))
        rep.c3_hat = _safe_max(gx2 / (1.0 + np.sum(x1 ** 2, axis=1) + ny), rep, "h3_growth")
        c4 = 0.0
        c5 = 0.0
        for q in qs:
            if nu1.total_rate > 0:
                hq = nu1.integrate(lambda z: np.sum(
                    as_ndm(cs.h(x1[:, :, None], z), z.size) ** 2, axis=1) ** (q / 2))
                c4 = max(c4, _safe_max(np.asarray(hq) / (1.0 + np.sum(np.abs(x1) ** q, axis=1)),
                                       rep, "h3_growth"))
            if nu2.total_rate > 0:
                Hq = nu2.integrate(lambda z: np.sum(
                    as_ndm(cs.H(x1[:, :, None], y1[:, :, None], z), z.size) ** 2,
                    axis=1) ** (q / 2))
                den = np.sum(np.abs(x1) ** q, axis=1) + np.sum(np.abs(y1) ** q, axis=1)
                big = den >= 1.0
                if big.any():
                    c5 = max(c5, _safe_max(np.asarray(Hq)[big] / den[big], rep, "h3_growth"))
        rep.c4_hat, rep.c5_hat = c4, c5

    rep.kappa_hat = 2 * rep.beta1 + 2 * rep.beta2_hat - rep.c3_hat - rep.c5_hat
    rep.eta_hat = 2 * rep.beta1 - 2 * rep.beta4_hat - rep.c1_hat - rep.c2_hat
    if rep.kappa_hat <= 0 or rep.eta_hat <= 0:
        rep.failures.setdefault(
            "h4_margins", f"kappa_hat={rep.kappa_hat:.4g}, eta_hat={rep.eta_hat:.4g}")
    if np.isfinite(cs.f_bound) and rep.f_sup > cs.f_bound * (1 + 1e-9):
        rep.failures.setdefault(
            "h3_growth", f"sup|f| = {rep.f_sup:.4g} exceeds declared bound {cs.f_bound:.4g}")
    return rep


def _safe_max(arr, rep: HypothesisReport, hyp: str) -> float:
    arr = np.asarray(arr, dtype=float)
    arr = arr[~np.isnan(arr)]
    if arr.size == 0:
        return 0.0
    if not np.all(np.isfinite(arr)):
        rep.failures.setdefault(hyp, "non-finite quotient in sampling")
        return np.inf
    return float(arr.max())


def _safe_min(arr, rep: HypothesisReport, hyp: str) -> float:
    arr = np.asarray(arr, dtype=float)
    arr = arr[~np.isnan(arr)]
    if arr.size == 0:
        return 0.0
    if not np.all(np.isfinite(arr)):
        rep.failures.setdefault(hyp, "non-finite quotient in sampling")
        return -np.inf
    return float(arr.min())
