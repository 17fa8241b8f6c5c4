"""Finite spectral truncation of the diagonal negative operator.

State vectors are plain numpy arrays of eigenbasis coefficients; the
Gelfand triple collapses to one finite-dimensional space whose dual
pairing is the inner product.  The semigroup, fractional powers, and
fractional norms are all diagonal, so every operation is componentwise.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidExponent, InvalidTime


@dataclass(frozen=True)
class SpectralSpace:
    """Eigenvalues of -A (all positive, so 0 is in the resolvent set)."""

    eigenvalues: np.ndarray

    def __post_init__(self):
        lam = np.asarray(self.eigenvalues, dtype=float)
        if lam.ndim != 1 or lam.size < 1:
            raise InvalidExponent("eigenvalues must be a nonempty 1-d array")
        if np.any(lam <= 0):
            raise InvalidExponent("all eigenvalues of -A must be positive")
        object.__setattr__(self, "eigenvalues", lam)

    @property
    def dim(self) -> int:
        return int(self.eigenvalues.size)

    @property
    def beta1(self) -> float:
        """Dissipativity rate: <Ax, x> <= -beta1 ||x||^2 holds by construction."""
        return float(self.eigenvalues.min())

    @staticmethod
    def scalar(lam: float = 1.0) -> "SpectralSpace":
        return SpectralSpace(np.array([lam]))

    @staticmethod
    def laplacian(dim: int) -> "SpectralSpace":
        """Dirichlet Laplacian spectrum lambda_k = (k pi)^2, k = 1..dim."""
        k = np.arange(1, dim + 1, dtype=float)
        return SpectralSpace((k * np.pi) ** 2)

    @staticmethod
    def from_config(cfg: dict) -> "SpectralSpace":
        kind = cfg.get("kind", "scalar")
        if kind == "scalar":
            return SpectralSpace.scalar(float(cfg.get("eigenvalues", [1.0])[0]))
        if kind == "laplacian":
            return SpectralSpace.laplacian(int(cfg["dim"]))
        if kind == "explicit":
            return SpectralSpace(np.asarray(cfg["eigenvalues"], dtype=float))
        raise InvalidExponent(f"unknown space kind {kind!r}")

    def to_config(self) -> dict:
        return {"kind": "explicit", "dim": self.dim, "eigenvalues": self.eigenvalues.tolist()}

    def pairing_a(self, x: np.ndarray) -> float:
        """<Ax, x> = -sum lambda_k x_k^2."""
        x = np.asarray(x, dtype=float)
        return float(-np.dot(self.eigenvalues, x * x))

    def decay(self, t: float) -> np.ndarray:
        """Diagonal of S_t = e^{tA}: exp(-lambda_k t)."""
        return np.exp(-self.eigenvalues * t)


def apply_semigroup(space: SpectralSpace, t: float, x: np.ndarray) -> np.ndarray:
    """S_t x = (e^{-lambda_k t} x_k)_k; contraction for t >= 0."""
    if t < 0:
        raise InvalidTime(f"semigroup time must be >= 0, got {t}")
    return space.decay(t) * np.asarray(x, dtype=float)


def fractional_norm(space: SpectralSpace, alpha: float, x: np.ndarray) -> float:
    """||x||_alpha = ||(-A)^alpha x|| = sqrt(sum lambda_k^{2 alpha} x_k^2)."""
    if not 0 < alpha <= 1:
        raise InvalidExponent(f"alpha must be in (0, 1], got {alpha}")
    x = np.asarray(x, dtype=float)
    return float(np.sqrt(np.sum(space.eigenvalues ** (2 * alpha) * x * x)))


def fractional_semigroup_bound(space: SpectralSpace, alpha: float, t: float):
    """Operator norm of (-A)^alpha S_t and its envelope (alpha/e)^alpha t^-alpha.

    The norm is max_k lambda_k^alpha e^{-lambda_k t}; maximizing over a
    continuous lambda > 0 gives the envelope, so norm <= bound always.
    """
    if not 0 < alpha <= 1:
        raise InvalidExponent(f"alpha must be in (0, 1], got {alpha}")
    if t <= 0:
        raise InvalidTime(f"need t > 0, got {t}")
    lam = space.eigenvalues
    norm = float(np.max(lam ** alpha * np.exp(-lam * t)))
    bound = (alpha / np.e) ** alpha * t ** (-alpha)
    assert norm <= bound * (1 + 1e-12), (norm, bound)
    return norm, bound
