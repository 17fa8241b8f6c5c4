import numpy as np
import pytest

from levyavg.levy_noise import JumpMeasure
from levyavg.model import (CoefficientSet, HypothesisConstants, SlowFastModel,
                           builtin_benchmark)
from levyavg.spectral import SpectralSpace


def _zero2(x, y):
    return 0.0 * x


def _zero1(x):
    return 0.0 * x


def _zero_z(x, z):
    return 0.0 * x * z


def _zero_yz(x, y, z):
    return 0.0 * x * z


_LOOSE = HypothesisConstants(beta1=1.0, beta2=0.5, beta3=0.5, beta4=0.0,
                             c1=0.1, c2=0.1, c3=0.1, c4=0.1, c5=0.1)


def make_model(f=_zero2, g=_zero1, h=_zero_z, F=_zero2, G=_zero2, H=_zero_yz,
               nu1=None, nu2=None, lam=1.0, eps=0.5, x0=1.0, y0=1.0,
               f_bound=np.inf, constants=_LOOSE):
    """Custom scalar model for targeted tests; noise off by default."""
    coeffs = CoefficientSet(f=f, g=g, h=h, F=F, G=G, H=H, f_bound=f_bound)
    return SlowFastModel(space=SpectralSpace.scalar(lam), coeffs=coeffs, eps=eps,
                         nu1=nu1 or JumpMeasure.null(), nu2=nu2 or JumpMeasure.null(),
                         constants=constants, x0=x0, y0=y0)


@pytest.fixture(scope="session")
def benchmark():
    return builtin_benchmark()


@pytest.fixture(scope="session")
def benchmark_nojump():
    """Benchmark with both jump measures switched off."""
    from dataclasses import replace
    m = builtin_benchmark()
    return replace(m, nu1=JumpMeasure.null(), nu2=JumpMeasure.null())


@pytest.fixture(scope="session")
def benchmark_nj2():
    """Benchmark with only the fast jumps off (sigma_H = 0 style)."""
    from dataclasses import replace
    m = builtin_benchmark()
    return replace(m, nu2=JumpMeasure.null())
