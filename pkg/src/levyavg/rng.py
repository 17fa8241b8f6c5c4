"""Deterministic random substreams for Monte Carlo work.

Every random draw in the package comes from a counter-based Philox
generator keyed by ``(master seed, stream id, unit id)``.  Streams with
different keys are independent, value-like, and cheap to construct, so
any (epsilon, path) cell of a study can be regenerated in isolation and
in any order -- including on worker processes.

Stream ids are stable constants; they are part of the reproducibility
contract (changing one changes every result downstream).
"""

from __future__ import annotations

import numpy as np

# stream ids
W1 = 1          # slow Brownian increments
W2 = 2          # fast Brownian increments
N1 = 3          # slow jump events
N2 = 4          # fast jump events
FROZEN_W2 = 5   # frozen-fast Brownian (averaging)
FROZEN_N2 = 6   # frozen-fast jumps (averaging)
HYP = 7         # hypothesis-audit sampling
MIX_W2 = 8      # mixing-curve Brownian
MIX_N2 = 9      # mixing-curve jumps
WINDOW_W2 = 10  # averaging-window Brownian
WINDOW_N2 = 11  # averaging-window jumps
GENERIC = 12    # scratch stream for tests/oracles

_MAX_STREAM = 1 << 16
_MAX_UNIT = 1 << 48


def substream(master_seed: int, stream: int, unit: int = 0) -> np.random.Generator:
    """Return the generator for key ``(master_seed, stream, unit)``.

    The same key always yields the same sequence, bit for bit.
    """
    if not 0 <= master_seed < (1 << 64):
        raise ValueError(f"master seed must be a 64-bit unsigned int, got {master_seed}")
    if not 0 <= stream < _MAX_STREAM:
        raise ValueError(f"stream id out of range: {stream}")
    if not 0 <= unit < _MAX_UNIT:
        raise ValueError(f"unit id out of range: {unit}")
    key = np.array([master_seed, (np.uint64(stream) << np.uint64(48)) | np.uint64(unit)],
                   dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def compose_unit(major: int, minor: int) -> int:
    """Pack two small indices into one unit id (major: 16 bits, minor: 32)."""
    if not 0 <= major < (1 << 16):
        raise ValueError(f"major index out of range: {major}")
    if not 0 <= minor < (1 << 32):
        raise ValueError(f"minor index out of range: {minor}")
    return (major << 32) | minor
