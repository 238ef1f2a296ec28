"""Seed discipline.

Every stochastic object in the package is a deterministic function of a
64-bit seed.  Replication r of an experiment with base seed s draws from
the stream ``derive_seed(s, r)``; within one sample path, demand and
perishing use disjoint child streams so that changing one never perturbs
the other.
"""

from __future__ import annotations

import numpy as np

# Fixed child indices of a path's seed sequence.
_DEMAND_CHILD = 0
_PERISH_CHILD = 1


def derive_seed(base_seed: int, index: int) -> int:
    """Mix (base_seed, index) into a fresh 64-bit seed.

    Uses numpy's SeedSequence entropy pooling, so streams for different
    indices are statistically independent and platform-stable.
    """
    ss = np.random.SeedSequence([int(base_seed) & 0xFFFFFFFFFFFFFFFF, int(index)])
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def path_streams(seed: int) -> tuple[np.random.Generator, np.random.Generator]:
    """Return the (demand, perishing) generators for one sample path."""
    children = np.random.SeedSequence(int(seed) & 0xFFFFFFFFFFFFFFFF).spawn(2)
    return (
        np.random.default_rng(children[_DEMAND_CHILD]),
        np.random.default_rng(children[_PERISH_CHILD]),
    )


def tiebreak_rng(seed: int) -> np.random.Generator:
    """Generator used only for schedule tie-breaking."""
    ss = np.random.SeedSequence([int(seed) & 0xFFFFFFFFFFFFFFFF, 0x7EB5])
    return np.random.default_rng(ss)
