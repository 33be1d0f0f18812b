"""Seeding helpers.

All randomness in the toolkit flows from a single root seed through named
sub-streams, so adding or reordering jobs never perturbs the stream of an
existing job.
"""

from __future__ import annotations

import zlib

import numpy as np


def _tag_to_int(tag) -> int:
    if isinstance(tag, (int, np.integer)):
        return int(tag) & 0xFFFFFFFF
    return zlib.crc32(str(tag).encode("utf-8"))


def seed_seq(root_seed: int, *tags) -> np.random.SeedSequence:
    """SeedSequence for the sub-stream named by ``tags`` under ``root_seed``."""
    return np.random.SeedSequence([int(root_seed)] + [_tag_to_int(t) for t in tags])


def substream(root_seed: int, *tags) -> np.random.Generator:
    """Independent generator for the named sub-stream."""
    return np.random.default_rng(seed_seq(root_seed, *tags))
