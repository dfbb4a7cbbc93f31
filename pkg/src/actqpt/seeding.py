"""Named, isolated random substreams derived from one master seed.

Every source of randomness in a run (input-state draws, measurement noise,
certification witnesses, eigenbasis tie-breaks, ...) pulls from its own
named stream.  Streams are derived by hashing the label, so adding draws to
one stream, or introducing a new label, never perturbs any other stream.
"""

from __future__ import annotations

import hashlib

import numpy as np

__all__ = ["stream_seed", "stream_rng"]


def stream_seed(master_seed: int, label: str) -> np.random.SeedSequence:
    """Derive a reproducible SeedSequence for the substream `label`."""
    if master_seed < 0:
        raise ValueError("master_seed must be nonnegative")
    digest = hashlib.sha256(label.encode("utf-8")).digest()
    # Four 64-bit words of the label hash, appended to the master seed.
    words = [int.from_bytes(digest[8 * i : 8 * (i + 1)], "little") for i in range(4)]
    return np.random.SeedSequence([int(master_seed)] + words)


def stream_rng(master_seed: int, label: str) -> np.random.Generator:
    """Fresh Generator for the substream `label` under `master_seed`."""
    return np.random.default_rng(stream_seed(master_seed, label))
