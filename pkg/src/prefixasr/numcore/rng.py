"""Splittable seeded randomness.

Every random draw in the system flows from one integer seed. Components get
independent streams by name, and per-step streams are derived from
(seed, name, step) so training can resume mid-run and reproduce the exact
draws it would have made.
"""

from __future__ import annotations

import hashlib

import numpy as np


def child_seed(seed: int, *names) -> int:
    key = "/".join([str(seed)] + [str(n) for n in names])
    digest = hashlib.sha256(key.encode()).digest()
    return int.from_bytes(digest[:8], "little")


def generator(seed: int, *names) -> np.random.Generator:
    return np.random.default_rng(child_seed(seed, *names))
