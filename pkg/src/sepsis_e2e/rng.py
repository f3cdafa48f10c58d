"""Seed handling.

Every stochastic step in the package draws from a PCG64 generator built
here, and child streams (per grid cell, per training run) get their seeds
by hashing the parent seed together with a label. That keeps runs
reproducible without threading one generator through unrelated code paths.
"""

import hashlib

import numpy as np


def make_rng(seed):
    """Return a numpy Generator seeded deterministically from an int."""
    return np.random.Generator(np.random.PCG64(int(seed)))


def derive_seed(base, *parts):
    """Derive a child seed from a base seed and a label path.

    The base and every part are rendered to text, joined with '|', and
    hashed with SHA-256; the first 8 bytes, little endian, become the new
    seed. Distinct label paths give independent streams.
    """
    tokens = [str(int(base))] + [repr(p) for p in parts]
    digest = hashlib.sha256("|".join(tokens).encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")
