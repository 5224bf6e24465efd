"""Deterministic RNG derivation.

Every random draw in the package flows from a single root seed. Independent
purposes (data generation, weight init, dropout, shuffling) get their own
stream by hashing the root seed together with a short purpose tag, so adding
a consumer never perturbs the draws of an existing one.
"""

import hashlib

import numpy as np

# Purpose tags used across the package. Free-form strings are accepted too;
# these are the ones the built-in commands use.
DATA = "data"
INIT = "init"
DROPOUT = "dropout"
SHUFFLE = "shuffle"


def derive_key(root_seed: int, tag: str) -> int:
    """Hash (root_seed, tag) into a 128-bit integer key."""
    h = hashlib.sha256(f"{root_seed}/{tag}".encode("utf-8")).digest()
    return int.from_bytes(h[:16], "little")


def rng_for(root_seed: int, tag: str) -> np.random.Generator:
    """A fresh Generator for one purpose, independent of all other tags."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(derive_key(root_seed, tag))))
