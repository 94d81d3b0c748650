"""Seed derivation: one run seed deterministically fans out to named sub-streams."""

from __future__ import annotations

import hashlib

import numpy as np


def derive_seed(base_seed: int, name: str) -> int:
    """Derive a 64-bit child seed from a base seed and a stream name.

    Hash-based so that every stage (data generation, anchor init, encoder
    shuffle, ...) gets an independent stream, and re-running a single stage in
    isolation consumes exactly the same stream as a full-pipeline run.
    """
    digest = hashlib.sha256(f"{base_seed}:{name}".encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


def make_rng(base_seed: int, name: str) -> np.random.Generator:
    """Seeded generator for the named sub-stream of one run."""
    return np.random.default_rng(derive_seed(base_seed, name))
