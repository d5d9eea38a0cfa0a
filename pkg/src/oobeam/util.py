"""Small shared helpers: dB conversions, seed derivation, error types."""
from __future__ import annotations

import math

import numpy as np


class ConfigError(ValueError):
    """Raised for invalid or physically inconsistent configuration."""


class FeasibilityError(RuntimeError):
    """Raised when a constrained construction cannot be satisfied."""


def db_to_linear(x_db):
    return 10.0 ** (np.asarray(x_db, dtype=float) / 10.0)


def linear_to_db(x_lin):
    return 10.0 * np.log10(np.asarray(x_lin, dtype=float))


def derive_rng(master_seed: int, *key: int) -> np.random.Generator:
    """Deterministic per-task generator derived from a master seed.

    The same (master_seed, key) always yields the same stream, and distinct
    keys yield statistically independent streams, so parallel trials can each
    derive their own generator without coordination.
    """
    ss = np.random.SeedSequence(int(master_seed), spawn_key=tuple(int(k) for k in key))
    return np.random.default_rng(ss)


def derive_seed(master_seed: int, *key: int) -> int:
    """Deterministic integer sub-seed, for APIs that take a seed, not a rng."""
    ss = np.random.SeedSequence(int(master_seed), spawn_key=tuple(int(k) for k in key))
    return int(ss.generate_state(1, np.uint64)[0])


def wilson_interval(successes: int, trials: int, z: float = 1.96) -> tuple[float, float]:
    """Wilson score interval for a binomial proportion.

    Preferred over the normal approximation near 0 and 1, which is exactly
    where the fingerprint success-probability estimates live.
    """
    if trials <= 0:
        raise ValueError("trials must be positive")
    p = successes / trials
    denom = 1.0 + z * z / trials
    center = (p + z * z / (2 * trials)) / denom
    half = (z / denom) * math.sqrt(p * (1 - p) / trials + z * z / (4 * trials * trials))
    return (max(0.0, center - half), min(1.0, center + half))
