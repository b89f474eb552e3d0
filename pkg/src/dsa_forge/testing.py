"""Seeded random data for tests, benchmarks and demo models."""

from __future__ import annotations

import os

import numpy as np

DEFAULT_SEED = 20180101


def seed() -> int:
    return int(os.environ.get("DSA_FORGE_SEED", DEFAULT_SEED))


def seeded_rng(offset: int = 0) -> np.random.Generator:
    return np.random.default_rng(seed() + offset)


def random_act_steps(rng, shape, params=None, max_value: float = 4.0) -> np.ndarray:
    """Non-negative activation steps drawn from the representable grid."""
    from . import dsfp

    params = params or dsfp.FormatParams()
    return dsfp.quantize_activations(rng.uniform(0.0, max_value, shape), params, signed=False)


def random_coef_steps(rng, shape, params=None, scale: float = 0.5) -> np.ndarray:
    from . import dsfp

    params = params or dsfp.FormatParams()
    return dsfp.quantize_coefficients(rng.normal(0.0, scale, shape), params)
