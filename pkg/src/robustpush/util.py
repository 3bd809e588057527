"""Small shared helpers."""

import numpy as np


def ensure_rng(rng: "np.random.Generator | int | None") -> np.random.Generator:
    """Coerce a seed or Generator into a Generator.

    Passing an existing Generator returns it unchanged, so callers can thread
    one stream through several sampling steps.
    """
    if isinstance(rng, np.random.Generator):
        return rng
    return np.random.default_rng(rng)


def fmt17(value: float) -> str:
    """Format a float with 17 significant digits (round-trip exact)."""
    return format(float(value), ".17g")
