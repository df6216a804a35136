"""Counter-based random streams.

Each draw is a pure function of ``(seed, draw_index)`` via the Philox
generator, so noise can be regenerated without replaying earlier draws.
"""
import numpy as np

_MASK = (1 << 64) - 1


def generator(seed: int, draw_index: int = 0) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=[seed & _MASK, draw_index & _MASK]))


def seeded_normal(shape, seed: int, draw_index: int = 0, dtype=np.float32) -> np.ndarray:
    return generator(seed, draw_index).standard_normal(shape).astype(dtype, copy=False)
