"""Derived seeds: independent integer seeds keyed off a master seed."""
import numpy as np


def derive_seed(master: int, *keys: int) -> int:
    """Stable 63-bit seed for the stream named by ``keys`` under ``master``."""
    ss = np.random.SeedSequence([int(master) & 0xFFFFFFFFFFFFFFFF, *[int(k) for k in keys]])
    return int(ss.generate_state(2, np.uint64)[0] >> np.uint64(1))
