"""Shared fixtures data for the test-suite."""

import numpy as np

from vigil import model as M


def toy_set(n=8, seed=0, size=32):
    """Linearly separable two-class images: bright left half vs bright right half."""
    rng = np.random.default_rng(seed)
    y = np.arange(n) % 2
    x = rng.normal(0, 0.1, (n, 3, size, size)).astype(np.float32)
    half = size // 2
    for i, label in enumerate(y):
        if label == 0:
            x[i, :, :, :half] += 1.0
        else:
            x[i, :, :, half:] += 1.0
    return x, y


def toy_spec():
    return M.tiny_spec(("left", "right"))


def shallow_spec():
    """Stem conv, global pool and FC: a toy net whose loss surface is mild enough
    for plain gradient descent at lr 1e-2 to decrease monotonically."""
    return M.ModelSpec((M.LayerSpec("conv", channels=8, kernel=3, stride=2), M.LayerSpec("avgpool", window=None),
                        M.LayerSpec("flatten"), M.LayerSpec("fc", units=2)), ("left", "right"),
                       input_shape=(3, 32, 32))
