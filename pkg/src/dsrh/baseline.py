"""Sign-of-random-projection codes, the untrained reference encoder."""

import numpy as np

from dsrh.model import binarize


def random_projection_codes(features: np.ndarray, bits: int, rng: np.random.Generator) -> np.ndarray:
    """sign((x - mean) @ P) with Gaussian P of shape (D, bits); sign(0) = +1."""
    features = np.asarray(features, dtype=np.float64)
    projection = rng.standard_normal((features.shape[1], bits))
    return binarize((features - features.mean(axis=0)) @ projection)
