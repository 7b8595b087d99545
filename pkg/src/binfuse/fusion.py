"""Per-pixel ensemble fusion of multiple restoration predictions.

Three fusers share one contract (M same-shape images in, one image out):

* ``fuse_with_lut`` keys every pixel by its bin set and applies the
  range-specific weights from the lookup table;
* ``fuse_average`` is the plain per-pixel mean;
* ``fuse_zzpm`` assigns one global weight per model, inversely
  proportional to its mean squared error against the prediction average
  (the NTIRE-2023 "ZZPM" scheme).

All three produce convex combinations, so every fused pixel lies between
the per-position model minimum and maximum.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .binning import BinSpace, _composite_codes, _decode_key, bin_indices
from .image_io import ImageTensor, flatten, unflatten
from .lut import WeightLut

__all__ = [
    "GlobalWeights",
    "fuse_average",
    "fuse_with_lut",
    "fuse_zzpm",
]

_ZZPM_EPS = 1e-12


@dataclass
class GlobalWeights:
    """One weight per model, on the probability simplex."""

    beta: np.ndarray

    def __post_init__(self) -> None:
        self.beta = np.asarray(self.beta, dtype=np.float64)
        if np.any(self.beta < 0.0) or abs(float(self.beta.sum()) - 1.0) > 1e-12:
            raise ValueError(f"weights not on the simplex: {self.beta.tolist()}")


def _check_shapes(preds: Sequence[ImageTensor]) -> tuple[int, int]:
    if not preds:
        raise ValueError("need at least one prediction")
    shape = preds[0].data.shape
    for i, p in enumerate(preds[1:], start=1):
        if p.data.shape != shape:
            raise ValueError(
                f"prediction {i} shape {p.data.shape[:2]} does not match {shape[:2]}"
            )
    return shape[0], shape[1]


def fuse_with_lut(preds: Sequence[ImageTensor], lut: WeightLut) -> ImageTensor:
    """Fuse by per-pixel bin-set lookup: out = sum_m alpha_m(key) * x_m."""
    height, width = _check_shapes(preds)
    if len(preds) != lut.num_models:
        raise ValueError(
            f"{len(preds)} predictions but the table was built for {lut.num_models} models"
        )
    space = BinSpace(lut.bin_width)
    flat = np.stack([flatten(p) for p in preds])
    idx = bin_indices(np.clip(flat, 0.0, 255.0), space)
    codes = _composite_codes(idx, space.num_bins)
    unique_codes, inverse = np.unique(codes, return_inverse=True)
    table = np.stack(
        [lut.lookup(_decode_key(int(c), space.num_bins, lut.num_models)) for c in unique_codes]
    )
    per_pixel = table[inverse]
    fused = np.einsum("lm,ml->l", per_pixel, flat)
    return unflatten(np.clip(fused, 0.0, 255.0), height, width)


def fuse_average(preds: Sequence[ImageTensor]) -> ImageTensor:
    """Per-pixel arithmetic mean of the predictions."""
    _check_shapes(preds)
    mean = np.mean([p.data for p in preds], axis=0)
    return ImageTensor(np.clip(mean, 0.0, 255.0))


def fuse_zzpm(preds: Sequence[ImageTensor]) -> tuple[ImageTensor, GlobalWeights]:
    """Global inverse-MSE weighting against the prediction average.

    Each model's weight is proportional to 1 / (MSE(x_m, mean) + eps); the
    eps floor keeps the weights finite when a model equals the average, and
    identical predictions degrade to uniform weights.
    """
    _check_shapes(preds)
    if len(preds) < 2:
        raise ValueError("inverse-MSE weighting needs at least two models")
    stack = np.stack([p.data for p in preds])
    avg = stack.mean(axis=0)
    errors = ((stack - avg) ** 2).mean(axis=(1, 2, 3))
    raw = 1.0 / (errors + _ZZPM_EPS)
    beta = raw / raw.sum()
    fused = np.tensordot(beta, stack, axes=1)
    return ImageTensor(np.clip(fused, 0.0, 255.0)), GlobalWeights(beta)
