"""Intensity binning and bin-set partitioning.

The [0, 255] prediction range is cut into ``num_bins`` half-open bins of
width ``bin_width``; the final bin is closed at 255 and absorbs the
remainder when the width does not divide 256.  A pixel position is keyed
by the tuple of bin indices of all M model predictions at that position,
and those keys partition the pixel positions into mutually exclusive
groups.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator

import numpy as np

from .image_io import ReferenceBatch

__all__ = [
    "BinGroup",
    "BinSpace",
    "bin_index",
    "bin_indices",
    "partition_prediction",
    "partition_reference",
]

VALUE_RANGE = (0.0, 255.0)


@dataclass(frozen=True)
class BinSpace:
    """The discretization of [0, 255] into bins of a fixed integer width."""

    bin_width: int

    def __post_init__(self) -> None:
        if not isinstance(self.bin_width, (int, np.integer)) or self.bin_width < 1:
            raise ValueError(f"bin_width must be an integer >= 1, got {self.bin_width!r}")

    @property
    def num_bins(self) -> int:
        return -(-256 // self.bin_width)


def bin_indices(values: np.ndarray, space: BinSpace) -> np.ndarray:
    """Vectorized bin assignment; the last bin is closed so 255 stays inside."""
    values = np.asarray(values, dtype=np.float64)
    if values.size and (values.min() < 0.0 or values.max() > 255.0):
        raise ValueError("values outside [0, 255]; clamp before binning")
    idx = np.floor_divide(values, float(space.bin_width)).astype(np.int64)
    return np.minimum(idx, space.num_bins - 1)


def bin_index(value: float, space: BinSpace) -> int:
    """Bin index of a single value in [0, 255]."""
    return int(bin_indices(np.asarray([value]), space)[0])


@dataclass
class BinGroup:
    """The pixels selected by one bin-set key.

    ``pixel_indices`` are ascending positions into the flattened vectors;
    ``gt_values`` has shape (count,) and ``pred_values`` (num_models, count).
    """

    key: tuple[int, ...]
    pixel_indices: np.ndarray
    gt_values: np.ndarray
    pred_values: np.ndarray

    @property
    def count(self) -> int:
        return int(self.pixel_indices.shape[0])


def _composite_codes(indices: np.ndarray, num_bins: int) -> np.ndarray:
    """Mix the (M, L) per-model bin indices into one int64 code per pixel.

    Codes order identically to the lexicographic order of the key tuples.
    """
    num_models = indices.shape[0]
    if num_bins**num_models >= 2**63:
        raise ValueError(
            f"bin key space {num_bins}^{num_models} is too large to encode; "
            f"increase the bin width or reduce the model count"
        )
    codes = indices[0].astype(np.int64)
    for m in range(1, num_models):
        codes = codes * num_bins + indices[m]
    return codes


def _decode_key(code: int, num_bins: int, num_models: int) -> tuple[int, ...]:
    out = []
    for _ in range(num_models):
        code, rem = divmod(code, num_bins)
        out.append(int(rem))
    return tuple(reversed(out))


def _iter_groups(indices: np.ndarray, num_bins: int) -> Iterator[tuple[tuple[int, ...], np.ndarray]]:
    """Yield (key, ascending pixel indices) in ascending key order."""
    num_models, length = indices.shape
    if length == 0:
        return
    codes = _composite_codes(indices, num_bins)
    # Stable sort keeps pixel indices ascending within each equal-code run.
    order = np.argsort(codes, kind="stable")
    sorted_codes = codes[order]
    starts = np.flatnonzero(np.diff(sorted_codes)) + 1
    bounds = np.concatenate(([0], starts, [length]))
    for a, b in zip(bounds[:-1], bounds[1:]):
        key = _decode_key(int(sorted_codes[a]), num_bins, num_models)
        yield key, order[a:b]


def partition_reference(batch: ReferenceBatch, space: BinSpace) -> dict[tuple[int, ...], BinGroup]:
    """Split a reference batch into per-bin-set groups.

    Every pixel position lands in exactly one group; empty keys are never
    materialized.  Predictions are clamped to [0, 255] before binning
    (restoration models can overshoot slightly) and the clamped values are
    what the groups carry.
    """
    preds = np.clip(batch.preds, *VALUE_RANGE)
    idx = bin_indices(preds, space)
    groups: dict[tuple[int, ...], BinGroup] = {}
    for key, pix in _iter_groups(idx, space.num_bins):
        groups[key] = BinGroup(
            key=key,
            pixel_indices=pix,
            gt_values=batch.gt[pix],
            pred_values=preds[:, pix],
        )
    return groups


def partition_prediction(
    preds: np.ndarray | list[np.ndarray], space: BinSpace
) -> dict[tuple[int, ...], np.ndarray]:
    """Partition test-time predictions into per-key pixel index lists.

    Same semantics as :func:`partition_reference`, without ground truth.
    """
    if isinstance(preds, (list, tuple)):
        lengths = {np.asarray(p).size for p in preds}
        if len(lengths) > 1:
            raise ValueError(f"prediction vectors differ in length: {sorted(lengths)}")
        preds = np.stack([np.asarray(p, dtype=np.float64).reshape(-1) for p in preds])
    preds = np.atleast_2d(np.asarray(preds, dtype=np.float64))
    if preds.ndim != 2:
        raise ValueError("predictions must be a stack of equal-length flat vectors")
    clipped = np.clip(preds, *VALUE_RANGE)
    idx = bin_indices(clipped, space)
    return dict(_iter_groups(idx, space.num_bins))
