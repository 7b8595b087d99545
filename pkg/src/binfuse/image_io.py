"""PNG loading/saving, flattening and Y-channel conversion.

All pixel data travels through the pipeline as 64-bit floats in the
[0, 255] domain.  The flattened layout is interleaved-RGB row-major:
channel c of pixel (h, w) sits at index (h * width + w) * 3 + c.  Every
module downstream relies on this ordering, so it is fixed here once.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

__all__ = [
    "ImageFormatError",
    "ImageTensor",
    "ReferenceBatch",
    "flatten",
    "load_image",
    "rgb_to_y",
    "save_image",
    "unflatten",
]

# PIL modes we can promote to 8-bit RGB without losing information.
_SUPPORTED_MODES = {"L", "P", "RGB"}


class ImageFormatError(ValueError):
    """Raised for image files the pipeline cannot represent."""


@dataclass
class ImageTensor:
    """An H x W x 3 RGB image with real-valued samples in [0, 255]."""

    data: np.ndarray

    def __post_init__(self) -> None:
        data = np.asarray(self.data, dtype=np.float64)
        if data.ndim != 3 or data.shape[2] != 3:
            raise ValueError(f"expected an (H, W, 3) array, got shape {data.shape}")
        if data.shape[0] == 0 or data.shape[1] == 0:
            raise ValueError("zero-dimension image")
        if not np.isfinite(data).all():
            raise ValueError("non-finite pixel values")
        lo, hi = float(data.min()), float(data.max())
        if lo < 0.0 or hi > 255.0:
            raise ValueError(f"pixel values outside [0, 255]: min={lo}, max={hi}")
        self.data = data

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]


def flatten(img: ImageTensor) -> np.ndarray:
    """Return the length-3HW vector in interleaved-RGB row-major order."""
    return img.data.reshape(-1)


def unflatten(values: np.ndarray, height: int, width: int) -> ImageTensor:
    """Inverse of :func:`flatten` for the given image size."""
    values = np.asarray(values, dtype=np.float64)
    if values.size != height * width * 3:
        raise ValueError(
            f"cannot reshape {values.size} values into {height}x{width}x3"
        )
    return ImageTensor(values.reshape(height, width, 3).copy())


def load_image(path: str | Path) -> ImageTensor:
    """Load an 8-bit PNG as an ImageTensor.

    Grayscale images are promoted to RGB by channel replication and
    palette images are expanded.  Higher bit depths and alpha modes are
    rejected.
    """
    path = Path(path)
    with Image.open(path) as img:
        if img.mode not in _SUPPORTED_MODES:
            raise ImageFormatError(
                f"unsupported image mode {img.mode!r} in {path} "
                f"(expected 8-bit gray, palette or RGB)"
            )
        arr = np.asarray(img.convert("RGB"), dtype=np.uint8)
    if arr.size == 0:
        raise ImageFormatError(f"zero-dimension image: {path}")
    return ImageTensor(arr.astype(np.float64))


def _round_half_away(values: np.ndarray) -> np.ndarray:
    # np.round ties to even; stored codes must round half away from zero.
    return np.copysign(np.floor(np.abs(values) + 0.5), values)


def save_image(img: ImageTensor | np.ndarray, path: str | Path) -> None:
    """Write an 8-bit RGB PNG.

    Values are rounded half-away-from-zero and clamped to [0, 255], so
    tiny numeric overshoot from fusion is absorbed here rather than
    propagated to the file.
    """
    data = img.data if isinstance(img, ImageTensor) else np.asarray(img, dtype=np.float64)
    if data.ndim != 3 or data.shape[2] != 3:
        raise ValueError(f"expected an (H, W, 3) array, got shape {data.shape}")
    codes = np.clip(_round_half_away(data), 0.0, 255.0).astype(np.uint8)
    Image.fromarray(codes, mode="RGB").save(Path(path), format="PNG")


def rgb_to_y(img: ImageTensor) -> np.ndarray:
    """BT.601 limited-range luma: 16 + (65.481 R + 128.553 G + 24.966 B) / 255.

    Returns an (H, W) float64 plane in [16, 235].  This is the convention
    used throughout the super-resolution evaluation literature.
    """
    r = img.data[..., 0]
    g = img.data[..., 1]
    b = img.data[..., 2]
    return 16.0 + (65.481 * r + 128.553 * g + 24.966 * b) / 255.0


@dataclass
class ReferenceBatch:
    """Flattened ground truths and per-model predictions of a reference set.

    ``gt`` has shape (total_pixels,) and ``preds`` (num_models, total_pixels);
    images of different sizes may be concatenated, but within one sample the
    ground truth and all model predictions must agree in shape.
    """

    gt: np.ndarray
    preds: np.ndarray
    num_samples: int

    def __post_init__(self) -> None:
        self.gt = np.asarray(self.gt, dtype=np.float64).reshape(-1)
        self.preds = np.atleast_2d(np.asarray(self.preds, dtype=np.float64))
        if self.preds.shape[1] != self.gt.shape[0]:
            raise ValueError(
                f"prediction length {self.preds.shape[1]} does not match "
                f"ground-truth length {self.gt.shape[0]}"
            )
        if self.num_samples < 1:
            raise ValueError("reference batch needs at least one sample")

    @property
    def num_models(self) -> int:
        return self.preds.shape[0]

    @property
    def total_pixels(self) -> int:
        return self.gt.shape[0]

    @classmethod
    def from_images(
        cls,
        gt_images: list[ImageTensor],
        model_images: list[list[ImageTensor]],
    ) -> "ReferenceBatch":
        """Concatenate N ground truths and M prediction sets.

        ``model_images[m][n]`` is model m's prediction for sample n.
        """
        if not gt_images:
            raise ValueError("empty reference set")
        if not model_images:
            raise ValueError("need at least one model")
        n = len(gt_images)
        for m, imgs in enumerate(model_images):
            if len(imgs) != n:
                raise ValueError(f"model {m} has {len(imgs)} images, expected {n}")
            for i, img in enumerate(imgs):
                if img.data.shape != gt_images[i].data.shape:
                    raise ValueError(
                        f"sample {i}: model {m} shape {img.data.shape[:2]} does not "
                        f"match ground truth {gt_images[i].data.shape[:2]}"
                    )
        gt = np.concatenate([flatten(img) for img in gt_images])
        preds = np.stack(
            [np.concatenate([flatten(img) for img in imgs]) for imgs in model_images]
        )
        return cls(gt=gt, preds=preds, num_samples=n)
