"""Restoration quality metrics: PSNR, SSIM and directory-level reports.

PSNR uses the 255 dynamic range; identical inputs report infinity.  SSIM
is the classic single-scale form: 11x11 Gaussian window with sigma 1.5,
C1 = (0.01*255)^2, C2 = (0.03*255)^2, averaged over the positions whose
window lies fully inside the image (valid convolution, no padding).

``evaluate_set`` pairs files by stem across two directories and reports
either Y-channel metrics (the super-resolution/deraining convention) or
RGB metrics (PSNR over all channels, SSIM averaged over channels).
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.signal import convolve2d

from .image_io import ImageTensor, load_image, rgb_to_y

__all__ = [
    "MetricReport",
    "evaluate_set",
    "psnr",
    "ssim",
    "write_report_csv",
]

CHANNEL_MODES = ("y", "rgb")

_SSIM_WINDOW = 11
_SSIM_SIGMA = 1.5
_C1 = (0.01 * 255.0) ** 2
_C2 = (0.03 * 255.0) ** 2


def _as_array(img) -> np.ndarray:
    if isinstance(img, ImageTensor):
        return img.data
    return np.asarray(img, dtype=np.float64)


def psnr(a, b) -> float:
    """10 * log10(255^2 / MSE); +inf when the images are identical."""
    a = _as_array(a)
    b = _as_array(b)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(255.0**2 / mse)


def _gaussian_window(size: int = _SSIM_WINDOW, sigma: float = _SSIM_SIGMA) -> np.ndarray:
    half = (size - 1) / 2.0
    coords = np.arange(size) - half
    g = np.exp(-(coords**2) / (2.0 * sigma**2))
    window = np.outer(g, g)
    return window / window.sum()


def ssim(a, b) -> float:
    """Mean local structural similarity between two planes."""
    a = _as_array(a)
    b = _as_array(b)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    if a.ndim != 2:
        raise ValueError("ssim expects single-channel planes")
    if min(a.shape) < _SSIM_WINDOW:
        raise ValueError(
            f"image {a.shape} smaller than the {_SSIM_WINDOW}x{_SSIM_WINDOW} window"
        )
    window = _gaussian_window()
    mu_a = convolve2d(a, window, mode="valid")
    mu_b = convolve2d(b, window, mode="valid")
    sigma_aa = convolve2d(a * a, window, mode="valid") - mu_a * mu_a
    sigma_bb = convolve2d(b * b, window, mode="valid") - mu_b * mu_b
    sigma_ab = convolve2d(a * b, window, mode="valid") - mu_a * mu_b
    numerator = (2.0 * mu_a * mu_b + _C1) * (2.0 * sigma_ab + _C2)
    denominator = (mu_a * mu_a + mu_b * mu_b + _C1) * (sigma_aa + sigma_bb + _C2)
    return float(np.mean(numerator / denominator))


@dataclass
class MetricReport:
    per_image: list[tuple[str, float, float]]  # (id, psnr, ssim)
    mean_psnr: float
    mean_ssim: float
    channel_mode: str


def _image_metrics(pred: ImageTensor, gt: ImageTensor, channel_mode: str) -> tuple[float, float]:
    if channel_mode == "y":
        pred_y = rgb_to_y(pred)
        gt_y = rgb_to_y(gt)
        return psnr(pred_y, gt_y), ssim(pred_y, gt_y)
    psnr_value = psnr(pred, gt)
    ssim_value = float(
        np.mean([ssim(pred.data[..., c], gt.data[..., c]) for c in range(3)])
    )
    return psnr_value, ssim_value


def match_stems(*dirs: str | Path, exts: tuple[str, ...] = (".png",)) -> list[tuple[str, list[Path]]]:
    """Align files across directories by stem; every stem must be in every dir."""
    tables = []
    for d in dirs:
        d = Path(d)
        table = {p.stem: p for p in sorted(d.iterdir()) if p.suffix.lower() in exts}
        tables.append((d, table))
    stems = sorted(set().union(*(t.keys() for _, t in tables)))
    if not stems:
        raise FileNotFoundError(f"no pairs found across {[str(d) for d, _ in tables]}")
    aligned = []
    for stem in stems:
        paths = []
        for d, table in tables:
            if stem not in table:
                raise FileNotFoundError(f"missing file for {stem!r} in {d}")
            paths.append(table[stem])
        aligned.append((stem, paths))
    return aligned


def evaluate_set(pred_dir: str | Path, gt_dir: str | Path, channel_mode: str = "y") -> MetricReport:
    """Per-image PSNR/SSIM between matching files, plus arithmetic means."""
    if channel_mode not in CHANNEL_MODES:
        raise ValueError(f"channel_mode must be one of {CHANNEL_MODES}")
    rows = []
    for stem, (pred_path, gt_path) in match_stems(pred_dir, gt_dir):
        pred = load_image(pred_path)
        gt = load_image(gt_path)
        if pred.data.shape != gt.data.shape:
            raise ValueError(
                f"{stem}: prediction {pred.data.shape[:2]} vs ground truth {gt.data.shape[:2]}"
            )
        psnr_value, ssim_value = _image_metrics(pred, gt, channel_mode)
        rows.append((stem, psnr_value, ssim_value))
    return MetricReport(
        per_image=rows,
        mean_psnr=sum(r[1] for r in rows) / len(rows),
        mean_ssim=sum(r[2] for r in rows) / len(rows),
        channel_mode=channel_mode,
    )


def _fmt_metric(value: float) -> str:
    return "inf" if math.isinf(value) else format(value, ".17g")


def write_report_csv(report: MetricReport, path: str | Path) -> None:
    """CSV rows (id, psnr, ssim) followed by a mean summary line."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["id", "psnr", "ssim"])
        for stem, p, s in report.per_image:
            writer.writerow([stem, _fmt_metric(p), _fmt_metric(s)])
        writer.writerow(["mean", _fmt_metric(report.mean_psnr), _fmt_metric(report.mean_ssim)])
