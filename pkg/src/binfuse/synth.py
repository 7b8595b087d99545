"""Synthetic data with known range-wise structure, plus a brute-force oracle.

Two generators cover the two levels of the pipeline:

* ``gen_set`` builds full reference/test image sets where each model's
  error (bias and noise standard deviation) depends on the ground-truth
  intensity range.  Reference and test are drawn from the same process, so
  weights estimated on one transfer to the other by construction.
* ``gen_mixture_group`` builds a single bin group whose ground-truth pixels
  come from a mixture with known weights, for validating the EM solver
  directly.

``grid_search_oracle`` exhaustively maximizes the mixture log-likelihood
over the weight simplex and is intentionally built on scipy's density and
log-sum-exp routines, a separate code path from the EM solver it checks.

All randomness flows through numpy's PCG64 generator seeded via
SeedSequence; image n uses the n-th spawned child stream, so generation is
reproducible regardless of how images are parallelized.  Within an image
the draw order is fixed: ground truth first, then the per-model noise
block.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.special import logsumexp
from scipy.stats import norm

from .binning import BinGroup
from .image_io import ImageTensor, save_image

__all__ = [
    "RangeProfile",
    "SynthData",
    "SynthSpec",
    "gen_mixture_group",
    "gen_set",
    "grid_search_oracle",
    "range_biased_spec",
    "write_synth_tree",
]


@dataclass(frozen=True)
class RangeProfile:
    """Per-model error behavior on one ground-truth intensity interval.

    The interval is [lo, hi); use hi=256 so 255 falls inside the last one.
    ``expected_weights``, when given, records the mixture the construction
    is designed to favor (used by tests, not by generation).
    """

    lo: float
    hi: float
    bias: tuple[float, ...]
    noise_std: tuple[float, ...]
    expected_weights: tuple[float, ...] | None = None


@dataclass(frozen=True)
class SynthSpec:
    seed: int
    height: int = 128
    width: int = 128
    num_ref: int = 20
    num_test: int = 20
    num_models: int = 2
    profiles: tuple[RangeProfile, ...] = ()
    smooth_gt: bool = False

    def __post_init__(self) -> None:
        if self.height < 1 or self.width < 1:
            raise ValueError("image size must be positive")
        if self.num_ref < 1 or self.num_test < 0:
            raise ValueError("need at least one reference sample")
        if self.num_models < 1:
            raise ValueError("need at least one model")
        if not self.profiles:
            raise ValueError("need at least one range profile")
        edges = [p.lo for p in self.profiles] + [self.profiles[-1].hi]
        if edges[0] != 0.0 or edges[-1] < 256.0:
            raise ValueError("profiles must tile [0, 256)")
        for a, b in zip(self.profiles[:-1], self.profiles[1:]):
            if a.hi != b.lo:
                raise ValueError(f"profile gap between {a.hi} and {b.lo}")
        for p in self.profiles:
            if len(p.bias) != self.num_models or len(p.noise_std) != self.num_models:
                raise ValueError("profile bias/noise_std length must equal num_models")


def range_biased_spec(
    seed: int,
    height: int = 128,
    width: int = 128,
    num_ref: int = 20,
    num_test: int = 20,
) -> SynthSpec:
    """Two models with complementary strengths: model 0 is accurate on the
    dark half and biased bright, model 1 the mirror image.

    Range-wise weighting can pick the accurate model per range, so it
    strictly beats any single global weight vector on this data.
    """
    return SynthSpec(
        seed=seed,
        height=height,
        width=width,
        num_ref=num_ref,
        num_test=num_test,
        num_models=2,
        profiles=(
            RangeProfile(
                lo=0.0, hi=128.0,
                bias=(0.0, -32.0), noise_std=(2.0, 6.0),
                expected_weights=(1.0, 0.0),
            ),
            RangeProfile(
                lo=128.0, hi=256.0,
                bias=(32.0, 0.0), noise_std=(6.0, 2.0),
                expected_weights=(0.0, 1.0),
            ),
        ),
    )


@dataclass
class SynthData:
    ref_gt: list[ImageTensor]
    ref_preds: list[list[ImageTensor]]  # [model][sample]
    test_gt: list[ImageTensor]
    test_preds: list[list[ImageTensor]]


def _profile_tables(spec: SynthSpec) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    edges = np.array([p.lo for p in spec.profiles[1:]])
    bias = np.array([p.bias for p in spec.profiles])        # (P, M)
    std = np.array([p.noise_std for p in spec.profiles])    # (P, M)
    return edges, bias, std


def _gen_image(
    rng: np.random.Generator, spec: SynthSpec,
    edges: np.ndarray, bias: np.ndarray, std: np.ndarray,
) -> tuple[ImageTensor, list[ImageTensor]]:
    shape = (spec.height, spec.width, 3)
    if spec.smooth_gt:
        # Horizontal ramp with a random phase; exercises SSIM-sensitive structure.
        phase = rng.uniform(0.0, 255.0)
        ramp = np.linspace(0.0, 255.0, spec.width)[None, :, None]
        gt = np.floor((ramp + phase) % 256.0)
        gt = np.broadcast_to(gt, shape).copy()
    else:
        gt = rng.integers(0, 256, size=shape).astype(np.float64)
    noise = rng.standard_normal((spec.num_models, *shape))
    which = np.searchsorted(edges, gt, side="right")  # profile index per pixel
    preds = []
    for m in range(spec.num_models):
        pred = gt + bias[which, m] + std[which, m] * noise[m]
        preds.append(ImageTensor(np.clip(pred, 0.0, 255.0)))
    return ImageTensor(gt), preds


def gen_set(spec: SynthSpec) -> SynthData:
    """Materialize the reference and test sets described by the spec."""
    edges, bias, std = _profile_tables(spec)
    children = np.random.SeedSequence(spec.seed).spawn(spec.num_ref + spec.num_test)
    ref_gt, test_gt = [], []
    ref_preds = [[] for _ in range(spec.num_models)]
    test_preds = [[] for _ in range(spec.num_models)]
    for i, child in enumerate(children):
        rng = np.random.Generator(np.random.PCG64(child))
        gt, preds = _gen_image(rng, spec, edges, bias, std)
        if i < spec.num_ref:
            ref_gt.append(gt)
            for m in range(spec.num_models):
                ref_preds[m].append(preds[m])
        else:
            test_gt.append(gt)
            for m in range(spec.num_models):
                test_preds[m].append(preds[m])
    return SynthData(ref_gt, ref_preds, test_gt, test_preds)


def write_synth_tree(data: SynthData, spec: SynthSpec, root: str | Path) -> None:
    """Write ref/ and test/ PNG directories in the layout the CLI consumes."""
    root = Path(root)
    for split, gt_images, pred_sets in (
        ("ref", data.ref_gt, data.ref_preds),
        ("test", data.test_gt, data.test_preds),
    ):
        gt_dir = root / split / "gt"
        gt_dir.mkdir(parents=True, exist_ok=True)
        for i, img in enumerate(gt_images):
            save_image(img, gt_dir / f"{i:04d}.png")
        for m, images in enumerate(pred_sets):
            pred_dir = root / split / f"pred_{m:02d}"
            pred_dir.mkdir(parents=True, exist_ok=True)
            for i, img in enumerate(images):
                save_image(img, pred_dir / f"{i:04d}.png")
    (root / "spec.json").write_text(_spec_json(spec), encoding="utf-8")


def _spec_json(spec: SynthSpec) -> str:
    import json

    doc = {
        "seed": spec.seed,
        "height": spec.height,
        "width": spec.width,
        "num_ref": spec.num_ref,
        "num_test": spec.num_test,
        "num_models": spec.num_models,
        "smooth_gt": spec.smooth_gt,
        "profiles": [
            {
                "lo": p.lo,
                "hi": p.hi,
                "bias": list(p.bias),
                "noise_std": list(p.noise_std),
                "expected_weights": list(p.expected_weights) if p.expected_weights else None,
            }
            for p in spec.profiles
        ],
    }
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def gen_mixture_group(
    seed: int | np.random.Generator,
    means: tuple[float, ...] | np.ndarray,
    init_variances: tuple[float, ...] | np.ndarray,
    component_variances: tuple[float, ...] | np.ndarray,
    weights: tuple[float, ...] | np.ndarray,
    count: int,
) -> BinGroup:
    """One bin group whose ground truth follows a known Gaussian mixture.

    Prediction vectors are moment-matched so the observed per-model mean is
    exactly ``means[m]`` and the observed variance exactly
    ``init_variances[m]``, pinning the solver's starting point.
    """
    rng = seed if isinstance(seed, np.random.Generator) else np.random.Generator(np.random.PCG64(seed))
    means = np.asarray(means, dtype=np.float64)
    init_variances = np.asarray(init_variances, dtype=np.float64)
    component_variances = np.asarray(component_variances, dtype=np.float64)
    weights = np.asarray(weights, dtype=np.float64)
    num_models = means.shape[0]
    if count < 2:
        raise ValueError("need at least two pixels to moment-match predictions")

    component = rng.choice(num_models, size=count, p=weights / weights.sum())
    gt = means[component] + np.sqrt(component_variances)[component] * rng.standard_normal(count)

    preds = np.empty((num_models, count))
    for m in range(num_models):
        raw = rng.standard_normal(count)
        raw = raw - raw.mean()
        scale = np.sqrt(np.mean(raw**2))
        raw = raw / scale if scale > 0.0 else raw
        preds[m] = means[m] + np.sqrt(init_variances[m]) * raw

    return BinGroup(
        key=(0,) * num_models,
        pixel_indices=np.arange(count, dtype=np.int64),
        gt_values=gt,
        pred_values=preds,
    )


def _simplex_grid(num_models: int, steps: int) -> np.ndarray:
    """All weight vectors with coordinates i/steps, in lexicographic order."""
    if num_models == 1:
        return np.array([[1.0]])
    if num_models == 2:
        i = np.arange(steps + 1)
        return np.stack([i, steps - i], axis=1) / steps
    rows = []
    for i in range(steps + 1):
        for j in range(steps + 1 - i):
            rows.append((i, j, steps - i - j))
    return np.asarray(rows, dtype=np.float64) / steps


def grid_search_oracle(
    group: BinGroup,
    variances: np.ndarray,
    resolution: float,
) -> tuple[np.ndarray, float]:
    """Exhaustive weight search maximizing the mixture log-likelihood.

    Component means are the observed per-model prediction averages and the
    variances are fixed at the given values.  Ties resolve to the
    lexicographically smallest weight vector.  Tractable for up to three
    models.
    """
    num_models = group.pred_values.shape[0]
    if num_models > 3:
        raise ValueError("grid search is tractable only for up to three models")
    if not (0.0 < resolution <= 0.5):
        raise ValueError("resolution must be in (0, 0.5]")
    steps = round(1.0 / resolution)
    means = group.pred_values.mean(axis=1)
    log_density = norm.logpdf(
        group.gt_values[:, None], loc=means[None, :], scale=np.sqrt(variances)[None, :]
    )
    # Factor out the per-pixel maximum once; the weighted mixture density then
    # reduces to a matrix product over normalized per-component densities.
    row_max = log_density.max(axis=1)
    normalized = np.exp(log_density - row_max[:, None])
    base = float(row_max.sum())
    grid = _simplex_grid(num_models, steps)
    best_ll = -np.inf
    best_weights = grid[0]
    chunk = max(1, int(2_000_000 / max(1, group.count)))
    with np.errstate(divide="ignore"):  # a zero mixture density is a valid -inf
        for start in range(0, grid.shape[0], chunk):
            block = grid[start : start + chunk]
            ll = base + np.log(normalized @ block.T).sum(axis=0)
            k = int(np.argmax(ll))
            # Strict improvement keeps the lexicographically smallest tie.
            if ll[k] > best_ll:
                best_ll = float(ll[k])
                best_weights = block[k]
    return best_weights.copy(), best_ll
