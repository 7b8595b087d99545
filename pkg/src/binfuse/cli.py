"""Command-line surface for the full pipeline.

Subcommands: ``estimate`` builds a weight table from a reference set,
``fuse`` applies it to a test set, ``baseline`` runs averaging or
inverse-MSE fusion, ``eval`` writes a PSNR/SSIM report, ``synth``
materializes a synthetic dataset, and ``bench`` times fusion.

Directories are aligned by filename stem.  Exit codes: 0 success, 1 I/O
failure, 2 usage or contract violation.
"""

from __future__ import annotations

import argparse
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from .binning import BinSpace
from .em import INIT_MODES, EmConfig
from .fusion import fuse_average, fuse_with_lut, fuse_zzpm
from .image_io import ImageFormatError, ImageTensor, ReferenceBatch, load_image, save_image
from .lut import LutFormatError, WeightLut, estimate_lut, load_lut, save_lut
from .metrics import CHANNEL_MODES, evaluate_set, match_stems, write_report_csv
from .synth import gen_set, range_biased_spec, write_synth_tree

__all__ = ["main"]


class UsageError(Exception):
    """Bad inputs or contract violations; maps to exit code 2."""


def _load_aligned(dirs: list[Path]) -> list[tuple[str, list[Path]]]:
    try:
        return match_stems(*dirs)
    except FileNotFoundError as exc:
        raise UsageError(str(exc)) from exc


def _load_reference(gt_dir: Path, pred_dirs: list[Path]) -> ReferenceBatch:
    aligned = _load_aligned([gt_dir, *pred_dirs])
    gt_images = []
    model_images: list[list[ImageTensor]] = [[] for _ in pred_dirs]
    for _, paths in aligned:
        gt_images.append(load_image(paths[0]))
        for m, path in enumerate(paths[1:]):
            model_images[m].append(load_image(path))
    try:
        return ReferenceBatch.from_images(gt_images, model_images)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc


def _em_config(args: argparse.Namespace) -> EmConfig:
    return EmConfig(
        max_steps=args.max_steps,
        loglik_tol=args.loglik_tol,
        min_pixels=args.min_pixels,
        init_mode=args.init_mode,
    )


def cmd_estimate(args: argparse.Namespace) -> int:
    batch = _load_reference(args.gt, args.pred)
    lut = estimate_lut(batch, BinSpace(args.bin_width), _em_config(args), workers=args.threads)
    save_lut(lut, args.out)
    counts = {"em": 0, "fallback_small": 0, "fallback_undetermined": 0}
    for entry in lut.entries.values():
        counts[entry.source] += 1
    print(
        f"wrote {args.out}: {len(lut.entries)} entries "
        f"({counts['em']} em, {counts['fallback_small']} fallback_small, "
        f"{counts['fallback_undetermined']} fallback_undetermined)"
    )
    return 0


def _load_lut_checked(path: Path, num_models: int) -> WeightLut:
    lut = load_lut(path)
    if lut.num_models != num_models:
        raise UsageError(
            f"table was built for {lut.num_models} models but {num_models} "
            f"prediction directories were given"
        )
    return lut


def _fuse_directory(
    pred_dirs: list[Path],
    out_dir: Path,
    fuse_one,
    threads: int,
) -> int:
    aligned = _load_aligned(pred_dirs)
    out_dir.mkdir(parents=True, exist_ok=True)

    def work(item: tuple[str, list[Path]]) -> None:
        stem, paths = item
        preds = [load_image(p) for p in paths]
        try:
            fused = fuse_one(preds)
        except ValueError as exc:
            raise UsageError(f"{stem}: {exc}") from exc
        save_image(fused, out_dir / f"{stem}.png")

    if threads == 1 or len(aligned) <= 1:
        for item in aligned:
            work(item)
    else:
        with ThreadPoolExecutor(max_workers=threads or None) as pool:
            list(pool.map(work, aligned))
    print(f"wrote {len(aligned)} fused images to {out_dir}")
    return 0


def cmd_fuse(args: argparse.Namespace) -> int:
    lut = _load_lut_checked(args.lut, len(args.pred))
    return _fuse_directory(args.pred, args.out, lambda preds: fuse_with_lut(preds, lut), args.threads)


def cmd_baseline(args: argparse.Namespace) -> int:
    if args.method == "average":
        fuse_one = fuse_average
    else:  # zzpm
        def fuse_one(preds):
            fused, _ = fuse_zzpm(preds)
            return fused
    return _fuse_directory(args.pred, args.out, fuse_one, args.threads)


def cmd_eval(args: argparse.Namespace) -> int:
    try:
        report = evaluate_set(args.pred, args.gt, channel_mode=args.channel)
    except (FileNotFoundError, ValueError) as exc:
        raise UsageError(str(exc)) from exc
    write_report_csv(report, args.out)
    print(
        f"{len(report.per_image)} images: mean PSNR {report.mean_psnr:.4f} dB, "
        f"mean SSIM {report.mean_ssim:.6f} ({report.channel_mode} channel mode)"
    )
    return 0


def cmd_synth(args: argparse.Namespace) -> int:
    spec = range_biased_spec(
        seed=args.seed,
        height=args.height,
        width=args.width,
        num_ref=args.num_ref,
        num_test=args.num_test,
    )
    data = gen_set(spec)
    write_synth_tree(data, spec, args.out)
    print(
        f"wrote {spec.num_ref} reference and {spec.num_test} test samples "
        f"({spec.num_models} models, {spec.height}x{spec.width}) to {args.out}"
    )
    return 0


def cmd_bench(args: argparse.Namespace) -> int:
    lut = _load_lut_checked(args.lut, len(args.pred))
    aligned = _load_aligned(args.pred)
    image_sets = [[load_image(p) for p in paths] for _, paths in aligned]
    # Warm-up pass so allocator and cache effects do not pollute the timing.
    for preds in image_sets:
        fuse_with_lut(preds, lut)
    repeats = max(3, args.repeats)
    started = time.perf_counter()
    for _ in range(repeats):
        for preds in image_sets:
            fuse_with_lut(preds, lut)
    elapsed = time.perf_counter() - started
    per_image = elapsed / (repeats * len(image_sets))
    print(f"mean fuse time per image: {per_image:.6f} s "
          f"({len(image_sets)} images, {repeats} repetitions)")
    return 0


def _add_threads(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--threads", type=int, default=0,
                        help="worker threads (0 = one per CPU)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="binfuse",
        description="Range-binned ensemble fusion for image restoration outputs.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("estimate", help="estimate a weight table from a reference set")
    p.add_argument("--gt", type=Path, required=True, help="ground-truth directory")
    p.add_argument("--pred", type=Path, action="append", required=True,
                   help="prediction directory (repeat once per model)")
    p.add_argument("--out", type=Path, required=True, help="output table (JSON)")
    p.add_argument("--bin-width", type=int, default=32)
    p.add_argument("--max-steps", type=int, default=1000)
    p.add_argument("--loglik-tol", type=float, default=1e-5)
    p.add_argument("--min-pixels", type=int, default=100)
    p.add_argument("--init-mode", choices=INIT_MODES, default="sample_variance")
    _add_threads(p)
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("fuse", help="fuse a test set with a weight table")
    p.add_argument("--pred", type=Path, action="append", required=True)
    p.add_argument("--lut", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True, help="output directory")
    _add_threads(p)
    p.set_defaults(func=cmd_fuse)

    p = sub.add_parser("baseline", help="fuse with averaging or inverse-MSE weights")
    p.add_argument("--method", choices=("average", "zzpm"), required=True)
    p.add_argument("--pred", type=Path, action="append", required=True)
    p.add_argument("--out", type=Path, required=True)
    _add_threads(p)
    p.set_defaults(func=cmd_baseline)

    p = sub.add_parser("eval", help="PSNR/SSIM report between two directories")
    p.add_argument("--pred", type=Path, required=True)
    p.add_argument("--gt", type=Path, required=True)
    p.add_argument("--channel", choices=CHANNEL_MODES, default="y")
    p.add_argument("--out", type=Path, required=True, help="output CSV")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("synth", help="generate a synthetic two-model dataset")
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--height", type=int, default=128)
    p.add_argument("--width", type=int, default=128)
    p.add_argument("--num-ref", type=int, default=20)
    p.add_argument("--num-test", type=int, default=20)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("bench", help="time table-based fusion per image")
    p.add_argument("--pred", type=Path, action="append", required=True)
    p.add_argument("--lut", type=Path, required=True)
    p.add_argument("--repeats", type=int, default=3)
    p.set_defaults(func=cmd_bench)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (LutFormatError, ImageFormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
