"""Weight lookup table: estimation over all bin sets, fallbacks, persistence.

The table maps each bin-set key seen on the reference set to the mixture
weights fitted for it.  Groups with too few pixels, or whose fit is
degenerate, get the fallback weights (uniform by default); keys never seen
on the reference set resolve to the fallback weights at lookup time.

The JSON serialization is canonical: fixed field order, entries sorted by
key, and reals printed with 17 significant digits so every 64-bit weight
round-trips bit-exactly and repeated save/load cycles are byte-identical.
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .binning import BinGroup, BinSpace, partition_reference
from .em import EmConfig, is_undetermined, run_em
from .image_io import ReferenceBatch

__all__ = [
    "LutEntry",
    "LutFormatError",
    "WeightLut",
    "dumps_lut",
    "estimate_lut",
    "load_lut",
    "save_lut",
]

LUT_VERSION = 1
ENTRY_SOURCES = ("em", "fallback_small", "fallback_undetermined")

SIMPLEX_TOL = 1e-12


class LutFormatError(ValueError):
    """Raised when a serialized table is malformed or violates invariants."""


def _check_simplex(weights: np.ndarray, what: str) -> None:
    if np.any(weights < 0.0) or abs(float(weights.sum()) - 1.0) > SIMPLEX_TOL:
        raise LutFormatError(
            f"simplex violation in {what}: weights={weights.tolist()}"
        )


@dataclass
class LutEntry:
    key: tuple[int, ...]
    weights: np.ndarray
    count: int
    converged: bool
    steps: int
    source: str


@dataclass
class WeightLut:
    """The persisted bin-set-key -> weight-vector map plus its parameters."""

    num_models: int
    bin_width: int
    min_pixels: int
    fallback_weights: np.ndarray
    entries: dict[tuple[int, ...], LutEntry] = field(default_factory=dict)
    version: int = LUT_VERSION

    @property
    def num_bins(self) -> int:
        return BinSpace(self.bin_width).num_bins

    def lookup(self, key: tuple[int, ...]) -> np.ndarray:
        """Stored weights for the key, or the fallback weights if absent."""
        if len(key) != self.num_models:
            raise ValueError(
                f"key arity {len(key)} does not match num_models {self.num_models}"
            )
        if any(k < 0 or k >= self.num_bins for k in key):
            raise ValueError(f"key {key} outside bin range [0, {self.num_bins})")
        entry = self.entries.get(tuple(key))
        return entry.weights if entry is not None else self.fallback_weights


def estimate_lut(
    batch: ReferenceBatch,
    space: BinSpace,
    cfg: EmConfig,
    fallback_weights: np.ndarray | None = None,
    workers: int = 0,
) -> WeightLut:
    """Fit one mixture per non-empty bin set of the reference batch.

    Groups with fewer than ``cfg.min_pixels`` pixels and groups whose fit is
    degenerate receive the fallback weights instead; the entry's ``source``
    field records which path produced it.  Independent groups are solved in
    parallel (``workers=0`` means one per CPU), and the result is identical
    for any worker count.
    """
    num_models = batch.num_models
    if num_models < 1:
        raise ValueError("need at least one model")
    if fallback_weights is None:
        fallback = np.full(num_models, 1.0 / num_models)
    else:
        fallback = np.asarray(fallback_weights, dtype=np.float64)
        if fallback.shape != (num_models,):
            raise ValueError("fallback_weights length must equal the model count")
        _check_simplex(fallback, "fallback_weights")

    groups = sorted(partition_reference(batch, space).items())

    def solve(item: tuple[tuple[int, ...], BinGroup]) -> LutEntry:
        key, group = item
        if group.count < cfg.min_pixels:
            return LutEntry(key, fallback.copy(), group.count, False, 0, "fallback_small")
        model = run_em(group, cfg)
        if is_undetermined(model, cfg):
            return LutEntry(
                key, fallback.copy(), group.count, model.converged,
                model.steps_taken, "fallback_undetermined",
            )
        return LutEntry(
            key, model.weights, group.count, model.converged,
            model.steps_taken, "em",
        )

    if workers == 1 or len(groups) <= 1:
        solved = [solve(item) for item in groups]
    else:
        with ThreadPoolExecutor(max_workers=workers or None) as pool:
            solved = list(pool.map(solve, groups))

    return WeightLut(
        num_models=num_models,
        bin_width=space.bin_width,
        min_pixels=cfg.min_pixels,
        fallback_weights=fallback,
        entries={entry.key: entry for entry in solved},
    )


def _fmt_real(value: float) -> str:
    return format(float(value), ".17g")


def _fmt_reals(values: np.ndarray) -> str:
    return "[" + ", ".join(_fmt_real(v) for v in values) + "]"


def dumps_lut(lut: WeightLut) -> str:
    """Canonical JSON text for the table (see the loader for the schema)."""
    lines = [
        "{",
        f'  "version": {lut.version},',
        f'  "num_models": {lut.num_models},',
        f'  "bin_width": {lut.bin_width},',
        f'  "num_bins": {lut.num_bins},',
        '  "value_range": [0, 255],',
        f'  "min_pixels": {lut.min_pixels},',
        f'  "fallback_weights": {_fmt_reals(lut.fallback_weights)},',
    ]
    entry_lines = []
    for key in sorted(lut.entries):
        e = lut.entries[key]
        entry_lines.append(
            "    {"
            f'"key": {list(key)}, '
            f'"weights": {_fmt_reals(e.weights)}, '
            f'"count": {e.count}, '
            f'"converged": {"true" if e.converged else "false"}, '
            f'"steps": {e.steps}, '
            f'"source": "{e.source}"'
            "}"
        )
    if entry_lines:
        lines.append('  "entries": [')
        lines.append(",\n".join(entry_lines))
        lines.append("  ]")
    else:
        lines.append('  "entries": []')
    lines.append("}")
    return "\n".join(lines) + "\n"


def save_lut(lut: WeightLut, path: str | Path) -> None:
    Path(path).write_text(dumps_lut(lut), encoding="utf-8")


_REQUIRED_FIELDS = (
    "version", "num_models", "bin_width", "num_bins",
    "value_range", "min_pixels", "fallback_weights", "entries",
)
_ENTRY_FIELDS = ("key", "weights", "count", "converged", "steps", "source")


def load_lut(path: str | Path) -> WeightLut:
    """Parse and validate a serialized table; invariant violations are rejected."""
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise LutFormatError(f"malformed JSON in {path}: {exc}") from exc
    if not isinstance(doc, dict):
        raise LutFormatError("top-level JSON value must be an object")
    missing = [f for f in _REQUIRED_FIELDS if f not in doc]
    if missing:
        raise LutFormatError(f"missing fields: {missing}")
    if doc["version"] != LUT_VERSION:
        raise LutFormatError(f"unsupported version {doc['version']!r} (expected {LUT_VERSION})")
    if doc["value_range"] != [0, 255]:
        raise LutFormatError(f"unsupported value_range {doc['value_range']!r}")

    num_models = int(doc["num_models"])
    bin_width = int(doc["bin_width"])
    num_bins = BinSpace(bin_width).num_bins
    if int(doc["num_bins"]) != num_bins:
        raise LutFormatError(
            f"num_bins {doc['num_bins']} inconsistent with bin_width {bin_width}"
        )
    fallback = np.asarray(doc["fallback_weights"], dtype=np.float64)
    if fallback.shape != (num_models,):
        raise LutFormatError("fallback_weights length must equal num_models")
    _check_simplex(fallback, "fallback_weights")

    entries: dict[tuple[int, ...], LutEntry] = {}
    for raw in doc["entries"]:
        missing = [f for f in _ENTRY_FIELDS if f not in raw]
        if missing:
            raise LutFormatError(f"entry missing fields: {missing}")
        key = tuple(int(k) for k in raw["key"])
        if len(key) != num_models:
            raise LutFormatError(f"entry key {key} arity != num_models {num_models}")
        if any(k < 0 or k >= num_bins for k in key):
            raise LutFormatError(f"entry key {key} outside bin range [0, {num_bins})")
        if key in entries:
            raise LutFormatError(f"duplicate entry key {key}")
        weights = np.asarray(raw["weights"], dtype=np.float64)
        if weights.shape != (num_models,):
            raise LutFormatError(f"entry {key}: weight vector length != num_models")
        _check_simplex(weights, f"entry {key}")
        if raw["source"] not in ENTRY_SOURCES:
            raise LutFormatError(f"entry {key}: unknown source {raw['source']!r}")
        entries[key] = LutEntry(
            key=key,
            weights=weights,
            count=int(raw["count"]),
            converged=bool(raw["converged"]),
            steps=int(raw["steps"]),
            source=str(raw["source"]),
        )
    return WeightLut(
        num_models=num_models,
        bin_width=bin_width,
        min_pixels=int(doc["min_pixels"]),
        fallback_weights=fallback,
        entries=entries,
    )
