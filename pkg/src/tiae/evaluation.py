"""Quantitative evaluation of trained models.

Works on plain-array callables so the same machinery serves the neural
models (their ``.predict``) and the PCA baseline: ``encode`` maps
[m, ch, h, w] images to [m, d] descriptors, ``decode`` maps descriptors back
to images, ``predict_shift`` maps images to [m, 2] (dx, dy) estimates.

The headline quantity is the within-shift / between-class descriptor
variance ratio: within-shift variance is the mean squared distance of one
item's descriptors (over all grid shifts of that item) to their centroid;
between-class variance is the mean squared distance among class centroids of
unshifted items. A shift-invariant encoder drives the ratio toward zero.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np

from .data import Dataset, export_pgm
from .transforms import ShiftParam, TransformGrid, apply_shift, \
    best_shift_batch

EncodeFn = Callable[[np.ndarray], np.ndarray]
DecodeFn = Callable[[np.ndarray], np.ndarray]
PredictShiftFn = Callable[[np.ndarray], np.ndarray]


@dataclass
class InvarianceReport:
    per_item_within_variance: list[float]
    within_shift_variance: float          # mean over items
    between_class_variance: float
    ratio: float                          # within / between
    per_item_restored_pairwise_l2: list[float] | None
    restored_pairwise_l2: float | None    # mean over items

    def to_json_dict(self) -> dict:
        return {
            "within_shift_variance": self.within_shift_variance,
            "between_class_variance": self.between_class_variance,
            "ratio": self.ratio,
            "restored_pairwise_l2": self.restored_pairwise_l2,
        }


def _mean_pairwise_l2(rows: np.ndarray) -> float:
    """Mean Euclidean distance over unordered pairs of rows."""
    n = len(rows)
    if n < 2:
        return 0.0
    diffs = rows[:, None, :] - rows[None, :, :]
    dists = np.sqrt(np.sum(diffs * diffs, axis=2))
    iu = np.triu_indices(n, k=1)
    return float(dists[iu].mean())


def invariance_report(encode: EncodeFn, decode: DecodeFn | None,
                      items: Dataset, grid: TransformGrid,
                      ) -> InvarianceReport:
    """Shift-invariance statistics over `items` (labels required)."""
    if items.labels is None:
        raise ValueError("invariance_report needs labeled items")
    labels = np.array(items.labels)
    if len(set(items.labels)) < 2:
        raise ValueError("between-class variance needs at least 2 classes")
    m = len(items)
    n = len(grid)

    # All grid shifts of all items in one batch: [m * n, ch, h, w].
    stacks = np.concatenate(
        [np.stack([apply_shift(img, p) for p in grid]) for img in items.images])
    desc = np.asarray(encode(stacks))
    d = desc.shape[1]
    desc = desc.reshape(m, n, d)
    centroids = desc.mean(axis=1, keepdims=True)
    within = np.mean(np.sum((desc - centroids) ** 2, axis=2), axis=1)

    base_desc = np.asarray(encode(items.images))
    class_means = np.stack([base_desc[labels == c].mean(axis=0)
                            for c in sorted(set(items.labels))])
    diffs = class_means[:, None, :] - class_means[None, :, :]
    sq = np.sum(diffs * diffs, axis=2)
    iu = np.triu_indices(len(class_means), k=1)
    between = float(sq[iu].mean())

    per_item_l2 = None
    mean_l2 = None
    if decode is not None:
        restored = np.asarray(decode(desc.reshape(m * n, d)))
        restored = restored.reshape(m, n, -1)
        per_item_l2 = [_mean_pairwise_l2(restored[i]) for i in range(m)]
        mean_l2 = float(np.mean(per_item_l2))

    within_mean = float(within.mean())
    # A fully collapsed encoder has zero between-class spread; the ratio is
    # undefined there rather than flattering.
    ratio = within_mean / between if between > 0 else float("nan")
    return InvarianceReport(
        per_item_within_variance=[float(v) for v in within],
        within_shift_variance=within_mean,
        between_class_variance=between,
        ratio=ratio,
        per_item_restored_pairwise_l2=per_item_l2,
        restored_pairwise_l2=mean_l2,
    )


@dataclass
class ProjectionPlane:
    """Affine plane through three descriptor means, with orthonormal basis."""

    origin: np.ndarray    # [d]
    basis: np.ndarray     # [2, d]


def projection_plane(means: np.ndarray) -> ProjectionPlane:
    """Plane through three means: origin at their centroid, basis from
    Gram-Schmidt on (m2 - m1, m3 - m1). Collinear means are an error."""
    means = np.asarray(means, dtype=np.float64)
    if means.shape[0] != 3:
        raise ValueError(f"need exactly 3 means, got {means.shape}")
    u1 = means[1] - means[0]
    u2 = means[2] - means[0]
    n1 = np.linalg.norm(u1)
    if n1 <= 1e-12:
        raise ValueError("degenerate means: first two coincide")
    b1 = u1 / n1
    u2p = u2 - (u2 @ b1) * b1
    n2 = np.linalg.norm(u2p)
    if n2 <= 1e-9 * max(np.linalg.norm(u2), 1.0):
        raise ValueError("degenerate means: collinear")
    b2 = u2p / n2
    return ProjectionPlane(origin=means.mean(axis=0),
                           basis=np.stack([b1, b2]))


def project(plane: ProjectionPlane, descriptors: np.ndarray) -> np.ndarray:
    """Plane coordinates (u, v) of descriptors; [m, d] -> [m, 2]."""
    x = np.asarray(descriptors, dtype=np.float64)
    single = x.ndim == 1
    if single:
        x = x[None]
    coords = (x - plane.origin) @ plane.basis.T
    return coords[0] if single else coords


def snap_to_grid(preds: np.ndarray, grid: TransformGrid) -> np.ndarray:
    """Nearest grid shift (Euclidean) for each raw (dx, dy) prediction."""
    pairs = np.array(grid.to_pairs(), dtype=np.float64)
    preds = np.asarray(preds, dtype=np.float64)
    d2 = np.sum((preds[:, None, :] - pairs[None, :, :]) ** 2, axis=2)
    return pairs[np.argmin(d2, axis=1)]


@dataclass
class ShiftInferenceStats:
    mae_px: float            # snapped predictions vs brute-force targets
    raw_mae_px: float        # unsnapped predictions vs targets
    fraction_within_2px: float
    cases: int

    def to_json_dict(self) -> dict:
        return {"mae_px": self.mae_px, "raw_mae_px": self.raw_mae_px,
                "fraction_within_2px": self.fraction_within_2px,
                "cases": self.cases}


SHIFT_CASE_HEADER = ("item", "input_dx", "input_dy", "raw_dx", "raw_dy",
                     "snap_dx", "snap_dy", "target_dx", "target_dy")


def shift_inference_table(predict_shift: PredictShiftFn,
                          encode: EncodeFn, decode: DecodeFn,
                          items: Dataset, grid: TransformGrid,
                          ) -> tuple[ShiftInferenceStats, list[list]]:
    """Compare inferred shifts against brute-force targets, case by case.

    Every item is presented at every grid shift; the target for a presented
    image J is the grid shift minimizing ||J - T(D(E(J)))||^2. Returns the
    aggregate stats and one row per (item, shift) case (SHIFT_CASE_HEADER).
    """
    rows: list[list] = []
    abs_err_snap = []
    abs_err_raw = []
    within = []
    for p in grid:
        shifted = apply_shift(items.images, p)
        recon = np.asarray(decode(np.asarray(encode(shifted))))
        idx, _ = best_shift_batch(shifted, recon, grid)
        targets = np.array([[grid[int(i)].dx, grid[int(i)].dy] for i in idx],
                           dtype=np.float64)
        raw = np.asarray(predict_shift(shifted), dtype=np.float64)
        snapped = snap_to_grid(raw, grid)
        abs_err_snap.append(np.abs(snapped - targets))
        abs_err_raw.append(np.abs(raw - targets))
        within.append(np.max(np.abs(snapped - targets), axis=1) <= 2.0)
        for i in range(len(items)):
            rows.append([i, p.dx, p.dy, float(raw[i, 0]), float(raw[i, 1]),
                         int(snapped[i, 0]), int(snapped[i, 1]),
                         int(targets[i, 0]), int(targets[i, 1])])
    snap_all = np.concatenate(abs_err_snap)
    raw_all = np.concatenate(abs_err_raw)
    within_all = np.concatenate(within)
    stats = ShiftInferenceStats(
        mae_px=float(snap_all.mean()),
        raw_mae_px=float(raw_all.mean()),
        fraction_within_2px=float(within_all.mean()),
        cases=int(within_all.size),
    )
    return stats, rows


def shift_inference_accuracy(predict_shift: PredictShiftFn,
                             encode: EncodeFn, decode: DecodeFn,
                             items: Dataset, grid: TransformGrid,
                             ) -> ShiftInferenceStats:
    stats, _ = shift_inference_table(predict_shift, encode, decode, items,
                                     grid)
    return stats


def write_image(img: np.ndarray, out_dir: Path, stem: str) -> list[Path]:
    """Export one [h,w], [1,h,w] or [ch,h,w] image as PGM file(s)."""
    return _write_image(img, out_dir, stem)


def _write_image(img: np.ndarray, out_dir: Path, stem: str) -> list[Path]:
    paths = []
    if img.ndim == 3 and img.shape[0] == 1:
        img = img[0]
    if img.ndim == 2:
        path = out_dir / f"{stem}.pgm"
        export_pgm(np.clip(img, 0.0, 1.0), path)
        return [path]
    for c in range(img.shape[0]):
        path = out_dir / f"{stem}_ch{c}.pgm"
        export_pgm(np.clip(img[c], 0.0, 1.0), path)
        paths.append(path)
    return paths


def restoration_gallery(encode: EncodeFn, decode: DecodeFn,
                        item: np.ndarray, grid: TransformGrid,
                        out_dir: str | Path,
                        predict_shift: PredictShiftFn | None = None,
                        ) -> list[Path]:
    """Write PGM panels for one item: the shifted inputs
    (input_dy{+d}_dx{+d}.pgm), the restorations from each shifted input
    (restored_...), and, when a shift predictor is given, the restorations
    re-shifted by the inferred parameters (reshifted_...)."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    item = np.asarray(item, dtype=np.float64)
    written: list[Path] = []
    for p in grid:
        tag = f"dy{p.dy:+d}_dx{p.dx:+d}"
        shifted = apply_shift(item, p)
        recon = np.asarray(decode(np.asarray(encode(shifted[None]))))[0]
        written += _write_image(shifted, out, f"input_{tag}")
        written += _write_image(recon, out, f"restored_{tag}")
        if predict_shift is not None:
            raw = np.asarray(predict_shift(shifted[None]))[0]
            sdx, sdy = snap_to_grid(raw[None], grid)[0]
            reshifted = apply_shift(recon,
                                    ShiftParam(int(sdx), int(sdy)))
            written += _write_image(reshifted, out, f"reshifted_{tag}")
    return written
