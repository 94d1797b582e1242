"""Dataset ingestion and export: IDX (MNIST) files, a synthetic
shifted-motif generator for desk-scale experiments, and PGM/CSV writers.

Images are [n, ch, h, w] float64 scaled to [0, 1]. Labels are optional and
used only by evaluation (training is unsupervised). MNIST 28x28 images are
zero-padded to 32x32 at load time so downstream code sees one resolution
with room for +-8 shifts.
"""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .rng import SplitMix64

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


class IdxFormatError(ValueError):
    pass


@dataclass
class Dataset:
    images: np.ndarray                 # [n, ch, h, w], values in [0, 1]
    labels: list[int] | None = None

    def __post_init__(self):
        self.images = np.asarray(self.images, dtype=np.float64)
        if self.images.ndim != 4:
            raise ValueError(
                f"images must be [n, ch, h, w], got {self.images.shape}")
        if self.images.size and (self.images.min() < 0.0
                                 or self.images.max() > 1.0):
            raise ValueError("image values must lie in [0, 1]")
        if self.labels is not None:
            self.labels = [int(v) for v in self.labels]
            if len(self.labels) != len(self.images):
                raise ValueError(
                    f"{len(self.labels)} labels for {len(self.images)} images")

    def __len__(self) -> int:
        return len(self.images)

    @property
    def image_shape(self) -> tuple[int, int, int]:
        return tuple(self.images.shape[1:])


def _pad_center(images: np.ndarray, pad_to: int) -> np.ndarray:
    """Zero-pad [n, h, w] spatially to pad_to x pad_to, centered."""
    n, h, w = images.shape
    if h >= pad_to and w >= pad_to:
        return images
    top = max(0, (pad_to - h) // 2)
    left = max(0, (pad_to - w) // 2)
    out = np.zeros((n, max(h, pad_to), max(w, pad_to)), dtype=images.dtype)
    out[:, top:top + h, left:left + w] = images
    return out


def load_idx(images_path: str | Path, labels_path: str | Path | None = None,
             pad_to: int | None = 32) -> Dataset:
    """Parse big-endian IDX image (and optional label) files."""
    raw = Path(images_path).read_bytes()
    if len(raw) < 16:
        raise IdxFormatError(f"{images_path}: truncated header")
    magic, n, rows, cols = struct.unpack(">iiii", raw[:16])
    if magic != IDX_IMAGES_MAGIC:
        raise IdxFormatError(
            f"{images_path}: bad magic 0x{magic:08x} "
            f"(expected 0x{IDX_IMAGES_MAGIC:08x})")
    expected = 16 + n * rows * cols
    if len(raw) != expected:
        raise IdxFormatError(
            f"{images_path}: expected {expected} bytes, found {len(raw)}")
    pixels = np.frombuffer(raw, dtype=np.uint8, offset=16)
    images = pixels.reshape(n, rows, cols).astype(np.float64) / 255.0

    labels = None
    if labels_path is not None:
        lraw = Path(labels_path).read_bytes()
        if len(lraw) < 8:
            raise IdxFormatError(f"{labels_path}: truncated header")
        lmagic, ln = struct.unpack(">ii", lraw[:8])
        if lmagic != IDX_LABELS_MAGIC:
            raise IdxFormatError(
                f"{labels_path}: bad magic 0x{lmagic:08x} "
                f"(expected 0x{IDX_LABELS_MAGIC:08x})")
        if len(lraw) != 8 + ln:
            raise IdxFormatError(
                f"{labels_path}: expected {8 + ln} bytes, found {len(lraw)}")
        if ln != n:
            raise IdxFormatError(
                f"label count {ln} != image count {n}")
        labels = list(np.frombuffer(lraw, dtype=np.uint8, offset=8))

    if pad_to is not None:
        images = _pad_center(images, pad_to)
    return Dataset(images=images[:, None, :, :], labels=labels)


# Small binary motifs for the synthetic dataset; visually distinct so the
# between-class descriptor spread stays well away from zero.
DEFAULT_MOTIFS: dict[str, np.ndarray] = {
    "cross": np.array([[0, 0, 1, 0, 0],
                       [0, 0, 1, 0, 0],
                       [1, 1, 1, 1, 1],
                       [0, 0, 1, 0, 0],
                       [0, 0, 1, 0, 0]], dtype=np.float64),
    "box": np.array([[1, 1, 1, 1, 1],
                     [1, 0, 0, 0, 1],
                     [1, 0, 0, 0, 1],
                     [1, 0, 0, 0, 1],
                     [1, 1, 1, 1, 1]], dtype=np.float64),
    "diag": np.array([[1, 0, 0, 0, 1],
                      [0, 1, 0, 1, 0],
                      [0, 0, 1, 0, 0],
                      [0, 1, 0, 1, 0],
                      [1, 0, 0, 0, 1]], dtype=np.float64),
}


def motif_bank(names: list[str]) -> list[np.ndarray]:
    try:
        return [DEFAULT_MOTIFS[n] for n in names]
    except KeyError as e:
        raise ValueError(
            f"unknown motif {e.args[0]!r}; known: {sorted(DEFAULT_MOTIFS)}"
        ) from None


@dataclass
class SyntheticSpec:
    """One motif per image, placed uniformly at random, label = motif index.

    `margin` shrinks the placement region away from the canvas edge; with
    margin >= the max shift of a grid, every grid-shifted version of a
    sample keeps its full motif in bounds.
    """

    canvas: tuple[int, int] = (16, 16)
    motifs: list[np.ndarray] = field(
        default_factory=lambda: motif_bank(["cross", "box", "diag"]))
    count_per_motif: int = 100
    seed: int = 0
    margin: int = 0


def gen_synthetic(spec: SyntheticSpec) -> Dataset:
    h, w = spec.canvas
    rng = SplitMix64(spec.seed)
    images = np.zeros((len(spec.motifs) * spec.count_per_motif, 1, h, w))
    labels: list[int] = []
    row = 0
    for label, motif in enumerate(spec.motifs):
        motif = np.asarray(motif, dtype=np.float64)
        mh, mw = motif.shape
        top_range = h - mh - 2 * spec.margin + 1
        left_range = w - mw - 2 * spec.margin + 1
        if top_range < 1 or left_range < 1:
            raise ValueError(
                f"motif {label} ({mh}x{mw}) does not fit a {h}x{w} canvas "
                f"with margin {spec.margin}")
        for _ in range(spec.count_per_motif):
            top = spec.margin + rng.randint(top_range)
            left = spec.margin + rng.randint(left_range)
            images[row, 0, top:top + mh, left:left + mw] = motif
            labels.append(label)
            row += 1
    return Dataset(images=images, labels=labels)


def export_pgm(img: np.ndarray, path: str | Path) -> None:
    """Write a [h, w] image in [0, 1] as binary PGM (P5, maxval 255)."""
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 2:
        raise ValueError(f"export_pgm expects [h, w], got {img.shape}")
    quantized = np.round(np.clip(img, 0.0, 1.0) * 255.0).astype(np.uint8)
    h, w = img.shape
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        f.write(quantized.tobytes())


def read_pgm(path: str | Path) -> np.ndarray:
    """Read a binary PGM written by export_pgm; values back in [0, 1]."""
    raw = Path(path).read_bytes()
    parts = raw.split(b"\n", 3)
    if len(parts) < 4 or parts[0] != b"P5":
        raise ValueError(f"{path}: not a binary PGM file")
    w, h = (int(v) for v in parts[1].split())
    maxval = int(parts[2])
    pixels = np.frombuffer(parts[3][:h * w], dtype=np.uint8)
    if pixels.size != h * w:
        raise ValueError(f"{path}: truncated PGM payload")
    return pixels.reshape(h, w).astype(np.float64) / float(maxval)


def export_csv(rows, path: str | Path, header: list[str]) -> None:
    """UTF-8 CSV with a header row; floats via repr (round-trip exact)."""
    def fmt(v):
        if isinstance(v, float):
            return repr(v)
        if isinstance(v, (np.floating,)):
            return repr(float(v))
        return v

    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([fmt(v) for v in row])
