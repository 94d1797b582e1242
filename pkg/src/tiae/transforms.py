"""The ignored-transform family: enumerable 2-D integer shifts.

A shift by (dx, dy) maps output pixel (x, y) to input pixel (x+dx, y+dy);
pixels pulled from outside the image read as 0 (all inputs here have zero
background, so zero fill is the natural boundary rule). Shifts are linear
index permutations, so they are exactly differentiable: the adjoint of a
shift by (dx, dy) is the shift by (-dx, -dy), and :func:`shift2d` wires that
into the autodiff graph.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import Var

PAPER_SHIFT_AXIS = (-8, -6, -4, -2, 0, 2, 4, 6, 8)


@dataclass(frozen=True)
class ShiftParam:
    dx: int
    dy: int

    def inverse(self) -> "ShiftParam":
        return ShiftParam(-self.dx, -self.dy)


@dataclass(frozen=True)
class TransformGrid:
    """Ordered, duplicate-free list of shift parameters."""

    params: tuple[ShiftParam, ...]
    contains_identity: bool = field(init=False)

    def __post_init__(self):
        if not self.params:
            raise ValueError("transform grid must be non-empty")
        if len(set(self.params)) != len(self.params):
            raise ValueError("transform grid contains duplicate shifts")
        object.__setattr__(
            self, "contains_identity", ShiftParam(0, 0) in self.params)

    def __len__(self) -> int:
        return len(self.params)

    def __iter__(self):
        return iter(self.params)

    def __getitem__(self, i: int) -> ShiftParam:
        return self.params[i]

    def index_of(self, p: ShiftParam) -> int:
        return self.params.index(p)

    @property
    def max_abs_shift(self) -> int:
        return max(max(abs(p.dx), abs(p.dy)) for p in self.params)

    def to_pairs(self) -> list[list[int]]:
        return [[p.dx, p.dy] for p in self.params]

    @staticmethod
    def from_pairs(pairs) -> "TransformGrid":
        return TransformGrid(tuple(ShiftParam(int(dx), int(dy))
                                   for dx, dy in pairs))

    @staticmethod
    def from_axis(values) -> "TransformGrid":
        """Cartesian square of `values`, row-major over (dy, dx) ascending."""
        vals = tuple(int(v) for v in values)
        return TransformGrid(tuple(ShiftParam(dx, dy)
                                   for dy in vals for dx in vals))


def paper_grid() -> TransformGrid:
    """The 81-shift grid {-8,-6,-4,-2,0,2,4,6,8}^2."""
    return TransformGrid.from_axis(PAPER_SHIFT_AXIS)


def shift_array(img: np.ndarray, dx: int, dy: int) -> np.ndarray:
    """out[..., y, x] = img[..., y+dy, x+dx] where in bounds, else 0.

    Shifts the trailing two axes; leading axes (channels, batch) pass
    through, so one call shifts a whole batch by the same parameter.
    """
    h, w = img.shape[-2], img.shape[-1]
    out = np.zeros_like(img)
    y0, y1 = max(0, -dy), min(h, h - dy)
    x0, x1 = max(0, -dx), min(w, w - dx)
    if y1 > y0 and x1 > x0:
        out[..., y0:y1, x0:x1] = img[..., y0 + dy:y1 + dy, x0 + dx:x1 + dx]
    return out


def apply_shift(img: np.ndarray, p: ShiftParam) -> np.ndarray:
    return shift_array(img, p.dx, p.dy)


def shift2d(x: Var, p: ShiftParam) -> Var:
    """Differentiable shift of the trailing two axes of a graph node."""
    dx, dy = p.dx, p.dy
    return Var(
        shift_array(x.value, dx, dy),
        parents=(x,),
        vjps=(lambda g: shift_array(g, -dx, -dy),),
        op=f"shift({dx},{dy})",
    )


def shift_stack(imgs: np.ndarray, grid: TransformGrid) -> np.ndarray:
    """All grid shifts of a batch: [n_shifts, *imgs.shape]."""
    return np.stack([apply_shift(imgs, p) for p in grid], axis=0)


def best_shift(target: np.ndarray, candidate: np.ndarray,
               grid: TransformGrid) -> tuple[ShiftParam, float]:
    """Exhaustive argmin_p ||target - T_p(candidate)||^2 over the grid.

    Ties break to the earliest grid index.
    """
    if target.shape != candidate.shape:
        raise ValueError(
            f"shape mismatch: {target.shape} vs {candidate.shape}")
    diffs = shift_stack(candidate, grid) - target[None]
    diffs = diffs.reshape(len(grid), -1)
    res = np.sum(diffs * diffs, axis=1)
    i = int(np.argmin(res))
    return grid[i], float(res[i])


def best_shift_batch(targets: np.ndarray, candidates: np.ndarray,
                     grid: TransformGrid) -> tuple[np.ndarray, np.ndarray]:
    """Per-sample best shift for a batch; returns (indices[b], residuals[b])."""
    if targets.shape != candidates.shape:
        raise ValueError(
            f"shape mismatch: {targets.shape} vs {candidates.shape}")
    shifted = shift_stack(candidates, grid)
    diff = shifted - targets[None]
    b = targets.shape[0]
    res = np.sum(diff.reshape(len(grid), b, -1) ** 2, axis=2)
    idx = np.argmin(res, axis=0)
    return idx, res[idx, np.arange(b)]
