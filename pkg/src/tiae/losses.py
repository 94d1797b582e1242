"""Training objectives for the transform-invariant autoencoder.

All costs are batch *sums* (not means), so learning rates are interpreted
against sum reduction. The five pieces:

- cost_ordinary:     sum_I ||I - D(E(I))||^2
- cost_invariance:   sum_I sum_i ||D(E(I)) - D(E(T_i(I)))||^2
- cost_restoration:  sum_I min_i ||T_i(I) - D(E(I))||^2
- cost_sparsity:     sum_I (||E(I)||_1 / ||E(I)||_2)^2
- cost_param_inference: sum_I ||R(I) - argmin_t ||I - T_t(D(E(I)))||^2 ||^2

The min in cost_restoration uses the selected-branch subgradient: the argmin
is chosen on the forward values and held fixed for the backward pass (pass
`forced_indices` to pin it externally, e.g. for finite-difference checks).
cost_param_inference computes its targets outside the graph, so encoder and
decoder gradients from it are exactly zero.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .autodiff import (
    DegenerateDescriptorError,
    L2_NORM_EPSILON,
    NonFiniteValueError,
    ShapeMismatchError,
    Var,
    abs_,
    concat0,
    div,
    mul,
    reshape,
    scale,
    sq_l2,
    sub,
    sum_,
)
from .transforms import TransformGrid, best_shift_batch, shift2d, shift_stack

Model = Callable[[Var], Var]


@dataclass(frozen=True)
class LossWeights:
    lambda_inv: float = 1.0
    lambda_res: float = 1.0
    lambda_spa: float = 0.01

    def __post_init__(self):
        if min(self.lambda_inv, self.lambda_res, self.lambda_spa) < 0:
            raise ValueError("loss weights must be nonnegative")
        if self.lambda_inv == 0 and self.lambda_res == 0:
            raise ValueError(
                "at least one of lambda_inv, lambda_res must be positive")


@dataclass
class LossBreakdown:
    c_inv: float
    c_res: float
    c_spa: float
    total: float
    argmin_indices: list[int] = field(default_factory=list)

    CSV_HEADER = ("step", "c_inv", "c_res", "c_spa", "total")

    def csv_row(self, step: int) -> list:
        return [step, self.c_inv, self.c_res, self.c_spa, self.total]


def _as_batch_var(batch) -> Var:
    x = batch if isinstance(batch, Var) else Var(batch)
    if x.value.ndim < 2:
        raise ShapeMismatchError(
            f"batch must be [b, ...], got shape {x.value.shape}")
    return x


def _reconstruct(enc: Model, dec: Model, x: Var) -> tuple[Var, Var]:
    desc = enc(x)
    if desc.value.ndim != 2 or desc.value.shape[0] != x.value.shape[0]:
        raise ShapeMismatchError(
            f"encoder must map [b, ...] to [b, d], got {desc.value.shape}")
    recon = dec(desc)
    if recon.value.shape != x.value.shape:
        raise ShapeMismatchError(
            f"decoder output {recon.value.shape} != input {x.value.shape}")
    return desc, recon


def cost_ordinary(enc: Model, dec: Model, batch) -> Var:
    """Plain reconstruction error, summed over the batch."""
    x = _as_batch_var(batch)
    _, recon = _reconstruct(enc, dec, x)
    return sq_l2(sub(x, recon))


def _invariance_from(enc: Model, dec: Model, x: Var, recon: Var,
                     grid: TransformGrid) -> Var:
    n, b = len(grid), x.value.shape[0]
    shifted = concat0([shift2d(x, p) for p in grid])
    _, recon_shifted = _reconstruct(enc, dec, shifted)
    rs = reshape(recon_shifted, (n, b, -1))
    ro = reshape(recon, (1, b, -1))
    return sq_l2(sub(ro, rs))


def cost_invariance(enc: Model, dec: Model, batch,
                    grid: TransformGrid) -> Var:
    """Disagreement between restorations of an input and of its shifts."""
    x = _as_batch_var(batch)
    _, recon = _reconstruct(enc, dec, x)
    return _invariance_from(enc, dec, x, recon, grid)


def _restoration_from(batch: np.ndarray, recon: Var, grid: TransformGrid,
                      forced_indices=None) -> tuple[Var, list[int]]:
    b = batch.shape[0]
    targets = shift_stack(batch, grid)  # [n, b, ...]
    if forced_indices is None:
        with np.errstate(over="ignore"):  # inf residual still argmins fine
            diff = targets - recon.value[None]
            res = np.sum(diff.reshape(len(grid), b, -1) ** 2, axis=2)
        idx = np.argmin(res, axis=0)  # earliest index wins ties
    else:
        idx = np.asarray(forced_indices, dtype=int)
        if idx.shape != (b,):
            raise ShapeMismatchError(
                f"forced_indices must have shape ({b},), got {idx.shape}")
    selected = targets[idx, np.arange(b)]
    return sq_l2(sub(Var(selected), recon)), [int(i) for i in idx]


def cost_restoration(enc: Model, dec: Model, batch, grid: TransformGrid,
                     forced_indices=None) -> tuple[Var, list[int]]:
    """Reconstruction error relaxed over the grid: per-sample min_i.

    Returns the scalar node and the chosen transform index per sample.
    """
    x = _as_batch_var(batch)
    _, recon = _reconstruct(enc, dec, x)
    return _restoration_from(x.value, recon, grid, forced_indices)


def cost_sparsity(descriptors) -> Var:
    """Sum over rows of (l1/l2)^2; 1 for one-hot rows, d for uniform rows.

    The ratio squared is computed as l1^2 / sum-of-squares, which is exact
    at both extremes and differentiates cleanly.
    """
    d = descriptors if isinstance(descriptors, Var) else Var(descriptors)
    if d.value.ndim != 2:
        raise ShapeMismatchError(
            f"descriptors must be [b, d], got {d.value.shape}")
    norms = np.sqrt(np.sum(d.value * d.value, axis=1))
    if np.any(norms <= L2_NORM_EPSILON):
        worst = int(np.argmin(norms))
        raise DegenerateDescriptorError(
            f"descriptor {worst} has near-zero norm {norms[worst]:.3e}")
    l1 = sum_(abs_(d), axis=1)
    ssq = sum_(mul(d, d), axis=1)
    return sum_(div(mul(l1, l1), ssq))


def cost_total(enc: Model, dec: Model, batch, grid: TransformGrid,
               weights: LossWeights,
               forced_res_indices=None) -> tuple[Var, LossBreakdown]:
    """Weighted sum of invariance, relaxed restoration, and sparsity terms.

    One backward pass from the returned node yields gradients for all
    encoder and decoder parameters. Terms whose weight is zero are not
    evaluated (their breakdown entry reads 0); in particular the sparsity
    term's degenerate-descriptor check only applies when that term is in
    play.
    """
    x = _as_batch_var(batch)

    def tagged(component, build):
        try:
            return build()
        except NonFiniteValueError as e:
            raise NonFiniteValueError(f"{component}:{e.op}") from None

    desc, recon = tagged("forward", lambda: _reconstruct(enc, dec, x))
    total = None
    c_inv = c_res = c_spa = 0.0
    idx: list[int] = []
    if weights.lambda_res > 0:
        res_node, idx = tagged("c_res", lambda: _restoration_from(
            x.value, recon, grid, forced_res_indices))
        c_res = float(res_node.value)
        total = scale(res_node, weights.lambda_res)
    if weights.lambda_inv > 0:
        inv_node = tagged("c_inv", lambda: _invariance_from(
            enc, dec, x, recon, grid))
        c_inv = float(inv_node.value)
        term = scale(inv_node, weights.lambda_inv)
        total = term if total is None else total + term
    if weights.lambda_spa > 0:
        spa_node = tagged("c_spa", lambda: cost_sparsity(desc))
        c_spa = float(spa_node.value)
        total = total + scale(spa_node, weights.lambda_spa)
    breakdown = LossBreakdown(
        c_inv=c_inv, c_res=c_res, c_spa=c_spa,
        total=float(total.value), argmin_indices=idx)
    return total, breakdown


def param_inference_targets(enc: Model, dec: Model, batch: np.ndarray,
                            grid: TransformGrid) -> np.ndarray:
    """Brute-force shift targets [(dx, dy)] per sample, models frozen."""
    x = Var(np.asarray(batch, dtype=np.float64))
    _, recon = _reconstruct(enc, dec, x)
    idx, _ = best_shift_batch(x.value, recon.value, grid)
    return np.array([[grid[int(i)].dx, grid[int(i)].dy] for i in idx],
                    dtype=np.float64)


def cost_param_inference(reg: Model, enc: Model, dec: Model, batch,
                         grid: TransformGrid) -> Var:
    """Squared error of the regressor against brute-force shift targets.

    Targets are computed outside the graph from the frozen encoder/decoder,
    so backward from this node gives exactly zero for their parameters.
    """
    arr = batch.value if isinstance(batch, Var) else np.asarray(
        batch, dtype=np.float64)
    targets = param_inference_targets(enc, dec, arr, grid)
    pred = reg(Var(arr))
    if pred.value.shape != targets.shape:
        raise ShapeMismatchError(
            f"regressor output {pred.value.shape} != targets "
            f"{targets.shape} (expected [b, 2])")
    return sq_l2(sub(pred, Var(targets)))
