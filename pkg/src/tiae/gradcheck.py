"""Central finite-difference oracles for gradient verification.

These evaluate losses forward-only, so they are independent of the
reverse-mode machinery they are used to check.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .autodiff import Var


def central_difference(fn: Callable[[np.ndarray], float], x: np.ndarray,
                       h: float = 1e-5) -> np.ndarray:
    """Gradient of scalar fn at x, one central difference per component."""
    x = np.asarray(x, dtype=np.float64)
    grad = np.empty(x.size)
    flat = x.ravel().copy()
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = fn(flat.reshape(x.shape))
        flat[i] = orig - h
        fm = fn(flat.reshape(x.shape))
        flat[i] = orig
        grad[i] = (fp - fm) / (2.0 * h)
    return grad.reshape(x.shape)


def max_relative_error(a: np.ndarray, b: np.ndarray,
                       floor: float = 1e-6) -> float:
    """max |a-b| / max(|a|, |b|, floor); the floor keeps near-zero
    components from turning finite-difference noise into spurious error."""
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
    return float(np.max(np.abs(a - b) / denom)) if a.size else 0.0


def _flat_of(params: Sequence[Var]) -> np.ndarray:
    return np.concatenate([p.value.ravel() for p in params])


def _set_flat(params: Sequence[Var], flat: np.ndarray) -> None:
    offset = 0
    for p in params:
        n = p.value.size
        p.value = flat[offset:offset + n].reshape(p.value.shape).copy()
        offset += n


def fd_gradient_wrt_params(loss_fn: Callable[[], float],
                           params: Sequence[Var],
                           h: float = 1e-5) -> np.ndarray:
    """Central differences of loss_fn over every component of `params`.

    Perturbs the parameters in place and restores them afterwards.
    """
    base = _flat_of(params)
    grad = np.empty(base.size)
    work = base.copy()
    for i in range(base.size):
        work[i] = base[i] + h
        _set_flat(params, work)
        fp = loss_fn()
        work[i] = base[i] - h
        _set_flat(params, work)
        fm = loss_fn()
        work[i] = base[i]
        grad[i] = (fp - fm) / (2.0 * h)
    _set_flat(params, base)
    return grad
