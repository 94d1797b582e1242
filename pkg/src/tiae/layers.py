"""Neural building blocks: 2-D convolution, max pooling, dense, tanh.

Layers hold their parameters as autodiff leaves and build graph nodes when
called, so one Sequential serves both training (graph forward + backward)
and frozen evaluation (forward value only). Convolution is cross-correlation
(no kernel flip). Weights initialize Glorot-uniform, biases zero.

Checkpoint format: a single file per model holding a compact JSON header
(parameter names, shapes, byte offsets into the payload) terminated by one
newline, followed by all parameter data as a flat little-endian float64
stream. Offsets count from the first payload byte.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Sequence

import numpy as np

from . import autodiff
from .autodiff import ShapeMismatchError, Var
from .rng import SplitMix64


def glorot_uniform(rng: SplitMix64, shape: tuple[int, ...],
                   fan_in: int, fan_out: int) -> np.ndarray:
    bound = float(np.sqrt(6.0 / (fan_in + fan_out)))
    n = int(np.prod(shape))
    return rng.uniform_array(-bound, bound, n).reshape(shape)


class Layer:
    """Base: a callable Var -> Var with named parameters."""

    def params(self) -> list[tuple[str, Var]]:
        return []

    def __call__(self, x: Var) -> Var:
        raise NotImplementedError


class Tanh(Layer):
    def __call__(self, x: Var) -> Var:
        return autodiff.tanh(x)


class Flatten(Layer):
    """[b, ...] -> [b, prod(...)]."""

    def __call__(self, x: Var) -> Var:
        b = x.value.shape[0]
        return autodiff.reshape(x, (b, -1))


class Reshape(Layer):
    """[b, n] -> [b, *shape]."""

    def __init__(self, shape: Sequence[int]):
        self.shape = tuple(int(s) for s in shape)

    def __call__(self, x: Var) -> Var:
        return autodiff.reshape(x, (x.value.shape[0], *self.shape))


class Dense(Layer):
    """y = x @ W.T + b with W of shape [out, in]."""

    def __init__(self, in_dim: int, out_dim: int, rng: SplitMix64,
                 bias: bool = True):
        self.in_dim = int(in_dim)
        self.out_dim = int(out_dim)
        self.weight = Var(glorot_uniform(rng, (out_dim, in_dim),
                                         in_dim, out_dim))
        self.bias = Var(np.zeros(out_dim)) if bias else None

    def params(self):
        out = [("weight", self.weight)]
        if self.bias is not None:
            out.append(("bias", self.bias))
        return out

    def __call__(self, x: Var) -> Var:
        if x.value.ndim != 2 or x.value.shape[1] != self.in_dim:
            raise ShapeMismatchError(
                f"dense expects [b, {self.in_dim}], got {x.value.shape}")
        y = autodiff.matmul(x, autodiff.transpose(self.weight))
        if self.bias is not None:
            y = autodiff.add(y, self.bias)
        return y


def _conv_out_extent(n: int, k: int, stride: int, pad: int) -> int:
    return (n + 2 * pad - k) // stride + 1


def _im2col(xp: np.ndarray, kh: int, kw: int, stride: int,
            oh: int, ow: int) -> np.ndarray:
    """Gather padded input [b,c,H,W] into columns [c*kh*kw, b*oh*ow]."""
    b, c = xp.shape[0], xp.shape[1]
    cols = np.empty((c, kh, kw, b, oh, ow), dtype=xp.dtype)
    for ki in range(kh):
        for kj in range(kw):
            patch = xp[:, :, ki:ki + stride * oh:stride,
                       kj:kj + stride * ow:stride]
            cols[:, ki, kj] = patch.transpose(1, 0, 2, 3)
    return cols.reshape(c * kh * kw, b * oh * ow)


def _col2im(dcols: np.ndarray, b: int, c: int, hp: int, wp: int,
            kh: int, kw: int, stride: int, oh: int, ow: int) -> np.ndarray:
    """Adjoint of _im2col: scatter-add columns back onto the padded image."""
    dxp = np.zeros((b, c, hp, wp))
    d6 = dcols.reshape(c, kh, kw, b, oh, ow)
    for ki in range(kh):
        for kj in range(kw):
            dxp[:, :, ki:ki + stride * oh:stride,
                kj:kj + stride * ow:stride] += d6[:, ki, kj].transpose(1, 0, 2, 3)
    return dxp


class Conv2d(Layer):
    """Cross-correlation over [b, in_ch, h, w] with bias per out channel."""

    def __init__(self, in_ch: int, out_ch: int, kernel: int,
                 rng: SplitMix64, stride: int = 1, padding: int = 0):
        if stride < 1 or padding < 0:
            raise ValueError("stride must be >= 1 and padding >= 0")
        self.in_ch, self.out_ch = int(in_ch), int(out_ch)
        self.kh = self.kw = int(kernel)
        self.stride, self.padding = int(stride), int(padding)
        fan_in = in_ch * self.kh * self.kw
        fan_out = out_ch * self.kh * self.kw
        self.kernel = Var(glorot_uniform(
            rng, (out_ch, in_ch, self.kh, self.kw), fan_in, fan_out))
        self.bias = Var(np.zeros(out_ch))

    def params(self):
        return [("kernel", self.kernel), ("bias", self.bias)]

    def __call__(self, x: Var) -> Var:
        if x.value.ndim != 4 or x.value.shape[1] != self.in_ch:
            raise ShapeMismatchError(
                f"conv2d expects [b, {self.in_ch}, h, w], got {x.value.shape}")
        b, _, h, w = x.value.shape
        kh, kw, s, p = self.kh, self.kw, self.stride, self.padding
        oh = _conv_out_extent(h, kh, s, p)
        ow = _conv_out_extent(w, kw, s, p)
        if oh < 1 or ow < 1:
            raise ShapeMismatchError(
                f"conv2d output extent < 1 for input {h}x{w}, kernel {kh}")
        kernel, bias = self.kernel, self.bias

        def pad_input(arr):
            if p == 0:
                return arr
            return np.pad(arr, ((0, 0), (0, 0), (p, p), (p, p)))

        xp = pad_input(x.value)
        cols = _im2col(xp, kh, kw, s, oh, ow)
        w_flat = kernel.value.reshape(self.out_ch, -1)
        out = (w_flat @ cols).reshape(self.out_ch, b, oh, ow)
        out = out.transpose(1, 0, 2, 3) + bias.value[None, :, None, None]

        # Columns are rebuilt inside the vjps instead of captured, which
        # keeps large-batch graphs from pinning the im2col buffer.
        def vjp_x(g):
            g2 = g.transpose(1, 0, 2, 3).reshape(self.out_ch, b * oh * ow)
            dcols = w_flat.T @ g2
            dxp = _col2im(dcols, b, self.in_ch, xp.shape[2], xp.shape[3],
                          kh, kw, s, oh, ow)
            if p == 0:
                return dxp
            return dxp[:, :, p:-p, p:-p]

        def vjp_kernel(g):
            g2 = g.transpose(1, 0, 2, 3).reshape(self.out_ch, b * oh * ow)
            cols_again = _im2col(pad_input(x.value), kh, kw, s, oh, ow)
            return (g2 @ cols_again.T).reshape(kernel.value.shape)

        def vjp_bias(g):
            return g.sum(axis=(0, 2, 3))

        return Var(out, parents=(x, kernel, bias),
                   vjps=(vjp_x, vjp_kernel, vjp_bias), op="conv2d")


class MaxPool2d(Layer):
    """Windowed max; gradient routes to the argmax (first index on ties)."""

    def __init__(self, window: int, stride: int):
        if window < 1 or stride < 1:
            raise ValueError("window and stride must be >= 1")
        self.window, self.stride = int(window), int(stride)

    def __call__(self, x: Var) -> Var:
        if x.value.ndim != 4:
            raise ShapeMismatchError(
                f"maxpool expects [b, c, h, w], got {x.value.shape}")
        b, c, h, w = x.value.shape
        k, s = self.window, self.stride
        if k > h or k > w:
            raise ShapeMismatchError(
                f"pool window {k} exceeds spatial extent {h}x{w}")
        oh = (h - k) // s + 1
        ow = (w - k) // s + 1
        windows = np.lib.stride_tricks.sliding_window_view(
            x.value, (k, k), axis=(2, 3))[:, :, ::s, ::s]
        flat = windows.reshape(b, c, oh, ow, k * k)
        arg = np.argmax(flat, axis=4)
        out = np.take_along_axis(flat, arg[..., None], axis=4)[..., 0]

        # Flat input index of each window's argmax, for the scatter.
        wi = arg // k
        wj = arg % k
        rows = (np.arange(oh) * s)[None, None, :, None] + wi
        colsx = (np.arange(ow) * s)[None, None, None, :] + wj
        base = (np.arange(b)[:, None, None, None] * c
                + np.arange(c)[None, :, None, None]) * (h * w)
        flat_idx = base + rows * w + colsx

        def vjp(g):
            dx = np.zeros(b * c * h * w)
            if s >= k:
                # windows are disjoint: each input cell written at most once
                dx[flat_idx.ravel()] = g.ravel()
            else:
                np.add.at(dx, flat_idx.ravel(), g.ravel())
            return dx.reshape(b, c, h, w)

        return Var(out, parents=(x,), vjps=(vjp,), op="maxpool")


class Sequential:
    """Ordered layer stack; the model objects used across the project."""

    def __init__(self, layers: Sequence[Layer]):
        self.layers = list(layers)

    def __call__(self, x: Var) -> Var:
        for layer in self.layers:
            x = layer(x)
        return x

    def predict(self, x: np.ndarray, chunk: int | None = None) -> np.ndarray:
        """Forward pass on plain arrays (no gradient use).

        `chunk` bounds the rows evaluated at once, which keeps conv im2col
        buffers small on large datasets.
        """
        x = np.asarray(x, dtype=np.float64)
        if chunk is None or len(x) <= chunk:
            return self(Var(x)).value
        parts = [self(Var(x[i:i + chunk])).value
                 for i in range(0, len(x), chunk)]
        return np.concatenate(parts, axis=0)

    def params(self) -> list[tuple[str, Var]]:
        out = []
        for i, layer in enumerate(self.layers):
            for name, var in layer.params():
                out.append((f"layer{i:02d}.{type(layer).__name__.lower()}.{name}",
                            var))
        return out

    def param_vars(self) -> list[Var]:
        return [v for _, v in self.params()]

    def num_params(self) -> int:
        return sum(v.value.size for v in self.param_vars())

    def get_flat_params(self) -> np.ndarray:
        vs = self.param_vars()
        if not vs:
            return np.zeros(0)
        return np.concatenate([v.value.ravel() for v in vs])

    def set_flat_params(self, flat: np.ndarray) -> None:
        flat = np.asarray(flat, dtype=np.float64)
        if flat.size != self.num_params():
            raise ShapeMismatchError(
                f"expected {self.num_params()} params, got {flat.size}")
        offset = 0
        for v in self.param_vars():
            n = v.value.size
            v.value = flat[offset:offset + n].reshape(v.value.shape).copy()
            offset += n


def save_params(model: Sequential, path: str | Path) -> None:
    """Write the checkpoint format described in the module docstring."""
    entries = []
    payload = bytearray()
    for name, var in model.params():
        data = np.ascontiguousarray(var.value, dtype="<f8").tobytes()
        entries.append({"name": name, "shape": list(var.value.shape),
                        "offset": len(payload)})
        payload.extend(data)
    header = json.dumps({"format": "tiae-params-v1", "params": entries},
                        sort_keys=True, separators=(",", ":"))
    with open(path, "wb") as f:
        f.write(header.encode("utf-8"))
        f.write(b"\n")
        f.write(bytes(payload))


def load_params(model: Sequential, path: str | Path) -> None:
    """Load a checkpoint into `model`; names and shapes must match exactly."""
    with open(path, "rb") as f:
        header_line = f.readline()
        payload = f.read()
    header = json.loads(header_line.decode("utf-8"))
    if header.get("format") != "tiae-params-v1":
        raise ValueError(f"{path}: not a tiae parameter file")
    by_name = {e["name"]: e for e in header["params"]}
    model_params = model.params()
    if set(by_name) != {name for name, _ in model_params}:
        raise ValueError(
            f"{path}: parameter names do not match the model "
            f"(file has {sorted(by_name)})")
    for name, var in model_params:
        e = by_name[name]
        if list(var.value.shape) != e["shape"]:
            raise ValueError(
                f"{path}: shape mismatch for {name}: "
                f"file {e['shape']} vs model {list(var.value.shape)}")
        n = var.value.size
        raw = payload[e["offset"]:e["offset"] + 8 * n]
        if len(raw) != 8 * n:
            raise ValueError(f"{path}: truncated payload for {name}")
        var.value = np.frombuffer(raw, dtype="<f8").reshape(
            var.value.shape).astype(np.float64)
