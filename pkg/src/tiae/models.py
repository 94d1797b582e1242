"""Model assemblies: digit-image encoder/decoder, shift regressor, generic
MLPs, JSON-described stacks, and a PCA baseline.

The digit models work on 1x32x32 inputs (28x28 sources are zero-padded at
load time). Encoder: conv 9x9 -> 16 channels, tanh, max-pool stride 2, then
dense 1500/150/30 with tanh between layers. Decoder: dense 150/1500/1024
with tanh between layers and a linear output reshaped to 1x32x32 (pixel
values unconstrained). With no conv padding the pooled feature map is
16*12*12 = 2304, which feeds the 1500-wide layer.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .layers import (
    Conv2d,
    Dense,
    Flatten,
    MaxPool2d,
    Reshape,
    Sequential,
    Tanh,
)
from .rng import SplitMix64

DIGIT_DESCRIPTOR_DIM = 30
DIGIT_IMAGE_SHAPE = (1, 32, 32)


class ModelConfigError(ValueError):
    pass


def build_model(layer_specs: list[dict], rng: SplitMix64) -> Sequential:
    """Build a Sequential from JSON-style layer descriptors.

    Kinds: conv2d (in_ch, out_ch, kernel, stride?, padding?),
    maxpool (window, stride), dense (in_dim, out_dim, bias?), tanh,
    flatten, reshape (shape).
    """
    layers = []
    for i, spec in enumerate(layer_specs):
        if not isinstance(spec, dict) or "kind" not in spec:
            raise ModelConfigError(f"layer {i}: expected an object with 'kind'")
        kind = spec["kind"]
        try:
            if kind == "conv2d":
                layers.append(Conv2d(
                    spec["in_ch"], spec["out_ch"], spec["kernel"], rng,
                    stride=spec.get("stride", 1),
                    padding=spec.get("padding", 0)))
            elif kind == "maxpool":
                layers.append(MaxPool2d(spec["window"], spec["stride"]))
            elif kind == "dense":
                layers.append(Dense(spec["in_dim"], spec["out_dim"], rng,
                                    bias=spec.get("bias", True)))
            elif kind == "tanh":
                layers.append(Tanh())
            elif kind == "flatten":
                layers.append(Flatten())
            elif kind == "reshape":
                layers.append(Reshape(spec["shape"]))
            else:
                raise ModelConfigError(f"layer {i}: unknown kind '{kind}'")
        except KeyError as e:
            raise ModelConfigError(
                f"layer {i} ({kind}): missing field {e.args[0]!r}") from None
    return Sequential(layers)


def mlp_spec(widths: list[int], flatten_input: bool = True,
             reshape_to: list[int] | None = None) -> list[dict]:
    """Dense stack with tanh between layers; linear final layer."""
    out: list[dict] = [{"kind": "flatten"}] if flatten_input else []
    for i, (a, b) in enumerate(zip(widths[:-1], widths[1:])):
        if i > 0:
            out.append({"kind": "tanh"})
        out.append({"kind": "dense", "in_dim": a, "out_dim": b})
    if reshape_to is not None:
        out.append({"kind": "reshape", "shape": list(reshape_to)})
    return out


def digit_encoder_spec() -> list[dict]:
    return [
        {"kind": "conv2d", "in_ch": 1, "out_ch": 16, "kernel": 9},
        {"kind": "tanh"},
        {"kind": "maxpool", "window": 2, "stride": 2},
        {"kind": "flatten"},
        {"kind": "dense", "in_dim": 16 * 12 * 12, "out_dim": 1500},
        {"kind": "tanh"},
        {"kind": "dense", "in_dim": 1500, "out_dim": 150},
        {"kind": "tanh"},
        {"kind": "dense", "in_dim": 150, "out_dim": DIGIT_DESCRIPTOR_DIM},
    ]


def digit_decoder_spec() -> list[dict]:
    return mlp_spec([DIGIT_DESCRIPTOR_DIM, 150, 1500, 1024],
                    flatten_input=False, reshape_to=list(DIGIT_IMAGE_SHAPE))


def shift_regressor_spec() -> list[dict]:
    # Paper only fixes "three-layer fully connected"; hidden widths are ours.
    return mlp_spec([1024, 256, 64, 2], flatten_input=True)


def mnist_encoder(rng: SplitMix64) -> Sequential:
    return build_model(digit_encoder_spec(), rng)


def mnist_decoder(rng: SplitMix64) -> Sequential:
    return build_model(digit_decoder_spec(), rng)


def shift_regressor(rng: SplitMix64) -> Sequential:
    return build_model(shift_regressor_spec(), rng)


@dataclass
class PcaModel:
    """Mean-centered top-k principal directions (orthonormal rows)."""

    mean: np.ndarray                       # [d]
    basis: np.ndarray                      # [k, d]
    explained_variance_ratio: np.ndarray   # [k]

    @property
    def k(self) -> int:
        return self.basis.shape[0]

    def encode(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        return (x - self.mean) @ self.basis.T

    def decode(self, z: np.ndarray) -> np.ndarray:
        z = np.asarray(z, dtype=np.float64)
        return z @ self.basis + self.mean


def pca_fit(samples: np.ndarray, k: int) -> PcaModel:
    """PCA via eigendecomposition of the sample covariance.

    Eigenvector signs are fixed deterministically (largest-magnitude
    component made positive). Directions with vanishing variance are
    truncated, so the returned basis may have fewer than k rows on
    rank-deficient data.
    """
    x = np.asarray(samples, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError(f"samples must be [n, d], got {x.shape}")
    n, d = x.shape
    if n < 2:
        raise ValueError("pca_fit needs at least 2 samples")
    if k < 1 or k > min(n, d):
        raise ValueError(f"k={k} out of range 1..{min(n, d)}")
    mean = x.mean(axis=0)
    centered = x - mean
    cov = centered.T @ centered / (n - 1)
    eigvals, eigvecs = np.linalg.eigh(cov)
    order = np.argsort(eigvals)[::-1]
    eigvals = np.clip(eigvals[order], 0.0, None)
    eigvecs = eigvecs[:, order]
    keep = min(k, int(np.sum(eigvals > 1e-12 * max(eigvals[0], 1e-300))))
    keep = max(keep, 1)
    basis = eigvecs[:, :keep].T.copy()
    for row in basis:
        if row[np.argmax(np.abs(row))] < 0:
            row *= -1.0
    total = float(eigvals.sum())
    ratios = eigvals[:keep] / total if total > 0 else np.zeros(keep)
    return PcaModel(mean=mean, basis=basis, explained_variance_ratio=ratios)
