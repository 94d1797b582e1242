import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from tiae.layers import (
    Conv2d,
    Dense,
    Flatten,
    MaxPool2d,
    Reshape,
    Sequential,
    Tanh,
)
from tiae.rng import SplitMix64

settings.register_profile(
    "tiae", deadline=None, max_examples=25,
    suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("tiae")


def toy_autoencoder(seed=7, canvas=8, descriptor=6):
    """Small conv encoder + dense decoder (~1.3k params) on a canvas**2
    image; used by gradient checks and loss tests."""
    rng = SplitMix64(seed)
    half = canvas // 2 - 1  # conv k3 then pool 2
    feat = 2 * half * half
    enc = Sequential([
        Conv2d(1, 2, 3, rng), Tanh(), MaxPool2d(2, 2), Flatten(),
        Dense(feat, descriptor, rng),
    ])
    dec = Sequential([
        Dense(descriptor, 16, rng), Tanh(),
        Dense(16, canvas * canvas, rng), Reshape((1, canvas, canvas)),
    ])
    return enc, dec


def toy_regressor(seed=11, canvas=8):
    rng = SplitMix64(seed)
    return Sequential([Flatten(), Dense(canvas * canvas, 8, rng), Tanh(),
                       Dense(8, 2, rng)])


def random_batch(seed, b, canvas=8, lo=-1.0, hi=1.0):
    rng = SplitMix64(seed)
    return rng.uniform_array(lo, hi, b * canvas * canvas).reshape(
        b, 1, canvas, canvas)


@pytest.fixture
def toy_models():
    return toy_autoencoder()


def identity_autoencoder(canvas=6):
    """Encoder/decoder pair computing the exact identity map."""
    rng = SplitMix64(0)
    n = canvas * canvas
    enc = Sequential([Flatten(), Dense(n, n, rng)])
    dec = Sequential([Dense(n, n, rng), Reshape((1, canvas, canvas))])
    for m in (enc, dec):
        for layer in m.layers:
            if isinstance(layer, Dense):
                layer.weight.value = np.eye(n)
                layer.bias.value = np.zeros(n)
    return enc, dec
