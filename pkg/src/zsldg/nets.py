"""The five learnable functions: visual encoder f, semantic encoder g,
semantic projection h, and the two conditional critics."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import ShapeError, Tensor, concat, mlp_forward, reshape


@dataclass(frozen=True)
class Spaces:
    """Dimensions of the visual, semantic, latent and noise spaces."""
    visual_dim: int = 32
    semantic_dim: int = 16
    latent_dim: int = 32
    noise_dim: int = 16

    def __post_init__(self):
        for name in ("visual_dim", "semantic_dim", "latent_dim"):
            if getattr(self, name) <= 0:
                raise ValueError("%s must be positive" % name)
        if self.noise_dim < 0:
            raise ValueError("noise_dim must be non-negative")


HIDDEN = 256


def _init_layers(widths, rng):
    # Glorot-uniform weights, zero biases
    layers = []
    for fan_in, fan_out in zip(widths[:-1], widths[1:]):
        a = np.sqrt(6.0 / (fan_in + fan_out))
        w = Tensor(rng.uniform(-a, a, size=(fan_in, fan_out)))
        b = Tensor(np.zeros(fan_out))
        layers.append((w, b))
    return layers


class ModelParams:
    """Parameter container for f, g, h, D1, D2.

    Each net is a list of (W, b) Tensor pairs.  f and g use relu hidden
    layers; D1/D2 use tanh hidden layers (smooth, so the gradient
    penalty is twice differentiable) and a linear unbounded head.
    """

    def __init__(self, spaces, rng, hidden=HIDDEN):
        self.spaces = spaces
        self.hidden = hidden
        s = spaces
        self.f = _init_layers([s.visual_dim, hidden, s.latent_dim], rng)
        self.g = _init_layers([s.noise_dim + s.semantic_dim, hidden, s.latent_dim], rng)
        self.h = _init_layers([s.latent_dim, s.semantic_dim], rng)
        self.d1 = _init_layers([s.latent_dim + s.semantic_dim, hidden, 1], rng)
        self.d2 = _init_layers([s.latent_dim + s.semantic_dim, hidden, 1], rng)

    def net_tensors(self, name):
        return [t for pair in getattr(self, name) for t in pair]

    def all_tensors(self):
        out = []
        for name in ("f", "g", "h", "d1", "d2"):
            out.extend(self.net_tensors(name))
        return out

    def generator_tensors(self):
        return self.net_tensors("f") + self.net_tensors("g") + self.net_tensors("h")


def _as_batch(x):
    x = x if isinstance(x, Tensor) else Tensor(x)
    if x.data.ndim == 1:
        return reshape(x, (1, x.shape[0])), True
    return x, False


def encode_visual(params, x):
    """z_v = f(x); accepts a single vector or a batch of rows."""
    x, single = _as_batch(x)
    if x.shape[1] != params.spaces.visual_dim:
        raise ShapeError("visual input width %d, expected %d"
                         % (x.shape[1], params.spaces.visual_dim))
    hid = mlp_forward(params.f[:-1], x, "relu")
    w, b = params.f[-1]
    z = hid @ w + b
    return _maybe_squeeze(z, single)


def encode_semantic(params, noise, a):
    """z_a = g([n ; a_y]) with the noise vector an explicit argument."""
    noise = noise if isinstance(noise, Tensor) else Tensor(noise)
    a, single = _as_batch(a)
    if noise.data.ndim == 1:
        noise = reshape(noise, (1, noise.shape[0]))
    if noise.shape[1] != params.spaces.noise_dim:
        raise ShapeError("noise width %d, expected %d"
                         % (noise.shape[1], params.spaces.noise_dim))
    if a.shape[1] != params.spaces.semantic_dim:
        raise ShapeError("semantic width %d, expected %d"
                         % (a.shape[1], params.spaces.semantic_dim))
    inp = concat([noise, a], axis=1) if params.spaces.noise_dim > 0 else a
    hid = mlp_forward(params.g[:-1], inp, "relu")
    w, b = params.g[-1]
    return _maybe_squeeze(hid @ w + b, single)


def project(params, z):
    """Semantic projection h(z): latent -> semantic space, linear."""
    z, single = _as_batch(z)
    if z.shape[1] != params.spaces.latent_dim:
        raise ShapeError("latent width %d, expected %d"
                         % (z.shape[1], params.spaces.latent_dim))
    w, b = params.h[0]
    return _maybe_squeeze(z @ w + b, single)


def discriminate(layers, z, a):
    """Critic score on [z ; a]; unbounded real output, shape (B, 1)."""
    z = z if isinstance(z, Tensor) else Tensor(z)
    a = a if isinstance(a, Tensor) else Tensor(a)
    inp = concat([z, a], axis=1)
    hid = mlp_forward(layers[:-1], inp, "tanh")
    w, b = layers[-1]
    return hid @ w + b


def _maybe_squeeze(t, single):
    if single:
        return reshape(t, (t.shape[1],))
    return t
