"""Finite-difference verification suite for every training objective.

Runs each loss on small tanh networks at random parameter points and
compares analytic gradients (w.r.t. all participating parameters) with
central differences.  Used by the CLI gradcheck command and the
acceptance tests.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, finite_diff_check, mlp_forward
from .losses import (BatchEmbeds, Hyper, compat_loss, loss_align, loss_center,
                     loss_cls, loss_d1, loss_d2, loss_gen)
from .nets import ModelParams, Spaces, project

SMALL = Spaces(visual_dim=3, semantic_dim=3, latent_dim=3, noise_dim=2)
BATCH = 4
CLASSES = 3


def _flatten(tensors):
    return np.concatenate([t.data.ravel() for t in tensors])


def _tanh_net(layers, x):
    hid = mlp_forward(layers[:-1], x, "tanh")
    w, b = layers[-1]
    return hid @ w + b


class _Point:
    """One random evaluation point: tiny model, batch, hyper, rng seed."""

    def __init__(self, seed):
        rng = np.random.default_rng(seed)
        self.params = ModelParams(SMALL, rng, hidden=4)
        self.x = rng.normal(size=(BATCH, SMALL.visual_dim))
        self.noise = rng.normal(size=(BATCH, SMALL.noise_dim))
        self.a_table = Tensor(rng.normal(size=(CLASSES, SMALL.semantic_dim)))
        self.y = rng.integers(0, CLASSES, size=BATCH)
        self.centers = Tensor(rng.normal(size=(CLASSES, SMALL.latent_dim)))
        self.hyper = Hyper(lam=2.0, delta=0.7, alpha=0.4, gamma=0.9)
        self.eta_seed = int(rng.integers(1 << 30))

    def flat_point(self, nets):
        return _flatten([t for n in nets for t in self.params.net_tensors(n)])

    def rebuilt(self, flat, nets):
        """Params with the nets in `nets` carved differentiably out of the
        1-D tensor `flat`; remaining nets keep their original tensors."""
        flat = flat if isinstance(flat, Tensor) else Tensor(flat)
        params = ModelParams.__new__(ModelParams)
        params.spaces = self.params.spaces
        params.hidden = self.params.hidden
        off = 0
        for name in ("f", "g", "h", "d1", "d2"):
            if name not in nets:
                setattr(params, name, getattr(self.params, name))
                continue
            layers = []
            for w, b in getattr(self.params, name):
                nw, nb = w.data.size, b.data.size
                wt = ad.reshape(ad.narrow(flat, 0, off, nw), w.shape)
                bt = ad.reshape(ad.narrow(flat, 0, off + nw, nb), b.shape)
                off += nw + nb
                layers.append((wt, bt))
            setattr(params, name, layers)
        return params

    def embeds(self, params):
        # tanh encoders keep every loss twice differentiable for the check
        z_v = _tanh_net(params.f, Tensor(self.x))
        a_y = ad.take_rows(self.a_table, self.y)
        z_a = _tanh_net(params.g, ad.concat([Tensor(self.noise), a_y], axis=1))
        a_hat = project(params, z_a)
        return BatchEmbeds(z_v, z_a, a_y, a_hat, self.y)


def _loss_fns():
    def d1(pt, params):
        rng = np.random.default_rng(pt.eta_seed)
        return loss_d1(params, pt.embeds(params), pt.hyper, rng)[0]

    def align(pt, params):
        return loss_align(params, pt.embeds(params), pt.a_table)[0]

    def lv(pt, params):
        b = pt.embeds(params)
        return compat_loss(project(params, b.z_v), pt.a_table, b.y)

    def ls(pt, params):
        b = pt.embeds(params)
        return compat_loss(project(params, b.z_a), pt.a_table, b.y)

    def center(pt, params):
        return loss_center(pt.embeds(params), pt.centers, pt.hyper)

    def d2(pt, params):
        rng = np.random.default_rng(pt.eta_seed)
        return loss_d2(params, pt.embeds(params), pt.hyper, rng)[0]

    def cls(pt, params):
        return loss_cls(params, pt.embeds(params), pt.a_table, pt.hyper)

    def gen(pt, params):
        return loss_gen(params, pt.embeds(params), pt.hyper)

    return [
        ("L_D1", d1, ("f", "g", "d1")),
        ("L_align", align, ("f", "g", "h")),
        ("L_V", lv, ("f", "h")),
        ("L_S", ls, ("g", "h")),
        ("L_center", center, ("f", "g")),
        ("L_D2", d2, ("f", "g", "h", "d2")),
        ("L_cls", cls, ("g", "h", "d2")),
        ("L_gen", gen, ("f", "g", "d2")),
    ]


def run_gradient_suite(seed=0, points=20, eps=1e-4, tol=1e-4):
    """Check every loss at `points` random parameter points.

    Returns a list of (loss name, max relative error, passed) triples.
    """
    results = []
    for name, fn, nets in _loss_fns():
        worst = 0.0
        for k in range(points):
            pt = _Point(seed * 1000 + k)
            err = finite_diff_check(
                lambda t, pt=pt: fn(pt, pt.rebuilt(t, nets)),
                pt.flat_point(nets), eps=eps)
            worst = max(worst, err)
        results.append((name, worst, worst <= tol))
    return results
