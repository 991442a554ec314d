"""Training objectives: conditional Wasserstein critic losses with gradient
penalties, compatibility (projection) classification losses, the multimodal
center loss with its explicit center-update rule, the triple-adversarial
critic game, and their ablation-masked composition."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, backward, concat, tmean, tsum
from .nets import discriminate, project


class CenterError(Exception):
    pass


@dataclass
class Hyper:
    """Weighting coefficients and schedule knobs.

    beta is derived as 1 - alpha so the triple-critic coefficient
    identity (1 - alpha - beta = 0) holds exactly.
    """
    lam: float = 10.0       # gradient-penalty weight
    delta: float = 0.5      # center-loss weight
    alpha: float = 0.5      # triple-critic mixing; beta = 1 - alpha
    gamma: float = 1.0      # classification weight in the projector loss
    kappa: float = 0.5      # center update rate
    critic_ratio: int = 5

    def __post_init__(self):
        if min(self.lam, self.delta, self.gamma, self.kappa) <= 0:
            raise ValueError("lam, delta, gamma, kappa must be positive")
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("alpha must lie in [0, 1]")
        if self.critic_ratio < 1:
            raise ValueError("critic_ratio must be >= 1")

    @property
    def beta(self):
        return 1.0 - self.alpha


@dataclass
class BatchEmbeds:
    """One batch in the latent space.

    Labels are dense seen-class indices (0..S-1) matching the rows of
    the seen-class semantic table and the center table.
    """
    z_v: Tensor          # (B, L) visual embeddings
    z_a: Tensor          # (B, L) semantic embeddings
    a_y: Tensor          # (B, A) true semantic vectors
    a_hat: Tensor        # (B, A) projected semantics h(z_a)
    y: np.ndarray        # (B,) seen-class indices
    d: np.ndarray = field(default=None)  # (B,) domain labels, optional

    def __post_init__(self):
        n = self.z_v.shape[0]
        if not (self.z_a.shape[0] == self.a_y.shape[0]
                == self.a_hat.shape[0] == len(self.y) == n):
            raise ValueError("batch fields disagree on length")

    def detached(self):
        return BatchEmbeds(self.z_v.detach(), self.z_a.detach(),
                           self.a_y.detach(), self.a_hat, self.y, self.d)


def interpolate(p, q, eta):
    """Convex combination eta*p + (1-eta)*q; eta is scalar or (B, 1)."""
    eta = eta if isinstance(eta, Tensor) else Tensor(eta)
    if p.shape != q.shape:
        raise ad.ShapeError("interpolate endpoints differ: %s vs %s"
                            % (p.shape, q.shape))
    return eta * p + (1.0 - eta) * q


def gradient_penalty(scores, inputs):
    """Mean over the batch of (joint gradient L2 norm - 1)^2.

    `scores` is the (B, 1) critic output; `inputs` lists the tensors the
    norm is taken over (their per-row gradients are concatenated).
    Conditioning tensors simply stay out of `inputs`.
    """
    grads = backward(tsum(scores), list(inputs))
    joint = grads[0] if len(grads) == 1 else concat(grads, axis=1)
    norms = ad.sqrt(tsum(joint * joint, axis=1))
    return tmean((norms - 1.0) ** 2)


def _scores(layers, z, a):
    return discriminate(layers, z, a)


def loss_d1(params, batch, hyper, rng):
    """Conditional Wasserstein critic objective for the alignment game.

    E[D1(z_v, a)] - E[D1(z_a, a)] - lam * penalty at the per-row convex
    combination of z_v and z_a.  The trainer ascends this in D1's
    parameters.  Returns (loss, parts).
    """
    real = tmean(_scores(params.d1, batch.z_v, batch.a_y))
    fake = tmean(_scores(params.d1, batch.z_a, batch.a_y))
    eta = rng.uniform(size=(batch.z_v.shape[0], 1))
    z_t = interpolate(batch.z_v, batch.z_a, eta)
    pen = gradient_penalty(_scores(params.d1, z_t, batch.a_y), [z_t])
    loss = real - fake - hyper.lam * pen
    return loss, {"d1_real": real.item(), "d1_fake": fake.item(),
                  "d1_penalty": pen.item()}


def compat_loss(h_out, a_table, y):
    """Softmax cross-entropy of dot-product compatibility scores.

    Logits are <h(z), a_c> over all seen classes; the loss is the mean
    negative log probability of the true class.
    """
    y = np.asarray(y)
    if y.min(initial=0) < 0 or y.max(initial=-1) >= a_table.shape[0]:
        raise CenterError("label outside the seen-class table")
    logits = h_out @ ad.transpose(a_table)
    shift = Tensor(logits.data.max(axis=1, keepdims=True))  # stability only
    shifted = logits - shift
    lse = ad.log(tsum(ad.exp(shifted), axis=1))
    return tmean(lse - ad.pick(shifted, y))


def compat_losses(params, batch, a_table):
    """(L on h(z_v), L on h(z_a)) against the seen-class table."""
    lv = compat_loss(project(params, batch.z_v), a_table, batch.y)
    ls = compat_loss(project(params, batch.z_a), a_table, batch.y)
    return lv, ls


def loss_align(params, batch, a_table):
    """Alignment objective the encoders/projector descend: Wasserstein gap
    plus both compatibility losses.  Returns (loss, parts)."""
    real = tmean(_scores(params.d1, batch.z_v, batch.a_y))
    fake = tmean(_scores(params.d1, batch.z_a, batch.a_y))
    lv, ls = compat_losses(params, batch, a_table)
    loss = real - fake + lv + ls
    return loss, {"v": lv.item(), "s": ls.item()}


def loss_center(batch, centers, hyper):
    """delta * (E||z_v - c_y||^2 + E||z_a - c_y||^2), batch means."""
    centers = centers if isinstance(centers, Tensor) else Tensor(centers)
    y = np.asarray(batch.y)
    if y.max(initial=-1) >= centers.shape[0] or y.min(initial=0) < 0:
        raise CenterError("batch label has no center")
    c = ad.take_rows(centers, y)
    dv = batch.z_v - c
    da = batch.z_a - c
    return hyper.delta * (tmean(tsum(dv * dv, axis=1))
                          + tmean(tsum(da * da, axis=1)))


def center_update(batch, centers, kappa):
    """Explicit center rule: for each class present in the batch,
    delta_c = mean_cls(c - z_v) + mean_cls(c - z_a); c <- c - kappa*delta_c.

    Returns a new center array; absent classes are untouched.
    """
    if not 0.0 < kappa <= 1.0:
        raise ValueError("kappa must lie in (0, 1]")
    centers = np.array(centers, dtype=np.float64, copy=True)
    z_v = batch.z_v.data
    z_a = batch.z_a.data
    y = np.asarray(batch.y)
    for cls in np.unique(y):
        rows = y == cls
        delta = ((centers[cls] - z_v[rows]).mean(axis=0)
                 + (centers[cls] - z_a[rows]).mean(axis=0))
        centers[cls] = centers[cls] - kappa * delta
    return centers


def loss_d2(params, batch, hyper, rng):
    """Triple-adversarial critic objective.

    (z_a, a_y) plays real; (z_a, a_hat) and (z_v, a_y) play fake with
    weights alpha and beta; the penalty is taken over the joint gradient
    w.r.t. both interpolated arguments.  Ascended in D2's parameters.
    Returns (loss, parts).
    """
    a, b = hyper.alpha, hyper.beta
    real = tmean(_scores(params.d2, batch.z_a, batch.a_y))
    fake_h = tmean(_scores(params.d2, batch.z_a, batch.a_hat))
    fake_v = tmean(_scores(params.d2, batch.z_v, batch.a_y))
    eta = rng.uniform(size=(batch.z_v.shape[0], 1))
    z_mix = a * batch.z_a + b * batch.z_v
    a_mix = a * batch.a_hat + b * batch.a_y
    z_t = interpolate(batch.z_a, z_mix, eta)
    a_t = interpolate(batch.a_y, a_mix, eta)
    pen = gradient_penalty(_scores(params.d2, z_t, a_t), [z_t, a_t])
    loss = real - a * fake_h - b * fake_v - hyper.lam * pen
    return loss, {"d2_real": real.item(), "d2_fake_h": fake_h.item(),
                  "d2_fake_v": fake_v.item(), "d2_penalty": pen.item()}


def loss_cls(params, batch, a_table, hyper):
    """Projector objective: -alpha * E[p_h(y|z_a) * D2(z_a, a_hat)]
    plus gamma times both compatibility losses."""
    logits = project(params, batch.z_a) @ ad.transpose(a_table)
    shift = Tensor(logits.data.max(axis=1, keepdims=True))
    e = ad.exp(logits - shift)
    probs = e / ad.reshape(tsum(e, axis=1), (e.shape[0], 1))
    p_true = ad.pick(probs, batch.y)
    d2_scores = _scores(params.d2, batch.z_a, batch.a_hat)
    weighted = tmean(p_true * ad.reshape(d2_scores, (d2_scores.shape[0],)))
    lv, ls = compat_losses(params, batch, a_table)
    return -hyper.alpha * weighted + hyper.gamma * (lv + ls)


def loss_gen(params, batch, hyper):
    """Encoder objective of the triple game:
    E[D2(z_a, a_y)] - beta * E[D2(z_v, a_y)], descended in f and g."""
    real = tmean(_scores(params.d2, batch.z_a, batch.a_y))
    fake_v = tmean(_scores(params.d2, batch.z_v, batch.a_y))
    return real - hyper.beta * fake_v


MODES = ("M1", "M2", "M3")


def loss_total(parts, mode):
    """Ablation-masked sum: M1 = align; M2 = + center; M3 = + cls + gen.

    `parts` maps component names to scalar Tensors (missing components
    count as zero).  Returns (total, breakdown dict of floats).
    """
    if mode not in MODES:
        raise ValueError("unknown ablation mode %r" % (mode,))
    active = ["align"]
    if mode in ("M2", "M3"):
        active.append("center")
    if mode == "M3":
        active += ["cls", "gen"]
    total = None
    breakdown = {}
    for name in ("align", "center", "cls", "gen"):
        term = parts.get(name)
        breakdown[name] = term.item() if term is not None else 0.0
        if name in active and term is not None:
            total = term if total is None else total + term
    if total is None:
        raise ValueError("no active loss components")
    breakdown["total"] = total.item()
    return total, breakdown
