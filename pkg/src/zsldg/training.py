"""Alternating adversarial training loop: critic updates at a fixed
ratio, one generator update on the ablation mode's active loss sum, then
the explicit center-table update."""

from __future__ import annotations

import csv
import os
import time
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import AdamState, NumericsError, Tensor, adam_step, backward
from .checkpoint import load_checkpoint, save_checkpoint
from .losses import (MODES, BatchEmbeds, Hyper, center_update, loss_align,
                     loss_center, loss_cls, loss_d1, loss_d2, loss_gen,
                     loss_total)
from .nets import ModelParams, Spaces, encode_semantic, encode_visual, project
from .synth import batch_iterator


class TrainingError(Exception):
    pass


@dataclass
class TrainConfig:
    mode: str = "M3"
    epochs: int = 60
    batch_size: int = 128
    critic_ratio: int = 5
    lr_critic: float = 1e-4
    lr_gen: float = 1e-4
    adam_beta1: float = 0.5
    adam_beta2: float = 0.999
    latent_dim: int = 32
    noise_dim: int = 16
    hidden: int = 256
    seed: int = 0
    checkpoint_every: int = 0   # epochs between checkpoints; 0 = final only

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError("mode must be one of %s" % (MODES,))
        if self.critic_ratio < 1:
            raise ValueError("critic_ratio must be >= 1")
        if self.epochs < 0 or self.batch_size < 1:
            raise ValueError("bad epochs/batch_size")


# metric-log columns; wall_time stays out so logs are bit-reproducible
METRIC_FIELDS = ("step", "d1", "align", "v", "s", "center", "d2", "cls",
                 "gen", "total", "critic_real", "critic_fake", "grad_norm")


@dataclass
class StepMetrics:
    step: int
    d1: float
    align: float
    v: float
    s: float
    center: float
    d2: float
    cls: float
    gen: float
    total: float
    critic_real: float
    critic_fake: float
    grad_norm: float
    wall_time: float = 0.0

    def row(self):
        vals = [getattr(self, f) for f in METRIC_FIELDS]
        return [vals[0]] + ["%.17g" % v for v in vals[1:]]


class TrainState:
    def __init__(self, params, centers, cfg):
        self.params = params
        self.centers = centers
        self.opt_gen = AdamState(params.generator_tensors(), lr=cfg.lr_gen,
                                 beta1=cfg.adam_beta1, beta2=cfg.adam_beta2)
        self.opt_d1 = AdamState(params.net_tensors("d1"), lr=cfg.lr_critic,
                                beta1=cfg.adam_beta1, beta2=cfg.adam_beta2)
        self.opt_d2 = AdamState(params.net_tensors("d2"), lr=cfg.lr_critic,
                                beta1=cfg.adam_beta1, beta2=cfg.adam_beta2)
        self.step = 0
        self.epoch = 0

    def optimizers(self):
        return {"gen": self.opt_gen, "d1": self.opt_d1, "d2": self.opt_d2}


def init_state(dataset, cfg):
    spaces = Spaces(dataset.visual_dim, dataset.semantic_dim,
                    cfg.latent_dim, cfg.noise_dim)
    rng = np.random.default_rng([cfg.seed, 1])
    params = ModelParams(spaces, rng, hidden=cfg.hidden)
    n_seen = len(dataset.splits.seen_classes)
    centers = rng.normal(size=(n_seen, cfg.latent_dim))
    return TrainState(params, centers, cfg)


def _term(label, step, fn, *args):
    try:
        return fn(*args)
    except NumericsError as exc:
        raise TrainingError("non-finite value in term '%s' at step %d: %s"
                            % (label, step, exc)) from exc


def train_step(state, x_b, y_b, cfg, hyper, a_table, rng):
    """One full iteration: critic_ratio critic updates, one generator
    update, then the center rule.  y_b holds dense seen-class indices."""
    params = state.params
    batch_n = len(y_b)
    noise_dim = params.spaces.noise_dim
    a_y = ad.take_rows(a_table, y_b)
    x_t = Tensor(x_b)
    t0 = time.perf_counter()

    z_v_frozen = encode_visual(params, x_t).detach()
    d1_val = d2_val = 0.0
    d1_parts = {"d1_real": 0.0, "d1_fake": 0.0}
    for _ in range(cfg.critic_ratio):
        noise = rng.normal(size=(batch_n, noise_dim))
        z_a = encode_semantic(params, noise, a_y).detach()
        crit_batch = BatchEmbeds(z_v_frozen, z_a, a_y, project(params, z_a).detach(), y_b)
        ld1, d1_parts = _term("d1", state.step, loss_d1, params, crit_batch, hyper, rng)
        grads = backward(ld1, params.net_tensors("d1"))
        adam_step(params.net_tensors("d1"), grads, state.opt_d1, maximize=True)
        d1_val = ld1.item()
        if cfg.mode == "M3":
            noise = rng.normal(size=(batch_n, noise_dim))
            z_a2 = encode_semantic(params, noise, a_y).detach()
            d2_batch = BatchEmbeds(z_v_frozen, z_a2, a_y,
                                   project(params, z_a2).detach(), y_b)
            ld2, _ = _term("d2", state.step, loss_d2, params, d2_batch, hyper, rng)
            grads = backward(ld2, params.net_tensors("d2"))
            adam_step(params.net_tensors("d2"), grads, state.opt_d2, maximize=True)
            d2_val = ld2.item()

    # generator update on the mode's active sum
    noise = rng.normal(size=(batch_n, noise_dim))
    z_v = encode_visual(params, x_t)
    z_a = encode_semantic(params, noise, a_y)
    batch = BatchEmbeds(z_v, z_a, a_y, project(params, z_a), y_b)
    parts = {}
    align, align_parts = _term("align", state.step, loss_align, params, batch, a_table)
    parts["align"] = align
    if cfg.mode in ("M2", "M3"):
        parts["center"] = _term("center", state.step, loss_center,
                                batch, state.centers, hyper)
    cls_val = gen_val = 0.0
    if cfg.mode == "M3":
        # the projector term must not push on f/g; rebuild on detached embeds
        z_a_det = z_a.detach()
        det = BatchEmbeds(z_v.detach(), z_a_det, a_y, project(params, z_a_det), y_b)
        parts["cls"] = _term("cls", state.step, loss_cls, params, det, a_table, hyper)
        parts["gen"] = _term("gen", state.step, loss_gen, params, batch, hyper)
        cls_val, gen_val = parts["cls"].item(), parts["gen"].item()
    total, breakdown = loss_total(parts, cfg.mode)
    gen_tensors = params.generator_tensors()
    grads = backward(total, gen_tensors)
    grad_norm = float(np.sqrt(sum(float((g.data ** 2).sum()) for g in grads)))
    adam_step(gen_tensors, grads, state.opt_gen)

    if cfg.mode in ("M2", "M3"):
        state.centers = center_update(batch, state.centers, hyper.kappa)

    metrics = StepMetrics(
        step=state.step, d1=d1_val, align=align.item(),
        v=align_parts["v"], s=align_parts["s"],
        center=breakdown["center"], d2=d2_val, cls=cls_val, gen=gen_val,
        total=breakdown["total"],
        critic_real=d1_parts["d1_real"], critic_fake=d1_parts["d1_fake"],
        grad_norm=grad_norm, wall_time=time.perf_counter() - t0)
    state.step += 1
    return metrics


def _seen_tables(dataset):
    seen = np.asarray(dataset.splits.seen_classes)
    a_table = Tensor(dataset.semantics[seen])
    remap = {int(c): i for i, c in enumerate(seen)}
    return a_table, remap


def run_training(dataset, cfg, hyper=None, out_dir=None, resume_from=None):
    """Train on the dataset's train partition.

    Deterministic under cfg.seed: per-epoch RNGs are derived from
    (seed, epoch), so resuming from an epoch-boundary checkpoint
    continues bit-identically.  Returns (state, metrics list).
    """
    hyper = hyper or Hyper()
    a_table, remap = _seen_tables(dataset)
    train_idx = dataset.partition("train")
    if cfg.epochs > 0 and len(train_idx) == 0:
        raise TrainingError("dataset has an empty train partition")
    # unseen classes map to -1; they never occur in the train partition
    y_dense = np.array([remap.get(int(c), -1) for c in dataset.y], dtype=np.intp)

    if resume_from is not None:
        params, training = load_checkpoint(resume_from, expect_training=True)
        state = TrainState(params, training["centers"], cfg)
        state.opt_gen = training["optimizers"]["gen"]
        state.opt_d1 = training["optimizers"]["d1"]
        state.opt_d2 = training["optimizers"]["d2"]
        state.step = training["step"]
        state.epoch = training["epoch"]
    else:
        state = init_state(dataset, cfg)

    metrics = []
    for epoch in range(state.epoch, cfg.epochs):
        rng = np.random.default_rng([cfg.seed, 2, epoch])
        for idx in batch_iterator(train_idx, cfg.batch_size, rng):
            m = train_step(state, dataset.x[idx], y_dense[idx], cfg, hyper,
                           a_table, rng)
            metrics.append(m)
        state.epoch = epoch + 1
        if out_dir and cfg.checkpoint_every and \
                (epoch + 1) % cfg.checkpoint_every == 0:
            save_state(state, os.path.join(out_dir, "ckpt_epoch%04d.bin" % (epoch + 1)))
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
        save_state(state, os.path.join(out_dir, "ckpt_final.bin"))
        write_metrics(metrics, os.path.join(out_dir, "metrics.csv"))
    return state, metrics


def save_state(state, path):
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    save_checkpoint(path, state.params, centers=state.centers,
                    optimizers=state.optimizers(), step=state.step,
                    epoch=state.epoch)


def write_metrics(metrics, path, append=False):
    mode = "a" if append and os.path.exists(path) else "w"
    with open(path, mode, newline="") as fh:
        writer = csv.writer(fh)
        if mode == "w":
            writer.writerow(METRIC_FIELDS)
        for m in metrics:
            writer.writerow(m.row())
