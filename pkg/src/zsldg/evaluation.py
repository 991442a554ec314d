"""Inference and the evaluation protocols: per-class accuracy on held-out
domains, rotation over held-out domains, the limited-sources variant, the
domain-generalization-only variant, and the ablation table."""

from __future__ import annotations

import csv
import io
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .losses import Hyper, MODES
from .nets import encode_visual, project
from .synth import gen_benchmark
from .training import TrainConfig, run_training

PROTOCOLS = ("rotation", "LS", "DG")


class EvalError(Exception):
    pass


def predict(params, x, candidate_table, candidate_ids=None):
    """Compatibility-rule prediction over a candidate class set.

    Scores are dot products between the projected latent h(f(x)) and the
    candidate semantic vectors, softmaxed into probabilities; ties break
    toward the lowest class id.  Returns (predicted ids, probabilities).
    """
    candidate_table = np.asarray(candidate_table)
    if candidate_table.ndim != 2 or candidate_table.shape[0] == 0:
        raise EvalError("empty candidate set")
    if candidate_ids is None:
        candidate_ids = np.arange(candidate_table.shape[0])
    candidate_ids = np.asarray(candidate_ids)
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    z = encode_visual(params, x)
    scores = (project(params, z).data @ candidate_table.T)
    shifted = scores - scores.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    probs = e / e.sum(axis=1, keepdims=True)
    order = np.argsort(candidate_ids)
    # argmax over candidates sorted by id: first maximum wins -> lowest id
    best = order[np.argmax(scores[:, order], axis=1)]
    return candidate_ids[best], probs


def per_class_accuracy(params, x, y, candidate_ids, semantics):
    """Mean over classes of within-class accuracy (not sample-weighted).

    Classes in the candidate set with zero test samples are excluded and
    reported.  Returns (per-class dict, mean, excluded ids).
    """
    candidate_ids = np.asarray(sorted(int(c) for c in candidate_ids))
    preds, _ = predict(params, x, semantics[candidate_ids], candidate_ids)
    y = np.asarray(y)
    per_class, excluded = {}, []
    for cls in candidate_ids:
        rows = y == cls
        if not rows.any():
            excluded.append(int(cls))
            continue
        per_class[int(cls)] = float((preds[rows] == cls).mean())
    if not per_class:
        raise EvalError("no test samples for any candidate class")
    mean = float(np.mean(list(per_class.values())))
    return per_class, mean, excluded


@dataclass
class EvalReport:
    """Accuracy per held-out domain (and per class within it)."""
    protocol: str
    mode: str
    seed: int
    rows: list = field(default_factory=list)  # (domain, per_class, mean)

    @property
    def avg(self):
        return float(np.mean([r[2] for r in self.rows]))

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf)
        w.writerow(["protocol", "mode", "seed", "domain", "mean_per_class_accuracy"])
        for domain, _, mean in self.rows:
            w.writerow([self.protocol, self.mode, self.seed, domain, "%.6f" % mean])
        w.writerow([self.protocol, self.mode, self.seed, "AVG", "%.6f" % self.avg])
        return buf.getvalue()

    def summary(self):
        lines = ["%s %s seed=%d" % (self.protocol, self.mode, self.seed)]
        for domain, _, mean in self.rows:
            lines.append("  domain %-4s %.4f" % (domain, mean))
        lines.append("  AVG         %.4f" % self.avg)
        return "\n".join(lines)


def _train_and_eval(bench_cfg, train_cfg, hyper, held_out, partition):
    ds = gen_benchmark(bench_cfg, held_out_domain=held_out)
    state, _ = run_training(ds, train_cfg, hyper)
    idx = ds.partition(partition)
    cand = ds.splits.unseen_classes if partition == "test_zsldg" \
        else ds.splits.seen_classes
    per_class, mean, _ = per_class_accuracy(
        state.params, ds.x[idx], ds.y[idx], cand, ds.semantics)
    return per_class, mean


def run_protocol(bench_cfg, train_cfg, hyper=None, protocol="rotation"):
    """One full protocol run at one seed.

    rotation: every domain takes a turn as the held-out domain (ZSLDG).
    LS: sources limited to the configured seen domains; each unseen
        domain is evaluated separately (ZSLDG).
    DG: identical class sets at train and test time, rotated held-out
        domain (unseen-domain, seen-class accuracy).
    """
    hyper = hyper or Hyper()
    if protocol not in PROTOCOLS:
        raise EvalError("unknown protocol %r" % (protocol,))
    report = EvalReport(protocol, train_cfg.mode, train_cfg.seed)
    if protocol in ("rotation", "DG"):
        partition = "test_zsldg" if protocol == "rotation" else "test_dg"
        for held_out in range(bench_cfg.n_domains):
            per_class, mean = _train_and_eval(bench_cfg, train_cfg, hyper,
                                              held_out, partition)
            report.rows.append((held_out, per_class, mean))
    else:  # LS: one training on the limited sources, one row per unseen domain
        ds = gen_benchmark(bench_cfg)
        if len(ds.splits.seen_domains) >= ds.n_domains - 1:
            raise EvalError("LS protocol needs n_seen_domains <= n_domains - 2")
        state, _ = run_training(ds, train_cfg, hyper)
        for dom in ds.splits.unseen_domains:
            idx = ds.partition("test_zsldg")
            idx = idx[ds.d[idx] == dom]
            per_class, mean, _ = per_class_accuracy(
                state.params, ds.x[idx], ds.y[idx],
                ds.splits.unseen_classes, ds.semantics)
            report.rows.append((int(dom), per_class, mean))
    return report


def _ablate_task(args):
    bench_cfg, train_cfg, hyper, mode, seed, held_out = args
    cfg = TrainConfig(**{**train_cfg.__dict__, "mode": mode, "seed": seed})
    _, mean = _train_and_eval(bench_cfg, cfg, hyper, held_out, "test_zsldg")
    return mode, seed, held_out, mean


def ablate(bench_cfg, train_cfg, hyper=None, seeds=(0,), modes=MODES, jobs=1):
    """Rotation accuracy for each ablation mode, median over seeds.

    Returns {mode: {"domains": {d: median_acc}, "avg": median_rotation_avg,
    "per_seed_avg": {seed: avg}}}.
    """
    hyper = hyper or Hyper()
    if not seeds:
        raise EvalError("need at least one seed")
    tasks = [(bench_cfg, train_cfg, hyper, mode, seed, held_out)
             for mode in modes for seed in seeds
             for held_out in range(bench_cfg.n_domains)]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_ablate_task, tasks))
    else:
        results = [_ablate_task(t) for t in tasks]
    table = {}
    for mode in modes:
        got = [r for r in results if r[0] == mode]
        domains = {}
        for held_out in range(bench_cfg.n_domains):
            accs = [r[3] for r in got if r[2] == held_out]
            domains[held_out] = float(np.median(accs))
        per_seed_avg = {seed: float(np.mean([r[3] for r in got if r[1] == seed]))
                        for seed in seeds}
        table[mode] = {"domains": domains,
                       "avg": float(np.median(list(per_seed_avg.values()))),
                       "per_seed_avg": per_seed_avg}
    return table


def ablation_csv(table):
    domains = sorted(next(iter(table.values()))["domains"])
    buf = io.StringIO()
    w = csv.writer(buf)
    w.writerow(["mode"] + ["domain_%d" % d for d in domains] + ["AVG"])
    for mode, row in table.items():
        w.writerow([mode] + ["%.6f" % row["domains"][d] for d in domains]
                   + ["%.6f" % row["avg"]])
    return buf.getvalue()
