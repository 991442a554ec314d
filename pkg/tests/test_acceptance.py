"""Headline acceptance checks.

Each test prints a one-line PASS summary with the measured numbers so a
full run documents the achieved margins.  The slow trend tests share the
expensive training runs through session-scoped fixtures; calibrated
thresholds live in docs/baseline.md.
"""

import time

import numpy as np
import pytest

from zsldg import autodiff as ad
from zsldg.autodiff import Tensor, backward, tsum
from zsldg.evaluation import ablate, per_class_accuracy, run_protocol
from zsldg.gradcheck import run_gradient_suite
from zsldg.losses import (BatchEmbeds, Hyper, center_update, compat_loss,
                          gradient_penalty, loss_center, loss_d2)
from zsldg.synth import BenchConfig, Dataset, SplitSpec, gen_benchmark
from zsldg.training import TrainConfig, run_training
from zsldg.zfv import read_zfv, write_zfv

# calibrated acceptance configuration; derivation in docs/baseline.md
BENCH = BenchConfig()
SEEDS = (0, 1, 2, 3, 4)
CHANCE = 1.0 / (BENCH.n_classes - BENCH.n_seen_classes)  # 5 unseen -> 0.20
ZSLDG_FLOOR = 1.5 * CHANCE                               # 0.30
TREND_HYPER = Hyper(alpha=0.9)


def trend_cfg(**kw):
    # short-budget training schedule calibrated in docs/baseline.md
    base = dict(epochs=10, batch_size=64, lr_gen=1e-3, lr_critic=1e-3,
                critic_ratio=3)
    base.update(kw)
    return TrainConfig(**base)


class TestGradientSuite:
    def test_all_losses_match_finite_differences(self):
        t0 = time.time()
        results = run_gradient_suite(seed=0, points=20, tol=1e-4)
        elapsed = time.time() - t0
        worst = max(err for _, err, _ in results)
        for name, err, passed in results:
            assert passed, "%s gradient error %.3e > 1e-4" % (name, err)
        assert elapsed < 60.0, "suite took %.1fs" % elapsed
        print("\nPASS gradient suite: 8 losses x 20 points, worst %.3e, %.1fs"
              % (worst, elapsed))


class TestAnalyticIdentities:
    def test_unit_norm_critic_zero_penalty(self):
        # linear critic with unit-norm weight: gradient norm is 1 everywhere
        w = np.zeros(4)
        w[:2] = [0.6, 0.8]
        x = Tensor(np.random.default_rng(0).normal(size=(8, 4)))
        scores = x @ Tensor(w.reshape(4, 1))
        pen = gradient_penalty(scores, [x])
        assert abs(pen.item()) < 1e-24

    def test_single_seen_class_compat_zero(self):
        rng = np.random.default_rng(1)
        h_out = Tensor(rng.normal(size=(6, 3)))
        table = Tensor(rng.normal(size=(1, 3)))
        val = compat_loss(h_out, table, np.zeros(6, dtype=int)).item()
        assert abs(val) < 1e-15

    def test_center_update_is_scaled_center_gradient(self):
        # single-class batch: batch mean and class mean coincide
        rng = np.random.default_rng(2)
        hyper = Hyper(delta=0.7, kappa=1.0)
        z_v, z_a = rng.normal(size=(5, 4)), rng.normal(size=(5, 4))
        y = np.zeros(5, dtype=int)
        batch = BatchEmbeds(Tensor(z_v), Tensor(z_a), Tensor(rng.normal(size=(5, 2))),
                            Tensor(rng.normal(size=(5, 2))), y)
        centers = Tensor(rng.normal(size=(1, 4)))
        loss = loss_center(batch, centers, hyper)
        (grad,) = backward(loss, [centers])
        rule_delta = centers.data - center_update(batch, centers.data, 1.0)
        np.testing.assert_allclose(rule_delta, grad.data / (2 * hyper.delta),
                                   atol=1e-10)

    def test_d2_adversarial_terms_cancel(self):
        # z_v == z_a and a_hat == a_y: real and the two fakes coincide,
        # leaving only the penalty term
        rng = np.random.default_rng(3)
        from zsldg.nets import ModelParams, Spaces
        params = ModelParams(Spaces(4, 3, 4, 2), np.random.default_rng(9), hidden=5)
        hyper = Hyper(alpha=0.3)
        z = Tensor(rng.normal(size=(6, 4)))
        a = Tensor(rng.normal(size=(6, 3)))
        batch = BatchEmbeds(z, z, a, a, np.zeros(6, dtype=int))
        loss, parts = loss_d2(params, batch, hyper, np.random.default_rng(4))
        adversarial = (parts["d2_real"] - hyper.alpha * parts["d2_fake_h"]
                       - hyper.beta * parts["d2_fake_v"])
        assert abs(adversarial) < 1e-12
        np.testing.assert_allclose(loss.item(),
                                   -hyper.lam * parts["d2_penalty"], atol=1e-12)
        print("\nPASS analytic identities (penalty=0, L_V=0, center rule, "
              "D2 cancellation)")


@pytest.fixture(scope="session")
def ablation_table():
    return ablate(BENCH, trend_cfg(), TREND_HYPER, seeds=SEEDS)


@pytest.mark.slow
class TestTrends:
    def test_ablation_ordering(self, ablation_table):
        m1 = ablation_table["M1"]["avg"]
        m2 = ablation_table["M2"]["avg"]
        m3 = ablation_table["M3"]["avg"]
        print("\nablation rotation-AVG medians: M1=%.4f M2=%.4f M3=%.4f" % (m1, m2, m3))
        assert m3 >= m2 >= m1, "ordering violated"
        assert m3 - m1 >= 0.02, "M3 - M1 gap %.4f < 0.02" % (m3 - m1)
        print("PASS ablation trend: M3 >= M2 >= M1, gap %.4f" % (m3 - m1))

    def test_above_chance_zsldg(self, ablation_table):
        m3 = ablation_table["M3"]["avg"]
        assert m3 >= ZSLDG_FLOOR, "M3 median %.4f < %.4f" % (m3, ZSLDG_FLOOR)
        print("\nPASS above-chance ZSLDG: M3 median %.4f >= %.4f (chance %.2f)"
              % (m3, ZSLDG_FLOOR, CHANCE))

    def test_dg_mode_trend(self):
        avgs = {}
        for mode in ("M1", "M2"):
            per_seed = []
            for seed in SEEDS:
                rep = run_protocol(BENCH, trend_cfg(mode=mode, seed=seed),
                                   TREND_HYPER, protocol="DG")
                per_seed.append(rep.avg)
            avgs[mode] = float(np.mean(per_seed))
        print("\nDG-mode averages: M1=%.4f M2=%.4f" % (avgs["M1"], avgs["M2"]))
        assert avgs["M2"] >= avgs["M1"]
        print("PASS DG trend: M2 >= M1")

    def test_limited_sources_analogue(self, ablation_table):
        ls_bench = BenchConfig(**{**BENCH.__dict__, "n_seen_domains": 2})
        per_seed = []
        for seed in SEEDS:
            rep = run_protocol(ls_bench, trend_cfg(seed=seed), TREND_HYPER,
                               protocol="LS")
            per_seed.append(rep.avg)
        ls = float(np.median(per_seed))
        rotation = ablation_table["M3"]["avg"]
        print("\nLS median %.4f vs rotation %.4f (chance %.2f)"
              % (ls, rotation, CHANCE))
        assert ls < rotation, "limited sources should degrade"
        assert ls > CHANCE, "LS accuracy %.4f not above chance" % ls
        print("PASS LS analogue: degrades vs rotation, above chance")


class TestDeterminism:
    def test_bit_identical_logs_and_resume(self, tmp_path):
        bench = BenchConfig(n_classes=8, n_domains=3, n_seen_classes=6,
                            n_seen_domains=2, samples_per_class_domain=10,
                            visual_dim=10, semantic_dim=5, content_dim=4)
        ds = gen_benchmark(bench)
        cfg = TrainConfig(mode="M3", epochs=4, batch_size=32, latent_dim=8,
                          noise_dim=4, hidden=16, seed=11)
        logs = []
        for run in range(2):
            out = tmp_path / ("r%d" % run)
            run_training(ds, cfg, out_dir=str(out))
            logs.append((out / "metrics.csv").read_bytes())
        assert logs[0] == logs[1], "metric logs differ between identical runs"

        half = TrainConfig(**{**cfg.__dict__, "epochs": 2, "checkpoint_every": 2})
        out = tmp_path / "half"
        run_training(ds, half, out_dir=str(out))
        full_state, _ = run_training(ds, cfg)
        resumed, _ = run_training(ds, cfg,
                                  resume_from=str(out / "ckpt_epoch0002.bin"))
        for a, b in zip(full_state.params.all_tensors(),
                        resumed.params.all_tensors()):
            assert np.array_equal(a.data, b.data)
        assert np.array_equal(full_state.centers, resumed.centers)
        print("\nPASS determinism: bit-identical logs; resume matches "
              "uninterrupted run bitwise")


class TestZfvRoundTrip:
    def test_100_random_datasets(self, tmp_path):
        rng = np.random.default_rng(42)
        for i in range(100):
            n_classes = int(rng.integers(2, 9))
            n_domains = int(rng.integers(2, 6))
            n = int(rng.integers(1, 60))
            vdim = int(rng.integers(1, 12))
            sdim = int(rng.integers(1, 9))
            cs, dms = max(1, n_classes // 2), max(1, n_domains // 2)
            ds = Dataset(
                x=rng.normal(size=(n, vdim)),
                y=rng.integers(0, n_classes, size=n),
                d=rng.integers(0, n_domains, size=n),
                semantics=rng.normal(size=(n_classes, sdim)),
                splits=SplitSpec(tuple(range(cs)), tuple(range(cs, n_classes)),
                                 tuple(range(dms)), tuple(range(dms, n_domains))))
            path = tmp_path / ("rt%03d.zfv" % i)
            write_zfv(ds, path)
            back = read_zfv(path)
            assert np.array_equal(back.x, ds.x)
            assert np.array_equal(back.y, ds.y)
            assert np.array_equal(back.d, ds.d)
            assert np.array_equal(back.semantics, ds.semantics)
            assert back.splits == ds.splits
        print("\nPASS ZFV round trip: 100 random datasets bit-exact")
