import numpy as np
import pytest

from zsldg.evaluation import (EvalError, EvalReport, ablate, ablation_csv,
                              per_class_accuracy, predict, run_protocol)
from zsldg.nets import ModelParams, Spaces
from zsldg.synth import BenchConfig, gen_benchmark
from zsldg.training import TrainConfig

SMALL_BENCH = BenchConfig(n_classes=6, n_domains=3, n_seen_classes=4,
                          n_seen_domains=2, samples_per_class_domain=8,
                          visual_dim=8, semantic_dim=4, content_dim=3)


@pytest.fixture(scope="module")
def params():
    rng = np.random.default_rng(0)
    return ModelParams(Spaces(8, 4, 6, 3), rng, hidden=8)


def small_cfg(**kw):
    base = dict(epochs=1, batch_size=16, latent_dim=6, noise_dim=3, hidden=8)
    base.update(kw)
    return TrainConfig(**base)


class TestPredict:
    def test_probabilities_normalized(self, params):
        rng = np.random.default_rng(1)
        x = rng.normal(size=(10, 8))
        table = rng.normal(size=(5, 4))
        preds, probs = predict(params, x, table)
        assert probs.shape == (10, 5)
        np.testing.assert_allclose(probs.sum(axis=1), 1.0, atol=1e-12)
        assert set(preds) <= set(range(5))

    def test_pred_is_argmax_of_probs(self, params):
        rng = np.random.default_rng(2)
        x = rng.normal(size=(20, 8))
        ids = np.array([3, 7, 11])
        preds, probs = predict(params, x, rng.normal(size=(3, 4)), ids)
        assert np.array_equal(preds, ids[np.argmax(probs, axis=1)])

    def test_tie_breaks_to_lowest_id(self, params):
        rng = np.random.default_rng(3)
        x = rng.normal(size=(6, 8))
        row = rng.normal(size=4)
        table = np.stack([row, row])  # identical candidates -> exact tie
        preds, _ = predict(params, x, table, np.array([9, 4]))
        assert np.all(preds == 4)

    def test_candidate_subset_consistent(self, params):
        """Dropping non-winning candidates cannot change the winner."""
        rng = np.random.default_rng(4)
        x = rng.normal(size=(15, 8))
        table = rng.normal(size=(6, 4))
        preds, probs = predict(params, x, table)
        keep = np.array(sorted(set(preds)))
        preds2, _ = predict(params, x, table[keep], keep)
        assert np.array_equal(preds, preds2)

    def test_empty_candidates_rejected(self, params):
        with pytest.raises(EvalError):
            predict(params, np.zeros(8), np.zeros((0, 4)))

    def test_single_vector_input(self, params):
        preds, probs = predict(params, np.zeros(8), np.eye(4))
        assert preds.shape == (1,)


class TestPerClassAccuracy:
    def test_uniform_predictor_near_chance(self):
        """An untrained model on label-free noise scores about 1/K."""
        rng = np.random.default_rng(5)
        accs = []
        for seed in range(8):
            p = ModelParams(Spaces(8, 4, 6, 3), np.random.default_rng(seed),
                            hidden=8)
            x = rng.normal(size=(400, 8))
            y = rng.integers(0, 4, size=400)
            sem = rng.normal(size=(4, 4))
            _, acc, _ = per_class_accuracy(p, x, y, range(4), sem)
            accs.append(acc)
        assert abs(np.mean(accs) - 0.25) < 0.1

    def test_per_class_not_sample_weighted(self, params):
        """A class with few samples counts the same as a populous one."""
        rng = np.random.default_rng(6)
        x = rng.normal(size=(50, 8))
        y = np.array([0] * 49 + [1])
        sem = rng.normal(size=(2, 4))
        per_class, mean, _ = per_class_accuracy(params, x, y, [0, 1], sem)
        assert mean == pytest.approx((per_class[0] + per_class[1]) / 2)

    def test_zero_sample_classes_excluded(self, params):
        rng = np.random.default_rng(7)
        x = rng.normal(size=(10, 8))
        y = np.zeros(10, dtype=int)
        sem = rng.normal(size=(3, 4))
        per_class, _, excluded = per_class_accuracy(params, x, y, [0, 1, 2], sem)
        assert sorted(excluded) == [1, 2]
        assert list(per_class) == [0]

    def test_eval_does_not_mutate_params(self, params):
        before = [t.data.copy() for t in params.all_tensors()]
        rng = np.random.default_rng(8)
        per_class_accuracy(params, rng.normal(size=(20, 8)),
                           rng.integers(0, 3, 20), range(3),
                           rng.normal(size=(3, 4)))
        for old, t in zip(before, params.all_tensors()):
            assert np.array_equal(old, t.data)


class TestProtocols:
    def test_rotation_runs_every_fold(self):
        report = run_protocol(SMALL_BENCH, small_cfg(), protocol="rotation")
        assert [r[0] for r in report.rows] == list(range(SMALL_BENCH.n_domains))
        assert all(0.0 <= r[2] <= 1.0 for r in report.rows)
        assert 0.0 <= report.avg <= 1.0

    def test_dg_uses_seen_classes(self):
        report = run_protocol(SMALL_BENCH, small_cfg(), protocol="DG")
        assert report.protocol == "DG"
        per_class = report.rows[0][1]
        ds = gen_benchmark(SMALL_BENCH, held_out_domain=0)
        assert set(per_class) <= set(ds.splits.seen_classes)

    def test_ls_needs_spare_domains(self):
        with pytest.raises(EvalError):
            run_protocol(SMALL_BENCH, small_cfg(), protocol="LS")

    def test_ls_rows_are_unseen_domains(self):
        bench = BenchConfig(n_classes=6, n_domains=4, n_seen_classes=4,
                            n_seen_domains=2, samples_per_class_domain=8,
                            visual_dim=8, semantic_dim=4, content_dim=3)
        report = run_protocol(bench, small_cfg(), protocol="LS")
        ds = gen_benchmark(bench)
        assert [r[0] for r in report.rows] == list(ds.splits.unseen_domains)

    def test_unknown_protocol(self):
        with pytest.raises(EvalError):
            run_protocol(SMALL_BENCH, small_cfg(), protocol="bogus")

    def test_report_csv(self):
        report = EvalReport("rotation", "M1", 0,
                            rows=[(0, {1: 0.5}, 0.5), (1, {1: 0.7}, 0.7)])
        text = report.to_csv()
        lines = text.splitlines()
        assert lines[0].startswith("protocol,")
        assert lines[-1].endswith("AVG,0.600000")


class TestAblate:
    def test_table_shape_and_csv(self):
        table = ablate(SMALL_BENCH, small_cfg(), seeds=(0,), modes=("M1",))
        assert set(table) == {"M1"}
        assert set(table["M1"]["domains"]) == set(range(SMALL_BENCH.n_domains))
        csv_text = ablation_csv(table)
        assert csv_text.splitlines()[0] == "mode,domain_0,domain_1,domain_2,AVG"

    def test_median_over_seeds(self):
        table = ablate(SMALL_BENCH, small_cfg(), seeds=(0, 1, 2), modes=("M1",))
        per_seed = table["M1"]["per_seed_avg"]
        assert table["M1"]["avg"] == pytest.approx(
            float(np.median(list(per_seed.values()))))

    def test_no_seeds_rejected(self):
        with pytest.raises(EvalError):
            ablate(SMALL_BENCH, small_cfg(), seeds=())
