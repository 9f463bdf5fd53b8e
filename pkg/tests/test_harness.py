import numpy as np
import pytest

from poisonlab import (AttackConfig, FeatureData, LabeledData, RngState,
                       STREAM_ATTACK, STREAM_DATA, TargetSpec, TrainConfig,
                       anomaly_filter, encode, evaluate_poison,
                       gc_feature_attack, gen_blobs, gradpc, parse_config,
                       pretrain_encoder, run_experiment, split_interleaved,
                       summarize, train_head_features)
from poisonlab.harness import EvalReport


class TestAnomalyFilter:
    def test_all_in_range(self, rng):
        nu = LabeledData(rng.uniform(-1, 1, (10, 3)), rng.integers(0, 2, 10))
        kept, removed = anomaly_filter(nu, 1.0)
        assert removed == 0
        assert np.array_equal(kept.X, nu.X)

    def test_removes_exactly_the_scaled_row(self, rng):
        X = rng.uniform(-1, 1, (8, 3))
        X[5] *= 10.0
        nu = LabeledData(X, np.arange(8) % 2)
        kept, removed = anomaly_filter(nu, 1.0)
        assert removed == 1
        assert np.array_equal(kept.X, np.delete(X, 5, axis=0))
        assert np.array_equal(kept.y, np.delete(nu.y, 5))

    def test_matches_brute_force_scan(self, rng):
        X = rng.standard_normal((30, 4)) * 2
        nu = FeatureData(X, rng.integers(0, 3, 30))
        kept, removed = anomaly_filter(nu, 1.5)
        want = [i for i in range(30) if np.abs(X[i]).max() <= 1.5]
        assert np.array_equal(kept.Z, X[want])
        assert removed == 30 - len(want)
        assert isinstance(kept, FeatureData)

    def test_idempotent(self, rng):
        X = rng.standard_normal((20, 3)) * 3
        nu = LabeledData(X, rng.integers(0, 2, 20))
        once, r1 = anomaly_filter(nu, 2.0)
        twice, r2 = anomaly_filter(once, 2.0)
        assert r2 == 0
        assert np.array_equal(once.X, twice.X)

    def test_requires_positive_threshold(self):
        nu = LabeledData(np.zeros((2, 2)), np.array([0, 1]))
        with pytest.raises(ValueError):
            anomaly_filter(nu, 0.0)


class TestEvaluatePoison:
    def test_duplicated_clean_barely_moves(self, bench):
        cell = bench[0]
        nu = LabeledData(cell.train.X[:60].copy(), cell.train.y[:60].copy())
        rep = evaluate_poison(cell.enc, cell.train, cell.test, nu=nu,
                              cfg=cell.hcfg)
        assert abs(rep.drop) <= 0.01
        assert rep.n_poison == 60

    def test_zero_poison_is_exactly_clean(self, bench):
        cell = bench[0]
        rep = evaluate_poison(cell.enc, cell.train, cell.test, cfg=cell.hcfg)
        assert rep.drop == 0.0
        assert rep.poisoned_acc == rep.clean_acc
        assert rep.n_poison == 0 and rep.poison_linf == 0.0

    def test_replace_with_clean_copy_is_noop(self, bench):
        cell = bench[0]
        nu = LabeledData(cell.train.X.copy(), cell.train.y.copy())
        rep = evaluate_poison(cell.enc, cell.train, cell.test, nu=nu,
                              cfg=cell.hcfg, replace=True)
        assert rep.drop == 0.0

    def test_reach_gap_zero_against_self(self, bench):
        cell = bench[0]
        rep = evaluate_poison(cell.enc, cell.train, cell.test, cfg=cell.hcfg,
                              target=cell.head)
        assert rep.reach_gap == 0.0

    def test_defense_counts_and_prefilter_stats(self, bench):
        cell = bench[0]
        X = cell.train.X[:10].copy()
        X[0] = 50.0
        nu = LabeledData(X, cell.train.y[:10].copy())
        clean_linf = float(np.abs(cell.train.X).max())
        rep = evaluate_poison(cell.enc, cell.train, cell.test, nu=nu,
                              cfg=cell.hcfg, defense_linf=clean_linf)
        assert rep.n_removed_by_defense == 1
        assert rep.n_poison == 10  # counted before the filter
        assert rep.poison_linf == 50.0

    def test_feature_dim_mismatch(self, bench):
        cell = bench[0]
        bad = FeatureData(np.zeros((3, 7)), np.zeros(3, dtype=np.int64))
        with pytest.raises(ValueError):
            evaluate_poison(cell.enc, cell.train, cell.test, nu=bad,
                            cfg=cell.hcfg)

    def test_input_space_needs_encoder(self, bench):
        cell = bench[0]
        with pytest.raises(ValueError):
            evaluate_poison(None, cell.train, cell.test, cfg=cell.hcfg)


class TestSplitInterleaved:
    def test_strides(self):
        X = np.arange(32, dtype=np.float64).reshape(8, 4)
        y = np.arange(8)
        train, test, val = split_interleaved(LabeledData(X, y))
        assert np.array_equal(train.y, [0, 4])
        assert np.array_equal(test.y, [1, 5])
        assert np.array_equal(val.y, [2, 6, 3, 7])

    def test_benchmark_sizes(self, bench):
        cell = bench[0]
        assert cell.train.X.shape == (600, 8)
        assert cell.test.X.shape == (600, 8)
        assert cell.val.X.shape == (1200, 8)


SMALL_SWEEP = """
[data]
n = 240
d = 4
c = 3
separation = 2.1
box_lo = -9.0
box_hi = 9.0

[encoder]
dims = 4, 8, 3
epochs = 40
lr = 0.12
whiten_scale = 3.0

[head]
epochs = 60
lr = 0.7
schedule = constant

[target]
eps_w = 0.1
steps = 25

[attack]
methods = gc-feature
eps_d = 0.1
seeds = 3
eta = 1.0
epochs = 500
stop_residual = 1e-7
box = feature-range

[eval]
epochs = 60
lr = 0.7
schedule = constant
"""


class TestRunExperiment:
    def test_single_cell_matches_direct_call(self):
        spec = parse_config(SMALL_SWEEP)
        reports = run_experiment(spec)
        assert len(reports) == 1
        rep = reports[0]
        assert rep.error == ""

        seed = 3
        data = gen_blobs(RngState(seed, STREAM_DATA), 240, 4, 3, 2.1,
                         (-9.0, 9.0), sigma=1.0)
        train, test, val = split_interleaved(data)
        enc = pretrain_encoder(train, (4, 8, 3),
                               TrainConfig(epochs=40, lr=0.12,
                                           schedule="cosine", seed=seed),
                               whiten_scale=3.0)
        hcfg = TrainConfig(epochs=60, lr=0.7, schedule="constant", seed=seed)
        train_feats = FeatureData(encode(enc, train.X), train.y)
        val_feats = FeatureData(encode(enc, val.X), val.y)
        head = train_head_features(train_feats, hcfg)
        target = gradpc(None, head, val_feats, TargetSpec(0.1, 25))
        cfg = AttackConfig(eps_d=0.1, eta=1.0, epochs=500, stop_residual=1e-7,
                           box=(train_feats.Z.min(0), train_feats.Z.max(0)))
        nu = gc_feature_attack(train_feats, target, cfg,
                               RngState(seed, STREAM_ATTACK)).nu
        want = evaluate_poison(enc, train, test, nu=nu, cfg=hcfg, target=target)

        assert rep.clean_acc == want.clean_acc
        assert rep.poisoned_acc == want.poisoned_acc
        assert rep.drop == want.drop
        assert rep.reach_gap == want.reach_gap
        assert rep.poison_linf == want.poison_linf
        assert rep.n_poison == want.n_poison
        assert rep.seed == seed

    def test_cell_failure_recorded_not_raised(self):
        text = SMALL_SWEEP.replace("eta = 1.0", "eta = -1.0")
        spec = parse_config(text)
        reports = run_experiment(spec)
        assert len(reports) == 1
        assert reports[0].error != ""
        assert summarize(reports) == []


class TestSummarize:
    def test_aggregates_per_cell(self):
        reports = [
            EvalReport(0.9, 0.8, 0.1, 0.0, 1.0, 5, 0, seed=0, attack="a", eps_d=0.1),
            EvalReport(0.9, 0.7, 0.2, 0.0, 1.0, 5, 0, seed=1, attack="a", eps_d=0.1),
            EvalReport(0.9, 0.9, 0.0, 0.0, 1.0, 5, 0, seed=0, attack="b", eps_d=0.5),
            EvalReport(0.0, 0.0, 0.0, 0.0, 0.0, 0, 0, seed=1, attack="b",
                       eps_d=0.5, error="boom"),
        ]
        rows = summarize(reports)
        assert rows[0]["attack"] == "a" and rows[0]["n_seeds"] == 2
        assert abs(rows[0]["mean_drop"] - 0.15) <= 1e-15
        assert abs(rows[0]["std_drop"] - 0.05) <= 1e-15
        assert rows[1]["attack"] == "b" and rows[1]["n_seeds"] == 1
