import csv
import io
import math

import numpy as np
import pytest

from gpcn.data_io import SyntheticSpec, generate_sbm
from gpcn.errors import ConfigError
from gpcn.graph import LabelVector
from gpcn.models import ModelConfig
from gpcn.training import (
    RESULT_COLUMNS,
    AdamState,
    Split,
    TrainConfig,
    ablation_sweep,
    accuracy,
    adam_step,
    csv_text,
    curve,
    grid_search,
    make_split,
    result_row,
    run_splits,
    summarize,
    train,
)


@pytest.fixture(scope="module")
def small_sbm():
    return generate_sbm(SyntheticSpec(n=80, classes=2, p_in=0.15, p_out=0.02, feature_dim=6, seed=3))


class TestSplits:
    def test_balanced_ten_nodes(self):
        s = make_split(LabelVector([0] * 5 + [1] * 5, 2), seed=0)
        assert (s.train.size, s.val.size, s.test.size) == (6, 2, 2)
        y = np.array([0] * 5 + [1] * 5)
        for idx, per in ((s.train, 3), (s.val, 1), (s.test, 1)):
            assert np.bincount(y[idx], minlength=2).tolist() == [per, per]

    def test_deterministic(self):
        y = LabelVector(np.arange(50) % 3, 3)
        a, b = make_split(y, seed=4), make_split(y, seed=4)
        for x, z in zip((a.train, a.val, a.test), (b.train, b.val, b.test)):
            np.testing.assert_array_equal(x, z)
        assert not np.array_equal(a.train, make_split(y, seed=5).train)

    def test_train_fraction_over_seeds(self):
        y = LabelVector(np.arange(100) % 4, 4)
        for seed in range(14):
            s = make_split(y, seed=seed)
            assert s.train.size == 60 and s.val.size == 20 and s.test.size == 20
            assert np.intersect1d(s.train, s.val).size == 0 and np.intersect1d(s.val, s.test).size == 0

    def test_random_protocol(self):
        s = make_split(LabelVector(np.arange(100) % 2, 2), "random_50_25_25", 1)
        assert (s.train.size, s.val.size, s.test.size) == (50, 25, 25)

    def test_fixed_protocol_not_generated(self):
        with pytest.raises(ConfigError):
            make_split(LabelVector([0, 1], 2), "fixed_file")

    def test_overlap_rejected(self):
        with pytest.raises(ValueError):
            Split([0, 1], [1], [2])
        with pytest.raises(ValueError):
            Split([], [1], [2])


class TestAdam:
    def test_zero_grad(self):
        p = {"w": np.array([[1.0, -2.0]])}
        adam_step(p, {"w": np.zeros((1, 2))}, AdamState(), 0.1)
        np.testing.assert_array_equal(p["w"], [[1.0, -2.0]])

    def test_first_step_magnitude(self):
        p = {"w": np.zeros((2, 2))}
        g = np.full((2, 2), 3.7)
        adam_step(p, {"w": g}, AdamState(), 0.01)
        # m_hat = g, v_hat = g^2, step = lr g / (|g| + eps)
        np.testing.assert_allclose(p["w"], -0.01 * 3.7 / (3.7 + 1e-8), rtol=1e-15)

    def test_quadratic_bowl(self):
        target = np.array([[1.5, -0.5, 3.0]])
        p = {"w": np.zeros((1, 3))}
        state = AdamState()
        for step in range(2000):
            adam_step(p, {"w": 2 * (p["w"] - target)}, state, 0.01 if step < 1500 else 0.001)
        assert np.sum((p["w"] - target) ** 2) < 1e-6

    def test_coupled_vs_decoupled_and_exempt(self):
        g = {"w": np.zeros((1, 1)), "theta": np.zeros((1, 1))}
        p = {"w": np.ones((1, 1)), "theta": np.ones((1, 1))}
        adam_step(p, g, AdamState(), 0.1, weight_decay=0.5, exempt={"theta"})
        assert p["w"][0, 0] < 1.0 and p["theta"][0, 0] == 1.0
        q = {"w": np.ones((1, 1))}
        adam_step(q, {"w": np.zeros((1, 1))}, AdamState(), 0.1, weight_decay=0.5, decoupled=True)
        assert q["w"][0, 0] == pytest.approx(1.0 - 0.05)


class TestAccuracy:
    def test_perfect(self):
        assert accuracy(5 * np.eye(3), [0, 1, 2], [0, 1, 2]) == 1.0

    def test_ties_lowest_class(self):
        y = np.array([0, 1, 0, 2, 0])
        mask = np.array([1, 1, 1, 0, 1], bool)
        assert accuracy(np.zeros((5, 3)), y, mask) == 0.75

    def test_naive_loop(self, rng):
        Z = rng.standard_normal((40, 4))
        y = rng.integers(0, 4, 40)
        mask = rng.random(40) < 0.5
        hits = total = 0
        for i in range(40):
            if mask[i]:
                best = 0
                for c in range(1, 4):
                    if Z[i, c] > Z[i, best]:
                        best = c
                hits += best == y[i]
                total += 1
        assert accuracy(Z, y, mask) == hits / total


class TestTrain:
    def test_learns_and_is_deterministic(self, small_sbm):
        split = make_split(small_sbm.y, seed=0)
        mc = ModelConfig(kind="GPCN", hidden=16)
        tc = TrainConfig(max_epochs=60, seed=0)
        a, b = train(small_sbm, mc, tc, split), train(small_sbm, mc, tc, split)
        assert a.ok and a.best_val_acc >= 0.8
        assert a.loss_curve == b.loss_curve and a.test_acc == b.test_acc
        assert all(math.isfinite(v) for v in a.loss_curve)
        assert a.loss_curve[-1] < a.loss_curve[0]

    def test_early_stopping_restores_best(self, small_sbm):
        split = make_split(small_sbm.y, seed=1)
        mc = ModelConfig(kind="MLP", hidden=16)
        res = train(small_sbm, mc, TrainConfig(max_epochs=400, patience=5, lr=0.05, seed=1), split)
        assert res.epochs_run - res.best_epoch == 5
        from gpcn.models import forward, prepare_graph

        g = prepare_graph(small_sbm.A, small_sbm.X)
        logits = forward(mc, res.params, g)
        assert accuracy(logits, small_sbm.y, split.val) == res.best_val_acc
        assert accuracy(logits, small_sbm.y, split.test) == res.test_acc

    def test_numeric_failure_is_recorded(self, small_sbm):
        split = make_split(small_sbm.y, seed=0)
        from gpcn.models import prepare_graph

        g = prepare_graph(small_sbm.A, small_sbm.X * 1e300)
        with np.errstate(over="ignore", invalid="ignore"):
            res = train(g, ModelConfig(kind="GPCN", gamma=64.0, L=8), TrainConfig(max_epochs=5), split, y=small_sbm.y)
        assert res.status == "numeric_failure"
        row = result_row("x", ModelConfig(), TrainConfig(), split, res)
        assert math.isnan(row["test_acc"])

    def test_learned_mu_and_theta(self, small_sbm):
        split = make_split(small_sbm.y, seed=0)
        res = train(small_sbm, ModelConfig(kind="AGPCN_LINK", L=3, hidden=8), TrainConfig(max_epochs=10), split)
        assert 0 < res.learned_mu < 1 and len(res.learned_theta) == 4

    def test_float32(self, small_sbm):
        split = make_split(small_sbm.y, seed=0)
        res = train(small_sbm, ModelConfig(kind="GCN", hidden=8), TrainConfig(max_epochs=20, float32=True), split)
        assert res.ok and res.params["W0"].data.dtype == np.float32


class TestTables:
    def test_csv_columns_and_wall_time(self, small_sbm):
        splits = [make_split(small_sbm.y, seed=s) for s in range(2)]
        rows = run_splits(small_sbm, ModelConfig(kind="SGC"), TrainConfig(max_epochs=5), splits, record_wall_time=False)
        text = csv_text([r[0] for r in rows], RESULT_COLUMNS)
        assert set(rows[0][3]) == {"W"}
        parsed = list(csv.DictReader(io.StringIO(text)))
        assert list(parsed[0]) == list(RESULT_COLUMNS)
        assert [p["seed"] for p in parsed] == ["0", "1"]
        assert all(p["wall_ms"] == "0" for p in parsed)

    def test_summarize(self):
        m, s = summarize([0.5, 0.7, 0.9])
        assert m == pytest.approx(0.7) and s == pytest.approx(0.2)
        assert summarize([0.4]) == (0.4, 0.0)
        assert summarize([float("nan"), 0.2]) == (0.2, 0.0)

    def test_grid_parallel_matches_serial(self, small_sbm):
        splits = [make_split(small_sbm.y, seed=s) for s in range(2)]
        grid = {"lr": [0.01, 0.05], "hidden": [4, 8]}
        base = (ModelConfig(kind="GPCN"), TrainConfig(max_epochs=8))
        serial = grid_search(small_sbm, grid, splits, *base, jobs=1, record_wall_time=False)
        para = grid_search(small_sbm, grid, splits, *base, jobs=2, record_wall_time=False)
        assert len(serial.rows) == 8
        assert csv_text(serial.rows) == csv_text(para.rows)
        assert serial.best == para.best
        assert serial.best_model.hidden == serial.best["hidden"]

    def test_ablation_rows(self, small_sbm):
        splits = [make_split(small_sbm.y, seed=0)]
        rows = ablation_sweep(
            small_sbm, ModelConfig(kind="GPCN"), TrainConfig(max_epochs=5), {"L": [1, 2], "dropout": [0.0]}, splits
        )
        assert [r["factor"] for r in rows] == ["L", "L", "dropout"]
        assert [r["L"] for r in rows] == [1, 2, 2]
        assert set(curve(rows, "L")) == {1, 2}

    def test_unknown_sweep_key(self, small_sbm):
        with pytest.raises(ConfigError):
            ablation_sweep(small_sbm, ModelConfig(), TrainConfig(max_epochs=1), {"depth": [1]}, [make_split(small_sbm.y)])
