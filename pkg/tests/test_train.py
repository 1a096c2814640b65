import numpy as np
import pytest

import cidc.train as training
from cidc.errors import ArgumentError, DivergenceError
from cidc.train import (
    OptimState,
    TrainConfig,
    ablate_directions,
    ablation_table,
    evaluate,
    history_csv,
    model_for,
    sgd_step,
    train,
)

from oracles import sgd_scalar_oracle

RNG = np.random.default_rng

# Small enough to train in well under a second, large enough to exercise
# every path (three stages, pooled aggregation, all fusion plumbing).
FAST = dict(
    epochs=1,
    batch=4,
    train_size=8,
    val_size=8,
    clip_t=4,
    clip_size=12,
)


def fast_config(**overrides) -> TrainConfig:
    return TrainConfig(**{**FAST, **overrides})


class TestSgdStep:
    def test_frozen_scalar_trajectory(self):
        # lr 0.1, momentum 0.9, no decay, unit gradient from p0 = 0.
        params = {"p": np.array([0.0])}
        state = OptimState(lr_init=0.1, momentum=0.9, weight_decay=0.0)
        seen = []
        for _ in range(3):
            sgd_step(params, {"p": np.array([1.0])}, state)
            seen.append(float(params["p"][0]))
        assert seen == pytest.approx([-0.1, -0.29, -0.561], abs=1e-15)

    def test_matches_scalar_oracle_with_decay(self):
        rng = RNG(0)
        grads = [float(g) for g in rng.standard_normal(6)]
        params = {"p": np.array([0.7])}
        state = OptimState(lr_init=0.05, momentum=0.8, weight_decay=0.1)
        got = []
        for g in grads:
            sgd_step(params, {"p": np.array([g])}, state)
            got.append(float(params["p"][0]))
        # The oracle applies decay to the parameter value before each step.
        p, v, trace = 0.7, 0.0, []
        for g in grads:
            v = 0.8 * v + (g + 0.1 * p)
            p -= 0.05 * v
            trace.append(p)
        assert got == pytest.approx(trace, abs=1e-15)

    def test_zero_grads_zero_decay_keep_params(self):
        params = {"p": np.array([1.0, -2.0])}
        state = OptimState(weight_decay=0.0)
        state.velocities["p"] = np.array([1.0, 1.0])
        before = params["p"].copy()
        sgd_step(params, {"p": np.zeros(2)}, state)
        # Velocities decay geometrically and still move the parameters.
        assert np.allclose(state.velocities["p"], 0.9)
        assert np.allclose(params["p"], before - 0.01 * 0.9)

    def test_nonfinite_gradient_raises(self):
        params = {"p": np.array([0.0])}
        with pytest.raises(DivergenceError):
            sgd_step(params, {"p": np.array([np.nan])}, OptimState())

    def test_learning_rate_schedule(self):
        state = OptimState(lr_init=0.01, decay_epochs=(20, 26), decay_factor=10.0)
        rates = {}
        for epoch in (0, 19, 20, 25, 26, 29):
            state.epoch = epoch
            rates[epoch] = state.learning_rate()
        assert rates[0] == rates[19] == 0.01
        assert rates[20] == rates[25] == pytest.approx(0.001)
        assert rates[26] == rates[29] == pytest.approx(0.0001)


class TestDefaults:
    def test_desk_scale_defaults(self):
        cfg = TrainConfig()
        assert (cfg.train_size, cfg.val_size) == (2000, 400)
        assert (cfg.epochs, cfg.batch) == (30, 16)
        assert cfg.lr == 0.01 and cfg.momentum == 0.9 and cfg.weight_decay == 1e-4
        assert cfg.decay_epochs == (20, 26) and cfg.decay_factor == 10.0
        assert cfg.dropout == 0.6

    def test_model_for_maps_config(self):
        cfg = fast_config(direction="uni", fusion="sum")
        model = model_for(cfg, RNG(1))
        assert model.temporal_mode == "uni"
        assert model.fusion_mode == "sum"
        assert model.in_t == 4 and model.in_size == 12


class TestEvaluate:
    def test_metrics_on_controlled_logits(self, monkeypatch):
        logits = np.array(
            [
                [4.0, 3.0, 0.0, 0.0],  # label 0: right; pair01 right
                [2.0, 1.0, 0.0, 0.0],  # label 1: wrong; pair01 wrong
                [0.0, 0.0, 1.0, 5.0],  # label 2: wrong; pair23 wrong; axis right
                [9.0, 0.0, 0.0, 8.0],  # label 3: wrong; pair23 right; axis wrong
            ]
        )
        monkeypatch.setattr(training, "predict_logits", lambda model, clips, chunk=64: logits)
        m = evaluate(None, np.zeros((4, 1, 2, 5, 5)), np.array([0, 1, 2, 3]))
        assert m["overall"] == 0.25
        assert m["per_class"] == [1.0, 0.0, 0.0, 0.0]
        assert m["pair_01"] == 0.5
        assert m["pair_23"] == 0.5
        assert m["axis"] == 0.75


class TestTrain:
    def test_single_epoch_smoke(self):
        res = train(fast_config())
        assert len(res.history) == 1
        stats = res.history[0]
        assert stats.epoch == 0
        assert np.isfinite(stats.loss)
        assert 0.0 <= stats.val_acc <= 1.0

    def test_epoch_zero_loss_near_log4(self):
        res = train(fast_config(seed=11))
        assert abs(res.history[0].loss - np.log(4.0)) <= 0.1

    def test_bit_identical_given_seed(self):
        a = train(fast_config(epochs=2, seed=77))
        b = train(fast_config(epochs=2, seed=77))
        assert history_csv(a.history) == history_csv(b.history)
        pa, pb = a.model.parameters(), b.model.parameters()
        for name in pa:
            assert np.array_equal(pa[name], pb[name]), name

    def test_different_seeds_differ(self):
        a = train(fast_config(seed=1))
        b = train(fast_config(seed=2))
        assert history_csv(a.history) != history_csv(b.history)

    def test_progress_callback_order(self):
        seen = []
        train(fast_config(epochs=3), lambda s: seen.append(s.epoch))
        assert seen == [0, 1, 2]

    def test_huge_learning_rate_diverges(self):
        with np.errstate(all="ignore"), pytest.raises(DivergenceError):
            train(fast_config(epochs=40, lr=1e12))

    @pytest.mark.parametrize("field,value", [("epochs", 0), ("batch", 0), ("direction", "up")])
    def test_config_validation(self, field, value):
        with pytest.raises(ArgumentError):
            train(fast_config(**{field: value}))


class TestHistoryCsv:
    def test_header_and_roundtrip_precision(self):
        res = train(fast_config(epochs=2, seed=5))
        text = history_csv(res.history)
        lines = text.strip().split("\n")
        assert lines[0] == "epoch,loss,train_acc,val_acc"
        assert len(lines) == 3
        for row, stats in zip(lines[1:], res.history):
            cells = row.split(",")
            assert int(cells[0]) == stats.epoch
            assert float(cells[1]) == stats.loss  # repr round-trips exactly
            assert float(cells[3]) == stats.val_acc


class TestAblation:
    def test_all_variants_and_table(self):
        results = ablate_directions(fast_config(seed=3))
        assert set(results) == {"non", "uni", "bi", "pool"}
        rows = ablation_table(results)
        assert [r["variant"] for r in rows] == ["non", "uni", "bi", "pool"]
        for row in rows:
            for key in ("overall", "class0", "class3", "pair_01", "pair_23", "axis"):
                assert 0.0 <= row[key] <= 1.0

    def test_pool_control_has_no_temporal_striding(self):
        results = ablate_directions(fast_config(seed=4))
        pool_model = results["pool"].model
        assert all(s.temporal_stride == 1 for s in pool_model.stages)
        bi_model = results["bi"].model
        assert [s.temporal_stride for s in bi_model.stages] == [1, 1, 2]

    def test_progress_reports_variants(self):
        seen = []
        ablate_directions(fast_config(), lambda v, s: seen.append((v, s.epoch)))
        assert seen == [("non", 0), ("uni", 0), ("bi", 0), ("pool", 0)]
