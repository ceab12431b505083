import numpy as np
import pytest

from tpyramid.deep import (
    DeepPyramidModel,
    DivergenceError,
    TrainConfig,
    TwoStreamData,
    build_multi_pyramid_head,
    cross_entropy_loss,
    evaluate,
    forward_stream,
    gradcheck_model,
    late_fusion,
    load_model,
    save_model,
    train,
    weight_table,
)
from tpyramid.estimators import DeepPyramidClassifier
from tpyramid.layers import batchnorm_forward, softmax
from tpyramid.metrics import class_accuracies
from tpyramid.synth import SynthSpec, synthesize


def tiny_config(**kw):
    base = dict(depth=3, d_enc=5, node_dim=3, batch_size=4, epochs=5, weight_decay=1e-3)
    base.update(kw)
    return TrainConfig(**base)


def tiny_batch(rng, lengths=(1, 5, 7), d=4):
    videos = {s: [rng.standard_normal((T, d)) for T in lengths] for s in ("motion", "appearance")}
    return videos, np.arange(len(lengths)) % 2


def perturbed(model, rng, scale=0.3):
    # move the simplex and batch norm parameters away from their symmetric init
    for name, v in model.parameters().items():
        if name.endswith((".free", "gamma", "beta", ".b", "b0", "b1")):
            v += scale * rng.standard_normal(v.shape)
    return model


@pytest.fixture
def coarse():
    data, _ = synthesize(SynthSpec(n_classes=2, videos_per_class=10, noise=0.1, d_in=6, seed=1))
    return data


class TestConfig:
    def test_unknown_key(self):
        with pytest.raises(ValueError, match="valid keys"):
            TrainConfig.from_dict({"depht": 3})

    def test_round_trip(self):
        cfg = TrainConfig(depth=4, decay_epochs_motion=[10, 20])
        assert TrainConfig.from_dict(cfg.to_dict()) == cfg

    def test_learning_rate_decay(self):
        cfg = TrainConfig(decay_epochs_motion=(3, 6))
        assert cfg.learning_rate("motion", 0) == 0.005
        assert cfg.learning_rate("motion", 3) == pytest.approx(0.0005)
        assert cfg.learning_rate("motion", 7) == pytest.approx(0.00005)
        assert cfg.learning_rate("appearance", 7) == 0.001

    @pytest.mark.parametrize("bad", [{"depth": 0}, {"variant": "max"}, {"stream": "audio"},
                                     {"lr_motion": -1.0}, {"decay_factor": 1.0}])
    def test_invalid(self, bad):
        with pytest.raises(ValueError):
            TrainConfig(**bad)


class TestHead:
    def test_full_scale_width(self):
        assert build_multi_pyramid_head(1, 128, 6)["input_width"] == 8064

    def test_single_node(self):
        assert build_multi_pyramid_head(1, 16, 1)["input_width"] == 16

    def test_stacked_width(self):
        spec = build_multi_pyramid_head(4, 16, 3)
        assert spec["input_width"] == 448
        assert spec["hidden"] == [224, 112]
        assert spec["output"] == 128

    def test_average_width(self):
        assert build_multi_pyramid_head(3, 16, 5, "average")["input_width"] == 48


class TestForward:
    def test_probabilities(self, rng):
        model = DeepPyramidModel.initialize(tiny_config(), {"motion": 4, "appearance": 4}, 3)
        videos, _ = tiny_batch(rng)
        out = model.predict_proba(videos)
        for p in out.values():
            assert np.all(p >= 0)
            np.testing.assert_allclose(p.sum(axis=1), 1.0, atol=1e-12)

    def test_level_one_is_global_average_pooling(self, rng):
        # the global-average-pooling network shares encoder, batch norm and softmax layers
        cfg = tiny_config(depth=1, projection="identity", stream="motion")
        model = perturbed(DeepPyramidModel.initialize(cfg, {"motion": 4}, 3), rng)
        st = model.streams["motion"]
        p = st.params
        x = rng.standard_normal((9, 4))
        h, _ = st.encoder.forward(x)
        pooled = (np.full(9, 1.0 / 9) @ h)[None]
        bn, _, _ = batchnorm_forward(pooled, p["bn.gamma"], p["bn.beta"], False,
                                     st.buffers["bn.mean"], st.buffers["bn.var"], cfg.bn_eps)
        logits = bn @ p["fc.W"].T + p["fc.b"]
        np.testing.assert_array_equal(forward_stream(x, st), softmax(logits)[0])

    def test_within_leaf_permutation(self, rng):
        # integer-valued frames make every node sum exact, hence order free
        cfg = tiny_config(depth=2, encoder="identity", stream="motion")
        st = DeepPyramidModel.initialize(cfg, {"motion": 4}, 2).streams["motion"]
        x = rng.integers(-4, 5, (8, 4)).astype(float)
        inside = x[[2, 0, 3, 1, 4, 5, 7, 6]]
        np.testing.assert_array_equal(forward_stream(x, st), forward_stream(inside, st))

    def test_orderlessness_boundary(self, rng):
        cfg = tiny_config(depth=2, stream="motion")
        st = perturbed(DeepPyramidModel.initialize(cfg, {"motion": 4}, 2), rng).streams["motion"]
        x = rng.standard_normal((8, 4))
        inside = x[[1, 0, 3, 2, 5, 4, 7, 6]]
        across = x[[4, 1, 2, 3, 0, 5, 6, 7]]
        base = forward_stream(x, st)
        np.testing.assert_allclose(forward_stream(inside, st), base, rtol=1e-13, atol=0)
        assert np.abs(forward_stream(across, st) - base).max() > 1e-6

    def test_frame_subset_matches_restricted_video(self, rng):
        st = DeepPyramidModel.initialize(tiny_config(stream="motion"), {"motion": 4},
                                         2).streams["motion"]
        x = rng.standard_normal((12, 4))
        sel = np.arange(0, 12, 3)
        a = forward_stream(x, st, sel)
        assert a.shape == (2,) and a.sum() == pytest.approx(1.0)
        with pytest.raises(ValueError, match="empty"):
            forward_stream(x, st, np.array([], dtype=int))


class TestFusionAndLoss:
    def test_motion_only(self, rng):
        pm, pa = rng.dirichlet(np.ones(3)), rng.dirichlet(np.ones(3))
        np.testing.assert_array_equal(late_fusion(pm, pa, [1.0, 0.0]), pm)

    def test_equal_inputs(self, rng):
        p = rng.dirichlet(np.ones(4))
        np.testing.assert_allclose(late_fusion(p, p, [0.5, 0.5]), p, atol=1e-15)

    def test_off_simplex(self):
        with pytest.raises(ValueError):
            late_fusion(np.ones(2) / 2, np.ones(2) / 2, [0.7, 0.7])

    def test_uniform_prediction(self):
        assert cross_entropy_loss(np.full(5, 0.2), 3) == pytest.approx(np.log(5))

    def test_perfect_prediction(self):
        assert cross_entropy_loss(np.array([0.0, 1.0]), 1) == 0.0

    def test_decay_skips_simplex_blocks(self):
        params = {"a/fc.W": np.ones((2, 2)), "a/pyr0.free": 10 * np.ones(3),
                  "fusion.free": np.ones(2)}
        assert cross_entropy_loss(np.array([0.0, 1.0]), 1, params, 0.1) == pytest.approx(0.2)

    def test_gradient_matches_finite_differences(self, rng):
        model = perturbed(DeepPyramidModel.initialize(tiny_config(), {"motion": 4,
                                                                      "appearance": 4}, 2), rng)
        videos, labels = tiny_batch(rng)
        report = gradcheck_model(model, videos, labels, eps=1e-5)
        assert set(report) == set(model.parameters())
        assert max(report.values()) <= 1e-5, report

    def test_stacked_pyramids_gradient(self, rng):
        cfg = tiny_config(pyramids=3, reduce_dim=4, stream="appearance", depth=2)
        model = perturbed(DeepPyramidModel.initialize(cfg, {"appearance": 4}, 2), rng)
        assert model.streams["appearance"].n_reduction == 3  # 27 -> 13 -> 6 -> 3, then 4
        videos, labels = tiny_batch(rng, lengths=(3, 6, 2, 9))
        report = gradcheck_model(model, videos, labels, eps=1e-5)
        assert max(report.values()) <= 1e-4, report

    def test_scheduled_gradient(self, rng):
        model = perturbed(DeepPyramidModel.initialize(tiny_config(), {"motion": 4,
                                                                      "appearance": 4}, 2), rng)
        videos, labels = tiny_batch(rng, lengths=(4, 9, 7))
        sets = [np.arange(1, T, 3) for T in (4, 9, 7)]
        report = gradcheck_model(model, videos, labels, sets, eps=1e-5)
        assert max(report.values()) <= 1e-5, report


class TestTraining:
    def test_reaches_low_loss(self, coarse):
        cfg = TrainConfig(depth=2, d_enc=8, node_dim=8, epochs=200, stream="motion",
                          lr_motion=0.05, weight_decay=1e-4)
        _, trace = train(coarse, cfg)
        assert min(r["loss"] for r in trace) < 0.1

    def test_frozen_parameters_give_constant_loss(self, coarse):
        cfg = TrainConfig(depth=2, d_enc=8, node_dim=8, epochs=4, lr_motion=0.0,
                          lr_appearance=0.0, lr_fusion=0.0, shuffle=False)
        _, trace = train(coarse, cfg)
        assert len({r["loss"] for r in trace}) == 1

    def test_constraints_hold(self, coarse):
        cfg = TrainConfig(depth=3, d_enc=8, node_dim=8, epochs=10, lr_fusion=0.5)
        model, trace = train(coarse, cfg)
        for rec in trace:
            for s in ("motion", "appearance"):
                beta = np.array(rec["beta"][s][0])
                assert np.all(beta > 0) and abs(beta.sum() - 1) <= 1e-12
            assert abs(sum(rec["fusion"]) - 1) <= 1e-12

    def test_determinism(self, coarse):
        cfg = TrainConfig(depth=2, d_enc=8, node_dim=8, epochs=3, seed=7)
        assert train(coarse, cfg)[1] == train(coarse, cfg)[1]

    def test_surrogate_skips_short_videos(self):
        data = TwoStreamData([0, 1], motion=[np.ones((2, 3)), -np.ones((30, 3))])
        cfg = TrainConfig(depth=2, d_enc=4, node_dim=4, epochs=4, speedup_k=3, stream="motion",
                          batch_size=2)
        _, trace = train(data, cfg)
        assert [r["skipped"] for r in trace] == [0, 0, 1, 0]

    def test_divergence(self, coarse):
        cfg = TrainConfig(depth=2, d_enc=8, node_dim=8, epochs=20, stream="motion",
                          lr_motion=1e200)
        with pytest.raises(DivergenceError) as info, np.errstate(all="ignore"):
            train(coarse, cfg)
        assert isinstance(info.value.trace, list)

    def test_missing_stream(self):
        data = TwoStreamData([0, 1], motion=[np.ones((2, 3)), np.ones((3, 3))])
        with pytest.raises(ValueError, match="appearance"):
            train(data, TrainConfig(epochs=1))


class TestEvaluation:
    def test_perfect(self):
        per_class, mean = class_accuracies([0, 1, 2, 2], [0, 1, 2, 2])
        assert mean == 1.0 and per_class == [1.0, 1.0, 1.0]

    def test_random_predictions_near_chance(self):
        rng = np.random.default_rng(0)
        y = np.repeat(np.arange(4), 500)
        mean = class_accuracies(y, rng.integers(0, 4, len(y)))[1]
        # binomial standard error at n=2000 is about 0.01
        assert abs(mean - 0.25) < 0.04

    def test_evaluate_schema(self, coarse):
        model, _ = train(coarse, TrainConfig(depth=2, d_enc=8, node_dim=8, epochs=2))
        res = evaluate(model, coarse)
        assert set(res) == {"mean_class_accuracy", "per_class", "per_stream", "fusion_weights"}
        assert set(res["per_stream"]) == {"motion", "appearance"}
        assert sum(res["fusion_weights"]) == pytest.approx(1.0)

    def test_checkpoint_round_trip(self, coarse, tmp_path):
        cfg = TrainConfig(depth=2, pyramids=2, reduce_dim=8, d_enc=8, node_dim=8, epochs=2)
        model, _ = train(coarse, cfg)
        save_model(tmp_path / "m.pyra", model)
        back = load_model(tmp_path / "m.pyra")
        batch = coarse.batch(range(5), ("motion", "appearance"))
        a, b = model.predict_proba(batch), back.predict_proba(batch)
        for k in a:
            np.testing.assert_array_equal(a[k], b[k])
        assert back.config == model.config

    def test_weight_table(self, coarse):
        model, _ = train(coarse, TrainConfig(depth=3, d_enc=8, node_dim=8, epochs=1))
        rows = weight_table(model)
        assert len(rows) == 2 * 7
        assert sum(r[4] for r in rows if r[0] == "motion") == pytest.approx(1.0)
        assert {r[2] for r in rows} == {1, 2, 3}


class TestEstimator:
    def test_joint_fit_predict(self, coarse):
        X = list(zip(coarse.motion, coarse.appearance))
        y = np.array(["jump", "swim"])[coarse.labels]
        clf = DeepPyramidClassifier(depth=2, d_enc=8, node_dim=8, epochs=60, lr_motion=0.05,
                                    lr_appearance=0.05).fit(X, y)
        assert set(clf.predict(X)) <= {"jump", "swim"}
        assert clf.score(X, y) >= 0.9
        assert clf.predict_proba(X).shape == (20, 2)

    def test_single_stream(self, coarse):
        clf = DeepPyramidClassifier(depth=1, d_enc=8, node_dim=8, epochs=2, stream="appearance")
        clf.fit(coarse.appearance, coarse.labels)
        assert clf.predict(coarse.appearance).shape == (20,)
        assert clf.get_params()["stream"] == "appearance"
