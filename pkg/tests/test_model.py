import numpy as np
import pytest

from metricbench.dataset import LabeledData
from metricbench.embedcore import LabelSet
from metricbench.errors import (
    DimMismatch,
    DisjointnessViolation,
    NonFiniteLoss,
    ShapeMismatch,
    StaleCache,
    ZeroVector,
)
from metricbench.losses import evaluate_loss
from metricbench.miners import BatchSpec
from metricbench.model import (
    MlpEmbedder,
    RmspropState,
    TrainConfig,
    backward,
    embed,
    fit_until_plateau,
    forward,
    init_mlp,
    load_checkpoint,
    rmsprop_step,
    save_checkpoint,
)


def two_blob_data(classes, n_per, dim, rng, spread=0.05, scale=8.0):
    centers = rng.standard_normal((len(classes), dim)) * scale
    labels = np.repeat(classes, n_per)
    canonical = np.repeat(np.arange(len(classes)), n_per)
    x = centers[canonical] + spread * rng.standard_normal((labels.size, dim))
    return LabeledData(x, LabelSet(labels))


class TestForward:
    def test_identity_layer_passthrough(self):
        model = MlpEmbedder((3, 3), [np.eye(3)], [np.zeros(3)],
                            final_l2_normalize=False)
        x = np.arange(12, dtype=np.float64).reshape(4, 3)
        out, _ = forward(model, x)
        np.testing.assert_array_equal(out.data, x)

    def test_zero_net_with_normalization_rejected(self):
        model = MlpEmbedder((3, 2), [np.zeros((3, 2))], [np.zeros(2)])
        with pytest.raises(ZeroVector):
            forward(model, np.ones((2, 3)))

    def test_output_unit_norm_and_finite(self):
        rng = np.random.default_rng(0)
        model = init_mlp((6, 16, 4), rng)
        out, _ = forward(model, rng.standard_normal((20, 6)))
        assert np.all(np.isfinite(out.data))
        np.testing.assert_allclose(np.linalg.norm(out.data, axis=1), 1.0, atol=1e-12)

    def test_dim_mismatch(self):
        model = init_mlp((6, 4), np.random.default_rng(1))
        with pytest.raises(DimMismatch):
            forward(model, np.zeros((3, 5)))


class TestBackward:
    def test_zero_grad_out(self):
        rng = np.random.default_rng(2)
        model = init_mlp((4, 8, 3), rng)
        x = rng.standard_normal((5, 4))
        _, cache = forward(model, x)
        grads = backward(model, cache, np.zeros((5, 3)))
        for g in grads:
            np.testing.assert_array_equal(g, 0.0)

    def test_linear_layer_hand_calculus(self):
        # loss = sum of outputs of a single linear layer: dW = column sums of x
        rng = np.random.default_rng(3)
        model = MlpEmbedder((3, 2), [rng.standard_normal((3, 2))], [np.zeros(2)],
                            final_l2_normalize=False)
        x = rng.standard_normal((6, 3))
        _, cache = forward(model, x)
        grads = backward(model, cache, np.ones((6, 2)))
        np.testing.assert_allclose(grads[0], np.outer(x.sum(axis=0), np.ones(2)),
                                   atol=1e-12)
        np.testing.assert_allclose(grads[1], 6.0, atol=1e-12)

    def test_stale_cache_rejected(self):
        rng = np.random.default_rng(4)
        model = init_mlp((4, 3), rng)
        other = init_mlp((4, 3), rng)
        _, cache = forward(model, rng.standard_normal((2, 4)))
        with pytest.raises(StaleCache):
            backward(other, cache, np.zeros((2, 3)))

    @pytest.mark.parametrize("loss_id,params", [
        ("contrastive", {"neg_margin": 0.7}),
        ("triplet", {"margin": 0.2}),
        ("multisimilarity", None),
    ])
    def test_end_to_end_finite_differences(self, loss_id, params):
        rng = np.random.default_rng(5)
        model = init_mlp((5, 8, 4), rng)
        x = rng.standard_normal((8, 5))
        y = np.repeat(np.arange(4), 2)
        emb, cache = forward(model, x)
        out = evaluate_loss(loss_id, emb.data, y, params)
        grads = backward(model, cache, out.grad_embeddings)
        step = 1e-6
        worst = 0.0
        for p, g in zip(model.parameters(), grads):
            flat, gflat = p.reshape(-1), np.asarray(g).reshape(-1)
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + step
                f_plus = evaluate_loss(loss_id, embed(model, x).data, y, params).value
                flat[i] = orig - step
                f_minus = evaluate_loss(loss_id, embed(model, x).data, y, params).value
                flat[i] = orig
                numeric = (f_plus - f_minus) / (2 * step)
                worst = max(worst, abs(numeric - gflat[i])
                            / max(abs(numeric), abs(gflat[i]), 1e-6))
        assert worst < 1e-4


class TestRmsprop:
    def test_zero_gradient_no_change(self):
        state = RmspropState(lr=0.1)
        p = [np.array([1.0, -2.0])]
        rmsprop_step(state, p, [np.zeros(2)])
        np.testing.assert_array_equal(p[0], [1.0, -2.0])

    def test_single_step_hand_value(self):
        state = RmspropState(lr=0.1, alpha=0.9, eps=0.0)
        p = [np.array([0.0])]
        rmsprop_step(state, p, [np.array([1.0])])
        np.testing.assert_allclose(state.v[0], [0.1], atol=1e-15)
        np.testing.assert_allclose(p[0], [-0.1 / np.sqrt(0.1)], atol=1e-12)

    def test_constant_gradient_fixed_point(self):
        state = RmspropState(lr=0.05, alpha=0.9, eps=0.0)
        p = [np.array([0.0])]
        prev = 0.0
        for _ in range(500):
            prev = p[0][0]
            rmsprop_step(state, p, [np.array([2.0])])
        assert abs(abs(p[0][0] - prev) - 0.05) < 1e-4

    def test_shape_mismatch(self):
        state = RmspropState(lr=0.1)
        with pytest.raises(ShapeMismatch):
            rmsprop_step(state, [np.zeros(3)], [np.zeros(2)])


class TestFitUntilPlateau:
    def make_cfg(self, **kw):
        base = dict(loss_id="contrastive", loss_params={"neg_margin": 0.7},
                    batch_spec=BatchSpec(2, 4), hidden=(16,), embed_dim=4,
                    lr=1e-2, max_epochs=30, validation_interval=5,
                    plateau_patience=4, seed=0)
        base.update(kw)
        return TrainConfig(**base)

    def test_separable_two_class_training(self):
        rng = np.random.default_rng(6)
        train = two_blob_data(np.array([0, 1]), 30, 6, rng)
        val = two_blob_data(np.array([2, 3]), 30, 6, rng)
        result = fit_until_plateau(train, val, self.make_cfg())
        assert result.best_score >= 0.9

    def test_disjointness_enforced(self):
        rng = np.random.default_rng(7)
        data = two_blob_data(np.array([0, 1]), 10, 4, rng)
        with pytest.raises(DisjointnessViolation):
            fit_until_plateau(data, data, self.make_cfg())

    def test_zero_lr_stops_after_patience_checks(self):
        rng = np.random.default_rng(8)
        train = two_blob_data(np.array([0, 1]), 20, 4, rng)
        val = two_blob_data(np.array([2, 3]), 20, 4, rng)
        cfg = self.make_cfg(lr=0.0, plateau_patience=3, max_epochs=1000,
                            validation_interval=2)
        result = fit_until_plateau(train, val, cfg)
        # one baseline entry plus exactly `patience` stagnant checks
        assert len(result.series) == 1 + 3
        assert len(set(result.series)) == 1
        assert result.steps_run == 3 * 2

    def test_same_seed_bit_identical(self):
        rng = np.random.default_rng(9)
        train = two_blob_data(np.array([0, 1, 2]), 15, 5, rng)
        val = two_blob_data(np.array([3, 4]), 15, 5, rng)
        cfg = self.make_cfg(batch_spec=BatchSpec(2, 3), seed=11, max_epochs=6)
        a = fit_until_plateau(train, val, cfg)
        b = fit_until_plateau(train, val, cfg)
        assert a.series == b.series
        for wa, wb in zip(a.model.weights, b.model.weights):
            np.testing.assert_array_equal(wa, wb)

    def test_best_checkpoint_is_series_max(self):
        rng = np.random.default_rng(10)
        train = two_blob_data(np.array([0, 1, 2]), 15, 5, rng, spread=1.0)
        val = two_blob_data(np.array([3, 4]), 15, 5, rng, spread=1.0)
        result = fit_until_plateau(train, val, self.make_cfg(batch_spec=BatchSpec(2, 3)))
        assert result.best_score == max(result.series)

    def test_learnable_loss_state_steps(self):
        # one optimizer step on the margin loss moves beta along its gradient
        from metricbench.losses import make_margin_state, random_batch

        rng = np.random.default_rng(11)
        batch = random_batch(rng, classes=3, per_class=3, dim=5)
        state = make_margin_state(1.2)
        out = evaluate_loss("margin", batch.embeddings, batch.labels,
                            {"alpha": 0.2}, state=state)
        assert float(np.abs(out.grad_params["beta"])) > 0.0
        opt = RmspropState(lr=1e-2)
        before = float(state.beta)
        rmsprop_step(opt, [state.beta], [out.grad_params["beta"]])
        assert float(state.beta) != before

    def test_hard_data_trains_loss_state(self):
        rng = np.random.default_rng(11)
        train = two_blob_data(np.array([0, 1, 2]), 20, 4, rng, spread=3.0, scale=4.0)
        val = two_blob_data(np.array([3, 4]), 20, 4, rng, spread=3.0, scale=4.0)
        cfg = self.make_cfg(loss_id="margin",
                            loss_params={"alpha": 0.2, "beta_init": 1.2,
                                         "param_lr": 1e-2},
                            batch_spec=BatchSpec(2, 4), max_epochs=20)
        result = fit_until_plateau(train, val, cfg)
        assert result.loss_state is not None
        assert np.isfinite(float(result.loss_state.beta))

    def test_non_finite_loss_aborts(self, monkeypatch):
        rng = np.random.default_rng(12)
        train = two_blob_data(np.array([0, 1]), 10, 4, rng)
        val = two_blob_data(np.array([2, 3]), 10, 4, rng)

        import metricbench.model as model_mod

        def bad_loss(*args, **kwargs):
            out = evaluate_loss(*args, **kwargs)
            out.value = float("nan")
            return out

        monkeypatch.setattr(model_mod, "evaluate_loss", bad_loss)
        with pytest.raises(NonFiniteLoss):
            fit_until_plateau(train, val, self.make_cfg())

    def test_miner_in_the_loop(self):
        rng = np.random.default_rng(13)
        train = two_blob_data(np.array([0, 1, 2]), 15, 5, rng)
        val = two_blob_data(np.array([3, 4]), 15, 5, rng)
        cfg = self.make_cfg(loss_id="multisimilarity", loss_params=None,
                            miner_id="multisimilarity",
                            miner_params={"epsilon": 0.2},
                            batch_spec=BatchSpec(2, 3))
        result = fit_until_plateau(train, val, cfg)
        assert result.best_score >= 0.9


class TestCheckpointIo:
    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(14)
        model = init_mlp((5, 7, 3), rng)
        path = tmp_path / "checkpoint"
        save_checkpoint(path, model, config_hash="abc123",
                        validation_series=[0.1, 0.5, 0.4])
        loaded, sidecar = load_checkpoint(path)
        assert loaded.widths == (5, 7, 3)
        assert sidecar["config_hash"] == "abc123"
        assert sidecar["validation_series"] == [0.1, 0.5, 0.4]
        for wa, wb in zip(model.weights, loaded.weights):
            np.testing.assert_array_equal(wa, wb)
        for ba, bb in zip(model.biases, loaded.biases):
            np.testing.assert_array_equal(ba, bb)
        rng2 = np.random.default_rng(15)
        x = rng2.standard_normal((4, 5))
        np.testing.assert_array_equal(embed(model, x).data, embed(loaded, x).data)

    def test_magic_bytes(self, tmp_path):
        model = init_mlp((2, 2), np.random.default_rng(16))
        path = tmp_path / "c"
        save_checkpoint(path, model)
        assert path.read_bytes()[:4] == b"MLP1"
        with pytest.raises(StaleCache):
            load_checkpoint(tmp_path / "c.json")
