import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from p2pgnn import (
    AdamState,
    ClassifierParams,
    LocalModel,
    NodeData,
    Splits,
    TrainConfig,
    adam_step,
    forward,
    gossip_pair_update,
    init_adam,
    init_params,
    load_params,
    loss_and_grad,
    pretrain,
    save_params,
)
from p2pgnn.learn import (
    deserialize_params,
    evaluation_loss,
    params_nbytes,
    serialize_params,
)

NO_DROPOUT = TrainConfig(dropout=0.0, l2=0.0005)


def zero_params(kind, f, c):
    shapes = {
        "lr": [(c, f), (c,)],
        "mlp": [(64, f), (64,), (c, 64), (c,)],
        "label": [],
    }[kind]
    return ClassifierParams(kind, f, c, [np.zeros(s) for s in shapes])


def finite_difference_grads(params, x, y, cfg, h=1e-5):
    grads = []
    for i, w in enumerate(params.weights):
        g = np.zeros_like(w)
        for idx in np.ndindex(w.shape):
            for sign in (+1, -1):
                shifted = params.copy()
                shifted.weights[i][idx] += sign * h
                loss, _ = loss_and_grad(shifted, x, y, cfg)
                g[idx] += sign * loss
        grads.append(g / (2 * h))
    return grads


def relative_error(analytic, numeric):
    num = max(np.max(np.abs(a - b)) for a, b in zip(analytic, numeric))
    den = max(1e-8, max(np.max(np.abs(a)) for a in analytic + numeric))
    return num / den


class TestForward:
    def test_lr_zero_weights_uniform(self):
        params = zero_params("lr", 3, 4)
        out = forward(params, np.array([0.3, -1.0, 2.0]))
        assert np.allclose(out, 0.25)

    def test_mlp_zero_weights_uniform(self):
        params = zero_params("mlp", 5, 3)
        out = forward(params, np.ones(5))
        assert np.allclose(out, 1.0 / 3)

    def test_lr_closed_form(self):
        params = ClassifierParams("lr", 2, 2, [np.eye(2), np.zeros(2)])
        out = forward(params, np.array([2.0, 0.0]))
        expected = np.exp([2.0, 0.0]) / np.exp([2.0, 0.0]).sum()
        assert np.allclose(out, expected)
        assert out[0] == pytest.approx(0.8808, abs=1e-4)

    def test_label_kind_has_no_forward(self):
        with pytest.raises(ValueError, match="label classifier"):
            forward(zero_params("label", 2, 2), np.zeros(2))

    def test_wrong_length_rejected(self):
        with pytest.raises(ValueError):
            forward(zero_params("lr", 3, 2), np.zeros(4))

    @settings(max_examples=25, deadline=None)
    @given(seed=st.integers(0, 10_000), kind=st.sampled_from(["lr", "mlp"]))
    def test_outputs_are_distributions(self, seed, kind):
        rng = np.random.default_rng(seed)
        params = init_params(kind, 4, 3, rng)
        out = forward(params, rng.normal(size=4) * 3)
        assert np.all(out >= 0)
        assert abs(out.sum() - 1.0) <= 1e-9


class TestLossAndGrad:
    def test_zero_weight_mlp_single_sample_ln2(self):
        params = zero_params("mlp", 4, 2)
        loss, _ = loss_and_grad(params, np.ones((1, 4)), np.array([[1.0, 0.0]]), NO_DROPOUT)
        assert loss == pytest.approx(np.log(2.0))

    def test_confident_correct_prediction_leaves_l2_only(self):
        w = np.array([[40.0, 0.0], [-40.0, 0.0]])
        params = ClassifierParams("lr", 2, 2, [w, np.zeros(2)])
        cfg = TrainConfig(dropout=0.0, l2=0.0005)
        loss, _ = loss_and_grad(params, np.array([[1.0, 0.0]]), np.array([[1.0, 0.0]]), cfg)
        assert loss == pytest.approx(cfg.l2 * np.sum(w * w), abs=1e-9)

    def test_lr_gradient_closed_form(self):
        rng = np.random.default_rng(0)
        params = init_params("lr", 2, 2, rng)
        x = np.array([[0.7, -1.2]])
        y = np.array([[0.0, 1.0]])
        loss, grads = loss_and_grad(params, x, y, NO_DROPOUT)
        probs = forward(params, x[0])
        expected_w = np.outer(probs - y[0], x[0]) + 2 * NO_DROPOUT.l2 * params.weights[0]
        assert np.allclose(grads[0], expected_w)
        assert np.allclose(grads[1], probs - y[0])

    def test_gradients_match_finite_differences(self):
        rng = np.random.default_rng(1)
        for kind in ("lr", "mlp"):
            params = init_params(kind, 3, 2, rng)
            x = rng.normal(size=(4, 3))
            y = np.zeros((4, 2))
            y[np.arange(4), rng.integers(0, 2, 4)] = 1.0
            _, grads = loss_and_grad(params, x, y, NO_DROPOUT)
            numeric = finite_difference_grads(params, x, y, NO_DROPOUT)
            assert relative_error(grads, numeric) <= 1e-4

    def test_dropout_mask_fixed_per_call(self):
        rng_a = np.random.default_rng(5)
        rng_b = np.random.default_rng(5)
        params = init_params("mlp", 3, 2, np.random.default_rng(2))
        x = np.ones((2, 3))
        y = np.array([[1.0, 0.0], [0.0, 1.0]])
        cfg = TrainConfig(dropout=0.5)
        loss_a, grads_a = loss_and_grad(params, x, y, cfg, rng_a)
        loss_b, grads_b = loss_and_grad(params, x, y, cfg, rng_b)
        assert loss_a == loss_b
        assert all(np.array_equal(a, b) for a, b in zip(grads_a, grads_b))

    def test_empty_batch_rejected(self):
        with pytest.raises(ValueError, match="nonempty"):
            loss_and_grad(zero_params("lr", 2, 2), np.zeros((0, 2)), np.zeros((0, 2)), NO_DROPOUT)


class TestAdam:
    def test_zero_gradient_keeps_parameters(self):
        params = zero_params("lr", 2, 2)
        state = init_adam(params)
        new_params, new_state = adam_step(params, [np.zeros((2, 2)), np.zeros(2)], state)
        assert all(np.array_equal(a, b) for a, b in zip(new_params.weights, params.weights))
        assert new_state.step == 1

    def test_single_step_from_zero_state(self):
        params = zero_params("lr", 2, 2)
        state = init_adam(params)
        g = np.array([[0.5, -2.0], [0.1, 0.0]])
        new_params, _ = adam_step(params, [g, np.zeros(2)], state)
        expected = -state.lr * g / (np.abs(g) + state.eps)
        assert np.allclose(new_params.weights[0], expected)

    def test_constant_gradient_update_magnitude_approaches_lr(self):
        params = zero_params("lr", 1, 2)
        state = init_adam(params)
        g = [np.full((2, 1), 0.37), np.zeros(2)]
        prev = params
        for _ in range(1000):
            new_params, state = adam_step(prev, g, state)
            last_delta = new_params.weights[0] - prev.weights[0]
            prev = new_params
        assert np.all(np.abs(np.abs(last_delta) - state.lr) <= 0.01 * state.lr)

    def test_shape_mismatch_rejected(self):
        params = zero_params("lr", 2, 2)
        with pytest.raises(ValueError):
            adam_step(params, [np.zeros((3, 3)), np.zeros(2)], init_adam(params))


def separable_dataset():
    """20-sample, 2-class, linearly separable toy set split across nodes."""
    rng = np.random.default_rng(12)
    n = 28
    side = np.repeat([0, 1], n // 2)
    features = np.column_stack([side * 4.0 - 2.0 + rng.normal(0, 0.3, n), rng.normal(0, 0.3, n)])
    labels = np.zeros((n, 2))
    labels[np.arange(n), side] = 1.0
    data = NodeData(features=features, labels=labels)
    train = set(range(0, 10)) | set(range(14, 24))
    valid = {10, 11, 24, 25}
    test = {12, 13, 26, 27}
    return data, Splits(train=train, valid=valid, test=test)


class TestPretrain:
    def test_label_kind_rejected(self):
        data, splits = separable_dataset()
        with pytest.raises(ValueError, match="label classifier"):
            pretrain(data, splits, "label")

    def test_separable_set_reaches_full_training_accuracy(self):
        data, splits = separable_dataset()
        params = pretrain(data, splits, "lr", TrainConfig(rng_seed=3))
        train_idx = sorted(splits.train)
        preds = np.array([forward(params, data.features[u]) for u in train_idx])
        hits = np.argmax(preds, axis=1) == np.argmax(data.labels[train_idx], axis=1)
        assert hits.all()

    def test_deterministic_per_seed(self):
        data, splits = separable_dataset()
        cfg = TrainConfig(max_epochs=60, patience=20, rng_seed=9)
        a = pretrain(data, splits, "mlp", cfg)
        b = pretrain(data, splits, "mlp", cfg)
        assert all(np.array_equal(x, y) for x, y in zip(a.weights, b.weights))

    def test_adversarial_validation_returns_initial_snapshot(self):
        # valid labels flipped: every training epoch makes validation strictly
        # worse, so the best snapshot is the untouched initialization
        data, splits = separable_dataset()
        flipped = data.labels.copy()
        for u in splits.valid:
            flipped[u] = flipped[u][::-1]
        adversarial = NodeData(features=data.features, labels=flipped)
        cfg = TrainConfig(max_epochs=200, patience=10, dropout=0.0, rng_seed=4)
        epochs_seen = []
        params = pretrain(adversarial, splits, "lr", cfg,
                          on_epoch=lambda e, tr, va: epochs_seen.append(e))
        fresh = init_params("lr", data.n_features, data.n_classes, np.random.default_rng(4))
        assert all(np.array_equal(a, b) for a, b in zip(params.weights, fresh.weights))
        assert len(epochs_seen) == cfg.patience  # stopped as soon as patience ran out

    def test_returned_snapshot_is_validation_optimal(self):
        data, splits = separable_dataset()
        cfg = TrainConfig(max_epochs=120, patience=15, rng_seed=7)
        seen = []
        params = pretrain(data, splits, "lr", cfg, on_epoch=lambda e, tr, va: seen.append(va))
        valid_idx = sorted(splits.valid)
        returned_loss = evaluation_loss(params, data.features[valid_idx], data.labels[valid_idx])
        assert returned_loss <= min(seen) + 1e-12


class TestGossipPairUpdate:
    def make_model(self, params, x, y=None):
        return LocalModel(params=params, opt=init_adam(params), x=x, y=y,
                          cfg=TrainConfig(dropout=0.0), rng=np.random.default_rng(0))

    def test_identical_unlabeled_pair_unchanged(self):
        params = init_params("lr", 2, 2, np.random.default_rng(1))
        u = self.make_model(params.copy(), np.zeros(2))
        v = self.make_model(params.copy(), np.zeros(2))
        nu, nv = gossip_pair_update(u, v)
        for w, orig in zip(nu.params.weights + nv.params.weights, params.weights * 2):
            assert np.allclose(w, orig)

    def test_unlabeled_pair_averages(self):
        pu = init_params("lr", 2, 2, np.random.default_rng(2))
        pv = init_params("lr", 2, 2, np.random.default_rng(3))
        nu, nv = gossip_pair_update(self.make_model(pu, np.zeros(2)), self.make_model(pv, np.zeros(2)))
        for wu, wv, a, b in zip(nu.params.weights, nv.params.weights, pu.weights, pv.weights):
            assert np.allclose(wu, (a + b) / 2)
            assert np.array_equal(wu, wv)

    def test_mean_parameter_conservation(self):
        pu = init_params("mlp", 3, 2, np.random.default_rng(4))
        pv = init_params("mlp", 3, 2, np.random.default_rng(5))
        before = [(a + b) / 2 for a, b in zip(pu.weights, pv.weights)]
        nu, nv = gossip_pair_update(self.make_model(pu, np.zeros(3)), self.make_model(pv, np.zeros(3)))
        after = [(a + b) / 2 for a, b in zip(nu.params.weights, nv.params.weights)]
        for x, y in zip(before, after):
            assert np.allclose(x, y)

    def test_two_labeled_devices_hand_computed(self):
        # replicate the episode independently: one Adam step each from zero
        # state (update = -lr * g / (|g| + eps)), then average
        w0 = np.array([[0.3, -0.2], [0.1, 0.4]])
        cfg = TrainConfig(dropout=0.0, l2=0.0)
        xu, yu = np.array([1.0, 0.0]), np.array([1.0, 0.0])
        xv, yv = np.array([0.0, 1.0]), np.array([0.0, 1.0])
        mu = LocalModel(ClassifierParams("lr", 2, 2, [w0.copy(), np.zeros(2)]),
                        init_adam(ClassifierParams("lr", 2, 2, [w0.copy(), np.zeros(2)])),
                        xu, yu, cfg)
        mv = LocalModel(ClassifierParams("lr", 2, 2, [w0.copy(), np.zeros(2)]),
                        init_adam(ClassifierParams("lr", 2, 2, [w0.copy(), np.zeros(2)])),
                        xv, yv, cfg)
        nu, nv = gossip_pair_update(mu, mv)

        lr_rate, eps = 0.01, 1e-8
        expected = []
        for x, y in ((xu, yu), (xv, yv)):
            logits = w0 @ x
            p = np.exp(logits - logits.max())
            p /= p.sum()
            g_w = np.outer(p - y, x)
            g_b = p - y
            stepped_w = w0 - lr_rate * np.where(g_w != 0, g_w / (np.abs(g_w) + eps), 0.0)
            stepped_b = -lr_rate * np.where(g_b != 0, g_b / (np.abs(g_b) + eps), 0.0)
            expected.append((stepped_w, stepped_b))
        avg_w = (expected[0][0] + expected[1][0]) / 2
        avg_b = (expected[0][1] + expected[1][1]) / 2
        assert np.allclose(nu.params.weights[0], avg_w, atol=1e-12)
        assert np.allclose(nu.params.weights[1], avg_b, atol=1e-12)
        assert np.array_equal(nu.params.weights[0], nv.params.weights[0])

    def test_moments_stay_per_device(self):
        pu = init_params("lr", 2, 2, np.random.default_rng(6))
        pv = init_params("lr", 2, 2, np.random.default_rng(7))
        mu = self.make_model(pu, np.array([1.0, 0.0]), np.array([1.0, 0.0]))
        mv = self.make_model(pv, np.zeros(2))
        nu, nv = gossip_pair_update(mu, mv)
        assert nu.opt.step == 1   # labeled side stepped
        assert nv.opt.step == 0   # unlabeled side only averaged

    def test_kind_mismatch_rejected(self):
        mu = self.make_model(init_params("lr", 2, 2, np.random.default_rng(8)), np.zeros(2))
        mv = self.make_model(init_params("mlp", 2, 2, np.random.default_rng(9)), np.zeros(2))
        with pytest.raises(ValueError):
            gossip_pair_update(mu, mv)


class TestParamsIO:
    @pytest.mark.parametrize("kind,f,c", [("lr", 5, 3), ("mlp", 7, 4), ("label", 2, 2)])
    def test_roundtrip(self, tmp_path, kind, f, c):
        params = init_params(kind, f, c, np.random.default_rng(10))
        path = tmp_path / "params.bin"
        save_params(params, path)
        again = load_params(path)
        assert again.kind == kind and again.n_features == f and again.n_classes == c
        assert all(np.array_equal(a, b) for a, b in zip(again.weights, params.weights))

    def test_payload_size_is_header_plus_f64_data(self):
        params = init_params("lr", 1433, 7, np.random.default_rng(11))
        n_values = 7 * 1433 + 7
        header = 4 * (4 + (1 + 2) + (1 + 1))  # fixed fields + per-array ndim/dims
        assert params_nbytes(params) == header + 8 * n_values

    def test_truncated_blob_rejected(self):
        blob = serialize_params(init_params("lr", 3, 2, np.random.default_rng(12)))
        with pytest.raises(ValueError, match="truncated"):
            deserialize_params(blob[:-4])

    def test_trailing_bytes_rejected(self):
        blob = serialize_params(init_params("lr", 3, 2, np.random.default_rng(13)))
        with pytest.raises(ValueError, match="trailing"):
            deserialize_params(blob + b"\x00")
