import numpy as np
import pytest

from lpsparse.attacks import AttackConfig, evaluate_attack
from lpsparse.calibration import calibrate_epsilon
from lpsparse.data import Dataset, SyntheticConfig, generate_synthetic
from lpsparse.errors import DatasetFormatError, DivergenceError, InvalidConfigError
from lpsparse.model import (
    ConvModel,
    MlpModel,
    TrainConfig,
    TrainHistory,
    accuracy,
    adversarial_train,
    budget_from_table,
    cross_entropy,
    heuristic_budget,
    load_model,
    save_model,
    train,
)
from oracles import finite_difference_grad


def zero_mlp(shape=(8, 8, 3), K=4):
    m = MlpModel(shape, K)
    for v in m.params.values():
        v[...] = 0.0
    return m


class TestGradients:
    @pytest.mark.parametrize("make", [
        lambda: MlpModel((8, 8, 3), 4, seed=1),
        lambda: MlpModel((8, 8, 3), 4, hidden=(16, 12), seed=2),
        lambda: ConvModel((8, 8, 3), 4, channels=(4, 5), seed=3),
    ])
    def test_input_gradient_matches_finite_differences(self, rng, make):
        model = make()
        for _ in range(5):
            x = rng.uniform(size=(8, 8, 3))
            y = int(rng.integers(4))
            g = model.input_gradient(x, y)
            fd = finite_difference_grad(lambda z: float(model.loss(z[None], [y])[0]), x.copy())
            assert g.shape == x.shape
            assert np.linalg.norm(g - fd) <= 1e-3 * np.linalg.norm(fd)

    @pytest.mark.parametrize("model", [MlpModel((6, 6, 2), 3, hidden=(5,), seed=4),
                                       ConvModel((6, 6, 2), 3, channels=(3, 2), seed=5)])
    def test_param_gradients_match_finite_differences(self, rng, model):
        X = rng.uniform(size=(4, 6, 6, 2))
        y = rng.integers(3, size=4)
        _, grads = model.loss_and_param_grads(X, y)
        for name, p in model.params.items():
            fd = finite_difference_grad(lambda _: model.loss_and_param_grads(X, y)[0], p)
            np.testing.assert_allclose(grads[name], fd, rtol=1e-4, atol=1e-7)

    def test_batch_gradient_is_per_example(self, rng):
        model = MlpModel((8, 8, 3), 4, seed=0)
        X = rng.uniform(size=(3, 8, 8, 3))
        y = np.array([0, 1, 2])
        _, G = model.loss_and_input_grad(X, y)
        for i in range(3):
            np.testing.assert_allclose(G[i], model.input_gradient(X[i], y[i]), atol=1e-14)

    def test_zero_weight_model(self, rng):
        model = zero_mlp()
        x = rng.uniform(size=(8, 8, 3))
        np.testing.assert_allclose(np.exp(model.predict(x) - np.log(np.exp(model.predict(x)).sum())), 0.25)
        _, dlogits = cross_entropy(model.logits(x[None]), np.array([2]))
        np.testing.assert_allclose(dlogits[0], [0.25, 0.25, -0.75, 0.25])
        assert np.all(model.input_gradient(x, 2) == 0)

    def test_wrong_shape(self):
        with pytest.raises(ValueError):
            MlpModel((8, 8, 3), 4).logits(np.zeros((1, 8, 8, 1)))


class TestTraining:
    def test_desk_scale_accuracy(self):
        cfg = SyntheticConfig()
        tr, te = generate_synthetic(cfg, 0, "train"), generate_synthetic(cfg, 0, "test")
        model = train(tr, TrainConfig(epochs=10, seed=0))
        assert accuracy(model, te) >= 0.85

    def test_zero_epochs_returns_initialization(self, small_data):
        tr, _ = small_data
        init = MlpModel(tr.shape, tr.num_classes, seed=9)
        out = train(tr, TrainConfig(epochs=0, seed=9))
        for k in init.params:
            np.testing.assert_array_equal(out.params[k], init.params[k])

    def test_deterministic(self, small_data):
        tr, _ = small_data
        a = train(tr, TrainConfig(epochs=2, seed=4))
        b = train(tr, TrainConfig(epochs=2, seed=4))
        for k in a.params:
            assert a.params[k].tobytes() == b.params[k].tobytes()

    def test_conv_trains(self, small_data):
        tr, te = small_data
        model = train(tr, TrainConfig(epochs=8, seed=0, model="conv", arch={"channels": (4, 4)}))
        assert accuracy(model, te) > 0.5

    def test_loss_decreases(self, small_data):
        hist = TrainHistory()
        train(small_data[0], TrainConfig(epochs=5, seed=0), history=hist)
        assert hist.epoch_losses[-1] < hist.epoch_losses[0]

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_divergence_detected(self, small_data):
        with pytest.raises(DivergenceError):
            train(small_data[0], TrainConfig(epochs=3, seed=0, learning_rate=1e308))

    def test_invalid_config(self, small_data):
        with pytest.raises(InvalidConfigError):
            train(small_data[0], TrainConfig(p_range=(0.5, 2.0)))
        with pytest.raises(InvalidConfigError):
            train(small_data[0], TrainConfig(model="resnet"))


class TestAdversarialTraining:
    def test_zero_fraction_matches_plain_training(self, small_data):
        tr, _ = small_data
        cfg = TrainConfig(epochs=2, seed=3, adversarial_fraction=0.0)
        a = adversarial_train(tr, cfg)
        b = train(tr, cfg)
        for k in a.params:
            np.testing.assert_array_equal(a.params[k], b.params[k])

    def test_p_sampler_is_uniform(self):
        ds = Dataset(np.full((1600, 8, 8, 1), 0.5), np.arange(1600) % 2, 2)
        hist = TrainHistory()
        identity = lambda model, x, y, p, eps: x  # noqa: E731
        train(ds, TrainConfig(epochs=1, batch_size=8, seed=0), attacker=identity, history=hist)
        assert len(hist.sampled_p) == 200 * 6
        assert 1.45 <= np.mean(hist.sampled_p) <= 1.55
        assert min(hist.sampled_p) >= 1.0 and max(hist.sampled_p) <= 2.0

    def test_attacker_sees_budget(self, small_data):
        seen = []

        def spy(model, x, y, p, eps):
            seen.append((p, eps))
            return x

        tr = small_data[0]
        train(tr, TrainConfig(epochs=1, seed=0), attacker=spy, budget=lambda p: 10 * p)
        assert all(e == pytest.approx(10 * p) for p, e in seen)

    def test_budgets(self):
        assert heuristic_budget(2.0, 768, 0.5) == 0.5
        assert heuristic_budget(1.0, 4, 0.5) == pytest.approx(1.0)
        f = budget_from_table([(2.0, 1.0), (1.0, 3.0)])
        assert f(1.5) == pytest.approx(2.0)
        assert f(0.5) == 3.0

    def test_more_robust_to_sparse_attack(self, small_data):
        tr, te = small_data
        cfg = TrainConfig(epochs=15, seed=1)
        plain = train(tr, cfg)
        robust = adversarial_train(tr, cfg)
        # the plain model's calibrated budget
        eps = calibrate_epsilon(plain, te, 1.01, AttackConfig(p=1.01, epsilon=0.0, iterations=20)).epsilon
        attack = AttackConfig(p=1.01, epsilon=eps, iterations=20)
        acc_plain = evaluate_attack(plain, te, attack, measures=()).adv_accuracy
        acc_robust = evaluate_attack(robust, te, attack, measures=()).adv_accuracy
        assert acc_robust > acc_plain


class TestAccuracy:
    def test_memorization(self):
        ds = Dataset(np.stack([np.zeros((8, 8, 1)), np.ones((8, 8, 1))]), np.array([0, 1]), 2)
        model = train(ds, TrainConfig(epochs=200, batch_size=2, learning_rate=1e-2, seed=0))
        assert accuracy(model, ds) == 1.0

    def test_constant_predictor_picks_class_zero(self, small_data):
        _, te = small_data
        assert accuracy(zero_mlp(), te) == pytest.approx(np.mean(te.labels == 0))
        assert accuracy(zero_mlp(), te) == pytest.approx(0.25)

    def test_order_invariant(self, small_model, small_data):
        _, te = small_data
        perm = np.random.default_rng(0).permutation(len(te))
        assert accuracy(small_model, te) == accuracy(small_model, te.subset(perm))

    def test_empty(self, small_model):
        assert accuracy(small_model, Dataset(np.zeros((0, 8, 8, 3)), np.zeros(0), 4)) == 0.0


class TestCheckpoint:
    @pytest.mark.parametrize("model", [MlpModel((8, 8, 3), 4, hidden=(7, 5), seed=1),
                                       ConvModel((8, 8, 3), 4, channels=(3, 2), seed=2)])
    def test_round_trip(self, tmp_path, rng, model):
        save_model(model, tmp_path / "m.lpmd")
        back = load_model(tmp_path / "m.lpmd")
        assert type(back) is type(model) and back.descriptor() == model.descriptor()
        for k in model.params:
            np.testing.assert_array_equal(back.params[k], model.params[k].astype(np.float32))
        X = rng.uniform(size=(3, 8, 8, 3))
        np.testing.assert_allclose(back.logits(X), model.logits(X), atol=1e-5)
        # float32 storage is a fixed point
        save_model(back, tmp_path / "n.lpmd")
        assert (tmp_path / "m.lpmd").read_bytes() == (tmp_path / "n.lpmd").read_bytes()

    def test_bad_magic(self, tmp_path):
        (tmp_path / "m.lpmd").write_bytes(b"NOPE" + bytes(20))
        with pytest.raises(DatasetFormatError):
            load_model(tmp_path / "m.lpmd")

    def test_truncated(self, tmp_path):
        save_model(MlpModel((8, 8, 3), 4), tmp_path / "m.lpmd")
        raw = (tmp_path / "m.lpmd").read_bytes()
        (tmp_path / "m.lpmd").write_bytes(raw[:-10])
        with pytest.raises(DatasetFormatError) as err:
            load_model(tmp_path / "m.lpmd")
        assert err.value.kind == "truncated-file"
