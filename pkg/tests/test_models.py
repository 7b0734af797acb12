import numpy as np
import pytest

from fonttrend.losses import LossKind, LossSpec, loss_tensor
from fonttrend.models import (
    Conv3x3,
    Dense,
    build_model,
    cnn_regressor,
    init_parameters,
    load_checkpoint,
    load_model,
    mlp_regressor,
    save_checkpoint,
    save_model,
)
from fonttrend.nn import Adam, ShapeError, Tensor

from helpers import numeric_grad


def _expected_count(in_ch, channels=(16, 32, 64, 128), hidden=(64, 32)):
    n, c = 0, in_ch
    for c_out in channels:
        n += c * c_out * 9 + c_out
        c = c_out
    for h in hidden:
        n += c * h + h
        c = h
    return n + c + 1


class TestArchitecture:
    def test_parameter_count_rgb(self):
        model = cnn_regressor(3)
        assert model.parameter_count() == _expected_count(3) == 107809

    def test_parameter_count_edge(self):
        assert cnn_regressor(1).parameter_count() == _expected_count(1) == 107521

    def test_mlp_count(self):
        assert mlp_regressor(128).parameter_count() == 128 * 64 + 64 + 64 * 32 + 32 + 33

    def test_layer_sequence(self):
        kinds = [layer.spec()["kind"] for layer in cnn_regressor(3).layers]
        assert kinds == (["conv3x3", "relu", "maxpool2x2"] * 4 + ["gap"] + ["dense", "relu", "dropout"] * 2 + ["dense"])

    def test_zero_output_layer_gives_bias(self):
        model = init_parameters(cnn_regressor(3), 0)
        last = model.layers[-1]
        last.weight.value.data[...] = 0.0
        last.bias.value.data[...] = 41.5
        rng = np.random.default_rng(0)
        for shape in [(3, 16, 16), (3, 30, 17)]:
            assert model.predict(rng.uniform(size=shape)) == 41.5

    def test_variable_size_inputs(self):
        model = init_parameters(cnn_regressor(3), 1)
        rng = np.random.default_rng(1)
        for shape in [(3, 20, 31), (3, 64, 48)]:
            out = model.forward(Tensor(rng.uniform(size=shape)))
            assert out.shape == (1,)
            assert np.isfinite(out.data).all()

    def test_predict_not_clamped(self):
        model = init_parameters(mlp_regressor(4, hidden=()), 0)
        model.layers[-1].bias.value.data[...] = -7.0
        model.layers[-1].weight.value.data[...] = 0.0
        assert model.predict(np.ones(4)) == -7.0

    def test_mixed_batch_matches_per_sample(self):
        model = init_parameters(cnn_regressor(3, channels=(4, 4, 4, 4), hidden=(8,)), 2)
        rng = np.random.default_rng(2)
        inputs = [rng.uniform(size=s) for s in [(3, 16, 20), (3, 18, 16), (3, 16, 20), (3, 32, 16)]]
        batched = model.predict_many(inputs)
        single = [model.predict(x) for x in inputs]
        np.testing.assert_allclose(batched, single, rtol=1e-12)

    @pytest.mark.parametrize(
        "shape, match",
        [((1, 16, 16), "channels"), ((3, 15, 40), ">= 16"), ((16, 16), "image")],
    )
    def test_inadmissible_shapes(self, shape, match):
        model = init_parameters(cnn_regressor(3), 0)
        with pytest.raises(ShapeError, match=match):
            model.predict(np.zeros(shape))

    def test_mlp_wrong_length(self):
        with pytest.raises(ShapeError):
            init_parameters(mlp_regressor(8), 0).predict(np.zeros(7))


class TestInit:
    def test_same_seed_bitwise(self):
        a = init_parameters(cnn_regressor(3), 7).get_flat()
        b = init_parameters(cnn_regressor(3), 7).get_flat()
        assert all(np.array_equal(x, y) for x, y in zip(a, b))

    def test_different_seeds_differ(self):
        a = init_parameters(cnn_regressor(3), 7).get_flat()
        b = init_parameters(cnn_regressor(3), 8).get_flat()
        assert not np.array_equal(a[0], b[0])

    def test_he_variance_fan_in_128(self):
        model = init_parameters(cnn_regressor(3), 3)
        layer = next(l for l in model.layers if isinstance(l, Dense) and l.n_in == 128)
        var = layer.weight.data.var()
        assert abs(var / (2 / 128) - 1.0) < 0.2

    def test_conv_fan_in(self):
        model = init_parameters(cnn_regressor(3), 3)
        conv = next(l for l in model.layers if isinstance(l, Conv3x3) and l.c_in == 64)
        assert abs(conv.weight.data.var() / (2 / (64 * 9)) - 1.0) < 0.05

    def test_biases_zero(self):
        model = init_parameters(cnn_regressor(3), 4)
        for layer in model.layers:
            if isinstance(layer, (Conv3x3, Dense)):
                assert not layer.bias.data.any()


class TestDifferentiability:
    def test_full_cnn_loss_gradient(self):
        # the full-size network, one 1x16x16 input, h = 1e-4, sampled entries per tensor
        model = init_parameters(cnn_regressor(1), 5)
        rng = np.random.default_rng(5)
        x = rng.uniform(size=(1, 16, 16))
        spec = LossSpec(LossKind.MSE)

        def loss():
            return loss_tensor(spec, model.forward(Tensor(x)), np.array([30.0]))

        model_loss = loss()
        model_loss.backward()
        for p in model.params():
            flat = p.data.reshape(-1)
            picks = rng.choice(flat.size, size=min(6, flat.size), replace=False)
            for i in picks:
                old = flat[i]
                flat[i] = old + 1e-4
                fp = loss().item()
                flat[i] = old - 1e-4
                fm = loss().item()
                flat[i] = old
                num = (fp - fm) / 2e-4
                ana = p.grad.reshape(-1)[i]
                assert abs(num - ana) / max(abs(num), abs(ana), 1e-6) < 1e-3, (p.name, i, num, ana)

    def test_prediction_vs_pixel(self):
        model = init_parameters(cnn_regressor(3, channels=(4, 6, 6, 8), hidden=(8,)), 6)
        x = np.random.default_rng(6).uniform(size=(3, 16, 16))
        xt = Tensor(x.copy(), requires_grad=True)
        model.forward(xt).sum().backward()
        num = numeric_grad(lambda: model.predict(x), x)
        np.testing.assert_allclose(xt.grad, num, rtol=1e-5, atol=1e-9)

    def test_memorize_five_samples(self):
        # dropout disabled so the training objective is the evaluated one
        model = init_parameters(cnn_regressor(3, dropout=0.0), 7)
        rng = np.random.default_rng(7)
        xs = [rng.uniform(size=(3, 16, 16)) for _ in range(5)]
        ys = np.array([0.0, 20.0, 42.0, 63.0, 84.0])
        opt = Adam(model.params(), lr=1e-3)
        spec = LossSpec(LossKind.MSE)
        for _ in range(2000):
            opt.zero_grad()
            loss_tensor(spec, model.forward_batch(xs, training=True, rng=rng), ys).backward()
            opt.step()
        mae = np.mean(np.abs(model.predict_many(xs) - ys))
        assert mae < 1.0


class TestCheckpoint:
    def test_round_trip(self, tmp_path):
        model = init_parameters(cnn_regressor(1, channels=(4, 4, 4, 4), hidden=(8,)), 8)
        save_model(tmp_path / "m.ckpt", model, {"note": "x"})
        loaded, meta = load_model(tmp_path / "m.ckpt")
        assert meta == {"note": "x"}
        assert loaded.spec() == model.spec()
        x = np.random.default_rng(8).uniform(size=(1, 20, 24))
        assert loaded.predict(x) == model.predict(x)

    def test_byte_stable(self, tmp_path):
        model = init_parameters(mlp_regressor(16), 9)
        a = save_model(tmp_path / "a.ckpt", model, {"k": 1, "a": [1, 2]})
        b = save_model(tmp_path / "b.ckpt", model, {"a": [1, 2], "k": 1})
        assert a == b
        assert (tmp_path / "a.ckpt").read_bytes() == (tmp_path / "b.ckpt").read_bytes()

    def test_arbitrary_arrays(self, tmp_path):
        arrays = {"value": np.array([21.25]), "grid": np.arange(6.0).reshape(2, 3)}
        save_checkpoint(tmp_path / "c.ckpt", {"name": "constant"}, arrays)
        spec, back, meta = load_checkpoint(tmp_path / "c.ckpt")
        assert spec == {"name": "constant"} and meta == {}
        np.testing.assert_array_equal(back["grid"], arrays["grid"])

    def test_bad_magic(self, tmp_path):
        (tmp_path / "x.ckpt").write_bytes(b"not a checkpoint")
        with pytest.raises(ValueError, match="magic"):
            load_checkpoint(tmp_path / "x.ckpt")

    def test_build_from_spec(self):
        model = cnn_regressor(3)
        assert build_model(model.spec()).parameter_count() == model.parameter_count()
