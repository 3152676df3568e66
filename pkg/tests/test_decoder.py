import numpy as np
import pytest

from shapemapper import decoder as D
from shapemapper.decoder import AutoDecoderConfig, DecoderModel, LatentCode
from shapemapper.nn import DenseNet, Layer, grad_check
from shapemapper.shapes import Box, Sphere, make_dataset

SMALL = dict(latent_dim=4, hidden=(16, 16))


@pytest.fixture(scope="module")
def trained():
    data = make_dataset([("ball", Sphere(0.5)), ("cube", Box(0.3, 0.3, 0.3))], 300, 300, seed=0)
    cfg = AutoDecoderConfig(epochs=30, batch_size=128, seed=1, **SMALL)
    return data, D.train_autodecoder(data, cfg)


def test_decode_empty_points():
    model = DecoderModel.create(4, (8,))
    assert D.decode(model, np.zeros(4), np.zeros((0, 3))).shape == (0,)


def test_zero_net_decodes_zero():
    layers = [Layer(np.zeros((8, 7)), np.zeros(8), "relu"), Layer(np.zeros((1, 8)), np.zeros(1))]
    model = DecoderModel(DenseNet(layers))
    pts = np.random.default_rng(0).uniform(-1, 1, size=(50, 3))
    assert not D.decode(model, np.ones(4), pts).any()


def test_decode_dim_mismatch():
    model = DecoderModel.create(4, (8,))
    with pytest.raises(ValueError, match="dim 3"):
        D.decode(model, np.zeros(3), np.zeros((2, 3)))


def test_decoder_gradients_wrt_latent_and_points():
    rng = np.random.default_rng(2)
    model = DecoderModel.create(5, (12, 12), seed=2)
    x = rng.normal(size=(6, 8))
    assert grad_check(model.net, x, rng.normal(size=(6, 1)), "L2", wrt_input=True) < 1e-5


def test_latent_code_checks():
    with pytest.raises(ValueError):
        LatentCode(np.array([0.0, np.nan]))
    big = np.full(4, 100.0, dtype=np.float32)
    bounded = D.enforce_latent_bound(big)
    assert np.linalg.norm(bounded) == pytest.approx(10 * 2, rel=1e-6)
    small = np.ones(4, dtype=np.float32)
    assert D.enforce_latent_bound(small) is small


def test_training_reduces_loss(trained):
    _, res = trained
    assert res.history[-1] < res.history[0]
    assert len(res.history) == 30


def test_latents_distinct(trained):
    _, res = trained
    a, b = res.latents["ball"].c, res.latents["cube"].c
    assert np.linalg.norm(a - b) > 0


def test_training_deterministic(trained):
    data, res = trained
    again = D.train_autodecoder(data, AutoDecoderConfig(epochs=30, batch_size=128, seed=1, **SMALL))
    assert again.model.net.to_bytes() == res.model.net.to_bytes()
    assert again.history == res.history


def test_single_shape_trains():
    data = make_dataset([("only", Sphere(0.4))], 100, 100, seed=0)
    res = D.train_autodecoder(data, AutoDecoderConfig(epochs=2, seed=0, **SMALL))
    assert list(res.latents) == ["only"]


def test_encode_best_so_far_monotone(trained):
    data, res = trained
    hist = []
    D.encode_shape(res.model, data[0], steps=40, seed=0, history=hist)
    assert len(hist) == 40
    assert all(b <= a for a, b in zip(hist, hist[1:]))


def test_encode_zero_steps_returns_init(trained):
    data, res = trained
    c = D.encode_shape(res.model, data[0], steps=0, seed=5)
    init = (np.random.default_rng(5).normal(size=4) * 0.01).astype(np.float32)
    np.testing.assert_array_equal(c.c, init)


def test_encode_freezes_weights_and_is_deterministic(trained):
    data, res = trained
    before = res.model.net.to_bytes()
    a = D.encode_shape(res.model, data[1], steps=20, seed=3)
    b = D.encode_shape(res.model, data[1], steps=20, seed=3)
    assert res.model.net.to_bytes() == before
    np.testing.assert_array_equal(a.c, b.c)


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_encode_rejects_overflow():
    model = DecoderModel.create(4, (8,))
    model.net.layers[-1].bias[:] = np.float32(3e38)
    model.net.layers[-1].weight[:] = np.float32(3e38)
    data = make_dataset([("s", Sphere(0.5))], 20, 20, seed=0)[0]
    with pytest.raises(FloatingPointError):
        D.encode_shape(model, data, steps=3)


def test_field_bounded_to_ball():
    model = DecoderModel.create(4, (8,))
    f = D.decoder_field(model, np.zeros(4))
    far = np.array([[0.0, 0.0, 1.5]])
    assert f(far)[0] >= 0.5 - 1e-6


def test_checkpoint_roundtrip(tmp_path):
    model = DecoderModel.create(4, (8,), seed=1)
    model.save(tmp_path / "d.dnet")
    back = DecoderModel.load(tmp_path / "d.dnet")
    assert back.latent_dim == 4
    DenseNet.create([3, 2], ["identity"]).save(tmp_path / "bad.dnet")
    with pytest.raises(ValueError, match="not a decoder"):
        DecoderModel.load(tmp_path / "bad.dnet")
