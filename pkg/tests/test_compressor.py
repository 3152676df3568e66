import numpy as np
import pytest

from shapemapper import compressor as C
from shapemapper.compressor import AutoencoderModel
from shapemapper.features import BagFeature


def simplex_rows(n=40, d=24, seed=0):
    x = np.random.default_rng(seed).uniform(size=(n, d))
    return x / x.sum(1, keepdims=True)


def test_create_shapes():
    m = AutoencoderModel.create(80, 8)
    assert m.input_dim == 80 and m.bottleneck == 8
    assert m.encoder.layers[0].weight.shape == (round(np.sqrt(80 * 8)), 80)
    assert [l.activation for l in m.encoder.layers] == ["relu", "relu"]
    assert [l.activation for l in m.decoder.layers] == ["relu", "identity"]
    with pytest.raises(ValueError):
        AutoencoderModel.create(8, 8)


def test_compress_dims_zero_and_purity():
    m = AutoencoderModel.create(24, 6, seed=1)
    before = m.to_bytes()
    assert C.compress(m, np.zeros(24)).shape == (6,)
    assert not C.compress(m, np.zeros(24)).any()
    z = simplex_rows(1)[0]
    np.testing.assert_array_equal(C.compress(m, z), C.compress(m, z))
    assert m.to_bytes() == before
    bag = BagFeature(z, 2, 12)
    np.testing.assert_array_equal(C.compress(m, bag), C.compress(m, z))
    with pytest.raises(ValueError, match="does not match"):
        C.compress(m, np.zeros(5))


def test_training_lowers_loss_and_beats_mean():
    x = simplex_rows()
    res = C.train_autoencoder(x, epochs=100, seed=0, bottleneck=6, batch_size=8)
    assert res.history[-1] < res.history[0]
    recon = res.model.reconstruct(x)
    mse = ((recon - x) ** 2).mean()
    baseline = ((x - x.mean(0)) ** 2).mean()
    assert mse <= baseline


def test_repeated_vector_fits():
    x = np.tile(simplex_rows(1)[0], (8, 1))
    res = C.train_autoencoder(x, epochs=100, seed=0, bottleneck=4, batch_size=8, lr=1e-2)
    assert res.history[-1] < 1e-4


def test_deterministic():
    x = simplex_rows(20)
    a = C.train_autoencoder(x, epochs=5, seed=3, bottleneck=4)
    b = C.train_autoencoder(x, epochs=5, seed=3, bottleneck=4)
    assert a.model.to_bytes() == b.model.to_bytes()
    assert a.history == b.history


def test_input_errors():
    with pytest.raises(ValueError, match="at least 2"):
        C.train_autoencoder([np.ones(4)])
    with pytest.raises(ValueError, match="inconsistent"):
        C.train_autoencoder([np.ones(4), np.ones(5)])


def test_checkpoint_layout(tmp_path):
    m = AutoencoderModel.create(24, 6, seed=2)
    m.save(tmp_path / "ae.aenc")
    raw = (tmp_path / "ae.aenc").read_bytes()
    assert raw[:4] == b"AENC"
    assert int.from_bytes(raw[6:8], "little") == 2
    back = AutoencoderModel.load(tmp_path / "ae.aenc")
    x = simplex_rows(3)
    np.testing.assert_array_equal(back.reconstruct(x), m.reconstruct(x))
    with pytest.raises(ValueError):
        AutoencoderModel.from_bytes(b"DNET" + raw[4:])
