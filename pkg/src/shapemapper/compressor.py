"""Dense autoencoder that compresses bag features to a bottleneck code.

Checkpoint layout, little-endian::

    "AENC" version:u16 count:u16(=2)
    count x ( offset:u64 length:u64 )   offsets from file start
    encoder DNET blob, decoder DNET blob
"""

from __future__ import annotations

import logging
import struct
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .features import BagFeature
from .nn import AdamState, DenseNet, adam_step, l2_loss

log = logging.getLogger(__name__)

AE_MAGIC = b"AENC"
AE_VERSION = 1


@dataclass
class AutoencoderModel:
    encoder: DenseNet  # D -> hidden -> bottleneck
    decoder: DenseNet  # bottleneck -> hidden -> D

    def __post_init__(self):
        e, d = self.encoder, self.decoder
        if e.input_dim != d.output_dim or e.output_dim != d.input_dim:
            raise ValueError(
                f"encoder {e.input_dim}->{e.output_dim} does not mirror decoder {d.input_dim}->{d.output_dim}"
            )
        if e.output_dim >= e.input_dim:
            raise ValueError(f"bottleneck {e.output_dim} must be smaller than input {e.input_dim}")

    @property
    def input_dim(self) -> int:
        return self.encoder.input_dim

    @property
    def bottleneck(self) -> int:
        return self.encoder.output_dim

    @classmethod
    def create(cls, dim: int, bottleneck: int = 32, hidden: int | None = None, seed=0) -> "AutoencoderModel":
        # width not given anywhere; geometric mean of the two ends
        hidden = hidden or max(1, int(round(np.sqrt(dim * bottleneck))))
        rng = np.random.default_rng(seed)
        s1, s2 = (int(x) for x in rng.integers(2**31, size=2))
        enc = DenseNet.create([dim, hidden, bottleneck], ["relu", "relu"], seed=s1)
        dec = DenseNet.create([bottleneck, hidden, dim], ["relu", "identity"], seed=s2)
        return cls(enc, dec)

    def reconstruct(self, x) -> np.ndarray:
        return self.decoder.forward(self.encoder.forward(x))

    def to_bytes(self) -> bytes:
        blobs = [self.encoder.to_bytes(), self.decoder.to_bytes()]
        head = AE_MAGIC + struct.pack("<HH", AE_VERSION, len(blobs))
        off = len(head) + 16 * len(blobs)
        index = b""
        for b in blobs:
            index += struct.pack("<QQ", off, len(b))
            off += len(b)
        return head + index + b"".join(blobs)

    @classmethod
    def from_bytes(cls, data: bytes) -> "AutoencoderModel":
        if data[:4] != AE_MAGIC:
            raise ValueError(f"not an autoencoder checkpoint (magic {data[:4]!r})")
        version, count = struct.unpack_from("<HH", data, 4)
        if version != AE_VERSION or count != 2:
            raise ValueError(f"unsupported autoencoder checkpoint (version {version}, {count} nets)")
        nets = []
        for k in range(count):
            off, length = struct.unpack_from("<QQ", data, 8 + 16 * k)
            if off + length > len(data):
                raise ValueError("truncated autoencoder checkpoint")
            nets.append(DenseNet.from_bytes(data[off : off + length]))
        return cls(*nets)

    def save(self, path) -> None:
        with open(path, "wb") as fh:
            fh.write(self.to_bytes())

    @classmethod
    def load(cls, path) -> "AutoencoderModel":
        with open(path, "rb") as fh:
            return cls.from_bytes(fh.read())


class AutoencoderResult(NamedTuple):
    model: AutoencoderModel
    history: list  # epoch-mean L2 loss


def _matrix(features) -> np.ndarray:
    rows = [f.z_vit if isinstance(f, BagFeature) else np.asarray(f) for f in features]
    dims = {np.asarray(r).size for r in rows}
    if len(dims) > 1:
        raise ValueError(f"inconsistent feature dims {sorted(dims)}")
    x = np.array([np.asarray(r, dtype=np.float32).reshape(-1) for r in rows])
    if not np.all(np.isfinite(x)):
        raise ValueError("non-finite feature")
    return x


def train_autoencoder(
    features,
    epochs: int = 100,
    seed=0,
    bottleneck: int = 32,
    hidden: int | None = None,
    batch_size: int = 32,
    lr: float = 1e-3,
) -> AutoencoderResult:
    """Fit encoder and decoder jointly on mean squared reconstruction error with Adam."""
    x = _matrix(features)
    if len(x) < 2:
        raise ValueError(f"train_autoencoder needs at least 2 feature vectors, got {len(x)}")
    rng = np.random.default_rng(seed)
    model = AutoencoderModel.create(x.shape[1], bottleneck, hidden, seed=int(rng.integers(2**31)))
    params = model.encoder.parameters() + model.decoder.parameters()
    state = AdamState.for_params(params, lr=lr)
    history = []
    for epoch in range(epochs):
        order = rng.permutation(len(x))
        total = 0.0
        for s in range(0, len(x), batch_size):
            xb = x[order[s : s + batch_size]]
            code, enc_cache = model.encoder.forward_cached(xb)
            out, dec_cache = model.decoder.forward_cached(code)
            loss, g = l2_loss(out, xb)
            if not np.isfinite(loss):
                raise FloatingPointError(f"autoencoder loss became {loss} in epoch {epoch + 1}")
            total += loss * len(xb)
            g_dec, g_code = model.decoder.backward(dec_cache, g)
            g_enc, _ = model.encoder.backward(enc_cache, g_code)
            adam_step(params, g_enc + g_dec, state)
        history.append(total / len(x))
        log.debug("autoencoder epoch %d: L2 %.6f", epoch + 1, history[-1])
    return AutoencoderResult(model, history)


def compress(model: AutoencoderModel, z_vit) -> np.ndarray:
    """Bottleneck code of one feature (or a batch); the model is not modified."""
    z = z_vit.z_vit if isinstance(z_vit, BagFeature) else np.asarray(z_vit)
    if z.shape[-1] != model.input_dim:
        raise ValueError(f"feature dim {z.shape[-1]} does not match autoencoder input {model.input_dim}")
    return model.encoder.forward(z)
