"""Latent-conditioned SDF decoder, auto-decoder training and latent encoding.

The decoder is a plain MLP on ``[c, x, y, z]``.  Training optimizes the network
and one latent code per shape jointly; encoding freezes the network and fits a
fresh latent to a shape's SDF samples.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

from .mesher import Mesh, eval_grid, marching_cubes
from .nn import AdamState, DenseNet, adam_step
from .shapes import SdfSampleSet

log = logging.getLogger(__name__)


@dataclass
class LatentCode:
    c: np.ndarray
    shape_id: str = ""

    def __post_init__(self):
        self.c = np.asarray(self.c, dtype=np.float32).reshape(-1)
        if not np.all(np.isfinite(self.c)):
            raise ValueError(f"non-finite latent code for {self.shape_id!r}")

    @property
    def dim(self) -> int:
        return self.c.size


def enforce_latent_bound(c: np.ndarray, shape_id: str = "") -> np.ndarray:
    """Rescale ``c`` onto the ball of radius 10*sqrt(d) if it left it."""
    limit = 10.0 * np.sqrt(c.size)
    norm = float(np.linalg.norm(c))
    if norm > limit:
        log.warning("latent %s has norm %.3g > %.3g; rescaling", shape_id, norm, limit)
        return (c * (limit / norm)).astype(c.dtype)
    return c


@dataclass
class DecoderModel:
    net: DenseNet

    @classmethod
    def create(cls, latent_dim: int = 32, hidden: Sequence[int] = (128, 128, 128, 128), seed: int = 0):
        sizes = [latent_dim + 3, *hidden, 1]
        acts = ["relu"] * len(hidden) + ["identity"]
        return cls(DenseNet.create(sizes, acts, seed=seed))

    @property
    def latent_dim(self) -> int:
        return self.net.input_dim - 3

    def save(self, path) -> None:
        self.net.save(path)

    @classmethod
    def load(cls, path) -> "DecoderModel":
        net = DenseNet.load(path)
        if net.output_dim != 1 or net.input_dim < 4:
            raise ValueError(f"{path}: not a decoder checkpoint ({net.input_dim} -> {net.output_dim})")
        return cls(net)


def _inputs(model: DecoderModel, c: np.ndarray, points: np.ndarray) -> np.ndarray:
    points = np.asarray(points, dtype=np.float32).reshape(-1, 3)
    c = np.asarray(c, dtype=np.float32).reshape(-1)
    if c.size != model.latent_dim:
        raise ValueError(f"latent has dim {c.size}, decoder expects {model.latent_dim}")
    return np.concatenate([np.broadcast_to(c, (len(points), c.size)), points], axis=1)


def decode(model: DecoderModel, c, points, chunk: int = 1 << 16) -> np.ndarray:
    """Predicted SDF at each of ``points`` for latent ``c``."""
    c = c.c if isinstance(c, LatentCode) else c
    points = np.asarray(points).reshape(-1, 3)
    out = np.empty(len(points), dtype=np.float32)
    for s in range(0, len(points), chunk):
        out[s : s + chunk] = model.net.forward(_inputs(model, c, points[s : s + chunk]))[:, 0]
    return out


def decoder_field(model: DecoderModel, c, bound_to_ball: bool = True):
    """A ``points -> sdf`` callable for meshing or rendering.

    With ``bound_to_ball`` the prediction is intersected with the unit ball,
    where every training shape lives and where training samples were drawn.
    """
    c = c.c if isinstance(c, LatentCode) else np.asarray(c, dtype=np.float32)

    def field_fn(p):
        p = np.asarray(p, dtype=np.float64).reshape(-1, 3)
        d = decode(model, c, p).astype(np.float64)
        if bound_to_ball:
            d = np.maximum(d, np.linalg.norm(p, axis=1) - 1.0)
        return d

    return field_fn


def reconstruct_mesh(model: DecoderModel, c, resolution: int = 64) -> Mesh:
    return marching_cubes(eval_grid(decoder_field(model, c), resolution))


@dataclass
class AutoDecoderConfig:
    latent_dim: int = 32
    hidden: tuple = (128, 128, 128, 128)
    epochs: int = 300
    batch_size: int = 1024
    lr: float = 1e-3
    latent_lr: float = 1e-3
    latent_reg: float = 1e-4
    latent_init_std: float = 0.01
    seed: int = 0


class AutoDecoderResult(NamedTuple):
    model: DecoderModel
    latents: dict  # shape_id -> LatentCode
    history: list  # epoch-mean L1 loss


def _check_loss(value: float, where: str) -> None:
    if not np.isfinite(value):
        raise FloatingPointError(f"loss became {value} at {where}")


def train_autodecoder(dataset: Sequence[SdfSampleSet], config: AutoDecoderConfig | None = None) -> AutoDecoderResult:
    """Jointly fit decoder weights and one latent per shape with Adam on L1 SDF error."""
    cfg = config or AutoDecoderConfig()
    if not dataset:
        raise ValueError("train_autodecoder needs at least one sample set")
    for s in dataset:
        if len(s) == 0:
            raise ValueError(f"empty sample set for shape {s.shape_id!r}")
    rng = np.random.default_rng(cfg.seed)
    model = DecoderModel.create(cfg.latent_dim, cfg.hidden, seed=int(rng.integers(2**31)))
    latents = (rng.normal(size=(len(dataset), cfg.latent_dim)) * cfg.latent_init_std).astype(np.float32)

    points = np.concatenate([s.points for s in dataset]).astype(np.float32)
    targets = np.concatenate([s.sdf for s in dataset]).astype(np.float32)[:, None]
    owner = np.concatenate([np.full(len(s), k) for k, s in enumerate(dataset)])

    params = model.net.parameters()
    net_state = AdamState.for_params(params, lr=cfg.lr)
    lat_state = AdamState.for_params([latents], lr=cfg.latent_lr)
    history = []
    n = len(points)
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            who = owner[idx]
            x = np.concatenate([latents[who], points[idx]], axis=1)
            pred, cache = model.net.forward_cached(x)
            diff = pred - targets[idx]
            loss = float(np.abs(diff).mean())
            _check_loss(loss, f"epoch {epoch + 1}, batch at {start}")
            total += loss * len(idx)
            grads, dx = model.net.backward(cache, np.sign(diff) / diff.size)
            g_lat = np.zeros_like(latents)
            np.add.at(g_lat, who, dx[:, : cfg.latent_dim])
            counts = np.bincount(who, minlength=len(latents)).astype(np.float32)
            g_lat += (2 * cfg.latent_reg / len(idx)) * counts[:, None] * latents
            adam_step(params, grads, net_state)
            adam_step([latents], [g_lat], lat_state)
        history.append(total / n)
        log.debug("auto-decoder epoch %d: L1 %.5f", epoch + 1, history[-1])
    table = {
        s.shape_id: LatentCode(enforce_latent_bound(latents[k].copy(), s.shape_id), s.shape_id)
        for k, s in enumerate(dataset)
    }
    return AutoDecoderResult(model, table, history)


def sample_loss(model: DecoderModel, c, samples: SdfSampleSet) -> float:
    """Mean L1 between decoded and ground-truth SDF."""
    return float(np.abs(decode(model, c, samples.points) - samples.sdf.astype(np.float32)).mean())


def encode_shape(
    model: DecoderModel,
    samples: SdfSampleSet,
    steps: int = 500,
    seed=0,
    lr: float = 1e-3,
    latent_reg: float = 1e-4,
    init_std: float = 0.01,
    history: list | None = None,
) -> LatentCode:
    """Fit a latent to ``samples`` with the decoder frozen; returns the best iterate.

    ``history``, if given, receives the best-so-far loss after each step.
    """
    if len(samples) == 0:
        raise ValueError("encode_shape needs a nonempty sample set")
    rng = np.random.default_rng(seed)
    d = model.latent_dim
    c = (rng.normal(size=d) * init_std).astype(np.float32)
    pts = np.asarray(samples.points, dtype=np.float32)
    target = np.asarray(samples.sdf, dtype=np.float32)[:, None]
    state = AdamState.for_params([c], lr=lr)
    best_c = c.copy()
    best = np.inf
    for step in range(steps):
        x = np.concatenate([np.broadcast_to(c, (len(pts), d)), pts], axis=1)
        pred, cache = model.net.forward_cached(x)
        diff = pred - target
        loss = float(np.abs(diff).mean() + latent_reg * float(c @ c))
        _check_loss(loss, f"encoding step {step + 1} of {samples.shape_id!r}")
        if loss < best:
            best = loss
            best_c = c.copy()
        if history is not None:
            history.append(best)
        _, dx = model.net.backward(cache, np.sign(diff) / diff.size)
        g = dx[:, :d].sum(axis=0) + 2 * latent_reg * c
        adam_step([c], [g.astype(np.float32)], state)
    return LatentCode(enforce_latent_bound(best_c, samples.shape_id), samples.shape_id)
