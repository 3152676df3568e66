"""Map combined image features to decoder latent codes.

The mapper is a dense net with three tanh hidden layers and a linear head,
trained with L1 loss, Adam and early stopping on a validation slice.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from typing import Callable, NamedTuple, Sequence

import numpy as np

from .decoder import LatentCode
from .nn import AdamState, DenseNet, adam_step, l1_loss

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class CombinedFeature:
    z: np.ndarray

    @property
    def dim(self) -> int:
        return self.z.size


def concat_features(z_bar, z_clip) -> CombinedFeature:
    """``[z_bar, z_clip]``; the compressed block always comes first."""
    a = np.asarray(z_bar, dtype=np.float32).reshape(-1)
    b = np.asarray(z_clip, dtype=np.float32).reshape(-1)
    if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
        raise ValueError("cannot combine non-finite features")
    return CombinedFeature(np.concatenate([a, b]))


@dataclass
class TrainingPair:
    feature: CombinedFeature
    target: LatentCode
    split: str = "train"  # provenance tag checked by train_mapper
    view: str = ""


@dataclass
class MapperModel:
    net: DenseNet

    @classmethod
    def create(cls, in_dim: int, latent_dim: int, hidden: int | None = None, seed=0) -> "MapperModel":
        width = hidden or max(in_dim, latent_dim)
        sizes = [in_dim, width, width, width, latent_dim]
        return cls(DenseNet.create(sizes, ["tanh"] * 3 + ["identity"], seed=seed))

    @property
    def input_dim(self) -> int:
        return self.net.input_dim

    @property
    def latent_dim(self) -> int:
        return self.net.output_dim

    def save(self, path) -> None:
        self.net.save(path)

    @classmethod
    def load(cls, path) -> "MapperModel":
        return cls(DenseNet.load(path))


@dataclass
class TrainConfig:
    max_epochs: int = 1000
    patience: int = 5
    val_frac: float = 0.1
    batch_size: int = 32
    lr: float = 1e-3
    hidden: int | None = None
    loss: str = "L1"
    # z-score inputs and targets per dimension during fitting; both affine maps
    # are folded into the first layer and the head of the returned net
    standardize: bool = True

    def __post_init__(self):
        if self.patience < 1:
            raise ValueError(f"patience must be >= 1, got {self.patience}")
        if not 0 < self.val_frac < 1:
            raise ValueError(f"val_frac must be in (0, 1), got {self.val_frac}")
        if self.max_epochs < 1 or self.batch_size < 1:
            raise ValueError("max_epochs and batch_size must be positive")
        if self.loss != "L1":
            raise ValueError(f"the mapper trains on L1 loss only, got {self.loss!r}")


class EpochRecord(NamedTuple):
    epoch: int
    train_l1: float
    val_l1: float
    stopped: bool


class MapperResult(NamedTuple):
    model: MapperModel
    history: list  # EpochRecord per epoch
    best_epoch: int


def _stack(pairs: Sequence[TrainingPair]) -> tuple[np.ndarray, np.ndarray]:
    x = np.array([p.feature.z for p in pairs], dtype=np.float32)
    y = np.array([p.target.c for p in pairs], dtype=np.float32)
    return x, y


def _mean_l1(net: DenseNet, x, y) -> float:
    return float(np.abs(net.forward(x) - y).mean())


def _scaling(a: np.ndarray, enabled: bool) -> tuple[np.ndarray, np.ndarray]:
    if not enabled:
        return np.zeros(a.shape[1], np.float32), np.ones(a.shape[1], np.float32)
    mu = a.mean(axis=0)
    sd = a.std(axis=0)
    sd[sd < 1e-8] = 1.0
    return mu.astype(np.float32), sd.astype(np.float32)


def _fold(net: DenseNet, x_scale, y_scale) -> DenseNet:
    """Copy of ``net`` (trained on scaled data) that takes raw inputs and emits raw targets."""
    (xm, xs), (ym, ys) = x_scale, y_scale
    out = net.copy()
    first = out.layers[0]
    first.weight /= xs[None, :]
    first.bias -= first.weight @ xm
    head = out.layers[-1]
    head.weight *= ys[:, None]
    head.bias *= ys
    head.bias += ym
    return out


def train_mapper(
    pairs: Sequence[TrainingPair],
    config: TrainConfig | None = None,
    seed=0,
    val_loss_hook: Callable[[int, float], float] | None = None,
) -> MapperResult:
    """Fit the mapper on mean L1 latent error; returns the best-validation weights.

    Training stops once validation loss has not improved for ``patience``
    consecutive epochs.  ``val_loss_hook(epoch, val_loss)`` may replace the
    measured validation loss (used to script the stopping rule in tests).

    With ``standardize`` the net is fitted on per-dimension z-scored inputs
    and targets (raw features differ between shapes by less than Adam's step
    size resolves); losses are reported in latent units and the returned net
    maps raw features straight to latents.
    """
    cfg = config or TrainConfig()
    pairs = list(pairs)
    if len(pairs) < 10:
        raise ValueError(f"train_mapper needs at least 10 pairs, got {len(pairs)}")
    leaked = sorted({p.split for p in pairs if p.split != "train"})
    if leaked:
        raise ValueError(f"train_mapper received non-training pairs (splits {leaked})")
    if len({p.feature.dim for p in pairs}) != 1 or len({p.target.dim for p in pairs}) != 1:
        raise ValueError("inconsistent feature or latent dims among training pairs")

    x, y = _stack(pairs)
    rng = np.random.default_rng(seed)
    perm = rng.permutation(len(x))
    n_val = max(1, int(round(cfg.val_frac * len(x))))
    val, tr = perm[:n_val], perm[n_val:]
    x_scale = _scaling(x[tr], cfg.standardize)
    y_scale = _scaling(y[tr], cfg.standardize)
    x_fit = (x - x_scale[0]) / x_scale[1]
    y_fit = (y - y_scale[0]) / y_scale[1]
    model = MapperModel.create(x.shape[1], y.shape[1], cfg.hidden, seed=int(rng.integers(2**31)))
    params = model.net.parameters()
    state = AdamState.for_params(params, lr=cfg.lr)

    best_val = np.inf
    best_net = _fold(model.net, x_scale, y_scale)
    best_epoch = 0
    since = 0
    history: list[EpochRecord] = []
    for epoch in range(1, cfg.max_epochs + 1):
        order = tr[rng.permutation(len(tr))]
        total = 0.0
        for s in range(0, len(order), cfg.batch_size):
            idx = order[s : s + cfg.batch_size]
            pred, cache = model.net.forward_cached(x_fit[idx])
            loss, g = l1_loss(pred, y_fit[idx])
            if not np.isfinite(loss):
                raise FloatingPointError(f"mapper loss became {loss} in epoch {epoch}")
            total += float(np.abs(pred * y_scale[1] + y_scale[0] - y[idx]).mean()) * len(idx)
            grads, _ = model.net.backward(cache, g)
            adam_step(params, grads, state)
        folded = _fold(model.net, x_scale, y_scale)
        v = _mean_l1(folded, x[val], y[val])
        if val_loss_hook is not None:
            v = float(val_loss_hook(epoch, v))
        if v < best_val:
            best_val, best_epoch, since = v, epoch, 0
            best_net = folded
        else:
            since += 1
        stop = since >= cfg.patience
        history.append(EpochRecord(epoch, total / len(tr), v, stop))
        log.debug("mapper epoch %d: train %.5f val %.5f", epoch, total / len(tr), v)
        if stop:
            break
    return MapperResult(MapperModel(best_net), history, best_epoch)


def predict_latent(model: MapperModel, z) -> LatentCode:
    z = z.z if isinstance(z, CombinedFeature) else np.asarray(z, dtype=np.float32).reshape(-1)
    if z.size != model.input_dim:
        raise ValueError(f"feature dim {z.size} does not match mapper input {model.input_dim}")
    return LatentCode(model.net.forward(z))


def write_history_csv(history, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "train_l1", "val_l1", "stopped"])
        for r in history:
            w.writerow([r.epoch, f"{r.train_l1:.9g}", f"{r.val_l1:.9g}", int(r.stopped)])
