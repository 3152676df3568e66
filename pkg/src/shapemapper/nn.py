"""Small dense-network engine shared by the SDF decoder, the autoencoder and the mapper.

Layers store weights as ``(out, in)`` matrices and act on row-major batches,
``y = act(x @ W.T + b)``.  Backpropagation is written out by hand; there is no
graph machinery.  Training runs in float32, gradient checks in float64.
"""

from __future__ import annotations

import io
import struct
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

ACTIVATIONS = ("identity", "relu", "tanh")
_ACT_CODE = {name: i for i, name in enumerate(ACTIVATIONS)}

DNET_MAGIC = b"DNET"
DNET_VERSION = 1


@dataclass
class Layer:
    weight: np.ndarray  # (out, in)
    bias: np.ndarray  # (out,)
    activation: str = "identity"

    @property
    def in_dim(self) -> int:
        return self.weight.shape[1]

    @property
    def out_dim(self) -> int:
        return self.weight.shape[0]


def _activate(z: np.ndarray, activation: str) -> np.ndarray:
    if activation == "relu":
        return np.maximum(z, 0)
    if activation == "tanh":
        return np.tanh(z)
    return z


def _activation_grad(z: np.ndarray, a: np.ndarray, activation: str, grad: np.ndarray) -> np.ndarray:
    # relu'(0) is taken as 0
    if activation == "relu":
        return grad * (z > 0)
    if activation == "tanh":
        return grad * (1 - a * a)
    return grad


class DenseNet:
    """A chain of affine layers with elementwise activations."""

    def __init__(self, layers: Sequence[Layer]):
        if not layers:
            raise ValueError("DenseNet needs at least one layer")
        for k, layer in enumerate(layers):
            if layer.activation not in _ACT_CODE:
                raise ValueError(f"layer {k}: unknown activation {layer.activation!r}")
            if layer.weight.ndim != 2 or layer.bias.shape != (layer.out_dim,):
                raise ValueError(
                    f"layer {k}: weight {layer.weight.shape} and bias {layer.bias.shape} do not agree"
                )
            if k and layers[k - 1].out_dim != layer.in_dim:
                raise ValueError(
                    f"layer {k} expects {layer.in_dim} inputs but layer {k - 1} "
                    f"produces {layers[k - 1].out_dim}"
                )
            if not (np.all(np.isfinite(layer.weight)) and np.all(np.isfinite(layer.bias))):
                raise ValueError(f"layer {k}: non-finite parameters")
        self.layers = list(layers)

    @classmethod
    def create(
        cls,
        sizes: Sequence[int],
        activations: Sequence[str],
        seed: int = 0,
        dtype=np.float32,
    ) -> "DenseNet":
        """Glorot-uniform weights, zero biases.

        ``sizes`` lists every width including input and output, so a net with
        ``len(sizes) - 1`` layers is built; ``activations`` has one entry per layer.
        """
        if len(activations) != len(sizes) - 1:
            raise ValueError(f"{len(sizes) - 1} layers but {len(activations)} activations")
        rng = np.random.default_rng(seed)
        layers = []
        for fan_in, fan_out, act in zip(sizes[:-1], sizes[1:], activations):
            limit = np.sqrt(6.0 / (fan_in + fan_out))
            w = rng.uniform(-limit, limit, size=(fan_out, fan_in)).astype(dtype)
            layers.append(Layer(w, np.zeros(fan_out, dtype=dtype), act))
        return cls(layers)

    @property
    def input_dim(self) -> int:
        return self.layers[0].in_dim

    @property
    def output_dim(self) -> int:
        return self.layers[-1].out_dim

    @property
    def dtype(self):
        return self.layers[0].weight.dtype

    def parameters(self) -> list[np.ndarray]:
        """Flat list ``[W0, b0, W1, b1, ...]``; arrays are live views."""
        out = []
        for layer in self.layers:
            out.extend((layer.weight, layer.bias))
        return out

    def copy(self) -> "DenseNet":
        return DenseNet([Layer(l.weight.copy(), l.bias.copy(), l.activation) for l in self.layers])

    def astype(self, dtype) -> "DenseNet":
        return DenseNet(
            [Layer(l.weight.astype(dtype), l.bias.astype(dtype), l.activation) for l in self.layers]
        )

    def _check_input(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x)
        if x.shape[-1:] != (self.input_dim,) or x.ndim > 2:
            raise ValueError(f"expected input of dim {self.input_dim}, got shape {x.shape}")
        return x

    def forward(self, x: np.ndarray) -> np.ndarray:
        x = self._check_input(x)
        single = x.ndim == 1
        a = np.atleast_2d(x).astype(self.dtype, copy=False)
        for layer in self.layers:
            a = _activate(a @ layer.weight.T + layer.bias, layer.activation)
        return a[0] if single else a

    __call__ = forward

    def forward_cached(self, x: np.ndarray) -> tuple[np.ndarray, list]:
        """Forward pass that keeps what :meth:`backward` needs."""
        x = np.atleast_2d(self._check_input(x)).astype(self.dtype, copy=False)
        cache = []
        a = x
        for layer in self.layers:
            z = a @ layer.weight.T + layer.bias
            out = _activate(z, layer.activation)
            cache.append((a, z, out))
            a = out
        return a, cache

    def backward(self, cache: list, grad_out: np.ndarray) -> tuple[list[np.ndarray], np.ndarray]:
        """Return (parameter gradients in :meth:`parameters` order, dLoss/dInput)."""
        if len(cache) != len(self.layers):
            raise ValueError(f"cache holds {len(cache)} layers, net has {len(self.layers)}")
        grad = np.atleast_2d(grad_out)
        if grad.shape != cache[-1][2].shape:
            raise ValueError(f"output gradient {grad.shape} does not match output {cache[-1][2].shape}")
        grads: list[np.ndarray] = [None] * (2 * len(self.layers))  # type: ignore[list-item]
        for k in range(len(self.layers) - 1, -1, -1):
            layer = self.layers[k]
            a_in, z, a_out = cache[k]
            dz = _activation_grad(z, a_out, layer.activation, grad)
            grads[2 * k] = dz.T @ a_in
            grads[2 * k + 1] = dz.sum(axis=0)
            grad = dz @ layer.weight
        return grads, grad

    def to_bytes(self) -> bytes:
        buf = io.BytesIO()
        buf.write(DNET_MAGIC)
        buf.write(struct.pack("<HI", DNET_VERSION, len(self.layers)))
        for layer in self.layers:
            buf.write(struct.pack("<IIB", layer.in_dim, layer.out_dim, _ACT_CODE[layer.activation]))
            buf.write(np.ascontiguousarray(layer.weight, dtype="<f4").tobytes())
            buf.write(np.ascontiguousarray(layer.bias, dtype="<f4").tobytes())
        return buf.getvalue()

    @classmethod
    def from_bytes(cls, data: bytes) -> "DenseNet":
        if data[:4] != DNET_MAGIC:
            raise ValueError("not a DNET checkpoint")
        version, count = struct.unpack_from("<HI", data, 4)
        if version != DNET_VERSION:
            raise ValueError(f"unsupported DNET version {version}")
        off = 10
        layers = []
        for _ in range(count):
            n_in, n_out, code = struct.unpack_from("<IIB", data, off)
            off += 9
            w = np.frombuffer(data, "<f4", n_in * n_out, off).reshape(n_out, n_in)
            off += 4 * n_in * n_out
            b = np.frombuffer(data, "<f4", n_out, off)
            off += 4 * n_out
            layers.append(Layer(w.astype(np.float32), b.astype(np.float32), ACTIVATIONS[code]))
        if off != len(data):
            raise ValueError(f"trailing bytes in DNET checkpoint ({len(data) - off})")
        return cls(layers)

    def save(self, path) -> None:
        with open(path, "wb") as fh:
            fh.write(self.to_bytes())

    @classmethod
    def load(cls, path) -> "DenseNet":
        with open(path, "rb") as fh:
            return cls.from_bytes(fh.read())


# ---------------------------------------------------------------------------
# losses: mean reduction over batch and output dims
# ---------------------------------------------------------------------------

def _l1_value(pred, target):
    return np.abs(pred - target).mean()


def _l2_value(pred, target):
    diff = pred - target
    return (diff * diff).mean()


def l1_loss(pred: np.ndarray, target: np.ndarray) -> tuple[float, np.ndarray]:
    diff = pred - target
    return float(np.abs(diff).mean()), np.sign(diff) / diff.size


def l2_loss(pred: np.ndarray, target: np.ndarray) -> tuple[float, np.ndarray]:
    diff = pred - target
    return float((diff * diff).mean()), 2 * diff / diff.size


LOSSES: dict[str, Callable] = {"L1": l1_loss, "L2": l2_loss}
_LOSS_VALUES: dict[str, Callable] = {"L1": _l1_value, "L2": _l2_value}


def get_loss(kind: str) -> Callable:
    try:
        return LOSSES[kind]
    except KeyError:
        raise ValueError(f"unknown loss {kind!r}; choose from {sorted(LOSSES)}") from None


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------

@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    t: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_params(cls, params: Sequence[np.ndarray], **hyper) -> "AdamState":
        return cls([np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params], **hyper)


def adam_step(params: Sequence[np.ndarray], grads: Sequence[np.ndarray], state: AdamState):
    """One bias-corrected Adam update, applied in place.  Returns (params, state)."""
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ValueError(f"{len(params)} params, {len(grads)} grads, {len(state.m)} moments")
    for p, g in zip(params, grads):
        if p.shape != g.shape:
            raise ValueError(f"gradient shape {g.shape} != parameter shape {p.shape}")
        if not np.all(np.isfinite(g)):
            raise ValueError("non-finite gradient passed to adam_step")
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    corr1 = 1 - b1**state.t
    corr2 = 1 - b2**state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        g = g.astype(p.dtype, copy=False)
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * g * g
        m_hat = m / corr1
        v_hat = v / corr2
        p -= (state.lr * m_hat / (np.sqrt(v_hat) + state.eps)).astype(p.dtype, copy=False)
    return params, state


# ---------------------------------------------------------------------------
# gradient checking
# ---------------------------------------------------------------------------

def relative_error(analytic, numeric, floor=1e-8):
    # below ``floor`` the comparison is effectively absolute: an exactly zero
    # gradient (e.g. cancelling L1 signs) against ~1e-15 of rounding is a match
    return np.abs(analytic - numeric) / np.maximum(floor, np.abs(analytic) + np.abs(numeric))


def _tail(layers, k, z):
    """Finish a forward pass given the pre-activation ``z`` of layer ``k``.

    Returns the output and the relu on/off masks from layer ``k`` onward.
    """
    masks = []
    for j in range(k, len(layers)):
        layer = layers[j]
        if j > k:
            z = a @ layer.weight.T + layer.bias
        if layer.activation == "relu":
            masks.append(z > 0)
        a = _activate(z, layer.activation)
    return a, masks


def grad_check(
    net: DenseNet,
    x: np.ndarray,
    target: np.ndarray,
    loss: str = "L2",
    h: float = 1e-5,
    wrt_input: bool = False,
) -> float:
    """Max relative error between backprop and central differences.

    Analytic gradients come from a float64 copy of ``net``.  The difference
    quotients are evaluated in extended precision and only the layers downstream
    of a perturbed parameter are recomputed, so cancellation does not swamp small
    gradients.  Any parameter whose +-h perturbation switches a relu on or off,
    or flips the sign of an L1 residual, is skipped.  ``wrt_input`` also checks dLoss/dInput.
    """
    loss_fn = get_loss(loss)
    value_fn = _LOSS_VALUES[loss]
    net64 = net.astype(np.float64)
    x64 = np.atleast_2d(np.asarray(x, dtype=np.float64))
    target64 = np.asarray(target, dtype=np.float64).reshape(x64.shape[0], net.output_dim)
    pred, cache = net64.forward_cached(x64)
    _, dout = loss_fn(pred, target64)
    grads, dx = net64.backward(cache, dout)

    ext = np.longdouble
    layers = [Layer(l.weight.astype(ext), l.bias.astype(ext), l.activation) for l in net64.layers]
    target_x = target64.astype(ext)
    acts = [x64.astype(ext)]
    pre = []
    for layer in layers:
        pre.append(acts[-1] @ layer.weight.T + layer.bias)
        acts.append(_activate(pre[-1], layer.activation))
    base_masks = [_tail(layers, k, pre[k])[1] for k in range(len(layers))]
    base_sign = np.sign(acts[-1] - target_x)

    def diff_quotient(k, z_plus, z_minus):
        out_p, m_p = _tail(layers, k, z_plus)
        out_m, m_m = _tail(layers, k, z_minus)
        for a, b, c in zip(base_masks[k], m_p, m_m):
            if np.any(a != b) or np.any(a != c):
                return None
        # the L1 kink at pred == target is skipped the same way
        if loss == "L1" and (np.any(np.sign(out_p - target_x) != base_sign) or np.any(np.sign(out_m - target_x) != base_sign)):
            return None
        return float((value_fn(out_p, target_x) - value_fn(out_m, target_x)) / (2 * ext(h)))

    worst = 0.0
    for k, layer in enumerate(layers):
        a_in, z = acts[k], pre[k]
        gw, gb = grads[2 * k], grads[2 * k + 1]
        for i in range(layer.out_dim):
            for j in range(layer.in_dim + 1):
                # column j == in_dim is the bias
                step = ext(h) if j == layer.in_dim else ext(h) * a_in[:, j]
                zp = z.copy()
                zm = z.copy()
                zp[:, i] += step
                zm[:, i] -= step
                numeric = diff_quotient(k, zp, zm)
                if numeric is None:
                    continue
                analytic = gb[i] if j == layer.in_dim else gw[i, j]
                worst = max(worst, float(relative_error(analytic, numeric)))
    if wrt_input:
        first = layers[0]
        for b in range(x64.shape[0]):
            for j in range(net.input_dim):
                zp = pre[0].copy()
                zm = pre[0].copy()
                zp[b] += ext(h) * first.weight[:, j]
                zm[b] -= ext(h) * first.weight[:, j]
                numeric = diff_quotient(0, zp, zm)
                if numeric is None:
                    continue
                worst = max(worst, float(relative_error(dx[b, j], numeric)))
    return worst
