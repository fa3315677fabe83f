"""Small numpy neural-network kit with hand-written backpropagation.

Layers are stateless descriptors. Parameters live in a flat, ordered
``ModelParams`` mapping (``"fn.0.W"`` style names) that is passed to every
``forward``/``backward`` call, so the same layer can be applied many times
(weight sharing across graph nodes and unrolled iterations) while gradients
accumulate into one mapping of the same layout.

``forward`` returns ``(output, cache)``; ``backward(P, cache, d_out, G)``
adds parameter gradients into ``G`` and returns the input gradient.
"""

from __future__ import annotations

import logging
import struct
from collections import Counter, OrderedDict
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

__all__ = [
    "ModelParams",
    "Dense",
    "Conv2d",
    "GRUCell",
    "ReLU",
    "Dropout",
    "Sequential",
    "relu",
    "sigmoid",
    "softmax",
    "softmax_backward",
    "cross_entropy",
    "cross_entropy_backward",
    "mse",
    "mse_backward",
    "AdamState",
    "adam_step",
    "zeros_like_params",
    "save_params",
    "load_params",
    "diagnostics",
    "WeightFileError",
]

log = logging.getLogger(__name__)

PROB_CLAMP = 1e-12

#: running counters for clamped probabilities and skipped optimiser steps
diagnostics: Counter = Counter()


class ModelParams(OrderedDict):
    """Ordered name -> float64 array mapping."""

    def copy(self) -> "ModelParams":
        return ModelParams((k, v.copy()) for k, v in self.items())

    def n_parameters(self) -> int:
        return int(sum(v.size for v in self.values()))


def zeros_like_params(P) -> ModelParams:
    return ModelParams((k, np.zeros_like(v)) for k, v in P.items())


def _glorot(rng, shape, fan_in, fan_out):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


def _acc(G, name, value):
    if G is not None:
        G[name] += value


# ---------------------------------------------------------------- activations

def relu(x):
    return np.maximum(x, 0.0)


def sigmoid(x):
    # tanh form never overflows
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def softmax(z, axis=-1):
    z = z - z.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def softmax_backward(p, dp, axis=-1):
    return p * (dp - (dp * p).sum(axis=axis, keepdims=True))


# ---------------------------------------------------------------- losses

def cross_entropy(p, labels):
    """Sum of ``-log p[label]`` over all rows of ``p`` (last axis = classes)."""
    p = np.asarray(p)
    picked = np.take_along_axis(p, np.asarray(labels)[..., None], axis=-1)[..., 0]
    small = picked < PROB_CLAMP
    if np.any(small):
        diagnostics["ce_clamped"] += int(small.sum())
        picked = np.maximum(picked, PROB_CLAMP)
    return float(-np.log(picked).sum())


def cross_entropy_backward(p, labels):
    grad = np.zeros_like(p)
    labels = np.asarray(labels)[..., None]
    picked = np.maximum(np.take_along_axis(p, labels, axis=-1), PROB_CLAMP)
    np.put_along_axis(grad, labels, -1.0 / picked, axis=-1)
    return grad


def mse(pred, label):
    return float(np.mean((np.asarray(pred) - np.asarray(label)) ** 2))


def mse_backward(pred, label):
    diff = np.asarray(pred) - np.asarray(label)
    return 2.0 * diff / diff.size


# ---------------------------------------------------------------- layers

class Dense:
    def __init__(self, name: str, n_in: int, n_out: int):
        self.name, self.n_in, self.n_out = name, n_in, n_out

    def init(self, rng):
        return {
            f"{self.name}.W": _glorot(rng, (self.n_in, self.n_out), self.n_in, self.n_out),
            f"{self.name}.b": np.zeros(self.n_out),
        }

    def forward(self, P, x, **_):
        if x.shape[-1] != self.n_in:
            raise ValueError(f"{self.name}: expected {self.n_in} input features, got {x.shape[-1]}")
        return x @ P[f"{self.name}.W"] + P[f"{self.name}.b"], x

    def backward(self, P, x, dy, G):
        _acc(G, f"{self.name}.W", x.reshape(-1, self.n_in).T @ dy.reshape(-1, self.n_out))
        _acc(G, f"{self.name}.b", dy.reshape(-1, self.n_out).sum(axis=0))
        return dy @ P[f"{self.name}.W"].T


class ReLU:
    def init(self, rng):
        return {}

    def forward(self, P, x, **_):
        mask = x > 0
        return x * mask, mask

    def backward(self, P, mask, dy, G):
        return dy * mask


class Dropout:
    """Inverted dropout; identity unless ``training`` is set."""

    def __init__(self, p: float):
        if not 0.0 <= p < 1.0:
            raise ValueError(f"dropout probability must lie in [0, 1), got {p}")
        self.p = p

    def init(self, rng):
        return {}

    def forward(self, P, x, training=False, rng=None, **_):
        if not training or self.p == 0.0:
            return x, None
        mask = (rng.random(x.shape) >= self.p) / (1.0 - self.p)
        return x * mask, mask

    def backward(self, P, mask, dy, G):
        return dy if mask is None else dy * mask


class Conv2d:
    """Cross-correlation on ``(batch, channels, height, width)`` arrays."""

    def __init__(self, name: str, c_in: int, c_out: int, kernel: int, padding: int = 0,
                 input_grad: bool = True):
        self.name, self.c_in, self.c_out = name, c_in, c_out
        self.kernel, self.padding = kernel, padding
        # the network's first layer never needs d(loss)/d(input)
        self.input_grad = input_grad

    def init(self, rng):
        k = self.kernel
        fan_in, fan_out = self.c_in * k * k, self.c_out * k * k
        return {
            f"{self.name}.W": _glorot(rng, (self.c_out, self.c_in, k, k), fan_in, fan_out),
            f"{self.name}.b": np.zeros(self.c_out),
        }

    @staticmethod
    def _im2col(x, k):
        # (B, C, H, W) -> (B*H'*W', C*k*k) with H' = H - k + 1
        B = x.shape[0]
        win = sliding_window_view(x, (k, k), axis=(2, 3))
        h, w = win.shape[2], win.shape[3]
        return win.transpose(0, 2, 3, 1, 4, 5).reshape(B * h * w, -1), (B, h, w)

    def forward(self, P, x, **_):
        if x.ndim != 4 or x.shape[1] != self.c_in:
            raise ValueError(f"{self.name}: expected (B, {self.c_in}, H, W), got {x.shape}")
        p = self.padding
        xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p))) if p else x
        cols, (B, h, w) = self._im2col(xp, self.kernel)
        W = P[f"{self.name}.W"].reshape(self.c_out, -1)
        out = (cols @ W.T + P[f"{self.name}.b"]).reshape(B, h, w, self.c_out)
        return out.transpose(0, 3, 1, 2), cols

    def backward(self, P, cols, dy, G):
        k, p = self.kernel, self.padding
        dy2 = dy.transpose(0, 2, 3, 1).reshape(-1, self.c_out)
        _acc(G, f"{self.name}.W", (dy2.T @ cols).reshape(self.c_out, self.c_in, k, k))
        _acc(G, f"{self.name}.b", dy2.sum(axis=0))
        if not self.input_grad:
            return None
        # input gradient = full correlation of dy with the flipped, transposed kernel
        dyp = np.pad(dy, ((0, 0), (0, 0), (k - 1, k - 1), (k - 1, k - 1))) if k > 1 else dy
        dcols, (B, h, w) = self._im2col(dyp, k)
        flipped = P[f"{self.name}.W"][:, :, ::-1, ::-1].transpose(1, 0, 2, 3).reshape(self.c_in, -1)
        dxp = (dcols @ flipped.T).reshape(B, h, w, self.c_in).transpose(0, 3, 1, 2)
        if p:
            dxp = dxp[:, :, p:-p, p:-p]
        return dxp


class GRUCell:
    """Gated recurrent unit (reset, update, candidate), batched on leading axes."""

    def __init__(self, name: str, n_in: int, n_hidden: int):
        self.name, self.n_in, self.n_hidden = name, n_in, n_hidden

    def init(self, rng):
        H = self.n_hidden
        bound = 1.0 / np.sqrt(H)
        return {
            f"{self.name}.Wx": rng.uniform(-bound, bound, (self.n_in, 3 * H)),
            f"{self.name}.Wh": rng.uniform(-bound, bound, (H, 3 * H)),
            f"{self.name}.bx": np.zeros(3 * H),
            f"{self.name}.bh": np.zeros(3 * H),
        }

    def forward(self, P, x, h):
        H = self.n_hidden
        if x.shape[-1] != self.n_in or h.shape[-1] != H:
            raise ValueError(f"{self.name}: bad input/hidden widths {x.shape}, {h.shape}")
        ax = x @ P[f"{self.name}.Wx"] + P[f"{self.name}.bx"]
        ah = h @ P[f"{self.name}.Wh"] + P[f"{self.name}.bh"]
        r = sigmoid(ax[..., :H] + ah[..., :H])
        z = sigmoid(ax[..., H:2 * H] + ah[..., H:2 * H])
        n = np.tanh(ax[..., 2 * H:] + r * ah[..., 2 * H:])
        h_new = (1.0 - z) * n + z * h
        return h_new, (x, h, r, z, n, ah[..., 2 * H:])

    def backward(self, P, cache, dh_new, G):
        x, h, r, z, n, ah_n = cache
        dn = dh_new * (1.0 - z)
        dz = dh_new * (h - n)
        dn_pre = dn * (1.0 - n * n)
        dr_pre = dn_pre * ah_n * r * (1.0 - r)
        dz_pre = dz * z * (1.0 - z)
        dax = np.concatenate([dr_pre, dz_pre, dn_pre], axis=-1)
        dah = np.concatenate([dr_pre, dz_pre, dn_pre * r], axis=-1)
        H3 = 3 * self.n_hidden
        _acc(G, f"{self.name}.Wx", x.reshape(-1, self.n_in).T @ dax.reshape(-1, H3))
        _acc(G, f"{self.name}.Wh", h.reshape(-1, self.n_hidden).T @ dah.reshape(-1, H3))
        _acc(G, f"{self.name}.bx", dax.reshape(-1, H3).sum(axis=0))
        _acc(G, f"{self.name}.bh", dah.reshape(-1, H3).sum(axis=0))
        dx = dax @ P[f"{self.name}.Wx"].T
        dh = dh_new * z + dah @ P[f"{self.name}.Wh"].T
        return dx, dh


class Sequential:
    def __init__(self, layers):
        self.layers = list(layers)

    def init(self, rng):
        out = {}
        for layer in self.layers:
            out.update(layer.init(rng))
        return out

    def forward(self, P, x, training=False, rng=None):
        caches = []
        for layer in self.layers:
            x, c = layer.forward(P, x, training=training, rng=rng)
            caches.append(c)
        return x, caches

    def backward(self, P, caches, dy, G):
        for layer, c in zip(reversed(self.layers), reversed(caches)):
            dy = layer.backward(P, c, dy, G)
        return dy


# ---------------------------------------------------------------- optimiser

@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params, grads, state: AdamState):
    """One in-place Adam update. Non-finite gradients skip the step."""
    if not all(np.all(np.isfinite(g)) for g in grads.values()):
        diagnostics["adam_skipped"] += 1
        log.warning("non-finite gradient at Adam step %d; update skipped", state.step + 1)
        return params
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    for name, g in grads.items():
        if name not in state.m:
            state.m[name] = np.zeros_like(g)
            state.v[name] = np.zeros_like(g)
        m, v = state.m[name], state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        params[name] -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return params


# ---------------------------------------------------------------- weight files

WEIGHT_MAGIC = b"QRMW"
WEIGHT_VERSION = 1


class WeightFileError(ValueError):
    pass


def save_params(path, params, config_hash: str = "") -> None:
    """Write ``params`` in the little-endian weight-file layout (see README)."""
    h = config_hash.encode()
    chunks = [WEIGHT_MAGIC, struct.pack("<IH", WEIGHT_VERSION, len(h)), h,
              struct.pack("<I", len(params))]
    for name, arr in params.items():
        arr = np.ascontiguousarray(arr, dtype="<f8")
        bname = name.encode()
        chunks.append(struct.pack("<H", len(bname)) + bname)
        chunks.append(struct.pack("<B", arr.ndim) + struct.pack(f"<{arr.ndim}Q", *arr.shape))
        chunks.append(arr.tobytes())
    Path(path).write_bytes(b"".join(chunks))


def load_params(path):
    """Read a weight file; returns ``(ModelParams, config_hash)``."""
    data = Path(path).read_bytes()
    if data[:4] != WEIGHT_MAGIC or len(data) < 10:
        raise WeightFileError(f"{path}: not a weight file")
    version, hlen = struct.unpack_from("<IH", data, 4)
    if version != WEIGHT_VERSION:
        raise WeightFileError(f"{path}: unsupported version {version}")
    try:
        return _parse_weights(data, hlen)
    except (struct.error, ValueError, UnicodeDecodeError) as exc:
        raise WeightFileError(f"{path}: truncated or corrupt weight file ({exc})") from exc


def _parse_weights(data, hlen):
    pos = 10
    config_hash = data[pos:pos + hlen].decode()
    pos += hlen
    (count,) = struct.unpack_from("<I", data, pos)
    pos += 4
    params = ModelParams()
    for _ in range(count):
        (nlen,) = struct.unpack_from("<H", data, pos)
        pos += 2
        name = data[pos:pos + nlen].decode()
        pos += nlen
        (ndim,) = struct.unpack_from("<B", data, pos)
        pos += 1
        shape = struct.unpack_from(f"<{ndim}Q", data, pos)
        pos += 8 * ndim
        size = int(np.prod(shape, dtype=np.int64))
        params[name] = np.frombuffer(data, dtype="<f8", count=size, offset=pos).reshape(shape).astype(float)
        pos += 8 * size
    if pos != len(data):
        raise ValueError(f"{len(data) - pos} trailing bytes")
    return params, config_hash
