"""Dense-tensor layers with hand-written backward passes.

Every layer exposes ``forward(x, train, rng) -> (y, cache)`` and
``backward(cache, grad_out) -> (grad_in, grads)``. Tensors are float64
numpy arrays with the batch on axis 0; temporal data is laid out as
(batch, length, channels).

Parameters live in ``layer.params`` (trained) and ``layer.buffers``
(running statistics). ``grads`` dicts use the same keys as ``params``;
composite layers prefix child keys with ``"<child>."``.
"""

from __future__ import annotations

from typing import Iterator, Optional

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..errors import MissingCache, ShapeMismatch

DTYPE = np.float64


def he_uniform(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    limit = np.sqrt(6.0 / fan_in)
    return rng.uniform(-limit, limit, size=shape).astype(DTYPE)


def _check_cache(cache):
    if cache is None:
        raise MissingCache("backward called without a forward cache")


def _sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


class Layer:
    kind = "Layer"

    def __init__(self):
        self.params: dict[str, np.ndarray] = {}
        self.buffers: dict[str, np.ndarray] = {}

    def forward(self, x, train=False, rng=None):
        raise NotImplementedError

    def backward(self, cache, grad_out):
        raise NotImplementedError

    def output_shape(self, shape: tuple) -> tuple:
        """Shape of one sample's output given one sample's input shape."""
        return shape

    def config(self) -> dict:
        return {}

    def children(self) -> Iterator[tuple[str, "Layer"]]:
        return iter(())

    def leaves(self, prefix=""):
        kids = list(self.children())
        if not kids:
            yield prefix.rstrip("."), self
            return
        for name, child in kids:
            yield from child.leaves(f"{prefix}{name}.")

    def named_params(self) -> dict[str, np.ndarray]:
        out = {}
        for name, leaf in self.leaves():
            for k, v in leaf.params.items():
                out[f"{name}.{k}" if name else k] = v
        return out

    def named_buffers(self) -> dict[str, np.ndarray]:
        out = {}
        for name, leaf in self.leaves():
            for k, v in leaf.buffers.items():
                out[f"{name}.{k}" if name else k] = v
        return out

    def n_params(self) -> int:
        return int(sum(v.size for v in self.named_params().values()))

    def __repr__(self):
        cfg = ", ".join(f"{k}={v}" for k, v in self.config().items())
        return f"{self.kind}({cfg})"


class Conv1D(Layer):
    """Stride-1 convolution with 'same' zero padding.

    For an even filter length the extra pad goes on the right, so a delta
    kernel at index ``(length - 1) // 2`` is the identity.
    """

    kind = "Conv1D"

    def __init__(self, in_channels: int, filters: int, length: int, rng=None):
        super().__init__()
        if length < 1:
            raise ValueError(f"filter length must be >= 1, got {length}")
        self.in_channels = in_channels
        self.filters = filters
        self.length = length
        rng = rng if rng is not None else np.random.default_rng(0)
        self.params["W"] = he_uniform(rng, (length, in_channels, filters), length * in_channels)
        self.params["b"] = np.zeros(filters, dtype=DTYPE)

    def config(self):
        return {"in_channels": self.in_channels, "filters": self.filters, "length": self.length}

    def output_shape(self, shape):
        return (shape[0], self.filters)

    @property
    def _pad(self):
        left = (self.length - 1) // 2
        return left, self.length - 1 - left

    def _wmat(self):
        # (f_l, C_in, C_out) -> (C_in * f_l, C_out), matching window-view column order
        W = self.params["W"]
        return W.transpose(1, 0, 2).reshape(self.in_channels * self.length, self.filters)

    def forward(self, x, train=False, rng=None):
        if x.ndim != 3 or x.shape[2] != self.in_channels:
            raise ShapeMismatch(f"Conv1D expects (B, L, {self.in_channels}), got {x.shape}")
        B, L, C = x.shape
        left, right = self._pad
        xp = np.pad(x, ((0, 0), (left, right), (0, 0)))
        cols = sliding_window_view(xp, self.length, axis=1).reshape(B * L, C * self.length)
        y = cols @ self._wmat() + self.params["b"]
        return y.reshape(B, L, self.filters), (x.shape, cols)

    def backward(self, cache, grad_out):
        _check_cache(cache)
        shape, cols = cache
        B, L, C = shape
        if grad_out.shape != (B, L, self.filters):
            raise ShapeMismatch(f"Conv1D grad shape {grad_out.shape}")
        g = grad_out.reshape(B * L, self.filters)
        dWm = cols.T @ g
        dW = dWm.reshape(C, self.length, self.filters).transpose(1, 0, 2)
        db = g.sum(axis=0)
        dcols = (g @ self._wmat().T).reshape(B, L, C, self.length)
        left, right = self._pad
        dxp = np.zeros((B, L + left + right, C), dtype=DTYPE)
        for k in range(self.length):
            dxp[:, k : k + L, :] += dcols[..., k]
        return dxp[:, left : left + L, :], {"W": np.ascontiguousarray(dW), "b": db}


class BatchNorm(Layer):
    """Normalises over every axis but the last (the channel axis)."""

    kind = "BatchNorm"

    def __init__(self, channels: int, momentum: float = 0.9, eps: float = 1e-8):
        super().__init__()
        self.channels = channels
        self.momentum = momentum
        self.eps = eps
        self.params["gamma"] = np.ones(channels, dtype=DTYPE)
        self.params["beta"] = np.zeros(channels, dtype=DTYPE)
        self.buffers["running_mean"] = np.zeros(channels, dtype=DTYPE)
        self.buffers["running_var"] = np.ones(channels, dtype=DTYPE)

    def config(self):
        return {"channels": self.channels, "momentum": self.momentum, "eps": self.eps}

    def forward(self, x, train=False, rng=None):
        if x.shape[-1] != self.channels:
            raise ShapeMismatch(f"BatchNorm expects {self.channels} channels, got {x.shape}")
        axes = tuple(range(x.ndim - 1))
        gamma, beta = self.params["gamma"], self.params["beta"]
        if train:
            mean = x.mean(axis=axes)
            var = x.var(axis=axes)
            m = self.momentum
            # in-place so references held by an optimizer or serializer stay valid
            self.buffers["running_mean"] *= m
            self.buffers["running_mean"] += (1 - m) * mean
            self.buffers["running_var"] *= m
            self.buffers["running_var"] += (1 - m) * var
        else:
            mean = self.buffers["running_mean"]
            var = self.buffers["running_var"]
        inv_std = 1.0 / np.sqrt(var + self.eps)
        xhat = (x - mean) * inv_std
        return gamma * xhat + beta, (train, xhat, inv_std)

    def backward(self, cache, grad_out):
        _check_cache(cache)
        train, xhat, inv_std = cache
        if grad_out.shape != xhat.shape:
            raise ShapeMismatch(f"BatchNorm grad shape {grad_out.shape}")
        axes = tuple(range(xhat.ndim - 1))
        gamma = self.params["gamma"]
        grads = {"gamma": (grad_out * xhat).sum(axis=axes), "beta": grad_out.sum(axis=axes)}
        dxhat = grad_out * gamma
        if not train:
            return dxhat * inv_std, grads
        n = xhat.size // xhat.shape[-1]
        dx = (inv_std / n) * (
            n * dxhat - dxhat.sum(axis=axes) - xhat * (dxhat * xhat).sum(axis=axes)
        )
        return dx, grads


class ReLU(Layer):
    kind = "ReLU"

    def forward(self, x, train=False, rng=None):
        mask = x > 0
        return x * mask, mask

    def backward(self, cache, grad_out):
        _check_cache(cache)
        return grad_out * cache, {}


class Sigmoid(Layer):
    kind = "Sigmoid"

    def forward(self, x, train=False, rng=None):
        y = _sigmoid(x)
        return y, y

    def backward(self, cache, grad_out):
        _check_cache(cache)
        return grad_out * cache * (1.0 - cache), {}


class MaxPool1D(Layer):
    """Non-overlapping temporal max pooling; length is floor-divided."""

    kind = "MaxPool"

    def __init__(self, size: int = 2):
        super().__init__()
        if size < 2:
            raise ValueError(f"pool size must be >= 2, got {size}")
        self.size = size

    def config(self):
        return {"size": self.size}

    def output_shape(self, shape):
        return (shape[0] // self.size, shape[1])

    def forward(self, x, train=False, rng=None):
        if x.ndim != 3:
            raise ShapeMismatch(f"MaxPool expects (B, L, C), got {x.shape}")
        B, L, C = x.shape
        Lo = L // self.size
        if Lo == 0:
            raise ShapeMismatch(f"length {L} too short for pool size {self.size}")
        blocks = x[:, : Lo * self.size, :].reshape(B, Lo, self.size, C)
        idx = blocks.argmax(axis=2)
        y = np.take_along_axis(blocks, idx[:, :, None, :], axis=2)[:, :, 0, :]
        return y, (x.shape, idx)

    def backward(self, cache, grad_out):
        _check_cache(cache)
        shape, idx = cache
        B, L, C = shape
        Lo = L // self.size
        if grad_out.shape != (B, Lo, C):
            raise ShapeMismatch(f"MaxPool grad shape {grad_out.shape}")
        blocks = np.zeros((B, Lo, self.size, C), dtype=DTYPE)
        np.put_along_axis(blocks, idx[:, :, None, :], grad_out[:, :, None, :], axis=2)
        dx = np.zeros(shape, dtype=DTYPE)
        dx[:, : Lo * self.size, :] = blocks.reshape(B, Lo * self.size, C)
        return dx, {}


class Dense(Layer):
    kind = "Dense"

    def __init__(self, in_features: int, units: int, rng=None):
        super().__init__()
        self.in_features = in_features
        self.units = units
        rng = rng if rng is not None else np.random.default_rng(0)
        self.params["W"] = he_uniform(rng, (in_features, units), in_features)
        self.params["b"] = np.zeros(units, dtype=DTYPE)

    def config(self):
        return {"in_features": self.in_features, "units": self.units}

    def output_shape(self, shape):
        return (self.units,)

    def forward(self, x, train=False, rng=None):
        if x.ndim != 2 or x.shape[1] != self.in_features:
            raise ShapeMismatch(f"Dense expects (B, {self.in_features}), got {x.shape}")
        return x @ self.params["W"] + self.params["b"], x

    def backward(self, cache, grad_out):
        _check_cache(cache)
        x = cache
        if grad_out.shape != (x.shape[0], self.units):
            raise ShapeMismatch(f"Dense grad shape {grad_out.shape}")
        return grad_out @ self.params["W"].T, {"W": x.T @ grad_out, "b": grad_out.sum(axis=0)}


class Dropout(Layer):
    """Inverted dropout: scaled at train time, identity at inference."""

    kind = "Dropout"

    def __init__(self, rate: float):
        super().__init__()
        if not 0 <= rate < 1:
            raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
        self.rate = rate

    def config(self):
        return {"rate": self.rate}

    def forward(self, x, train=False, rng=None):
        if not train or self.rate == 0:
            return x, None
        if rng is None:
            raise ValueError("Dropout in train mode needs an rng")
        mask = (rng.random(x.shape) >= self.rate) / (1.0 - self.rate)
        return x * mask, mask

    def backward(self, cache, grad_out):
        if cache is None:
            return grad_out, {}
        return grad_out * cache, {}


class Flatten(Layer):
    kind = "Flatten"

    def output_shape(self, shape):
        return (int(np.prod(shape)),)

    def forward(self, x, train=False, rng=None):
        return x.reshape(x.shape[0], -1), x.shape

    def backward(self, cache, grad_out):
        _check_cache(cache)
        return grad_out.reshape(cache), {}


class GRU(Layer):
    """Single-layer GRU returning the final hidden state.

    Gates are packed [update | reset | candidate] along the last axis of
    ``W`` (input), ``U`` (recurrent) and ``b``:

        z = sigmoid(x W_z + h U_z + b_z)
        r = sigmoid(x W_r + h U_r + b_r)
        n = tanh(x W_n + (r * h) U_n + b_n)
        h' = z * h + (1 - z) * n
    """

    kind = "GRU"

    def __init__(self, input_size: int, hidden: int, rng=None):
        super().__init__()
        self.input_size = input_size
        self.hidden = hidden
        rng = rng if rng is not None else np.random.default_rng(0)
        lim_w = np.sqrt(6.0 / (input_size + hidden))
        lim_u = 1.0 / np.sqrt(hidden)
        self.params["W"] = rng.uniform(-lim_w, lim_w, (input_size, 3 * hidden)).astype(DTYPE)
        self.params["U"] = rng.uniform(-lim_u, lim_u, (hidden, 3 * hidden)).astype(DTYPE)
        self.params["b"] = np.zeros(3 * hidden, dtype=DTYPE)

    def config(self):
        return {"input_size": self.input_size, "hidden": self.hidden}

    def output_shape(self, shape):
        return (self.hidden,)

    def forward(self, x, train=False, rng=None, h0: Optional[np.ndarray] = None):
        if x.ndim != 3 or x.shape[2] != self.input_size:
            raise ShapeMismatch(f"GRU expects (B, T, {self.input_size}), got {x.shape}")
        B, T, _ = x.shape
        H = self.hidden
        W, U, b = self.params["W"], self.params["U"], self.params["b"]
        h = np.zeros((B, H), dtype=DTYPE) if h0 is None else h0
        ax = x @ W + b  # (B, T, 3H)
        steps = []
        for t in range(T):
            a = ax[:, t, :]
            hu = h @ U[:, : 2 * H]
            z = _sigmoid(a[:, :H] + hu[:, :H])
            r = _sigmoid(a[:, H : 2 * H] + hu[:, H:])
            rh = r * h
            n = np.tanh(a[:, 2 * H :] + rh @ U[:, 2 * H :])
            steps.append((h, z, r, rh, n))
            h = z * h + (1.0 - z) * n
        return h, (x, steps)

    def backward(self, cache, grad_out):
        _check_cache(cache)
        x, steps = cache
        B, T, D = x.shape
        H = self.hidden
        if grad_out.shape != (B, H):
            raise ShapeMismatch(f"GRU grad shape {grad_out.shape}")
        U = self.params["U"]
        dU = np.zeros_like(U)
        da_all = np.empty((B, T, 3 * H), dtype=DTYPE)
        dh = grad_out
        for t in range(T - 1, -1, -1):
            h_prev, z, r, rh, n = steps[t]
            da_n = dh * (1.0 - z) * (1.0 - n * n)
            da_z = dh * (h_prev - n) * z * (1.0 - z)
            drh = da_n @ U[:, 2 * H :].T
            da_r = drh * h_prev * r * (1.0 - r)
            dU[:, 2 * H :] += rh.T @ da_n
            da_zr = np.concatenate([da_z, da_r], axis=1)
            dU[:, : 2 * H] += h_prev.T @ da_zr
            dh = dh * z + drh * r + da_zr @ U[:, : 2 * H].T
            da_all[:, t, :H] = da_z
            da_all[:, t, H : 2 * H] = da_r
            da_all[:, t, 2 * H :] = da_n
        flat = da_all.reshape(B * T, 3 * H)
        dW = x.reshape(B * T, D).T @ flat
        db = flat.sum(axis=0)
        dx = da_all @ self.params["W"].T
        return dx, {"W": dW, "U": dU, "b": db}


class Sequential(Layer):
    kind = "Sequential"

    def __init__(self, layers: list[tuple[str, Layer]]):
        super().__init__()
        self.layers = list(layers)

    def children(self):
        return iter(self.layers)

    def output_shape(self, shape):
        for _, layer in self.layers:
            shape = layer.output_shape(shape)
        return shape

    def forward(self, x, train=False, rng=None):
        caches = []
        for _, layer in self.layers:
            x, c = layer.forward(x, train, rng)
            caches.append(c)
        return x, caches

    def backward(self, cache, grad_out):
        _check_cache(cache)
        grads = {}
        g = grad_out
        for (name, layer), c in zip(reversed(self.layers), reversed(cache)):
            g, lg = layer.backward(c, g)
            for k, v in lg.items():
                grads[f"{name}.{k}"] = v
        return g, grads


class ResidualBlock(Layer):
    """Pre-activation block: BN-ReLU-Conv-BN-ReLU-Conv plus a shortcut.

    The shortcut is the identity when channel counts match and a 1x1
    convolution otherwise.
    """

    kind = "ResidualBlock"

    def __init__(self, in_channels: int, filters: int, length: int, rng=None):
        super().__init__()
        rng = rng if rng is not None else np.random.default_rng(0)
        self.in_channels = in_channels
        self.filters = filters
        self.body = Sequential([
            ("bn1", BatchNorm(in_channels)),
            ("relu1", ReLU()),
            ("conv1", Conv1D(in_channels, filters, length, rng)),
            ("bn2", BatchNorm(filters)),
            ("relu2", ReLU()),
            ("conv2", Conv1D(filters, filters, length, rng)),
        ])
        self.shortcut = Conv1D(in_channels, filters, 1, rng) if in_channels != filters else None

    def config(self):
        return {"in_channels": self.in_channels, "filters": self.filters}

    def children(self):
        yield "body", self.body
        if self.shortcut is not None:
            yield "shortcut", self.shortcut

    def output_shape(self, shape):
        return (shape[0], self.filters)

    def forward(self, x, train=False, rng=None):
        y, cb = self.body.forward(x, train, rng)
        if self.shortcut is None:
            return y + x, (cb, None)
        s, cs = self.shortcut.forward(x, train, rng)
        return y + s, (cb, cs)

    def backward(self, cache, grad_out):
        _check_cache(cache)
        cb, cs = cache
        dx, gb = self.body.backward(cb, grad_out)
        grads = {f"body.{k}": v for k, v in gb.items()}
        if self.shortcut is None:
            return dx + grad_out, grads
        ds, gs = self.shortcut.backward(cs, grad_out)
        grads.update({f"shortcut.{k}": v for k, v in gs.items()})
        return dx + ds, grads
