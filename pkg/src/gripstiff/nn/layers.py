"""Stateful layers: parameters plus the cache of their last forward pass."""

from __future__ import annotations

from collections import OrderedDict

import numpy as np

from ..errors import ShapeError, StateError
from . import functional as F


class Parameter:
    """A trainable array with its gradient and Adam moment buffers."""

    __slots__ = ("value", "grad", "m", "v", "step_count")

    def __init__(self, value):
        self.value = np.array(value, dtype=np.float64)
        self.grad = np.zeros_like(self.value)
        self.m = np.zeros_like(self.value)
        self.v = np.zeros_like(self.value)
        self.step_count = 0

    @property
    def shape(self):
        return self.value.shape

    @property
    def size(self) -> int:
        return self.value.size

    def zero_grad(self):
        self.grad.fill(0.0)

    def __repr__(self):
        return f"Parameter(shape={self.value.shape}, steps={self.step_count})"


def he_uniform(rng, shape, fan_in):
    limit = np.sqrt(6.0 / fan_in)
    return rng.uniform(-limit, limit, size=shape)


def glorot_uniform(rng, shape, fan_in, fan_out):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


class Layer:
    """Base class. Subclasses fill ``self.params`` and implement forward/backward."""

    def __init__(self):
        self.params: "OrderedDict[str, Parameter]" = OrderedDict()
        self._cache = None

    def __call__(self, x):
        return self.forward(x)

    def _take_cache(self):
        if self._cache is None:
            raise StateError(f"{type(self).__name__}.backward called without a forward pass")
        cache, self._cache = self._cache, None
        return cache

    def forward(self, x):  # pragma: no cover - abstract
        raise NotImplementedError

    def backward(self, dy):  # pragma: no cover - abstract
        raise NotImplementedError

    def output_shape(self, input_shape):
        return input_shape


class Conv1d(Layer):
    def __init__(self, in_channels, out_channels, width=3, stride=2, activation="relu", rng=None):
        super().__init__()
        rng = rng if rng is not None else np.random.default_rng(0)
        self.stride = stride
        self.activation = activation
        fan_in = width * in_channels
        self.params["kernel"] = Parameter(he_uniform(rng, (width, in_channels, out_channels), fan_in))
        self.params["bias"] = Parameter(np.zeros(out_channels))

    def forward(self, x):
        y, conv_cache = F.conv1d_forward(x, self.params["kernel"].value, self.params["bias"].value, self.stride)
        mask = None
        if self.activation == "relu":
            y, mask = F.relu_forward(y)
        self._cache = (conv_cache, mask)
        return y

    def backward(self, dy):
        conv_cache, mask = self._take_cache()
        if self.activation == "relu":
            dy = F.relu_backward(dy, mask)
        dx, dk, db = F.conv1d_backward(dy, conv_cache)
        self.params["kernel"].grad += dk
        self.params["bias"].grad += db
        return dx

    def output_shape(self, input_shape):
        b, t, _ = input_shape
        return (b, -(-t // self.stride), self.params["kernel"].shape[2])


class Dense(Layer):
    def __init__(self, in_features, out_features, activation="relu", rng=None):
        super().__init__()
        rng = rng if rng is not None else np.random.default_rng(0)
        self.activation = activation
        self.params["weights"] = Parameter(he_uniform(rng, (in_features, out_features), in_features))
        self.params["bias"] = Parameter(np.zeros(out_features))

    def forward(self, x):
        y, self._cache = F.dense_forward(x, self.params["weights"].value, self.params["bias"].value,
                                         self.activation)
        return y

    def backward(self, dy):
        dx, dw, db = F.dense_backward(dy, self._take_cache())
        self.params["weights"].grad += dw
        self.params["bias"].grad += db
        return dx

    def output_shape(self, input_shape):
        return (input_shape[0], self.params["weights"].shape[1])


def _lstm_params(rng, input_dim, units, forget_bias=1.0):
    w_in = glorot_uniform(rng, (4 * units, input_dim), input_dim, 4 * units)
    w_rec = glorot_uniform(rng, (4 * units, units), units, 4 * units)
    bias = np.zeros(4 * units)
    bias[units:2 * units] = forget_bias
    return w_in, w_rec, bias


class Lstm(Layer):
    """Single-direction LSTM returning the full hidden sequence."""

    def __init__(self, input_dim, units, direction=F.FORWARD, rng=None, forget_bias=1.0):
        super().__init__()
        rng = rng if rng is not None else np.random.default_rng(0)
        self.units = units
        self.direction = direction
        w_in, w_rec, bias = _lstm_params(rng, input_dim, units, forget_bias)
        self.params["input_weights"] = Parameter(w_in)
        self.params["recurrent_weights"] = Parameter(w_rec)
        self.params["bias"] = Parameter(bias)

    def triple(self):
        return (self.params["input_weights"].value, self.params["recurrent_weights"].value,
                self.params["bias"].value)

    def forward(self, x):
        h, _, self._cache = F.lstm_forward(x, *self.triple(), direction=self.direction)
        return h

    def backward(self, dy):
        dx, dwx, dwh, db = F.lstm_backward(dy, self._take_cache())
        self.params["input_weights"].grad += dwx
        self.params["recurrent_weights"].grad += dwh
        self.params["bias"].grad += db
        return dx

    def output_shape(self, input_shape):
        return (input_shape[0], input_shape[1], self.units)


class BiLstm(Layer):
    """Forward and backward LSTMs with outputs concatenated on the feature axis."""

    def __init__(self, input_dim, units, rng=None, forget_bias=1.0):
        super().__init__()
        rng = rng if rng is not None else np.random.default_rng(0)
        self.units = units
        for prefix in ("fwd", "bwd"):
            w_in, w_rec, bias = _lstm_params(rng, input_dim, units, forget_bias)
            self.params[f"{prefix}.input_weights"] = Parameter(w_in)
            self.params[f"{prefix}.recurrent_weights"] = Parameter(w_rec)
            self.params[f"{prefix}.bias"] = Parameter(bias)

    def triple(self, prefix):
        p = self.params
        return (p[f"{prefix}.input_weights"].value, p[f"{prefix}.recurrent_weights"].value,
                p[f"{prefix}.bias"].value)

    def forward(self, x):
        y, self._cache = F.bilstm_forward(x, self.triple("fwd"), self.triple("bwd"))
        return y

    def backward(self, dy):
        dx, gf, gb = F.bilstm_backward(dy, self._take_cache())
        for prefix, grads in (("fwd", gf), ("bwd", gb)):
            for name, g in zip(("input_weights", "recurrent_weights", "bias"), grads):
                self.params[f"{prefix}.{name}"].grad += g
        return dx

    def output_shape(self, input_shape):
        return (input_shape[0], input_shape[1], 2 * self.units)


class Flatten(Layer):
    def forward(self, x):
        self._cache = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, dy):
        return dy.reshape(self._take_cache())

    def output_shape(self, input_shape):
        return (input_shape[0], int(np.prod(input_shape[1:])))


class FinalState(Layer):
    """Select the state after the last processed step of each direction.

    For a forward sequence of width U this is ``h[:, -1]``. With
    ``bidirectional=True`` the input is [forward | backward] halves and the
    result is ``concat(h_fwd[:, -1], h_bwd[:, 0])``.
    """

    def __init__(self, bidirectional=False):
        super().__init__()
        self.bidirectional = bidirectional

    def forward(self, x):
        self._cache = x.shape
        if not self.bidirectional:
            return x[:, -1, :].copy()
        u = x.shape[2] // 2
        return np.concatenate([x[:, -1, :u], x[:, 0, u:]], axis=1)

    def backward(self, dy):
        shape = self._take_cache()
        dx = np.zeros(shape)
        if not self.bidirectional:
            dx[:, -1, :] = dy
        else:
            u = shape[2] // 2
            dx[:, -1, :u] = dy[:, :u]
            dx[:, 0, u:] = dy[:, u:]
        return dx

    def output_shape(self, input_shape):
        return (input_shape[0], input_shape[2])


class Sequential(Layer):
    """Named layers applied in order; parameters are exposed as ``layer.param``."""

    def __init__(self, layers):
        super().__init__()
        self.layers: "OrderedDict[str, Layer]" = OrderedDict(layers)
        for lname, layer in self.layers.items():
            for pname, p in layer.params.items():
                self.params[f"{lname}.{pname}"] = p

    def forward(self, x):
        for layer in self.layers.values():
            x = layer.forward(x)
        return x

    def backward(self, dy):
        for layer in reversed(self.layers.values()):
            dy = layer.backward(dy)
        return dy

    def output_shape(self, input_shape):
        shape = tuple(input_shape)
        for layer in self.layers.values():
            shape = layer.output_shape(shape)
        return shape

    def shapes(self, input_shape):
        """Output shape after every layer, in order."""
        out = OrderedDict()
        shape = tuple(input_shape)
        for name, layer in self.layers.items():
            shape = layer.output_shape(shape)
            out[name] = shape
        return out

    def zero_grad(self):
        for p in self.params.values():
            p.zero_grad()


def check_input(x, expected_tail):
    if x.ndim != 1 + len(expected_tail) or tuple(x.shape[1:]) != tuple(expected_tail):
        raise ShapeError(f"expected input [batch, {', '.join(map(str, expected_tail))}], got {x.shape}")
