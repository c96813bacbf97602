"""Forward/backward kernels on float64 numpy arrays.

Every ``*_forward`` returns its output together with a cache object; the
matching ``*_backward`` consumes that cache and returns gradients. Shapes
follow a [batch, time, channels] layout for sequences.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..errors import ShapeError, StateError

FORWARD = "forward"
BACKWARD = "backward"


def _finite(x: np.ndarray, what: str) -> np.ndarray:
    if not np.all(np.isfinite(x)):
        raise FloatingPointError(f"non-finite values produced by {what}")
    return x


def sigmoid(x):
    # split by sign so exp never overflows
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def same_padding(length: int, width: int, stride: int) -> tuple[int, int, int]:
    """(output length, left pad, right pad) for zero 'same' padding."""
    out = -(-length // stride)
    total = max((out - 1) * stride + width - length, 0)
    return out, total // 2, total - total // 2


# -- 1D convolution ----------------------------------------------------------

@dataclass
class ConvCache:
    patches: np.ndarray  # [B, T_out, W*C_in]
    kernel: np.ndarray
    stride: int
    input_shape: tuple
    pad_left: int


def conv1d_forward(x: np.ndarray, kernel: np.ndarray, bias: np.ndarray, stride: int = 1):
    """Cross-correlation of ``x`` [B, T, C_in] with ``kernel`` [W, C_in, C_out].

    Zero 'same' padding; the output has ceil(T / stride) steps.
    """
    if x.ndim != 3 or kernel.ndim != 3:
        raise ShapeError("conv1d expects input [B, T, C] and kernel [W, C_in, C_out]")
    width, c_in, c_out = kernel.shape
    if x.shape[2] != c_in:
        raise ShapeError(f"conv1d channel mismatch: input has {x.shape[2]}, kernel expects {c_in}")
    if bias.shape != (c_out,):
        raise ShapeError(f"conv1d bias must have shape ({c_out},)")
    if width < 1 or stride < 1:
        raise ShapeError("kernel width and stride must be >= 1")
    batch, length, _ = x.shape
    out_len, left, right = same_padding(length, width, stride)
    xp = np.pad(x, ((0, 0), (left, right), (0, 0)))
    span = (out_len - 1) * stride + 1
    patches = np.concatenate([xp[:, w:w + span:stride, :] for w in range(width)], axis=2)
    y = patches @ kernel.reshape(width * c_in, c_out) + bias
    return _finite(y, "conv1d"), ConvCache(patches, kernel, stride, x.shape, left)


def conv1d_backward(dy: np.ndarray, cache: ConvCache | None):
    """Gradients (dx, dkernel, dbias) for an upstream gradient ``dy``."""
    if cache is None:
        raise StateError("conv1d_backward called without a forward cache")
    width, c_in, c_out = cache.kernel.shape
    batch, length, _ = cache.input_shape
    out_len = dy.shape[1]
    flat_dy = dy.reshape(-1, c_out)
    dkernel = (cache.patches.reshape(-1, width * c_in).T @ flat_dy).reshape(width, c_in, c_out)
    dbias = flat_dy.sum(axis=0)
    dpatches = (dy @ cache.kernel.reshape(width * c_in, c_out).T).reshape(batch, out_len, width, c_in)
    stride = cache.stride
    span = (out_len - 1) * stride + 1
    padded = np.zeros((batch, max(length + width, span + width), c_in))
    for w in range(width):
        padded[:, w:w + span:stride, :] += dpatches[:, :, w, :]
    left = cache.pad_left
    dx = padded[:, left:left + length, :]
    return np.ascontiguousarray(dx), dkernel, dbias


# -- Dense -------------------------------------------------------------------

@dataclass
class DenseCache:
    x: np.ndarray
    weights: np.ndarray
    mask: np.ndarray | None


def dense_forward(x: np.ndarray, weights: np.ndarray, bias: np.ndarray, activation: str = "identity"):
    """Affine map ``x @ weights + bias`` followed by ReLU or identity."""
    if x.ndim != 2 or weights.ndim != 2 or x.shape[1] != weights.shape[0]:
        raise ShapeError(f"dense shape mismatch: input {x.shape}, weights {weights.shape}")
    if bias.shape != (weights.shape[1],):
        raise ShapeError("dense bias shape mismatch")
    z = x @ weights + bias
    mask = None
    if activation == "relu":
        mask = z > 0
        z = z * mask
    elif activation != "identity":
        raise ValueError(f"unknown activation {activation!r}")
    return _finite(z, "dense"), DenseCache(x, weights, mask)


def dense_backward(dy: np.ndarray, cache: DenseCache | None):
    if cache is None:
        raise StateError("dense_backward called without a forward cache")
    if cache.mask is not None:
        dy = dy * cache.mask
    return dy @ cache.weights.T, cache.x.T @ dy, dy.sum(axis=0)


def relu_forward(x):
    mask = x > 0
    return x * mask, mask


def relu_backward(dy, mask):
    if mask is None:
        raise StateError("relu_backward called without a forward cache")
    return dy * mask


# -- LSTM --------------------------------------------------------------------

@dataclass
class LstmCache:
    x: np.ndarray  # time-ordered as processed
    gates: np.ndarray  # [B, T, 4U] activated i, f, g, o
    cells: np.ndarray  # [B, T, U]
    tanh_cells: np.ndarray
    hidden: np.ndarray  # [B, T, U]
    input_weights: np.ndarray
    recurrent_weights: np.ndarray
    direction: str


def _check_lstm(x, input_weights, recurrent_weights, bias):
    if x.ndim != 3:
        raise ShapeError("lstm input must be [B, T, D]")
    four_u, dim = input_weights.shape
    units = four_u // 4
    if four_u != 4 * units or recurrent_weights.shape != (four_u, units) or bias.shape != (four_u,):
        raise ShapeError("inconsistent LSTM parameter shapes")
    if x.shape[2] != dim:
        raise ShapeError(f"lstm input dim {x.shape[2]} != {dim}")
    return units


def lstm_forward(x: np.ndarray, input_weights: np.ndarray, recurrent_weights: np.ndarray,
                 bias: np.ndarray, direction: str = FORWARD):
    """Run an LSTM over ``x`` [B, T, D] from zero initial state.

    Gate blocks in the weight rows are ordered input, forget, candidate,
    output. The backward direction reads the sequence from the end; its
    outputs are flipped back so that index t always lines up with input t.
    Returns (hidden sequence [B, T, U], final hidden [B, U], cache); the
    final hidden is the state after the last processed step.
    """
    units = _check_lstm(x, input_weights, recurrent_weights, bias)
    if direction not in (FORWARD, BACKWARD):
        raise ValueError(f"unknown direction {direction!r}")
    seq = x[:, ::-1, :] if direction == BACKWARD else x
    batch, steps, _ = seq.shape
    pre = seq @ input_weights.T + bias
    gates = np.empty((batch, steps, 4 * units))
    cells = np.empty((batch, steps, units))
    hidden = np.empty((batch, steps, units))
    h = np.zeros((batch, units))
    c = np.zeros((batch, units))
    wh_t = recurrent_weights.T
    u = units
    for t in range(steps):
        z = pre[:, t] + h @ wh_t
        g = gates[:, t]
        g[:, :2 * u] = sigmoid(z[:, :2 * u])
        g[:, 2 * u:3 * u] = np.tanh(z[:, 2 * u:3 * u])
        g[:, 3 * u:] = sigmoid(z[:, 3 * u:])
        c = g[:, u:2 * u] * c + g[:, :u] * g[:, 2 * u:3 * u]
        h = g[:, 3 * u:] * np.tanh(c)
        cells[:, t] = c
        hidden[:, t] = h
    tanh_cells = np.tanh(cells)
    cache = LstmCache(seq, gates, cells, tanh_cells, hidden, input_weights, recurrent_weights, direction)
    out = hidden[:, ::-1, :] if direction == BACKWARD else hidden
    _finite(out, "lstm")
    return np.ascontiguousarray(out), h.copy(), cache


def lstm_backward(dh_seq: np.ndarray | None, cache: LstmCache | None, dh_final: np.ndarray | None = None):
    """Backpropagation through time.

    ``dh_seq`` is the gradient w.r.t. the returned hidden sequence (aligned
    with the input, any direction) and ``dh_final`` w.r.t. the returned final
    hidden state; either may be None. Returns (dx, dinput_weights,
    drecurrent_weights, dbias).
    """
    if cache is None:
        raise StateError("lstm_backward called without a forward cache")
    batch, steps, four_u = cache.gates.shape
    u = four_u // 4
    if dh_seq is None:
        dh = np.zeros((batch, steps, u))
    else:
        dh = dh_seq[:, ::-1, :].copy() if cache.direction == BACKWARD else dh_seq.copy()
    if dh_final is not None:
        dh[:, -1] += dh_final
    gates = cache.gates
    dz = np.empty_like(gates)
    dh_next = np.zeros((batch, u))
    dc_next = np.zeros((batch, u))
    wh = cache.recurrent_weights
    for t in range(steps - 1, -1, -1):
        g = gates[:, t]
        i, f, cand, o = g[:, :u], g[:, u:2 * u], g[:, 2 * u:3 * u], g[:, 3 * u:]
        tc = cache.tanh_cells[:, t]
        dht = dh[:, t] + dh_next
        dc = dc_next + dht * o * (1.0 - tc * tc)
        c_prev = cache.cells[:, t - 1] if t > 0 else 0.0
        d = dz[:, t]
        d[:, :u] = dc * cand * i * (1.0 - i)
        d[:, u:2 * u] = dc * c_prev * f * (1.0 - f)
        d[:, 2 * u:3 * u] = dc * i * (1.0 - cand * cand)
        d[:, 3 * u:] = dht * tc * o * (1.0 - o)
        dc_next = dc * f
        dh_next = d @ wh
    flat_dz = dz.reshape(-1, four_u)
    dwx = flat_dz.T @ cache.x.reshape(batch * steps, -1)
    if steps > 1:
        dwh = dz[:, 1:].reshape(-1, four_u).T @ cache.hidden[:, :-1].reshape(-1, u)
    else:
        dwh = np.zeros_like(wh)
    db = flat_dz.sum(axis=0)
    dx = dz @ cache.input_weights
    if cache.direction == BACKWARD:
        dx = dx[:, ::-1, :]
    return np.ascontiguousarray(dx), dwx, dwh, db


def bilstm_forward(x, fwd_params, bwd_params):
    """Concatenate forward and backward LSTM hidden sequences on the feature axis.

    ``fwd_params``/``bwd_params`` are (input_weights, recurrent_weights, bias)
    triples. Returns ([B, T, 2U], (cache_fwd, cache_bwd)).
    """
    uf = fwd_params[1].shape[1]
    ub = bwd_params[1].shape[1]
    if uf != ub:
        raise ShapeError(f"bidirectional cells differ in units: {uf} vs {ub}")
    hf, _, cf = lstm_forward(x, *fwd_params, direction=FORWARD)
    hb, _, cb = lstm_forward(x, *bwd_params, direction=BACKWARD)
    return np.concatenate([hf, hb], axis=2), (cf, cb)


def bilstm_backward(dy, caches):
    if caches is None:
        raise StateError("bilstm_backward called without a forward cache")
    cf, cb = caches
    u = cf.hidden.shape[2]
    dxf, *gf = lstm_backward(dy[:, :, :u], cf)
    dxb, *gb = lstm_backward(dy[:, :, u:], cb)
    return dxf + dxb, tuple(gf), tuple(gb)


# -- Loss --------------------------------------------------------------------

def mse_loss(pred: np.ndarray, target: np.ndarray):
    """Mean squared error and its gradient w.r.t. ``pred``."""
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ShapeError(f"mse shapes differ: {pred.shape} vs {target.shape}")
    diff = pred - target
    n = diff.shape[0] if diff.ndim else 1
    loss = float(np.sum(diff * diff) / n)
    if not math.isfinite(loss):
        raise FloatingPointError("non-finite loss")
    return loss, 2.0 * diff / n
