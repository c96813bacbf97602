"""ConvNet, ConvLstmNet and ConvBiLstmNet stiffness regressors.

All three share a Feature Extractor of three stride-2 width-3 convolutions
and a Regression Block of dense layers 512-256-128-64-1. ConvNet flattens
the convolution output straight into the Regression Block. ConvLstmNet
feeds two stacked forward LSTMs and uses the last hidden state;
ConvBiLstmNet feeds one bidirectional layer and uses both directions'
final states.
"""

from __future__ import annotations

import enum
from collections import OrderedDict
from dataclasses import asdict, dataclass, field

import numpy as np

from .episode import CHANNELS, SAMPLES
from .errors import ConfigError, ShapeError
from .nn import BiLstm, Conv1d, Dense, FinalState, Flatten, Lstm, Sequential
from .nn.checkpoint import load_checkpoint, save_checkpoint


class ModelKind(str, enum.Enum):
    CONV = "ConvNet"
    CONV_LSTM = "ConvLstmNet"
    CONV_BILSTM = "ConvBiLstmNet"

    @classmethod
    def parse(cls, name: "str | ModelKind") -> "ModelKind":
        if isinstance(name, ModelKind):
            return name
        key = str(name).strip().lower().replace("_", "-")
        aliases = {
            "convnet": cls.CONV, "conv": cls.CONV,
            "convlstmnet": cls.CONV_LSTM, "conv-lstm": cls.CONV_LSTM,
            "convbilstmnet": cls.CONV_BILSTM, "conv-bilstm": cls.CONV_BILSTM,
        }
        try:
            return aliases[key]
        except KeyError:
            raise ConfigError(f"unknown model kind {name!r}") from None


@dataclass(frozen=True)
class Architecture:
    """Layer widths. Defaults are the full-size widths; tests shrink them."""

    conv_filters: tuple = (128, 256, 512)
    recurrent_conv_filters: tuple = (128, 256, 256)
    units: int = 128
    head: tuple = (512, 256, 128, 64, 1)
    kernel_width: int = 3
    stride: int = 2
    input_length: int = SAMPLES
    channels: int = CHANNELS

    def __post_init__(self):
        object.__setattr__(self, "conv_filters", tuple(self.conv_filters))
        object.__setattr__(self, "recurrent_conv_filters", tuple(self.recurrent_conv_filters))
        object.__setattr__(self, "head", tuple(self.head))
        if self.head[-1] != 1:
            raise ConfigError("regression block must end in a single unit")


REFERENCE_ARCHITECTURE = Architecture()


@dataclass(frozen=True)
class ModelSpec:
    kind: ModelKind = ModelKind.CONV_BILSTM
    seed: int = 0
    arch: Architecture = field(default=REFERENCE_ARCHITECTURE)

    def __post_init__(self):
        object.__setattr__(self, "kind", ModelKind.parse(self.kind))

    def to_dict(self) -> dict:
        return {"kind": self.kind.value, "seed": self.seed, "arch": asdict(self.arch)}

    @classmethod
    def from_dict(cls, d: dict) -> "ModelSpec":
        arch = Architecture(**{k: tuple(v) if isinstance(v, list) else v for k, v in d["arch"].items()})
        return cls(ModelKind.parse(d["kind"]), int(d["seed"]), arch)


class Model:
    """A built network: ``forward`` maps [B, T, C] standardized signals to [B, 1]."""

    def __init__(self, spec: ModelSpec, net: Sequential):
        self.spec = spec
        self.net = net

    @property
    def params(self):
        return self.net.params

    @property
    def layers(self):
        return self.net.layers

    def forward(self, batch: np.ndarray) -> np.ndarray:
        a = self.spec.arch
        if batch.ndim != 3 or batch.shape[1:] != (a.input_length, a.channels):
            raise ShapeError(f"expected input [batch, {a.input_length}, {a.channels}], got {batch.shape}")
        return self.net.forward(np.asarray(batch, dtype=np.float64))

    __call__ = forward

    def backward(self, dy: np.ndarray) -> np.ndarray:
        return self.net.backward(dy)

    def zero_grad(self):
        self.net.zero_grad()

    def predict(self, x: np.ndarray, batch_size: int = 256) -> np.ndarray:
        """Forward pass in chunks without keeping caches; returns a flat vector."""
        out = []
        for i in range(0, x.shape[0], batch_size):
            out.append(self.forward(x[i:i + batch_size])[:, 0])
            for layer in self.net.layers.values():
                layer._cache = None
        return np.concatenate(out) if out else np.zeros(0)

    def shapes(self, batch: int = 1):
        a = self.spec.arch
        return self.net.shapes((batch, a.input_length, a.channels))

    def state_dict(self) -> "OrderedDict[str, np.ndarray]":
        return OrderedDict((k, p.value.copy()) for k, p in self.params.items())

    def load_state_dict(self, state) -> None:
        if list(state) != list(self.params):
            raise ConfigError("parameter names do not match the model")
        for k, p in self.params.items():
            v = np.asarray(state[k], dtype=np.float64)
            if v.shape != p.value.shape:
                raise ConfigError(f"shape mismatch for {k}: {v.shape} vs {p.value.shape}")
            p.value[...] = v

    def save(self, path, extra: dict | None = None) -> None:
        header = {"model": self.spec.to_dict()}
        if extra:
            header.update(extra)
        save_checkpoint(path, self.params, header)


def _feature_extractor(a: Architecture, filters, rng):
    layers = []
    c_in = a.channels
    for i, c_out in enumerate(filters):
        layers.append((f"conv{i + 1}", Conv1d(c_in, c_out, a.kernel_width, a.stride, "relu", rng)))
        c_in = c_out
    return layers, c_in


def _regression_block(a: Architecture, width_in, rng):
    layers = []
    for i, w in enumerate(a.head):
        act = "identity" if i == len(a.head) - 1 else "relu"
        layers.append((f"dense{i + 1}", Dense(width_in, w, act, rng)))
        width_in = w
    return layers


def build(spec: ModelSpec) -> Model:
    """Instantiate the layer stack; initial weights depend only on ``spec.seed``."""
    a = spec.arch
    rng = np.random.default_rng(spec.seed)
    if spec.kind is ModelKind.CONV:
        layers, c = _feature_extractor(a, a.conv_filters, rng)
        steps = a.input_length
        for _ in a.conv_filters:
            steps = -(-steps // a.stride)
        layers.append(("flatten", Flatten()))
        layers += _regression_block(a, steps * c, rng)
    elif spec.kind is ModelKind.CONV_LSTM:
        layers, c = _feature_extractor(a, a.recurrent_conv_filters, rng)
        layers.append(("lstm1", Lstm(c, a.units, rng=rng)))
        layers.append(("lstm2", Lstm(a.units, a.units, rng=rng)))
        layers.append(("final", FinalState()))
        layers += _regression_block(a, a.units, rng)
    else:
        layers, c = _feature_extractor(a, a.recurrent_conv_filters, rng)
        layers.append(("bilstm", BiLstm(c, a.units, rng=rng)))
        layers.append(("final", FinalState(bidirectional=True)))
        layers += _regression_block(a, 2 * a.units, rng)
    return Model(spec, Sequential(layers))


def param_count(model: Model) -> int:
    return int(sum(p.size for p in model.params.values()))


def load_model(path) -> tuple[Model, dict]:
    """Rebuild a model from an SGNN checkpoint; returns (model, header)."""
    header, state = load_checkpoint(path)
    if "model" not in header:
        raise ConfigError(f"{path}: checkpoint header has no model spec")
    model = build(ModelSpec.from_dict(header["model"]))
    model.load_state_dict(state)
    return model, header
