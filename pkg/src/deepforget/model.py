"""MLP encoder with a linear head: logits = g(f(x)) with exact reverse-mode gradients."""
from __future__ import annotations

import struct
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import FormatError

CKPT_MAGIC = b"UFCK"
CKPT_VERSION = 1
ACTIVATIONS = ("identity", "relu")


@dataclass(frozen=True, eq=False)
class Layer:
    weight: np.ndarray  # (fan_in, fan_out)
    bias: np.ndarray  # (fan_out,)
    activation: str = "relu"

    @property
    def shape(self) -> tuple[int, int]:
        return self.weight.shape


@dataclass(frozen=True, eq=False)
class Checkpoint:
    """Encoder layers followed by the head (always the last layer, identity activation)."""

    layers: tuple[Layer, ...]
    seed: int = 0
    format_version: int = CKPT_VERSION

    def __post_init__(self):
        if len(self.layers) < 2:
            raise ValueError("need at least one encoder layer and a head")
        for i, layer in enumerate(self.layers):
            if layer.activation not in ACTIVATIONS:
                raise ValueError(f"layer {i}: unknown activation {layer.activation!r}")
            if layer.bias.shape != (layer.weight.shape[1],):
                raise ValueError(f"layer {i}: bias shape {layer.bias.shape} != ({layer.weight.shape[1]},)")
            if i and self.layers[i - 1].weight.shape[1] != layer.weight.shape[0]:
                raise ValueError(f"layer {i}: input dim does not chain with previous layer")
        if self.layers[-1].activation != "identity":
            raise ValueError("head must be linear")

    @property
    def encoder(self) -> tuple[Layer, ...]:
        return self.layers[:-1]

    @property
    def head(self) -> Layer:
        return self.layers[-1]

    @property
    def input_dim(self) -> int:
        return self.layers[0].weight.shape[0]

    @property
    def feature_dim(self) -> int:
        return self.head.weight.shape[0]

    @property
    def num_classes(self) -> int:
        return self.head.weight.shape[1]

    def with_head(self, weight, bias) -> "Checkpoint":
        head = Layer(np.array(weight, dtype=np.float64), np.array(bias, dtype=np.float64), "identity")
        return replace(self, layers=self.encoder + (head,))

    def copy(self) -> "Checkpoint":
        return replace(self, layers=tuple(Layer(l.weight.copy(), l.bias.copy(), l.activation) for l in self.layers))

    def equals(self, other: "Checkpoint") -> bool:
        """Bitwise equality of architecture and parameters."""
        return self.to_bytes() == other.to_bytes()

    def to_bytes(self) -> bytes:
        parts = [struct.pack("<4sIQI", CKPT_MAGIC, self.format_version, self.seed, len(self.layers))]
        for layer in self.layers:
            fan_in, fan_out = layer.shape
            parts.append(struct.pack("<IIB", fan_in, fan_out, ACTIVATIONS.index(layer.activation)))
        for layer in self.layers:
            parts.append(layer.weight.astype("<f8").tobytes())
            parts.append(layer.bias.astype("<f8").tobytes())
        return b"".join(parts)

    def save(self, path) -> None:
        Path(path).write_bytes(self.to_bytes())


def init(arch: Sequence[int], num_classes: int, seed: int = 0) -> Checkpoint:
    """He-normal weights and zero biases. ``arch`` is [input_dim, hidden..., feature_dim]."""
    if len(arch) < 2 or any(int(a) <= 0 for a in arch) or num_classes < 1:
        raise ValueError("arch needs an input size and at least one positive hidden size")
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x1417]))
    sizes = [int(a) for a in arch] + [int(num_classes)]
    layers = []
    for i, (fan_in, fan_out) in enumerate(zip(sizes[:-1], sizes[1:])):
        w = rng.standard_normal((fan_in, fan_out)) * np.sqrt(2.0 / fan_in)
        act = "identity" if i == len(sizes) - 2 else "relu"
        layers.append(Layer(w, np.zeros(fan_out), act))
    return Checkpoint(tuple(layers), seed=int(seed))


def init_layer(fan_in: int, fan_out: int, activation: str, rng: np.random.Generator) -> Layer:
    return Layer(rng.standard_normal((fan_in, fan_out)) * np.sqrt(2.0 / fan_in), np.zeros(fan_out), activation)


@dataclass(eq=False)
class ForwardTrace:
    inputs: np.ndarray
    pre: list[np.ndarray]  # pre-activation per layer
    post: list[np.ndarray]  # activation per layer; post[-1] is the logits

    @property
    def features(self) -> np.ndarray:
        return self.post[-2] if len(self.post) > 1 else self.inputs

    @property
    def logits(self) -> np.ndarray:
        return self.post[-1]


@dataclass(eq=False)
class Gradients:
    layers: list[tuple[np.ndarray, np.ndarray]]
    inputs: np.ndarray


def _act(z: np.ndarray, kind: str) -> np.ndarray:
    return np.maximum(z, 0.0) if kind == "relu" else z


def forward(ckpt: Checkpoint, X) -> ForwardTrace:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X.reshape(1, -1)
    if X.shape[1] != ckpt.input_dim:
        raise ValueError(f"input dim {X.shape[1]} != model input dim {ckpt.input_dim}")
    pre, post = [], []
    a = X
    for layer in ckpt.layers:
        z = a @ layer.weight + layer.bias
        a = _act(z, layer.activation)
        pre.append(z)
        post.append(a)
    return ForwardTrace(X, pre, post)


def backward(ckpt: Checkpoint, trace: ForwardTrace, dlogits, dfeatures=None) -> Gradients:
    """Reverse-mode pass for the scalar sum(dlogits * logits) [+ sum(dfeatures * features)]."""
    delta = np.asarray(dlogits, dtype=np.float64)
    head = len(ckpt.layers) - 1
    grads: list[tuple[np.ndarray, np.ndarray]] = [None] * len(ckpt.layers)  # type: ignore[list-item]
    for i in range(len(ckpt.layers) - 1, -1, -1):
        layer = ckpt.layers[i]
        if layer.activation == "relu":
            delta = delta * (trace.pre[i] > 0)
        a_in = trace.post[i - 1] if i else trace.inputs
        grads[i] = (a_in.T @ delta, delta.sum(axis=0))
        delta = delta @ layer.weight.T
        if i == head and dfeatures is not None:
            delta = delta + dfeatures
    return Gradients(grads, delta)


def features(ckpt: Checkpoint, X) -> np.ndarray:
    return forward(ckpt, X).features


def logits(ckpt: Checkpoint, X) -> np.ndarray:
    return forward(ckpt, X).logits


def apply_head(ckpt: Checkpoint, F) -> np.ndarray:
    return np.asarray(F, dtype=np.float64) @ ckpt.head.weight + ckpt.head.bias


def predict(ckpt: Checkpoint, X) -> np.ndarray:
    # np.argmax returns the first maximum, i.e. ties go to the lowest class index
    return np.argmax(logits(ckpt, X), axis=1)


def flatten(arrays: Sequence[tuple[np.ndarray, np.ndarray]]) -> np.ndarray:
    return np.concatenate([np.concatenate([w.ravel(), b.ravel()]) for w, b in arrays])


def param_vector(ckpt: Checkpoint) -> np.ndarray:
    return flatten([(l.weight, l.bias) for l in ckpt.layers])


def load(path) -> Checkpoint:
    return from_bytes(Path(path).read_bytes())


def _unpack(buf: bytes, pos: int, fmt: str):
    size = struct.calcsize(fmt)
    if pos + size > len(buf):
        raise FormatError(f"truncated file: need {size} bytes", pos)
    return struct.unpack_from(fmt, buf, pos), pos + size


def from_bytes(buf: bytes) -> Checkpoint:
    (magic, version, seed, count), pos = _unpack(buf, 0, "<4sIQI")
    if magic != CKPT_MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {CKPT_MAGIC!r}", 0)
    if version != CKPT_VERSION:
        raise FormatError(f"unsupported checkpoint version {version} (reader is v{CKPT_VERSION})", 4)
    if count < 2:
        raise FormatError(f"layer count {count} < 2", 16)
    dims = []
    for i in range(count):
        start = pos
        (fan_in, fan_out, tag), pos = _unpack(buf, pos, "<IIB")
        if tag >= len(ACTIVATIONS):
            raise FormatError(f"layer {i}: unknown activation tag {tag}", start + 8)
        if dims and dims[-1][1] != fan_in:
            raise FormatError(f"layer {i}: shape chain broken ({dims[-1][1]} -> {fan_in})", start)
        dims.append((fan_in, fan_out, ACTIVATIONS[tag]))
    if dims[-1][2] != "identity":
        raise FormatError("head layer must have identity activation", pos - 1)
    layers = []
    for fan_in, fan_out, act in dims:
        nbytes = 8 * (fan_in * fan_out + fan_out)
        if pos + nbytes > len(buf):
            raise FormatError(f"truncated file: need {nbytes} bytes of weights", pos)
        w = np.frombuffer(buf, "<f8", fan_in * fan_out, pos).reshape(fan_in, fan_out).astype(np.float64)
        pos += 8 * fan_in * fan_out
        b = np.frombuffer(buf, "<f8", fan_out, pos).astype(np.float64)
        pos += 8 * fan_out
        layers.append(Layer(w, b, act))
    if pos != len(buf):
        raise FormatError(f"{len(buf) - pos} trailing bytes", pos)
    return Checkpoint(tuple(layers), seed=int(seed), format_version=int(version))
