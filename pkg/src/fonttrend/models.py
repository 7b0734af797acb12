"""Regression CNN / MLP built from nn primitives, plus checkpoint I/O.

A model is an ordered list of layers. Each layer spec is a small dict so the
architecture can be written to and rebuilt from a checkpoint header.
"""

from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path
from typing import Any, Iterable, Sequence

import numpy as np

from .nn import functional as F
from .nn.optim import Parameter
from .nn.tensor import ShapeError, Tensor, concat, make_node, no_grad, wants_grad

DEFAULT_CHANNELS = (16, 32, 64, 128)
DEFAULT_HIDDEN = (64, 32)
DEFAULT_DROPOUT = 0.5


class Layer:
    kind = "layer"

    def params(self) -> list[Parameter]:
        return []

    def spec(self) -> dict[str, Any]:
        return {"kind": self.kind}

    def __call__(self, x: Tensor, training: bool, rng) -> Tensor:
        raise NotImplementedError


class Conv3x3(Layer):
    kind = "conv3x3"

    def __init__(self, c_in: int, c_out: int):
        self.c_in, self.c_out = c_in, c_out
        self.weight = Parameter.from_array(np.zeros((c_out, c_in, 3, 3)), name="conv.weight")
        self.bias = Parameter.from_array(np.zeros(c_out), name="conv.bias")

    def params(self):
        return [self.weight, self.bias]

    def spec(self):
        return {"kind": self.kind, "c_in": self.c_in, "c_out": self.c_out}

    def __call__(self, x, training, rng):
        return F.conv2d(x, self.weight.value, self.bias.value)


class Dense(Layer):
    kind = "dense"

    def __init__(self, n_in: int, n_out: int):
        self.n_in, self.n_out = n_in, n_out
        self.weight = Parameter.from_array(np.zeros((n_out, n_in)), name="dense.weight")
        self.bias = Parameter.from_array(np.zeros(n_out), name="dense.bias")

    def params(self):
        return [self.weight, self.bias]

    def spec(self):
        return {"kind": self.kind, "n_in": self.n_in, "n_out": self.n_out}

    def __call__(self, x, training, rng):
        return F.dense(x, self.weight.value, self.bias.value)


class ReLU(Layer):
    kind = "relu"

    def __call__(self, x, training, rng):
        return F.relu(x)


class MaxPool(Layer):
    kind = "maxpool2x2"

    def __call__(self, x, training, rng):
        return F.maxpool2x2(x)


class GlobalAvgPool(Layer):
    kind = "gap"

    def __call__(self, x, training, rng):
        return F.global_average_pool(x)


class Dropout(Layer):
    kind = "dropout"

    def __init__(self, rate: float):
        self.rate = rate

    def spec(self):
        return {"kind": self.kind, "rate": self.rate}

    def __call__(self, x, training, rng):
        return F.dropout(x, self.rate, training, rng)


def _layer_from_spec(spec: dict[str, Any]) -> Layer:
    kind = spec["kind"]
    if kind == "conv3x3":
        return Conv3x3(spec["c_in"], spec["c_out"])
    if kind == "dense":
        return Dense(spec["n_in"], spec["n_out"])
    if kind == "dropout":
        return Dropout(spec["rate"])
    simple = {"relu": ReLU, "maxpool2x2": MaxPool, "gap": GlobalAvgPool}
    if kind not in simple:
        raise ValueError(f"unknown layer kind {kind!r}")
    return simple[kind]()


class Sequential:
    """Ordered layers ending in a single linear output node."""

    def __init__(self, layers: Sequence[Layer], name: str = "model"):
        self.layers = list(layers)
        self.name = name

    def params(self) -> list[Parameter]:
        return [p for layer in self.layers for p in layer.params()]

    def parameter_count(self) -> int:
        return sum(p.data.size for p in self.params())

    def spec(self) -> dict[str, Any]:
        return {"name": self.name, "layers": [layer.spec() for layer in self.layers]}

    @property
    def input_kind(self) -> str:
        return "image" if self.layers and isinstance(self.layers[0], Conv3x3) else "vector"

    @property
    def in_channels(self) -> int:
        first = self.layers[0]
        return first.c_in if isinstance(first, Conv3x3) else first.n_in

    @property
    def min_side(self) -> int:
        return 2 ** sum(isinstance(layer, MaxPool) for layer in self.layers)

    def check_input(self, shape: tuple[int, ...]) -> None:
        if self.input_kind == "image":
            if len(shape) not in (3, 4):
                raise ShapeError(f"{self.name}: expected (C,H,W) image, got shape {shape}")
            c, h, w = shape[-3:]
            if c != self.in_channels:
                raise ShapeError(f"{self.name}: expected {self.in_channels} channels, got {c}")
            if h < self.min_side or w < self.min_side:
                raise ShapeError(f"{self.name}: H and W must be >= {self.min_side}, got H={h}, W={w}")
        else:
            if len(shape) not in (1, 2) or shape[-1] != self.in_channels:
                raise ShapeError(f"{self.name}: expected vector of length {self.in_channels}, got shape {shape}")

    def forward(self, x: Tensor, training: bool = False, rng=None) -> Tensor:
        """Run the layers on one sample or a same-shaped batch."""
        self.check_input(x.shape)
        for layer in self.layers:
            x = layer(x, training, rng)
        return x

    def forward_batch(self, inputs: Sequence[np.ndarray], training: bool = False, rng=None) -> Tensor:
        """Predictions (B,) for inputs that may differ in spatial size.

        Same-shaped inputs are stacked and run together, in order of first
        appearance; the result is permuted back to input order.
        """
        groups: dict[tuple[int, ...], list[int]] = {}
        for i, arr in enumerate(inputs):
            groups.setdefault(np.shape(arr), []).append(i)
        outs, order = [], []
        for shape, idx in groups.items():
            batch = Tensor(np.stack([inputs[i] for i in idx]))
            outs.append(self.forward(batch, training, rng).reshape(len(idx)))
            order.extend(idx)
        pred = outs[0] if len(outs) == 1 else concat(outs)
        if order != sorted(order):
            inverse = np.argsort(order)
            pred = _take(pred, inverse)
        return pred

    def predict(self, x: np.ndarray) -> float:
        """Raw (unclamped) regression output for one input, evaluation mode."""
        with no_grad():
            out = self.forward(Tensor(x))
        return float(out.data.reshape(-1)[0])

    def predict_many(self, inputs: Sequence[np.ndarray]) -> np.ndarray:
        with no_grad():
            return self.forward_batch(inputs).data.reshape(-1).copy()

    def get_flat(self) -> list[np.ndarray]:
        return [p.data.copy() for p in self.params()]

    def set_flat(self, arrays: Iterable[np.ndarray]) -> None:
        params = self.params()
        arrays = list(arrays)
        if len(arrays) != len(params):
            raise ValueError(f"expected {len(params)} parameter arrays, got {len(arrays)}")
        for p, a in zip(params, arrays):
            if a.shape != p.shape:
                raise ShapeError(f"parameter {p.name}: shape {a.shape} != {p.shape}")
            p.value.data[...] = a


def _take(t: Tensor, index: np.ndarray) -> Tensor:
    def backward(g):
        if wants_grad(t):
            full = np.zeros_like(t.data)
            np.add.at(full, index, g)
            t._accumulate(full)

    return make_node(t.data[index], (t,), backward)


def cnn_regressor(
    in_channels: int = 3,
    channels: Sequence[int] = DEFAULT_CHANNELS,
    hidden: Sequence[int] = DEFAULT_HIDDEN,
    dropout: float = DEFAULT_DROPOUT,
) -> Sequential:
    """Conv blocks (conv3x3-ReLU-maxpool), GAP, then the dense head."""
    layers: list[Layer] = []
    c = in_channels
    for c_out in channels:
        layers += [Conv3x3(c, c_out), ReLU(), MaxPool()]
        c = c_out
    layers.append(GlobalAvgPool())
    layers += _head(c, hidden, dropout)
    return Sequential(layers, name="cnn")


def mlp_regressor(n_in: int, hidden: Sequence[int] = DEFAULT_HIDDEN, dropout: float = DEFAULT_DROPOUT) -> Sequential:
    return Sequential(_head(n_in, hidden, dropout), name="mlp")


def _head(n_in: int, hidden: Sequence[int], dropout: float) -> list[Layer]:
    layers: list[Layer] = []
    n = n_in
    for h in hidden:
        layers += [Dense(n, h), ReLU(), Dropout(dropout)]
        n = h
    layers.append(Dense(n, 1))
    return layers


def init_parameters(model: Sequential, seed: int) -> Sequential:
    """He-uniform weights, zero biases; deterministic in ``seed``."""
    rng = np.random.default_rng(seed)
    for layer in model.layers:
        if isinstance(layer, Conv3x3):
            fan_in = layer.c_in * 9
        elif isinstance(layer, Dense):
            fan_in = layer.n_in
        else:
            continue
        bound = np.sqrt(6.0 / fan_in)
        layer.weight.value.data[...] = rng.uniform(-bound, bound, size=layer.weight.shape)
        layer.bias.value.data[...] = 0.0
    return model


# ---------------------------------------------------------------------------
# checkpoint container
#
#   b"FTCKPT\x00\x01"  magic + format version
#   uint32 LE          header length
#   header             canonical JSON (sorted keys): layer spec, array table, meta
#   payload            arrays as contiguous little-endian float64, in table order

MAGIC = b"FTCKPT\x00\x01"


def save_checkpoint(
    path: str | Path,
    spec: dict[str, Any],
    arrays: dict[str, np.ndarray],
    meta: dict[str, Any] | None = None,
) -> str:
    """Write a checkpoint and return the sha256 of its bytes."""
    table = []
    chunks = []
    offset = 0
    for name in arrays:
        a = np.ascontiguousarray(arrays[name], dtype="<f8")
        table.append({"name": name, "shape": list(a.shape), "offset": offset})
        chunks.append(a.tobytes())
        offset += a.nbytes
    header = json.dumps({"spec": spec, "arrays": table, "meta": meta or {}}, sort_keys=True).encode()
    blob = MAGIC + struct.pack("<I", len(header)) + header + b"".join(chunks)
    Path(path).write_bytes(blob)
    return hashlib.sha256(blob).hexdigest()


def load_checkpoint(path: str | Path) -> tuple[dict[str, Any], dict[str, np.ndarray], dict[str, Any]]:
    blob = Path(path).read_bytes()
    if blob[: len(MAGIC)] != MAGIC:
        raise ValueError(f"{path}: not a checkpoint file (bad magic)")
    pos = len(MAGIC)
    (hlen,) = struct.unpack("<I", blob[pos : pos + 4])
    pos += 4
    header = json.loads(blob[pos : pos + hlen].decode())
    payload = memoryview(blob)[pos + hlen :]
    arrays = {}
    for entry in header["arrays"]:
        n = int(np.prod(entry["shape"], dtype=np.int64))
        a = np.frombuffer(payload, dtype="<f8", count=n, offset=entry["offset"])
        arrays[entry["name"]] = a.reshape(entry["shape"]).astype(np.float64)
    return header["spec"], arrays, header["meta"]


def model_arrays(model: Sequential, prefix: str = "param") -> dict[str, np.ndarray]:
    return {f"{prefix}.{i:03d}": a for i, a in enumerate(model.get_flat())}


def save_model(path: str | Path, model: Sequential, meta: dict[str, Any] | None = None) -> str:
    return save_checkpoint(path, model.spec(), model_arrays(model), meta)


def build_model(spec: dict[str, Any]) -> Sequential:
    return Sequential([_layer_from_spec(s) for s in spec["layers"]], name=spec.get("name", "model"))


def load_model(path: str | Path) -> tuple[Sequential, dict[str, Any]]:
    spec, arrays, meta = load_checkpoint(path)
    model = build_model(spec)
    model.set_flat(arrays[k] for k in sorted(k for k in arrays if k.startswith("param.")))
    return model, meta
