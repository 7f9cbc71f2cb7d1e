"""The counting network and its float forward pass.

Input FC (linear) -> L stacked LSTM layers -> output FC -> |.| -> running sum.

LSTM gate blocks are stored in the order (i, f, c, o) along the last axis of
``W`` (U x 4U), ``U`` (U x 4U) and ``B`` (4U).
"""
from __future__ import annotations

import hashlib
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import container
from .dataio import Sequence, pad_batch
from .errors import DataError, NumericalError
from .rng import stream

GATE_ORDER = ("i", "f", "c", "o")


@dataclass(frozen=True)
class ModelSpec:
    input_dim: int
    lstm_layers: int = 5
    lstm_units: int = 50
    num_classes: int = 2
    abs_activation: bool = True
    cumsum: bool = True

    def __post_init__(self):
        for name in ("input_dim", "lstm_layers", "lstm_units", "num_classes"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelSpec":
        known = {k: d[k] for k in cls.__dataclass_fields__ if k in d}
        return cls(**known)

    def layer_names(self) -> list[str]:
        return ["fc_in", *(f"lstm{n}" for n in range(self.lstm_layers)), "fc_out"]

    def shapes(self) -> dict[str, tuple[int, ...]]:
        D, U, C = self.input_dim, self.lstm_units, self.num_classes
        out = {"fc_in.W": (D, U), "fc_in.B": (U,)}
        for n in range(self.lstm_layers):
            out[f"lstm{n}.W"] = (U, 4 * U)
            out[f"lstm{n}.U"] = (U, 4 * U)
            out[f"lstm{n}.B"] = (4 * U,)
        out["fc_out.W"] = (U, C)
        out["fc_out.B"] = (C,)
        return out


class Weights:
    """Named parameter tensors, in the storage order of :meth:`ModelSpec.shapes`."""

    def __init__(self, spec: ModelSpec, params: dict[str, np.ndarray], dtype=np.float32):
        shapes = spec.shapes()
        if set(params) != set(shapes):
            raise DataError(f"parameter names {sorted(params)} do not match spec")
        self.spec = spec
        self.params = {}
        for name, shape in shapes.items():
            arr = np.array(params[name], dtype=dtype)
            if arr.shape != shape:
                raise DataError(f"{name}: shape {arr.shape} != {shape}")
            if not np.all(np.isfinite(arr)):
                raise NumericalError(f"{name}: non-finite parameter")
            self.params[name] = arr

    def __getitem__(self, name: str) -> np.ndarray:
        return self.params[name]

    def items(self):
        return self.params.items()

    def astype(self, dtype) -> "Weights":
        return Weights(self.spec, self.params, dtype=dtype)

    def copy(self) -> "Weights":
        return Weights(self.spec, self.params, dtype=next(iter(self.params.values())).dtype)

    def lstm(self, n: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        return self.params[f"lstm{n}.W"], self.params[f"lstm{n}.U"], self.params[f"lstm{n}.B"]

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        for name, arr in self.params.items():
            h.update(name.encode())
            h.update(np.ascontiguousarray(arr, dtype="<f4").tobytes())
        return h.hexdigest()

    def __eq__(self, other) -> bool:
        if not isinstance(other, Weights) or other.spec != self.spec:
            return NotImplemented
        return all(np.array_equal(a, other.params[k]) for k, a in self.params.items())

    @classmethod
    def zeros(cls, spec: ModelSpec) -> "Weights":
        return cls(spec, {k: np.zeros(s) for k, s in spec.shapes().items()})


def init_weights(spec: ModelSpec, weights_seed: int) -> Weights:
    """Glorot-uniform kernels, zero biases, forget-gate bias +1."""
    rng = stream(weights_seed, "weights")
    params = {}
    for name, shape in spec.shapes().items():
        if name.endswith(".B"):
            b = np.zeros(shape)
            if name.startswith("lstm"):
                U = spec.lstm_units
                b[U:2 * U] = 1.0
            params[name] = b
        else:
            limit = np.sqrt(6.0 / (shape[0] + shape[1]))
            params[name] = rng.uniform(-limit, limit, size=shape)
    return Weights(spec, params)


# --------------------------------------------------------------------------- arithmetic


def dot(a: np.ndarray, b: np.ndarray, out=None) -> np.ndarray:
    """``a @ b`` accumulated strictly left to right over the shared axis.

    Unlike BLAS, the result for one row never depends on how many rows are
    computed together, so batched, single-sequence and streaming inference
    agree bit for bit.
    """
    return np.einsum("...d,du->...u", a, b, out=out)


# --------------------------------------------------------------------------- activations


def sigmoid(x: np.ndarray) -> np.ndarray:
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e)).astype(x.dtype, copy=False)


def tanh(x: np.ndarray) -> np.ndarray:
    return np.tanh(x)


def lstm_cell(m: np.ndarray, c_prev: np.ndarray, act_sigmoid=sigmoid, act_tanh=tanh):
    """Gate math shared by the float and fixed-point paths. ``m`` is (..., 4U) pre-activations."""
    U = m.shape[-1] // 4
    i = act_sigmoid(m[..., :U])
    f = act_sigmoid(m[..., U:2 * U])
    g = act_tanh(m[..., 2 * U:3 * U])
    o = act_sigmoid(m[..., 3 * U:])
    c = i * g + f * c_prev
    h = act_tanh(c) * o
    return h, c


def lstm_step(layer_weights, x: np.ndarray, h_prev: np.ndarray, c_prev: np.ndarray):
    """One LSTM step. ``layer_weights`` is (W, U, B); returns (h, c)."""
    W, Uk, B = layer_weights
    # Same association as lstm_layer_forward: (x W + B) + h U.
    m = (dot(x, W) + B) + dot(h_prev, Uk)
    h, c = lstm_cell(m, c_prev)
    if not (np.all(np.isfinite(h)) and np.all(np.isfinite(c))):
        raise NumericalError("non-finite LSTM state")
    return h, c


# --------------------------------------------------------------------------- forward


@dataclass
class Prediction:
    per_frame: np.ndarray  # (T, C) float32 cumulative counts

    @property
    def float_final(self) -> np.ndarray:
        return self.per_frame[-1]

    @property
    def final(self) -> np.ndarray:
        return round_counts(self.per_frame[-1])


def round_counts(values) -> np.ndarray:
    """Round half away from zero, elementwise, to int64."""
    v = np.asarray(values, dtype=np.float64)
    return (np.sign(v) * np.floor(np.abs(v) + 0.5)).astype(np.int64)


def apply_head(spec: ModelSpec, z: np.ndarray, axis: int = -2) -> np.ndarray:
    if spec.abs_activation:
        z = np.abs(z)
    if spec.cumsum:
        z = np.cumsum(z, axis=axis, dtype=z.dtype)
    return z


def fc_in_forward(weights: Weights, x: np.ndarray) -> np.ndarray:
    return dot(x, weights["fc_in.W"]) + weights["fc_in.B"]


def lstm_layer_forward(weights: Weights, n: int, x: np.ndarray) -> np.ndarray:
    """Run LSTM layer ``n`` over a (B, T, U) batch from zero state."""
    W, Uk, B = weights.lstm(n)
    batch, T, _ = x.shape
    U = Uk.shape[0]
    dtype = W.dtype
    h = np.zeros((batch, U), dtype=dtype)
    c = np.zeros((batch, U), dtype=dtype)
    xw = dot(x, W) + B
    out = np.empty((batch, T, U), dtype=dtype)
    for t in range(T):
        h, c = lstm_cell(xw[:, t] + dot(h, Uk), c)
        out[:, t] = h
    if not np.all(np.isfinite(out)):
        raise NumericalError(f"non-finite output in lstm{n}")
    return out


def fc_out_forward(weights: Weights, h: np.ndarray) -> np.ndarray:
    return dot(h, weights["fc_out.W"]) + weights["fc_out.B"]


def forward_batch(spec: ModelSpec, weights: Weights, x: np.ndarray) -> np.ndarray:
    """Per-frame head outputs for a zero-padded (B, T, D) batch; shape (B, T, C).

    Frames past a sequence's length are padding; outputs at valid frames do not
    depend on them.
    """
    if x.shape[-1] != spec.input_dim:
        raise DataError(f"input dim {x.shape[-1]} != model input dim {spec.input_dim}")
    a = fc_in_forward(weights, x.astype(weights["fc_in.W"].dtype, copy=False))
    for n in range(spec.lstm_layers):
        a = lstm_layer_forward(weights, n, a)
    return apply_head(spec, fc_out_forward(weights, a))


def forward_sequence(spec: ModelSpec, weights: Weights, sequence: Sequence) -> Prediction:
    if sequence.input_dim != spec.input_dim:
        raise DataError(f"sequence {sequence.id!r}: dim {sequence.input_dim} != {spec.input_dim}")
    return Prediction(forward_batch(spec, weights, sequence.frames[None])[0])


def forward_many(spec: ModelSpec, weights: Weights, sequences, batch_size: int = 64) -> list[Prediction]:
    out = []
    for start in range(0, len(sequences), batch_size):
        chunk = sequences[start:start + batch_size]
        x, lengths = pad_batch(chunk)
        y = forward_batch(spec, weights, x)
        out.extend(Prediction(y[b, :lengths[b]].copy()) for b in range(len(chunk)))
    return out


# --------------------------------------------------------------------------- model file


class FloatModel:
    """A spec plus float weights; the unit handled by inference, ensembles and the CLI."""

    kind = "float"

    def __init__(self, spec: ModelSpec, weights: Weights, name: str = "model"):
        self.spec = spec
        self.weights = weights
        self.name = name

    def predict(self, sequence: Sequence) -> Prediction:
        return forward_sequence(self.spec, self.weights, sequence)

    def predict_many(self, sequences) -> list[Prediction]:
        return forward_many(self.spec, self.weights, list(sequences))


def save_model(path, spec: ModelSpec, weights: Weights, extra: dict | None = None) -> str:
    meta = {"spec": spec.to_dict(), "gate_order": list(GATE_ORDER), "extra": extra or {}}
    return container.write(path, container.KIND_FLOAT, meta, weights.params)


def load_model(path) -> FloatModel:
    kind, meta, tensors = container.read(path)
    if kind != container.KIND_FLOAT:
        raise DataError(f"{path} is not a float model")
    if meta.get("gate_order") != list(GATE_ORDER):
        raise DataError(f"{path}: unsupported gate order {meta.get('gate_order')}")
    spec = ModelSpec.from_dict(meta["spec"])
    return FloatModel(spec, Weights(spec, tensors), name=Path(path).stem)
