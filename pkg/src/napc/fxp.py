"""Fixed-point inference for quantized models.

Every layer ``n`` carries power-of-two scales ``i_n = 2**i_exp`` (inputs and
hidden state) and ``w_n = 2**w_exp`` (weights). Integer tensors:

* FC:   ``W~ = round(W w_n)``, ``B~ = round(B w_n i_n)``, output scale ``o_n = w_n i_n``
* LSTM: ``W~ = round(W w_n)``, ``U~ = round(U w_n)``, ``B~ = round(B w_n i_n)``, ``o_n = i_n``

A layer input arriving with scale ``o_{n-1}`` is rescaled to ``i_n`` by an
exact shift with round-half-away-from-zero. Matmuls accumulate exactly in
int64; LSTM gate pre-activations are divided by ``w_n i_n`` into float32, the
cell state stays float32 and the hidden state is re-integerized at ``i_n``.

Two code paths exist: batched functions over (B, T, .) arrays, used by the
quantizer's hybrid evaluation, and :class:`FxpEngine`, a per-frame streaming
engine with all buffers allocated up front, used for inference and
benchmarking. Tests hold them equal.
"""
from __future__ import annotations

import platform
import resource
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import container
from .dataio import Sequence, pad_batch
from .errors import DataError, NumericalError
from .model import (GATE_ORDER, FloatModel, ModelSpec, Prediction, Weights, apply_head, dot,
                    fc_in_forward, fc_out_forward, lstm_cell, lstm_layer_forward, sigmoid, tanh)

SENSOR_FPS = 10.0
ACC_LIMIT = 2 ** 63 - 1


def round_half_away(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    return np.sign(x) * np.floor(np.abs(x) + 0.5)


def shift_round(a: np.ndarray, shift: int) -> np.ndarray:
    """Exact ``round_half_away(a * 2**shift)`` for int64 ``a``."""
    a = np.asarray(a, dtype=np.int64)
    if shift >= 0:
        if shift and a.size and int(np.abs(a).max()) >= 2 ** (62 - shift):
            raise NumericalError("overflow in left shift")
        return a << shift
    k = -shift
    mag = (np.abs(a) + (1 << (k - 1))) >> k
    return np.where(a < 0, -mag, mag)


# --------------------------------------------------------------------------- activation tables


@dataclass
class ActivationTable:
    """Piecewise-linear table for sigmoid or tanh on [-clamp, clamp]."""

    function: str
    resolution: int = 2048
    clamp: float = 8.0
    values: np.ndarray = field(default=None, repr=False)
    max_error: float = 0.0

    def __post_init__(self):
        if self.function not in ("sigmoid", "tanh"):
            raise ValueError(f"unknown activation {self.function!r}")
        if self.values is None:
            grid = np.linspace(-self.clamp, self.clamp, self.resolution)
            exact = 1.0 / (1.0 + np.exp(-grid)) if self.function == "sigmoid" else np.tanh(grid)
            self.values = exact.astype(np.float32)
        self.values = np.asarray(self.values, dtype=np.float32)
        self.diffs = np.diff(self.values).astype(np.float32)
        self.inv_step = np.float32((self.resolution - 1) / (2 * self.clamp))
        if not self.max_error:
            self.max_error = self._measure_error()

    def _measure_error(self) -> float:
        x = np.linspace(-2 * self.clamp, 2 * self.clamp, 200001).astype(np.float32)
        exact = 1.0 / (1.0 + np.exp(-x.astype(np.float64))) if self.function == "sigmoid" else np.tanh(x.astype(np.float64))
        return float(np.max(np.abs(self(x) - exact)))

    def __call__(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float32)
        pos = (np.clip(x, -self.clamp, self.clamp) + np.float32(self.clamp)) * self.inv_step
        idx = np.minimum(np.floor(pos), self.resolution - 2)
        frac = pos - idx
        k = idx.astype(np.int64)
        return self.values[k] + frac * self.diffs[k]

    def apply_into(self, x, out, pos, fl, idx, y1):
        """In-place variant of ``__call__``; every argument is a preallocated buffer."""
        np.clip(x, -self.clamp, self.clamp, out=pos)
        np.add(pos, np.float32(self.clamp), out=pos)
        np.multiply(pos, self.inv_step, out=pos)
        np.floor(pos, out=fl)
        np.minimum(fl, np.float32(self.resolution - 2), out=fl)
        np.copyto(idx, fl, casting="unsafe")
        np.subtract(pos, fl, out=pos)
        np.take(self.values, idx, out=out)
        np.take(self.diffs, idx, out=y1)
        np.multiply(pos, y1, out=y1)
        np.add(out, y1, out=out)
        return out


def make_tables(resolution: int = 2048, clamp: float = 8.0) -> dict[str, ActivationTable]:
    return {"sigmoid": ActivationTable("sigmoid", resolution, clamp),
            "tanh": ActivationTable("tanh", resolution, clamp)}


# --------------------------------------------------------------------------- quantized model


@dataclass
class QLayer:
    name: str
    kind: str  # "fc" or "lstm"
    W: np.ndarray
    B: np.ndarray
    i_exp: int
    w_exp: int
    U: np.ndarray | None = None

    @property
    def o_exp(self) -> int:
        return self.i_exp + self.w_exp if self.kind == "fc" else self.i_exp

    @property
    def i_scale(self) -> float:
        return 2.0 ** self.i_exp

    @property
    def w_scale(self) -> float:
        return 2.0 ** self.w_exp

    @property
    def o_scale(self) -> float:
        return 2.0 ** self.o_exp

    def accumulator_bound(self, bit_width: int) -> int:
        """Largest possible |accumulator| for any representable input and hidden state."""
        max_in = 2 ** (bit_width - 1) - 1
        bound = np.abs(self.W).sum(axis=0).astype(object) * max_in + np.abs(self.B).astype(object)
        if self.U is not None:
            bound = bound + np.abs(self.U).sum(axis=0).astype(object) * (2 ** self.i_exp)
        return int(max(bound)) if len(bound) else 0


@dataclass
class QuantizedModel:
    spec: ModelSpec
    layers: list[QLayer]
    bit_width: int = 32
    activation_mode: str = "float"
    tables: dict | None = None
    name: str = "qmodel"

    kind = "quantized"

    def __post_init__(self):
        if self.bit_width not in (16, 32):
            raise ValueError("bit_width must be 16 or 32")
        if self.activation_mode not in ("float", "lut"):
            raise ValueError("activation_mode must be 'float' or 'lut'")
        if self.activation_mode == "lut" and self.tables is None:
            self.tables = make_tables()
        limit = 2 ** (self.bit_width - 1)
        for layer in self.layers:
            for arr in (layer.W, layer.B, layer.U):
                if arr is not None and arr.size and int(np.abs(arr).max()) >= limit:
                    raise DataError(f"{layer.name}: integer weights exceed {self.bit_width}-bit range")
            if layer.accumulator_bound(self.bit_width) > ACC_LIMIT:
                raise DataError(f"{layer.name}: accumulator may overflow 64 bits")

    def activations(self):
        if self.activation_mode == "lut":
            return self.tables["sigmoid"], self.tables["tanh"]
        return sigmoid, tanh

    def predict(self, sequence: Sequence) -> Prediction:
        return fxp_forward_sequence(self, sequence)

    def predict_many(self, sequences) -> list[Prediction]:
        sequences = list(sequences)
        out = []
        for start in range(0, len(sequences), 64):
            chunk = sequences[start:start + 64]
            x, lengths = pad_batch(chunk)
            y = hybrid_forward(self.spec, None, self.layers, x, self.bit_width, self.activations())
            out.extend(Prediction(y[b, :lengths[b]].copy()) for b in range(len(chunk)))
        return out


# --------------------------------------------------------------------------- batched layer ops


def _check_range(a: np.ndarray, bit_width: int, what: str) -> None:
    if a.size and int(np.abs(a).max()) >= 2 ** (bit_width - 1):
        raise NumericalError(f"{what} exceeds {bit_width}-bit range")


def fxp_fc_forward(W: np.ndarray, B: np.ndarray, I: np.ndarray) -> np.ndarray:
    """``O~ = I~ W~ + B~`` with exact int64 accumulation."""
    return np.asarray(I, dtype=np.int64) @ np.asarray(W, dtype=np.int64) + np.asarray(B, dtype=np.int64)


def dequantize_preact(acc: np.ndarray, exp: int) -> np.ndarray:
    return np.ldexp(acc.astype(np.float64), -exp).astype(np.float32)


def fxp_lstm_step(layer: QLayer, I: np.ndarray, H: np.ndarray, C: np.ndarray, activations=(sigmoid, tanh)):
    """One quantized LSTM step: returns (H~_t int64, C_t float32)."""
    acc = I @ layer.W + H @ layer.U + layer.B
    m = dequantize_preact(acc, layer.w_exp + layer.i_exp)
    h, c = lstm_cell(m, C, *activations)
    return round_half_away(np.ldexp(h.astype(np.float64), layer.i_exp)).astype(np.int64), c


def _to_input(state, layer: QLayer, bit_width: int) -> np.ndarray:
    kind, arr, exp = state
    if kind == "float":
        q = round_half_away(np.ldexp(arr.astype(np.float64), layer.i_exp))
        if q.size and np.abs(q).max() >= 2.0 ** (bit_width - 1):
            raise NumericalError(f"{layer.name}: input exceeds {bit_width}-bit range")
        return q.astype(np.int64)
    q = shift_round(arr, layer.i_exp - exp)
    _check_range(q, bit_width, f"{layer.name}: input")
    return q


def apply_qlayer(layer: QLayer, state, bit_width: int, activations=(sigmoid, tanh)):
    """Run one quantized layer over a (B, T, .) batch. ``state`` is ("float", arr, None) or ("fxp", arr, exp)."""
    I = _to_input(state, layer, bit_width)
    if layer.kind == "fc":
        out = fxp_fc_forward(layer.W, layer.B, I)
        _check_range(out, bit_width, f"{layer.name}: output")
        return ("fxp", out, layer.o_exp)
    batch, T, _ = I.shape
    U = layer.U.shape[0]
    xw = I @ layer.W + layer.B
    H = np.zeros((batch, U), dtype=np.int64)
    C = np.zeros((batch, U), dtype=np.float32)
    out = np.empty((batch, T, U), dtype=np.int64)
    exp = layer.w_exp + layer.i_exp
    for t in range(T):
        m = dequantize_preact(xw[:, t] + H @ layer.U, exp)
        h, C = lstm_cell(m, C, *activations)
        H = round_half_away(np.ldexp(h.astype(np.float64), layer.i_exp)).astype(np.int64)
        out[:, t] = H
    _check_range(out, bit_width, f"{layer.name}: hidden state")
    return ("fxp", out, layer.o_exp)


def to_float(state) -> np.ndarray:
    kind, arr, exp = state
    return arr if kind == "float" else dequantize_preact(arr, exp)


def apply_float_layer(spec: ModelSpec, weights: Weights, index: int, state):
    x = to_float(state)
    if index == 0:
        return ("float", fc_in_forward(weights, x), None)
    if index <= spec.lstm_layers:
        return ("float", lstm_layer_forward(weights, index - 1, x), None)
    return ("float", fc_out_forward(weights, x), None)


def hybrid_forward(spec: ModelSpec, weights: Weights | None, qlayers: list[QLayer], x: np.ndarray,
                   bit_width: int, activations=(sigmoid, tanh)) -> np.ndarray:
    """Head outputs with the first ``len(qlayers)`` layers quantized and the rest float."""
    state = ("float", np.asarray(x, dtype=np.float32), None)
    for n in range(spec.lstm_layers + 2):
        if n < len(qlayers):
            state = apply_qlayer(qlayers[n], state, bit_width, activations)
        else:
            state = apply_float_layer(spec, weights, n, state)
    return apply_head(spec, to_float(state))


# --------------------------------------------------------------------------- streaming engine


class FxpEngine:
    """Per-frame fixed-point inference with every buffer allocated in ``__init__``.

    ``allocations`` counts buffer allocations; it only grows during construction.
    """

    def __init__(self, qmodel: QuantizedModel, debug: bool = False):
        self.q = qmodel
        self.spec = qmodel.spec
        self.debug = debug
        self.allocations = 0
        self.limit = 2 ** (qmodel.bit_width - 1)
        spec = self.spec
        U, C, D = spec.lstm_units, spec.num_classes, spec.input_dim
        self.lut = qmodel.activation_mode == "lut"
        if self.lut:
            self.t_sig, self.t_tanh = qmodel.tables["sigmoid"], qmodel.tables["tanh"]
        a = self._alloc
        self.x64 = a(D, np.float64)
        self.x64b = a(D, np.float64)
        self.xin = a(D, np.int64)
        self.fc_in_acc = a(U, np.int64)
        L = spec.lstm_layers
        self.lin = [a(U, np.int64) for _ in range(L)]
        self.H = [a(U, np.int64) for _ in range(L)]
        self.C = [a(U, np.float32) for _ in range(L)]
        self.acc4 = a(4 * U, np.int64)
        self.acc4b = a(4 * U, np.int64)
        self.m64 = a(4 * U, np.float64)
        self.m = a(4 * U, np.float32)
        self.g = a(4 * U, np.float32)
        self.t1 = a(4 * U, np.float32)
        self.t2 = a(4 * U, np.float32)
        self.t3 = a(4 * U, np.float32)
        self.fl = a(4 * U, np.float32)
        self.idx = a(4 * U, np.int64)
        self.mask = a(4 * U, np.bool_)
        self.tc = a(U, np.float32)
        self.h64 = a(U, np.float64)
        self.h64b = a(U, np.float64)
        self.ish = a(U, np.int64)
        self.ish2 = a(U, np.int64)
        self.out_in = a(U, np.int64)
        self.out_acc = a(C, np.int64)
        self.out64 = a(C, np.float64)
        self.z = a(C, np.float32)
        self.count = a(C, np.float32)
        self.half = {}
        self.layers = qmodel.layers
        self.exps = [(l.i_exp, l.w_exp, l.o_exp) for l in self.layers]
        self.reset()

    def _alloc(self, n, dtype):
        self.allocations += 1
        return np.zeros(n, dtype=dtype)

    def reset(self) -> None:
        for h in self.H:
            h.fill(0)
        for c in self.C:
            c.fill(0)
        self.count.fill(0)

    # helpers writing into preallocated buffers ---------------------------------------------

    def _round_into(self, src64, dst_int, tmp64):
        np.abs(src64, out=tmp64)
        np.add(tmp64, 0.5, out=tmp64)
        np.floor(tmp64, out=tmp64)
        np.copysign(tmp64, src64, out=tmp64)
        np.copyto(dst_int, tmp64, casting="unsafe")

    def _shift_into(self, src, dst, shift, tmp):
        if shift >= 0:
            np.left_shift(src, shift, out=dst)
            return
        k = -shift
        np.abs(src, out=tmp)
        np.add(tmp, 1 << (k - 1), out=tmp)
        np.right_shift(tmp, k, out=tmp)
        np.negative(tmp, out=dst)
        np.less(src, 0, out=self.mask[:src.shape[0]])
        np.copyto(tmp, dst, where=self.mask[:src.shape[0]])
        np.copyto(dst, tmp)

    def _sigmoid_into(self, x, out, n):
        if self.lut:
            return self.t_sig.apply_into(x, out, self.t1[:n], self.fl[:n], self.idx[:n], self.t2[:n])
        e, d, neg = self.t1[:n], self.t2[:n], self.t3[:n]
        np.abs(x, out=e)
        np.negative(e, out=e)
        np.exp(e, out=e)
        np.add(e, 1.0, out=d)
        np.divide(e, d, out=neg)
        np.divide(1.0, d, out=out)
        np.greater_equal(x, 0, out=self.mask[:n])
        np.logical_not(self.mask[:n], out=self.mask[:n])
        np.copyto(out, neg, where=self.mask[:n])
        return out

    def _tanh_into(self, x, out, n):
        if self.lut:
            return self.t_tanh.apply_into(x, out, self.t1[:n], self.fl[:n], self.idx[:n], self.t2[:n])
        return np.tanh(x, out=out)

    def _check(self, arr, what):
        if self.debug and arr.size and (arr.max() >= self.limit or arr.min() <= -self.limit):
            raise NumericalError(f"{what} exceeds {self.q.bit_width}-bit range")

    # ----------------------------------------------------------------------------------------

    def step(self, frame: np.ndarray) -> np.ndarray:
        """Consume one frame; returns the running count vector (a view of an internal buffer)."""
        spec, U = self.spec, self.spec.lstm_units
        fc_in = self.layers[0]
        np.multiply(frame, fc_in.i_scale, out=self.x64)
        self._round_into(self.x64, self.xin, self.x64b)
        self._check(self.xin, "fc_in: input")
        np.matmul(self.xin, fc_in.W, out=self.fc_in_acc)
        np.add(self.fc_in_acc, fc_in.B, out=self.fc_in_acc)
        self._check(self.fc_in_acc, "fc_in: output")
        prev, prev_exp = self.fc_in_acc, fc_in.o_exp
        for n in range(spec.lstm_layers):
            layer = self.layers[n + 1]
            lin = self.lin[n]
            self._shift_into(prev, lin, layer.i_exp - prev_exp, self.ish)
            self._check(lin, f"{layer.name}: input")
            H, Cst = self.H[n], self.C[n]
            np.matmul(lin, layer.W, out=self.acc4)
            np.add(self.acc4, layer.B, out=self.acc4)
            np.matmul(H, layer.U, out=self.acc4b)
            np.add(self.acc4, self.acc4b, out=self.acc4)
            np.multiply(self.acc4, 2.0 ** -(layer.w_exp + layer.i_exp), out=self.m64)
            np.copyto(self.m, self.m64, casting="same_kind")
            m, g = self.m, self.g
            self._sigmoid_into(m[:2 * U], g[:2 * U], 2 * U)
            self._tanh_into(m[2 * U:3 * U], g[2 * U:3 * U], U)
            self._sigmoid_into(m[3 * U:], g[3 * U:], U)
            i, f, cg, o = g[:U], g[U:2 * U], g[2 * U:3 * U], g[3 * U:]
            np.multiply(i, cg, out=self.tc)
            np.multiply(f, Cst, out=Cst)
            np.add(self.tc, Cst, out=Cst)
            self._tanh_into(Cst, self.tc, U)
            np.multiply(self.tc, o, out=self.tc)
            np.multiply(self.tc, layer.i_scale, out=self.h64)
            self._round_into(self.h64, H, self.h64b)
            self._check(H, f"{layer.name}: hidden state")
            prev, prev_exp = H, layer.o_exp
        fc_out = self.layers[-1]
        self._shift_into(prev, self.out_in, fc_out.i_exp - prev_exp, self.ish2)
        self._check(self.out_in, "fc_out: input")
        np.matmul(self.out_in, fc_out.W, out=self.out_acc)
        np.add(self.out_acc, fc_out.B, out=self.out_acc)
        self._check(self.out_acc, "fc_out: output")
        np.multiply(self.out_acc, 2.0 ** -fc_out.o_exp, out=self.out64)
        np.copyto(self.z, self.out64, casting="same_kind")
        if spec.abs_activation:
            np.abs(self.z, out=self.z)
        if spec.cumsum:
            np.add(self.count, self.z, out=self.count)
        else:
            np.copyto(self.count, self.z)
        return self.count

    def run(self, frames: np.ndarray) -> np.ndarray:
        self.reset()
        out = np.empty((frames.shape[0], self.spec.num_classes), dtype=np.float32)
        for t in range(frames.shape[0]):
            out[t] = self.step(frames[t])
        return out


class FloatEngine:
    """Per-frame float32 inference with preallocated buffers; the float side of benchmarks."""

    def __init__(self, model: FloatModel):
        self.spec = model.spec
        self.w = model.weights
        self.allocations = 0
        U, C, L = self.spec.lstm_units, self.spec.num_classes, self.spec.lstm_layers
        a = self._alloc
        self.a0 = a(U)
        self.H = [a(U) for _ in range(L)]
        self.C = [a(U) for _ in range(L)]
        self.m = a(4 * U)
        self.mb = a(4 * U)
        self.g = a(4 * U)
        self.t1, self.t2, self.t3 = a(4 * U), a(4 * U), a(4 * U)
        self.mask = np.zeros(4 * U, dtype=np.bool_)
        self.allocations += 1
        self.tc = a(U)
        self.z = a(C)
        self.count = a(C)
        self.reset()

    def _alloc(self, n):
        self.allocations += 1
        return np.zeros(n, dtype=np.float32)

    def reset(self) -> None:
        for arr in (*self.H, *self.C, self.count):
            arr.fill(0)

    _sigmoid_into = FxpEngine._sigmoid_into
    lut = False

    def step(self, frame: np.ndarray) -> np.ndarray:
        spec, U, w = self.spec, self.spec.lstm_units, self.w
        dot(frame, w["fc_in.W"], out=self.a0)
        np.add(self.a0, w["fc_in.B"], out=self.a0)
        x = self.a0
        for n in range(spec.lstm_layers):
            W, Uk, B = w.lstm(n)
            H, Cst = self.H[n], self.C[n]
            dot(x, W, out=self.m)
            np.add(self.m, B, out=self.m)
            dot(H, Uk, out=self.mb)
            np.add(self.m, self.mb, out=self.m)
            g = self.g
            self._sigmoid_into(self.m[:2 * U], g[:2 * U], 2 * U)
            np.tanh(self.m[2 * U:3 * U], out=g[2 * U:3 * U])
            self._sigmoid_into(self.m[3 * U:], g[3 * U:], U)
            np.multiply(g[:U], g[2 * U:3 * U], out=self.tc)
            np.multiply(g[U:2 * U], Cst, out=Cst)
            np.add(self.tc, Cst, out=Cst)
            np.tanh(Cst, out=self.tc)
            np.multiply(self.tc, g[3 * U:], out=H)
            x = H
        dot(x, w["fc_out.W"], out=self.z)
        np.add(self.z, w["fc_out.B"], out=self.z)
        if spec.abs_activation:
            np.abs(self.z, out=self.z)
        if spec.cumsum:
            np.add(self.count, self.z, out=self.count)
        else:
            np.copyto(self.count, self.z)
        return self.count

    run = FxpEngine.run


def make_engine(model, debug: bool = False):
    if isinstance(model, QuantizedModel):
        return FxpEngine(model, debug=debug)
    return FloatEngine(model)


def fxp_forward_sequence(qmodel: QuantizedModel, sequence: Sequence, debug: bool = False) -> Prediction:
    if sequence.input_dim != qmodel.spec.input_dim:
        raise DataError(f"sequence {sequence.id!r}: dim {sequence.input_dim} != {qmodel.spec.input_dim}")
    return Prediction(FxpEngine(qmodel, debug=debug).run(sequence.frames))


# --------------------------------------------------------------------------- benchmark


@dataclass
class BenchReport:
    platform: str
    model_id: str
    model_kind: str
    frames: int
    repetitions: int
    wall_seconds: float
    user_seconds: float
    frames_per_second: float
    realtime_instances: float
    steady_state_allocations: int

    def to_dict(self) -> dict:
        return asdict(self)


def _user_time() -> float:
    return resource.getrusage(resource.RUSAGE_SELF).ru_utime


def benchmark(model, sequence: Sequence, repetitions: int = 1, sensor_fps: float = SENSOR_FPS) -> BenchReport:
    """Single-threaded throughput of the streaming engine on one sequence."""
    if repetitions < 1:
        raise ValueError("repetitions must be >= 1")
    engine = make_engine(model)
    frames = np.ascontiguousarray(sequence.frames, dtype=np.float32)
    engine.reset()
    engine.step(frames[0])  # warm-up
    before = engine.allocations
    wall0, user0 = time.perf_counter(), _user_time()
    for _ in range(repetitions):
        engine.reset()
        for t in range(frames.shape[0]):
            engine.step(frames[t])
    wall, user = time.perf_counter() - wall0, _user_time() - user0
    n = repetitions * frames.shape[0]
    # getrusage has coarse resolution; fall back to wall time for very short runs
    elapsed = user if user > 0 else wall
    fps = n / elapsed
    return BenchReport(
        platform=f"{platform.platform()} {platform.machine()} python-{platform.python_version()}",
        model_id=getattr(model, "name", "model"),
        model_kind=model.kind,
        frames=n,
        repetitions=repetitions,
        wall_seconds=wall,
        user_seconds=user,
        frames_per_second=fps,
        realtime_instances=fps / sensor_fps,
        steady_state_allocations=engine.allocations - before,
    )


# --------------------------------------------------------------------------- file format


def save_qmodel(path, qmodel: QuantizedModel, extra: dict | None = None, include_tables: bool = True) -> str:
    tensors = {}
    layers_meta = []
    for layer in qmodel.layers:
        tensors[f"{layer.name}.W"] = layer.W
        if layer.U is not None:
            tensors[f"{layer.name}.U"] = layer.U
        tensors[f"{layer.name}.B"] = layer.B
        layers_meta.append({"name": layer.name, "kind": layer.kind, "i_exp": layer.i_exp,
                            "w_exp": layer.w_exp, "o_exp": layer.o_exp})
    tables_meta = None
    if qmodel.activation_mode == "lut" and include_tables:
        tables_meta = {}
        for fname, table in qmodel.tables.items():
            tensors[f"lut.{fname}"] = table.values
            tables_meta[fname] = {"resolution": table.resolution, "clamp": table.clamp,
                                  "max_error": table.max_error}
    meta = {"spec": qmodel.spec.to_dict(), "gate_order": list(GATE_ORDER), "bit_width": qmodel.bit_width,
            "activation_mode": qmodel.activation_mode, "scales": layers_meta, "tables": tables_meta,
            "extra": extra or {}}
    return container.write(path, container.KIND_QUANTIZED, meta, tensors)


def load_qmodel(path) -> QuantizedModel:
    kind, meta, tensors = container.read(path)
    if kind != container.KIND_QUANTIZED:
        raise DataError(f"{path} is not a quantized model")
    spec = ModelSpec.from_dict(meta["spec"])
    layers = []
    for lm in meta["scales"]:
        layers.append(QLayer(lm["name"], lm["kind"], tensors[f"{lm['name']}.W"], tensors[f"{lm['name']}.B"],
                             int(lm["i_exp"]), int(lm["w_exp"]), tensors.get(f"{lm['name']}.U")))
    tables = None
    if meta.get("tables"):
        tables = {f: ActivationTable(f, t["resolution"], t["clamp"], values=tensors[f"lut.{f}"],
                                     max_error=t["max_error"])
                  for f, t in meta["tables"].items()}
    return QuantizedModel(spec, layers, meta["bit_width"], meta["activation_mode"], tables, name=Path(path).stem)


def load_any(path):
    """Load a float or quantized model file."""
    from .model import load_model

    kind, _, _ = container.read(path)
    return load_model(path) if kind == container.KIND_FLOAT else load_qmodel(path)
