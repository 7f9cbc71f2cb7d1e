"""Greedy Monte Carlo search for per-layer power-of-two scales.

Layers are fixed front to back. For layer ``n`` a scale pair (i_exp, w_exp) is
drawn, the layer is quantized, and the hybrid network (layers <= n quantized,
the rest float) is run over the calibration sequences. The draw is accepted
when every frame and class stays within ``eps`` of the float reference;
otherwise both exponents are redrawn. No labels are involved.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .dataio import Sequence, pad_batch
from .errors import NumericalError, QuantizationError
from .fxp import (QLayer, QuantizedModel, apply_float_layer, apply_qlayer, make_tables,
                  round_half_away, to_float, ACC_LIMIT)
from .model import ModelSpec, Weights, apply_head, forward_many, sigmoid, tanh
from .rng import stream

log = logging.getLogger(__name__)


class ScaleRejected(Exception):
    """A rounded tensor does not fit the bit width; the search redraws."""


@dataclass
class QuantizerConfig:
    eps: float = 0.45
    max_iters: int = 512
    bit_width: int = 32
    exp_range: tuple[int, int] | None = None  # inclusive; default [0, 15] or [0, 30]
    seed: int = 0
    activation_mode: str = "float"

    def __post_init__(self):
        if self.eps <= 0:
            raise ValueError("eps must be > 0")
        if self.bit_width not in (16, 32):
            raise ValueError("bit_width must be 16 or 32")
        if self.exp_range is None:
            self.exp_range = (0, 15) if self.bit_width == 16 else (0, 30)


@dataclass
class CalibrationSet:
    sequences: list[Sequence]
    references: list[np.ndarray] = field(default_factory=list)  # (T, C) float32 per sequence

    def batch(self):
        x, lengths = pad_batch(self.sequences)
        return x, lengths


def make_calibration(spec: ModelSpec, weights: Weights, sequences) -> CalibrationSet:
    sequences = list(sequences)
    refs = [p.per_frame.astype(np.float32) for p in forward_many(spec, weights, sequences)]
    return CalibrationSet(sequences, refs)


# --------------------------------------------------------------------------- scaling


def _round_checked(values: np.ndarray, bit_width: int) -> np.ndarray:
    q = round_half_away(values)
    if q.size and np.abs(q).max() >= 2.0 ** (bit_width - 1):
        raise ScaleRejected(f"value exceeds {bit_width}-bit range")
    return q.astype(np.int64)


def scale_fc(W, B, w_n: float, i_n: float, o_prev: float = 1.0, bit_width: int = 32):
    """Returns (W~, B~, o_n, input rescale factor i_n / o_prev)."""
    if w_n <= 0 or i_n <= 0 or o_prev <= 0:
        raise ValueError("scales must be positive")
    W64, B64 = np.asarray(W, dtype=np.float64), np.asarray(B, dtype=np.float64)
    return (_round_checked(W64 * w_n, bit_width), _round_checked(B64 * (w_n * i_n), bit_width),
            w_n * i_n, i_n / o_prev)


def scale_lstm(W, U, B, w_n: float, i_n: float, o_prev: float = 1.0, bit_width: int = 32):
    """Returns (W~, U~, B~, o_n, input rescale factor); ``o_n = i_n``."""
    if w_n <= 0 or i_n <= 0 or o_prev <= 0:
        raise ValueError("scales must be positive")
    f = lambda a: np.asarray(a, dtype=np.float64)  # noqa: E731
    return (_round_checked(f(W) * w_n, bit_width), _round_checked(f(U) * w_n, bit_width),
            _round_checked(f(B) * (w_n * i_n), bit_width), i_n, i_n / o_prev)


def quantize_layer(spec: ModelSpec, weights: Weights, index: int, i_exp: int, w_exp: int, bit_width: int) -> QLayer:
    """Quantize layer ``index`` (0 = fc_in, 1..L = LSTM, L+1 = fc_out) at the given exponents."""
    name = spec.layer_names()[index]
    i_n, w_n = 2.0 ** i_exp, 2.0 ** w_exp
    if name.startswith("lstm"):
        W, U, B = weights.lstm(index - 1)
        Wq, Uq, Bq, _, _ = scale_lstm(W, U, B, w_n, i_n, bit_width=bit_width)
        layer = QLayer(name, "lstm", Wq, Bq, i_exp, w_exp, Uq)
    else:
        Wq, Bq, _, _ = scale_fc(weights[f"{name}.W"], weights[f"{name}.B"], w_n, i_n, bit_width=bit_width)
        layer = QLayer(name, "fc", Wq, Bq, i_exp, w_exp)
    if layer.accumulator_bound(bit_width) > ACC_LIMIT:
        raise ScaleRejected("accumulator bound exceeds 64 bits")
    return layer


# --------------------------------------------------------------------------- search


def _activations(mode: str):
    if mode == "lut":
        t = make_tables()
        return t["sigmoid"], t["tanh"]
    return sigmoid, tanh


def _max_deviation(head: np.ndarray, calib: CalibrationSet, lengths) -> tuple[float, list[float]]:
    per_seq = []
    for b, ref in enumerate(calib.references):
        per_seq.append(float(np.max(np.abs(head[b, :lengths[b]].astype(np.float64) - ref))))
    return max(per_seq), per_seq


@dataclass
class LayerTrace:
    name: str
    draws: int
    i_exp: int
    w_exp: int
    max_abs_dev: float


def quantize_model(template: Weights, spec: ModelSpec, calib: CalibrationSet, config: QuantizerConfig,
                   trace: list | None = None) -> QuantizedModel:
    """Greedy layer-by-layer search; raises QuantizationError naming the exhausted layer."""
    if not calib.references:
        raise ValueError("calibration references missing")
    x, lengths = calib.batch()
    acts = _activations(config.activation_mode)
    lo, hi = config.exp_range
    qlayers: list[QLayer] = []
    prefix = ("float", x.astype(np.float32), None)
    n_layers = spec.lstm_layers + 2
    for n in range(n_layers):
        name = spec.layer_names()[n]
        rng = stream(config.seed, "quantize", n)
        accepted = None
        for draw in range(1, config.max_iters + 1):
            i_exp, w_exp = (int(v) for v in rng.integers(lo, hi + 1, size=2))
            try:
                layer = quantize_layer(spec, template, n, i_exp, w_exp, config.bit_width)
                state = apply_qlayer(layer, prefix, config.bit_width, acts)
                out_state = state
                for k in range(n + 1, n_layers):
                    out_state = apply_float_layer(spec, template, k, out_state)
                head = apply_head(spec, to_float(out_state))
            except (ScaleRejected, NumericalError):
                continue
            if not np.all(np.isfinite(head)):
                continue
            dev, _ = _max_deviation(head, calib, lengths)
            if dev <= config.eps:
                accepted = (layer, state, draw, dev)
                break
        if accepted is None:
            raise QuantizationError(
                f"layer {name}: no scale pair within eps={config.eps} after {config.max_iters} draws", layer=name)
        layer, prefix, draws, dev = accepted
        qlayers.append(layer)
        log.info("%s: accepted i=2^%d w=2^%d after %d draws (max dev %.4g)", name, layer.i_exp, layer.w_exp, draws, dev)
        if trace is not None:
            trace.append(LayerTrace(name, draws, layer.i_exp, layer.w_exp, dev))
    tables = {"sigmoid": acts[0], "tanh": acts[1]} if config.activation_mode == "lut" else None
    return QuantizedModel(spec, qlayers, config.bit_width, config.activation_mode, tables)


def verify_margin(qmodel: QuantizedModel, calib: CalibrationSet, eps: float) -> dict:
    """Max |quantized - reference| per calibration sequence, using the streaming engine."""
    devs = []
    for seq, ref in zip(calib.sequences, calib.references):
        pred = qmodel.predict(seq)
        devs.append(float(np.max(np.abs(pred.per_frame.astype(np.float64) - ref))))
    return {"max_abs_dev": devs, "max": max(devs) if devs else 0.0, "eps": eps,
            "pass": bool(all(d <= eps for d in devs))}
