import numpy as np
import pytest

from napc.dataio import Sequence, SyntheticConfig, loop_sequence, synth_generate
from napc.errors import DataError
from napc.fxp import (ActivationTable, FxpEngine, QLayer, QuantizedModel, benchmark, dequantize_preact,
                      fxp_fc_forward, fxp_lstm_step, load_any, load_qmodel, make_engine, make_tables,
                      round_half_away, save_qmodel, shift_round)
from napc.model import FloatModel, ModelSpec, Weights, init_weights, lstm_step, save_model
from napc.quantizer import QuantizerConfig, make_calibration, quantize_model


def test_fc_example():
    assert fxp_fc_forward(np.array([[3]]), np.array([4]), np.array([2])).tolist() == [10]
    B = np.array([7, -3])
    assert fxp_fc_forward(np.ones((3, 2), np.int64), B, np.zeros(3, np.int64)).tolist() == [7, -3]


def test_rounding_helpers():
    assert round_half_away([2.5, -2.5, 0.49, -0.5]).tolist() == [3, -3, 0, -1]
    a = np.array([5, -5, 6, -6, 7], np.int64)
    assert shift_round(a, -1).tolist() == round_half_away(a / 2).tolist()
    assert shift_round(a, 3).tolist() == (a * 8).tolist()


def test_lstm_step_cell_matches_float_on_dyadic_values():
    r = np.random.default_rng(0)
    w_exp, i_exp = 4, 3
    D, U = 3, 2
    Wq = r.integers(-20, 20, size=(D, 4 * U))
    Uq = r.integers(-20, 20, size=(U, 4 * U))
    Bq = r.integers(-200, 200, size=4 * U)
    layer = QLayer("lstm0", "lstm", Wq, Bq, i_exp, w_exp, Uq)
    float_layer = (Wq / 2.0 ** w_exp, Uq / 2.0 ** w_exp, Bq / 2.0 ** (w_exp + i_exp))
    float_layer = tuple(a.astype(np.float32) for a in float_layer)
    H, C = np.zeros(U, np.int64), np.zeros(U, np.float32)
    for _ in range(6):
        I = r.integers(-16, 16, size=D)
        H_next, C_next = fxp_lstm_step(layer, I, H, C)
        # the float cell, fed the same dequantized input and hidden state, lands on the same C
        _, c_ref = lstm_step(float_layer, (I / 2.0 ** i_exp).astype(np.float32),
                             (H / 2.0 ** i_exp).astype(np.float32), C)
        assert np.array_equal(C_next, c_ref)
        H, C = H_next, C_next


def test_saturating_scalar_cell():
    w, i = 64, 8
    layer = QLayer("lstm0", "lstm", np.zeros((1, 4), np.int64), np.full(4, 20 * w * i),
                   3, 6, np.zeros((1, 4), np.int64))
    H, C = np.zeros(1, np.int64), np.zeros(1, np.float32)
    for _ in range(3):
        H, C = fxp_lstm_step(layer, np.zeros(1, np.int64), H, C)
    assert abs(C[0] - 3.0) < 1e-2 and H.tolist() == [8]


def test_dequantize():
    assert dequantize_preact(np.array([1024, -3]), 10).tolist() == [1.0, -3 / 1024]


def test_activation_tables():
    tables = make_tables()
    for name, ref in (("sigmoid", lambda x: 1 / (1 + np.exp(-x))), ("tanh", np.tanh)):
        t = tables[name]
        x = np.linspace(-12, 12, 50001)
        y = t(x)
        assert t.resolution == 2048 and t.clamp == 8.0
        assert np.max(np.abs(y - ref(x))) <= 1e-3 and t.max_error <= 1e-3
        assert np.all(np.diff(y) >= 0)
    with pytest.raises(ValueError):
        ActivationTable("relu")


def _qmodel(mode="float", seed=0):
    spec = ModelSpec(6, 2, 4, 2)
    w = init_weights(spec, seed)
    data = synth_generate(SyntheticConfig(input_dim=6, num_sequences=5, frames_range=(12, 16),
                                          events_per_class_range=(0, 2), seed=seed + 1))
    calib = make_calibration(spec, w, data.sequences)
    q = quantize_model(w, spec, calib, QuantizerConfig(eps=0.1, seed=seed, activation_mode=mode))
    return spec, w, q, data


@pytest.mark.parametrize("mode", ["float", "lut"])
def test_streaming_equals_batched(mode):
    _, _, q, data = _qmodel(mode)
    batched = q.predict_many(data.sequences)
    for s, b in zip(data.sequences, batched):
        assert np.array_equal(q.predict(s).per_frame, b.per_frame)


def test_engine_reset_and_dimension_check():
    _, _, q, data = _qmodel()
    engine = FxpEngine(q)
    s = data.sequences[0]
    first = engine.run(s.frames).copy()
    assert np.array_equal(engine.run(s.frames), first)
    with pytest.raises(DataError):
        q.predict(Sequence("bad", np.zeros((3, 5)), (0, 0)))


def test_benchmark_report():
    spec, w, q, data = _qmodel()
    seq = data.sequences[0]
    for model in (q, FloatModel(spec, w)):
        one = benchmark(model, seq, repetitions=3)
        two = benchmark(model, seq, repetitions=6)
        assert one.steady_state_allocations == 0 and two.steady_state_allocations == 0
        assert one.realtime_instances == pytest.approx(one.frames_per_second / 10)
        assert two.frames == 2 * one.frames == 6 * len(seq)
    assert benchmark(q, seq, 1, sensor_fps=20).model_kind == "quantized"
    with pytest.raises(ValueError):
        benchmark(q, seq, 0)


def test_qmodel_file_roundtrip(tmp_path):
    for mode in ("float", "lut"):
        spec, w, q, data = _qmodel(mode, seed=2)
        save_qmodel(tmp_path / f"{mode}.napc", q)
        back = load_qmodel(tmp_path / f"{mode}.napc")
        assert back.activation_mode == mode and back.spec == spec
        assert [(l.i_exp, l.w_exp, l.o_exp) for l in back.layers] == [(l.i_exp, l.w_exp, l.o_exp) for l in q.layers]
        s = data.sequences[0]
        assert np.array_equal(back.predict(s).per_frame, q.predict(s).per_frame)
        assert isinstance(load_any(tmp_path / f"{mode}.napc"), QuantizedModel)
    save_model(tmp_path / "f.napc", spec, w)
    assert isinstance(load_any(tmp_path / "f.napc"), FloatModel)
    with pytest.raises(DataError):
        load_qmodel(tmp_path / "f.napc")


def test_quantized_emitter_counts_loops():
    spec = ModelSpec(3, 1, 2, 2)
    z = lambda *shape: np.zeros(shape, np.int64)  # noqa: E731
    layers = [QLayer("fc_in", "fc", z(3, 2), z(2), 4, 4),
              QLayer("lstm0", "lstm", z(2, 8), z(8), 4, 4, z(2, 8)),
              QLayer("fc_out", "fc", z(2, 2), np.array([round(0.1 * 2 ** 20), 0]), 10, 10)]
    q = QuantizedModel(spec, layers)
    seq = Sequence("s", np.random.default_rng(0).normal(size=(10, 3)), (1, 0))
    assert q.predict(seq).final.tolist() == [1, 0]
    assert q.predict(loop_sequence(seq, 200)).final.tolist() == [200, 0]


def test_invalid_qmodel_rejected():
    spec = ModelSpec(1, 1, 1, 1)
    layers = [QLayer("fc_in", "fc", np.array([[2 ** 20]]), np.zeros(1, np.int64), 0, 0),
              QLayer("lstm0", "lstm", np.zeros((1, 4), np.int64), np.zeros(4, np.int64), 0, 0,
                     np.zeros((1, 4), np.int64)),
              QLayer("fc_out", "fc", np.zeros((1, 1), np.int64), np.zeros(1, np.int64), 0, 0)]
    with pytest.raises(DataError):
        QuantizedModel(spec, layers, bit_width=16)
    assert make_engine(QuantizedModel(spec, layers)).allocations > 0
