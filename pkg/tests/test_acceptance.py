"""Acceptance criteria 1-11, one test each; every test prints a PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py -v -s`` to see the lines inline;
they are also repeated in the terminal summary.
"""
import itertools
import time

import numpy as np
import scipy.stats

from conftest import ACCEPTANCE_LINES, desk_spec
from napc.container import file_digest
from napc.dataio import SyntheticConfig, loop_sequence, synth_sequence
from napc.ensemble import calibrate_tau, population_from_finals, quantile_combine
from napc.fxp import benchmark, load_qmodel, save_qmodel
from napc.metrics import (EquivalenceConfig, ErrorPopulation, SimulationConfig, relative_bias,
                          success_curve, test_success_chance)
from napc.model import ModelSpec, Weights, forward_many, forward_sequence, init_weights, save_model
from napc.quantizer import QuantizerConfig, make_calibration, quantize_model, verify_margin
from napc.trainer import GridSpec, TrainConfig, batch_loss, bptt_gradients, grid_search, train
from napc.cli import make_success_hook


def report(number, title, ok, detail=""):
    line = f"criterion {number}: {'PASS' if ok else 'FAIL'} {title}" + (f" ({detail})" if detail else "")
    print(line)
    ACCEPTANCE_LINES.append(line)
    assert ok, line


# --------------------------------------------------------------------------- 1


def _fd_check(trial):
    r = np.random.default_rng(1000 + trial)
    D, L, U, T, B = (int(r.integers(1, 7)), int(r.integers(1, 3)), int(r.integers(1, 7)),
                     int(r.integers(1, 9)), int(r.integers(1, 4)))
    spec = ModelSpec(D, L, U, 2, True, trial % 2 == 0)
    w = init_weights(spec, trial).astype(np.float64)
    for arr in w.params.values():
        arr += r.normal(0, 0.3, arr.shape)
    x = r.normal(size=(B, T, D))
    lengths = r.integers(1, T + 1, size=B)
    lengths[0] = T
    y = r.integers(0, 3, size=(B, 2)).astype(float)
    _, grads = bptt_gradients(spec, w, x, lengths, y, 1.0, 0.7)
    h, worst = 1e-5, 0.0
    for name, arr in w.params.items():
        for idx in np.ndindex(arr.shape):
            orig = arr[idx]
            arr[idx] = orig + h
            up = batch_loss(spec, w, x, lengths, y, 1.0, 0.7)
            arr[idx] = orig - h
            down = batch_loss(spec, w, x, lengths, y, 1.0, 0.7)
            arr[idx] = orig
            fd = (up - down) / (2 * h)
            a = grads[name][idx]
            worst = max(worst, abs(a - fd) / max(abs(a), abs(fd), 1e-8))
    return worst


def test_criterion_01_gradient_check():
    t0 = time.perf_counter()
    worst = max(_fd_check(trial) for trial in range(20))
    elapsed = time.perf_counter() - t0
    report(1, "BPTT gradients match central differences", worst < 1e-4 and elapsed < 60,
           f"20 configs, worst rel err {worst:.2e}, {elapsed:.1f}s")


# --------------------------------------------------------------------------- 2


def test_criterion_02_determinism(desk_train, desk_result, tmp_path):
    spec = desk_spec(True)
    t0 = time.perf_counter()
    again = train(desk_train, spec, TrainConfig())
    other = train(desk_train, spec, TrainConfig(training_seed=1))
    elapsed = time.perf_counter() - t0
    paths = {}
    for name, res in (("a", desk_result), ("b", again), ("c", other)):
        paths[name] = tmp_path / f"{name}.napc"
        save_model(paths[name], spec, res.weights)
    da, db, dc = (file_digest(paths[k]) for k in "abc")
    report(2, "training is reproducible and seed-sensitive", da == db and da != dc and elapsed < 300,
           f"same seeds equal={da == db}, other training seed differs={da != dc}, {elapsed:.0f}s for 2 runs")


# --------------------------------------------------------------------------- 3


def _emitter(spec: ModelSpec) -> Weights:
    w = Weights.zeros(spec)
    w.params["fc_out.B"][:] = [0.1, 0.0]
    return w


def test_criterion_03_cumsum_unbounded_vs_saturating(desk_result, desk_result_nocumsum):
    spec = desk_spec(True)
    emitter = _emitter(spec)
    seq = synth_sequence(SyntheticConfig(seed=5, frames_range=(10, 10)), 0)
    one = forward_sequence(spec, emitter, seq).final
    many = forward_sequence(spec, emitter, loop_sequence(seq, 200)).final
    part_a = np.array_equal(many, 200 * one) and one[0] == 1

    probe = synth_sequence(SyntheticConfig(seed=99), 0, counts=(1, 0))
    looped = loop_sequence(probe, 200)
    ratios = {}
    for label, res, s in (("cumsum", desk_result, desk_spec(True)), ("plain", desk_result_nocumsum, desk_spec(False))):
        single = float(forward_sequence(s, res.weights, probe).float_final[0])
        at_k = float(forward_sequence(s, res.weights, looped).float_final[0])
        ratios[label] = at_k / (200 * single)
    ok = part_a and ratios["plain"] < 0.75 and ratios["cumsum"] >= 0.9
    report(3, "cumsum counts without bound, plain head saturates", ok,
           f"emitter {one.tolist()} -> {many.tolist()}; k=200 / linear: cumsum {ratios['cumsum']:.3f}, "
           f"no cumsum {ratios['plain']:.3f}")


# --------------------------------------------------------------------------- 4, 5


def _identity_model():
    """Integer weights whose every activation is exact: gates saturate so h is 0 or 1."""
    spec = ModelSpec(input_dim=2, lstm_layers=1, lstm_units=2, num_classes=2, cumsum=True)
    w = Weights.zeros(spec)
    w.params["fc_in.W"][:] = [[1, 0], [0, 2]]
    W = w.params["lstm0.W"]
    B = w.params["lstm0.B"]
    B[0:2] = 50   # input gate open
    B[2:4] = 50   # forget gate open
    B[4:6] = 50   # candidate +1
    B[6:8] = 50   # output gate open ...
    W[0, 6:8] = -200  # ... unless the gate channel is on
    w.params["lstm0.U"][1, 0:6] = 1
    w.params["fc_out.W"][:] = [[3, -1], [2, 1]]
    w.params["fc_out.B"][:] = [1, -2]
    frames = np.zeros((16, 2), dtype=np.float32)
    frames[:10, 0] = 1
    frames[:, 1] = np.arange(16) % 3
    return spec, w, frames


def test_criterion_04_quantization_margin(desk_result, desk_test):
    from napc.dataio import Sequence

    spec = desk_spec(True)
    calib = make_calibration(spec, desk_result.weights, desk_test.sequences[:10])
    q = quantize_model(desk_result.weights, spec, calib, QuantizerConfig(eps=0.45, bit_width=32, seed=3))
    margin = verify_margin(q, calib, 0.45)

    ispec, iw, frames = _identity_model()
    seq = Sequence("ident", frames, (0, 0))
    icalib = make_calibration(ispec, iw, [seq])
    iq = quantize_model(iw, ispec, icalib, QuantizerConfig(eps=1e-9, exp_range=(0, 0), seed=0))
    exact = np.array_equal(iq.predict(seq).per_frame, forward_sequence(ispec, iw, seq).per_frame)
    report(4, "32-bit quantization within eps=0.45; identity scales exact", margin["pass"] and exact,
           f"max calibration deviation {margin['max']:.4f}, identity exact={exact}")


def test_criterion_05_quantized_vs_float_finals(desk_result, desk_test, tmp_path):
    spec = desk_spec(True)
    t0 = time.perf_counter()
    calib = make_calibration(spec, desk_result.weights, desk_test.sequences[:10])
    q = quantize_model(desk_result.weights, spec, calib, QuantizerConfig(eps=0.45, bit_width=32, seed=3))
    save_qmodel(tmp_path / "q.napc", q)
    q = load_qmodel(tmp_path / "q.napc")
    held_out = desk_test.sequences[10:]
    f = np.stack([p.final for p in forward_many(spec, desk_result.weights, held_out)])
    g = np.stack([q.predict(s).final for s in held_out])
    dev = int(np.abs(f - g).max())
    elapsed = time.perf_counter() - t0
    report(5, "quantized finals within 4 of float finals on held-out data", dev <= 4 and elapsed < 120,
           f"{len(held_out)} sequences, max |diff| {dev}, {elapsed:.1f}s")


# --------------------------------------------------------------------------- 6


def _oracle_pass(d, m, delta, conf=0.95):
    """Independent t-interval using scipy's t quantile."""
    n = len(d)
    t = scipy.stats.t.ppf(conf, n - 1)
    half = t * np.std(d, ddof=1) / np.sqrt(n)
    lo, hi = (np.mean(d) - half) / np.mean(m), (np.mean(d) + half) / np.mean(m)
    return lo > -delta and hi < delta


def test_criterion_06_bootstrap_correctness():
    manual = np.array([[50, 50], [60, 40], [45, 55]])
    auto = manual + np.array([[0, 0], [0, 0], [2, -1]])
    pop = ErrorPopulation(["a", "b", "c"], ["board", "alight"], manual, auto)
    eq = EquivalenceConfig(delta=0.03)
    d, m = (auto - manual).sum(axis=1), manual.sum(axis=1)
    outcomes = [_oracle_pass(d[list(ix)], m[list(ix)], 0.03) for ix in itertools.product(range(3), repeat=2)]
    p = sum(outcomes) / 9
    R = 100_000
    p_hat = test_success_chance(pop, SimulationConfig(n=2, repetitions=R, seed=11), eq)
    tol = 3 * np.sqrt(p * (1 - p) / R)

    zero = ErrorPopulation(["a", "b", "c"], ["board", "alight"], manual, manual)
    biased = ErrorPopulation(["a", "b", "c"], ["board", "alight"], manual * 10, manual * 11)
    sim = SimulationConfig(n=50, repetitions=500, seed=0)
    p_zero = test_success_chance(zero, sim, EquivalenceConfig(delta=0.01))
    p_biased = test_success_chance(biased, sim, EquivalenceConfig(delta=0.01))
    ok = 0 < p < 1 and abs(p_hat - p) <= tol and p_zero == 1.0 and p_biased == 0.0
    report(6, "bootstrap matches exact enumeration", ok,
           f"exact {p:.4f}, p_hat {p_hat:.4f}, tol {tol:.4f}; zero-error {p_zero}, 10% bias {p_biased}")


# --------------------------------------------------------------------------- 7


def spike_population(size=2000, spike=60):
    """Exact counts everywhere except one sequence with a large overcount."""
    manual = np.full((size, 2), 5)
    auto = manual.copy()
    auto[-1, 0] += spike
    return ErrorPopulation([f"s{i:04d}" for i in range(size)], ["board", "alight"], manual, auto)


def find_dip(curve, margin=0.02):
    for (i, (n1, p1)), (j, (n2, p2)) in itertools.combinations(enumerate(curve), 2):
        if p1 > p2 + margin:
            for n3, p3 in curve[j + 1:]:
                if p3 > p2 + margin:
                    return n1, n2, n3
    return None


def test_criterion_07_spike_anomaly():
    grid = [10, 50, 100, 200, 400, 800, 1600, 3200, 6400]
    curve = success_curve(spike_population(), grid, SimulationConfig(repetitions=2000, seed=7))
    dip = find_dip(curve)
    report(7, "single large error gives a non-monotone success curve", dip is not None,
           f"dip at n={dip}; curve " + ", ".join(f"{n}:{p:.3f}" for n, p in curve))


# --------------------------------------------------------------------------- 8


def undercounting_pool(seed, sequences=1000, members=9):
    """Members = truth + noise in {-1, 0, +1} with weights (0.3, 0.6, 0.1), plus sub-count jitter."""
    r = np.random.default_rng(seed)
    manual = r.poisson(5, (sequences, 2))
    noise = r.choice([-1, 0, 1], p=[0.3, 0.6, 0.1], size=(members, sequences, 2))
    finals = np.maximum(manual + noise + r.uniform(-0.3, 0.3, (members, sequences, 2)), 0)
    pop = ErrorPopulation([f"s{i:04d}" for i in range(sequences)], ["board", "alight"], manual, manual)
    return finals, pop


def test_criterion_08_ensemble_bias_reduction():
    cal_finals, cal = undercounting_pool(0)
    ev_finals, ev = undercounting_pool(1)
    tau, scores = calibrate_tau(cal_finals, cal, SimulationConfig(n=500, repetitions=1000, seed=0),
                                EquivalenceConfig(delta=0.02))
    ens_bias = relative_bias(population_from_finals(quantile_combine(ev_finals, tau), ev))
    member_bias = np.mean([relative_bias(population_from_finals(quantile_combine(f[None], 0.5), ev))
                           for f in ev_finals])
    ok = tau > 0.5 and abs(ens_bias) < abs(member_bias)
    report(8, "calibrated quantile compensates undercounting", ok,
           f"tau*={tau:.3f}, ensemble bias {ens_bias:+.4f}, mean member bias {member_bias:+.4f}")


# --------------------------------------------------------------------------- 9


def test_criterion_09_quantile_combine_suite():
    r = np.random.default_rng(9)
    checks = [
        quantile_combine([[1], [2], [3]], 0.5).tolist() == [2],
        quantile_combine([[2], [3], [3], [5]], 2 / 3).tolist() == [3],
        quantile_combine([[4.0, 1.0]] * 5, 0.3).tolist() == [4, 1],
    ]
    for _ in range(200):
        members = r.normal(5, 2, size=(int(r.integers(1, 12)), 3))
        tau = float(r.uniform())
        perm = r.permutation(len(members))
        checks.append(np.array_equal(quantile_combine(members, tau), quantile_combine(members[perm], tau)))
        taus = np.sort(r.uniform(size=5))
        outs = [quantile_combine(members, t) for t in taus]
        checks.append(all(np.all(a <= b) for a, b in zip(outs, outs[1:])))
    report(9, "nearest-rank examples, permutation invariance, tau monotonicity", all(checks),
           f"{sum(checks)}/{len(checks)} checks")


# --------------------------------------------------------------------------- 10


def _run_desk_grid(train_set, val, out):
    spec = desk_spec(True)
    grid = GridSpec(group_count=4, group_indices=[0, 1], weights_seeds=[0, 1, 2], training_seeds=[0, 1])
    sim = SimulationConfig(n=200, repetitions=500, seed=0)
    hook = make_success_hook(spec, val, sim, EquivalenceConfig(delta=0.1))
    rows = grid_search(train_set, grid, spec, TrainConfig(epochs=10), eval_hook=hook, out_dir=out)
    return rows, (out / "grid.csv").read_bytes()


def test_criterion_10_desk_grid(desk_train, desk_test, tmp_path):
    rows, csv1 = _run_desk_grid(desk_train, desk_test, tmp_path / "a")
    _, csv2 = _run_desk_grid(desk_train, desk_test, tmp_path / "b")
    header = csv1.decode().splitlines()[0].split(",")
    per_epoch = [c for c in header if c.startswith("success_e")]
    final = {amount: np.mean([r["epoch_metrics"][-1]["success"] for r in rows if r["data_amount"] == amount])
             for amount in ("one", "rest")}
    ok = (len(rows) == 24 and len(csv1.decode().splitlines()) == 25 and len(per_epoch) == 10
          and csv1 == csv2 and all(r["status"] == "ok" for r in rows) and final["rest"] >= final["one"])
    report(10, "24-cell grid, per-epoch success chance, byte-identical rerun, more data helps", ok,
           f"rows {len(rows)}, identical={csv1 == csv2}, mean final success one-group {final['one']:.3f} "
           f"vs rest {final['rest']:.3f}")


# --------------------------------------------------------------------------- 11


def test_criterion_11_bench_plumbing(desk_result, desk_test):
    from napc.model import FloatModel

    spec = desk_spec(True)
    calib = make_calibration(spec, desk_result.weights, desk_test.sequences[:10])
    q = quantize_model(desk_result.weights, spec, calib, QuantizerConfig(seed=3))
    reports = [benchmark(m, desk_test.sequences[0], repetitions=20)
               for m in (q, FloatModel(spec, desk_result.weights))]
    ok = all(r.realtime_instances == r.frames_per_second / 10 and r.steady_state_allocations == 0
             and r.frames == 20 * len(desk_test.sequences[0]) for r in reports)
    report(11, "bench reports fps/10 real-time instances with zero steady-state allocations", ok,
           "; ".join(f"{r.model_kind} {r.frames_per_second:.0f} fps -> {r.realtime_instances:.1f} instances, "
                     f"allocations {r.steady_state_allocations}" for r in reports))
