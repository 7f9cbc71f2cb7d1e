"""``napc`` command-line entry point.

Every command writes a run manifest next to its output: ``<out>.manifest.json``
for file outputs, ``<out>/manifest.json`` for directory outputs. Manifests hold
the resolved configuration, seeds and sha256 digests of inputs and outputs,
and no timestamps, so deterministic commands produce identical manifests.

Exit codes: 0 success, 1 usage, 2 data, 3 numerical failure, 4 quantizer exhaustion.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import logging
import sys
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from .dataio import (SyntheticConfig, load_dataset, loop_sequence, save_dataset, split_groups,
                     synth_generate)
from .ensemble import DEFAULT_TAU_GRID, calibrate_tau, member_finals, quantile_combine, rank_members
from .errors import DataError, NapcError, QuantizationError
from .fxp import benchmark, load_any, save_qmodel
from .metrics import (EquivalenceConfig, ErrorPopulation, SimulationConfig, accuracy, equivalence_test,
                      parse_n_grid, read_population_csv, relative_bias, simulate, success_curve,
                      write_population_csv)
from .model import ModelSpec, forward_many, load_model, save_model
from .quantizer import QuantizerConfig, make_calibration, quantize_model, verify_margin
from .trainer import GridSpec, TrainConfig, grid_search, read_checkpoint, train

log = logging.getLogger("napc")

DETERMINISM_NOTES = (
    "Determinism: all randomness comes from counter-based Philox streams keyed on explicit seeds; "
    "float results are reproducible for a fixed numpy/BLAS build and CPU."
)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


# --------------------------------------------------------------------------- helpers


def _sha256_file(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for block in iter(lambda: f.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def digest(path) -> str:
    """sha256 of a file, or of a directory's files in sorted relative-path order."""
    path = Path(path)
    if path.is_file():
        return _sha256_file(path)
    h = hashlib.sha256()
    for p in sorted(q for q in path.rglob("*") if q.is_file() and q.name != "manifest.json"):
        h.update(str(p.relative_to(path)).encode())
        h.update(_sha256_file(p).encode())
    return h.hexdigest()


def load_yaml(path) -> dict:
    if path is None:
        return {}
    try:
        data = yaml.safe_load(Path(path).read_text())
    except (OSError, yaml.YAMLError) as exc:
        raise DataError(f"cannot read config {path}: {exc}") from exc
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise DataError(f"config {path} must be a mapping")
    return data


def _merge(base: dict, overrides: dict) -> dict:
    return {**base, **{k: v for k, v in overrides.items() if v is not None}}


def write_manifest(out, command: str, config: dict, seeds: dict, inputs: dict, outputs) -> Path:
    out = Path(out)
    target = out / "manifest.json" if out.is_dir() else out.with_name(out.name + ".manifest.json")
    manifest = {
        "command": command,
        "config": config,
        "seeds": seeds,
        "inputs": {k: digest(v) for k, v in sorted(inputs.items()) if v is not None},
        "outputs": {str(Path(p).name if not out.is_dir() else Path(p).relative_to(out)): digest(p)
                    for p in sorted(outputs, key=str)},
        "version": __version__,
    }
    target.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return target


def write_json(path, obj) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def write_csv(path, header, rows) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    Path(path).write_text(buf.getvalue())


def _model_spec(path, input_dim: int) -> ModelSpec:
    """Model spec from a YAML file; ``input_dim`` defaults to the training store's."""
    d = {"input_dim": input_dim, **load_yaml(path)}
    unknown = set(d) - set(ModelSpec.__dataclass_fields__)
    if unknown:
        raise DataError(f"unknown model spec keys {sorted(unknown)}")
    return ModelSpec.from_dict(d)


def _eq_config(args) -> EquivalenceConfig:
    return EquivalenceConfig(delta=args.delta, confidence=args.confidence, mode=args.mode)


def _add_eq_args(p):
    p.add_argument("--delta", type=float, default=0.01)
    p.add_argument("--confidence", type=float, default=0.95)
    p.add_argument("--mode", choices=["pooled", "per_class"], default="pooled")


def _add_sim_args(p, n_default=3600):
    p.add_argument("--n", type=int, default=n_default)
    p.add_argument("--reps", type=int, default=10000)
    p.add_argument("--seed", type=int, required=True)


def _sequence(ds, seq_id):
    try:
        return ds.by_id(seq_id)
    except KeyError as exc:
        raise DataError(f"unknown sequence id {seq_id!r}") from exc


def _fmt(v: float) -> str:
    return repr(float(v))


# --------------------------------------------------------------------------- commands


def cmd_synth(args) -> int:
    d = load_yaml(args.config)
    d = _merge(d, {"seed": args.seed, "num_sequences": args.num_sequences})
    for key in ("frames_range", "events_per_class_range", "event_duration_range", "amplitude_range", "class_names"):
        if key in d:
            d[key] = tuple(d[key])
    try:
        cfg = SyntheticConfig(**d)
    except TypeError as exc:
        raise DataError(f"bad synth config: {exc}") from exc
    ds = synth_generate(cfg)
    out = Path(args.out)
    save_dataset(ds, out)
    resolved = {k: list(v) if isinstance(v, tuple) else v for k, v in cfg.__dict__.items()}
    write_manifest(out, "synth", resolved, {"seed": cfg.seed}, {"config": args.config},
                   [p for p in out.iterdir()])
    return 0


def cmd_split(args) -> int:
    ds = load_dataset(args.data)
    groups = split_groups(ds, args.groups, args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=False)
    for k, g in enumerate(groups):
        save_dataset(g, out / f"group{k}")
    write_json(out / "groups.json", {f"group{k}": [s.id for s in g.sequences] for k, g in enumerate(groups)})
    write_manifest(out, "split", {"groups": args.groups}, {"seed": args.seed}, {"data": args.data},
                   [p for p in out.rglob("*") if p.is_file()])
    return 0


def _train_config(args) -> TrainConfig:
    d = _merge(load_yaml(args.config), {"epochs": args.epochs, "weights_seed": args.weights_seed,
                                        "training_seed": args.training_seed})
    return TrainConfig.from_dict(d)


def cmd_train(args) -> int:
    ds = load_dataset(args.data)
    spec = _model_spec(args.spec, ds.input_dim)
    cfg = _train_config(args)
    resume = read_checkpoint(args.resume) if args.resume else None
    result = train(ds, spec, cfg, checkpoint_dir=args.checkpoint_dir, resume=resume)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_model(out, spec, result.weights, extra={"train_config": cfg.to_dict()})
    loss_path = out.with_name(out.name + ".loss.csv")
    start = resume[1] if resume else 0
    write_csv(loss_path, ["epoch", "loss"], [(start + e, _fmt(v)) for e, v in enumerate(result.loss_history)])
    write_manifest(out, "train", {"spec": spec.to_dict(), "train": cfg.to_dict()},
                   {"weights_seed": cfg.weights_seed, "training_seed": cfg.training_seed},
                   {"data": args.data, "resume": args.resume}, [out, loss_path])
    return 0


def population_for(spec_or_model, weights_or_none, dataset) -> ErrorPopulation:
    """Rounded predictions of a model on a labelled dataset as an error population."""
    if weights_or_none is None:
        preds = spec_or_model.predict_many(dataset.sequences)
    else:
        preds = forward_many(spec_or_model, weights_or_none, dataset.sequences)
    auto = np.stack([p.final for p in preds])
    return ErrorPopulation([s.id for s in dataset.sequences], dataset.class_names, dataset.labels(), auto)


def make_success_hook(spec: ModelSpec, val, sim: SimulationConfig, eq: EquivalenceConfig):
    """Per-epoch hook reporting success chance, bias and accuracy on a validation set."""
    def hook(epoch, weights):
        pop = population_for(spec, weights, val)
        return {"success": simulate(pop, sim, eq).p_hat, "bias": relative_bias(pop), "accuracy": accuracy(pop)}
    return hook


def cmd_gridsearch(args) -> int:
    d = load_yaml(args.grid)
    data = args.data or d.get("data")
    val_path = args.val or d.get("val")
    if data is None or val_path is None:
        raise UsageError("gridsearch needs training data and a validation store (--data/--val or in the grid file)")
    ds, val = load_dataset(data), load_dataset(val_path)
    spec = ModelSpec.from_dict({"input_dim": ds.input_dim, **d.get("spec", {})})
    cfg = TrainConfig.from_dict(d.get("train", {}))
    grid = GridSpec.from_dict(d.get("grid", {}))
    ev = d.get("eval", {})
    sim = SimulationConfig(n=ev.get("n", 3600), repetitions=ev.get("reps", 10000), seed=ev.get("seed", 0))
    eq = EquivalenceConfig(delta=ev.get("delta", 0.01), confidence=ev.get("confidence", 0.95),
                           mode=ev.get("mode", "pooled"))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    grid_search(ds, grid, spec, cfg, eval_hook=make_success_hook(spec, val, sim, eq), out_dir=out)
    seeds = {"split_seed": grid.split_seed, "weights_seeds": grid.weights_seeds,
             "training_seeds": grid.training_seeds, "eval_seed": sim.seed}
    write_manifest(out, "gridsearch", {"grid_file": d, "spec": spec.to_dict(), "train": cfg.to_dict()}, seeds,
                   {"grid": args.grid, "data": data, "val": val_path},
                   [p for p in out.rglob("*") if p.is_file() and p.name != "manifest.json"])
    return 0


def cmd_infer(args) -> int:
    model = load_any(args.model)
    ds = load_dataset(args.data)
    preds = model.predict_many(ds.sequences)
    rows = []
    for s, p in zip(ds.sequences, preds):
        for c, name in enumerate(ds.class_names):
            rows.append((s.id, name, int(p.final[c]), _fmt(p.float_final[c])))
    write_csv(args.out, ["seq_id", "class", "final_count", "float_final"], rows)
    write_manifest(args.out, "infer", {"model_kind": model.kind}, {}, {"model": args.model, "data": args.data},
                   [args.out])
    return 0


def cmd_quantize(args) -> int:
    model = load_model(args.model)
    calib_ds = load_dataset(args.calib)
    seqs = calib_ds.sequences[:args.calib_count] if args.calib_count else calib_ds.sequences
    calib = make_calibration(model.spec, model.weights, seqs)
    cfg = QuantizerConfig(eps=args.eps, max_iters=args.max_iters, bit_width=args.bits, seed=args.seed,
                          activation_mode=args.activation)
    trace = []
    qmodel = quantize_model(model.weights, model.spec, calib, cfg, trace)
    margin = verify_margin(qmodel, calib, cfg.eps)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_qmodel(out, qmodel, extra={"template": digest(args.model)})
    report = out.with_name(out.name + ".report.json")
    write_json(report, {"layers": [t.__dict__ for t in trace], "margin": margin})
    write_manifest(out, "quantize", {"eps": cfg.eps, "max_iters": cfg.max_iters, "bit_width": cfg.bit_width,
                                     "exp_range": list(cfg.exp_range), "activation_mode": cfg.activation_mode,
                                     "calib_count": len(seqs)},
                   {"seed": cfg.seed}, {"model": args.model, "calib": args.calib}, [out, report])
    return 0


def read_predictions(path) -> dict[tuple[str, str], int]:
    try:
        with open(path, newline="", encoding="utf-8") as f:
            return {(r["seq_id"], r["class"]): int(r["final_count"]) for r in csv.DictReader(f)}
    except (OSError, KeyError, ValueError) as exc:
        raise DataError(f"{path}: malformed prediction CSV ({exc})") from exc


def cmd_eval(args) -> int:
    preds = read_predictions(args.pred)
    truth = load_dataset(args.truth)
    try:
        auto = [[preds[(s.id, c)] for c in truth.class_names] for s in truth.sequences]
    except KeyError as exc:
        raise DataError(f"prediction missing for {exc.args[0]}") from exc
    pop = ErrorPopulation([s.id for s in truth.sequences], truth.class_names, truth.labels(), auto)
    eq = _eq_config(args)
    res = equivalence_test(pop, eq) if len(pop) >= 2 else None
    report = {"sequences": len(pop), "relative_bias": relative_bias(pop), "accuracy": accuracy(pop),
              "equivalence": res.to_dict() if res else None,
              "eq_config": {"delta": eq.delta, "confidence": eq.confidence, "mode": eq.mode}}
    write_json(args.out, report)
    outputs = [args.out]
    pop_path = args.pop or str(Path(args.out).with_suffix(".population.csv"))
    write_population_csv(pop_path, pop)
    outputs.append(pop_path)
    write_manifest(args.out, "eval", report["eq_config"], {}, {"pred": args.pred, "truth": args.truth}, outputs)
    return 0


def cmd_simulate(args) -> int:
    pop = read_population_csv(args.pop)
    sim = SimulationConfig(n=args.n, repetitions=args.reps, seed=args.seed)
    eq = _eq_config(args)
    res = simulate(pop, sim, eq)
    if str(args.out).endswith(".csv"):
        d = res.to_dict()
        write_csv(args.out, list(d), [[d[k] for k in d]])
    else:
        write_json(args.out, {**res.to_dict(), "delta": eq.delta, "confidence": eq.confidence, "mode": eq.mode})
    write_manifest(args.out, "simulate", {"n": sim.n, "reps": sim.repetitions, "delta": eq.delta,
                                          "confidence": eq.confidence, "mode": eq.mode},
                   {"seed": sim.seed}, {"pop": args.pop}, [args.out])
    return 0


def cmd_curve(args) -> int:
    pop = read_population_csv(args.pop)
    grid = parse_n_grid(args.n_grid)
    sim = SimulationConfig(n=grid[0], repetitions=args.reps, seed=args.seed)
    eq = _eq_config(args)
    curve = success_curve(pop, grid, sim, eq)
    write_csv(args.out, ["n", "p_hat"], [(n, _fmt(p)) for n, p in curve])
    write_manifest(args.out, "curve", {"n_grid": grid, "reps": sim.repetitions, "delta": eq.delta,
                                       "confidence": eq.confidence, "mode": eq.mode},
                   {"seed": sim.seed}, {"pop": args.pop}, [args.out])
    return 0


def _load_members(spec_list: str):
    paths = [p for p in spec_list.split(",") if p]
    if not paths:
        raise UsageError("--models needs at least one model file")
    return paths, [load_any(p) for p in paths]


def cmd_ensemble(args) -> int:
    paths, members = _load_members(args.models)
    ds = load_dataset(args.data)
    seeds, extra = {}, {}
    if args.tau == "auto":
        if args.calib is None or args.seed is None:
            raise UsageError("--tau auto needs --calib and --seed")
        cal = load_dataset(args.calib)
        cal_pop = ErrorPopulation([s.id for s in cal.sequences], cal.class_names, cal.labels(), cal.labels())
        sim = SimulationConfig(n=args.n, repetitions=args.reps, seed=args.seed)
        tau, scores = calibrate_tau(member_finals(members, cal.sequences), cal_pop, sim, _eq_config(args),
                                    DEFAULT_TAU_GRID)
        seeds["seed"] = args.seed
        extra["tau_scores"] = scores
    else:
        tau = float(args.tau)
    counts = quantile_combine(member_finals(members, ds.sequences), tau)
    rows = [(s.id, name, int(counts[i, c])) for i, s in enumerate(ds.sequences) for c, name in enumerate(ds.class_names)]
    write_csv(args.out, ["seq_id", "class", "final_count"], rows)
    write_manifest(args.out, "ensemble", {"tau": tau, "members": paths, **extra}, seeds,
                   {**{f"model{k}": p for k, p in enumerate(paths)}, "data": args.data, "calib": args.calib},
                   [args.out])
    return 0


def cmd_rank(args) -> int:
    paths = [p for p in args.models.split(",") if p]
    if not paths:
        raise UsageError("--models needs at least one model file")
    pops = {}
    for p in paths:
        mid = Path(p).stem
        pop_file = Path(args.pop_dir) / f"{mid}.csv"
        if not pop_file.exists():
            raise DataError(f"no population file {pop_file} for model {mid!r}")
        pops[mid] = read_population_csv(pop_file)
    sim = SimulationConfig(n=args.n, repetitions=args.reps, seed=args.seed)
    ranked = rank_members(pops, sim, _eq_config(args))
    write_json(args.out, ranked.to_dict())
    write_manifest(args.out, "rank", {"n": sim.n, "reps": sim.repetitions, "models": paths}, {"seed": sim.seed},
                   {"pop_dir": args.pop_dir}, [args.out])
    return 0


def cmd_bench(args) -> int:
    model = load_any(args.model)
    seq = _sequence(load_dataset(args.data), args.seq)
    report = benchmark(model, seq, repetitions=args.reps)
    write_json(args.out, report.to_dict())
    write_manifest(args.out, "bench", {"reps": args.reps, "seq": args.seq}, {},
                   {"model": args.model, "data": args.data}, [args.out])
    return 0


def loop_trajectory(model, sequence, k: int) -> np.ndarray:
    """Counts at the end of each of ``k`` back-to-back repetitions, shape (k, C)."""
    per_frame = model.predict(loop_sequence(sequence, k)).per_frame
    T = sequence.frames.shape[0]
    return per_frame[T - 1::T]


def cmd_loop(args) -> int:
    model = load_any(args.model)
    seq = _sequence(load_dataset(args.data), args.seq)
    traj = loop_trajectory(model, seq, args.k)
    rows = [(r + 1, *(_fmt(v) for v in traj[r])) for r in range(args.k)]
    write_csv(args.out, ["repetition", *(f"count_{c}" for c in range(traj.shape[1]))], rows)
    write_manifest(args.out, "loop", {"k": args.k, "seq": args.seq}, {}, {"model": args.model, "data": args.data},
                   [args.out])
    return 0


# --------------------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="napc", description="Neural passenger counting toolkit.")
    parser.add_argument("--version", action="store_true", help="print version and determinism notes")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("synth", help="generate a synthetic labelled store")
    p.add_argument("--config")
    p.add_argument("--seed", type=int)
    p.add_argument("--num-sequences", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("split", help="split a store into disjoint groups")
    p.add_argument("--data", required=True)
    p.add_argument("--groups", type=int, required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("train", help="train one model")
    p.add_argument("--data", required=True)
    p.add_argument("--spec")
    p.add_argument("--config")
    p.add_argument("--epochs", type=int)
    p.add_argument("--weights-seed", type=int)
    p.add_argument("--training-seed", type=int)
    p.add_argument("--checkpoint-dir")
    p.add_argument("--resume", help="checkpoint file to continue from")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("gridsearch", help="train the full grid and record per-epoch success chance")
    p.add_argument("--grid", required=True)
    p.add_argument("--data")
    p.add_argument("--val")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gridsearch)

    p = sub.add_parser("infer", help="final counts for every sequence")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("quantize", help="search fixed-point scales for a float model")
    p.add_argument("--model", required=True)
    p.add_argument("--calib", required=True)
    p.add_argument("--calib-count", type=int, default=0, help="use the first N sequences (0 = all)")
    p.add_argument("--eps", type=float, default=0.45)
    p.add_argument("--bits", type=int, choices=[16, 32], default=32)
    p.add_argument("--max-iters", type=int, default=512)
    p.add_argument("--activation", choices=["float", "lut"], default="float")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_quantize)

    p = sub.add_parser("eval", help="bias, accuracy and equivalence test of predictions")
    p.add_argument("--pred", required=True)
    p.add_argument("--truth", required=True)
    p.add_argument("--pop", help="population CSV to write (default: next to --out)")
    _add_eq_args(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("simulate", help="bootstrap test success chance")
    p.add_argument("--pop", required=True)
    _add_sim_args(p)
    _add_eq_args(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("curve", help="success chance over a grid of sample sizes")
    p.add_argument("--pop", required=True)
    p.add_argument("--n-grid", default="100:6000:100")
    p.add_argument("--reps", type=int, default=10000)
    p.add_argument("--seed", type=int, required=True)
    _add_eq_args(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_curve)

    p = sub.add_parser("ensemble", help="quantile ensemble of float or quantized models")
    p.add_argument("--models", required=True, help="comma-separated model files")
    p.add_argument("--tau", default="0.6666666666666666", help="quantile in [0, 1] or 'auto'")
    p.add_argument("--data", required=True)
    p.add_argument("--calib", help="labelled store for --tau auto")
    p.add_argument("--n", type=int, default=3600)
    p.add_argument("--reps", type=int, default=10000)
    p.add_argument("--seed", type=int)
    _add_eq_args(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_ensemble)

    p = sub.add_parser("rank", help="rank models by test success chance")
    p.add_argument("--models", required=True)
    p.add_argument("--pop-dir", required=True, help="directory holding <model-stem>.csv populations")
    _add_sim_args(p)
    _add_eq_args(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_rank)

    p = sub.add_parser("bench", help="single-threaded streaming throughput")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--seq", required=True)
    p.add_argument("--reps", type=int, default=10)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("loop", help="counts after each repetition of a looped sequence")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--seq", required=True)
    p.add_argument("--k", type=int, default=200)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_loop)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    if args.version:
        print(f"napc {__version__}\n{DETERMINISM_NOTES}")
        return 0
    if args.command is None:
        parser.print_usage(sys.stderr)
        return 1
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"napc {args.command}: {exc}", file=sys.stderr)
        return 1
    except QuantizationError as exc:
        print(f"napc {args.command}: quantization failed at layer {exc.layer}: {exc}", file=sys.stderr)
        return exc.exit_code
    except NapcError as exc:
        print(f"napc {args.command}: {exc}", file=sys.stderr)
        return exc.exit_code
    except (FileNotFoundError, FileExistsError, NotADirectoryError) as exc:
        print(f"napc {args.command}: {exc}", file=sys.stderr)
        return DataError.exit_code
    except ValueError as exc:
        print(f"napc {args.command}: invalid value: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
