"""Deterministic training: corridor loss, BPTT, gradient descent with LR decay.

All randomness comes from named streams keyed on the training seed:
``shuffle`` (per epoch) orders sequences into mini-batches and ``dropout``
(per epoch and batch) draws the masks on LSTM outputs. Weight initialization
uses the separate weights seed. Epoch ``e`` therefore depends only on the
weights after epoch ``e-1``, which makes checkpoint/resume bit-exact.
"""
from __future__ import annotations

import csv
import io
import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .dataio import Dataset, pad_batch, split_groups
from .errors import DataError, NumericalError
from .model import ModelSpec, Weights, init_weights, save_model, sigmoid
from .rng import stream, stream_state

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    epochs: int = 30
    batch_size: int = 2
    lr0: float = 0.05
    lr_decay: float = 0.9
    dropout_rate: float = 0.0
    weights_seed: int = 0
    training_seed: int = 0
    final_weight: float = 1.0
    corridor_weight: float = 1.0
    clip_norm: float = 1.0

    def __post_init__(self):
        if self.lr0 <= 0:
            raise ValueError("lr0 must be > 0")
        if not 0 < self.lr_decay <= 1:
            raise ValueError("lr_decay must be in (0, 1]")
        if not 0 <= self.dropout_rate < 1:
            raise ValueError("dropout_rate must be in [0, 1)")
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be >= 1")

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        return cls(**{k: d[k] for k in cls.__dataclass_fields__ if k in d})

    def to_dict(self) -> dict:
        return asdict(self)


def lrd_schedule(config: TrainConfig, epoch: int) -> float:
    if not 0 <= epoch < config.epochs:
        raise ValueError(f"epoch {epoch} outside [0, {config.epochs})")
    return config.lr0 * config.lr_decay ** epoch


# --------------------------------------------------------------------------- loss


def _loss_terms(p, labels, lengths, final_weight, corridor_weight):
    """Per-sequence loss and dL/dp for a padded (B, T, C) prediction batch."""
    batch, T, _ = p.shape
    y = labels[:, None, :].astype(p.dtype)
    valid = (np.arange(T)[None, :] < lengths[:, None]).astype(p.dtype)[..., None]
    under = np.maximum(-p, 0)
    over = np.maximum(p - y, 0)
    inv_len = (1.0 / lengths).astype(p.dtype)[:, None, None]
    corridor = ((under ** 2 + over ** 2) * valid).sum(axis=(1, 2)) * inv_len[:, 0, 0]
    idx = np.arange(batch)
    p_last = p[idx, lengths - 1]
    err = p_last - labels
    final = (err ** 2).sum(axis=1)
    per_seq = final_weight * final + corridor_weight * corridor
    dp = corridor_weight * 2 * (over - under) * valid * inv_len
    dp[idx, lengths - 1] += final_weight * 2 * err
    return per_seq, dp


def loss(per_frame_prediction, label, final_weight: float = 1.0, corridor_weight: float = 1.0) -> float:
    """Corridor loss for one sequence: (T, C) trajectory against the final (C,) label."""
    p = np.asarray(per_frame_prediction, dtype=np.float64)[None]
    y = np.asarray(label, dtype=np.float64)[None]
    per_seq, _ = _loss_terms(p, y, np.array([p.shape[1]]), final_weight, corridor_weight)
    return float(per_seq[0])


# --------------------------------------------------------------------------- BPTT


def _dropout_masks(spec: ModelSpec, rate: float, shape, rng, dtype):
    if rate <= 0 or rng is None:
        return [None] * spec.lstm_layers
    keep = 1.0 - rate
    return [(rng.random(shape) < keep).astype(dtype) / dtype(keep) for _ in range(spec.lstm_layers)]


def bptt_gradients(spec: ModelSpec, weights: Weights, x, lengths, labels,
                   final_weight: float = 1.0, corridor_weight: float = 1.0,
                   dropout_masks=None):
    """Mean batch loss and exact gradients for every parameter.

    ``x`` is a zero-padded (B, T, D) batch; computation runs in the dtype of
    ``weights``. |z| has subgradient 0 at z == 0.
    """
    dt = weights["fc_in.W"].dtype
    x = np.asarray(x, dtype=dt)
    lengths = np.asarray(lengths, dtype=np.int64)
    labels = np.asarray(labels, dtype=dt)
    batch, T, _ = x.shape
    L, U = spec.lstm_layers, spec.lstm_units
    if dropout_masks is None:
        dropout_masks = [None] * L

    # forward with caches
    a0 = x @ weights["fc_in.W"] + weights["fc_in.B"]
    inputs, caches, outs = [], [], []
    inp = a0
    for n in range(L):
        W, Uk, B = weights.lstm(n)
        xw = inp @ W + B
        gates = np.empty((batch, T, 4 * U), dtype=dt)
        cs = np.empty((batch, T, U), dtype=dt)
        hs = np.empty((batch, T, U), dtype=dt)
        h = np.zeros((batch, U), dtype=dt)
        c = np.zeros((batch, U), dtype=dt)
        for t in range(T):
            m = xw[:, t] + h @ Uk
            i = sigmoid(m[:, :U])
            f = sigmoid(m[:, U:2 * U])
            g = np.tanh(m[:, 2 * U:3 * U])
            o = sigmoid(m[:, 3 * U:])
            c = i * g + f * c
            h = np.tanh(c) * o
            gates[:, t, :U], gates[:, t, U:2 * U], gates[:, t, 2 * U:3 * U], gates[:, t, 3 * U:] = i, f, g, o
            cs[:, t] = c
            hs[:, t] = h
        inputs.append(inp)
        caches.append((gates, cs, hs))
        out = hs if dropout_masks[n] is None else hs * dropout_masks[n]
        outs.append(out)
        inp = out
    z = inp @ weights["fc_out.W"] + weights["fc_out.B"]
    a = np.abs(z) if spec.abs_activation else z
    p = np.cumsum(a, axis=1) if spec.cumsum else a

    per_seq, dp = _loss_terms(p, labels, lengths, final_weight, corridor_weight)
    total = float(per_seq.mean())
    if not np.isfinite(total):
        raise NumericalError("non-finite loss")
    dp = dp / batch

    # backward
    da = np.flip(np.cumsum(np.flip(dp, axis=1), axis=1), axis=1) if spec.cumsum else dp
    dz = da * np.sign(z) if spec.abs_activation else da
    grads = {
        "fc_out.W": np.einsum("btu,btc->uc", inp, dz),
        "fc_out.B": dz.sum(axis=(0, 1)),
    }
    d_out = dz @ weights["fc_out.W"].T
    for n in reversed(range(L)):
        W, Uk, B = weights.lstm(n)
        gates, cs, hs = caches[n]
        dh_seq = d_out if dropout_masks[n] is None else d_out * dropout_masks[n]
        dm = np.empty((batch, T, 4 * U), dtype=dt)
        dh_next = np.zeros((batch, U), dtype=dt)
        dc_next = np.zeros((batch, U), dtype=dt)
        zeros = np.zeros((batch, U), dtype=dt)
        for t in reversed(range(T)):
            i, f, g, o = (gates[:, t, k * U:(k + 1) * U] for k in range(4))
            c = cs[:, t]
            c_prev = cs[:, t - 1] if t > 0 else zeros
            tc = np.tanh(c)
            dh = dh_seq[:, t] + dh_next
            dc = dh * o * (1 - tc * tc) + dc_next
            dm[:, t, :U] = dc * g * i * (1 - i)
            dm[:, t, U:2 * U] = dc * c_prev * f * (1 - f)
            dm[:, t, 2 * U:3 * U] = dc * i * (1 - g * g)
            dm[:, t, 3 * U:] = dh * tc * o * (1 - o)
            dc_next = dc * f
            dh_next = dm[:, t] @ Uk.T
        h_prev = np.concatenate([np.zeros((batch, 1, U), dtype=dt), hs[:, :-1]], axis=1)
        grads[f"lstm{n}.W"] = np.einsum("btu,btk->uk", inputs[n], dm)
        grads[f"lstm{n}.U"] = np.einsum("btu,btk->uk", h_prev, dm)
        grads[f"lstm{n}.B"] = dm.sum(axis=(0, 1))
        d_out = dm @ W.T
    grads["fc_in.W"] = np.einsum("btd,btu->du", x, d_out)
    grads["fc_in.B"] = d_out.sum(axis=(0, 1))
    ordered = {k: grads[k].astype(dt, copy=False) for k in spec.shapes()}
    for k, v in ordered.items():
        if not np.all(np.isfinite(v)):
            raise NumericalError(f"non-finite gradient for {k}")
    return total, ordered


def batch_loss(spec: ModelSpec, weights: Weights, x, lengths, labels,
               final_weight: float = 1.0, corridor_weight: float = 1.0, dropout_masks=None) -> float:
    """Forward-only loss; the finite-difference oracle calls this directly."""
    from .model import forward_batch

    if dropout_masks is not None and any(m is not None for m in dropout_masks):
        return bptt_gradients(spec, weights, x, lengths, labels, final_weight, corridor_weight, dropout_masks)[0]
    dt = weights["fc_in.W"].dtype
    p = forward_batch(spec, weights, np.asarray(x, dtype=dt))
    per_seq, _ = _loss_terms(p, np.asarray(labels, dtype=dt), np.asarray(lengths), final_weight, corridor_weight)
    return float(per_seq.mean())


# --------------------------------------------------------------------------- training loop


@dataclass
class TrainResult:
    weights: Weights
    loss_history: list[float]
    checkpoints: list = field(default_factory=list)  # Weights per epoch, or paths when written to disk
    epoch_metrics: list = field(default_factory=list)

    @property
    def fingerprint(self) -> str:
        return self.weights.fingerprint()


def clip_by_global_norm(grads: dict, max_norm: float) -> float:
    norm = float(np.sqrt(sum(float(np.sum(np.square(g, dtype=np.float64))) for g in grads.values())))
    if max_norm > 0 and norm > max_norm:
        scale = np.float32(max_norm / norm)
        for k in grads:
            grads[k] = grads[k] * scale.astype(grads[k].dtype)
    return norm


def train_epoch(dataset: Dataset, spec: ModelSpec, config: TrainConfig, weights: Weights, epoch: int) -> tuple[Weights, float]:
    lr = np.float32(lrd_schedule(config, epoch))
    w = Weights(spec, weights.params)
    params = w.params
    order = stream(config.training_seed, "shuffle", epoch).permutation(len(dataset))
    labels_all = dataset.labels()
    total, count = 0.0, 0
    for j, start in enumerate(range(0, len(order), config.batch_size)):
        idx = order[start:start + config.batch_size]
        x, lengths = pad_batch([dataset.sequences[i] for i in idx])
        rng = stream(config.training_seed, "dropout", epoch, j) if config.dropout_rate > 0 else None
        masks = _dropout_masks(spec, config.dropout_rate, (len(idx), x.shape[1], spec.lstm_units), rng, np.float32)
        try:
            value, grads = bptt_gradients(spec, w, x, lengths, labels_all[idx],
                                          config.final_weight, config.corridor_weight, masks)
        except NumericalError as exc:
            raise NumericalError(f"training diverged in epoch {epoch}: {exc}") from exc
        clip_by_global_norm(grads, config.clip_norm)
        for k, g in grads.items():
            params[k] -= lr * g
        total += value * len(idx)
        count += len(idx)
    return w, total / count


def train(dataset: Dataset, spec: ModelSpec, config: TrainConfig,
          epoch_hook: Callable[[int, Weights], dict] | None = None,
          checkpoint_dir=None, resume: tuple[Weights, int] | None = None) -> TrainResult:
    """Train from ``init_weights(spec, weights_seed)`` or resume from (weights, next_epoch)."""
    if len(dataset) == 0:
        raise DataError("cannot train on an empty dataset")
    if dataset.input_dim != spec.input_dim or dataset.num_classes != spec.num_classes:
        raise DataError("dataset does not match model spec")
    if resume is None:
        weights, start = init_weights(spec, config.weights_seed), 0
    else:
        weights, start = resume[0].astype(np.float32), resume[1]
    result = TrainResult(weights, [], [], [])
    for epoch in range(start, config.epochs):
        weights, value = train_epoch(dataset, spec, config, weights, epoch)
        if not np.isfinite(value):
            raise NumericalError(f"training diverged in epoch {epoch}")
        result.loss_history.append(value)
        log.debug("epoch %d lr %.3g loss %.5f", epoch, lrd_schedule(config, epoch), value)
        if checkpoint_dir is not None:
            result.checkpoints.append(write_checkpoint(checkpoint_dir, spec, config, weights, epoch))
        else:
            result.checkpoints.append(weights)
        if epoch_hook is not None:
            result.epoch_metrics.append(epoch_hook(epoch, weights))
    result.weights = weights
    return result


def write_checkpoint(directory, spec: ModelSpec, config: TrainConfig, weights: Weights, epoch: int) -> Path:
    """Model container plus a JSON sidecar naming the RNG stream positions for the next epoch."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    path = directory / f"epoch{epoch:04d}.napc"
    save_model(path, spec, weights, extra={"epoch": epoch})
    sidecar = {
        "next_epoch": epoch + 1,
        "config": config.to_dict(),
        "streams": {
            "shuffle": stream_state(config.training_seed, "shuffle", epoch + 1),
            "dropout": stream_state(config.training_seed, "dropout", epoch + 1, 0),
        },
    }
    path.with_suffix(".rng.json").write_text(json.dumps(sidecar, indent=1, sort_keys=True))
    return path


def read_checkpoint(path) -> tuple[Weights, int]:
    from .model import load_model

    path = Path(path)
    model = load_model(path)
    sidecar = json.loads(path.with_suffix(".rng.json").read_text())
    return model.weights, int(sidecar["next_epoch"])


# --------------------------------------------------------------------------- grid search


@dataclass
class GridSpec:
    group_count: int = 4
    group_indices: list[int] | None = None  # subset of groups used as "group selection"; None = all
    data_amounts: list[str] = field(default_factory=lambda: ["one", "rest"])
    weights_seeds: list[int] = field(default_factory=lambda: list(range(10)))
    training_seeds: list[int] = field(default_factory=lambda: list(range(4)))
    split_seed: int = 0

    def __post_init__(self):
        if not self.data_amounts or not self.weights_seeds or not self.training_seeds:
            raise ValueError("grid axes must be non-empty")
        bad = set(self.data_amounts) - {"one", "rest"}
        if bad:
            raise ValueError(f"unknown data amounts {sorted(bad)}")

    @property
    def groups(self) -> list[int]:
        return list(range(self.group_count)) if self.group_indices is None else list(self.group_indices)

    def cells(self) -> list[tuple[int, str, int, int]]:
        return [(g, amount, ws, ts)
                for g in self.groups
                for amount in self.data_amounts
                for ws in self.weights_seeds
                for ts in self.training_seeds]

    @classmethod
    def from_dict(cls, d: dict) -> "GridSpec":
        return cls(**{k: d[k] for k in cls.__dataclass_fields__ if k in d})


def grid_search(dataset: Dataset, grid: GridSpec, spec: ModelSpec, base_config: TrainConfig,
                eval_hook: Callable[[int, Weights], dict] | None = None, out_dir=None) -> list[dict]:
    """Train one model per grid cell; a failing cell is recorded and the grid continues.

    Returns one row per cell. With ``out_dir`` the rows are written to
    ``grid.csv`` and each cell's final weights to ``models/``.
    """
    groups = split_groups(dataset, grid.group_count, grid.split_seed)
    rows = []
    for g, amount, ws, ts in grid.cells():
        if amount == "one":
            train_set = groups[g]
        else:
            train_set = dataset.subset([s for k, grp in enumerate(groups) if k != g for s in grp])
        cfg = TrainConfig.from_dict({**base_config.to_dict(), "weights_seed": ws, "training_seed": ts})
        row = {"group": g, "data_amount": amount, "train_size": len(train_set),
               "weights_seed": ws, "training_seed": ts}
        try:
            result = train(train_set, spec, cfg, epoch_hook=eval_hook)
        except NumericalError as exc:
            row.update(status="failed", error=str(exc), fingerprint="", final_loss="", epoch_metrics=[])
            rows.append(row)
            continue
        row.update(status="ok", error="", fingerprint=result.fingerprint,
                   final_loss=result.loss_history[-1], epoch_metrics=result.epoch_metrics)
        if out_dir is not None:
            model_dir = Path(out_dir) / "models"
            model_dir.mkdir(parents=True, exist_ok=True)
            row["model"] = str(Path("models") / f"g{g}_{amount}_w{ws}_t{ts}.napc")
            save_model(Path(out_dir) / row["model"], spec, result.weights)
        rows.append(row)
    if out_dir is not None:
        Path(out_dir).mkdir(parents=True, exist_ok=True)
        (Path(out_dir) / "grid.csv").write_text(grid_csv(rows))
    return rows


def grid_csv(rows: list[dict]) -> str:
    """One CSV row per cell; per-epoch hook metrics flattened to ``<name>_e<epoch>`` columns."""
    metric_cols = []
    for r in rows:
        for e, m in enumerate(r.get("epoch_metrics") or []):
            for name in m:
                col = f"{name}_e{e}"
                if col not in metric_cols:
                    metric_cols.append(col)
    base = ["group", "data_amount", "train_size", "weights_seed", "training_seed",
            "status", "final_loss", "fingerprint", "error"]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(base + metric_cols)
    for r in rows:
        flat = {f"{name}_e{e}": v for e, m in enumerate(r.get("epoch_metrics") or []) for name, v in m.items()}
        w.writerow([_fmt(r.get(c, "")) for c in base] + [_fmt(flat.get(c, "")) for c in metric_cols])
    return buf.getvalue()


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return v
