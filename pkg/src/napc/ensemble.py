"""Quantile ensembles, ranking-based pruning and tau calibration.

Members contribute their unrounded final counts; per class the ensemble takes
the nearest-rank order statistic at index ceil(tau * N) and rounds once.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DataError
from .metrics import EquivalenceConfig, ErrorPopulation, SimulationConfig, test_success_chance
from .model import round_counts

DEFAULT_TAU_GRID = (0.5, 5 / 9, 0.6, 2 / 3, 0.7, 0.75)


def quantile_index(tau: float, n: int) -> int:
    """1-based nearest-rank index, clamped to [1, n]."""
    if n < 1:
        raise ValueError("need at least one member")
    if not 0.0 <= tau <= 1.0:
        raise ValueError("tau must be in [0, 1]")
    # Guard against float noise such as 2/3 * 3 = 2.0000000000000004.
    k = math.ceil(round(tau * n, 9))
    return min(max(k, 1), n)


def quantile_combine(member_finals, tau: float) -> np.ndarray:
    """(N, ..., C) member finals -> per-class integer counts of shape (..., C)."""
    finals = np.asarray(member_finals, dtype=np.float64)
    if finals.ndim == 1:
        finals = finals[:, None]
        return quantile_combine(finals, tau)[0]
    k = quantile_index(tau, finals.shape[0])
    ordered = np.sort(finals, axis=0, kind="stable")
    return round_counts(ordered[k - 1])


@dataclass
class EnsembleSpec:
    members: list  # FloatModel or QuantizedModel
    tau: float = 2 / 3

    def __post_init__(self):
        if len(self.members) < 1:
            raise ValueError("ensemble needs at least one member")
        if not 0.0 <= self.tau <= 1.0:
            raise ValueError("tau must be in [0, 1]")
        dims = {m.spec.input_dim for m in self.members}
        classes = {m.spec.num_classes for m in self.members}
        if len(dims) != 1 or len(classes) != 1:
            raise DataError("ensemble members disagree on input dim or class count")

    @property
    def size(self) -> int:
        return len(self.members)


def member_finals(members, sequences) -> np.ndarray:
    """Unrounded final counts, shape (N members, S sequences, C)."""
    sequences = list(sequences)
    out = []
    for m in members:
        preds = m.predict_many(sequences)
        out.append(np.stack([p.float_final.astype(np.float64) for p in preds]))
    return np.stack(out)


def ensemble_predict(ens: EnsembleSpec, sequences) -> np.ndarray:
    return quantile_combine(member_finals(ens.members, sequences), ens.tau)


def population_from_finals(counts: np.ndarray, reference: ErrorPopulation) -> ErrorPopulation:
    """Population with ``reference``'s manual counts and the given automatic counts."""
    return ErrorPopulation(reference.seq_ids, reference.class_names, reference.manual, counts)


@dataclass
class RankedPool:
    entries: list[tuple[str, float]]  # (model_id, score), best first

    @property
    def ids(self) -> list[str]:
        return [m for m, _ in self.entries]

    def top(self, n: int) -> list[str]:
        return self.ids[:n]

    def to_dict(self) -> dict:
        return {"ranking": [{"model": m, "score": s} for m, s in self.entries]}


def rank_members(populations: dict[str, ErrorPopulation], sim: SimulationConfig,
                 eq: EquivalenceConfig = EquivalenceConfig()) -> RankedPool:
    """Score each model by test success chance on the shared validation set."""
    if not populations:
        raise ValueError("empty pool")
    ids = sorted(populations)
    ref = populations[ids[0]]
    for mid in ids[1:]:
        p = populations[mid]
        if p.seq_ids != ref.seq_ids or p.class_names != ref.class_names or not np.array_equal(p.manual, ref.manual):
            raise DataError(f"model {mid!r} was evaluated on a different validation set than {ids[0]!r}")
    scores = [(mid, test_success_chance(populations[mid], sim, eq)) for mid in ids]
    # ids are already sorted, so a stable sort on score keeps id order among ties
    scores.sort(key=lambda e: -e[1])
    return RankedPool(scores)


def calibrate_tau(finals: np.ndarray, calibration: ErrorPopulation, sim: SimulationConfig,
                  eq: EquivalenceConfig = EquivalenceConfig(), tau_grid=DEFAULT_TAU_GRID):
    """argmax over ``tau_grid`` of ensemble success chance; ties go to the smallest tau.

    ``finals`` holds unrounded member finals (N, S, C) on the calibration sequences.
    Returns ``(tau_star, [(tau, score), ...])`` with the grid in ascending order.
    """
    grid = sorted(float(t) for t in tau_grid)
    if not grid:
        raise ValueError("tau grid must be non-empty")
    finals = np.asarray(finals, dtype=np.float64)
    if finals.shape[1:] != calibration.manual.shape:
        raise DataError("member finals do not match the calibration population")
    scores = []
    for tau in grid:
        pop = population_from_finals(quantile_combine(finals, tau), calibration)
        scores.append((tau, test_success_chance(pop, sim, eq)))
    best = max(s for _, s in scores)
    tau_star = next(t for t, s in scores if s == best)
    return tau_star, scores
