"""Counting metrics, the bias equivalence test and bootstrap test-success simulation.

Equivalence test: with per-sequence differences ``d_i = automatic_i - manual_i``
(summed over classes in pooled mode) and mean manual count ``m``, the
relative-bias interval is ``(mean(d) -/+ t * s / sqrt(n)) / m`` with ``t`` the
``confidence`` quantile of Student's t on ``n - 1`` degrees of freedom. The
test passes iff the interval lies strictly inside ``(-delta, +delta)``; this
is the two one-sided tests procedure at level ``1 - confidence`` per side.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path

import numpy as np

from .errors import DataError
from .rng import stream

CHUNK = 256  # bootstrap repetitions per RNG sub-stream


# --------------------------------------------------------------------------- Student t


def _betacf(a: float, b: float, x: float, max_iter: int = 500, tol: float = 1e-15) -> float:
    """Continued fraction for the incomplete beta function (modified Lentz)."""
    tiny = 1e-300
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    d = 1.0 / (d if abs(d) > tiny else tiny)
    h = d
    for m in range(1, max_iter + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        d = 1.0 / (d if abs(d) > tiny else tiny)
        c = 1.0 + aa / c
        c = c if abs(c) > tiny else tiny
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        d = 1.0 / (d if abs(d) > tiny else tiny)
        c = 1.0 + aa / c
        c = c if abs(c) > tiny else tiny
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < tol:
            break
    return h


def betainc(a: float, b: float, x: float) -> float:
    """Regularized incomplete beta ``I_x(a, b)``."""
    if not 0.0 <= x <= 1.0:
        raise ValueError("x must be in [0, 1]")
    if x in (0.0, 1.0):
        return x
    log_front = (math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b)
                 + a * math.log(x) + b * math.log1p(-x))
    front = math.exp(log_front)
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _betacf(a, b, x) / a
    return 1.0 - front * _betacf(b, a, 1.0 - x) / b


def t_cdf(t: float, df: float) -> float:
    if df <= 0:
        raise ValueError("df must be positive")
    tail = 0.5 * betainc(df / 2.0, 0.5, df / (df + t * t))
    return 1.0 - tail if t >= 0 else tail


@lru_cache(maxsize=4096)
def t_quantile(p: float, df: float) -> float:
    """Inverse of :func:`t_cdf` by bracketing and bisection."""
    if not 0.0 < p < 1.0:
        raise ValueError("p must be in (0, 1)")
    if p < 0.5:
        return -t_quantile(1.0 - p, df)
    if p == 0.5:
        return 0.0
    lo, hi = 0.0, 1.0
    while t_cdf(hi, df) < p:
        lo, hi = hi, hi * 2.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if t_cdf(mid, df) < p:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 1e-13 * max(1.0, hi):
            break
    return 0.5 * (lo + hi)


# --------------------------------------------------------------------------- records


@dataclass(frozen=True)
class EvalRecord:
    seq_id: str
    cls: str
    manual: int
    automatic: int

    def __post_init__(self):
        if self.manual < 0:
            raise DataError(f"{self.seq_id}/{self.cls}: negative manual count")


class ErrorPopulation:
    """Paired counts grouped by sequence: ``manual`` and ``automatic`` are (N, C) int arrays."""

    def __init__(self, seq_ids, class_names, manual, automatic):
        self.seq_ids = list(seq_ids)
        self.class_names = list(class_names)
        self.manual = np.asarray(manual, dtype=np.int64).reshape(len(self.seq_ids), len(self.class_names))
        self.automatic = np.asarray(automatic, dtype=np.int64).reshape(self.manual.shape)
        if len(self.seq_ids) == 0:
            raise DataError("empty population")
        if np.any(self.manual < 0):
            raise DataError("negative manual count")

    def __len__(self) -> int:
        return len(self.seq_ids)

    @property
    def differences(self) -> np.ndarray:
        return self.automatic - self.manual

    @classmethod
    def from_records(cls, records) -> "ErrorPopulation":
        records = list(records)
        classes, seqs, table = [], [], {}
        for r in records:
            if r.cls not in classes:
                classes.append(r.cls)
            if r.seq_id not in table:
                seqs.append(r.seq_id)
                table[r.seq_id] = {}
            if r.cls in table[r.seq_id]:
                raise DataError(f"duplicate record {r.seq_id}/{r.cls}")
            table[r.seq_id][r.cls] = (r.manual, r.automatic)
        for s in seqs:
            missing = set(classes) - set(table[s])
            if missing:
                raise DataError(f"sequence {s!r} lacks classes {sorted(missing)}")
        manual = [[table[s][c][0] for c in classes] for s in seqs]
        auto = [[table[s][c][1] for c in classes] for s in seqs]
        return cls(seqs, classes, manual, auto)

    def records(self) -> list[EvalRecord]:
        return [EvalRecord(s, c, int(self.manual[i, j]), int(self.automatic[i, j]))
                for i, s in enumerate(self.seq_ids) for j, c in enumerate(self.class_names)]

    @classmethod
    def from_predictions(cls, seq_ids, class_names, manual, automatic) -> "ErrorPopulation":
        return cls(seq_ids, class_names, manual, automatic)


def read_population_csv(path) -> ErrorPopulation:
    try:
        with open(path, newline="", encoding="utf-8") as f:
            rows = list(csv.DictReader(f))
        return ErrorPopulation.from_records(
            EvalRecord(r["seq_id"], r["class"], int(r["manual"]), int(r["automatic"])) for r in rows)
    except (KeyError, ValueError) as exc:
        raise DataError(f"{path}: malformed population CSV ({exc})") from exc


def write_population_csv(path, population: ErrorPopulation) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["seq_id", "class", "manual", "automatic"])
        for r in population.records():
            w.writerow([r.seq_id, r.cls, r.manual, r.automatic])


# --------------------------------------------------------------------------- point metrics


def relative_bias(records) -> float:
    pop = records if isinstance(records, ErrorPopulation) else ErrorPopulation.from_records(records)
    total_manual = int(pop.manual.sum())
    if total_manual == 0:
        raise ValueError("relative bias undefined: sum of manual counts is 0")
    return (int(pop.automatic.sum()) - total_manual) / total_manual


def accuracy(records) -> float:
    """Fraction of sequences whose counts match the manual counts in every class."""
    pop = records if isinstance(records, ErrorPopulation) else ErrorPopulation.from_records(records)
    return float(np.mean(np.all(pop.automatic == pop.manual, axis=1)))


# --------------------------------------------------------------------------- equivalence test


@dataclass(frozen=True)
class EquivalenceConfig:
    delta: float = 0.01
    confidence: float = 0.95
    mode: str = "pooled"  # or "per_class"

    def __post_init__(self):
        if not 0 < self.delta < 1:
            raise ValueError("delta must be in (0, 1)")
        if not 0.5 < self.confidence < 1:
            raise ValueError("confidence must be in (0.5, 1)")
        if self.mode not in ("pooled", "per_class"):
            raise ValueError("mode must be 'pooled' or 'per_class'")


@dataclass
class EquivalenceResult:
    passed: bool
    ci: tuple[float, float] | list[tuple[float, float]]
    bias: float | list[float]
    degenerate: bool = False

    def to_dict(self) -> dict:
        return {"pass": self.passed, "ci": self.ci, "bias": self.bias, "degenerate": self.degenerate}


def _columns(manual: np.ndarray, automatic: np.ndarray, mode: str):
    d = automatic - manual
    if mode == "pooled":
        return d.sum(axis=-1, keepdims=True), manual.sum(axis=-1, keepdims=True)
    return d, manual


def _intervals(d: np.ndarray, m: np.ndarray, t: float):
    """Interval bounds over axis -2 of (..., n, K) arrays; returns lo, hi, bias, degenerate."""
    n = d.shape[-2]
    d = d.astype(np.float64)
    mean_d = d.mean(axis=-2)
    mean_m = m.mean(axis=-2, dtype=np.float64)
    sd = d.std(axis=-2, ddof=1)
    half = t * sd / math.sqrt(n)
    degenerate = mean_m <= 0
    safe_m = np.where(degenerate, 1.0, mean_m)
    return (mean_d - half) / safe_m, (mean_d + half) / safe_m, mean_d / safe_m, degenerate


def equivalence_test(records, config: EquivalenceConfig = EquivalenceConfig()) -> EquivalenceResult:
    pop = records if isinstance(records, ErrorPopulation) else ErrorPopulation.from_records(records)
    n = len(pop)
    if n < 2:
        raise ValueError("equivalence test needs at least 2 sequences")
    d, m = _columns(pop.manual, pop.automatic, config.mode)
    if np.any(m.mean(axis=0) <= 0):
        raise ValueError("mean manual count is zero")
    t = t_quantile(config.confidence, n - 1)
    lo, hi, bias, _ = _intervals(d, m, t)
    passed = bool(np.all((lo > -config.delta) & (hi < config.delta)))
    cis = [(float(a), float(b)) for a, b in zip(lo, hi)]
    biases = [float(b) for b in bias]
    if config.mode == "pooled":
        return EquivalenceResult(passed, cis[0], biases[0])
    return EquivalenceResult(passed, cis, biases)


# --------------------------------------------------------------------------- simulation


@dataclass(frozen=True)
class SimulationConfig:
    n: int = 3600
    repetitions: int = 10000
    seed: int = 0

    def __post_init__(self):
        if self.n < 2 or self.repetitions < 1:
            raise ValueError("need n >= 2 and repetitions >= 1")


@dataclass
class SimulationResult:
    p_hat: float
    passes: int
    repetitions: int
    degenerate: int
    n: int

    def to_dict(self) -> dict:
        return {"n": self.n, "repetitions": self.repetitions, "passes": self.passes,
                "degenerate": self.degenerate, "p_hat": self.p_hat}


def simulate(population: ErrorPopulation, sim: SimulationConfig,
             eq: EquivalenceConfig = EquivalenceConfig()) -> SimulationResult:
    """Bootstrap the equivalence test: resample whole sequences with replacement.

    Repetitions are processed in blocks of ``CHUNK``; block ``k`` draws from
    its own stream, so results do not depend on how blocks are scheduled.
    """
    d_all, m_all = _columns(population.manual, population.automatic, eq.mode)
    N = len(population)
    t = t_quantile(eq.confidence, sim.n - 1)
    passes = degenerate = 0
    for k, start in enumerate(range(0, sim.repetitions, CHUNK)):
        reps = min(CHUNK, sim.repetitions - start)
        idx = stream(sim.seed, "bootstrap", k).integers(0, N, size=(reps, sim.n))
        lo, hi, _, degen = _intervals(d_all[idx], m_all[idx], t)
        ok = np.all((lo > -eq.delta) & (hi < eq.delta) & ~degen, axis=-1)
        passes += int(ok.sum())
        degenerate += int(np.any(degen, axis=-1).sum())
    return SimulationResult(passes / sim.repetitions, passes, sim.repetitions, degenerate, sim.n)


def test_success_chance(population: ErrorPopulation, sim: SimulationConfig,
                        eq: EquivalenceConfig = EquivalenceConfig()) -> float:
    return simulate(population, sim, eq).p_hat


test_success_chance.__test__ = False  # not a pytest test despite the name


def curve_seed(seed: int, position: int) -> int:
    return int(stream(seed, "curve", position).integers(0, 2 ** 62))


def success_curve(population: ErrorPopulation, n_values, sim: SimulationConfig,
                  eq: EquivalenceConfig = EquivalenceConfig()) -> list[tuple[int, float]]:
    """p-hat for each sample size, each point on its own sub-seed."""
    n_values = list(n_values)
    if not n_values:
        raise ValueError("n_values must be non-empty")
    out = []
    for j, n in enumerate(n_values):
        cfg = SimulationConfig(n=int(n), repetitions=sim.repetitions, seed=curve_seed(sim.seed, j))
        out.append((int(n), test_success_chance(population, cfg, eq)))
    return out


def default_n_grid() -> list[int]:
    return list(range(100, 6001, 100))


def parse_n_grid(text: str) -> list[int]:
    """``"100:6000:100"`` (inclusive stop) or a comma list."""
    if ":" in text:
        start, stop, step = (int(v) for v in text.split(":"))
        return list(range(start, stop + 1, step))
    return [int(v) for v in text.split(",") if v]


def population_from_counts(seq_ids, class_names, manual, automatic) -> ErrorPopulation:
    return ErrorPopulation(seq_ids, class_names, manual, automatic)


def read_population(path) -> ErrorPopulation:
    return read_population_csv(Path(path))
