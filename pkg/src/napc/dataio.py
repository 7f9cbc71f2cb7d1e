"""Labeled frame sequences and the flat binary store.

Store layout (one directory)::

    frames.bin   all frames of all sequences, row-major, little-endian float32,
                 concatenated in append order; no header
    index.json   {"format": "napc-store", "version": 1, "input_dim": D,
                  "class_names": [...], "dtype": "<f4",
                  "entries": [{"id", "offset_frames", "length_frames", "labels"}]}

Sequence ``k`` occupies bytes ``[offset*D*4, (offset+length)*D*4)``. The index
is rewritten atomically after the frame bytes are flushed, so a crash between
the two writes leaves a valid store that simply lacks the last sequence; the
orphaned tail of ``frames.bin`` is overwritten by the next append.
"""
from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence as Seq

import numpy as np

from .errors import DataError
from .rng import stream

FRAMES_FILE = "frames.bin"
INDEX_FILE = "index.json"
STORE_FORMAT = "napc-store"
STORE_VERSION = 1
_DTYPE = np.dtype("<f4")


@dataclass
class Sequence:
    id: str
    frames: np.ndarray  # (T, D) float32
    labels: tuple[int, ...]

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.float32)
        if self.frames.ndim != 2 or self.frames.shape[0] < 1:
            raise DataError(f"sequence {self.id!r}: frames must be a non-empty (T, D) array")
        self.labels = _check_labels(self.labels, self.id)

    def __len__(self) -> int:
        return self.frames.shape[0]

    @property
    def input_dim(self) -> int:
        return self.frames.shape[1]


def _check_labels(labels, seq_id) -> tuple[int, ...]:
    out = []
    for v in labels:
        if isinstance(v, (float, np.floating)) and not float(v).is_integer():
            raise DataError(f"sequence {seq_id!r}: fractional label {v!r}")
        iv = int(v)
        if iv < 0:
            raise DataError(f"sequence {seq_id!r}: negative label {iv}")
        out.append(iv)
    return tuple(out)


@dataclass
class Dataset:
    input_dim: int
    class_names: list[str]
    sequences: list[Sequence] = field(default_factory=list)

    def __post_init__(self):
        if self.input_dim < 1:
            raise DataError("input_dim must be positive")
        seen = set()
        for s in self.sequences:
            if s.input_dim != self.input_dim:
                raise DataError(f"sequence {s.id!r}: frame length {s.input_dim} != {self.input_dim}")
            if len(s.labels) != len(self.class_names):
                raise DataError(f"sequence {s.id!r}: expected {len(self.class_names)} labels")
            if s.id in seen:
                raise DataError(f"duplicate sequence id {s.id!r}")
            seen.add(s.id)

    def __len__(self) -> int:
        return len(self.sequences)

    def __iter__(self):
        return iter(self.sequences)

    @property
    def num_classes(self) -> int:
        return len(self.class_names)

    def labels(self) -> np.ndarray:
        return np.array([s.labels for s in self.sequences], dtype=np.int64).reshape(len(self), self.num_classes)

    def by_id(self, seq_id: str) -> Sequence:
        for s in self.sequences:
            if s.id == seq_id:
                return s
        raise KeyError(seq_id)

    def subset(self, sequences: Seq[Sequence]) -> "Dataset":
        return Dataset(self.input_dim, list(self.class_names), list(sequences))


# --------------------------------------------------------------------------- store


class StoreHandle:
    """Single-writer handle on a store directory."""

    def __init__(self, path: Path, input_dim: int, class_names: list[str], entries: list[dict]):
        self.path = Path(path)
        self.input_dim = input_dim
        self.class_names = list(class_names)
        self.entries = entries
        self._ids = {e["id"] for e in entries}

    @property
    def total_frames(self) -> int:
        if not self.entries:
            return 0
        last = self.entries[-1]
        return last["offset_frames"] + last["length_frames"]

    def append(self, sequence: Sequence) -> None:
        append_sequence(self, sequence)

    def _write_index(self) -> None:
        doc = {
            "format": STORE_FORMAT,
            "version": STORE_VERSION,
            "input_dim": self.input_dim,
            "class_names": self.class_names,
            "dtype": _DTYPE.str,
            "entries": self.entries,
        }
        tmp = self.path / (INDEX_FILE + ".tmp")
        with open(tmp, "w", encoding="utf-8") as f:
            json.dump(doc, f, indent=1)
            f.flush()
            os.fsync(f.fileno())
        os.replace(tmp, self.path / INDEX_FILE)


def create_store(path, input_dim: int, class_names: Seq[str]) -> StoreHandle:
    path = Path(path)
    if path.exists():
        raise DataError(f"store path already exists: {path}")
    if input_dim < 1 or not class_names:
        raise DataError("input_dim must be positive and class_names non-empty")
    try:
        path.mkdir(parents=True)
        (path / FRAMES_FILE).touch()
    except OSError as exc:
        raise DataError(f"cannot create store at {path}: {exc}") from exc
    handle = StoreHandle(path, int(input_dim), list(class_names), [])
    handle._write_index()
    return handle


def _read_index(path: Path) -> dict:
    try:
        with open(path / INDEX_FILE, encoding="utf-8") as f:
            doc = json.load(f)
    except FileNotFoundError as exc:
        raise DataError(f"no store index at {path}") from exc
    except json.JSONDecodeError as exc:
        raise DataError(f"corrupt store index at {path}: {exc}") from exc
    if doc.get("format") != STORE_FORMAT or doc.get("version") != STORE_VERSION:
        raise DataError(f"{path}: not a napc store (format/version mismatch)")
    if doc.get("dtype") != _DTYPE.str:
        raise DataError(f"{path}: unsupported dtype {doc.get('dtype')!r}")
    expected = 0
    for e in doc["entries"]:
        try:
            offset, length = int(e["offset_frames"]), int(e["length_frames"])
            e["id"], e["labels"]
        except (KeyError, TypeError, ValueError) as exc:
            raise DataError(f"{path}: corrupt index entry {e!r}") from exc
        if offset != expected or length < 1:
            raise DataError(f"{path}: corrupt index, bad offsets for sequence {e['id']!r}")
        expected += length
    return doc


def open_store(path) -> StoreHandle:
    """Reopen an existing store for appending."""
    path = Path(path)
    doc = _read_index(path)
    return StoreHandle(path, doc["input_dim"], doc["class_names"], doc["entries"])


def append_sequence(store: StoreHandle, sequence: Sequence) -> None:
    if sequence.input_dim != store.input_dim:
        raise DataError(f"sequence {sequence.id!r}: frame length {sequence.input_dim} != store dim {store.input_dim}")
    if sequence.id in store._ids:
        raise DataError(f"duplicate sequence id {sequence.id!r}")
    if len(sequence.labels) != len(store.class_names):
        raise DataError(f"sequence {sequence.id!r}: expected {len(store.class_names)} labels")
    offset = store.total_frames
    data = np.ascontiguousarray(sequence.frames, dtype=_DTYPE)
    with open(store.path / FRAMES_FILE, "r+b") as f:
        # Overwrite any orphaned bytes left by an interrupted append.
        f.seek(offset * store.input_dim * _DTYPE.itemsize)
        f.write(data.tobytes())
        f.truncate()
        f.flush()
        os.fsync(f.fileno())
    store.entries.append({
        "id": sequence.id,
        "offset_frames": offset,
        "length_frames": len(sequence),
        "labels": list(sequence.labels),
    })
    store._ids.add(sequence.id)
    store._write_index()


def load_dataset(path, mmap: bool = False) -> Dataset:
    """Load a store. With ``mmap=True`` frames are read-only views into ``frames.bin``."""
    path = Path(path)
    doc = _read_index(path)
    dim = doc["input_dim"]
    frame_file = path / FRAMES_FILE
    if not frame_file.exists():
        raise DataError(f"{path}: missing {FRAMES_FILE}")
    n_frames = frame_file.stat().st_size // (dim * _DTYPE.itemsize)
    for e in doc["entries"]:
        if e["offset_frames"] + e["length_frames"] > n_frames:
            raise DataError(f"{path}: frame file truncated, sequence {e['id']!r} is incomplete")
    if n_frames == 0:
        flat = np.zeros((0, dim), dtype=_DTYPE)
    elif mmap:
        flat = np.memmap(frame_file, dtype=_DTYPE, mode="r", shape=(n_frames, dim))
    else:
        flat = np.fromfile(frame_file, dtype=_DTYPE, count=n_frames * dim).reshape(n_frames, dim)
    seqs = []
    for e in doc["entries"]:
        o, n = e["offset_frames"], e["length_frames"]
        frames = flat[o:o + n]
        seqs.append(Sequence(e["id"], frames if mmap else np.array(frames, dtype=np.float32), tuple(e["labels"])))
    return Dataset(dim, list(doc["class_names"]), seqs)


def save_dataset(dataset: Dataset, path) -> StoreHandle:
    store = create_store(path, dataset.input_dim, dataset.class_names)
    for s in dataset.sequences:
        append_sequence(store, s)
    return store


# --------------------------------------------------------------------------- synthetic data


@dataclass
class SyntheticConfig:
    input_dim: int = 20
    num_sequences: int = 200
    frames_range: tuple[int, int] = (24, 48)
    events_per_class_range: tuple[int, int] = (0, 3)
    event_duration_range: tuple[int, int] = (4, 6)
    amplitude_range: tuple[float, float] = (0.9, 1.1)
    noise_std: float = 0.1
    seed: int = 0
    class_names: tuple[str, ...] = ("board", "alight")
    id_prefix: str = "synth"

    def validate(self) -> None:
        for name in ("frames_range", "events_per_class_range", "event_duration_range", "amplitude_range"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise DataError(f"{name}: empty range ({lo}, {hi})")
        if self.frames_range[0] < 1 or self.event_duration_range[0] < 1 or self.events_per_class_range[0] < 0:
            raise DataError("frame, duration and event ranges must be positive")
        if self.noise_std < 0:
            raise DataError("noise_std must be >= 0")
        if self.input_dim < len(self.class_names):
            raise DataError("input_dim must provide at least one slot per class")
        worst = self.events_per_class_range[1] * self.event_duration_range[1]
        if worst > self.frames_range[0]:
            raise DataError(f"frames_range minimum {self.frames_range[0]} cannot fit {worst} event frames")


def event_envelope(duration: int) -> np.ndarray:
    """Raised-cosine bump, strictly positive on all ``duration`` frames, peak near 1."""
    j = np.arange(1, duration + 1, dtype=np.float64)
    return 0.5 * (1.0 - np.cos(2.0 * np.pi * j / (duration + 1)))


def class_band(c: int, num_classes: int, input_dim: int) -> slice:
    return slice(c * input_dim // num_classes, (c + 1) * input_dim // num_classes)


def synth_sequence(config: SyntheticConfig, index: int, counts: Seq[int] | None = None) -> Sequence:
    """Sequence ``index`` of the synthetic set; independent of all other indices.

    Draw order on ``stream(seed, "synth", index)``: length; then per class the
    event count, durations, amplitudes and placement cuts; finally the noise.
    ``counts`` forces the per-class event counts (the count draw still happens).
    """
    rng = stream(config.seed, "synth", index)
    C = len(config.class_names)
    T = int(rng.integers(config.frames_range[0], config.frames_range[1] + 1))
    x = np.zeros((T, config.input_dim), dtype=np.float64)
    labels = []
    for c in range(C):
        k = int(rng.integers(config.events_per_class_range[0], config.events_per_class_range[1] + 1))
        if counts is not None:
            k = int(counts[c])
        durations = rng.integers(config.event_duration_range[0], config.event_duration_range[1] + 1, size=k)
        amps = rng.uniform(config.amplitude_range[0], config.amplitude_range[1], size=k)
        free = T - int(durations.sum())
        cuts = np.sort(rng.integers(0, free + 1, size=k))
        band = class_band(c, C, config.input_dim)
        start_base = 0
        for j in range(k):
            start = start_base + int(cuts[j])
            d = int(durations[j])
            x[start:start + d, band] += (amps[j] * event_envelope(d))[:, None]
            start_base += d
        labels.append(k)
    if config.noise_std > 0:
        x += rng.normal(0.0, config.noise_std, size=x.shape)
    return Sequence(f"{config.id_prefix}-{config.seed}-{index:05d}", x.astype(np.float32), tuple(labels))


def synth_generate(config: SyntheticConfig) -> Dataset:
    config.validate()
    seqs = [synth_sequence(config, i) for i in range(config.num_sequences)]
    return Dataset(config.input_dim, list(config.class_names), seqs)


# --------------------------------------------------------------------------- transforms


def loop_sequence(sequence: Sequence, k: int) -> Sequence:
    """Repeat a sequence ``k`` times back to back; labels scale by ``k``."""
    if k < 1:
        raise ValueError("k must be >= 1")
    frames = np.tile(sequence.frames, (k, 1))
    return Sequence(f"{sequence.id}@x{k}", frames, tuple(k * v for v in sequence.labels))


def split_groups(dataset: Dataset, num_groups: int, seed: int) -> list[Dataset]:
    n = len(dataset)
    if num_groups < 1 or num_groups > n:
        raise ValueError(f"num_groups must be in [1, {n}]")
    order = stream(seed, "split").permutation(n)
    parts = np.array_split(order, num_groups)
    return [dataset.subset([dataset.sequences[i] for i in part]) for part in parts]


def pad_batch(sequences: Seq[Sequence]) -> tuple[np.ndarray, np.ndarray]:
    """Zero-pad to a (B, T_max, D) float32 batch plus the per-sequence lengths."""
    lengths = np.array([len(s) for s in sequences], dtype=np.int64)
    x = np.zeros((len(sequences), int(lengths.max()), sequences[0].input_dim), dtype=np.float32)
    for b, s in enumerate(sequences):
        x[b, :len(s)] = s.frames
    return x, lengths


__all__ = [
    "Sequence", "Dataset", "StoreHandle", "SyntheticConfig",
    "create_store", "open_store", "append_sequence", "load_dataset", "save_dataset",
    "synth_generate", "synth_sequence", "loop_sequence", "split_groups", "pad_batch",
    "event_envelope", "class_band",
]
