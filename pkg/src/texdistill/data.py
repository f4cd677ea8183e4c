"""In-memory datasets built from spectrograms, and the on-disk feature directory."""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .containers import load_txd, read_jsonl, save_txd, write_jsonl
from .frontend import CLASS_NAMES, Spectrogram, split_by_source

PARTITIONS = ("train", "val", "test")


@dataclass
class Dataset:
    x: np.ndarray        # (n, mels, frames) raw log-mel
    y: np.ndarray        # (n,) int64
    source_ids: list[str]

    def __len__(self) -> int:
        return len(self.y)


@dataclass
class TrainingData:
    train: Dataset
    val: Dataset
    test: Dataset
    mean: float
    std: float
    class_names: tuple[str, ...] = CLASS_NAMES

    @property
    def n_classes(self) -> int:
        return len(self.class_names)

    def standardize(self, x: np.ndarray) -> np.ndarray:
        """(n, mels, frames) -> (n, 1, mels, frames) float32, train-split statistics."""
        return ((x - self.mean) / self.std).astype(np.float32)[:, None]

    def split(self, name: str) -> Dataset:
        if name not in PARTITIONS:
            raise ValueError(f"unknown partition {name!r}; expected one of {PARTITIONS}")
        return getattr(self, name)


def _stack(specs: list[Spectrogram]) -> Dataset:
    if not specs:
        return Dataset(np.zeros((0, 0, 0), np.float32), np.zeros(0, np.int64), [])
    shapes = {s.values.shape for s in specs}
    if len(shapes) != 1:
        raise ValueError(f"spectrograms differ in shape: {sorted(shapes)}")
    return Dataset(np.stack([s.values for s in specs]).astype(np.float32),
                   np.array([s.label for s in specs], dtype=np.int64),
                   [s.source_id for s in specs])


def from_spectrograms(specs: list[Spectrogram], partitions: list[str],
                      class_names=CLASS_NAMES) -> TrainingData:
    parts = {p: _stack([s for s, q in zip(specs, partitions) if q == p]) for p in PARTITIONS}
    if len(parts["train"]) == 0:
        raise ValueError("training partition is empty")
    x = parts["train"].x
    std = float(x.std())
    return TrainingData(**parts, mean=float(x.mean()), std=std if std > 0 else 1.0,
                        class_names=tuple(class_names))


def split_spectrograms(specs: list[Spectrogram], seed: int = 0) -> list[str]:
    """Partition label per spectrogram, split by source id."""
    split = split_by_source(specs, seed=seed)
    return [split.partition_of[s.source_id] for s in specs]


def save_features(out_dir, specs: list[Spectrogram], partitions: list[str], class_names=CLASS_NAMES) -> Path:
    out = Path(out_dir)
    (out / "spectrograms").mkdir(parents=True, exist_ok=True)
    rows = []
    for i, (s, part) in enumerate(zip(specs, partitions)):
        name = f"spectrograms/{i:05d}.txd"
        save_txd(out / name, s.values.astype(np.float32))
        rows.append({"file": name, "source_id": s.source_id, "segment": s.segment_index,
                     "label": int(s.label), "partition": part})
    write_jsonl(out / "index.jsonl", rows)
    (out / "classes.json").write_text(json.dumps(list(class_names)) + "\n")
    return out / "index.jsonl"


def load_features(feature_dir) -> TrainingData:
    root = Path(feature_dir)
    index = root / "index.jsonl"
    if not index.exists():
        raise FileNotFoundError(f"{root}: no index.jsonl (run featurize first)")
    rows = read_jsonl(index)
    specs = [Spectrogram(values=load_txd(root / r["file"]), source_id=r["source_id"],
                         segment_index=r["segment"], label=r["label"]) for r in rows]
    classes = json.loads((root / "classes.json").read_text()) if (root / "classes.json").exists() else CLASS_NAMES
    return from_spectrograms(specs, [r["partition"] for r in rows], classes)


def tree_checksum(root) -> str:
    """sha256 over relative paths and contents of every file below ``root``."""
    root = Path(root)
    h = hashlib.sha256()
    for f in sorted(p for p in root.rglob("*") if p.is_file()):
        h.update(str(f.relative_to(root)).encode())
        h.update(f.read_bytes())
    return h.hexdigest()
