"""Deterministic synthetic datasets exercising the fusion pipeline.

Three generators, all pure functions of (parameters, seed), writing the
standard manifest plus tensor files:

* separable: one modality carries the label on every coordinate
  (class-conditional means +-1, sigma 0.25); the others are
  label-independent noise centered at one, so that product fusion keeps
  the informative signal alive.
* confounder_xor: two modalities each hide one latent bit in a dedicated
  coordinate (exact +-1, Gaussian noise on the remaining coordinates);
  the label is the XOR of the bits. Each bit alone is independent of the
  label by exact quadrant balance, so any single-modality model is
  blind, while a nonlinear fusion of both modalities can recover the
  label. The bit coordinates are disjoint across modalities, which makes
  a raw element-wise product provably uninformative.
* missing_modality: separable data where a chosen fraction of records
  drop one modality entirely (null path in the manifest).
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .embedding_store import (ModalitySpec, RecordEntry, write_manifest,
                              write_tensor_file)
from .errors import ConfigError
from .rng import RngState

SPLIT_FRACTIONS = (("train", 0.70), ("val", 0.15), ("test", 0.15))


def _assign_splits(labels: list[int]) -> list[str]:
    """Stratified contiguous 70/15/15 assignment, deterministic."""
    splits = [""] * len(labels)
    for cls in (0, 1):
        idx = [i for i, y in enumerate(labels) if y == cls]
        n = len(idx)
        n_train = int(round(n * 0.70))
        n_val = int(round(n * 0.15))
        for j, i in enumerate(idx):
            if j < n_train:
                splits[i] = "train"
            elif j < n_train + n_val:
                splits[i] = "val"
            else:
                splits[i] = "test"
    return splits


def _write_records(out_dir: Path, dataset: str, mods: list[ModalitySpec],
                   tensors_by_record: list[dict[str, np.ndarray | None]],
                   labels: list[int]) -> Path:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    splits = _assign_splits(labels)
    records = []
    for i, (tensors, label, split) in enumerate(zip(tensors_by_record, labels,
                                                    splits)):
        rid = f"s{i:05d}"
        paths: dict[str, str | None] = {}
        for spec in mods:
            t = tensors[spec.name]
            if t is None:
                paths[spec.name] = None
                continue
            rel = f"{rid}_{spec.name}.emb"
            write_tensor_file(out_dir / rel, t)
            paths[spec.name] = rel
        records.append(RecordEntry(id=rid, label=label, split=split,
                                   tensors=paths))
    manifest_path = out_dir / "manifest.jsonl"
    write_manifest(manifest_path, dataset, mods, records)
    return manifest_path


def gen_separable(out_dir, n: int, dims: dict[str, int], informative: str,
                  seed: int) -> Path:
    """Labels linearly separable from `informative`; others pure noise."""
    if n < 8:
        raise ConfigError(f"separable set needs n >= 8, got {n}")
    if informative not in dims:
        raise ConfigError(f"informative modality {informative!r} not in {list(dims)}")
    rng = RngState(seed)
    mods = [ModalitySpec(name, dim) for name, dim in dims.items()]
    labels = [i % 2 for i in range(n)]
    tensors = []
    for label in labels:
        row = {}
        for spec in mods:
            noise = rng.normal((spec.dim,)) * np.float32(0.25)
            if spec.name == informative:
                row[spec.name] = noise + np.float32(1.0 if label else -1.0)
            else:
                # label-independent, centered at one so a Hadamard product
                # with the informative modality keeps its sign structure
                row[spec.name] = noise + np.float32(1.0)
        tensors.append(row)
    return _write_records(out_dir, "separable", mods, tensors, labels)


def gen_confounder_xor(out_dir, n: int, dims: dict[str, int], seed: int) -> Path:
    """Two modalities, one latent bit each, label = XOR of the bits."""
    if len(dims) != 2:
        raise ConfigError(f"xor set needs exactly 2 modalities, got {list(dims)}")
    if n < 16 or n % 4 != 0:
        raise ConfigError(f"xor set needs n >= 16 divisible by 4, got {n}")
    sizes = list(dims.values())
    if min(sizes) < 2:
        raise ConfigError("xor set needs modality dims >= 2")
    rng = RngState(seed)
    mods = [ModalitySpec(name, dim) for name, dim in dims.items()]
    # exactly n/4 records per (bit1, bit2) quadrant, interleaved
    quadrants = [(0, 0), (0, 1), (1, 0), (1, 1)]
    bit_pairs = [quadrants[i % 4] for i in range(n)]
    labels = [b1 ^ b2 for b1, b2 in bit_pairs]
    tensors = []
    for (b1, b2) in bit_pairs:
        row = {}
        for j, (spec, bit) in enumerate(zip(mods, (b1, b2))):
            x = rng.normal((spec.dim,)) * np.float32(0.25)
            x[j] = np.float32(2 * bit - 1)  # exact so bit decoding is exact
            row[spec.name] = x
        tensors.append(row)
    return _write_records(out_dir, "confounder_xor", mods, tensors, labels)


def gen_missing_modality(out_dir, n: int, dims: dict[str, int],
                         missing_fraction: float, seed: int,
                         missing: str = "audio") -> Path:
    """Separable data with `missing_fraction` of records lacking one modality."""
    if not 0.0 <= missing_fraction <= 1.0:
        raise ConfigError(f"missing_fraction must be in [0,1], got {missing_fraction}")
    if missing not in dims:
        raise ConfigError(f"missing modality {missing!r} not in {list(dims)}")
    informative = next(name for name in dims if name != missing)
    rng = RngState(seed)
    mods = [ModalitySpec(name, dim) for name, dim in dims.items()]
    labels = [i % 2 for i in range(n)]
    tensors = []
    for label in labels:
        row = {}
        for spec in mods:
            noise = rng.normal((spec.dim,)) * np.float32(0.25)
            if spec.name == informative:
                row[spec.name] = noise + np.float32(1.0 if label else -1.0)
            else:
                row[spec.name] = noise + np.float32(1.0)
        tensors.append(row)
    n_missing = int(round(n * missing_fraction))
    drop = rng.permutation(n)[:n_missing]
    for i in drop:
        tensors[int(i)][missing] = None
    return _write_records(out_dir, "missing_modality", mods, tensors, labels)
