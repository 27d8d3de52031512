"""On-disk embedding format, manifest loading, batching, modality masking.

Tensor files are little-endian binary: magic "EMB1", a u32 rank, rank
u32 dims, then the float32 payload in row-major order. A dataset
manifest is UTF-8 JSON-lines: line 1 is a header with the modality
schema, every following line one record. Absent modalities are null
paths in the record and are materialized as zero tensors with a false
presence flag at batch time.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator

import numpy as np

from .errors import ConfigError, DataError, EmptySplitError, TensorFileError
from .rng import RngState

MAGIC = b"EMB1"
FORMAT_VERSION = 1
SPLITS = ("train", "val", "test")


# ---------------------------------------------------------------------------
# tensor files


def write_tensor_file(path, tensor: np.ndarray) -> None:
    arr = np.ascontiguousarray(tensor, dtype="<f4")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", arr.ndim))
        fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        fh.write(arr.tobytes())


def read_tensor_header(path) -> tuple[int, ...]:
    """Shape from the file header without reading the payload."""
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != MAGIC:
            raise TensorFileError(f"{path}: bad magic {magic!r}, expected {MAGIC!r}")
        raw = fh.read(4)
        if len(raw) < 4:
            raise TensorFileError(f"{path}: truncated header")
        (ndim,) = struct.unpack("<I", raw)
        raw = fh.read(4 * ndim)
        if len(raw) < 4 * ndim:
            raise TensorFileError(f"{path}: truncated header")
        return struct.unpack(f"<{ndim}I", raw)


def read_tensor_file(path) -> np.ndarray:
    shape = read_tensor_header(path)
    count = int(np.prod(shape)) if shape else 1
    header_bytes = 4 + 4 + 4 * len(shape)
    with open(path, "rb") as fh:
        fh.seek(header_bytes)
        payload = fh.read()
    if len(payload) != 4 * count:
        raise TensorFileError(
            f"{path}: payload has {len(payload) // 4} floats, header says {count}")
    return np.frombuffer(payload, dtype="<f4").reshape(shape).astype(
        np.float32, copy=True)


# ---------------------------------------------------------------------------
# manifest


@dataclass(frozen=True)
class ModalitySpec:
    name: str
    dim: int
    sequential: bool = False
    encoder_tag: str = ""


@dataclass
class RecordEntry:
    id: str
    label: int
    split: str
    tensors: dict[str, str | None]  # modality -> relative path or None


@dataclass
class DatasetManifest:
    dataset: str
    modalities: list[ModalitySpec]
    records: list[RecordEntry]
    base_dir: Path
    format_version: int = FORMAT_VERSION
    expected_splits: dict[str, int] | None = None
    split_counts: dict[str, int] = field(default_factory=dict)

    def modality(self, name: str) -> ModalitySpec:
        for spec in self.modalities:
            if spec.name == name:
                return spec
        raise ConfigError(f"unknown modality {name!r}")

    def modality_names(self) -> list[str]:
        return [m.name for m in self.modalities]

    def split_records(self, split: str) -> list[RecordEntry]:
        return [r for r in self.records if r.split == split]


def _expected_shape_ok(spec: ModalitySpec, shape: tuple[int, ...]) -> bool:
    if spec.sequential:
        return len(shape) == 2 and shape[0] >= 1 and shape[1] == spec.dim
    return shape == (spec.dim,)


def load_manifest(path) -> DatasetManifest:
    """Parse and fully validate a manifest, including tensor file headers."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"manifest not found: {path}")
    base = path.parent
    with open(path, encoding="utf-8") as fh:
        lines = [ln for ln in fh.read().splitlines() if ln.strip()]
    if not lines:
        raise DataError(f"{path}: empty manifest")
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: header is not valid JSON: {exc}") from exc
    if header.get("format_version") != FORMAT_VERSION:
        raise DataError(
            f"{path}: unsupported format_version {header.get('format_version')}")
    specs = []
    for m in header.get("modalities", []):
        spec = ModalitySpec(name=m["name"], dim=int(m["dim"]),
                            sequential=bool(m.get("sequential", False)),
                            encoder_tag=m.get("encoder_tag", ""))
        if spec.dim <= 0:
            raise DataError(f"modality {spec.name!r}: dim must be positive")
        specs.append(spec)
    names = [s.name for s in specs]
    if len(set(names)) != len(names):
        raise DataError(f"duplicate modality names in {names}")
    if not specs:
        raise DataError(f"{path}: manifest declares no modalities")

    records = []
    seen_ids = set()
    for lineno, line in enumerate(lines[1:], start=2):
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise DataError(f"{path}:{lineno}: invalid JSON: {exc}") from exc
        rid = str(obj["id"])
        if rid in seen_ids:
            raise DataError(f"duplicate record id {rid!r}")
        seen_ids.add(rid)
        label = obj["label"]
        if label not in (0, 1):
            raise DataError(f"record {rid!r}: label {label!r} not in {{0,1}}")
        split = obj["split"]
        if split not in SPLITS:
            raise DataError(f"record {rid!r}: unknown split tag {split!r}")
        tensors = obj.get("tensors", {})
        for mod in tensors:
            if mod not in names:
                raise DataError(f"record {rid!r}: unknown modality {mod!r}")
        entry = RecordEntry(id=rid, label=int(label), split=split,
                            tensors={n: tensors.get(n) for n in names})
        records.append(entry)

    # header check of every referenced tensor file against its spec
    for rec in records:
        for spec in specs:
            rel = rec.tensors[spec.name]
            if rel is None:
                continue
            shape = read_tensor_header(base / rel)
            if not _expected_shape_ok(spec, shape):
                want = f"[T,{spec.dim}]" if spec.sequential else f"[{spec.dim}]"
                raise DataError(
                    f"record {rec.id!r} modality {spec.name!r}: tensor shape "
                    f"{list(shape)} does not match spec {want}")

    counts = {s: 0 for s in SPLITS}
    for rec in records:
        counts[rec.split] += 1
    expected = header.get("expected_splits")
    if expected:
        for s, want in expected.items():
            if counts.get(s) != want:
                raise DataError(
                    f"split {s!r}: expected {want} records, found {counts.get(s)}")

    return DatasetManifest(dataset=header.get("dataset", ""), modalities=specs,
                           records=records, base_dir=base,
                           expected_splits=expected, split_counts=counts)


def write_manifest(path, dataset: str, modalities: list[ModalitySpec],
                   records: list[RecordEntry],
                   expected_splits: dict[str, int] | None = None) -> None:
    header = {
        "format_version": FORMAT_VERSION,
        "dataset": dataset,
        "modalities": [
            {"name": m.name, "dim": m.dim, "sequential": m.sequential,
             "encoder_tag": m.encoder_tag} for m in modalities],
    }
    if expected_splits:
        header["expected_splits"] = expected_splits
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps(header, sort_keys=True) + "\n")
        for rec in records:
            fh.write(json.dumps(
                {"id": rec.id, "label": rec.label, "split": rec.split,
                 "tensors": rec.tensors}, sort_keys=True) + "\n")


# ---------------------------------------------------------------------------
# batches


@dataclass
class Batch:
    ids: list[str]
    labels: np.ndarray                 # [B] float32 in {0,1}
    data: dict[str, np.ndarray]        # name -> [B,dim] or [B,T_max,dim]
    lengths: dict[str, np.ndarray]     # sequential name -> [B] int64
    present: np.ndarray                # [B, M] bool, manifest modality order
    modality_names: list[str]

    @property
    def size(self) -> int:
        return len(self.ids)


class Dataset:
    """Manifest plus fully loaded tensors, ready for batching."""

    def __init__(self, manifest: DatasetManifest):
        self.manifest = manifest
        self._tensors: dict[str, dict[str, np.ndarray | None]] = {}
        for rec in manifest.records:
            per_mod = {}
            for spec in manifest.modalities:
                rel = rec.tensors[spec.name]
                per_mod[spec.name] = (None if rel is None
                                      else read_tensor_file(manifest.base_dir / rel))
            self._tensors[rec.id] = per_mod

    @classmethod
    def from_arrays(cls, dataset: str, modalities: list[ModalitySpec],
                    rows: list[tuple[str, int, str, dict[str, np.ndarray | None]]]
                    ) -> "Dataset":
        """In-memory dataset; rows are (id, label, split, tensors-by-name)."""
        records = [RecordEntry(id=r[0], label=r[1], split=r[2],
                               tensors={m.name: None for m in modalities})
                   for r in rows]
        manifest = DatasetManifest(dataset=dataset, modalities=modalities,
                                   records=records, base_dir=Path("."))
        for s in SPLITS:
            manifest.split_counts[s] = sum(1 for r in records if r.split == s)
        obj = cls.__new__(cls)
        obj.manifest = manifest
        obj._tensors = {r[0]: dict(r[3]) for r in rows}
        return obj

    def _materialize(self, records: list[RecordEntry]) -> Batch:
        specs = self.manifest.modalities
        bsz = len(records)
        labels = np.array([r.label for r in records], dtype=np.float32)
        present = np.zeros((bsz, len(specs)), dtype=bool)
        data: dict[str, np.ndarray] = {}
        lengths: dict[str, np.ndarray] = {}
        for j, spec in enumerate(specs):
            tensors = [self._tensors[r.id][spec.name] for r in records]
            present[:, j] = [t is not None for t in tensors]
            if spec.sequential:
                lens = np.array([1 if t is None else t.shape[0] for t in tensors],
                                dtype=np.int64)
                t_max = int(lens.max())
                block = np.zeros((bsz, t_max, spec.dim), dtype=np.float32)
                for i, t in enumerate(tensors):
                    if t is not None:
                        block[i, : t.shape[0]] = t
                data[spec.name] = block
                lengths[spec.name] = lens
            else:
                block = np.zeros((bsz, spec.dim), dtype=np.float32)
                for i, t in enumerate(tensors):
                    if t is not None:
                        block[i] = t
                data[spec.name] = block
        return Batch(ids=[r.id for r in records], labels=labels, data=data,
                     lengths=lengths, present=present,
                     modality_names=[s.name for s in specs])

    def make_batches(self, split: str, batch_size: int, rng: RngState | None,
                     shuffle: bool) -> Iterator[Batch]:
        """Yield every record of the split exactly once; last batch may be short.

        With shuffle, the order is a deterministic function of rng.
        """
        if batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {batch_size}")
        records = self.manifest.split_records(split)
        if not records:
            raise EmptySplitError(f"split {split!r} has no records")
        order = np.arange(len(records))
        if shuffle:
            if rng is None:
                raise ConfigError("shuffle requires an rng")
            order = rng.permutation(len(records))
        for start in range(0, len(records), batch_size):
            chunk = [records[i] for i in order[start : start + batch_size]]
            yield self._materialize(chunk)


def apply_modality_mask(batch: Batch, enabled: set[str]) -> Batch:
    """Zero out disabled modalities and mark them absent; idempotent."""
    unknown = set(enabled) - set(batch.modality_names)
    if unknown:
        raise ConfigError(f"enabled modalities not in batch: {sorted(unknown)}")
    data = {}
    lengths = dict(batch.lengths)
    present = batch.present.copy()
    for j, name in enumerate(batch.modality_names):
        if name in enabled:
            data[name] = batch.data[name]
        else:
            data[name] = np.zeros_like(batch.data[name])
            present[:, j] = False
            if name in lengths:
                lengths[name] = np.ones_like(batch.lengths[name])
    return Batch(ids=list(batch.ids), labels=batch.labels.copy(), data=data,
                 lengths=lengths, present=present,
                 modality_names=list(batch.modality_names))
