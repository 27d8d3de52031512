"""Writers for the embedding-store interchange format.

Tensor files: little-endian, magic "EMB1", u32 rank, rank u32 dims,
float32 row-major payload. Manifest: UTF-8 JSON-lines, header first
(format_version, dataset, modalities, optional provenance), then one
record per line with id, label, split and per-modality relative paths
(null marks an absent modality).
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass

import numpy as np

MAGIC = b"EMB1"
FORMAT_VERSION = 1


@dataclass(frozen=True)
class Modality:
    name: str
    dim: int
    sequential: bool
    encoder_tag: str


def write_tensor(path, tensor: np.ndarray, expected_dim: int,
                 sequential: bool) -> None:
    """Write one tensor, enforcing the dim contract at write time."""
    arr = np.ascontiguousarray(tensor, dtype="<f4")
    if sequential:
        if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] != expected_dim:
            raise ValueError(f"{path}: shape {arr.shape} violates "
                             f"[T,{expected_dim}] contract")
    elif arr.shape != (expected_dim,):
        raise ValueError(f"{path}: shape {arr.shape} violates "
                         f"[{expected_dim}] contract")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", arr.ndim))
        fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        fh.write(arr.tobytes())


def write_manifest(path, dataset: str, modalities: list[Modality],
                   records: list[dict], provenance: dict | None = None) -> None:
    header = {
        "format_version": FORMAT_VERSION,
        "dataset": dataset,
        "modalities": [
            {"name": m.name, "dim": m.dim, "sequential": m.sequential,
             "encoder_tag": m.encoder_tag} for m in modalities],
    }
    if provenance:
        header["provenance"] = provenance
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps(header, sort_keys=True) + "\n")
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


def sample_filename(record_id: str, modality: str) -> str:
    safe = "".join(c if c.isalnum() or c in "-_" else "_" for c in record_id)
    return f"{safe}_{modality}.emb"


__all__ = ["Modality", "write_tensor", "write_manifest", "sample_filename",
           "MAGIC", "FORMAT_VERSION"]
