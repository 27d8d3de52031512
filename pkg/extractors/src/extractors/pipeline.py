"""CSV-driven extraction into the embedding-store format.

Input CSV columns: id, label, split, media_path, caption (an optional
audio_path column points at a WAV when the main media is a video whose
audio track is not separately available; a sibling `<media>.wav` file is
picked up automatically). Each sample yields one tensor file per present
modality; the manifest is assembled last.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import media
from .encoders import Encoder
from .store_format import Modality, sample_filename, write_manifest, write_tensor


@dataclass
class SampleRow:
    id: str
    label: int
    split: str
    media_path: Path | None
    caption: str
    audio_path: Path | None = None


@dataclass
class ExtractionPlan:
    text: Encoder | None
    vision: Encoder | None
    audio: Encoder | None
    transcriber: object | None = None   # callable(samples, rate) -> str
    provenance: dict = field(default_factory=dict)


def read_csv_rows(path) -> list[SampleRow]:
    path = Path(path)
    if not path.exists():
        raise ValueError(f"csv not found: {path}")
    rows = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        required = {"id", "label", "split", "media_path", "caption"}
        missing = required - set(reader.fieldnames or [])
        if missing:
            raise ValueError(f"csv lacks columns: {sorted(missing)}")
        for raw in reader:
            label = int(raw["label"])
            if label not in (0, 1):
                raise ValueError(f"record {raw['id']!r}: label must be 0/1")
            if raw["split"] not in ("train", "val", "test"):
                raise ValueError(f"record {raw['id']!r}: bad split "
                                 f"{raw['split']!r}")
            media_path = raw["media_path"].strip()
            audio_path = (raw.get("audio_path") or "").strip()
            rows.append(SampleRow(
                id=raw["id"], label=label, split=raw["split"],
                media_path=path.parent / media_path if media_path else None,
                caption=(raw.get("caption") or "").strip(),
                audio_path=path.parent / audio_path if audio_path else None))
    if not rows:
        raise ValueError(f"{path}: no records")
    return rows


def _find_audio(row: SampleRow) -> Path | None:
    if row.audio_path and row.audio_path.exists():
        return row.audio_path
    if row.media_path is None:
        return None
    if row.media_path.suffix.lower() == ".wav":
        return row.media_path
    sibling = row.media_path.with_suffix(".wav")
    return sibling if sibling.exists() else None


def _text_for(row: SampleRow, plan: ExtractionPlan) -> str:
    if row.caption:
        return row.caption
    if plan.transcriber is None:
        return ""
    audio = _find_audio(row)
    if audio is None:
        return ""
    samples, rate = media.load_wav(audio)
    if media.is_silent(samples):
        return ""
    return str(plan.transcriber(samples, rate)).strip()


def extract_dataset(csv_path, out_dir, plan: ExtractionPlan,
                    dataset_name: str = "extracted") -> Path:
    """Run the plan over every CSV row; returns the manifest path."""
    rows = read_csv_rows(csv_path)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    any_video = any(row.media_path is not None
                    and row.media_path.suffix.lower() in media.VIDEO_SUFFIXES
                    for row in rows)
    modalities: list[Modality] = []
    if plan.text:
        spec = plan.text.spec
        modalities.append(Modality("text", spec.dim, spec.sequential, spec.name))
    if plan.audio:
        spec = plan.audio.spec
        modalities.append(Modality("audio", spec.dim, spec.sequential, spec.name))
    if plan.vision:
        spec = plan.vision.spec
        modalities.append(Modality("vision", spec.dim,
                                   spec.sequential or any_video, spec.name))

    records = []
    for row in rows:
        tensors: dict[str, str | None] = {m.name: None for m in modalities}

        if plan.text:
            text = _text_for(row, plan)
            if text:
                rel = sample_filename(row.id, "text")
                write_tensor(out_dir / rel, plan.text.encode_text(text),
                             plan.text.spec.dim, plan.text.spec.sequential)
                tensors["text"] = rel

        if plan.audio:
            audio = _find_audio(row)
            if audio is not None:
                samples, rate = media.load_wav(audio)
                if not media.is_silent(samples):
                    rel = sample_filename(row.id, "audio")
                    write_tensor(out_dir / rel,
                                 plan.audio.encode_audio(samples, rate),
                                 plan.audio.spec.dim, plan.audio.spec.sequential)
                    tensors["audio"] = rel

        if plan.vision and row.media_path is not None:
            kind = media.media_kind(row.media_path)
            if kind == "image":
                value = plan.vision.encode_image(media.load_image(row.media_path))
                if any_video:
                    value = value[None, :]
                rel = sample_filename(row.id, "vision")
                write_tensor(out_dir / rel, value, plan.vision.spec.dim,
                             sequential=any_video)
                tensors["vision"] = rel
            elif kind == "video":
                frames = media.load_video_frames(row.media_path)
                rel = sample_filename(row.id, "vision")
                write_tensor(out_dir / rel, plan.vision.encode_video(frames),
                             plan.vision.spec.dim, sequential=True)
                tensors["vision"] = rel

        records.append({"id": row.id, "label": row.label, "split": row.split,
                        "tensors": tensors})

    manifest = out_dir / "manifest.jsonl"
    write_manifest(manifest, dataset_name, modalities, records,
                   provenance=plan.provenance)
    return manifest


def make_transcriber(model_name: str = "whisper-tiny"):
    """Speech-to-text through a cached pretrained model; deterministic
    greedy decoding. Raises when the weights are not locally available."""
    import torch
    from transformers import WhisperForConditionalGeneration, WhisperProcessor

    full_name = f"openai/{model_name}"
    processor = WhisperProcessor.from_pretrained(full_name, local_files_only=True)
    model = WhisperForConditionalGeneration.from_pretrained(
        full_name, local_files_only=True).eval()

    def transcribe(samples: np.ndarray, rate: int) -> str:
        inputs = processor(samples, sampling_rate=rate, return_tensors="pt")
        with torch.no_grad():
            ids = model.generate(inputs.input_features, do_sample=False,
                                 num_beams=1)
        return processor.batch_decode(ids, skip_special_tokens=True)[0]

    transcribe.provenance = {"model": full_name,
                             "decoding": {"do_sample": False, "num_beams": 1}}
    return transcribe
