"""Encoder registry and backends.

Every supported encoder carries a fixed output-dimension contract; the
registry is the single source of truth and is enforced again at write
time. Two backends produce the actual numbers:

* "hf": pretrained weights through `transformers` (loaded with
  local_files_only, so a populated cache is required). Text encoders
  pool the first token where the model family defines a [CLS]-style
  summary (bert, hatexplain) and mean-pool elsewhere; vision and audio
  encoders mean-pool.
* "hashed": a deterministic offline stand-in that derives each vector
  from a SHA-256 of the encoder tag and the raw content. It honors every
  shape contract and is stable across runs, but carries no semantics --
  it exists so the pipeline, file formats, and downstream training can
  be exercised without model downloads.

"auto" resolves to "hf" when the needed weights are actually loadable
and falls back to "hashed" with a notice otherwise.
"""

from __future__ import annotations

import hashlib
import sys
from dataclasses import dataclass

import numpy as np

from . import media

MAX_TEXT_TOKENS = 128


@dataclass(frozen=True)
class EncoderSpec:
    name: str
    modality: str          # text | vision | audio
    dim: int
    sequential: bool       # True: emits [T, dim]
    pooling: str           # cls | mean (hf backend)
    hf_model: str | None   # None: no pretrained route exists


REGISTRY: dict[str, EncoderSpec] = {spec.name: spec for spec in [
    EncoderSpec("bert", "text", 768, False, "cls", "bert-base-uncased"),
    EncoderSpec("hatexplain", "text", 768, False, "cls",
                "Hate-speech-CNERG/bert-base-uncased-hatexplain"),
    EncoderSpec("clip-text", "text", 512, False, "mean",
                "openai/clip-vit-base-patch32"),
    EncoderSpec("clap-text", "text", 768, False, "mean",
                "laion/clap-htsat-unfused"),
    EncoderSpec("bart", "text", 768, True, "mean", "facebook/bart-base"),
    EncoderSpec("vit", "vision", 768, False, "cls",
                "google/vit-base-patch16-224-in21k"),
    EncoderSpec("clip", "vision", 768, False, "mean",
                "openai/clip-vit-base-patch32"),
    EncoderSpec("dinov2", "vision", 384, False, "cls", "facebook/dinov2-small"),
    EncoderSpec("mfcc", "audio", 40, False, "mean", None),
    EncoderSpec("avgg19", "audio", 1000, False, "mean", None),
    EncoderSpec("wav2vec2", "audio", 768, True, "mean",
                "facebook/wav2vec2-base-960h"),
    EncoderSpec("clap", "audio", 768, False, "mean", "laion/clap-htsat-unfused"),
]}


def _hashed_vector(tag: str, payload: bytes, dim: int) -> np.ndarray:
    digest = hashlib.sha256(tag.encode("utf-8") + b"\x00" + payload).digest()
    seed = int.from_bytes(digest[:8], "little")
    return np.random.default_rng(seed).standard_normal(dim).astype(np.float32)


class HashedBackend:
    """Deterministic contract-shaped embeddings from content hashes."""

    name = "hashed"

    def encode_text(self, spec: EncoderSpec, text: str) -> np.ndarray:
        if spec.sequential:
            tokens = text.split()[:MAX_TEXT_TOKENS] or [""]
            return np.stack([
                _hashed_vector(f"{spec.name}:{i}", tok.encode("utf-8"), spec.dim)
                for i, tok in enumerate(tokens)])
        return _hashed_vector(spec.name, text.encode("utf-8"), spec.dim)

    def encode_image(self, spec: EncoderSpec, image: np.ndarray) -> np.ndarray:
        return _hashed_vector(spec.name, np.ascontiguousarray(image).tobytes(),
                              spec.dim)

    def encode_waveform(self, spec: EncoderSpec, samples: np.ndarray,
                        rate: int) -> np.ndarray:
        payload = np.ascontiguousarray(samples, dtype=np.float32).tobytes()
        return _hashed_vector(spec.name, payload + rate.to_bytes(4, "little"),
                              spec.dim)


class HfBackend:
    """Pretrained encoders via transformers; models are cached lazily."""

    name = "hf"

    def __init__(self):
        self._models: dict[str, tuple] = {}

    def _load(self, spec: EncoderSpec):
        if spec.hf_model is None:
            raise RuntimeError(f"{spec.name} has no pretrained route; "
                               "use the hashed backend")
        if spec.name not in self._models:
            import torch  # noqa: F401  (ensures a clear error if missing)
            from transformers import AutoModel, AutoProcessor, AutoTokenizer

            kwargs = {"local_files_only": True}
            model = AutoModel.from_pretrained(spec.hf_model, **kwargs).eval()
            tokenizer = processor = None
            if spec.modality == "text":
                tokenizer = AutoTokenizer.from_pretrained(spec.hf_model, **kwargs)
            else:
                processor = AutoProcessor.from_pretrained(spec.hf_model, **kwargs)
            self._models[spec.name] = (model, tokenizer, processor)
        return self._models[spec.name]

    @staticmethod
    def _pool(hidden, pooling: str) -> np.ndarray:
        out = hidden[0].detach().numpy().astype(np.float32)
        return out[0] if pooling == "cls" else out.mean(axis=0)

    def encode_text(self, spec: EncoderSpec, text: str) -> np.ndarray:
        import torch

        model, tokenizer, _ = self._load(spec)
        tokens = tokenizer(text, return_tensors="pt", truncation=True,
                           max_length=MAX_TEXT_TOKENS)
        with torch.no_grad():
            if spec.name in ("clip-text", "clap-text"):
                hidden = model.get_text_features(**tokens)[None]
                vec = hidden[0, 0].detach().numpy().astype(np.float32)
                return vec
            output = model(**tokens).last_hidden_state
        if spec.sequential:
            return output[0].detach().numpy().astype(np.float32)
        return self._pool(output, spec.pooling)

    def encode_image(self, spec: EncoderSpec, image: np.ndarray) -> np.ndarray:
        import torch

        model, _, processor = self._load(spec)
        rgb = image[:, :, ::-1]  # cv2 loads BGR
        inputs = processor(images=rgb, return_tensors="pt")
        with torch.no_grad():
            if spec.name == "clip":
                vec = model.get_image_features(**inputs)
                return vec[0].detach().numpy().astype(np.float32)
            output = model(**inputs).last_hidden_state
        return self._pool(output, spec.pooling)

    def encode_waveform(self, spec: EncoderSpec, samples: np.ndarray,
                        rate: int) -> np.ndarray:
        import torch

        model, _, processor = self._load(spec)
        inputs = processor(audios=samples, sampling_rate=rate,
                           return_tensors="pt") if spec.name == "clap" else \
            processor(samples, sampling_rate=rate, return_tensors="pt")
        with torch.no_grad():
            if spec.name == "clap":
                vec = model.get_audio_features(**inputs)
                return vec[0].detach().numpy().astype(np.float32)
            output = model(**inputs).last_hidden_state
        return self._pool(output, spec.pooling)


class Encoder:
    """One named encoder bound to a backend; output dims are re-checked."""

    def __init__(self, name: str, backend):
        if name not in REGISTRY:
            raise ValueError(f"unknown encoder {name!r}; "
                             f"choose from {sorted(REGISTRY)}")
        self.spec = REGISTRY[name]
        self.backend = backend

    def _checked(self, arr: np.ndarray) -> np.ndarray:
        spec = self.spec
        want = (spec.dim,) if not spec.sequential else (arr.shape[0], spec.dim)
        if tuple(arr.shape) != want or (spec.sequential and arr.shape[0] < 1):
            raise ValueError(f"{spec.name}: backend produced shape "
                             f"{tuple(arr.shape)}, contract wants {want}")
        return np.ascontiguousarray(arr, dtype=np.float32)

    def encode_text(self, text: str) -> np.ndarray:
        return self._checked(self.backend.encode_text(self.spec, text))

    def encode_image(self, image: np.ndarray) -> np.ndarray:
        return self._checked(self.backend.encode_image(self.spec, image))

    def encode_video(self, frames: list[np.ndarray]) -> np.ndarray:
        """Per-frame vectors stacked to [T, dim], T capped upstream."""
        rows = [self.backend.encode_image(self.spec, f) for f in frames]
        out = np.stack(rows).astype(np.float32)
        if out.shape[1] != self.spec.dim:
            raise ValueError(f"{self.spec.name}: frame dim {out.shape[1]} != "
                             f"{self.spec.dim}")
        return out

    def encode_audio(self, samples: np.ndarray, rate: int) -> np.ndarray:
        spec = self.spec
        if spec.name == "mfcc":
            return self._checked(media.mfcc_vector(samples, rate, spec.dim))
        if spec.name == "wav2vec2":
            chunks = media.chunk_waveform(samples, rate)
            rows = [self.backend.encode_waveform(spec, c, rate) for c in chunks]
            return self._checked(np.stack(rows))
        return self._checked(self.backend.encode_waveform(spec, samples, rate))


def hf_available(names: list[str]) -> bool:
    try:
        backend = HfBackend()
        for name in names:
            backend._load(REGISTRY[name])
        return True
    except Exception:
        return False


def resolve_backend(choice: str, encoder_names: list[str]):
    """Map auto/hashed/hf to a backend instance, with a fallback notice."""
    if choice == "hashed":
        return HashedBackend()
    if choice == "hf":
        return HfBackend()
    pretrained = [n for n in encoder_names if REGISTRY[n].hf_model is not None]
    if pretrained and hf_available(pretrained):
        return HfBackend()
    print("notice: pretrained weights unavailable, using the deterministic "
          "hashed backend", file=sys.stderr)
    return HashedBackend()
