import json

import numpy as np
import pytest

from conftest import write_silent_wav, write_wav
from extractors.encoders import Encoder, HashedBackend
from extractors.pipeline import (ExtractionPlan, extract_dataset,
                                 read_csv_rows)

# the primary package is the consumer of the written files; its loader is
# the authority on whether an emitted dataset is valid
from fusionlab.embedding_store import Dataset, load_manifest


def plan(text="bert", vision="vit", audio="mfcc", transcriber=None):
    backend = HashedBackend()

    def enc(name):
        return None if name is None else Encoder(name, backend)

    return ExtractionPlan(text=enc(text), vision=enc(vision), audio=enc(audio),
                          transcriber=transcriber,
                          provenance={"backend": "hashed"})


class TestCsv:
    def test_missing_columns(self, tmp_path):
        bad = tmp_path / "bad.csv"
        bad.write_text("id,label\n1,0\n")
        with pytest.raises(ValueError, match="lacks columns"):
            read_csv_rows(bad)

    def test_bad_label(self, tmp_path):
        bad = tmp_path / "bad.csv"
        bad.write_text("id,label,split,media_path,caption\nx,3,train,a.png,c\n")
        with pytest.raises(ValueError, match="label"):
            read_csv_rows(bad)


class TestExtraction:
    def test_manifest_loads_in_primary(self, toy_media, tmp_path):
        manifest = extract_dataset(toy_media / "media.csv", tmp_path / "out",
                                   plan())
        loaded = load_manifest(manifest)
        assert len(loaded.records) == 5
        dims = {m.name: m.dim for m in loaded.modalities}
        assert dims == {"text": 768, "vision": 768, "audio": 40}
        Dataset(loaded)  # payloads parse too

    def test_vision_sequential_when_any_video(self, toy_media, tmp_path):
        manifest = extract_dataset(toy_media / "media.csv", tmp_path / "out",
                                   plan())
        loaded = load_manifest(manifest)
        vision = loaded.modality("vision")
        assert vision.sequential
        ds = Dataset(loaded)
        batch = next(ds.make_batches("val", 8, None, shuffle=False))
        assert batch.lengths["vision"][0] == 12  # the 12-second clip
        train = next(ds.make_batches("train", 8, None, shuffle=False))
        image_row = train.ids.index("s1")
        assert train.lengths["vision"][image_row] == 1

    def test_empty_caption_without_transcriber_is_absent(self, toy_media,
                                                         tmp_path):
        manifest = extract_dataset(toy_media / "media.csv", tmp_path / "out",
                                   plan())
        loaded = load_manifest(manifest)
        rec = {r.id: r for r in loaded.records}
        assert rec["s4"].tensors["text"] is None
        assert rec["s4"].tensors["audio"] is not None
        assert rec["s1"].tensors["text"] is not None

    def test_audio_absent_for_images(self, toy_media, tmp_path):
        manifest = extract_dataset(toy_media / "media.csv", tmp_path / "out",
                                   plan())
        rec = {r.id: r for r in load_manifest(manifest).records}
        assert rec["s1"].tensors["audio"] is None
        assert rec["s3"].tensors["audio"] is not None  # sibling wav

    def test_encoder_tags_recorded(self, toy_media, tmp_path):
        manifest = extract_dataset(toy_media / "media.csv", tmp_path / "out",
                                   plan())
        loaded = load_manifest(manifest)
        tags = {m.name: m.encoder_tag for m in loaded.modalities}
        assert tags == {"text": "bert", "vision": "vit", "audio": "mfcc"}

    def test_provenance_in_header(self, toy_media, tmp_path):
        manifest = extract_dataset(toy_media / "media.csv", tmp_path / "out",
                                   plan())
        header = json.loads(manifest.read_text().splitlines()[0])
        assert header["provenance"]["backend"] == "hashed"

    def test_deterministic_output(self, toy_media, tmp_path):
        m1 = extract_dataset(toy_media / "media.csv", tmp_path / "a", plan())
        m2 = extract_dataset(toy_media / "media.csv", tmp_path / "b", plan())
        files1 = sorted(p.name for p in m1.parent.iterdir())
        files2 = sorted(p.name for p in m2.parent.iterdir())
        assert files1 == files2
        for name in files1:
            assert (m1.parent / name).read_bytes() == (m2.parent / name).read_bytes()


class TestTranscription:
    def _csv(self, tmp_path, wav_name):
        csv_path = tmp_path / "t.csv"
        csv_path.write_text("id,label,split,media_path,caption\n"
                            f"a,1,train,{wav_name},\n")
        return csv_path

    def test_transcript_fills_empty_caption(self, tmp_path):
        write_wav(tmp_path / "voice.wav", seconds=2.0)
        calls = []

        def fake_transcriber(samples, rate):
            calls.append((len(samples), rate))
            return "transcribed words"

        manifest = extract_dataset(self._csv(tmp_path, "voice.wav"),
                                   tmp_path / "out",
                                   plan(transcriber=fake_transcriber))
        rec = load_manifest(manifest).records[0]
        assert rec.tensors["text"] is not None
        assert calls  # the transcriber actually ran

    def test_silent_audio_skips_transcription_text_absent(self, tmp_path):
        write_silent_wav(tmp_path / "quiet.wav", seconds=2.0)
        calls = []

        def fake_transcriber(samples, rate):
            calls.append(1)
            return "should never run"

        manifest = extract_dataset(self._csv(tmp_path, "quiet.wav"),
                                   tmp_path / "out",
                                   plan(transcriber=fake_transcriber))
        rec = load_manifest(manifest).records[0]
        assert rec.tensors["text"] is None
        assert not calls
        # silent audio also yields no audio tensor
        assert rec.tensors["audio"] is None
