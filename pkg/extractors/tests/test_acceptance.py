"""Acceptance for the extraction package: dim contracts on a toy media
set, and an end-to-end round trip through the primary trainer's CLI."""

import subprocess
import sys

import numpy as np

from conftest import write_video
from extractors.cli import main as embexport_main
from fusionlab.embedding_store import Dataset, load_manifest


def report(name, detail=""):
    print(f"[PASS] {name}" + (f"  ({detail})" if detail else ""))


def test_dim_contracts_on_toy_set(toy_media, tmp_path):
    """Exact output dims for every stated encoder on the 5-sample set."""
    expectations = [
        (("--text-encoder", "bert", "--vision-encoder", "vit",
          "--audio-encoder", "mfcc"),
         {"text": 768, "vision": 768, "audio": 40}),
        (("--text-encoder", "clip-text", "--vision-encoder", "dinov2",
          "--audio-encoder", "avgg19"),
         {"text": 512, "vision": 384, "audio": 1000}),
        (("--text-encoder", "clap-text", "--vision-encoder", "clip",
          "--audio-encoder", "clap"),
         {"text": 768, "vision": 768, "audio": 768}),
    ]
    for i, (flags, want) in enumerate(expectations):
        out = tmp_path / f"set{i}"
        rc = embexport_main(["--csv", str(toy_media / "media.csv"),
                             "--out", str(out), "--backend", "hashed", *flags])
        assert rc == 0
        loaded = load_manifest(out / "manifest.jsonl")
        assert {m.name: m.dim for m in loaded.modalities} == want
        assert len(loaded.records) == 5
        Dataset(loaded)
    report("dim contracts", "bert/hxp 768, clip-text 512, dinov2 384, "
                            "mfcc 40, avgg19 1000, vit/clip 768")


def test_video_frame_count_capped(tmp_path):
    """A video longer than 100 seconds extracts exactly 100 frames."""
    write_video(tmp_path / "long.avi", n_frames=130, fps=1.0)
    (tmp_path / "one.csv").write_text(
        "id,label,split,media_path,caption\nv,1,train,long.avi,words here\n")
    out = tmp_path / "out"
    assert embexport_main(["--csv", str(tmp_path / "one.csv"), "--out",
                           str(out), "--backend", "hashed"]) == 0
    ds = Dataset(load_manifest(out / "manifest.jsonl"))
    batch = next(ds.make_batches("train", 1, None, shuffle=False))
    assert batch.lengths["vision"][0] == 100
    report("frame cap", "130 s of footage -> 100 frames")


def test_round_trip_trains_in_primary_cli(toy_media, tmp_path):
    """An extractor-written manifest trains end to end via `fusionlab`."""
    out = tmp_path / "dataset"
    assert embexport_main(["--csv", str(toy_media / "media.csv"),
                           "--out", str(out), "--backend", "hashed"]) == 0
    cfg = tmp_path / "run.cfg"
    cfg.write_text("strategy = early_concat\nhead_hidden = 8\n"
                   "lstm_hidden = 6\nseed = 3\nlr = 0.01\nmax_epochs = 3\n"
                   "patience = 3\nbatch_size = 4\n")
    run_dir = tmp_path / "run"
    train = subprocess.run(
        [sys.executable, "-m", "fusionlab", "train", "--config", str(cfg),
         "--manifest", str(out / "manifest.jsonl"), "--out", str(run_dir)],
        capture_output=True, text=True)
    assert train.returncode == 0, train.stderr
    assert (run_dir / "model.ckpt").exists()
    evaluate = subprocess.run(
        [sys.executable, "-m", "fusionlab", "eval",
         "--checkpoint", str(run_dir / "model.ckpt"),
         "--manifest", str(out / "manifest.jsonl"),
         "--split", "train", "--format", "json", "--out", str(run_dir)],
        capture_output=True, text=True)
    assert evaluate.returncode == 0, evaluate.stderr
    assert (run_dir / "report.json").exists()
    report("primary round trip", "embexport -> fusionlab train -> eval, exit 0")
