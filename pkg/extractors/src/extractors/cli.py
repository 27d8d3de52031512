"""embexport: raw media CSV -> embedding-store dataset.

Exit codes: 0 success, 2 usage/contract error.
"""

from __future__ import annotations

import argparse
import sys

from .encoders import REGISTRY, Encoder, resolve_backend
from .pipeline import ExtractionPlan, extract_dataset, make_transcriber


def _choices(modality: str) -> list[str]:
    return sorted(n for n, s in REGISTRY.items() if s.modality == modality)


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="embexport",
        description="Extract per-modality embeddings from a media CSV "
                    "(columns: id, label, split, media_path, caption, "
                    "optional audio_path) into the embedding-store format.")
    parser.add_argument("--csv", required=True)
    parser.add_argument("--out", required=True)
    parser.add_argument("--dataset-name", default="extracted")
    parser.add_argument("--text-encoder", default="bert",
                        choices=_choices("text") + ["none"])
    parser.add_argument("--vision-encoder", default="vit",
                        choices=_choices("vision") + ["none"])
    parser.add_argument("--audio-encoder", default="mfcc",
                        choices=_choices("audio") + ["none"])
    parser.add_argument("--backend", default="auto",
                        choices=["auto", "hashed", "hf"])
    parser.add_argument("--transcribe", action="store_true",
                        help="fill empty captions from the audio track "
                             "(requires cached speech-to-text weights)")
    return parser


def main(argv=None) -> int:
    args = make_parser().parse_args(argv)
    names = [n for n in (args.text_encoder, args.vision_encoder,
                         args.audio_encoder) if n != "none"]
    if not names:
        print("error: all encoders disabled", file=sys.stderr)
        return 2
    try:
        backend = resolve_backend(args.backend, names)

        def enc(name):
            return None if name == "none" else Encoder(name, backend)

        transcriber = None
        if args.transcribe:
            transcriber = make_transcriber()
        plan = ExtractionPlan(
            text=enc(args.text_encoder), vision=enc(args.vision_encoder),
            audio=enc(args.audio_encoder), transcriber=transcriber,
            provenance={
                "backend": backend.name,
                "encoders": {m: n for m, n in
                             (("text", args.text_encoder),
                              ("vision", args.vision_encoder),
                              ("audio", args.audio_encoder)) if n != "none"},
                **({"transcriber": transcriber.provenance}
                   if transcriber else {}),
            })
        manifest = extract_dataset(args.csv, args.out, plan, args.dataset_name)
    except (ValueError, RuntimeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    print(manifest)
    return 0


if __name__ == "__main__":
    sys.exit(main())
