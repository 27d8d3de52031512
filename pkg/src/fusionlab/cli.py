"""Command-line interface: generate data, train, evaluate, ablate.

Config files are flat UTF-8 "key = value" lines with '#' comments. Seed
precedence: --seed flag, then config file, then the FUSIONLAB_SEED
environment variable, then 0. Exit codes: 0 success, 1 runtime or
numeric failure, 2 usage or contract error.
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

from .embedding_store import Dataset, load_manifest
from .errors import (ConfigError, DataError, EmptySplitError, FusionlabError,
                     TensorFileError, TrainingDivergedError)
from .evaluation import (emit_report, evaluate_model, grid_subsets,
                         run_ablation, write_per_sample_dump)
from .model import (ModelConfig, build_model, load_checkpoint, save_checkpoint)
from .synthetic_data import gen_confounder_xor, gen_missing_modality, gen_separable
from .training import TrainConfig, train, train_late_stacked

CONFIG_KEYS = """config file keys (flat `key = value`, '#' comments):
  strategy      early_concat | early_product | late_weighted |
                late_stacked | ordered_attention   (default early_concat)
  order         comma list, fusion order for ordered_attention,
                anchor first (e.g. order = text,audio,vision)
  lstm_hidden   int, temporal-summary width        (default 128)
  head_hidden   int, classifier hidden width       (default 128)
  dropout_p     float in [0,1)                     (default 0.2)
  seed          u64
  batch_size    int                                (default 32)
  lr            float                              (default 1e-4)
  max_epochs    int                                (default 20)
  patience      int, early-stopping patience       (default 5)
  adam_beta1    float                              (default 0.9)
  adam_beta2    float                              (default 0.999)
  adam_eps      float                              (default 1e-8)
  threshold     decision threshold                 (default 0.5)
"""

MODEL_KEYS = ("strategy", "order", "lstm_hidden", "head_hidden", "dropout_p",
              "seed")
TRAIN_KEYS = ("batch_size", "lr", "max_epochs", "patience", "adam_beta1",
              "adam_beta2", "adam_eps", "threshold")


def parse_config_file(path) -> dict[str, str]:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config not found: {path}")
    out: dict[str, str] = {}
    for lineno, raw in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in MODEL_KEYS + TRAIN_KEYS:
            raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
        out[key] = value
    return out


def resolve_seed(flag_seed, file_cfg: dict[str, str]) -> int:
    if flag_seed is not None:
        return int(flag_seed)
    if "seed" in file_cfg:
        return int(file_cfg["seed"])
    env = os.environ.get("FUSIONLAB_SEED")
    if env is not None:
        return int(env)
    return 0


def build_configs(file_cfg: dict[str, str], manifest, seed: int):
    order = None
    if "order" in file_cfg:
        order = [s.strip() for s in file_cfg["order"].split(",") if s.strip()]
    model_cfg = ModelConfig.for_manifest(
        strategy=file_cfg.get("strategy", "early_concat"),
        manifest=manifest,
        order=order,
        lstm_hidden=int(file_cfg.get("lstm_hidden", 128)),
        head_hidden=int(file_cfg.get("head_hidden", 128)),
        dropout_p=float(file_cfg.get("dropout_p", 0.2)),
        seed=seed)
    train_cfg = TrainConfig(
        batch_size=int(file_cfg.get("batch_size", 32)),
        lr=float(file_cfg.get("lr", 1e-4)),
        max_epochs=int(file_cfg.get("max_epochs", 20)),
        patience=int(file_cfg.get("patience", 5)),
        beta1=float(file_cfg.get("adam_beta1", 0.9)),
        beta2=float(file_cfg.get("adam_beta2", 0.999)),
        eps=float(file_cfg.get("adam_eps", 1e-8)),
        seed=seed)
    threshold = float(file_cfg.get("threshold", 0.5))
    return model_cfg, train_cfg, threshold


def parse_dims(text: str) -> dict[str, int]:
    dims = {}
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        if "=" not in part:
            raise ConfigError(f"bad dims entry {part!r}, expected name=dim")
        name, value = part.split("=", 1)
        dims[name.strip()] = int(value)
    if not dims:
        raise ConfigError("dims cannot be empty")
    return dims


def cmd_gen(args) -> int:
    out = Path(args.out)
    seed = resolve_seed(args.seed, {})
    if args.kind == "separable":
        dims = parse_dims(args.dims or "text=16,audio=8,vision=8")
        informative = args.informative or next(iter(dims))
        manifest = gen_separable(out, args.n, dims, informative, seed)
    elif args.kind == "xor":
        dims = parse_dims(args.dims or "text=16,vision=16")
        manifest = gen_confounder_xor(out, args.n, dims, seed)
    else:
        dims = parse_dims(args.dims or "text=16,audio=16")
        manifest = gen_missing_modality(out, args.n, dims,
                                        args.missing_fraction, seed,
                                        missing=args.missing)
    print(manifest)
    return 0


def cmd_train(args) -> int:
    file_cfg = parse_config_file(args.config)
    manifest = load_manifest(args.manifest)
    seed = resolve_seed(args.seed, file_cfg)
    model_cfg, train_cfg, _ = build_configs(file_cfg, manifest, seed)
    dataset = Dataset(manifest)
    if model_cfg.strategy == "late_stacked":
        best, log = train_late_stacked(model_cfg, dataset, train_cfg)
    else:
        best, log = train(build_model(model_cfg), dataset, train_cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_checkpoint(best, out / "model.ckpt")
    log.write(out / "trainlog.jsonl")
    print(out / "model.ckpt")
    return 0


def _check_modalities(config: ModelConfig, manifest) -> None:
    manifest_dims = {m.name: m.dim for m in manifest.modalities}
    for m in config.modalities:
        if m.name not in manifest_dims:
            raise DataError(f"manifest lacks modality {m.name!r} required "
                            f"by the checkpoint")
        if manifest_dims[m.name] != m.dim:
            raise DataError(f"modality {m.name!r}: manifest dim "
                            f"{manifest_dims[m.name]} != checkpoint dim {m.dim}")


def cmd_eval(args) -> int:
    state = load_checkpoint(args.checkpoint)
    manifest = load_manifest(args.manifest)
    _check_modalities(state.config, manifest)
    dataset = Dataset(manifest)
    report = evaluate_model(state, dataset, args.split, threshold=args.threshold)
    if report.auroc is None:
        print("warning: AUROC omitted (single-class split)", file=sys.stderr)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    ext = {"csv": "csv", "markdown": "md", "json": "json"}[args.format]
    emit_report([{"model": state.config.strategy, "report": report}],
                args.format, out / f"report.{ext}")
    write_per_sample_dump(report, out / "predictions.jsonl")
    print(out / f"report.{ext}")
    return 0


def cmd_ablate(args) -> int:
    file_cfg = parse_config_file(args.config)
    manifest = load_manifest(args.manifest)
    seed = resolve_seed(args.seed, file_cfg)
    model_cfg, train_cfg, threshold = build_configs(file_cfg, manifest, seed)
    dataset = Dataset(manifest)
    names = manifest.modality_names()
    subsets = grid_subsets(names, args.grid)
    if args.jobs > 1:
        from concurrent.futures import ThreadPoolExecutor

        def run_one(subset):
            return run_ablation(model_cfg, dataset, [subset], train_cfg,
                                threshold)[0]

        with ThreadPoolExecutor(max_workers=args.jobs) as pool:
            rows = list(pool.map(run_one, subsets))
    else:
        rows = run_ablation(model_cfg, dataset, subsets, train_cfg, threshold)
    grid_names = [n for n in names
                  if any(n in row["subset"] for row in rows)]
    report_rows = []
    for row in rows:
        label = "".join(n[0].upper() for n in grid_names if n in row["subset"])
        indicators = {n: ("1" if n in row["subset"] else "0")
                      for n in grid_names}
        report_rows.append({"model": label, "indicators": indicators,
                            "report": row["report"]})
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    ext = {"csv": "csv", "markdown": "md", "json": "json"}[args.format]
    emit_report(report_rows, args.format, out / f"ablation.{ext}")
    print(out / f"ablation.{ext}")
    return 0


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fusionlab",
        description="Train and evaluate multimodal fusion classifiers over "
                    "precomputed embeddings.",
        epilog=CONFIG_KEYS,
        formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a synthetic dataset")
    p.add_argument("--kind", required=True,
                   choices=["separable", "xor", "missing"])
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--dims", default=None,
                   help="comma list name=dim (e.g. text=16,audio=8)")
    p.add_argument("--informative", default=None,
                   help="separable: which modality carries the label")
    p.add_argument("--missing-fraction", type=float, default=0.3)
    p.add_argument("--missing", default="audio",
                   help="missing: which modality to drop")
    p.set_defaults(fn=cmd_gen)

    p = sub.add_parser("train", help="train a model from a config file")
    p.add_argument("--config", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None,
                   help="overrides the config-file seed")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on one split")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--split", default="test", choices=["train", "val", "test"])
    p.add_argument("--format", default="csv",
                   choices=["csv", "markdown", "json"])
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("ablate", help="run the modality-subset grid")
    p.add_argument("--config", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--grid", required=True,
                   help="modality initials, e.g. tav")
    p.add_argument("--format", default="csv",
                   choices=["csv", "markdown", "json"])
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_ablate)
    return parser


def main(argv=None) -> int:
    parser = make_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except (ConfigError, DataError, TensorFileError, EmptySplitError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (TrainingDivergedError, FusionlabError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
