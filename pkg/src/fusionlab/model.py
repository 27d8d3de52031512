"""Classifier assembly: config, parameter init, forward pass, checkpoints.

A model is a flat dict of named parameter tensors whose shapes are fully
determined by the config, so checkpoints can be reopened anywhere. The
forward pass summarizes sequential modalities with an LSTM (except under
ordered attention, which consumes sequences directly), fuses according
to the strategy, and scores through a small MLP head with dropout.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from . import fusion
from . import tensor_core as tc
from .embedding_store import MAGIC, Batch, DatasetManifest
from .errors import ConfigError, DataError, TensorFileError
from .rng import RngState
from .tensor_core import Node

CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class ModalityInfo:
    name: str
    dim: int
    sequential: bool = False


@dataclass
class ModelConfig:
    strategy: str
    modalities: list[ModalityInfo]
    order: list[str] | None = None      # ordered_attention fold order, anchor first
    lstm_hidden: int = 128
    head_hidden: int = 128
    dropout_p: float = 0.2
    seed: int = 0

    def __post_init__(self):
        if self.strategy not in fusion.STRATEGIES:
            raise ConfigError(f"unknown strategy {self.strategy!r}; "
                              f"choose from {fusion.STRATEGIES}")
        if not self.modalities:
            raise ConfigError("config needs at least one modality")
        names = [m.name for m in self.modalities]
        if len(set(names)) != len(names):
            raise ConfigError(f"duplicate modality names: {names}")
        if self.order is None:
            self.order = list(names)
        for name in self.order:
            if name not in names:
                raise ConfigError(f"unknown modality {name!r} in fusion order")
        if sorted(self.order) != sorted(names):
            raise ConfigError("fusion order must be a permutation of the modalities")
        if self.lstm_hidden < 1 or self.head_hidden < 1:
            raise ConfigError("layer widths must be >= 1")
        if not 0.0 <= self.dropout_p < 1.0:
            raise ConfigError(f"dropout_p must be in [0, 1), got {self.dropout_p}")

    @classmethod
    def for_manifest(cls, strategy: str, manifest: DatasetManifest,
                     **kwargs) -> "ModelConfig":
        mods = [ModalityInfo(m.name, m.dim, m.sequential)
                for m in manifest.modalities]
        return cls(strategy=strategy, modalities=mods, **kwargs)

    def to_dict(self) -> dict[str, Any]:
        return {
            "strategy": self.strategy,
            "modalities": [{"name": m.name, "dim": m.dim,
                            "sequential": m.sequential} for m in self.modalities],
            "order": list(self.order),
            "lstm_hidden": self.lstm_hidden,
            "head_hidden": self.head_hidden,
            "dropout_p": self.dropout_p,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "ModelConfig":
        return cls(strategy=d["strategy"],
                   modalities=[ModalityInfo(m["name"], int(m["dim"]),
                                            bool(m["sequential"]))
                               for m in d["modalities"]],
                   order=list(d["order"]),
                   lstm_hidden=int(d["lstm_hidden"]),
                   head_hidden=int(d["head_hidden"]),
                   dropout_p=float(d["dropout_p"]),
                   seed=int(d["seed"]))


@dataclass
class ModelState:
    config: ModelConfig
    params: dict[str, Node]
    rng: RngState
    step: int = 0
    extra: dict[str, Any] = field(default_factory=dict)

    def trainable(self, prefix: str | None = None) -> dict[str, Node]:
        if prefix is None:
            return self.params
        return {k: v for k, v in self.params.items() if k.startswith(prefix)}


def _rep_dims(cfg: ModelConfig) -> dict[str, int]:
    """Per-modality width after optional temporal summarization."""
    reps = {}
    for m in cfg.modalities:
        if m.sequential and cfg.strategy != "ordered_attention":
            reps[m.name] = cfg.lstm_hidden
        else:
            reps[m.name] = m.dim
    return reps


def _head_shapes(prefix: str, d_in: int, hidden: int) -> dict[str, tuple]:
    return {
        f"{prefix}.w1": (d_in, hidden),
        f"{prefix}.b1": (hidden,),
        f"{prefix}.w2": (hidden, 1),
        f"{prefix}.b2": (1,),
    }


def param_shapes(cfg: ModelConfig) -> dict[str, tuple]:
    """Canonical parameter names and shapes, derived from config alone."""
    shapes: dict[str, tuple] = {}
    reps = _rep_dims(cfg)
    h = cfg.lstm_hidden
    for m in cfg.modalities:
        if m.sequential and cfg.strategy != "ordered_attention":
            shapes[f"lstm.{m.name}.wx"] = (m.dim, 4 * h)
            shapes[f"lstm.{m.name}.wh"] = (h, 4 * h)
            shapes[f"lstm.{m.name}.b"] = (4 * h,)

    if cfg.strategy == "early_concat":
        shapes.update(_head_shapes("head", sum(reps.values()), cfg.head_hidden))
    elif cfg.strategy == "early_product":
        dims = [reps[m.name] for m in cfg.modalities]
        common = min(dims)
        if len(set(dims)) > 1:
            for m in cfg.modalities:
                shapes[f"proj.{m.name}.w"] = (reps[m.name], common)
                shapes[f"proj.{m.name}.b"] = (common,)
        shapes.update(_head_shapes("head", common, cfg.head_hidden))
    elif cfg.strategy in ("late_weighted", "late_stacked"):
        for m in cfg.modalities:
            shapes.update(_head_shapes(f"head.{m.name}", reps[m.name],
                                       cfg.head_hidden))
        if cfg.strategy == "late_weighted":
            shapes["mix.w"] = (len(cfg.modalities),)
        else:
            shapes["stack.w"] = (len(cfg.modalities), 1)
            shapes["stack.b"] = (1,)
    else:  # ordered_attention
        anchor = cfg.order[0]
        d_t = reps[anchor]
        for name in cfg.order[1:]:
            d_c = reps[name]
            shapes[f"attn.{name}.wq"] = (d_t, d_t)
            shapes[f"attn.{name}.wk"] = (d_c, d_t)
            shapes[f"attn.{name}.wv"] = (d_c, d_t)
            shapes[f"attn.{name}.walign"] = (d_t, d_t)
        shapes.update(_head_shapes("head", d_t, cfg.head_hidden))
    return shapes


def _init_value(name: str, shape: tuple, cfg: ModelConfig,
                rng: RngState) -> np.ndarray:
    if name.endswith(".b") and name.startswith("lstm."):
        # zero biases, forget gate at one so early training can retain state
        h = cfg.lstm_hidden
        b = np.zeros(shape, np.float32)
        b[h : 2 * h] = 1.0
        return b
    if name in ("mix.w", "stack.w"):
        # fusion combiners start indifferent; their final weights are learned
        return np.zeros(shape, np.float32)
    last = name.rsplit(".", 1)[-1]
    if last.startswith("b"):
        return np.zeros(shape, np.float32)
    fan_in = shape[0]
    return rng.uniform_signed(shape, 1.0 / np.sqrt(fan_in))


def build_model(cfg: ModelConfig, rng: RngState | None = None) -> ModelState:
    """Deterministically initialized model; same seed, same bytes."""
    if rng is None:
        rng = RngState(cfg.seed)
    init_rng = rng.derive("init")
    params = {name: tc.leaf(_init_value(name, shape, cfg, init_rng),
                            requires_grad=True)
              for name, shape in param_shapes(cfg).items()}
    return ModelState(config=cfg, params=params, rng=rng.derive("dropout"))


def check_batch(cfg: ModelConfig, batch: Batch) -> None:
    for m in cfg.modalities:
        if m.name not in batch.data:
            raise DataError(f"batch lacks modality {m.name!r}")
        got = batch.data[m.name].shape[-1]
        if got != m.dim:
            raise DataError(
                f"modality {m.name!r}: batch dim {got} != config dim {m.dim}")


@dataclass
class ForwardOut:
    scores: Node                       # [B] probabilities
    logits: Node | None                # [B] pre-sigmoid, None for late_weighted
    modality_probs: Node | None = None  # [B,M] for late fusion strategies


def _mlp_head(state: ModelState, prefix: str, x: Node, training: bool) -> Node:
    cfg = state.config
    p = state.params
    h = tc.relu(tc.add_bias(tc.matmul(x, p[f"{prefix}.w1"]), p[f"{prefix}.b1"]))
    h = tc.dropout(h, cfg.dropout_p, state.rng, training)
    out = tc.add_bias(tc.matmul(h, p[f"{prefix}.w2"]), p[f"{prefix}.b2"])
    return tc.reshape(out, (x.shape[0],))


def _modality_reps(state: ModelState, batch: Batch) -> dict[str, Node]:
    cfg = state.config
    reps = {}
    for m in cfg.modalities:
        x = tc.constant(batch.data[m.name])
        if m.sequential and cfg.strategy != "ordered_attention":
            reps[m.name] = fusion.temporal_summarize(
                x, batch.lengths[m.name], state.params[f"lstm.{m.name}.wx"],
                state.params[f"lstm.{m.name}.wh"], state.params[f"lstm.{m.name}.b"])
        else:
            reps[m.name] = x
    return reps


def _as_sequence(node: Node) -> Node:
    if node.value.ndim == 2:
        bsz, d = node.shape
        return tc.reshape(node, (bsz, 1, d))
    return node


def forward_nodes(state: ModelState, batch: Batch, training: bool) -> ForwardOut:
    cfg = state.config
    check_batch(cfg, batch)
    reps = _modality_reps(state, batch)
    ordered = [reps[m.name] for m in cfg.modalities]

    if cfg.strategy == "early_concat":
        fused = fusion.fuse_early_concat(ordered)
        logits = _mlp_head(state, "head", fused, training)
        return ForwardOut(scores=tc.sigmoid(logits), logits=logits)

    if cfg.strategy == "early_product":
        dims = [r.shape[1] for r in ordered]
        if len(set(dims)) > 1:
            ordered = [
                tc.add_bias(tc.matmul(r, state.params[f"proj.{m.name}.w"]),
                            state.params[f"proj.{m.name}.b"])
                for r, m in zip(ordered, cfg.modalities)]
        fused = fusion.fuse_early_product(ordered)
        logits = _mlp_head(state, "head", fused, training)
        return ForwardOut(scores=tc.sigmoid(logits), logits=logits)

    if cfg.strategy in ("late_weighted", "late_stacked"):
        bsz = batch.size
        cols = []
        for m in cfg.modalities:
            head_logit = _mlp_head(state, f"head.{m.name}", reps[m.name], training)
            cols.append(tc.reshape(tc.sigmoid(head_logit), (bsz, 1)))
        probs = tc.concat(cols, axis=1)
        if cfg.strategy == "late_weighted":
            scores = fusion.fuse_late_weighted(probs, state.params["mix.w"])
            return ForwardOut(scores=scores, logits=None, modality_probs=probs)
        logits = fusion.fuse_late_stacked(probs, state.params["stack.w"],
                                          state.params["stack.b"])
        return ForwardOut(scores=tc.sigmoid(logits), logits=logits,
                          modality_probs=probs)

    # ordered_attention
    anchor = cfg.order[0]
    seq = _as_sequence(reps[anchor])
    contexts = []
    for name in cfg.order[1:]:
        params = {k: state.params[f"attn.{name}.{k}"]
                  for k in ("wq", "wk", "wv", "walign")}
        contexts.append((_as_sequence(reps[name]), params))
    pooled = fusion.fuse_ordered_attention(seq, contexts)
    logits = _mlp_head(state, "head", pooled, training)
    return ForwardOut(scores=tc.sigmoid(logits), logits=logits)


def forward(state: ModelState, batch: Batch, training: bool = False) -> np.ndarray:
    """Per-sample probabilities in (0,1); inference is deterministic."""
    return forward_nodes(state, batch, training).scores.value.copy()


def predict_labels(scores: np.ndarray, threshold: float = 0.5) -> np.ndarray:
    """Hard labels: 1 iff score >= threshold (ties go to the positive class)."""
    return (np.asarray(scores) >= threshold).astype(np.int64)


# ---------------------------------------------------------------------------
# checkpoints


def save_checkpoint(state: ModelState, path) -> None:
    """Header line (JSON config echo), then named tensors in EMB1 framing."""
    header = json.dumps({"format_version": CHECKPOINT_VERSION,
                         "config": state.config.to_dict(),
                         "step": state.step,
                         "extra": state.extra}, sort_keys=True)
    with open(path, "wb") as fh:
        fh.write(header.encode("utf-8") + b"\n")
        for name, node in state.params.items():
            encoded = name.encode("utf-8")
            fh.write(struct.pack("<I", len(encoded)))
            fh.write(encoded)
            arr = np.ascontiguousarray(node.value, dtype="<f4")
            fh.write(MAGIC)
            fh.write(struct.pack("<I", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(arr.tobytes())


def load_checkpoint(path) -> ModelState:
    with open(path, "rb") as fh:
        header_line = fh.readline()
        try:
            header = json.loads(header_line.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise TensorFileError(f"{path}: bad checkpoint header: {exc}") from exc
        if header.get("format_version") != CHECKPOINT_VERSION:
            raise TensorFileError(f"{path}: unsupported checkpoint version")
        cfg = ModelConfig.from_dict(header["config"])
        expected = param_shapes(cfg)
        params: dict[str, Node] = {}
        while True:
            raw = fh.read(4)
            if not raw:
                break
            if len(raw) < 4:
                raise TensorFileError(f"{path}: truncated checkpoint")
            (name_len,) = struct.unpack("<I", raw)
            name = fh.read(name_len).decode("utf-8")
            if fh.read(4) != MAGIC:
                raise TensorFileError(f"{path}: bad tensor framing at {name!r}")
            raw = fh.read(4)
            if len(raw) < 4:
                raise TensorFileError(f"{path}: truncated tensor {name!r}")
            (ndim,) = struct.unpack("<I", raw)
            raw = fh.read(4 * ndim)
            if len(raw) < 4 * ndim:
                raise TensorFileError(f"{path}: truncated tensor {name!r}")
            shape = struct.unpack(f"<{ndim}I", raw)
            count = int(np.prod(shape)) if shape else 1
            payload = fh.read(4 * count)
            if len(payload) != 4 * count:
                raise TensorFileError(f"{path}: truncated tensor {name!r}")
            if name not in expected:
                raise TensorFileError(f"{path}: unexpected parameter {name!r}")
            if tuple(shape) != tuple(expected[name]):
                raise TensorFileError(
                    f"{path}: parameter {name!r} shape {list(shape)} != "
                    f"{list(expected[name])}")
            arr = np.frombuffer(payload, dtype="<f4").reshape(shape)
            params[name] = tc.leaf(arr.astype(np.float32, copy=True),
                                   requires_grad=True)
    missing = set(expected) - set(params)
    if missing:
        raise TensorFileError(f"{path}: missing parameters {sorted(missing)}")
    state = ModelState(config=cfg, params=params,
                       rng=RngState(cfg.seed).derive("dropout"),
                       step=int(header.get("step", 0)))
    state.extra = header.get("extra", {})
    return state
