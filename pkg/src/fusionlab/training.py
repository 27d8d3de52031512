"""Training loop: Adam, early stopping on validation macro-F1.

The optimizer is Adam with bias correction and no schedule; training
stops after `patience` epochs without validation improvement and always
returns the best-validation parameters, not the last. A non-finite loss
aborts immediately, naming the offending batch.
"""

from __future__ import annotations

import copy
import json
import time
from dataclasses import dataclass, field
from typing import Any, Iterable

import numpy as np

from . import tensor_core as tc
from .embedding_store import Dataset, apply_modality_mask
from .errors import ConfigError, EmptySplitError, TrainingDivergedError
from .evaluation import evaluate_model
from .model import ModelConfig, ModelState, build_model, forward_nodes
from .rng import RngState


@dataclass
class TrainConfig:
    batch_size: int = 32
    lr: float = 1e-4
    max_epochs: int = 20
    patience: int = 5
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0

    def __post_init__(self):
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.lr <= 0:
            raise ConfigError(f"lr must be positive, got {self.lr}")
        if self.patience < 1:
            raise ConfigError(f"patience must be >= 1, got {self.patience}")
        if self.max_epochs < 1:
            raise ConfigError(f"max_epochs must be >= 1, got {self.max_epochs}")


@dataclass
class TrainLog:
    epochs: list[dict[str, Any]] = field(default_factory=list)
    best_epoch: int = -1
    stopped_early: bool = False

    def write(self, path) -> None:
        """JSON-lines, one epoch per line; timings on '#' comment lines."""
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(f"# written {time.strftime('%Y-%m-%dT%H:%M:%S%z')}\n")
            for entry in self.epochs:
                row = {k: v for k, v in entry.items() if k != "wall_time"}
                fh.write(json.dumps(row, sort_keys=True) + "\n")
                fh.write(f"# epoch {entry['epoch']} wall_time "
                         f"{entry['wall_time']:.3f}s\n")
            fh.write(json.dumps({"best_epoch": self.best_epoch,
                                 "stopped_early": self.stopped_early},
                                sort_keys=True) + "\n")


def adam_step(params: dict[str, tc.Node], grads: dict[str, np.ndarray],
              moments: dict[str, tuple[np.ndarray, np.ndarray]], t: int,
              cfg: TrainConfig) -> None:
    """One bias-corrected Adam update, in place. t is 1-based."""
    if t < 1:
        raise ConfigError("adam_step: t must be >= 1")
    b1, b2 = np.float32(cfg.beta1), np.float32(cfg.beta2)
    for name, node in params.items():
        g = grads[name]
        m, v = moments[name]
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        moments[name] = (m, v)
        m_hat = m / np.float32(1 - cfg.beta1**t)
        v_hat = v / np.float32(1 - cfg.beta2**t)
        node.value -= np.float32(cfg.lr) * m_hat / (np.sqrt(v_hat)
                                                    + np.float32(cfg.eps))


def init_moments(params: dict[str, tc.Node]) -> dict:
    return {name: (np.zeros_like(n.value), np.zeros_like(n.value))
            for name, n in params.items()}


def _loss_node(state: ModelState, batch, training: bool) -> tc.Node:
    out = forward_nodes(state, batch, training)
    if out.logits is not None:
        return tc.bce_with_logits(out.logits, batch.labels)
    return tc.bce_on_probs(out.scores, batch.labels)


def _snapshot(state: ModelState) -> dict[str, np.ndarray]:
    return {k: n.value.copy() for k, n in state.params.items()}


def _restore(state: ModelState, snap: dict[str, np.ndarray]) -> ModelState:
    params = {k: tc.leaf(v.copy(), requires_grad=True) for k, v in snap.items()}
    return ModelState(config=copy.deepcopy(state.config), params=params,
                      rng=state.rng, step=state.step, extra=dict(state.extra))


def train(state: ModelState, dataset: Dataset, cfg: TrainConfig,
          trainable: Iterable[str] | None = None,
          modality_mask: set[str] | None = None,
          val_split: str = "val", use_dropout: bool = True
          ) -> tuple[ModelState, TrainLog]:
    """Optimize `state` on the train split; early-stop on val macro-F1.

    Returns the best-validation model state and the per-epoch log.
    `trainable` restricts updates to a subset of parameter names;
    `modality_mask` zeroes the disabled modalities in every batch;
    `use_dropout=False` keeps the forward pass deterministic (used when
    training a head on top of frozen parts).
    """
    if not dataset.manifest.split_records("train"):
        raise EmptySplitError("train split is empty")
    if not dataset.manifest.split_records(val_split):
        raise EmptySplitError(f"{val_split} split is empty")
    names = list(state.params) if trainable is None else list(trainable)
    params = {n: state.params[n] for n in names}
    moments = init_moments(params)
    log = TrainLog()
    best_f1 = -1.0
    best_snap = _snapshot(state)
    epochs_since_best = 0
    t = 0
    for epoch in range(cfg.max_epochs):
        started = time.perf_counter()
        epoch_rng = RngState(cfg.seed).derive(f"shuffle:{epoch}")
        losses = []
        for i, batch in enumerate(dataset.make_batches("train", cfg.batch_size,
                                                       epoch_rng, shuffle=True)):
            if modality_mask is not None:
                batch = apply_modality_mask(batch, modality_mask)
            loss = _loss_node(state, batch, training=use_dropout)
            if not np.isfinite(loss.value).all():
                raise TrainingDivergedError(
                    f"non-finite loss at epoch {epoch} batch {i} "
                    f"(ids {batch.ids[:3]}...)")
            tc.zero_grads(state.params.values())
            tc.backward(loss)
            t += 1
            adam_step(params, {n: params[n].grad for n in params}, moments,
                      t, cfg)
            state.step += 1
            losses.append(float(loss.value.ravel()[0]))
        val = evaluate_model(state, dataset, val_split,
                             enabled_modalities=modality_mask)
        entry = {
            "epoch": epoch,
            "train_loss": float(np.mean(losses)),
            "val_macro_f1": val.macro_f1,
            "val_macro_precision": val.macro_precision,
            "val_macro_recall": val.macro_recall,
            "val_accuracy": val.accuracy,
            "wall_time": time.perf_counter() - started,
        }
        log.epochs.append(entry)
        if val.macro_f1 > best_f1:
            best_f1 = val.macro_f1
            best_snap = _snapshot(state)
            log.best_epoch = epoch
            epochs_since_best = 0
        else:
            epochs_since_best += 1
            if epochs_since_best >= cfg.patience:
                log.stopped_early = True
                break
    return _restore(state, best_snap), log


def train_late_stacked(config: ModelConfig, dataset: Dataset, cfg: TrainConfig,
                       modality_mask: set[str] | None = None
                       ) -> tuple[ModelState, TrainLog]:
    """Two-stage protocol: per-modality heads first, then the stacker.

    Stage one trains one single-modality classifier per modality to
    convergence and freezes it. Stage two trains only the dense stacker
    on the frozen heads' probabilities.
    """
    if config.strategy != "late_stacked":
        raise ConfigError("train_late_stacked requires the late_stacked strategy")
    composite = build_model(config)
    for m in config.modalities:
        sub_cfg = ModelConfig(strategy="early_concat", modalities=[m],
                              lstm_hidden=config.lstm_hidden,
                              head_hidden=config.head_hidden,
                              dropout_p=config.dropout_p,
                              seed=config.seed)
        sub = build_model(sub_cfg, RngState(config.seed).derive(f"stage1:{m.name}"))
        # a modality outside the ablation mask is trained on zeros, exactly
        # as the stacker will see it at evaluation time
        enabled = {m.name} if modality_mask is None else ({m.name} & modality_mask)
        best, _ = train(sub, dataset, cfg, modality_mask=enabled)
        for src, dst in (("head.w1", f"head.{m.name}.w1"),
                         ("head.b1", f"head.{m.name}.b1"),
                         ("head.w2", f"head.{m.name}.w2"),
                         ("head.b2", f"head.{m.name}.b2")):
            composite.params[dst].value[:] = best.params[src].value
        if m.sequential:
            for suffix in ("wx", "wh", "b"):
                composite.params[f"lstm.{m.name}.{suffix}"].value[:] = \
                    best.params[f"lstm.{m.name}.{suffix}"].value
    stage2, log = train(composite, dataset, cfg,
                        trainable=["stack.w", "stack.b"],
                        modality_mask=modality_mask, use_dropout=False)
    return stage2, log
