"""Binary classification metrics, ablation runner, and report emission.

Positive class is label 1. Macro metrics are the unweighted mean of the
two per-class values; zero-denominator precision/recall are defined as 0
and flagged in the report. AUROC uses the rank (Mann-Whitney) statistic
with half credit for ties, which equals the trapezoidal area under the
empirical ROC curve.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from itertools import combinations
from decimal import ROUND_HALF_EVEN, Decimal
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .embedding_store import Dataset, apply_modality_mask
from .errors import ConfigError, DataError, MetricUndefinedError
from .model import ModelConfig, ModelState, forward, predict_labels


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fp: int
    tn: int
    fn: int

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn


class MacroMetrics(NamedTuple):
    precision: float
    recall: float
    f1: float
    accuracy: float


def compute_confusion(preds, labels) -> ConfusionCounts:
    preds = np.asarray(preds)
    labels = np.asarray(labels)
    if preds.shape != labels.shape:
        raise DataError(f"preds {preds.shape} vs labels {labels.shape}")
    for name, v in (("preds", preds), ("labels", labels)):
        if not np.all((v == 0) | (v == 1)):
            raise DataError(f"{name} must be 0/1")
    tp = int(np.sum((preds == 1) & (labels == 1)))
    fp = int(np.sum((preds == 1) & (labels == 0)))
    tn = int(np.sum((preds == 0) & (labels == 0)))
    fn = int(np.sum((preds == 0) & (labels == 1)))
    return ConfusionCounts(tp=tp, fp=fp, tn=tn, fn=fn)


def _prf(tp: int, fp: int, fn: int, cls: str, flags: list[str]):
    if tp + fp == 0:
        flags.append(f"precision[{cls}] undefined, set to 0")
        precision = 0.0
    else:
        precision = tp / (tp + fp)
    if tp + fn == 0:
        flags.append(f"recall[{cls}] undefined, set to 0")
        recall = 0.0
    else:
        recall = tp / (tp + fn)
    f1 = 0.0 if precision + recall == 0 else 2 * precision * recall / (precision + recall)
    return precision, recall, f1


def per_class_metrics(counts: ConfusionCounts,
                      flags: list[str] | None = None) -> dict[int, tuple]:
    """(precision, recall, f1) for class 1 and, via inversion, class 0."""
    flags = flags if flags is not None else []
    pos = _prf(counts.tp, counts.fp, counts.fn, "class1", flags)
    neg = _prf(counts.tn, counts.fn, counts.fp, "class0", flags)
    return {1: pos, 0: neg}


def macro_metrics(counts: ConfusionCounts) -> MacroMetrics:
    per_class = per_class_metrics(counts)
    p1, r1, f1_1 = per_class[1]
    p0, r0, f1_0 = per_class[0]
    total = counts.total
    accuracy = (counts.tp + counts.tn) / total if total else 0.0
    return MacroMetrics(precision=(p1 + p0) / 2, recall=(r1 + r0) / 2,
                        f1=(f1_1 + f1_0) / 2, accuracy=accuracy)


def auroc(scores, labels) -> float:
    """P(random positive outranks random negative), ties get half credit."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    n_pos = int(np.sum(labels == 1))
    n_neg = int(np.sum(labels == 0))
    if n_pos == 0 or n_neg == 0:
        raise MetricUndefinedError(
            f"AUROC undefined: {n_pos} positives, {n_neg} negatives")
    # average ranks (1-based) handle ties exactly as half credit
    order = np.argsort(scores, kind="stable")
    ranks = np.empty(len(scores), dtype=np.float64)
    sorted_scores = scores[order]
    i = 0
    while i < len(scores):
        j = i
        while j + 1 < len(scores) and sorted_scores[j + 1] == sorted_scores[i]:
            j += 1
        ranks[order[i : j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    rank_sum = float(ranks[labels == 1].sum())
    return (rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)


@dataclass
class EvalReport:
    counts: ConfusionCounts
    per_class: dict[int, tuple]
    macro_precision: float
    macro_recall: float
    macro_f1: float
    accuracy: float
    auroc: float | None                       # None when single-class
    per_sample: list[dict] = field(default_factory=list)
    flags: list[str] = field(default_factory=list)


def report_from_scores(ids, scores, labels, threshold: float = 0.5) -> EvalReport:
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels).astype(np.int64)
    preds = predict_labels(scores, threshold)
    counts = compute_confusion(preds, labels)
    flags: list[str] = []
    per_class = per_class_metrics(counts, flags)
    macro = macro_metrics(counts)
    try:
        auc = auroc(scores, labels)
    except MetricUndefinedError as exc:
        auc = None
        flags.append(str(exc))
    per_sample = [
        {"id": str(i), "score": float(s), "label": int(l), "pred": int(p)}
        for i, s, l, p in zip(ids, scores, labels, preds)]
    return EvalReport(counts=counts, per_class=per_class,
                      macro_precision=macro.precision, macro_recall=macro.recall,
                      macro_f1=macro.f1, accuracy=macro.accuracy, auroc=auc,
                      per_sample=per_sample, flags=flags)


def evaluate_model(state: ModelState, dataset: Dataset, split: str,
                   threshold: float = 0.5,
                   enabled_modalities: set[str] | None = None) -> EvalReport:
    ids, scores, labels = [], [], []
    for batch in dataset.make_batches(split, 256, None, shuffle=False):
        if enabled_modalities is not None:
            batch = apply_modality_mask(batch, enabled_modalities)
        s = forward(state, batch, training=False)
        ids.extend(batch.ids)
        scores.extend(s.tolist())
        labels.extend(batch.labels.astype(np.int64).tolist())
    return report_from_scores(ids, np.array(scores), np.array(labels), threshold)


# ---------------------------------------------------------------------------
# ablation


def grid_subsets(names: list[str], letters: str) -> list[tuple[str, ...]]:
    """Subsets in table order: singles, pairs, ..., full set.

    Letters select modalities by first letter (case-insensitive); order
    within a size follows the letter order.
    """
    chosen = []
    for ch in letters.lower():
        matches = [n for n in names if n.lower().startswith(ch)]
        if len(matches) != 1:
            raise ConfigError(
                f"grid letter {ch!r} matches {matches or 'no'} modalities")
        chosen.append(matches[0])
    if len(set(chosen)) != len(chosen):
        raise ConfigError(f"grid letters repeat a modality: {letters!r}")
    out = []
    m = len(chosen)
    for size in range(1, m + 1):
        for combo in combinations(range(m), size):
            out.append(tuple(chosen[i] for i in combo))
    return out


def run_ablation(config: ModelConfig, dataset: Dataset,
                 subsets: list[tuple[str, ...]], train_config,
                 threshold: float = 0.5) -> list[dict]:
    """Train one fresh, identically seeded model per modality subset.

    The subset mask is applied to train, val and test batches; the full
    set therefore reproduces the unmasked run exactly.
    """
    from .model import build_model
    from .training import train, train_late_stacked

    if not subsets:
        raise ConfigError("ablation needs at least one subset")
    rows = []
    for subset in subsets:
        enabled = set(subset)
        if config.strategy == "late_stacked":
            best, log = train_late_stacked(config, dataset, train_config,
                                           modality_mask=enabled)
        else:
            best, log = train(build_model(config), dataset, train_config,
                              modality_mask=enabled)
        report = evaluate_model(best, dataset, "test", threshold,
                                enabled_modalities=enabled)
        rows.append({"subset": subset, "report": report, "log": log})
    return rows


# ---------------------------------------------------------------------------
# report files

COLUMNS = ("model", "F1 (M)", "P (M)", "R (M)", "Acc", "AUROC")


def round3(x: float | None) -> str:
    """Half-even rounding to 3 decimals; blank for undefined."""
    if x is None:
        return ""
    return str(Decimal(repr(float(x))).quantize(Decimal("0.001"),
                                                rounding=ROUND_HALF_EVEN))


def _row_values(report: EvalReport) -> list[str]:
    return [round3(report.macro_f1), round3(report.macro_precision),
            round3(report.macro_recall), round3(report.accuracy),
            round3(report.auroc)]


def emit_report(rows: list[dict], fmt: str, path) -> None:
    """Write reports to csv, markdown, or json with identical rounded values.

    Each row is {"model": str, "report": EvalReport} plus optional
    "indicators": {column -> "1"/"0"} emitted between the model and
    metric columns (used by the ablation grid).
    """
    if fmt not in ("csv", "markdown", "json"):
        raise DataError(f"unknown report format {fmt!r}")
    if not rows:
        raise DataError("no reports to emit")
    indicator_cols = list(rows[0].get("indicators", {}).keys())
    header = ["model", *indicator_cols, *COLUMNS[1:]]
    table = []
    for row in rows:
        cells = [row["model"]]
        cells += [row.get("indicators", {}).get(c, "") for c in indicator_cols]
        cells += _row_values(row["report"])
        table.append(cells)

    path = Path(path)
    if fmt == "csv":
        lines = [",".join(header)]
        lines += [",".join(cells) for cells in table]
        path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    elif fmt == "markdown":
        lines = ["| " + " | ".join(header) + " |",
                 "|" + "|".join(["---"] * len(header)) + "|"]
        lines += ["| " + " | ".join(cells) + " |" for cells in table]
        path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    else:
        out = []
        for cells in table:
            obj = dict(zip(header, cells))
            for col in COLUMNS[1:]:
                obj[col] = float(obj[col]) if obj[col] != "" else None
            out.append(obj)
        path.write_text(json.dumps({"columns": header, "rows": out},
                                   indent=2, sort_keys=True) + "\n",
                        encoding="utf-8")


def write_per_sample_dump(report: EvalReport, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for row in report.per_sample:
            fh.write(json.dumps(row, sort_keys=True) + "\n")
