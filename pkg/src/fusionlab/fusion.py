"""Fusion strategies over per-modality representations.

Early fusion combines modality vectors before the classifier (feature
concatenation or Hadamard product). Late fusion combines per-modality
classifier probabilities (learned softmax weighting, or a stacked
second-stage classifier). Ordered attention fusion keeps the anchor
modality as a sequence and folds the remaining modalities into it one at
a time through scaled dot-product cross-attention.
"""

from __future__ import annotations

import numpy as np

from . import tensor_core as tc
from .errors import ConfigError, ShapeError
from .tensor_core import Node

STRATEGIES = ("early_concat", "early_product", "late_weighted",
              "late_stacked", "ordered_attention")


def temporal_summarize(seq: Node, lengths: np.ndarray, wx: Node, wh: Node,
                       b: Node) -> Node:
    """LSTM temporal summary of a padded batch [B,T,d] -> [B,H].

    Each sample is summarized at its own true length; padded positions
    cannot influence the value or any gradient.
    """
    return tc.lstm_last_state(seq, lengths, wx, wh, b)


def fuse_early_concat(vectors: list[Node]) -> Node:
    """Concatenate modality vectors [B,d_i] along the feature axis."""
    if not vectors:
        raise ShapeError("early concat: no modalities")
    return tc.concat(vectors, axis=1)


def fuse_early_product(vectors: list[Node]) -> Node:
    """Hadamard product of equal-width modality vectors [B,d]."""
    if not vectors:
        raise ShapeError("early product: no modalities")
    return tc.elementwise_product(vectors)


def fuse_late_weighted(probs: Node, weights: Node) -> Node:
    """Mix per-modality probabilities [B,M] by softmax(weights) -> [B].

    The mixture is convex, so the result stays a probability.
    """
    m = probs.shape[1]
    mix = tc.softmax_rows(tc.reshape(weights, (1, m)))
    out = tc.matmul(probs, tc.transpose_last2(mix))
    return tc.reshape(out, (probs.shape[0],))


def fuse_late_stacked(probs: Node, w: Node, b: Node) -> Node:
    """Second-stage dense classifier on probabilities [B,M] -> logit [B]."""
    return tc.reshape(tc.add_bias(tc.matmul(probs, w), b), (probs.shape[0],))


def cross_modal_attend(text_seq: Node, context_seq: Node, wq: Node, wk: Node,
                       wv: Node, walign: Node) -> Node:
    """Aligned cross-modal attention: [B,L,d_t] x [B,T,d_c] -> [B,L,d_t].

    Queries come from the anchor sequence, keys and values from the
    context; the scaled dot-product attention output is mapped back to
    the anchor feature width by a linear alignment layer. With a single
    context position the attention weight on that key is exactly one,
    and a zero (masked) context gives uniform weights over zero values,
    so the output vanishes and the anchor passes through untouched
    downstream.
    """
    d_k = wq.shape[1]
    if d_k == 0:
        raise ConfigError("cross_modal_attend: key dimension is zero")
    bsz, l_len, d_t = text_seq.shape
    t_len, d_c = context_seq.shape[1], context_seq.shape[2]
    q = tc.reshape(tc.matmul(tc.reshape(text_seq, (bsz * l_len, d_t)), wq),
                   (bsz, l_len, d_k))
    k = tc.reshape(tc.matmul(tc.reshape(context_seq, (bsz * t_len, d_c)), wk),
                   (bsz, t_len, d_k))
    v = tc.reshape(tc.matmul(tc.reshape(context_seq, (bsz * t_len, d_c)), wv),
                   (bsz, t_len, wv.shape[1]))
    logits = tc.scale(tc.bmm(q, tc.transpose_last2(k)), 1.0 / np.sqrt(d_k))
    attn = tc.softmax_rows(logits)                      # [B,L,T]
    mixed = tc.bmm(attn, v)                             # [B,L,d_v]
    aligned = tc.reshape(
        tc.matmul(tc.reshape(mixed, (bsz * l_len, wv.shape[1])), walign),
        (bsz, l_len, d_t))
    return aligned


def attention_weights(text_seq: Node, context_seq: Node, wq: Node,
                      wk: Node) -> Node:
    """The [B,L,T] attention distribution alone, for inspection/tests."""
    d_k = wq.shape[1]
    bsz, l_len, d_t = text_seq.shape
    t_len, d_c = context_seq.shape[1], context_seq.shape[2]
    q = tc.reshape(tc.matmul(tc.reshape(text_seq, (bsz * l_len, d_t)), wq),
                   (bsz, l_len, d_k))
    k = tc.reshape(tc.matmul(tc.reshape(context_seq, (bsz * t_len, d_c)), wk),
                   (bsz, t_len, d_k))
    return tc.softmax_rows(tc.scale(tc.bmm(q, tc.transpose_last2(k)),
                                    1.0 / np.sqrt(d_k)))


def fuse_ordered_attention(anchor_seq: Node, contexts: list[tuple[Node, dict]],
                           ) -> Node:
    """Fold contexts into the anchor sequence, then mean-pool -> [B,d_t].

    Each step computes the aligned attention output r and infuses it
    multiplicatively around a residual path: anchor <- anchor * (1 + r),
    i.e. the anchor's own content plus a context-gated interaction term.
    Masked (all-zero) contexts leave the anchor exactly unchanged, which
    keeps samples with missing modalities on the anchor-only path.
    """
    seq = anchor_seq
    for context_seq, params in contexts:
        r = cross_modal_attend(seq, context_seq, params["wq"], params["wk"],
                               params["wv"], params["walign"])
        seq = tc.add(seq, tc.mul(seq, r))
    return tc.mean_axis(seq, 1)
