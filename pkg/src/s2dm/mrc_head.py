"""Span-prediction head over per-token semantic features, its loss and SQuAD-style scoring."""
import json
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ContractError
from .nn import Module, glorot, linear


class SpanHead(Module):
    """Linear map from a per-token feature to (start, end) logits."""

    def __init__(self, in_dim, seed=0):
        super().__init__()
        rng = np.random.default_rng(seed)
        self.in_dim = in_dim
        self.add_param("w", glorot(rng, in_dim, 2))
        self.add_param("b", np.zeros(2))

    def __call__(self, features):
        if features.shape[-1] != self.in_dim:
            raise ContractError(f"span head expects width {self.in_dim}, got {features.shape[-1]}")
        return linear(features, self.params["w"], self.params["b"])


@dataclass(frozen=True)
class SpanPrediction:
    start: int
    end: int
    score: float

    def __post_init__(self):
        if not 0 <= self.start <= self.end:
            raise ContractError(f"bad span ({self.start}, {self.end})")


def semantic_features(disentangler, e, mask=None):
    """Per-token mean directions of the semantic vMF posterior (no sampling)."""
    return disentangler.semantic_params(e, mask).mu


def predict_span(start_logits, end_logits, passage_mask, max_answer_len=10):
    """Best legal span; indices count passage tokens only (first masked position is 0)."""
    pos = np.flatnonzero(np.asarray(passage_mask))
    if pos.size == 0:
        raise ContractError("passage mask is empty")
    s = np.asarray(start_logits, dtype=np.float64)[pos]
    e = np.asarray(end_logits, dtype=np.float64)[pos]
    n = pos.size
    score = s[:, None] + e[None, :]
    i, j = np.indices((n, n))
    legal = (j >= i) & (j - i < max_answer_len)
    score = np.where(legal, score, -np.inf)
    flat = int(np.argmax(score))
    a, b = divmod(flat, n)
    return SpanPrediction(a, b, float(score[a, b]))


def loss_span(logits, gold_start, gold_end, mask=None):
    """Mean over the batch of CE(start) + CE(end).

    ``logits`` is (B, L, 2) or (L, 2); gold indices are positions in L.
    Positions with mask 0 are excluded from the softmax.
    """
    if logits.ndim == 2:
        logits = T.reshape(logits, (1,) + logits.shape)
        gold_start, gold_end = [gold_start], [gold_end]
        mask = None if mask is None else np.asarray(mask)[None]
    B, L, _ = logits.shape
    gs = np.asarray(gold_start, dtype=np.int64).reshape(B)
    ge = np.asarray(gold_end, dtype=np.int64).reshape(B)
    m = np.ones((B, L)) if mask is None else np.asarray(mask, dtype=np.float64)
    rows = np.arange(B)
    for g in (gs, ge):
        if np.any(g < 0) or np.any(g >= L) or np.any(m[rows, np.clip(g, 0, L - 1)] == 0):
            raise ContractError("gold index outside the passage")
    bias = (1.0 - m) * -1e9
    lp_s = T.log_softmax(logits[:, :, 0] + bias, axis=-1)
    lp_e = T.log_softmax(logits[:, :, 1] + bias, axis=-1)
    return -(T.tsum(lp_s[rows, gs]) + T.tsum(lp_e[rows, ge])) / float(B)


def em_f1(pred, gold):
    """Exact match and token-overlap F1 for one (start, end) pair of inclusive spans."""
    ps, pe = (pred.start, pred.end) if isinstance(pred, SpanPrediction) else pred
    gs, ge = gold
    em = int(ps == gs and pe == ge)
    overlap = max(0, min(pe, ge) - max(ps, gs) + 1)
    if overlap == 0:
        return em, 0.0
    precision = overlap / (pe - ps + 1)
    recall = overlap / (ge - gs + 1)
    return em, 2 * precision * recall / (precision + recall)


def mean_em_f1(preds, golds):
    if not preds:
        raise ContractError("no predictions to score")
    scores = [em_f1(p, g) for p, g in zip(preds, golds)]
    return float(np.mean([s[0] for s in scores])), float(np.mean([s[1] for s in scores]))


def write_predictions(path, rows):
    """rows: iterable of (example_id, SpanPrediction, passage tokens)."""
    with open(path, "w", encoding="utf-8") as fh:
        for ex_id, p, passage in rows:
            fh.write(json.dumps({"example_id": ex_id, "start": p.start, "end": p.end,
                                 "text": " ".join(passage[p.start:p.end + 1]),
                                 "score": p.score}) + "\n")
