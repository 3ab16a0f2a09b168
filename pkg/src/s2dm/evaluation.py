"""Analysis instruments: STS correlation, retrieval, structural probes, span consistency, PCA."""
import csv
import json
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.stats import spearmanr

from . import tensor as T
from .disentangler import stl_terms
from .errors import ContractError, NumericError
from .optim import Adam


@dataclass
class EvalReport:
    metric: str
    value: float
    n: int
    cohort: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.n <= 0:
            raise ContractError(f"{self.metric}: sample count must be positive")
        if not np.isfinite(self.value):
            raise NumericError(f"{self.metric}: non-finite value")
        self.value = float(self.value)

    def to_json(self):
        return json.dumps(asdict(self), sort_keys=True)


def write_reports(path, reports):
    with open(path, "w") as fh:
        for r in reports:
            fh.write(r.to_json() + "\n")


def read_reports(path):
    with open(path) as fh:
        return [EvalReport(**json.loads(line)) for line in fh if line.strip()]


def _unit_rows(x):
    x = np.asarray(x, dtype=np.float64)
    norm = np.linalg.norm(x, axis=1, keepdims=True)
    if np.any(norm == 0):
        raise ContractError("zero vector has no direction")
    return x / norm


def pearson(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    ca, cb = a - a.mean(), b - b.mean()
    denom = np.sqrt((ca * ca).sum() * (cb * cb).sum())
    if denom == 0:
        raise NumericError("correlation undefined for zero-variance input")
    return float((ca * cb).sum() / denom)


def sts_pearson(u, v, gold):
    """Pearson r between cosine(u_i, v_i) and gold similarity."""
    gold = np.asarray(gold, dtype=np.float64)
    if len(gold) < 3:
        raise ContractError("need at least 3 pairs")
    if len(u) != len(gold) or len(v) != len(gold):
        raise ContractError("vector sets and gold scores differ in length")
    cos = np.sum(_unit_rows(u) * _unit_rows(v), axis=1)
    return pearson(cos, gold)


def retrieval_accuracy(ys, yt):
    """Top-1 accuracy of finding row i of ``yt`` as the cosine nearest neighbour of ``ys[i]``."""
    if len(ys) != len(yt) or len(ys) == 0:
        raise ContractError("retrieval needs two non-empty aligned sets")
    sim = _unit_rows(ys) @ _unit_rows(yt).T
    return float(np.mean(np.argmax(sim, axis=1) == np.arange(len(ys))))


def _spearman(pred, gold):
    pred = np.asarray(pred, dtype=np.float64)
    gold = np.asarray(gold, dtype=np.float64)
    if pred.size < 2 or np.ptp(pred) == 0 or np.ptp(gold) == 0:
        return 0.0, True
    return float(spearmanr(pred, gold)[0]), False


@dataclass
class ProbeResult:
    depth: float
    distance: float
    depth_degenerate: bool = False
    distance_degenerate: bool = False


def probe_scores(bh, trees):
    """Spearman of probe predictions against gold trees; ``bh`` is a list of (n, k) arrays."""
    pd, gd, pp, gp = [], [], [], []
    for x, tree in zip(bh, trees):
        x = np.asarray(x, dtype=np.float64)
        sq = np.sum(x * x, axis=1)
        pd.append(sq)
        gd.append(tree.depths)
        iu = np.triu_indices(len(sq), 1)
        d_b = sq[:, None] + sq[None, :] - 2.0 * x @ x.T
        pp.append(d_b[iu])
        gp.append(np.asarray(tree.distances)[iu])
    depth, dflag = _spearman(np.concatenate(pd), np.concatenate(gd))
    dist, pflag = _spearman(np.concatenate(pp), np.concatenate(gp))
    return ProbeResult(depth, dist, dflag, pflag)


def fit_probe(features, trees, rank=64, steps=200, lr=1e-2, seed=0, batch_size=64):
    """Gradient fit of a rank-k probe matrix B on per-token features (list of (n, F))."""
    if not features:
        raise ContractError("probe fit needs data")
    F = features[0].shape[1]
    rng = np.random.default_rng(seed)
    B = T.parameter(rng.normal(0.0, 1.0 / np.sqrt(F), (F, rank)), name="probe")
    opt = Adam([B], lr)
    for _ in range(steps):
        pick = rng.choice(len(features), size=min(batch_size, len(features)), replace=False)
        L = max(len(trees[i]) for i in pick)
        h = np.zeros((len(pick), L, F))
        mask = np.zeros((len(pick), L))
        depth = np.zeros((len(pick), L))
        dist = np.zeros((len(pick), L, L))
        for b, i in enumerate(pick):
            n = len(trees[i])
            h[b, :n] = features[i]
            mask[b, :n] = 1.0
            depth[b, :n] = trees[i].depths
            dist[b, :n, :n] = trees[i].distances
        with T.Tape() as tape:
            l_depth, l_dist = stl_terms(T.matmul(h, B), mask, depth, dist)
            loss = (l_depth + l_dist) / float(len(pick))
        opt.step(T.backward(loss, tape))
    return B.data.copy()


def probe_quality(fit_features, fit_trees, features, trees, rank=64, steps=200, lr=1e-2,
                  seed=0):
    """Fit a probe on one set, then score depth/distance Spearman on another."""
    B = fit_probe(fit_features, fit_trees, rank=rank, steps=steps, lr=lr, seed=seed)
    return probe_scores([np.asarray(f) @ B for f in features], trees)


def constituent_consistency(predictions, constituent_sets, passage_lengths=None):
    """Percentage of predicted (start, end) spans that equal a constituent span."""
    if len(predictions) == 0:
        raise ContractError("no predictions")
    hits = 0
    for k, ((s, e), spans) in enumerate(zip(predictions, constituent_sets)):
        if s < 0 or e < s or (passage_lengths is not None and e >= passage_lengths[k]):
            raise ContractError(f"prediction {k} ({s}, {e}) lies outside its passage")
        hits += (s, e) in spans
    return 100.0 * hits / len(predictions)


def pca_2d(vectors):
    """Top-2 principal projections; each component's largest-magnitude loading is positive."""
    x = np.asarray(vectors, dtype=np.float64)
    if x.ndim != 2 or len(x) < 3:
        raise ContractError("PCA needs at least 3 vectors")
    c = x - x.mean(axis=0)
    cov = c.T @ c / (len(x) - 1)
    vals, vecs = np.linalg.eigh(cov)
    if vals[-1] <= 0:
        raise NumericError("PCA undefined for zero-variance data")
    top = vecs[:, ::-1][:, :2]
    for j in range(top.shape[1]):
        if top[np.argmax(np.abs(top[:, j])), j] < 0:
            top[:, j] *= -1
    return c @ top, vals[::-1]


def pca_export(vectors, labels, langs, path):
    coords, _ = pca_2d(vectors)
    if coords.shape[1] < 2:
        coords = np.hstack([coords, np.zeros((len(coords), 1))])
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["label", "lang", "pc1", "pc2"])
        for lab, lang, (a, b) in zip(labels, langs, coords):
            w.writerow([lab, lang, repr(float(a)), repr(float(b))])
    return coords
