import csv

import numpy as np
import pytest

from s2dm.data.trees import tree_metrics
from s2dm.errors import ContractError, NumericError
from s2dm.evaluation import (EvalReport, constituent_consistency, fit_probe, pca_2d, pca_export,
                             pearson, probe_quality, probe_scores, read_reports,
                             retrieval_accuracy, sts_pearson, write_reports)


def two_pass_pearson(a, b):
    n = len(a)
    ma = sum(a) / n
    mb = sum(b) / n
    cov = sum((x - ma) * (y - mb) for x, y in zip(a, b))
    va = sum((x - ma) ** 2 for x in a)
    vb = sum((y - mb) ** 2 for y in b)
    return cov / (va * vb) ** 0.5


def ranks(x):
    # average ranks for ties
    x = np.asarray(x)
    order = np.argsort(x, kind="mergesort")
    r = np.empty(len(x))
    i = 0
    while i < len(x):
        j = i
        while j + 1 < len(x) and x[order[j + 1]] == x[order[i]]:
            j += 1
        r[order[i:j + 1]] = (i + j) / 2.0
        i = j + 1
    return r


def pair_with_cosines(cos):
    u = np.tile([1.0, 0.0], (len(cos), 1))
    v = np.stack([cos, np.sqrt(1 - np.asarray(cos) ** 2)], axis=1)
    return u, v


# ---------------------------------------------------------------- STS

def test_sts_perfect_and_reversed():
    gold = np.array([0.1, 0.5, 0.9, 0.3])
    u, v = pair_with_cosines(gold)
    assert sts_pearson(u, v, gold) == pytest.approx(1.0)
    assert sts_pearson(u, v, -gold) == pytest.approx(-1.0)


def test_sts_two_pass_oracle():
    rng = np.random.default_rng(0)
    u, v = rng.normal(size=(50, 8)), rng.normal(size=(50, 8))
    gold = rng.uniform(0, 5, 50)
    cos = [a @ b / np.linalg.norm(a) / np.linalg.norm(b) for a, b in zip(u, v)]
    assert abs(sts_pearson(u, v, gold) - two_pass_pearson(cos, list(gold))) < 1e-12


def test_sts_invariances():
    rng = np.random.default_rng(1)
    u, v = rng.normal(size=(20, 4)), rng.normal(size=(20, 4))
    gold = rng.uniform(0, 5, 20)
    r = sts_pearson(u, v, gold)
    assert abs(sts_pearson(u, v, -3.0 * gold + 7.0)) == pytest.approx(abs(r), abs=1e-12)
    perm = rng.permutation(20)
    assert sts_pearson(u[perm], v[perm], gold[perm]) == pytest.approx(r, abs=1e-12)


def test_sts_errors():
    u, v = pair_with_cosines([0.1, 0.2, 0.3])
    with pytest.raises(NumericError):
        sts_pearson(u, v, [1.0, 1.0, 1.0])
    with pytest.raises(ContractError):
        sts_pearson(u[:2], v[:2], [1.0, 2.0])
    with pytest.raises(NumericError):
        pearson([1, 1, 1], [1, 2, 3])


# ---------------------------------------------------------------- retrieval

def test_retrieval_copies_and_chance():
    rng = np.random.default_rng(2)
    y = rng.normal(size=(30, 5))
    assert retrieval_accuracy(y, y.copy()) == 1.0
    # orthogonal vectors against a shuffled copy: only fixed points of the shuffle are found,
    # and a random permutation has one fixed point on average
    eye = np.eye(30)
    fixed = []
    for _ in range(200):
        perm = rng.permutation(30)
        acc = retrieval_accuracy(eye, eye[perm])
        assert acc == np.mean(perm == np.arange(30))
        fixed.append(acc)
    assert np.mean(fixed) == pytest.approx(1 / 30, abs=0.01)


def test_retrieval_exhaustive_oracle():
    rng = np.random.default_rng(3)
    ys, yt = rng.normal(size=(200, 16)), rng.normal(size=(200, 16))
    yt[:120] += 2.0 * ys[:120]
    hits = 0
    for i in range(200):
        best = max(range(200), key=lambda j: ys[i] @ yt[j] / np.linalg.norm(yt[j]))
        hits += best == i
    assert retrieval_accuracy(ys, yt) == hits / 200


# ---------------------------------------------------------------- probes

def test_probe_scores_perfect_reversed_and_degenerate():
    trees = [tree_metrics([0, 1, 2, 3]), tree_metrics([2, 0, 2])]
    exact = [np.sqrt(t.depths)[:, None] for t in trees]
    res = probe_scores(exact, trees)
    assert res.depth == pytest.approx(1.0)
    flipped = [np.sqrt(3.0 - t.depths)[:, None] for t in trees]
    assert probe_scores(flipped, trees).depth == pytest.approx(-1.0)
    flat = probe_scores([np.ones((4, 2)), np.ones((3, 2))], trees)
    assert flat.depth == 0.0 and flat.depth_degenerate
    assert flat.distance == 0.0 and flat.distance_degenerate


def test_probe_distance_matches_on_a_line():
    # points on a line at x = depth reproduce path lengths on a chain exactly
    trees = [tree_metrics([0, 1, 2, 3, 4])]
    x = [np.arange(5.0)[:, None]]
    res = probe_scores(x, trees)
    assert res.distance == pytest.approx(1.0)


def test_probe_rank_oracle():
    rng = np.random.default_rng(4)
    trees = [tree_metrics([0, 1, 1, 2, 2, 3]), tree_metrics([3, 3, 0, 3])]
    feats = [rng.normal(size=(len(t), 3)) for t in trees]
    res = probe_scores(feats, trees)
    pred_d = np.concatenate([np.sum(f ** 2, 1) for f in feats])
    gold_d = np.concatenate([t.depths for t in trees])
    assert res.depth == pytest.approx(two_pass_pearson(list(ranks(pred_d)), list(ranks(gold_d))),
                                      abs=1e-12)
    pp, gp = [], []
    for f, t in zip(feats, trees):
        for i in range(len(t)):
            for j in range(i + 1, len(t)):
                pp.append(np.sum((f[i] - f[j]) ** 2))
                gp.append(t.distances[i, j])
    assert res.distance == pytest.approx(two_pass_pearson(list(ranks(pp)), list(ranks(gp))),
                                         abs=1e-12)


def test_probe_fit_recovers_planted_structure():
    rng = np.random.default_rng(5)
    trees = []
    for _ in range(60):
        n = int(rng.integers(3, 8))
        order = rng.permutation(n)
        heads = [0] * n
        for k in range(1, n):
            heads[order[k]] = int(order[rng.integers(k)]) + 1
        trees.append(tree_metrics(heads))
    # features carry sqrt(depth) in one coordinate plus noise elsewhere
    feats = [np.hstack([np.sqrt(t.depths)[:, None], 0.1 * rng.normal(size=(len(t), 5))])
             for t in trees]
    res = probe_quality(feats[:40], trees[:40], feats[40:], trees[40:], rank=4, steps=300,
                        lr=3e-2)
    assert res.depth > 0.8
    B = fit_probe(feats[:5], trees[:5], rank=2, steps=3)
    assert B.shape == (6, 2)


# ---------------------------------------------------------------- constituents

def test_constituent_consistency():
    t = tree_metrics([2, 0, 4, 2])
    spans = set(t.spans)
    assert constituent_consistency([(0, 0), (2, 3)], [spans, spans]) == 100.0
    # (1, 2) straddles the head and part of a sibling subtree
    assert constituent_consistency([(0, 0), (1, 2)], [spans, spans]) == 50.0
    with pytest.raises(ContractError):
        constituent_consistency([(2, 5)], [spans], passage_lengths=[4])


# ---------------------------------------------------------------- PCA

def test_pca_rotation_preserves_distances():
    rng = np.random.default_rng(6)
    x = rng.normal(size=(10, 2)) * [3.0, 1.0]
    x -= x.mean(axis=0)
    coords, _ = pca_2d(x)
    d0 = np.linalg.norm(x[:, None] - x[None], axis=-1)
    d1 = np.linalg.norm(coords[:, None] - coords[None], axis=-1)
    assert np.max(np.abs(d0 - d1)) < 1e-9


def test_pca_eigen_tail():
    rng = np.random.default_rng(7)
    x = rng.normal(size=(100, 6)) @ rng.normal(size=(6, 6))
    coords, vals = pca_2d(x)
    c = x - x.mean(axis=0)
    # rebuild from the two components and compare the residual with the discarded spectrum
    top = np.linalg.lstsq(coords, c, rcond=None)[0]
    resid = np.sum((c - coords @ top) ** 2) / (len(x) - 1)
    ref = np.sort(np.linalg.eigvalsh(np.cov(x.T)))[::-1]
    assert abs(resid - ref[2:].sum()) < 1e-8
    np.testing.assert_allclose(vals, ref, atol=1e-10)


def test_pca_export_duplicate_languages(tmp_path):
    rng = np.random.default_rng(8)
    pts = rng.normal(size=(5, 4))
    path = tmp_path / "pca.csv"
    coords = pca_export(np.vstack([pts, pts]), list("abcde") * 2, ["l1"] * 5 + ["l2"] * 5, path)
    np.testing.assert_array_equal(coords[:5], coords[5:])
    rows = list(csv.reader(path.open()))
    assert rows[0] == ["label", "lang", "pc1", "pc2"] and len(rows) == 11
    assert rows[1][:2] == ["a", "l1"]
    with pytest.raises(NumericError):
        pca_2d(np.ones((4, 3)))
    with pytest.raises(ContractError):
        pca_2d(np.ones((2, 3)))


def test_pca_sign_convention():
    rng = np.random.default_rng(9)
    x = rng.normal(size=(30, 3))
    a, _ = pca_2d(x)
    b, _ = pca_2d(-x)
    # negating the data flips projections, the sign rule then fixes the basis
    np.testing.assert_allclose(a, -b, atol=1e-12)


# ---------------------------------------------------------------- reports

def test_reports_roundtrip(tmp_path):
    reps = [EvalReport("retrieval", 0.5, 200, {"vector": "y"}), EvalReport("sts", -0.1, 300)]
    write_reports(tmp_path / "r.jsonl", reps)
    assert read_reports(tmp_path / "r.jsonl") == reps
    with pytest.raises(ContractError):
        EvalReport("x", 1.0, 0)
    with pytest.raises(NumericError):
        EvalReport("x", float("nan"), 1)
