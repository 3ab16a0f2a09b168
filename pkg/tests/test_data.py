import itertools
from collections import Counter

import numpy as np
import pytest
from scipy.stats import chi2_contingency

from s2dm.data import (MrcConfig, SyntheticConfig, generate_synthetic_parallel, load_conllu,
                       load_mrc, make_synthetic_mrc, parse_conllu, tree_metrics, write_conllu,
                       write_mrc)
from s2dm.data.conllu import ConllSentence, load_alignments, write_alignments
from s2dm.data.synthetic import UPOS_INDEX, UPOS_TAGS, unigram_counts
from s2dm.errors import ConfigError, ContractError, ParseError


def row(i, form, upos, head):
    return "\t".join([str(i), form, "_", upos, "_", "_", str(head), "_", "_", "_"])


# ---------------------------------------------------------------- trees

def floyd_warshall(heads):
    n = len(heads)
    d = np.full((n, n), np.inf)
    np.fill_diagonal(d, 0)
    for i, h in enumerate(heads):
        if h:
            d[i, h - 1] = d[h - 1, i] = 1
    for k, i, j in itertools.product(range(n), repeat=3):
        d[i, j] = min(d[i, j], d[i, k] + d[k, j])
    return d


def test_chain_and_star():
    t = tree_metrics([0, 1, 2])
    assert list(t.depths) == [0, 1, 2] and t.distances[0, 2] == 2
    star = tree_metrics([0, 1, 1, 1])
    assert list(star.depths[1:]) == [1, 1, 1]
    assert star.distances[1, 2] == star.distances[2, 3] == 2


@pytest.mark.parametrize("seed", range(5))
def test_random_tree_matches_floyd_warshall(seed):
    rng = np.random.default_rng(seed)
    order = rng.permutation(7)
    heads = [0] * 7
    for k in range(1, 7):
        heads[order[k]] = int(order[rng.integers(k)]) + 1
    t = tree_metrics(heads)
    np.testing.assert_array_equal(t.distances, floyd_warshall(heads))
    assert t.depths[t.root] == 0
    d = t.distances
    assert np.all(d == d.T) and np.all(np.diag(d) == 0)
    for i, j in itertools.combinations(range(7), 2):
        assert d[i, j] <= t.depths[i] + t.depths[j]
    for s, e in t.spans:
        assert s <= e


def test_spans_are_contiguous_subtrees():
    # tokens 1 and 3 hang off 2, which hangs off the root 4 together with 5
    t = tree_metrics([2, 4, 2, 0, 4])
    assert (0, 2) in t.spans and (0, 4) in t.spans
    # straddling sibling subtrees is not a constituent
    assert not t.is_constituent(2, 3)


@pytest.mark.parametrize("heads", [[0, 0], [2, 1], [1], [0, 5], []])
def test_bad_trees(heads):
    with pytest.raises(ContractError):
        tree_metrics(heads)


# ---------------------------------------------------------------- CoNLL-U

def test_two_token_sentence():
    [s] = parse_conllu([row(1, "dog", "NOUN", 2), row(2, "runs", "VERB", 0), ""])
    assert s.heads == [2, 0]
    assert list(tree_metrics(s.heads).depths) == [1, 0]


def test_empty_file(tmp_path):
    p = tmp_path / "empty.conllu"
    p.write_text("")
    assert load_conllu(p) == []


def test_multiword_range_skipped():
    lines = ["# sent_id = a", row(1, "we", "PRON", 2), row(2, "saw", "VERB", 0),
             "3-4\tdel\t_\t_\t_\t_\t_\t_\t_\t_", row(3, "de", "ADP", 4), row(4, "el", "DET", 2),
             "", ]
    [s] = parse_conllu(lines)
    assert s.tokens == ["we", "saw", "de", "el"]
    assert s.heads == [2, 0, 4, 2]
    assert s.meta == {"sent_id": "a"}
    tree_metrics(s.heads)


@pytest.mark.parametrize("bad, line, match", [
    (row(2, "x", "X", "two"), 3, "HEAD"),
    ("2\tx\t_\tX", 3, "10"),
    (row(2, "x", "X", 0), 2, "roots"),
])
def test_malformed_lines_report_line_number(tmp_path, bad, line, match):
    p = tmp_path / "bad.conllu"
    p.write_text("# c\n" + row(1, "a", "NOUN", 0) + "\n" + bad + "\n\n")
    with pytest.raises(ParseError, match=match) as err:
        load_conllu(p)
    assert err.value.line == line
    assert f"line {line}:" in str(err.value)


def test_conllu_roundtrip(tmp_path):
    corpus = generate_synthetic_parallel(SyntheticConfig(n_pairs=30, n_heldout=0), seed=4)
    sents = [ConllSentence(p.tokens_t, [UPOS_TAGS[u] for u in p.upos_t], p.heads_t,
                           {"sent_id": str(i)})
             for i, p in enumerate(corpus.train)]
    path = tmp_path / "c.conllu"
    write_conllu(path, sents)
    back = load_conllu(path)
    assert [(s.tokens, s.upos, s.heads, s.meta) for s in back] == \
        [(s.tokens, s.upos, s.heads, s.meta) for s in sents]


def test_alignment_roundtrip(tmp_path):
    path = tmp_path / "a.align"
    write_alignments(path, [[(0, 1), (1, 0)], [(0, 0)]])
    assert load_alignments(path) == [[(0, 1), (1, 0)], [(0, 0)]]
    path.write_text("0-1 x\n")
    with pytest.raises(ParseError):
        load_alignments(path)


# ---------------------------------------------------------------- synthetic corpus

@pytest.fixture(scope="module")
def corpus():
    return generate_synthetic_parallel(SyntheticConfig(n_pairs=2500, n_heldout=2500), seed=0)


def test_corpus_is_deterministic(tmp_path):
    cfg = SyntheticConfig(n_pairs=50, n_heldout=5)
    a = generate_synthetic_parallel(cfg, seed=7)
    b = generate_synthetic_parallel(cfg, seed=7)
    fa, fb = tmp_path / "a.conllu", tmp_path / "b.conllu"
    for corp, f in ((a, fa), (b, fb)):
        write_conllu(f, [ConllSentence(p.tokens_s, [UPOS_TAGS[u] for u in p.upos_s], p.heads_s)
                         for p in corp.pairs])
    assert fa.read_bytes() == fb.read_bytes()


def test_pair_invariants(corpus):
    table = corpus.lexicon.dictionary()
    for p in corpus.pairs[:500]:
        tree_metrics(p.heads_s)
        tree_metrics(p.heads_t)
        assert len(p.tokens_s) == len(p.upos_s) == len(p.heads_s)
        assert Counter(table[t] for t in p.tokens_s) == Counter(p.tokens_t)
        src, tgt = zip(*p.alignment)
        assert sorted(src) == list(range(len(p.tokens_s)))
        assert sorted(tgt) == list(range(len(p.tokens_t)))
        for i, j in p.alignment:
            assert table[p.tokens_s[i]] == p.tokens_t[j]


def test_word_orders(corpus):
    p = next(p for p in corpus.train if "P.n" in p.frame)
    verb, adp = UPOS_INDEX["VERB"], UPOS_INDEX["ADP"]
    verb_s = p.upos_s.index(verb)
    verb_t = p.upos_t.index(verb)
    assert verb_t == len(p.tokens_t) - 2          # verb final before the full stop
    assert verb_s < len(p.tokens_s) - 2
    # preposition before its noun in L1, postposition after it in L2
    adp_s, adp_t = p.upos_s.index(adp), p.upos_t.index(adp)
    assert p.heads_s[adp_s] - 1 > adp_s
    assert p.heads_t[adp_t] - 1 < adp_t


def test_unigram_distributions_agree(corpus):
    # L1 of one half, mapped through the dictionary, against L2 of the other half
    half_a = unigram_counts(corpus.train, corpus.lexicon, mapped=True)
    half_b = unigram_counts(corpus.heldout)
    words = sorted(set(half_a) | set(half_b))
    table = np.array([[half_a[w] for w in words], [half_b[w] for w in words]])
    table = table[:, table.min(axis=0) >= 5]
    _, p, _, _ = chi2_contingency(table)
    assert p > 0.01


def test_two_way_fraction(corpus):
    frac = np.mean([p.two_way_only for p in corpus.pairs])
    assert abs(frac - 0.8) < 0.03


def test_bad_config():
    with pytest.raises(ConfigError):
        generate_synthetic_parallel(SyntheticConfig(n_verbs=1))
    with pytest.raises(ConfigError):
        generate_synthetic_parallel(SyntheticConfig(p_adj=1.5))


# ---------------------------------------------------------------- MRC

def test_mrc_gold_spans_are_constituents(corpus):
    sets = make_synthetic_mrc(corpus, seed=1, config=MrcConfig(n_examples=200,
                                                               constituent_fraction=1.0))
    for lang in ("l1", "l2"):
        for ex in sets[lang]:
            assert (ex.answer_start, ex.answer_end) in ex.constituents()


def test_mrc_fraction_and_structure(corpus):
    sets = make_synthetic_mrc(corpus, seed=2, config=MrcConfig(n_examples=400))
    l1, l2 = sets["l1"], sets["l2"]
    assert [e.id for e in l1] == [e.id for e in l2]
    hit = np.mean([(e.answer_start, e.answer_end) in e.constituents() for e in l1])
    assert 0.85 <= hit <= 0.95
    for e in l1 + l2:
        assert 2 <= len(e.sent_offsets) <= 4
        assert len(e.question) + len(e.passage) + 3 <= 48
    # longest role span is a location phrase: ADP DET ADJ NOUN
    lengths = Counter(e.answer_end - e.answer_start + 1 for e in l1)
    assert max(lengths) <= 4 and min(lengths) >= 1


def test_mrc_determinism_and_io(corpus, tmp_path):
    a = make_synthetic_mrc(corpus, seed=3, config=MrcConfig(n_examples=20))
    b = make_synthetic_mrc(corpus, seed=3, config=MrcConfig(n_examples=20))
    assert [x.to_json() for x in a["l2"]] == [x.to_json() for x in b["l2"]]
    path = tmp_path / "mrc.jsonl"
    write_mrc(path, a["l1"])
    assert [x.to_json() for x in load_mrc(path)] == [x.to_json() for x in a["l1"]]


def test_mrc_config_errors(corpus):
    with pytest.raises(ConfigError):
        make_synthetic_mrc(corpus, 0, MrcConfig(min_sents=3, max_sents=2))
    with pytest.raises(ConfigError):
        make_synthetic_mrc(corpus, 0, MrcConfig(constituent_fraction=1.2))
