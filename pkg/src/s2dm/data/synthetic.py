"""Toy bilingual corpus with gold syntax.

L1 is subject-verb-object with prepositions; L2 realises the same lemmas
through a bijective dictionary in subject-object-verb order with
postpositions. Dependencies follow UD conventions (DET/ADJ/ADP attach to
their noun, nouns/ADV/PUNCT attach to the verb).
"""
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from ..errors import ConfigError
from .trees import tree_metrics

UPOS_TAGS = ["ADJ", "ADP", "ADV", "AUX", "CCONJ", "DET", "INTJ", "NOUN", "NUM",
             "PART", "PRON", "PROPN", "PUNCT", "SCONJ", "SYM", "VERB", "X"]
UPOS_INDEX = {t: i for i, t in enumerate(UPOS_TAGS)}

_CATEGORY_TAG = {"noun": "NOUN", "verb": "VERB", "adj": "ADJ", "adv": "ADV",
                 "det": "DET", "adp": "ADP", "punct": "PUNCT", "wh": "PRON"}
WH_ROLES = ("agent", "patient", "location")
_L1_SOUNDS = ("bdgklmnprst", "aeiou")
_L2_SOUNDS = ("cfhjqvwxyz", "aeiou")


@dataclass
class SyntheticConfig:
    n_pairs: int = 2000
    n_heldout: int = 200
    n_nouns: int = 40
    n_verbs: int = 16
    n_adjs: int = 12
    n_advs: int = 6
    n_adps: int = 4
    n_dets: int = 2
    p_adj: float = 0.4
    p_pp: float = 0.5
    p_adv: float = 0.3
    two_way_fraction: float = 0.8

    def validate(self):
        need = {"n_nouns": 3, "n_verbs": 4, "n_dets": 1}
        if self.p_pp > 0:
            need["n_adps"] = 1
        if self.p_adj > 0:
            need["n_adjs"] = 1
        if self.p_adv > 0:
            need["n_advs"] = 1
        for key, low in need.items():
            if getattr(self, key) < low:
                raise ConfigError(f"{key}={getattr(self, key)} but the templates need at least {low}")
        for key in ("p_adj", "p_pp", "p_adv", "two_way_fraction"):
            if not 0.0 <= getattr(self, key) <= 1.0:
                raise ConfigError(f"{key} must lie in [0, 1]")
        if self.n_pairs < 1 or self.n_heldout < 0:
            raise ConfigError("corpus sizes must be positive")


class Lexicon:
    """Lemma inventory with one surface form per language."""

    def __init__(self, config, rng):
        self.forms = {"l1": {}, "l2": {}}
        used = set()
        sizes = {"noun": config.n_nouns, "verb": config.n_verbs, "adj": config.n_adjs,
                 "adv": config.n_advs, "det": config.n_dets, "adp": config.n_adps}
        self.lemmas = {cat: [(cat, i) for i in range(n)] for cat, n in sizes.items()}
        self.lemmas["wh"] = [("wh", r) for r in WH_ROLES]
        for cat, items in self.lemmas.items():
            syll = 1 if cat in ("det", "adp", "wh") else 2
            for lemma in items:
                self.forms["l1"][lemma] = self._fresh(rng, _L1_SOUNDS, syll, used)
                self.forms["l2"][lemma] = self._fresh(rng, _L2_SOUNDS, syll, used)
        for punct in (".", "?"):
            lemma = ("punct", punct)
            self.lemmas.setdefault("punct", []).append(lemma)
            self.forms["l1"][lemma] = self.forms["l2"][lemma] = punct

    @staticmethod
    def _fresh(rng, sounds, n_syll, used):
        cons, vows = sounds
        while True:
            form = "".join(cons[rng.integers(len(cons))] + vows[rng.integers(len(vows))]
                           for _ in range(n_syll + int(rng.integers(2))))
            if form not in used:
                used.add(form)
                return form

    def form(self, lemma, lang):
        return self.forms[lang][lemma]

    def words(self, lang):
        return list(dict.fromkeys(self.forms[lang].values()))

    def dictionary(self):
        """L1 form -> L2 form."""
        return {self.forms["l1"][k]: self.forms["l2"][k] for k in self.forms["l1"]}

    @staticmethod
    def tag(lemma):
        return _CATEGORY_TAG[lemma[0]]


@dataclass
class ParallelSentencePair:
    tokens_s: list
    tokens_t: list
    upos_s: list
    upos_t: list
    heads_s: list
    heads_t: list
    alignment: list          # (i, j) 0-based source/target positions
    two_way_only: bool = True
    frame: dict = field(default_factory=dict, repr=False)

    @property
    def template(self):
        return tuple(sorted(k for k in self.frame if "." in k or k == "ADV"))

    def lang(self, which):
        if which == "s":
            return self.tokens_s, self.upos_s, self.heads_s
        return self.tokens_t, self.upos_t, self.heads_t


def sample_frame(lexicon, config, rng, template=None):
    """Pick lemmas for each syntactic slot. ``template`` fixes which optional slots appear."""
    if template is None:
        opts = {"S.adj": rng.random() < config.p_adj, "O.adj": rng.random() < config.p_adj,
                "P": rng.random() < config.p_pp, "ADV": rng.random() < config.p_adv}
        opts["P.adj"] = opts["P"] and rng.random() < config.p_adj
    else:
        keys = set(template)
        opts = {"S.adj": "S.adj" in keys, "O.adj": "O.adj" in keys, "P": "P.n" in keys,
                "P.adj": "P.adj" in keys, "ADV": "ADV" in keys}
    pick = lambda cat: lexicon.lemmas[cat][int(rng.integers(len(lexicon.lemmas[cat])))]
    nouns = rng.choice(len(lexicon.lemmas["noun"]), size=3, replace=False)
    frame = {"V": pick("verb"), "S.det": pick("det"), "S.n": lexicon.lemmas["noun"][nouns[0]],
             "O.det": pick("det"), "O.n": lexicon.lemmas["noun"][nouns[1]],
             "PUNCT": ("punct", ".")}
    if opts["S.adj"]:
        frame["S.adj"] = pick("adj")
    if opts["O.adj"]:
        frame["O.adj"] = pick("adj")
    if opts["P"]:
        frame["P.adp"] = pick("adp")
        frame["P.det"] = pick("det")
        frame["P.n"] = lexicon.lemmas["noun"][nouns[2]]
        if opts["P.adj"]:
            frame["P.adj"] = pick("adj")
    if opts["ADV"]:
        frame["ADV"] = pick("adv")
    return frame


_PARENT = {"S.det": "S.n", "S.adj": "S.n", "O.det": "O.n", "O.adj": "O.n",
           "P.adp": "P.n", "P.det": "P.n", "P.adj": "P.n",
           "S.n": "V", "O.n": "V", "P.n": "V", "ADV": "V", "PUNCT": "V", "V": None}


def _np(prefix):
    return [f"{prefix}.det", f"{prefix}.adj", f"{prefix}.n"]


def linear_order(lang):
    if lang == "l1":
        return _np("S") + ["V"] + _np("O") + ["P.adp"] + _np("P") + ["ADV", "PUNCT"]
    return _np("S") + _np("O") + _np("P") + ["P.adp", "ADV", "V", "PUNCT"]


def realize(frame, lexicon, lang):
    """Surface tokens, tag ids, 1-based heads and slot order for one language."""
    slots = [s for s in linear_order(lang) if s in frame]
    pos = {s: i for i, s in enumerate(slots)}
    tokens = [lexicon.form(frame[s], lang) for s in slots]
    upos = [UPOS_INDEX[Lexicon.tag(frame[s])] for s in slots]
    heads = [0 if _PARENT[s] is None else pos[_PARENT[s]] + 1 for s in slots]
    return tokens, upos, heads, slots


def make_pair(frame, lexicon, two_way_only=True):
    ts, us, hs, slots_s = realize(frame, lexicon, "l1")
    tt, ut, ht, slots_t = realize(frame, lexicon, "l2")
    where_t = {s: j for j, s in enumerate(slots_t)}
    alignment = [(i, where_t[s]) for i, s in enumerate(slots_s)]
    return ParallelSentencePair(ts, tt, us, ut, hs, ht, alignment, two_way_only, frame)


@dataclass
class SyntheticCorpus:
    lexicon: Lexicon
    train: list
    heldout: list
    config: SyntheticConfig

    @property
    def pairs(self):
        return self.train + self.heldout


def generate_synthetic_parallel(config=None, seed=0):
    config = config or SyntheticConfig()
    config.validate()
    rng = np.random.default_rng(seed)
    lexicon = Lexicon(config, rng)
    pairs = []
    for _ in range(config.n_pairs + config.n_heldout):
        frame = sample_frame(lexicon, config, rng)
        pairs.append(make_pair(frame, lexicon, bool(rng.random() < config.two_way_fraction)))
    for p in pairs:
        tree_metrics(p.heads_s)
        tree_metrics(p.heads_t)
    return SyntheticCorpus(lexicon, pairs[:config.n_pairs], pairs[config.n_pairs:], config)


def unigram_counts(pairs, lexicon=None, mapped=False):
    """Token counts of the L2 side, or of the L1 side pushed through the dictionary."""
    counts = Counter()
    table = lexicon.dictionary() if mapped else None
    for p in pairs:
        toks = [table[t] for t in p.tokens_s] if mapped else p.tokens_t
        counts.update(toks)
    return counts


def make_sts_set(corpus, n_per_level, seed):
    """Cross-lingual similarity pairs (L1 sentence, L2 sentence, gold score).

    5.0: translations; 3.0: same template, fresh lemmas; 0.0: unrelated draw.
    """
    rng = np.random.default_rng(seed)
    pool = corpus.heldout or corpus.train
    lex, cfg = corpus.lexicon, corpus.config
    items = []
    for _ in range(n_per_level):
        a = pool[int(rng.integers(len(pool)))]
        items.append((a.tokens_s, a.tokens_t, 5.0))
        b = make_pair(sample_frame(lex, cfg, rng, template=a.template), lex)
        items.append((a.tokens_s, b.tokens_t, 3.0))
        c = make_pair(sample_frame(lex, cfg, rng), lex)
        items.append((a.tokens_s, c.tokens_t, 0.0))
    return items
