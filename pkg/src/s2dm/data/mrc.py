"""Synthetic extractive-QA examples built from parallel sentences."""
import json
from dataclasses import asdict, dataclass, field

import numpy as np

from ..errors import ConfigError, ContractError
from .synthetic import realize
from .trees import tree_metrics

ROLE_SLOTS = {
    "agent": ("S.det", "S.adj", "S.n"),
    "patient": ("O.det", "O.adj", "O.n"),
    "location": ("P.adp", "P.det", "P.adj", "P.n"),
}


@dataclass
class MrcConfig:
    n_examples: int = 500
    min_sents: int = 2
    max_sents: int = 4
    constituent_fraction: float = 0.9
    max_len: int = 48          # whole model input: CLS question SEP passage SEP

    def validate(self):
        if not 1 <= self.min_sents <= self.max_sents:
            raise ConfigError("need 1 <= min_sents <= max_sents")
        if not 0.0 <= self.constituent_fraction <= 1.0:
            raise ConfigError("constituent_fraction must lie in [0, 1]")


@dataclass
class MrcExample:
    id: str
    question: list
    passage: list
    answer_start: int
    answer_end: int
    lang: str
    sent_heads: list = field(default_factory=list)
    sent_offsets: list = field(default_factory=list)
    role: str = ""

    def __post_init__(self):
        if not 0 <= self.answer_start <= self.answer_end < len(self.passage):
            raise ContractError(f"{self.id}: answer span outside passage")

    def constituents(self):
        spans = set()
        for off, heads in zip(self.sent_offsets, self.sent_heads):
            spans.update((off + s, off + e) for s, e in tree_metrics(heads).spans)
        return spans

    def to_json(self):
        return json.dumps(asdict(self))

    @classmethod
    def from_json(cls, line):
        return cls(**json.loads(line))


def _span(slots, keep):
    idx = [i for i, s in enumerate(slots) if s in keep]
    return min(idx), max(idx)


def make_synthetic_mrc(corpus, seed, config=None):
    """Parallel QA sets: returns ``{"l1": [...], "l2": [...]}`` with shared ids."""
    config = config or MrcConfig()
    config.validate()
    pairs = corpus.pairs
    if not pairs:
        raise ConfigError("MRC construction needs a non-empty corpus")
    lex = corpus.lexicon
    rng = np.random.default_rng(seed)
    budget = config.max_len - 6   # CLS, SEP, SEP and a three-token question
    out = {"l1": [], "l2": []}
    while len(out["l1"]) < config.n_examples:
        k = int(rng.integers(config.min_sents, config.max_sents + 1))
        chosen, verbs, length = [], set(), 0
        for idx in rng.permutation(len(pairs)):
            p = pairs[idx]
            if p.frame["V"] in verbs or length + len(p.tokens_s) > budget:
                continue
            chosen.append(p)
            verbs.add(p.frame["V"])
            length += len(p.tokens_s)
            if len(chosen) == k:
                break
        if len(chosen) < config.min_sents:
            continue
        target = int(rng.integers(len(chosen)))
        frame = chosen[target].frame
        roles = [r for r in ("agent", "patient", "location") if ROLE_SLOTS[r][-1] in frame]
        role = roles[int(rng.integers(len(roles)))]
        keep = [s for s in ROLE_SLOTS[role] if s in frame]
        if rng.random() >= config.constituent_fraction and len(keep) > 1:
            keep = keep[1:]          # drop the leading DET/ADP: no longer a subtree
        ex_id = f"mrc-{len(out['l1']):05d}"
        for lang in ("l1", "l2"):
            passage, heads, offsets = [], [], []
            start = end = None
            for j, p in enumerate(chosen):
                toks, _, hs, slots = realize(p.frame, lex, lang)
                if j == target:
                    s, e = _span(slots, keep)
                    start, end = len(passage) + s, len(passage) + e
                offsets.append(len(passage))
                heads.append(hs)
                passage.extend(toks)
            wh = lex.form(("wh", role), lang)
            verb = lex.form(frame["V"], lang)
            question = [wh, verb, "?"] if lang == "l1" else [verb, wh, "?"]
            out[lang].append(MrcExample(ex_id, question, passage, start, end, lang,
                                        heads, offsets, role))
    return out


def write_mrc(path, examples):
    with open(path, "w", encoding="utf-8") as fh:
        for ex in examples:
            fh.write(ex.to_json() + "\n")


def load_mrc(path):
    with open(path, encoding="utf-8") as fh:
        return [MrcExample.from_json(line) for line in fh if line.strip()]

