"""Two-stage training and evaluation, shared by the CLI and the experiments."""
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import tensor as T
from .data.conllu import ConllSentence, load_alignments, load_conllu, write_alignments, write_conllu
from .data.mrc import MrcConfig, make_synthetic_mrc
from .data.synthetic import (UPOS_INDEX, UPOS_TAGS, ParallelSentencePair, SyntheticConfig,
                             generate_synthetic_parallel, make_sts_set)
from .data.trees import tree_metrics
from .disentangler import (DisentanglerConfig, PairBatch, SideBatch, SiameseDisentangler,
                           total_loss)
from .encoder import CLS, SEP, ToyEncoder, Vocab, pad_batch, warm_start_mlm
from .errors import ContractError, NumericError
from .evaluation import probe_quality, retrieval_accuracy, sts_pearson, constituent_consistency
from .mrc_head import SpanHead, loss_span, mean_em_f1, predict_span, semantic_features
from .optim import Adam


@dataclass
class Sentence:
    ids: list
    upos: list
    depth: np.ndarray
    dist: np.ndarray
    e: np.ndarray = None


@dataclass
class PairItem:
    s: Sentence
    t: Sentence
    two_way: bool


def build_corpus(cfg):
    syn = SyntheticConfig(n_pairs=cfg.n_pairs, n_heldout=cfg.n_heldout,
                          two_way_fraction=cfg.two_way_fraction)
    return generate_synthetic_parallel(syn, seed=cfg.seed)


def build_encoder(cfg, vocab, corpus=None):
    """Fresh encoder, optionally warm-started with masked-token training on both languages."""
    enc = ToyEncoder(len(vocab), dim=cfg.enc_dim, n_blocks=cfg.enc_blocks, max_len=cfg.max_len,
                     seed=cfg.seed + 1)
    if cfg.warm_start_steps > 0 and corpus is not None:
        seqs = [vocab.encode(toks) for p in corpus.train for toks in (p.tokens_s, p.tokens_t)]
        warm_start_mlm(enc, seqs, cfg.warm_start_steps, cfg.warm_start_lr, seed=cfg.seed + 3)
    return enc


def build_disentangler(cfg, vocab_size):
    dc = DisentanglerConfig(in_dim=cfg.enc_dim, vocab_size=vocab_size, latent_dim=cfg.latent_dim,
                            hidden=cfg.hidden, max_len=cfg.max_len, probe_rank=cfg.probe_rank,
                            delta=cfg.delta, variant=cfg.variant, siamese=cfg.siamese,
                            z_mode=cfg.z_mode, fixed_kappa=cfg.fixed_kappa)
    return SiameseDisentangler(dc, seed=cfg.seed + 2)


def _sentence(vocab, tokens, upos, heads):
    tree = tree_metrics(heads)
    return Sentence(vocab.encode(tokens), list(upos), tree.depths, tree.distances)


def prepare_pairs(pairs, vocab):
    return [PairItem(_sentence(vocab, p.tokens_s, p.upos_s, p.heads_s),
                     _sentence(vocab, p.tokens_t, p.upos_t, p.heads_t), p.two_way_only)
            for p in pairs]


def encode_sentences(encoder, sentences, batch_size=128):
    """Fill ``Sentence.e`` with encoder outputs (no gradient tracking)."""
    for k in range(0, len(sentences), batch_size):
        chunk = sentences[k:k + batch_size]
        ids, mask = pad_batch([s.ids for s in chunk])
        out = encoder.encode_batch(ids, mask).data
        for s, row, n in zip(chunk, out, mask.sum(axis=1).astype(int)):
            s.e = row[:n].copy()


def side_batch(sentences, vocab_size):
    B = len(sentences)
    L = max(len(s.ids) for s in sentences)
    E = sentences[0].e.shape[1]
    e = np.zeros((B, L, E))
    mask = np.zeros((B, L))
    bow = np.zeros((B, vocab_size))
    upos = np.full((B, L), -1, dtype=np.int64)
    depth = np.zeros((B, L))
    dist = np.zeros((B, L, L))
    for b, s in enumerate(sentences):
        n = len(s.ids)
        e[b, :n] = s.e
        mask[b, :n] = 1.0
        np.add.at(bow[b], s.ids, 1.0)
        if s.depth is not None:       # STS sentences carry no annotation
            upos[b, :n] = s.upos
            depth[b, :n] = s.depth
            dist[b, :n, :n] = s.dist
    return SideBatch(T.Tensor(e), mask, bow, upos, depth, dist)


def pair_batch(items, vocab_size):
    return PairBatch(side_batch([it.s for it in items], vocab_size),
                     side_batch([it.t for it in items], vocab_size),
                     np.array([it.two_way for it in items], dtype=bool))


def train_stage1(cfg, model, items, vocab_size, log=None, on_step=None):
    """Fit the disentangler on parallel pairs with the encoder outputs fixed.

    ``log`` receives one dict per step: {step, total, rl, kl, crl, sdl, wpl, pos, stl}.
    """
    enabled = cfg.enabled_losses()
    rng = np.random.default_rng(cfg.seed + 10)
    opt = Adam(model.parameters(), cfg.lr_stage1)
    history = []
    order = rng.permutation(len(items))
    cursor = 0
    bs = min(cfg.batch_stage1, len(items))
    for step in range(cfg.steps_stage1):
        if cursor + bs > len(order):
            order = rng.permutation(len(items))
            cursor = 0
        batch = pair_batch([items[i] for i in order[cursor:cursor + bs]], vocab_size)
        cursor += bs
        try:
            with T.Tape() as tape:
                total, report, _ = total_loss(model, batch, enabled, rng=rng)
                objective = total / float(bs)
            grads = T.backward(objective, tape)
        except NumericError as err:
            raise NumericError(f"stage 1 step {step}: {err}") from err
        if not math.isfinite(report["total"]):
            raise NumericError(f"stage 1 step {step}: non-finite loss")
        opt.step(grads)
        row = {"step": step, **{k: report[k] for k in
                                ("total", "rl", "kl", "crl", "sdl", "wpl", "pos", "stl")}}
        history.append(row)
        if log is not None:
            log.write(json.dumps(row) + "\n")
        if on_step is not None:
            on_step(step, model)
    return history


# ---------------------------------------------------------------------------- corpus files

def write_corpus(corpus, data_dir):
    """CoNLL-U per side and split, alignment sidecars, and the vocabulary."""
    data_dir = Path(data_dir)
    data_dir.mkdir(parents=True, exist_ok=True)
    for split, pairs in (("train", corpus.train), ("heldout", corpus.heldout)):
        for side, lang in (("s", "l1"), ("t", "l2")):
            sents = []
            for k, p in enumerate(pairs):
                toks, upos, heads = p.lang(side)
                meta = {"sent_id": f"{split}-{k:05d}", "two_way_only": int(p.two_way_only)}
                sents.append(ConllSentence(list(toks), [UPOS_TAGS[u] for u in upos],
                                           list(heads), meta))
            write_conllu(data_dir / f"{split}.{lang}.conllu", sents)
        write_alignments(data_dir / f"{split}.align", [p.alignment for p in pairs])


def read_pairs(data_dir, split):
    data_dir = Path(data_dir)
    src = load_conllu(data_dir / f"{split}.l1.conllu")
    tgt = load_conllu(data_dir / f"{split}.l2.conllu")
    align = load_alignments(data_dir / f"{split}.align")
    if not len(src) == len(tgt) == len(align):
        raise ContractError(f"{split}: side files disagree on sentence count")
    pairs = []
    for a, b, al in zip(src, tgt, align):
        pairs.append(ParallelSentencePair(
            a.tokens, b.tokens, [UPOS_INDEX[u] for u in a.upos], [UPOS_INDEX[u] for u in b.upos],
            a.heads, b.heads, al, bool(int(a.meta.get("two_way_only", 1)))))
    return pairs


def write_sts(path, items):
    with open(path, "w", encoding="utf-8") as fh:
        for a, b, g in items:
            fh.write(json.dumps({"l1": list(a), "l2": list(b), "gold": g}) + "\n")


def read_sts(path):
    with open(path, encoding="utf-8") as fh:
        rows = [json.loads(line) for line in fh if line.strip()]
    return [(r["l1"], r["l2"], r["gold"]) for r in rows]


# ---------------------------------------------------------------------------- latent features

def token_latents(model, sentences):
    """Per-token (mu_alpha, mu_beta) arrays for sentences with cached encoder output."""
    ys, zs = [], []
    for k in range(0, len(sentences), 128):
        chunk = sentences[k:k + 128]
        sb = side_batch(chunk, model.config.vocab_size)
        mu_a = model.semantic_params(sb.e, sb.mask).mu.data
        mu_b = model.syntactic_params(sb.e).mu.data
        for b, s in enumerate(chunk):
            n = len(s.ids)
            ys.append(mu_a[b, :n])
            zs.append(mu_b[b, :n])
    return ys, zs


def pooled_latents(model, sentences):
    ys, zs = token_latents(model, sentences)
    return np.stack([y.mean(axis=0) for y in ys]), np.stack([z.mean(axis=0) for z in zs])


def disentanglement_metrics(cfg, model, fit_items, eval_items, sts_sents):
    """Retrieval, probe and STS numbers for y and z. Returns {name: value}."""
    hs, ht = [it.s for it in eval_items], [it.t for it in eval_items]
    ys_s, zs_s = pooled_latents(model, hs)
    ys_t, zs_t = pooled_latents(model, ht)
    out = {"retrieval_y": retrieval_accuracy(ys_s, ys_t),
           "retrieval_z": retrieval_accuracy(zs_s, zs_t)}
    fit = [it.s for it in fit_items] + [it.t for it in fit_items]
    fy, fz = token_latents(model, fit)
    ey, ez = token_latents(model, hs + ht)
    fit_trees = [_SentTree(s) for s in fit]
    eval_trees = [_SentTree(s) for s in hs + ht]
    for name, f, e in (("y", fy, ey), ("z", fz, ez)):
        res = probe_quality(f, fit_trees, e, eval_trees, rank=cfg.probe_rank,
                            steps=cfg.probe_steps, lr=cfg.probe_lr, seed=cfg.seed + 20)
        out[f"probe_depth_{name}"] = res.depth
        out[f"probe_distance_{name}"] = res.distance
    if sts_sents:
        a, b, gold = sts_sents
        ya, za = pooled_latents(model, a)
        yb, zb = pooled_latents(model, b)
        out["sts_y"] = sts_pearson(ya, yb, gold)
        out["sts_z"] = sts_pearson(za, zb, gold)
    return out


class _SentTree:
    def __init__(self, s):
        self.depths, self.distances, self._n = s.depth, s.dist, len(s.ids)

    def __len__(self):
        return self._n


def sts_sentences(encoder, vocab, items):
    a = [Sentence(vocab.encode(x[0]), [], None, None) for x in items]
    b = [Sentence(vocab.encode(x[1]), [], None, None) for x in items]
    encode_sentences(encoder, a + b)
    return a, b, [x[2] for x in items]


# ---------------------------------------------------------------------------- stage 2

@dataclass
class MrcItem:
    id: str
    ids: list
    offset: int          # index of the first passage token in ``ids``
    n_passage: int
    start: int           # gold, passage-relative
    end: int
    lang: str


class MrcData:
    """MRC examples per language with an access counter, so stage 2 can prove it
    never looked at the zero-shot language."""

    def __init__(self, by_lang, vocab):
        self._items = {lang: [mrc_item(ex, vocab) for ex in exs] for lang, exs in by_lang.items()}
        self.examples = by_lang
        self.access = {lang: 0 for lang in by_lang}

    def take(self, lang):
        self.access[lang] += 1
        return self._items[lang]


def mrc_item(ex, vocab):
    ids = vocab.encode([CLS] + list(ex.question) + [SEP] + list(ex.passage) + [SEP])
    return MrcItem(ex.id, ids, len(ex.question) + 2, len(ex.passage), ex.answer_start,
                   ex.answer_end, ex.lang)


def _mrc_batch(items):
    ids, mask = pad_batch([it.ids for it in items])
    pmask = np.zeros_like(mask)
    for b, it in enumerate(items):
        pmask[b, it.offset:it.offset + it.n_passage] = 1.0
    return ids, mask, pmask


class SpanModel:
    """Encoder -> (frozen disentangler semantic means | identity) -> linear span head."""

    def __init__(self, encoder, head, disentangler=None):
        self.encoder, self.head, self.disentangler = encoder, head, disentangler

    @property
    def kind(self):
        return "baseline" if self.disentangler is None else "s2dm"

    def logits(self, ids, mask):
        e = self.encoder.encode_batch(ids, mask)
        feats = e if self.disentangler is None else semantic_features(self.disentangler, e, mask)
        return self.head(feats)


def build_span_model(cfg, encoder, disentangler=None):
    dim = encoder.dim if disentangler is None else disentangler.config.latent_dim
    return SpanModel(encoder, SpanHead(dim, seed=cfg.seed + 30), disentangler)


def train_stage2(cfg, span_model, data, log=None):
    """Fine-tune head (and encoder unless frozen) on L1 MRC examples only."""
    dis = span_model.disentangler
    if dis is not None:
        dis.set_frozen(True)
        frozen_hash = dis.parameter_hash()
    span_model.encoder.set_frozen(cfg.freeze_encoder_stage2)
    params = span_model.head.parameters()
    if not cfg.freeze_encoder_stage2:
        params = params + span_model.encoder.parameters()
    opt = Adam(params, cfg.lr_stage2)
    rng = np.random.default_rng(cfg.seed + 31)
    items = data.take("l1")
    history = []
    step = 0
    for epoch in range(cfg.epochs_stage2):
        order = rng.permutation(len(items))
        for k in range(0, len(order), cfg.batch_stage2):
            batch = [items[i] for i in order[k:k + cfg.batch_stage2]]
            ids, mask, pmask = _mrc_batch(batch)
            gs = [it.offset + it.start for it in batch]
            ge = [it.offset + it.end for it in batch]
            try:
                with T.Tape() as tape:
                    loss = loss_span(span_model.logits(ids, mask), gs, ge, pmask)
                grads = T.backward(loss, tape)
            except NumericError as err:
                raise NumericError(f"stage 2 step {step}: {err}") from err
            opt.step(grads)
            row = {"model": span_model.kind, "epoch": epoch, "step": step, "loss": loss.item()}
            history.append(row)
            if log is not None:
                log.write(json.dumps(row) + "\n")
            step += 1
        if dis is not None and dis.parameter_hash() != frozen_hash:
            raise ContractError(f"disentangler parameters changed during stage 2 epoch {epoch}")
    span_model.encoder.set_frozen(True)
    return history


def predict_spans(span_model, items, max_answer_len=10, batch_size=64):
    preds = []
    for k in range(0, len(items), batch_size):
        batch = items[k:k + batch_size]
        ids, mask, pmask = _mrc_batch(batch)
        logits = span_model.logits(ids, mask).data
        for b in range(len(batch)):
            preds.append(predict_span(logits[b, :, 0], logits[b, :, 1], pmask[b], max_answer_len))
    return preds


def mrc_metrics(span_model, data, lang, max_answer_len=10):
    items = data.take(lang)
    preds = predict_spans(span_model, items, max_answer_len)
    em, f1 = mean_em_f1(preds, [(it.start, it.end) for it in items])
    exs = data.examples[lang]
    cons = constituent_consistency([(p.start, p.end) for p in preds],
                                   [ex.constituents() for ex in exs],
                                   [len(ex.passage) for ex in exs])
    return {"em": em, "f1": f1, "constituent_consistency": cons}, preds


# ---------------------------------------------------------------------------- whole runs

@dataclass
class Stage1Result:
    corpus: object
    vocab: Vocab
    encoder: ToyEncoder
    model: SiameseDisentangler
    train: list
    heldout: list
    history: list


def run_stage1(cfg, corpus=None, log=None):
    """Corpus -> frozen encoder outputs -> trained disentangler, all in memory."""
    corpus = corpus or build_corpus(cfg)
    vocab = Vocab.from_lexicon(corpus.lexicon)
    encoder = build_encoder(cfg, vocab, corpus)
    encoder.set_frozen(True)
    enc_hash = encoder.parameter_hash()
    train = prepare_pairs(corpus.train, vocab)
    heldout = prepare_pairs(corpus.heldout, vocab)
    encode_sentences(encoder, [x for it in train + heldout for x in (it.s, it.t)])
    model = build_disentangler(cfg, len(vocab))
    history = train_stage1(cfg, model, train, len(vocab), log=log)
    if encoder.parameter_hash() != enc_hash:
        raise ContractError("encoder changed during stage 1")
    return Stage1Result(corpus, vocab, encoder, model, train, heldout, history)


def stage1_metrics(cfg, res):
    sts = make_sts_set(res.corpus, cfg.n_sts, cfg.seed + 5) if cfg.n_sts else None
    sts_sents = sts_sentences(res.encoder, res.vocab, sts) if sts else None
    return disentanglement_metrics(cfg, res.model, res.train[:cfg.probe_fit_pairs], res.heldout,
                                   sts_sents)


def run_transfer(cfg, res, mrc=None, log=None):
    """Stage 2 for S2DM and the baseline on identical data and budget; zero-shot L2 metrics."""
    mrc = mrc or make_synthetic_mrc(res.corpus, cfg.seed + 7, MrcConfig(
        n_examples=cfg.n_mrc, constituent_fraction=cfg.constituent_fraction, max_len=cfg.max_len))
    out = {}
    models = {}
    for kind in ("s2dm", "baseline"):
        encoder = build_encoder(cfg, res.vocab)
        encoder.load_state_dict(res.encoder.state_dict())
        sm = build_span_model(cfg, encoder, res.model if kind == "s2dm" else None)
        data = MrcData(mrc, res.vocab)
        train_stage2(cfg, sm, data, log=log)
        if data.access["l2"]:
            raise ContractError("stage 2 touched target-language examples")
        l1, _ = mrc_metrics(sm, data, "l1", cfg.max_answer_len)
        l2, preds = mrc_metrics(sm, data, "l2", cfg.max_answer_len)
        out[kind] = {"l1": l1, "l2": l2, "predictions": preds}
        models[kind] = sm
    return out, models, mrc


ABLATION_REMOVABLE = ("rl", "kl", "crl", "sdl", "wpl", "pos", "stl")


def ablation_cells(cfg):
    """(name, config) cells: full model, each loss removed, and single-network mode."""
    full = sorted(cfg.enabled_losses())
    cells = [("full", cfg.override(losses=full))]
    for name in ABLATION_REMOVABLE:
        if name in full:
            cells.append((f"-{name}", cfg.override(losses=[x for x in full if x != name])))
    cells.append(("single", cfg.override(siamese=False,
                                         losses=[x for x in full if x not in ("crl", "sdl")])))
    return cells
