"""Small transformer standing in for the frozen multilingual PLM."""
import numpy as np

from . import tensor as T
from .errors import ContractError
from .nn import Module, glorot, linear
from .optim import Adam

PAD, CLS, SEP, MASK = "[PAD]", "[CLS]", "[SEP]", "[MASK]"
SPECIALS = (PAD, CLS, SEP, MASK)


class Vocab:
    def __init__(self, tokens):
        tokens = list(tokens)
        if tokens[:len(SPECIALS)] != list(SPECIALS):
            tokens = list(SPECIALS) + [t for t in tokens if t not in SPECIALS]
        self.tokens = tokens
        self.index = {t: i for i, t in enumerate(tokens)}
        if len(self.index) != len(tokens):
            raise ContractError("duplicate token in vocabulary")

    def __len__(self):
        return len(self.tokens)

    def encode(self, words):
        try:
            return [self.index[w] for w in words]
        except KeyError as err:
            raise ContractError(f"word {err.args[0]!r} not in vocabulary") from None

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("\n".join(self.tokens) + "\n")

    @classmethod
    def load(cls, path):
        with open(path, encoding="utf-8") as fh:
            return cls([line.rstrip("\n") for line in fh if line.rstrip("\n")])

    @classmethod
    def from_lexicon(cls, lexicon):
        return cls(list(SPECIALS) + lexicon.words("l1") + [w for w in lexicon.words("l2")
                                                           if w not in lexicon.words("l1")])


def layer_norm(x, eps=1e-5):
    mu = T.mean(x, axis=-1, keepdims=True)
    c = x - mu
    var = T.mean(c * c, axis=-1, keepdims=True)
    return c / T.sqrt(var + eps)


def pad_batch(seqs):
    """Right-pad id sequences with PAD (id 0). Returns (ids, mask)."""
    n = max(len(s) for s in seqs)
    ids = np.zeros((len(seqs), n), dtype=np.int64)
    mask = np.zeros((len(seqs), n))
    for i, s in enumerate(seqs):
        ids[i, :len(s)] = s
        mask[i, :len(s)] = 1.0
    return ids, mask


class ToyEncoder(Module):
    """Token + position embeddings, then single-head pre-norm attention blocks."""

    def __init__(self, vocab_size, dim=64, n_blocks=2, max_len=48, seed=0):
        super().__init__()
        self.vocab_size, self.dim, self.n_blocks, self.max_len = vocab_size, dim, n_blocks, max_len
        rng = np.random.default_rng(seed)
        self.add_param("tok_emb", rng.normal(0.0, 1.0, (vocab_size, dim)))
        self.add_param("pos_emb", rng.normal(0.0, 0.3, (max_len, dim)))
        for b in range(n_blocks):
            for name in ("wq", "wk", "wv", "wo"):
                self.add_param(f"b{b}.{name}", glorot(rng, dim, dim))
            self.add_param(f"b{b}.ff1", glorot(rng, dim, 2 * dim))
            self.add_param(f"b{b}.ff1_b", np.zeros(2 * dim))
            self.add_param(f"b{b}.ff2", glorot(rng, 2 * dim, dim))
            self.add_param(f"b{b}.ff2_b", np.zeros(dim))

    def _check(self, ids):
        ids = np.asarray(ids)
        if ids.size and (ids.min() < 0 or ids.max() >= self.vocab_size):
            bad = ids[(ids < 0) | (ids >= self.vocab_size)][0]
            raise ContractError(f"token id {int(bad)} outside vocabulary of size {self.vocab_size}")
        if ids.shape[-1] > self.max_len:
            raise ContractError(f"sequence length {ids.shape[-1]} exceeds L_max={self.max_len}")
        return ids

    def encode_batch(self, ids, mask):
        """(B, L) ids and 0/1 mask -> (B, L, dim) contextual vectors."""
        ids = self._check(ids)
        p = self.params
        L = ids.shape[1]
        x = T.embedding(p["tok_emb"], ids) + p["pos_emb"][:L]
        key_bias = (1.0 - np.asarray(mask, dtype=np.float64))[:, None, :] * -1e9
        scale = 1.0 / np.sqrt(self.dim)
        for b in range(self.n_blocks):
            h = layer_norm(x)
            q = T.matmul(h, p[f"b{b}.wq"])
            k = T.matmul(h, p[f"b{b}.wk"])
            v = T.matmul(h, p[f"b{b}.wv"])
            att = T.softmax(T.matmul(q, T.swapaxes(k, -1, -2)) * scale + key_bias, axis=-1)
            x = x + T.matmul(T.matmul(att, v), p[f"b{b}.wo"])
            h = layer_norm(x)
            ff = T.tanh(linear(h, p[f"b{b}.ff1"], p[f"b{b}.ff1_b"]))
            x = x + linear(ff, p[f"b{b}.ff2"], p[f"b{b}.ff2_b"])
        return layer_norm(x)

    def encode(self, token_ids):
        """One sentence -> (n, dim) Tensor."""
        ids = self._check(np.asarray(token_ids, dtype=np.int64)[None, :])
        return self.encode_batch(ids, np.ones(ids.shape))[0]

    def mlm_logits(self, hidden):
        return T.matmul(hidden, T.transpose(self.params["tok_emb"]))


def warm_start_mlm(encoder, sequences, steps, lr, seed, batch_size=32, mask_prob=0.15):
    """Brief masked-token pretraining so the encoder has some learned structure."""
    rng = np.random.default_rng(seed)
    opt = Adam(encoder.parameters(), lr)
    mask_id = SPECIALS.index(MASK)
    losses = []
    for _ in range(steps):
        pick = rng.choice(len(sequences), size=min(batch_size, len(sequences)), replace=False)
        ids, mask = pad_batch([sequences[i] for i in pick])
        hide = (rng.random(ids.shape) < mask_prob) & (mask > 0)
        if not hide.any():
            continue
        inp = np.where(hide, mask_id, ids)
        with T.Tape() as tape:
            logits = encoder.mlm_logits(encoder.encode_batch(inp, mask))
            lp = T.log_softmax(logits, axis=-1)
            b, l = np.nonzero(hide)
            loss = -T.mean(lp[b, l, ids[b, l]])
        grads = T.backward(loss, tape)
        opt.step(grads)
        losses.append(loss.item())
    return losses
