import numpy as np
import pytest

from s2dm import tensor as T
from s2dm.encoder import SPECIALS, ToyEncoder, Vocab, pad_batch, warm_start_mlm
from s2dm.errors import ContractError
from s2dm.optim import Adam


@pytest.fixture
def enc():
    return ToyEncoder(vocab_size=30, dim=16, n_blocks=2, max_len=12, seed=3)


def test_output_shape_and_determinism(enc):
    ids = [5, 9, 11, 4]
    a = enc.encode(ids).data
    b = enc.encode(ids).data
    assert a.shape == (4, 16)
    np.testing.assert_array_equal(a, b)


def test_contextual(enc):
    a = enc.encode([7, 8, 9]).data
    b = enc.encode([7, 20, 9]).data
    assert np.max(np.abs(a[0] - b[0])) > 0


def test_swap_is_not_a_pure_permutation(enc):
    ids = np.array([5, 6, 7, 8, 9])
    swapped = ids[[1, 0, 2, 3, 4]]
    a = enc.encode(ids).data
    b = enc.encode(swapped).data
    assert not np.allclose(b[[1, 0, 2, 3, 4]], a)
    # untouched positions still change because attention saw a different order
    assert np.max(np.abs(a[2:] - b[2:])) > 0


def test_batch_matches_single(enc):
    seqs = [[4, 5, 6], [7, 8, 9, 10, 11]]
    ids, mask = pad_batch(seqs)
    out = enc.encode_batch(ids, mask).data
    for i, s in enumerate(seqs):
        np.testing.assert_allclose(out[i, :len(s)], enc.encode(s).data, atol=1e-12)


def test_errors_name_the_problem(enc):
    with pytest.raises(ContractError, match="42"):
        enc.encode([1, 42])
    with pytest.raises(ContractError, match="L_max=12"):
        enc.encode(list(range(4, 17)))


def _train(enc, steps, toggle=None):
    opt = Adam(enc.parameters(), lr=1e-2)
    hashes = []
    for step in range(steps):
        if toggle is not None and step in toggle:
            enc.set_frozen(toggle[step])
        with T.Tape() as tape:
            loss = T.tsum(enc.encode([4, 5, 6, 7]) ** 2.0)
        opt.step(T.backward(loss, tape))
        hashes.append(enc.parameter_hash())
    return hashes


def test_frozen_hash_unchanged(enc):
    before = enc.parameter_hash()
    enc.set_frozen(True)
    assert enc.frozen
    assert set(_train(enc, 10)) == {before}


def test_unfrozen_hash_changes(enc):
    before = enc.parameter_hash()
    assert _train(enc, 1)[0] != before


def test_toggle_respects_latest_setting(enc):
    h0 = enc.parameter_hash()
    hashes = _train(enc, 6, toggle={0: True, 2: False, 4: True})
    assert hashes[0] == hashes[1] == h0
    assert hashes[2] != hashes[1] and hashes[3] != hashes[2]
    assert hashes[4] == hashes[5] == hashes[3]


def test_vocab_roundtrip(tmp_path):
    v = Vocab(["dog", "runs"])
    assert v.tokens[:4] == list(SPECIALS)
    assert v.encode(["runs", "dog"]) == [5, 4]
    v.save(tmp_path / "vocab.txt")
    lines = (tmp_path / "vocab.txt").read_text().splitlines()
    assert lines[v.index["runs"]] == "runs"
    assert Vocab.load(tmp_path / "vocab.txt").tokens == v.tokens
    with pytest.raises(ContractError, match="cat"):
        v.encode(["cat"])


def test_warm_start_lowers_mlm_loss():
    enc = ToyEncoder(vocab_size=12, dim=16, n_blocks=1, max_len=8, seed=0)
    seqs = [[4, 5, 6, 7, 8], [9, 10, 11, 4, 5]] * 8
    losses = warm_start_mlm(enc, seqs, steps=150, lr=1e-2, seed=0, batch_size=16, mask_prob=0.3)
    assert np.mean(losses[-20:]) < np.mean(losses[:20])
