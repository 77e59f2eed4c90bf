import numpy as np
import pytest

from sparsekit.data import (CLS, IGNORE_LABEL, MASK, NUM_RESERVED, PAD, SEP,
                            build_synthetic_corpus, make_mlm_batch,
                            make_task_dataset, task_minibatch)
from sparsekit.tensor import ContractError


def test_corpus_split_and_shapes():
    corpus = build_synthetic_corpus(seed=0, num_sequences=100, vocab_size=32, seq_len=20)
    assert len(corpus.train) == 95
    assert len(corpus.validation) == 5
    for seq in corpus.train + corpus.validation:
        assert seq.shape == (20,)
        assert seq.min() >= NUM_RESERVED
        assert seq.max() < 32


def test_corpus_deterministic():
    a = build_synthetic_corpus(seed=3, num_sequences=10, vocab_size=16, seq_len=12)
    b = build_synthetic_corpus(seed=3, num_sequences=10, vocab_size=16, seq_len=12)
    for x, y in zip(a.train, b.train):
        np.testing.assert_array_equal(x, y)
    c = build_synthetic_corpus(seed=4, num_sequences=10, vocab_size=16, seq_len=12)
    assert any(not np.array_equal(x, y) for x, y in zip(a.train, c.train))


def test_corpus_has_structure():
    # an order-2 stream with skewed transitions is far from uniform:
    # the most frequent successor of a frequent bigram dominates
    corpus = build_synthetic_corpus(seed=1, num_sequences=200, vocab_size=16, seq_len=64)
    stream = np.concatenate(corpus.train)
    from collections import Counter
    succ = Counter(zip(stream[:-1], stream[1:], stream[2:]))
    bigrams = Counter(zip(stream[:-1], stream[1:]))
    (top_bigram, count), = bigrams.most_common(1)
    best = max(v for (a, b, c), v in succ.items() if (a, b) == top_bigram)
    assert best / count > 2 / (16 - NUM_RESERVED)


def test_corpus_validation():
    with pytest.raises(ContractError):
        build_synthetic_corpus(seed=0, num_sequences=0)
    with pytest.raises(ContractError):
        build_synthetic_corpus(seed=0, num_sequences=5, grammar="bigram")
    with pytest.raises(ContractError):
        build_synthetic_corpus(seed=0, num_sequences=5, vocab_size=4)


@pytest.fixture(scope="module")
def corpus():
    return build_synthetic_corpus(seed=7, num_sequences=50, vocab_size=32, seq_len=24)


def test_mlm_batch_layout(corpus):
    b = make_mlm_batch(corpus, seed=0, batch=8, seq_len=16)
    assert b.input_ids.shape == (8, 16)
    assert b.labels.shape == (8, 16)
    assert b.attention_mask.shape == (8, 16)
    for i in range(8):
        n = int(b.attention_mask[i].sum())
        assert b.input_ids[i, 0] == CLS
        assert b.input_ids[i, n - 1] == SEP
        assert (b.input_ids[i, n:] == PAD).all()
        # labels only on attended, non-special positions
        labelled = np.flatnonzero(b.labels[i] != IGNORE_LABEL)
        assert all(0 < j < n - 1 for j in labelled)


def test_mlm_masking_rates(corpus):
    total, masked, kept_as_mask, kept_same = 0, 0, 0, 0
    for s in range(40):
        b = make_mlm_batch(corpus, seed=s, batch=16, seq_len=24, short_prob=0.0)
        body = b.labels != IGNORE_LABEL
        total += int((b.attention_mask.sum(axis=1) - 2).sum())
        masked += int(body.sum())
        kept_as_mask += int(((b.input_ids == MASK) & body).sum())
        kept_same += int(((b.input_ids == b.labels) & body).sum())
    assert masked / total == pytest.approx(0.15, abs=0.01)
    assert kept_as_mask / masked == pytest.approx(0.80, abs=0.03)
    assert kept_same / masked == pytest.approx(0.10, abs=0.03)


def test_mlm_short_sequences(corpus):
    lengths = set()
    for s in range(30):
        b = make_mlm_batch(corpus, seed=s, batch=16, seq_len=16, short_prob=1.0)
        lengths.update(b.attention_mask.sum(axis=1).tolist())
    assert min(lengths) >= 4
    assert max(lengths) <= 15


def test_mlm_deterministic(corpus):
    a = make_mlm_batch(corpus, seed=5, batch=4, seq_len=16)
    b = make_mlm_batch(corpus, seed=5, batch=4, seq_len=16)
    np.testing.assert_array_equal(a.input_ids, b.input_ids)
    np.testing.assert_array_equal(a.labels, b.labels)


def test_task_dataset_balance_and_split():
    ds = make_task_dataset(seed=0, num_examples=200, num_labels=4, vocab_size=32, seq_len=12)
    assert ds.train.input_ids.shape == (190, 12)
    assert ds.validation.input_ids.shape == (10, 12)
    all_labels = np.concatenate([ds.train.labels, ds.validation.labels])
    counts = np.bincount(all_labels, minlength=4)
    assert counts.max() - counts.min() <= 1


def test_task_label_is_dominant_group():
    ds = make_task_dataset(seed=1, num_examples=100, num_labels=3, vocab_size=35, seq_len=16)
    regular = np.arange(NUM_RESERVED, 35)
    groups = np.array_split(regular, 3)
    correct = 0
    for row, label in zip(ds.train.input_ids, ds.train.labels):
        body = row[1:-1]
        hits = [np.isin(body, g).sum() for g in groups]
        correct += int(np.argmax(hits) == label)
    assert correct / len(ds.train.labels) > 0.95


def test_task_dataset_validation():
    with pytest.raises(ContractError):
        make_task_dataset(seed=0, num_examples=10, num_labels=1)


def test_task_minibatch():
    ds = make_task_dataset(seed=2, num_examples=100, num_labels=2, vocab_size=16, seq_len=10)
    a = task_minibatch(ds, seed=9, batch=8)
    b = task_minibatch(ds, seed=9, batch=8)
    np.testing.assert_array_equal(a.input_ids, b.input_ids)
    np.testing.assert_array_equal(a.labels, b.labels)
    assert a.input_ids.shape == (8, 10)
