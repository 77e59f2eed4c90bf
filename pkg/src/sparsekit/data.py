"""Deterministic synthetic corpus, MLM masking, and a toy classification task."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import List

import numpy as np

from .tensor import ContractError

PAD, MASK, UNK, CLS, SEP = 0, 1, 2, 3, 4
NUM_RESERVED = 5
IGNORE_LABEL = -1


@dataclass(frozen=True)
class Vocab:
    size: int

    def __post_init__(self):
        if self.size < 8:
            raise ContractError("vocab size must be >= 8")

    @property
    def regular_ids(self) -> np.ndarray:
        return np.arange(NUM_RESERVED, self.size)


def _rng(*key) -> np.random.Generator:
    import hashlib

    ints = [int.from_bytes(hashlib.sha256(str(k).encode()).digest()[:8], "little")
            if isinstance(k, str) else int(k) for k in key]
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(ints)))


@dataclass
class Corpus:
    vocab: Vocab
    train: List[np.ndarray]
    validation: List[np.ndarray]


def build_synthetic_corpus(seed: int, num_sequences: int, vocab_size: int = 64,
                           seq_len: int = 64, grammar: str = "markov-order-2") -> Corpus:
    """Order-2 Markov token streams with skewed transitions, split 95/5."""
    if num_sequences < 1:
        raise ContractError("need at least one sequence")
    if grammar != "markov-order-2":
        raise ContractError(f"unknown grammar {grammar!r}")
    vocab = Vocab(vocab_size)
    regular = vocab.regular_ids
    k = regular.size
    rng = _rng("corpus", seed)
    # skewed per-context distributions so the stream has learnable structure
    trans = rng.dirichlet(np.full(k, 0.3), size=(k, k))
    sequences = []
    for _ in range(num_sequences):
        a, b = rng.integers(0, k, size=2)
        toks = [int(regular[a]), int(regular[b])]
        for _ in range(seq_len - 2):
            c = rng.choice(k, p=trans[a, b])
            toks.append(int(regular[c]))
            a, b = b, c
        sequences.append(np.array(toks, dtype=np.int64))
    n_train = min(num_sequences, max(1, round(0.95 * num_sequences)))
    return Corpus(vocab, sequences[:n_train], sequences[n_train:])


@dataclass
class MlmBatch:
    input_ids: np.ndarray
    labels: np.ndarray
    attention_mask: np.ndarray


def make_mlm_batch(corpus: Corpus, seed: int, batch: int, seq_len: int,
                   short_prob: float = 0.1, split: str = "train") -> MlmBatch:
    """BERT-recipe masking: 15% of non-special positions, 80/10/10 replacement."""
    pool = corpus.train if split == "train" else corpus.validation
    rng = _rng("mlm", seed)
    vocab = corpus.vocab
    input_ids = np.full((batch, seq_len), PAD, dtype=np.int64)
    labels = np.full((batch, seq_len), IGNORE_LABEL, dtype=np.int64)
    attention = np.zeros((batch, seq_len), dtype=np.int64)
    for i in range(batch):
        seq = pool[int(rng.integers(0, len(pool)))]
        body_len = seq_len - 2
        if rng.random() < short_prob and seq_len > 4:
            body_len = int(rng.integers(4, seq_len)) - 2  # total length in [4, seq_len-1]
        body = seq[:body_len]
        row = np.concatenate(([CLS], body, [SEP]))
        n = row.size
        input_ids[i, :n] = row
        attention[i, :n] = 1
        for j in range(1, n - 1):  # skip CLS and SEP
            if rng.random() < 0.15:
                labels[i, j] = input_ids[i, j]
                r = rng.random()
                if r < 0.8:
                    input_ids[i, j] = MASK
                elif r < 0.9:
                    input_ids[i, j] = int(rng.choice(vocab.regular_ids))
    return MlmBatch(input_ids, labels, attention)


@dataclass
class TaskBatch:
    input_ids: np.ndarray
    labels: np.ndarray
    attention_mask: np.ndarray


@dataclass
class TaskDataset:
    vocab: Vocab
    train: TaskBatch
    validation: TaskBatch
    num_labels: int


def make_task_dataset(seed: int, num_examples: int, num_labels: int,
                      vocab_size: int = 64, seq_len: int = 16) -> TaskDataset:
    """Balanced sequences whose label is the dominant token group.

    Regular tokens are partitioned into num_labels groups; an example with
    label g draws most tokens from group g, so the mapping is learnable by
    a tiny encoder.
    """
    if num_labels < 2:
        raise ContractError("need at least two labels")
    vocab = Vocab(vocab_size)
    regular = vocab.regular_ids
    groups = np.array_split(regular, num_labels)
    rng = _rng("task", seed)
    ids = np.full((num_examples, seq_len), PAD, dtype=np.int64)
    labels = np.empty(num_examples, dtype=np.int64)
    attention = np.ones((num_examples, seq_len), dtype=np.int64)
    for i in range(num_examples):
        g = i % num_labels  # round-robin keeps labels balanced within 1
        body = np.where(
            rng.random(seq_len - 2) < 0.75,
            rng.choice(groups[g], size=seq_len - 2),
            rng.choice(regular, size=seq_len - 2),
        )
        ids[i, 0] = CLS
        ids[i, 1:-1] = body
        ids[i, -1] = SEP
        labels[i] = g
    perm = rng.permutation(num_examples)
    ids, labels = ids[perm], labels[perm]
    n_train = max(1, round(0.95 * num_examples))
    return TaskDataset(
        vocab,
        TaskBatch(ids[:n_train], labels[:n_train], attention[:n_train]),
        TaskBatch(ids[n_train:], labels[n_train:], attention[n_train:]),
        num_labels,
    )


def task_minibatch(dataset: TaskDataset, seed: int, batch: int) -> TaskBatch:
    rng = _rng("task-batch", seed)
    idx = rng.integers(0, dataset.train.input_ids.shape[0], size=batch)
    t = dataset.train
    return TaskBatch(t.input_ids[idx], t.labels[idx], t.attention_mask[idx])
