"""Shared fixtures and toy-corpus builders."""

import numpy as np
import pytest

from codematch.corpus import PreparedData, QCPair, QDPair, build_eval_pools, build_vocab
from codematch.training import TrainConfig


def make_separable_pairs(n: int = 10, tokens_per_side: int = 3) -> list[QCPair]:
    """Pairs with per-pair disjoint vocabularies: a perfect ranking exists."""
    pairs = []
    for i in range(n):
        question = [f"q{i}t{j}" for j in range(tokens_per_side)]
        code = [f"c{i}t{j}" for j in range(tokens_per_side)]
        pairs.append(QCPair(i, question, code, "python"))
    return pairs


def make_separable_qd_pairs(n: int = 10) -> list[QDPair]:
    """Duplicate pairs whose two sides share a private token."""
    return [QDPair(i, [f"d{i}x", f"d{i}y"], [f"d{i}x", f"d{i}z"]) for i in range(n)]


def prepared_from_pairs(qc_pairs, qd_pairs=(), pool_negatives=None, seed=0) -> PreparedData:
    """A PreparedData bundle that trains and evaluates on the same tiny set."""
    pool_negatives = pool_negatives or len(qc_pairs) - 1
    vocab = build_vocab(qc_pairs, qd_pairs=qd_pairs)
    qd_pairs = list(qd_pairs)
    qd_pools = build_eval_pools(qd_pairs, min(pool_negatives, len(qd_pairs) - 1), seed) if len(qd_pairs) > 1 else []
    return PreparedData(
        qc_train=list(qc_pairs),
        qc_dev=list(qc_pairs),
        qc_test=list(qc_pairs),
        qc_dev_pools=build_eval_pools(qc_pairs, pool_negatives, seed),
        qc_test_pools=build_eval_pools(qc_pairs, pool_negatives, seed + 1),
        qd_train=qd_pairs,
        qd_dev=qd_pairs,
        qd_test=qd_pairs,
        qd_dev_pools=qd_pools,
        qd_test_pools=qd_pools,
        vocab=vocab,
    )


def tiny_config(**overrides) -> TrainConfig:
    """Small dimensions and a workable learning rate for toy-scale runs."""
    base = dict(
        embedding_dim=16,
        encoder_out_dim=16,
        learning_rate=0.02,
        dropout=0.0,
        max_epochs=5,
        batch_size=16,
        subset_size=8,
        patience=1000,
        seed=0,
    )
    base.update(overrides)
    return TrainConfig(**base)


@pytest.fixture
def separable_data() -> PreparedData:
    return prepared_from_pairs(make_separable_pairs(10), make_separable_qd_pairs(10))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
