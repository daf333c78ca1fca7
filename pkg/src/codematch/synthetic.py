"""Synthetic retrieval corpus with a known one-to-many answer structure.

Each latent intent gets several paraphrase questions and several distinct code
solutions; within an intent, every unpaired (question, code) combination is a
correct answer that the pairing nonetheless labels negative. Shared filler
tokens appear across all intents so that snippets from different intents look
superficially similar, which is what makes the sampled negatives hard.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .corpus import QCPair, QDPair

_SHARED_NL = ("how", "to", "do", "i", "the", "a", "in", "with")
_SHARED_CODE = ("(", ")", "=", ".", "x", "data", "result", "for")


@dataclass
class SyntheticCorpus:
    """Generated pairs plus the ground-truth intent label of every QC pair."""

    qc_pairs: list[QCPair]
    qd_pairs: list[QDPair]
    intent_of: dict[int, int]

    def is_false_negative(self, query_id: int, candidate_id: int) -> bool:
        """True when the candidate solves the query's intent without being its paired answer."""
        return candidate_id != query_id and self.intent_of[candidate_id] == self.intent_of[query_id]


def _distinct_sample(rng, pool: list[str], k: int, taken: set[frozenset]) -> list[str]:
    # retry until the token subset differs from earlier picks in this intent
    for _ in range(100):
        picked = [pool[i] for i in rng.choice(len(pool), size=k, replace=False)]
        key = frozenset(picked)
        if key not in taken:
            taken.add(key)
            return picked
    taken.add(frozenset(picked))
    return picked


def make_synthetic_corpus(
    n_intents: int,
    per_intent: int,
    seed: int = 0,
    intent_vocab: int = 8,
    question_tokens: int = 4,
    code_tokens: int = 5,
    filler_tokens: int = 3,
) -> SyntheticCorpus:
    """Build ``n_intents * per_intent`` QC pairs and same-intent duplicate questions.

    QC pair ids are ``intent * per_intent + m``; QD pairs link every pair of
    paraphrase questions within an intent. Deterministic per seed.
    """
    if n_intents < 2 or per_intent < 1:
        raise ValueError("need at least 2 intents and 1 pair per intent")
    rng = np.random.default_rng(seed)
    qc_pairs: list[QCPair] = []
    qd_pairs: list[QDPair] = []
    intent_of: dict[int, int] = {}
    qd_id = 0
    for k in range(n_intents):
        nl_pool = [f"t{k}w{j}" for j in range(intent_vocab)]
        code_pool = [f"op{k}v{j}" for j in range(intent_vocab)]
        q_taken: set[frozenset] = set()
        c_taken: set[frozenset] = set()
        questions: list[list[str]] = []
        for m in range(per_intent):
            pid = k * per_intent + m
            question = _distinct_sample(rng, nl_pool, question_tokens, q_taken)
            question += [_SHARED_NL[i] for i in rng.choice(len(_SHARED_NL), size=filler_tokens, replace=False)]
            rng.shuffle(question)
            code = _distinct_sample(rng, code_pool, code_tokens, c_taken)
            code += [_SHARED_CODE[i] for i in rng.choice(len(_SHARED_CODE), size=filler_tokens, replace=False)]
            rng.shuffle(code)
            qc_pairs.append(QCPair(pid, question, code, "python"))
            intent_of[pid] = k
            questions.append(question)
        for a in range(per_intent):
            for b in range(a + 1, per_intent):
                qd_pairs.append(QDPair(qd_id, list(questions[a]), list(questions[b])))
                qd_id += 1
    return SyntheticCorpus(qc_pairs, qd_pairs, intent_of)
