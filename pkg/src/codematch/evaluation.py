"""Pooled ranking evaluation: rank of the positive among fixed negatives,
MAP / nDCG aggregation, and report / learning-curve export."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import torch
from scipy import stats

from .corpus import EvalPool, QCIndex, QDIndex

logger = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# scorers
# ---------------------------------------------------------------------------


class FunctionScorer:
    """Adapts a (query_id, candidate_id) -> float function to the scorer API."""

    def __init__(self, fn):
        self.fn = fn

    def score_candidates(self, query_id: int, candidate_ids: Sequence[int]) -> list[float]:
        return [self.fn(query_id, cid) for cid in candidate_ids]


class QCPoolScorer:
    """Scores a pool's code candidates against the query's question."""

    def __init__(self, model, index: QCIndex):
        self.model = model
        self.index = index

    def score_candidates(self, query_id: int, candidate_ids: Sequence[int]) -> list[float]:
        question = self.index.question_ids[query_id]
        codes = [self.index.code_ids[cid] for cid in candidate_ids]
        was_training = self.model.training
        self.model.eval()
        try:
            with torch.no_grad():
                return self.model.score_one_to_many(question, codes).tolist()
        finally:
            self.model.train(was_training)


class QDPoolScorer:
    """Scores a pool of candidate questions against the query pair's first question."""

    def __init__(self, model, index: QDIndex):
        self.model = model
        self.index = index

    def score_candidates(self, query_id: int, candidate_ids: Sequence[int]) -> list[float]:
        question = self.index.first_ids[query_id]
        others = [self.index.second_ids[cid] for cid in candidate_ids]
        was_training = self.model.training
        self.model.eval()
        try:
            with torch.no_grad():
                return self.model.score_one_to_many(question, others).tolist()
        finally:
            self.model.train(was_training)


# ---------------------------------------------------------------------------
# ranking metrics
# ---------------------------------------------------------------------------


def rank_pool(scorer, pool: EvalPool) -> int:
    """1-based rank of the pool's positive; exact score ties break by ascending id."""
    candidate_ids = [pool.positive_id] + list(pool.negative_ids)
    scores = list(scorer.score_candidates(pool.query_id, candidate_ids))
    if len(scores) != len(candidate_ids):
        raise ValueError("scorer returned a wrong number of scores")
    if len(set(scores)) != len(scores):
        logger.info("score ties in the pool for query %s; ordering by id", pool.query_id)
    by_id = dict(zip(candidate_ids, scores))
    ordering = sorted(candidate_ids, key=lambda cid: (-by_id[cid], cid))
    return 1 + ordering.index(pool.positive_id)


def average_precision_single(rank: int) -> float:
    """Average precision with exactly one relevant item: 1 / rank."""
    if rank < 1:
        raise ValueError("rank must be >= 1")
    return 1.0 / rank


def ndcg_single(rank: int) -> float:
    """nDCG with binary relevance and one relevant item: 1 / log2(rank + 1)."""
    if rank < 1:
        raise ValueError("rank must be >= 1")
    return 1.0 / math.log2(rank + 1)


@dataclass
class EvalReport:
    """Aggregate MAP / nDCG plus (query_id, rank, pool size) per query."""

    map: float
    ndcg: float
    per_query_ranks: list[tuple[int, int, int]]


def evaluate(scorer, pools: Sequence[EvalPool]) -> EvalReport:
    """Rank every pool and average the per-query metrics.

    Deterministic for a frozen scorer; a failing pool aborts with its query id.
    """
    if not pools:
        raise ValueError("no pools to evaluate")
    per_query = []
    ap_sum = 0.0
    ndcg_sum = 0.0
    for pool in pools:
        try:
            rank = rank_pool(scorer, pool)
        except Exception as exc:
            raise RuntimeError(f"evaluation failed for query {pool.query_id}: {exc}") from exc
        per_query.append((pool.query_id, rank, 1 + len(pool.negative_ids)))
        ap_sum += average_precision_single(rank)
        ndcg_sum += ndcg_single(rank)
    n = len(pools)
    return EvalReport(ap_sum / n, ndcg_sum / n, per_query)


# ---------------------------------------------------------------------------
# export
# ---------------------------------------------------------------------------


def write_report(report: EvalReport, path, plot: bool = False) -> None:
    """CSV with one row per query (query_id, rank, ap, ndcg) plus a summary row.

    With ``plot=True`` a rank-histogram PNG is rendered next to the CSV.
    """
    lines = ["query_id,rank,ap,ndcg"]
    for query_id, rank, _size in report.per_query_ranks:
        lines.append(f"{query_id},{rank},{average_precision_single(rank)!r},{ndcg_single(rank)!r}")
    lines.append(f"all,,{report.map!r},{report.ndcg!r}")
    path = Path(path)
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    if plot:
        from .plotting import plot_rank_histogram

        plot_rank_histogram(report, path.with_suffix(".png"))


CURVE_HEADER = "epoch,map,ndcg,loss,mean_weight"


def export_curves(history, path, plot: bool = False) -> None:
    """Write per-epoch training metrics as CSV (float reprs round-trip exactly).

    With ``plot=True`` a learning-curve PNG is rendered next to the CSV.
    """
    records = list(history)
    if not records:
        raise ValueError("history is empty")
    lines = [CURVE_HEADER]
    for r in records:
        lines.append(f"{r.epoch},{r.map!r},{r.ndcg!r},{r.loss!r},{r.mean_weight!r}")
    path = Path(path)
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    if plot:
        from .plotting import plot_history

        plot_history(records, path.with_suffix(".png"))


def load_curves(path):
    """Parse an exported curve file back into a TrainHistory."""
    from .training import EpochRecord, TrainHistory

    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines or lines[0] != CURVE_HEADER:
        raise ValueError(f"{path} is not a curve file")
    history = TrainHistory()
    for line in lines[1:]:
        epoch, map_, ndcg, loss, mean_weight = line.split(",")
        history.append(EpochRecord(int(epoch), float(map_), float(ndcg), float(loss), float(mean_weight)))
    return history


def paired_one_tailed_t(sample_a, sample_b):
    """Paired t statistic and one-tailed p-value for mean(a) > mean(b)."""
    t, p_two = stats.ttest_rel(sample_a, sample_b)
    p = p_two / 2.0 if t > 0 else 1.0 - p_two / 2.0
    return float(t), float(p)
