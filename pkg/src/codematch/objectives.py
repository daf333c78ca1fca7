"""Loss, sampling, and reweighting math for adversarial retrieval training."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np
import torch


@dataclass(frozen=True)
class RegWeights:
    """Exponents of the relevance down-weighting curve (1 - x**a) ** b."""

    a: int = 1
    b: int = 1

    def __post_init__(self):
        if int(self.a) < 1 or int(self.b) < 1:
            raise ValueError("both exponents must be positive integers")


def hinge_loss(f_pos, f_neg, margin: float = 0.05):
    """max(0, margin + f_neg - f_pos); zero once the pair is separated by the margin.

    Accepts plain floats, numpy arrays, or torch tensors (elementwise).
    """
    if margin < 0:
        raise ValueError("margin must be >= 0")
    gap = margin + f_neg - f_pos
    if isinstance(gap, torch.Tensor):
        return gap.clamp_min(0.0)
    if isinstance(gap, np.ndarray):
        return np.maximum(0.0, gap)
    return max(0.0, gap)


def adversarial_distribution(scores, tau: float = 0.2) -> np.ndarray:
    """softmax(scores / tau), computed with max-subtraction for stability.

    Lower temperatures concentrate the mass on the top-scored candidates.
    """
    if tau <= 0:
        raise ValueError("tau must be positive")
    s = np.asarray(scores, dtype=np.float64)
    if s.ndim != 1 or s.size == 0:
        raise ValueError("scores must be a non-empty 1-d array")
    if not np.isfinite(s).all():
        raise ValueError("scores must be finite")
    z = s / tau
    z = z - z.max()
    e = np.exp(z)
    return e / e.sum()


class Candidate(NamedTuple):
    """One sampler candidate: record id, token ids, and the id of the question
    the tokens were originally paired with."""

    id: int
    tokens: Sequence[int]
    question_id: int


@dataclass(frozen=True)
class AdvSample:
    """One adversarial draw: position and id of the chosen candidate, its log
    probability under the sampling distribution, and its paired question."""

    chosen_index: int
    chosen_id: int
    log_prob: float
    paired_question_id: int


def sample_adversarial(
    generator,
    question: Sequence[int],
    candidates: Sequence[Candidate],
    tau: float = 0.2,
    rng: torch.Generator | None = None,
) -> AdvSample:
    """Draw one candidate from the temperature softmax over generator scores.

    ``generator`` is anything with score_one_to_many(question, token_lists);
    the ground-truth answer for the question must not be among the candidates.
    Deterministic given the state of ``rng``.
    """
    if len(candidates) == 0:
        raise ValueError("empty candidate subset")
    with torch.no_grad():
        scores = generator.score_one_to_many(question, [c.tokens for c in candidates])
    log_probs = torch.log_softmax(scores.double() / tau, dim=0)
    idx = int(torch.multinomial(log_probs.exp(), 1, generator=rng).item())
    chosen = candidates[idx]
    return AdvSample(idx, chosen.id, float(log_probs[idx]), chosen.question_id)


def reinforce_term(loss, log_prob):
    """Surrogate objective ``loss * log_prob`` for score-function gradients.

    Ascending the surrogate moves sampling probability toward high-loss
    candidates; ``loss`` is treated as a constant (no gradient flows through
    it), so a zero loss contributes nothing.
    """
    if isinstance(loss, torch.Tensor):
        loss = loss.detach()
    return loss * log_prob


def normalize_relevance(cos_score: float) -> float:
    """Affine map of a cosine score from [-1, 1] onto [0, 1].

    Inputs marginally outside [-1, 1] from floating point are clamped.
    """
    x = min(1.0, max(-1.0, float(cos_score)))
    return (x + 1.0) / 2.0


def qd_weight(x: float, weights: RegWeights = RegWeights()) -> float:
    """Down-weighting curve (1 - x**a) ** b over normalized relevance x.

    Monotonically non-increasing on [0, 1], with w(0) = 1 and w(1) = 0: the
    more relevant the candidate's paired question looks, the smaller the
    weight its loss receives.
    """
    x = float(x)
    if x < -1e-9 or x > 1.0 + 1e-9:
        raise ValueError(f"relevance {x} outside [0, 1]")
    x = min(1.0, max(0.0, x))
    return (1.0 - x ** weights.a) ** weights.b
