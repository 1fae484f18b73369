"""GRPO arithmetic: group advantages, KL-regularized loss, beta schedule, masks.

This module is the arithmetic authority only. Log-probabilities and KL
estimates come from the trainer; nothing here touches model parameters.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import EmptyBatch, EmptyGroup, InconsistentSpans, StepOutOfRange
from .template import Segments


@dataclass(frozen=True)
class TrajectoryStats:
    advantage: float
    logprob_ratio: float  # sum over kept tokens of log pi_theta - log pi_ref
    kl_estimate: float

    def __post_init__(self):
        if self.kl_estimate < 0:
            raise ValueError("kl_estimate must be non-negative")


@dataclass(frozen=True)
class BetaSchedule:
    beta_start: float = 0.1
    beta_end: float = 0.01
    total_steps: int = 1000

    def __post_init__(self):
        if not self.beta_start >= self.beta_end >= 0:
            raise ValueError("need beta_start >= beta_end >= 0")
        if self.total_steps < 1:
            raise ValueError("total_steps must be >= 1")


def group_advantages(rewards: Sequence[float]) -> list[float]:
    """Reward minus the group mean (the mean includes the trajectory itself)."""
    if len(rewards) == 0:
        raise EmptyGroup("group has no rollouts")
    if not all(math.isfinite(r) for r in rewards):
        raise ValueError("rewards must be finite")
    mean = math.fsum(rewards) / len(rewards)
    return [r - mean for r in rewards]


def beta_at(step: int, schedule: BetaSchedule = BetaSchedule()) -> float:
    if not 0 <= step <= schedule.total_steps:
        raise StepOutOfRange(f"step {step} outside [0, {schedule.total_steps}]")
    frac = step / schedule.total_steps
    beta = schedule.beta_start + (schedule.beta_end - schedule.beta_start) * frac
    return min(schedule.beta_start, max(schedule.beta_end, beta))


def grpo_loss(stats: Sequence[TrajectoryStats], beta: float) -> float:
    """Sequence-level GRPO loss averaged over the minibatch."""
    if not stats:
        raise EmptyBatch("minibatch is empty")
    if beta < 0:
        raise ValueError("beta must be non-negative")
    total = math.fsum(s.advantage * s.logprob_ratio - beta * s.kl_estimate for s in stats)
    return -total / len(stats)


def loss_mask(segments: Segments, token_spans: Sequence[tuple[int, int]]) -> list[bool]:
    """Per-token keep flags: retrieved result content never receives gradient.

    A token is dropped if it overlaps the result body or straddles a block
    boundary; everything else the policy emitted, tag literals included, is
    kept.
    """
    prev_end = 0
    for start, end in token_spans:
        if start < prev_end or end < start or end > segments.length:
            raise InconsistentSpans(f"token span ({start}, {end}) is out of order or range")
        prev_end = end

    cuts: set[int] = set()
    for span in segments.spans().values():
        cuts.update((span.start, span.end))
    result = segments.result
    if result is not None:
        cuts.update((result.body_start, result.body_end))

    keep = []
    for start, end in token_spans:
        in_result = (
            result is not None
            and start < result.body_end
            and max(end, start + 1) > result.body_start
        )
        straddles = any(start < c < end for c in cuts)
        keep.append(not (in_result or straddles))
    return keep


# Toy policy used for gradient checks: independent softmax per position.


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def toy_trajectory_stats(
    logits: np.ndarray,
    ref_logits: np.ndarray,
    sequences: Sequence[Sequence[int]],
    advantages: Sequence[float],
    keep: Sequence[bool],
) -> list[TrajectoryStats]:
    """Stats for sequences under per-position softmax policies.

    ``logits`` has shape (positions, vocab); masked positions contribute
    neither to the log-ratio nor to the exact KL term.
    """
    logp, logq = _log_softmax(logits), _log_softmax(ref_logits)
    p = np.exp(logp)
    kl_per_pos = (p * (logp - logq)).sum(axis=-1)
    kl = float(sum(kl_per_pos[t] for t in range(len(keep)) if keep[t]))
    stats = []
    for seq, adv in zip(sequences, advantages):
        ratio = sum(logp[t, y] - logq[t, y] for t, y in enumerate(seq) if keep[t])
        stats.append(TrajectoryStats(adv, float(ratio), max(kl, 0.0)))
    return stats


def toy_loss_grad(
    logits: np.ndarray,
    ref_logits: np.ndarray,
    sequences: Sequence[Sequence[int]],
    advantages: Sequence[float],
    keep: Sequence[bool],
    beta: float,
) -> np.ndarray:
    """Analytic d(grpo_loss)/d(logits) for the toy policy."""
    logp, logq = _log_softmax(logits), _log_softmax(ref_logits)
    p = np.exp(logp)
    n = len(sequences)
    grad = np.zeros_like(logits, dtype=float)
    for t in range(logits.shape[0]):
        if not keep[t]:
            continue
        kl_t = (p[t] * (logp[t] - logq[t])).sum()
        dkl = p[t] * (logp[t] - logq[t] - kl_t)
        for seq, adv in zip(sequences, advantages):
            dlogp = -p[t].copy()
            dlogp[seq[t]] += 1.0
            grad[t] += -(adv * dlogp - beta * dkl) / n
    return grad
