"""Group-relative scoring math for trajectory groups.

Covers binary rewards, group-normalized advantages, the keep/discard rule for
uninformative groups, asymmetric ratio clipping, token masking, and the
nonnegative KL estimator. Pure scalar computations only; no gradients, no
sampling.
"""

from __future__ import annotations

import math
import statistics
from dataclasses import dataclass, field
from typing import Optional, Sequence

from .control import Judge, Trajectory, judge_answer
from .errors import InvalidArgumentError

DEFAULT_GROUP_SIZE = 4
DEFAULT_EPS_LOW = 0.2
DEFAULT_EPS_HIGH = 0.28
DEFAULT_EPS = 0.2
DEFAULT_KL_BETA = 0.01


@dataclass
class ClipParams:
    eps_low: float = DEFAULT_EPS_LOW
    eps_high: float = DEFAULT_EPS_HIGH
    eps: float = DEFAULT_EPS
    beta: float = DEFAULT_KL_BETA

    def __post_init__(self):
        if not 0 < self.eps_low <= self.eps_high:
            raise InvalidArgumentError("need 0 < eps_low <= eps_high")
        if self.beta < 0:
            raise InvalidArgumentError("beta must be non-negative")


@dataclass
class TrajectoryGroup:
    """A group of rollouts for one question, with their binary rewards."""

    question: str
    reference: str
    trajectories: list = field(default_factory=list)
    rewards: list = field(default_factory=list)

    def __post_init__(self):
        if self.trajectories and len(self.trajectories) != len(self.rewards):
            raise InvalidArgumentError("trajectories and rewards must align")


def compute_reward(question: str, reference: str, answer: Optional[str],
                   judge: Judge) -> int:
    """1 when the judge affirms the submitted answer, 0 otherwise."""
    return 1 if judge_answer(question, reference, answer, judge) else 0


def group_advantages(rewards: Sequence[float]) -> list[float]:
    """Normalize rewards by the group mean and population std.

    A zero-variance group gets all-zero advantages rather than a division
    blowup; such groups carry no learning signal anyway.
    """
    if len(rewards) < 2:
        raise InvalidArgumentError("advantage normalization needs a group of >= 2")
    mean = statistics.fmean(rewards)
    std = statistics.pstdev(rewards)
    if std == 0:
        return [0.0] * len(rewards)
    return [(r - mean) / std for r in rewards]


def dapo_group_filter(rewards: Sequence[float]) -> bool:
    """Keep a group only when its rewards are neither all failures nor all passes."""
    total = sum(rewards)
    return 0 < total < len(rewards)


def clipped_term(ratio: float, advantage: float,
                 eps_low: float = DEFAULT_EPS_LOW,
                 eps_high: float = DEFAULT_EPS_HIGH) -> float:
    """Asymmetrically clipped surrogate term for one token."""
    if ratio <= 0:
        raise InvalidArgumentError("probability ratio must be positive")
    clipped_ratio = min(max(ratio, 1.0 - eps_low), 1.0 + eps_high)
    return min(ratio * advantage, clipped_ratio * advantage)


def token_mask(trajectory: Trajectory, token_counts: Sequence[int]) -> list[bool]:
    """Per-token flags marking policy-generated (assistant) positions.

    ``token_counts`` gives the tokenized length of each message, in order.
    """
    if len(token_counts) != len(trajectory.messages):
        raise InvalidArgumentError(
            f"{len(token_counts)} token counts for {len(trajectory.messages)} messages")
    mask: list[bool] = []
    for message, count in zip(trajectory.messages, token_counts):
        if count < 0:
            raise InvalidArgumentError("token counts must be non-negative")
        mask.extend([message.role == "assistant"] * count)
    return mask


def kl_estimate(probs_policy: Sequence[float], probs_reference: Sequence[float],
                mask: Sequence[bool] | None = None) -> float:
    """Masked mean of ``r - log(r) - 1`` with ``r = p_ref / p_policy``.

    Nonnegative for all valid inputs; zero exactly when the distributions
    agree on every masked token.
    """
    if len(probs_policy) != len(probs_reference):
        raise InvalidArgumentError("probability sequences must have equal length")
    if mask is None:
        mask = [True] * len(probs_policy)
    if len(mask) != len(probs_policy):
        raise InvalidArgumentError("mask length must match probability sequences")
    total = 0.0
    count = 0
    for p_theta, p_ref, keep in zip(probs_policy, probs_reference, mask):
        if not 0 < p_theta <= 1 or not 0 < p_ref <= 1:
            raise InvalidArgumentError("probabilities must lie in (0, 1]")
        if not keep:
            continue
        ratio = p_ref / p_theta
        total += ratio - math.log(ratio) - 1.0
        count += 1
    if count == 0:
        return 0.0
    return total / count


def score_group(question: str, reference: str, answers: Sequence[Optional[str]],
                judge: Judge) -> dict:
    """Rewards, keep flag, and advantages for one answer group (CLI surface)."""
    rewards = [compute_reward(question, reference, answer, judge)
               for answer in answers]
    return {
        "rewards": rewards,
        "keep": dapo_group_filter(rewards),
        "advantages": group_advantages(rewards),
    }
