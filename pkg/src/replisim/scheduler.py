"""Multi-factor video priority and periodic recalculation.

Priorities follow the job-queue convention: 0 is the most urgent value and
2**21 the least. The score rewards backlog share, freshness, tier and recency.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import TYPE_CHECKING, Union

from .domain import ChannelRecord, Tier, VideoRecord

if TYPE_CHECKING:
    from .store import DurableStore, EphemeralQueueStore

Number = Union[int, float, Fraction]


class UnknownChannel(KeyError):
    pass


@dataclass(frozen=True)
class PriorityInputs:
    published_at: Number
    duration_s: Number
    is_new: bool
    tier: Tier
    backlog_pct: Number


@dataclass(frozen=True)
class PriorityConstants:
    base_sudo: int = 10
    fresh_bonus: int = 20
    tier_bonus: int = 20
    fresh_duration_threshold_s: int = 300
    y2k_epoch: int = 946_684_800
    backlog_weight: int = 1000
    sudo_weight: int = 2000
    max_score: int = 100 * 2000 + 1000 + 100
    max_priority: int = 2 ** 21
    # opt-in divisor for recency; 1 reproduces the published formula, where any
    # modern publish date saturates the score and clamps the priority to 0
    recency_scale: int = 1


DEFAULT_CONSTANTS = PriorityConstants()


def sudo_points(inputs: PriorityInputs, consts: PriorityConstants = DEFAULT_CONSTANTS) -> int:
    sudo = consts.base_sudo
    if inputs.is_new and inputs.duration_s > consts.fresh_duration_threshold_s:
        sudo += consts.fresh_bonus
    if inputs.tier in (Tier.SILVER, Tier.GOLD, Tier.DIAMOND):
        sudo += consts.tier_bonus
    return sudo


def priority_score(inputs: PriorityInputs, consts: PriorityConstants = DEFAULT_CONSTANTS) -> Fraction:
    backlog = min(max(Fraction(inputs.backlog_pct), Fraction(0)), Fraction(100))
    recency = (Fraction(inputs.published_at) - consts.y2k_epoch) / consts.recency_scale
    return backlog * consts.backlog_weight + sudo_points(inputs, consts) * consts.sudo_weight + recency


def compute_priority(inputs: PriorityInputs, consts: PriorityConstants = DEFAULT_CONSTANTS) -> int:
    """Queue priority in ``[0, max_priority]``; lower means sooner."""
    score = priority_score(inputs, consts)
    scaled = math.floor(score * consts.max_priority / consts.max_score)
    p = consts.max_priority - scaled
    # the lower clamp is the published one; the upper keeps pre-2000 dates in range
    return min(consts.max_priority, max(0, p))


def inputs_for(video: VideoRecord, channel: ChannelRecord) -> PriorityInputs:
    return PriorityInputs(
        published_at=video.published_at,
        duration_s=video.duration_s,
        is_new=video.is_fresh,
        tier=channel.tier,
        backlog_pct=channel.backlog_pct,
    )


def recalculate_channel_priorities(channel_id: str, store: "DurableStore",
                                   queue: "EphemeralQueueStore",
                                   consts: PriorityConstants = DEFAULT_CONSTANTS) -> int:
    """Re-score every queued (not in-flight) job of a channel.

    Returns the number of jobs whose priority was rewritten.
    """
    channel = store.find_channel(channel_id)
    if channel is None:
        raise UnknownChannel(channel_id)
    updated = 0
    for job in queue.queued_jobs_for_channel(channel_id):
        video = store.get_video(channel_id, job.video_id)
        if video is None:
            continue
        queue.set_priority(job, compute_priority(inputs_for(video, channel), consts))
        updated += 1
    return updated
