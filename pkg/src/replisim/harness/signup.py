"""Channel enrollment: the OAuth-style flow and the unlisted-video verification flow."""
from __future__ import annotations

import random
from dataclasses import dataclass, field
from typing import Optional

from ..domain import (ChannelRecord, ChannelStatus, SimClock, Tier, TokenBundle,
                      VerificationVideo)
from ..platform_sim import VERIFICATION_TITLE, PlatformSim
from ..sink import ChainSim
from ..store import DurableStore

MIN_SUBSCRIBERS = 50
MIN_VIDEOS = 2
MIN_AGE_HOURS = 720


class SignupError(Exception):
    pass


class RequirementsNotMet(SignupError):
    def __init__(self, failed: list[str]):
        super().__init__(", ".join(failed))
        self.failed = list(failed)


class AlreadyConnected(SignupError):
    pass


class SelfReferral(SignupError):
    pass


class ReferralCapExceeded(SignupError):
    pass


class VerificationVideoInvalid(SignupError):
    pass


class SignupsDisabled(SignupError):
    pass


class UnknownChannel(SignupError):
    pass


@dataclass
class EnrollmentOutcome:
    channel: ChannelRecord
    mode: str
    whitelisted: bool
    restored_tier: Optional[Tier]
    steps: list[str] = field(default_factory=list)


@dataclass
class SignupContext:
    clock: SimClock
    store: DurableStore
    platform: PlatformSim
    chain: ChainSim
    rng: random.Random
    disable_new_signups: bool = False


def failed_requirements(subscribers: int, videos: int, age_hours: float) -> list[str]:
    failed = []
    if subscribers < MIN_SUBSCRIBERS:
        failed.append(f"subscribers {subscribers} < {MIN_SUBSCRIBERS}")
    if videos < MIN_VIDEOS:
        failed.append(f"videos {videos} < {MIN_VIDEOS}")
    if age_hours < MIN_AGE_HOURS:
        failed.append(f"age {age_hours:.1f} h < {MIN_AGE_HOURS} h")
    return failed


def _gatekeep(ctx: SignupContext, channel_id: str, info: dict, referrer: Optional[str],
              steps: list[str]) -> tuple[Optional[ChannelRecord], bool]:
    store = ctx.store
    existing = store.find_channel(channel_id)
    if existing is not None and existing.status is ChannelStatus.VERIFIED:
        raise AlreadyConnected(channel_id)
    js = info.get("joystream_channel_id")
    if js is not None and any(c.id != channel_id and c.status is ChannelStatus.VERIFIED
                              for c in store.channels_by_joystream_id(js)):
        raise AlreadyConnected(f"sink channel {js} is bound to another source channel")
    steps.append("already_connected_check")

    if referrer is not None:
        if referrer == channel_id:
            raise SelfReferral(channel_id)
        ref = store.find_channel(referrer)
        if ref is not None and len(store.channels_by_referrer(referrer)) >= ref.tier.referral_cap:
            raise ReferralCapExceeded(referrer)
    steps.append("referral_check")

    whitelisted = store.is_whitelisted(info["handle"])
    steps.append("whitelist_check")
    failed = failed_requirements(info["subscriber_count"], info["video_count"], info["age_hours"])
    if failed and not whitelisted:
        raise RequirementsNotMet(failed)
    steps.append("requirements_check")
    return existing, whitelisted


def _persist(ctx: SignupContext, channel_id: str, info: dict, existing: Optional[ChannelRecord],
             artifact, tier: Tier, referrer: Optional[str], user: dict) -> tuple[ChannelRecord, Optional[Tier]]:
    restored = None
    if existing is not None and existing.status is ChannelStatus.OPTED_OUT and existing.pre_opt_out_status:
        restored = tier = existing.pre_opt_out_status
    channel = ChannelRecord(
        id=channel_id, user_id=user["id"], joystream_channel_id=info.get("joystream_channel_id"),
        tier=tier, subscriber_count=info["subscriber_count"], video_count=info["video_count"],
        age_hours=info["age_hours"], status=ChannelStatus.VERIFIED, auth_artifact=artifact,
        referrer_channel_id=referrer, handle=info["handle"], enrolled_at=ctx.clock.now,
    )
    ctx.store.save_user(user)
    ctx.store.save_channel(channel)
    return channel, restored


def signup_channel(ctx: SignupContext, channel_id: str, mode: str = "token", *,
                   referrer: Optional[str] = None, verification_url: Optional[str] = None,
                   tier: Tier = Tier.BRONZE) -> EnrollmentOutcome:
    if ctx.disable_new_signups:
        raise SignupsDisabled("new sign-ups are disabled")
    if mode == "token":
        return _signup_token(ctx, channel_id, referrer, tier)
    if mode == "videoVerification":
        return _signup_video(ctx, channel_id, referrer, verification_url, tier)
    raise ValueError(f"unknown auth mode {mode!r}")


def _signup_token(ctx: SignupContext, channel_id: str, referrer: Optional[str],
                  tier: Tier) -> EnrollmentOutcome:
    steps = []
    # 1-2: consent screen hands back a one-time code, exchanged for tokens
    auth_code = f"code-{ctx.rng.getrandbits(64):016x}"
    steps.append("consent")
    ctx.platform.api_call("tokenExchange", service="signup")
    bundle = TokenBundle.issue(ctx.rng, ctx.clock.now)
    steps.append("token_exchange")
    # 3: channel lookup with the fresh access token
    ctx.platform.api_call("channels.list", service="signup")
    info = ctx.platform.operational_api_query("channel", channel_id=channel_id)
    if info is None:
        raise UnknownChannel(channel_id)
    steps.append("channel_fetch")
    # 4-6: duplicate binding, referral and onboarding requirements
    existing, whitelisted = _gatekeep(ctx, channel_id, info, referrer, steps)
    # 7: the real authorization code is never stored
    del auth_code
    stored_code = ctx.rng.randbytes(16).hex()
    steps.append("code_replacement")
    # 8: sink-side membership
    ctx.chain.create_membership(info["handle"])
    steps.append("membership")
    # 9: persist, restoring the pre-opt-out tier on re-enrollment
    user = {"id": f"user-{channel_id}", "authorization_code": stored_code}
    channel, restored = _persist(ctx, channel_id, info, existing, bundle, tier, referrer, user)
    steps.append("persist")
    return EnrollmentOutcome(channel, "token", whitelisted, restored, steps)


def _signup_video(ctx: SignupContext, channel_id: str, referrer: Optional[str],
                  url: Optional[str], tier: Tier) -> EnrollmentOutcome:
    steps = []
    if not url:
        raise VerificationVideoInvalid("no verification URL")
    video = ctx.platform.operational_api_query("video_by_url", url=url)
    if video is None:
        raise VerificationVideoInvalid("video not found")
    if video["channel_id"] != channel_id:
        raise VerificationVideoInvalid("video belongs to another channel")
    if not video["unlisted"] or video["private"]:
        raise VerificationVideoInvalid("video must be unlisted")
    if video["title"].strip() != VERIFICATION_TITLE:
        raise VerificationVideoInvalid(f"title must be {VERIFICATION_TITLE!r}")
    steps.append("video_check")
    info = ctx.platform.operational_api_query("channel", channel_id=channel_id)
    if info is None:
        raise UnknownChannel(channel_id)
    steps.append("channel_fetch")
    existing, whitelisted = _gatekeep(ctx, channel_id, info, referrer, steps)
    ctx.chain.create_membership(info["handle"])
    steps.append("membership")
    user = {"id": f"user-{channel_id}"}
    channel, restored = _persist(ctx, channel_id, info, existing, VerificationVideo(url), tier,
                                 referrer, user)
    steps.append("persist")
    return EnrollmentOutcome(channel, "videoVerification", whitelisted, restored, steps)
