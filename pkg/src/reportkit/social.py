"""Six-parameter social activity parser and aggregator.

Consumes exported/synthetic social logs (JSON-lines) and summarizes the
six monitored dimensions: posts, friend requests, chats, group
membership, session time, and interactions. `check_thresholds` then
applies the policy's social rules to a summary.

Windows are half-open ``[from, to)`` so adjacent windows partition
events exactly and count fields are additive across a split.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from datetime import datetime
from typing import Iterable

from .events import (
    ChatMessage, FriendRequest, GroupMembership, Interaction, Post,
    SessionInterval, SocialEvent, _parse_social, payload_to_wire,
)
from .policy import Policy, RuleId, Violation, WindowRef


class ParseError(ValueError):
    def __init__(self, line_number: int, reason: str):
        self.line_number = line_number
        self.reason = reason
        super().__init__(f"line {line_number}: {reason}")


class EmptyWindow(ValueError):
    pass


@dataclass
class SocialActivitySummary:
    """Aggregate of one device's social activity over a window.

    total_time_s sums raw session durations; overlapping sessions are
    summed, not merged, which keeps the field additive across windows.
    posts_per_day divides by the number of distinct UTC days in the
    window that contain at least one event (0 when there are no posts).
    """
    window_from: datetime
    window_to: datetime
    post_count: int = 0
    posts_per_day: float = 0.0
    friend_requests_sent: int = 0
    friend_requests_received: int = 0
    friend_requests_accepted: int = 0
    chat_messages_sent: int = 0
    chat_messages_received: int = 0
    current_groups: set[str] = field(default_factory=set)
    total_time_s: float = 0.0
    interactions: dict[str, int] = field(
        default_factory=lambda: {"like": 0, "share": 0, "plus_one": 0})

    def to_wire(self) -> dict:
        return {
            "window": {"from": self.window_from.isoformat(), "to": self.window_to.isoformat()},
            "post_count": self.post_count,
            "posts_per_day": self.posts_per_day,
            "friend_requests_sent": self.friend_requests_sent,
            "friend_requests_received": self.friend_requests_received,
            "friend_requests_accepted": self.friend_requests_accepted,
            "chat_messages_sent": self.chat_messages_sent,
            "chat_messages_received": self.chat_messages_received,
            "current_groups": sorted(self.current_groups),
            "total_time_s": self.total_time_s,
            "interactions": dict(self.interactions),
        }


def parse_social_log(lines: Iterable[str]) -> list[SocialEvent]:
    """Parse a social log (one JSON record per line, `#` comments allowed).

    All-or-nothing: the first bad line raises ParseError with its number.
    Record schema: {"ts": iso8601, "variant": ..., "payload": {...}}.
    """
    events: list[SocialEvent] = []
    for line_number, line in enumerate(lines, start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        try:
            record = json.loads(stripped)
        except json.JSONDecodeError as exc:
            raise ParseError(line_number, f"invalid JSON: {exc.msg}")
        if not isinstance(record, dict):
            raise ParseError(line_number, "expected a JSON object")
        for key in ("ts", "variant", "payload"):
            if key not in record:
                raise ParseError(line_number, f"missing field {key!r}")
        if not isinstance(record["payload"], dict):
            raise ParseError(line_number, "payload: expected a JSON object")
        flat = {"variant": record["variant"], "at": record["ts"], **record["payload"]}
        try:
            events.append(_parse_social(flat))
        except ValueError as exc:
            raise ParseError(line_number, str(exc))
    return events


def aggregate(events: Iterable[SocialEvent], window_from: datetime,
              window_to: datetime) -> SocialActivitySummary:
    """Summarize events falling in [window_from, window_to).

    Pure; events outside the window are ignored. Every in-window event
    contributes to exactly one counter family. current_groups replays
    join/leave in timestamp order.
    """
    if window_from >= window_to:
        raise EmptyWindow(f"window from {window_from} must precede to {window_to}")
    summary = SocialActivitySummary(window_from=window_from, window_to=window_to)
    in_window = [e for e in events if window_from <= e.at < window_to]
    active_days = {e.at.date() for e in in_window}
    group_moves: list[tuple[datetime, GroupMembership]] = []
    for e in in_window:
        v = e.variant
        if isinstance(v, Post):
            summary.post_count += 1
        elif isinstance(v, FriendRequest):
            if v.direction.value == "outgoing":
                summary.friend_requests_sent += 1
            else:
                summary.friend_requests_received += 1
            if v.accepted:
                summary.friend_requests_accepted += 1
        elif isinstance(v, ChatMessage):
            if v.direction.value == "outgoing":
                summary.chat_messages_sent += 1
            else:
                summary.chat_messages_received += 1
        elif isinstance(v, GroupMembership):
            group_moves.append((e.at, v))
        elif isinstance(v, SessionInterval):
            summary.total_time_s += (v.end - v.start).total_seconds()
        elif isinstance(v, Interaction):
            summary.interactions[v.kind.value] += 1
    for _, move in sorted(group_moves, key=lambda pair: pair[0]):
        if move.action.value == "join":
            summary.current_groups.add(move.group_id)
        else:
            summary.current_groups.discard(move.group_id)
    if summary.post_count and active_days:
        summary.posts_per_day = summary.post_count / len(active_days)
    return summary


def check_thresholds(summary: SocialActivitySummary, policy: Policy) -> list[Violation]:
    """Social threshold rules over a summary: at most one time violation
    (strictly above the limit) and one group violation per blocked group
    the user is currently in."""
    ref = WindowRef(summary.window_from, summary.window_to)
    out: list[Violation] = []
    if summary.total_time_s > policy.max_social_time_s:
        out.append(Violation(
            RuleId.TIME_EXCEEDED, ref,
            f"social time {summary.total_time_s:.0f}s exceeds "
            f"limit {policy.max_social_time_s}s"))
    for group_id in sorted(summary.current_groups & policy.blocked_groups):
        out.append(Violation(RuleId.IMPROPER_GROUP, ref,
                             f"member of blocked group {group_id}"))
    return out


def social_event_wire(e: SocialEvent) -> dict:
    return payload_to_wire(e)
