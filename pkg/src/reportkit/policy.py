"""Rule evaluation and alerting.

The per-layer filters share one implementation: a `Policy` holds the
parent-set rules, `evaluate` applies every applicable rule to a single
event, and `raise_alert` turns each violation into an alert record plus,
at the strictest alert level, a screen-capture request.

The adaptive part of the filter is `UsageBaseline`: a rolling window of
the last seven daily totals per usage metric. A day's running total
exceeding ``baseline_factor x rolling mean`` trips the baseline rule,
but only once at least three full days of history exist, and only at the
crossing event (so one violation per metric per day).
"""

from __future__ import annotations

import hashlib
import re
from collections import deque
from dataclasses import dataclass, field, replace
from datetime import date, datetime
from enum import Enum
from typing import Optional, Union

from .events import (
    AppChange, AppSource, CallEvent, ChatMessage, KeyLogChunk,
    MonitoredEvent, Post, SmsEvent, SocialEvent, UrlVisit, WifiSample,
    canonical_json, format_ts, parse_ts,
)


class AlertLevel(str, Enum):
    SILENT = "silent"
    NOTIFY = "notify"
    NOTIFY_CAPTURE = "notify_capture"


class RuleId(str, Enum):
    RESTRICTED_WORD = "restricted_word"
    BLOCKED_URL = "blocked_url"
    BLOCKED_CALL = "blocked_call"
    UNTRUSTED_APP = "untrusted_app"
    IMPROPER_GROUP = "improper_group"
    TIME_EXCEEDED = "time_exceeded"
    BASELINE_EXCEEDED = "baseline_exceeded"
    DATA_CAP_EXCEEDED = "data_cap_exceeded"


class Severity(str, Enum):
    LOW = "low"
    HIGH = "high"


# rule_id determines severity; fixed table, not configurable.
RULE_SEVERITY: dict[RuleId, Severity] = {
    RuleId.RESTRICTED_WORD: Severity.HIGH,
    RuleId.BLOCKED_CALL: Severity.HIGH,
    RuleId.IMPROPER_GROUP: Severity.HIGH,
    RuleId.UNTRUSTED_APP: Severity.HIGH,
    RuleId.BLOCKED_URL: Severity.LOW,
    RuleId.TIME_EXCEEDED: Severity.LOW,
    RuleId.BASELINE_EXCEEDED: Severity.LOW,
    RuleId.DATA_CAP_EXCEEDED: Severity.LOW,
}

BASELINE_WINDOW_DAYS = 7
BASELINE_MIN_HISTORY = 3


@dataclass(frozen=True)
class EventRef:
    """Points a violation at the event that triggered it."""
    device_id: str
    seq_no: int

    def to_wire(self) -> dict:
        return {"device_id": self.device_id, "seq": self.seq_no}


@dataclass(frozen=True)
class WindowRef:
    """Points a violation at a summary window rather than one event."""
    window_from: datetime
    window_to: datetime

    def to_wire(self) -> dict:
        return {"from": format_ts(self.window_from), "to": format_ts(self.window_to)}


Ref = Union[EventRef, WindowRef]


def ref_from_wire(raw: dict) -> Ref:
    if "seq" in raw:
        return EventRef(device_id=raw["device_id"], seq_no=raw["seq"])
    return WindowRef(window_from=parse_ts(raw["from"], "from"),
                     window_to=parse_ts(raw["to"], "to"))


@dataclass(frozen=True)
class Violation:
    rule_id: RuleId
    ref: Ref
    detail: str

    @property
    def severity(self) -> Severity:
        return RULE_SEVERITY[self.rule_id]


@dataclass
class Alert:
    """An alert-manager record for one violation.

    delivered is False only at the silent level (logged, not surfaced);
    acknowledged implies delivered.
    """
    alert_id: str
    violation: Violation
    raised_at: datetime
    delivered: bool
    acknowledged: bool = False


@dataclass(frozen=True)
class ScreenCaptureRequest:
    """Instruction to snapshot the screen for a violation; the agent
    fulfils it from the triggering event's context."""
    alert_id: str
    ref: Ref


@dataclass(frozen=True)
class ScreenCapture:
    """Synthetic screen-state snapshot (no pixels): the foreground
    subject plus a content hash, enough to reproduce report rows."""
    alert_id: str
    at: datetime
    subject: str
    content_hash: str
    ref: Ref


VALID_APP_SOURCES = frozenset(s.value for s in AppSource)
_ALERT_LEVELS = frozenset(l.value for l in AlertLevel)


@dataclass(frozen=True)
class Policy:
    """Parent-set rules, versioned; every update strictly bumps version."""
    version: int = 1
    restricted_words: frozenset[str] = frozenset()
    blocked_url_substrings: frozenset[str] = frozenset()
    blocked_groups: frozenset[str] = frozenset()
    call_blocklist: frozenset[str] = frozenset()
    allowed_app_sources: frozenset[str] = frozenset(("trusted", "unknown"))
    max_social_time_s: int = 14_400
    max_daily_wifi_bytes: Optional[int] = None
    baseline_factor: float = 1.5
    alert_level: AlertLevel = AlertLevel.NOTIFY

    def __post_init__(self):
        # restricted words are stored case-folded: matching is case-insensitive
        object.__setattr__(self, "restricted_words",
                           frozenset(w.casefold() for w in self.restricted_words))

    def to_wire(self) -> dict:
        return {
            "version": self.version,
            "restricted_words": sorted(self.restricted_words),
            "blocked_url_substrings": sorted(self.blocked_url_substrings),
            "blocked_groups": sorted(self.blocked_groups),
            "call_blocklist": sorted(self.call_blocklist),
            "allowed_app_sources": sorted(self.allowed_app_sources),
            "max_social_time_s": self.max_social_time_s,
            "max_daily_wifi_bytes": self.max_daily_wifi_bytes,
            "baseline_factor": self.baseline_factor,
            "alert_level": self.alert_level.value,
        }

    def to_json(self) -> str:
        return canonical_json(self.to_wire())

    @classmethod
    def from_wire(cls, raw: dict, version: Optional[int] = None) -> "Policy":
        """Build from the policy JSON schema; raises ValueError on bad fields."""
        if not isinstance(raw, dict):
            raise ValueError("policy: expected a JSON object")

        def str_set(name: str) -> frozenset[str]:
            items = raw.get(name, [])
            if not isinstance(items, list) or not all(isinstance(i, str) for i in items):
                raise ValueError(f"{name}: expected a list of strings")
            return frozenset(items)

        sources = str_set("allowed_app_sources") if "allowed_app_sources" in raw \
            else frozenset(("trusted", "unknown"))
        if not sources <= VALID_APP_SOURCES:
            raise ValueError("allowed_app_sources: must be a subset of trusted/unknown")
        max_social = raw.get("max_social_time_s", 14_400)
        if not isinstance(max_social, int) or max_social < 0:
            raise ValueError("max_social_time_s: expected a non-negative integer")
        cap = raw.get("max_daily_wifi_bytes")
        if cap is not None and (not isinstance(cap, int) or cap < 0):
            raise ValueError("max_daily_wifi_bytes: expected a non-negative integer or null")
        factor = raw.get("baseline_factor", 1.5)
        if not isinstance(factor, (int, float)) or isinstance(factor, bool) or factor <= 1:
            raise ValueError("baseline_factor: expected a number > 1")
        level = raw.get("alert_level", "notify")
        if level not in _ALERT_LEVELS:
            raise ValueError("alert_level: must be silent, notify, or notify_capture")
        return cls(
            version=version if version is not None else int(raw.get("version", 1)),
            restricted_words=str_set("restricted_words"),
            blocked_url_substrings=str_set("blocked_url_substrings"),
            blocked_groups=str_set("blocked_groups"),
            call_blocklist=str_set("call_blocklist"),
            allowed_app_sources=sources,
            max_social_time_s=max_social,
            max_daily_wifi_bytes=cap,
            baseline_factor=float(factor),
            alert_level=AlertLevel(level),
        )

    def bumped(self, **changes) -> "Policy":
        """A copy with changes applied and the version strictly increased."""
        return replace(self, version=self.version + 1, **changes)


_TOKEN_RE = re.compile(r"[^\W_]+", re.UNICODE)


def match_restricted(text: str, words: frozenset[str]) -> list[str]:
    """Whole-token, case-insensitive restricted-word matches, each word
    reported at most once, in sorted order. Tokens are maximal runs of
    alphanumeric characters, so 'bet' does not match inside 'better'."""
    if not words:
        return []
    tokens = set(_TOKEN_RE.findall(text.casefold()))
    return sorted(words & tokens)


# --- adaptive usage baseline --------------------------------------------------

BASELINE_METRICS = ("wifi_bytes", "call_count", "url_count")


def metric_contribution(event: MonitoredEvent) -> tuple[Optional[str], int]:
    """Which daily metric an event feeds, and by how much."""
    p = event.payload
    if isinstance(p, WifiSample):
        return "wifi_bytes", p.bytes_rx + p.bytes_tx
    if isinstance(p, CallEvent):
        return "call_count", 1
    if isinstance(p, UrlVisit):
        return "url_count", 1
    return None, 0


@dataclass
class UsageBaseline:
    """Ring of the last 7 daily totals per metric plus the running
    totals of the current (not yet complete) day."""
    window: int = BASELINE_WINDOW_DAYS
    days: dict[str, deque] = field(default_factory=dict)
    current_day: Optional[date] = None
    current_totals: dict[str, int] = field(default_factory=dict)

    def __post_init__(self):
        for m in BASELINE_METRICS:
            self.days.setdefault(m, deque(maxlen=self.window))
            self.current_totals.setdefault(m, 0)

    def mean(self, metric: str) -> float:
        ring = self.days[metric]
        if not ring:
            return 0.0
        return sum(ring) / len(ring)

    def history_len(self, metric: str) -> int:
        return len(self.days[metric])

    def observe(self, event: MonitoredEvent) -> None:
        """Advance the day if needed, then add this event's contribution.

        Call before evaluate() so the rule sees totals including the event.
        """
        day = event.collected_at.date()
        if self.current_day is None:
            self.current_day = day
        elif day != self.current_day:
            # close out the previous day for every metric
            for m in BASELINE_METRICS:
                update_baseline(self, m, self.current_totals[m])
                self.current_totals[m] = 0
            self.current_day = day
        metric, amount = metric_contribution(event)
        if metric is not None:
            self.current_totals[metric] += amount


def update_baseline(b: UsageBaseline, metric: str, day_total: int) -> UsageBaseline:
    """Append a completed day's total, evicting beyond the window."""
    if day_total < 0:
        raise ValueError("day_total must be >= 0")
    b.days[metric].append(day_total)
    return b


# --- the filter ---------------------------------------------------------------

def _event_text(event: MonitoredEvent) -> Optional[str]:
    p = event.payload
    if isinstance(p, KeyLogChunk):
        return p.text
    if isinstance(p, SmsEvent):
        return p.body
    if isinstance(p, SocialEvent):
        if isinstance(p.variant, ChatMessage):
            return p.variant.text
        if isinstance(p.variant, Post):
            return p.variant.text
    return None


def evaluate(policy: Policy, event: MonitoredEvent,
             baseline: Optional[UsageBaseline] = None) -> list[Violation]:
    """Apply every applicable rule to one event. Pure given its inputs;
    the baseline is read, never written (see UsageBaseline.observe)."""
    out: list[Violation] = []
    ref = EventRef(event.device_id, event.seq_no)
    p = event.payload

    text = _event_text(event)
    if text is not None:
        matched = match_restricted(text, policy.restricted_words)
        if matched:
            out.append(Violation(RuleId.RESTRICTED_WORD, ref,
                                 "restricted words matched: " + ", ".join(matched)))

    if isinstance(p, UrlVisit) and policy.blocked_url_substrings:
        lowered = p.url.casefold()
        hits = sorted(s for s in policy.blocked_url_substrings if s.casefold() in lowered)
        if hits:
            out.append(Violation(RuleId.BLOCKED_URL, ref,
                                 "url contains blocked substring: " + ", ".join(hits)))

    if isinstance(p, CallEvent) and p.peer_number in policy.call_blocklist:
        out.append(Violation(RuleId.BLOCKED_CALL, ref,
                             f"call with blocked number {p.peer_number}"))

    if isinstance(p, AppChange) and p.action.value == "install" \
            and p.source.value not in policy.allowed_app_sources:
        out.append(Violation(RuleId.UNTRUSTED_APP, ref,
                             f"app install from {p.source.value} source: {p.package_id}"))

    if baseline is not None:
        metric, amount = metric_contribution(event)
        if metric is not None:
            total = baseline.current_totals[metric]
            before = total - amount
            if baseline.history_len(metric) >= BASELINE_MIN_HISTORY:
                threshold = policy.baseline_factor * baseline.mean(metric)
                if total > threshold >= before:
                    out.append(Violation(
                        RuleId.BASELINE_EXCEEDED, ref,
                        f"{metric} day total {total} exceeds "
                        f"{policy.baseline_factor}x baseline {baseline.mean(metric):.1f}"))
            if metric == "wifi_bytes" and policy.max_daily_wifi_bytes is not None:
                cap = policy.max_daily_wifi_bytes
                if total > cap >= before:
                    out.append(Violation(
                        RuleId.DATA_CAP_EXCEEDED, ref,
                        f"wifi day total {total} exceeds cap {cap}"))
    return out


def raise_alert(v: Violation, level: AlertLevel, *, alert_id: str,
                raised_at: datetime) -> tuple[Alert, Optional[ScreenCaptureRequest]]:
    """Always produce an Alert; silent alerts are logged undelivered.
    A capture request accompanies the alert only at notify_capture."""
    alert = Alert(alert_id=alert_id, violation=v, raised_at=raised_at,
                  delivered=level is not AlertLevel.SILENT)
    capture = ScreenCaptureRequest(alert_id=alert_id, ref=v.ref) \
        if level is AlertLevel.NOTIFY_CAPTURE else None
    return alert, capture


def capture_subject(event: MonitoredEvent) -> str:
    """What the synthetic snapshot shows: window title for key logs,
    the foreground url for visits, otherwise the event's own headline."""
    p = event.payload
    if isinstance(p, KeyLogChunk):
        return p.window_title
    if isinstance(p, UrlVisit):
        return p.url
    if isinstance(p, SmsEvent):
        return f"sms:{p.peer_number}"
    if isinstance(p, CallEvent):
        return f"call:{p.peer_number}"
    if isinstance(p, AppChange):
        return f"app:{p.package_id}"
    if isinstance(p, SocialEvent):
        return f"social:{p.variant_name}"
    return event.kind.value


def fulfil_capture(request: ScreenCaptureRequest, event: MonitoredEvent,
                   at: datetime) -> ScreenCapture:
    subject = capture_subject(event)
    digest = hashlib.sha256(
        f"{event.device_id}|{event.seq_no}|{subject}|{format_ts(at)}".encode()
    ).hexdigest()
    return ScreenCapture(alert_id=request.alert_id, at=at, subject=subject,
                         content_hash=digest, ref=request.ref)


# --- alert/capture wire codecs (ride the sync protocol as records) -----------

def alert_to_wire(a: Alert) -> dict:
    return {
        "alert_id": a.alert_id,
        "rule_id": a.violation.rule_id.value,
        "severity": a.violation.severity.value,
        "detail": a.violation.detail,
        "delivered": a.delivered,
        "ref": a.violation.ref.to_wire(),
    }


def alert_from_wire(raw: dict, raised_at: datetime) -> Alert:
    violation = Violation(rule_id=RuleId(raw["rule_id"]),
                          ref=ref_from_wire(raw["ref"]), detail=raw["detail"])
    return Alert(alert_id=raw["alert_id"], violation=violation,
                 raised_at=raised_at, delivered=bool(raw["delivered"]))


def capture_to_wire(c: ScreenCapture) -> dict:
    return {
        "alert_id": c.alert_id,
        "subject": c.subject,
        "content_hash": c.content_hash,
        "ref": c.ref.to_wire(),
    }


def capture_from_wire(raw: dict, at: datetime) -> ScreenCapture:
    return ScreenCapture(alert_id=raw["alert_id"], at=at, subject=raw["subject"],
                         content_hash=raw["content_hash"], ref=ref_from_wire(raw["ref"]))
