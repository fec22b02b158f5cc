"""Simulated smartphone and desktop agents.

An agent replays a scenario through its monitor catalogue on a virtual
clock: every observation is appended to a durable local repository with
the next sequence number, counted in the per-stream state, and run
through the policy filter; pending records are uploaded in batches at a
fixed virtual sync interval, with a final drain at the end of the run.

Everything is deterministic: identical (config, scenario, policy) inputs
produce byte-identical repository files and wire bytes.

Social observations pass through both agent kinds (social activity
happens on the phone and the desktop alike); they are counted separately
from the layer's own streams.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
import os
import time
from dataclasses import dataclass
from datetime import timedelta
from enum import Enum
from typing import Optional, Union

from .events import (
    AppChange, BluetoothTransfer, CallEvent, Kind, Layer, KIND_LAYER,
    MonitoredEvent, SocialEvent, canonical_json, canonicalize, format_ts,
)
from .policy import (
    Policy, ScreenCapture, UsageBaseline, Violation, WindowRef,
    capture_subject, evaluate, raise_alert,
)
from .scenario import EPOCH, ScenarioLine, envelope
from .social import aggregate, check_thresholds
from .sync import (
    TransportError, alert_record, capture_record, drain_batch, record_from_event,
)

logger = logging.getLogger(__name__)


class AgentKind(str, Enum):
    SMARTPHONE = "smartphone"
    DESKTOP = "desktop"


class KindMismatch(ValueError):
    pass


class ServerUnreachable(RuntimeError):
    """Upload kept failing past the retry limit; collected events remain
    safe in the local repository."""


@dataclass
class SmartphoneState:
    """Per-stream counters of the smartphone layer's repository."""
    calls_in: int = 0
    calls_out: int = 0
    sms_in: int = 0
    sms_out: int = 0
    gps_samples: int = 0
    wifi_samples: int = 0
    bt_in: int = 0
    bt_out: int = 0
    app_installs: int = 0
    app_removals: int = 0

    def total(self) -> int:
        return sum(dataclasses.asdict(self).values())


@dataclass
class DesktopState:
    """Per-stream counters of the desktop layer's repository."""
    keylog_chunks: int = 0
    software_changes: int = 0
    url_visits: int = 0
    fs_ops: int = 0
    net_flows: int = 0

    def total(self) -> int:
        return sum(dataclasses.asdict(self).values())


LayerState = Union[SmartphoneState, DesktopState]


@dataclass
class AgentConfig:
    device_id: str
    agent_kind: AgentKind
    sync_interval_ms: int = 5_000
    batch_max: int = 50
    server_endpoint: str = ""
    policy_version: int = 0
    capture_interval_ms: Optional[int] = None  # optional timed snapshots, off by default
    retry_limit: int = 10

    def __post_init__(self):
        if isinstance(self.agent_kind, str):
            self.agent_kind = AgentKind(self.agent_kind)
        if self.sync_interval_ms <= 0:
            raise ValueError("sync_interval_ms must be > 0")
        if self.batch_max < 1:
            raise ValueError("batch_max must be >= 1")
        if self.retry_limit < 1:
            raise ValueError("retry_limit must be >= 1")


@dataclass
class AgentRunSummary:
    device_id: str
    events_collected: int = 0
    social_events: int = 0
    batches_sent: int = 0
    duplicates_redelivered: int = 0
    violations_found: int = 0
    alerts_raised: int = 0
    captures_taken: int = 0
    final_state: Optional[LayerState] = None

    def to_wire(self) -> dict:
        wire = dataclasses.asdict(self)
        return wire


# --- local repository -------------------------------------------------------

class InMemoryRepository:
    """Agent-local record log plus ack watermark, memory only."""

    def __init__(self, device_id: str):
        self.device_id = device_id
        self._records: list[dict] = []
        self.acked_seq = 0
        self.acked_batches = 0
        self.policy_version_seen = 0

    def next_seq(self) -> int:
        return (self._records[-1]["seq"] + 1) if self._records else 1

    def append(self, record: dict) -> None:
        self._records.append(record)

    def records(self) -> list[dict]:
        return list(self._records)

    def unacked(self, limit: int) -> list[dict]:
        pending = [r for r in self._records if r["seq"] > self.acked_seq]
        return pending[:limit]

    def unacked_count(self) -> int:
        return sum(1 for r in self._records if r["seq"] > self.acked_seq)

    def mark_acked(self, through_seq: int) -> None:
        self.acked_seq = max(self.acked_seq, through_seq)
        self.acked_batches += 1


class FileRepository(InMemoryRepository):
    """Durable variant: one JSON record per line in an append-only file,
    with the ack watermark in a sidecar file (atomic replace on update).
    Reopening the same path recovers all state, so an agent killed after
    append but before ack loses nothing."""

    def __init__(self, device_id: str, path):
        super().__init__(device_id)
        self.path = str(path)
        self.ack_path = self.path + ".ack"
        self._fh = None
        self._load()
        self._fh = open(self.path, "a", encoding="utf-8")

    def _load(self) -> None:
        if os.path.exists(self.path):
            with open(self.path, encoding="utf-8") as fh:
                for line in fh:
                    line = line.strip()
                    if not line:
                        continue
                    try:
                        self._records.append(json.loads(line))
                    except json.JSONDecodeError:
                        logger.warning("repository %s: dropping torn trailing record",
                                       self.path)
                        break
        if os.path.exists(self.ack_path):
            with open(self.ack_path, encoding="utf-8") as fh:
                try:
                    mark = json.load(fh)
                    self.acked_seq = int(mark.get("acked_seq", 0))
                    self.acked_batches = int(mark.get("acked_batches", 0))
                except (json.JSONDecodeError, ValueError):
                    logger.warning("repository %s: unreadable ack watermark", self.ack_path)

    def append(self, record: dict) -> None:
        super().append(record)
        self._fh.write(canonical_json(record) + "\n")
        self._fh.flush()

    def mark_acked(self, through_seq: int) -> None:
        super().mark_acked(through_seq)
        tmp = self.ack_path + ".tmp"
        with open(tmp, "w", encoding="utf-8") as fh:
            fh.write(canonical_json({"acked_seq": self.acked_seq,
                                     "acked_batches": self.acked_batches}))
        os.replace(tmp, self.ack_path)

    def close(self) -> None:
        if self._fh:
            self._fh.close()
            self._fh = None


# --- the agent ---------------------------------------------------------------

_AGENT_LAYER = {AgentKind.SMARTPHONE: Layer.SMARTPHONE, AgentKind.DESKTOP: Layer.DESKTOP}


class Agent:
    """One simulated device: monitors, local repository, filter, sync."""

    def __init__(self, config: AgentConfig, repo, transport, policy: Optional[Policy] = None):
        self.config = config
        self.repo = repo
        self.transport = transport
        self.policy = policy
        self.baseline = UsageBaseline()
        self.state: LayerState = (SmartphoneState()
                                  if config.agent_kind is AgentKind.SMARTPHONE
                                  else DesktopState())
        self.summary = AgentRunSummary(device_id=config.device_id)
        self._social_seen: list[SocialEvent] = []
        self._last_event_ms = 0
        self._recover_counters()

    # repository replay: counters reflect everything the repo holds
    def _recover_counters(self) -> None:
        monitor_kinds = frozenset(k.value for k in Kind)
        for record in self.repo.records():
            if record.get("kind") in monitor_kinds:
                try:
                    event = canonicalize({**record, "device_id": self.config.device_id})
                except ValueError:
                    continue
                self._bump_counters(event, recovered=True)

    def snapshot(self) -> LayerState:
        """Pure read of the per-stream counters."""
        return dataclasses.replace(self.state)

    def _bump_counters(self, event: MonitoredEvent, recovered: bool = False) -> None:
        p = event.payload
        s = self.state
        if isinstance(p, SocialEvent):
            if not recovered:
                self.summary.social_events += 1
            return
        if isinstance(s, SmartphoneState):
            if isinstance(p, CallEvent):
                field_name = "calls_in" if p.direction.value == "incoming" else "calls_out"
            elif event.kind is Kind.SMS:
                field_name = "sms_in" if p.direction.value == "incoming" else "sms_out"
            elif event.kind is Kind.GPS:
                field_name = "gps_samples"
            elif event.kind is Kind.WIFI:
                field_name = "wifi_samples"
            elif isinstance(p, BluetoothTransfer):
                field_name = "bt_in" if p.direction.value == "incoming" else "bt_out"
            elif isinstance(p, AppChange):
                field_name = "app_installs" if p.action.value == "install" else "app_removals"
            else:
                raise KindMismatch(f"{event.kind.value} is not a smartphone stream")
        else:
            field_name = {Kind.KEYLOG: "keylog_chunks", Kind.SOFTWARE: "software_changes",
                          Kind.URL: "url_visits", Kind.FILE: "fs_ops",
                          Kind.NET: "net_flows"}.get(event.kind)
            if field_name is None:
                raise KindMismatch(f"{event.kind.value} is not a desktop stream")
        setattr(s, field_name, getattr(s, field_name) + 1)

    def collect(self, line: ScenarioLine) -> MonitoredEvent:
        """Append one observation to the repository and count its stream.

        Accepts the agent's own layer plus social pass-through; offering a
        desktop observation to a smartphone agent (or vice versa) raises
        KindMismatch.
        """
        layer = KIND_LAYER[line.kind]
        own_layer = _AGENT_LAYER[self.config.agent_kind]
        if layer is not Layer.SOCIAL and layer is not own_layer:
            raise KindMismatch(
                f"{line.kind.value} events belong to the {layer.value} layer, "
                f"not to a {self.config.agent_kind.value} agent")
        event = envelope(line, self.config.device_id, self.repo.next_seq())
        self.repo.append(record_from_event(event))
        self._bump_counters(event)
        if isinstance(event.payload, SocialEvent):
            self._social_seen.append(event.payload)
        self.summary.events_collected += 1
        self._last_event_ms = max(self._last_event_ms, line.at_ms)
        return event

    # --- filter + alert manager ---

    def _filter(self, event: MonitoredEvent) -> None:
        if self.policy is None:
            return
        self.baseline.observe(event)
        for violation in evaluate(self.policy, event, self.baseline):
            self._raise(violation, trigger=event)

    def _raise(self, violation: Violation, trigger: Optional[MonitoredEvent]) -> None:
        self.summary.violations_found += 1
        layer = _AGENT_LAYER[self.config.agent_kind].value
        at = trigger.collected_at if trigger is not None \
            else EPOCH + timedelta(milliseconds=self._last_event_ms)
        ts = format_ts(at)
        seq = self.repo.next_seq()
        alert_id = f"{self.config.device_id}-a{seq}"
        alert, capture_req = raise_alert(violation, self.policy.alert_level,
                                         alert_id=alert_id, raised_at=at)
        self.repo.append(alert_record(seq, ts, layer, alert))
        self.summary.alerts_raised += 1
        if capture_req is not None:
            subject = capture_subject(trigger) if trigger is not None else "social-activity"
            digest = hashlib.sha256(
                f"{self.config.device_id}|{seq}|{subject}|{ts}".encode()).hexdigest()
            capture = ScreenCapture(alert_id=alert_id, at=at, subject=subject,
                                    content_hash=digest, ref=violation.ref)
            cap_seq = self.repo.next_seq()
            self.repo.append(capture_record(cap_seq, ts, layer, capture))
            self.summary.captures_taken += 1

    def _interval_capture(self, at_ms: int) -> None:
        ts = format_ts(EPOCH + timedelta(milliseconds=at_ms))
        seq = self.repo.next_seq()
        subject = "interval-snapshot"
        digest = hashlib.sha256(
            f"{self.config.device_id}|{seq}|{subject}|{ts}".encode()).hexdigest()
        capture = ScreenCapture(alert_id=f"{self.config.device_id}-t{seq}",
                                at=EPOCH + timedelta(milliseconds=at_ms),
                                subject=subject, content_hash=digest,
                                ref=WindowRef(EPOCH, EPOCH + timedelta(milliseconds=at_ms)))
        self.repo.append(capture_record(
            seq, ts, _AGENT_LAYER[self.config.agent_kind].value, capture))
        self.summary.captures_taken += 1

    def _social_threshold_check(self, end_ms: int) -> None:
        if self.policy is None or not self._social_seen:
            return
        window_to = EPOCH + timedelta(milliseconds=end_ms + 1)
        summary = aggregate(self._social_seen, EPOCH, window_to)
        for violation in check_thresholds(summary, self.policy):
            self._raise(violation, trigger=None)

    # --- sync ---

    def _refresh_policy(self, current_version: int) -> None:
        if self.policy is not None and current_version <= self.policy.version:
            return
        try:
            fetched = self.transport.fetch_policy()
        except TransportError:
            logger.warning("policy refresh failed; keeping version %s",
                           self.policy.version if self.policy else None)
            return
        if self.policy is None or fetched.version > self.policy.version:
            self.policy = fetched
            self.repo.policy_version_seen = fetched.version

    def _sync_once(self) -> bool:
        """Drain everything pending; False when the transport failed and a
        retry is needed (one sync interval later, per the backoff rule)."""
        while True:
            batch = drain_batch(self.repo, self.config.batch_max)
            if batch is None:
                return True
            try:
                ack = self.transport.send_batch(batch)
            except TransportError as exc:
                logger.debug("upload failed, will retry: %s", exc)
                return False
            self.repo.mark_acked(batch.events[-1]["seq"])
            self.summary.batches_sent += 1
            self.summary.duplicates_redelivered += ack.duplicates
            self._refresh_policy(ack.current_policy_version)

    def run(self, scenario: list[ScenarioLine], instant: bool = True,
            speed: float = 1.0) -> AgentRunSummary:
        """Replay a scenario to completion; see module docstring."""
        if self.policy is None:
            self.policy = self.transport.fetch_policy()
        self.repo.policy_version_seen = self.policy.version
        interval = self.config.sync_interval_ms
        capture_every = self.config.capture_interval_ms
        next_tick = interval
        next_capture = capture_every if capture_every else None
        clock_ms = 0
        for line in scenario:
            while next_tick <= line.at_ms or \
                    (next_capture is not None and next_capture <= line.at_ms):
                if next_capture is not None and next_capture <= next_tick:
                    self._pace(instant, speed, next_capture - clock_ms)
                    clock_ms = next_capture
                    self._interval_capture(next_capture)
                    next_capture += capture_every
                else:
                    self._pace(instant, speed, next_tick - clock_ms)
                    clock_ms = next_tick
                    self._sync_once()
                    next_tick += interval
            self._pace(instant, speed, line.at_ms - clock_ms)
            clock_ms = line.at_ms
            event = self.collect(line)
            self._filter(event)
        self._social_threshold_check(clock_ms)
        self._final_drain(instant, speed)
        self.summary.final_state = self.snapshot()
        return self.summary

    def _pace(self, instant: bool, speed: float, delta_ms: int) -> None:
        if not instant and delta_ms > 0 and speed > 0:
            time.sleep(delta_ms / 1000.0 / speed)

    def _final_drain(self, instant: bool, speed: float) -> None:
        failures = 0
        while self.repo.unacked_count():
            if self._sync_once():
                failures = 0
                continue
            failures += 1
            if failures >= self.config.retry_limit:
                raise ServerUnreachable(
                    f"{self.repo.unacked_count()} records still pending after "
                    f"{failures} failed uploads; they remain in the local repository")
            self._pace(instant, speed, self.config.sync_interval_ms)


def run_agent(config: AgentConfig, scenario: list[ScenarioLine], transport,
              repo=None, policy: Optional[Policy] = None, instant: bool = True,
              speed: float = 1.0) -> AgentRunSummary:
    """Convenience wrapper: build an Agent and replay a scenario."""
    agent = Agent(config, repo if repo is not None else InMemoryRepository(config.device_id),
                  transport, policy=policy)
    return agent.run(scenario, instant=instant, speed=speed)
