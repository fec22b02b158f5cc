"""Store-and-forward sync between agent repositories and the server.

Delivery contract: at-least-once transport plus idempotent ingestion
equals exactly-once visible effect. Batches carry a device's unacked
records in seq order; the server dedupes on (device, seq), stores events
alerts and captures into their own stores, and acks with the current
policy version so agents can pick up parent edits.

Wire format is canonical JSON (sorted keys), so equal batches encode to
identical bytes.
"""

from __future__ import annotations

import json
import urllib.error
import urllib.parse
import urllib.request
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Optional, Union

from .events import (
    CanonicalizeError, MonitoredEvent, canonical_json, canonicalize, parse_ts,
    serialize,
)
from .policy import (
    Alert, Policy, ScreenCapture, alert_from_wire, alert_to_wire,
    capture_from_wire, capture_to_wire,
)

if TYPE_CHECKING:
    from .server import ServerState

# Record kinds that ride the sync alongside monitor events.
ALERT_KIND = "alert"
CAPTURE_KIND = "screen_capture"


class MalformedBatch(ValueError):
    pass


class ValidationFailed(ValueError):
    def __init__(self, index: int, reason: str):
        self.index = index
        super().__init__(f"event {index}: {reason}")


class DecodeError(ValueError):
    pass


class TransportError(Exception):
    """Transient transport failure; the batch stays queued for retry."""


@dataclass
class Batch:
    """One upload unit: a device's pending records in seq order."""
    device_id: str
    batch_seq: int
    policy_version_seen: int
    events: list[dict] = field(default_factory=list)


@dataclass(frozen=True)
class Ack:
    batch_seq: int
    accepted: int
    duplicates: int
    current_policy_version: int

    def to_wire(self) -> dict:
        return {"ack": self.batch_seq, "accepted": self.accepted,
                "duplicates": self.duplicates,
                "current_policy_version": self.current_policy_version}

    @classmethod
    def from_wire(cls, raw: dict) -> "Ack":
        return cls(batch_seq=raw["ack"], accepted=raw["accepted"],
                   duplicates=raw["duplicates"],
                   current_policy_version=raw["current_policy_version"])


def record_from_event(e: MonitoredEvent) -> dict:
    """Wire record for a monitored event (device implied by the batch)."""
    record = serialize(e)
    del record["device_id"]
    return record


def encode_batch(b: Batch) -> bytes:
    return canonical_json({
        "device_id": b.device_id,
        "batch_seq": b.batch_seq,
        "policy_version_seen": b.policy_version_seen,
        "events": b.events,
    }).encode("utf-8")


def decode_batch(data: bytes) -> Batch:
    try:
        raw = json.loads(data.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise DecodeError(f"batch does not decode: {exc}")
    if not isinstance(raw, dict):
        raise DecodeError("batch must be a JSON object")
    try:
        device_id = raw["device_id"]
        batch_seq = raw["batch_seq"]
        policy_version_seen = raw["policy_version_seen"]
        events = raw["events"]
    except KeyError as exc:
        raise DecodeError(f"batch missing field {exc.args[0]!r}")
    if not isinstance(events, list):
        raise DecodeError("events: expected a list")
    return Batch(device_id=device_id, batch_seq=batch_seq,
                 policy_version_seen=policy_version_seen, events=events)


def drain_batch(repo, batch_max: int) -> Optional[Batch]:
    """Up to batch_max unacked records, oldest first. Read-only: records
    leave the repository only when their batch is acked, so repeated
    drains before an ack return the same prefix."""
    records = repo.unacked(batch_max)
    if not records:
        return None
    return Batch(device_id=repo.device_id,
                 batch_seq=repo.acked_batches + 1,
                 policy_version_seen=repo.policy_version_seen,
                 events=records)


DecodedRecord = tuple[int, str, Union[MonitoredEvent, tuple]]


def _decode_record(index: int, record: object, device_id: str) -> DecodedRecord:
    if not isinstance(record, dict):
        raise ValidationFailed(index, "expected a JSON object")
    if "device_id" in record and record["device_id"] != device_id:
        raise MalformedBatch(
            f"event {index}: device_id {record['device_id']!r} does not match "
            f"batch device {device_id!r}")
    kind = record.get("kind")
    seq = record.get("seq")
    if not isinstance(seq, int) or isinstance(seq, bool) or seq < 1:
        raise ValidationFailed(index, "seq: expected a positive integer")
    if kind == ALERT_KIND or kind == CAPTURE_KIND:
        try:
            ts = parse_ts(record["ts"])
            payload = record["payload"]
            if kind == ALERT_KIND:
                return (seq, ALERT_KIND, alert_from_wire(payload, ts))
            return (seq, CAPTURE_KIND, capture_from_wire(payload, ts))
        except (KeyError, TypeError, ValueError) as exc:
            raise ValidationFailed(index, f"bad {kind} record: {exc}")
    try:
        event = canonicalize({**{k: v for k, v in record.items() if k != "device_id"},
                              "device_id": device_id})
    except CanonicalizeError as exc:
        raise ValidationFailed(index, str(exc))
    return (seq, "event", event)


def ingest_batch(state: "ServerState", batch: Batch) -> Ack:
    """Validate and store a batch idempotently.

    Whole-batch semantics: any malformed or invalid record rejects the
    batch with no partial store. Records already seen (by (device, seq))
    count as duplicates and are not re-stored.
    """
    if not isinstance(batch.device_id, str) or not batch.device_id:
        raise MalformedBatch("device_id: expected a nonempty string")
    if not isinstance(batch.batch_seq, int) or batch.batch_seq < 1:
        raise MalformedBatch("batch_seq: expected a positive integer")
    if not isinstance(batch.policy_version_seen, int) or batch.policy_version_seen < 0:
        raise MalformedBatch("policy_version_seen: expected a non-negative integer")
    if not batch.events:
        raise MalformedBatch("events: a batch carries at least one record")
    decoded = [_decode_record(i, rec, batch.device_id)
               for i, rec in enumerate(batch.events)]
    last = 0
    for i, (seq, _, _) in enumerate(decoded):
        if seq <= last:
            raise MalformedBatch(f"event {i}: records not in ascending seq order")
        last = seq
    accepted, duplicates = state.store_batch(batch, decoded)
    return Ack(batch_seq=batch.batch_seq, accepted=accepted, duplicates=duplicates,
               current_policy_version=state.policy.version)


# --- transports -----------------------------------------------------------

class InMemoryTransport:
    """Direct in-process delivery to a server state; used by tests and
    the fault-injecting wrapper below."""

    def __init__(self, state: "ServerState"):
        self.state = state

    def send_batch(self, batch: Batch) -> Ack:
        # encode/decode round-trip so in-memory runs exercise the codec
        return ingest_batch(self.state, decode_batch(encode_batch(batch)))

    def fetch_policy(self) -> Policy:
        return self.state.policy


class FaultyTransport:
    """At-least-once chaos: drops requests, drops acks, duplicates and
    delays deliveries, driven by a seeded RNG. Every `force_success_every`
    consecutive attempts of one batch, delivery is clean, so runs always
    terminate. Call flush_pending() at the end of a schedule to deliver
    the remaining delayed copies."""

    def __init__(self, state: "ServerState", rng, force_success_every: int = 4):
        self.state = state
        self.rng = rng
        self.force = force_success_every
        self.pending: list[bytes] = []
        self.attempts: dict[tuple[str, int], int] = {}
        self.faults_injected = 0

    def _deliver(self, data: bytes) -> Ack:
        return ingest_batch(self.state, decode_batch(data))

    def send_batch(self, batch: Batch) -> Ack:
        data = encode_batch(batch)
        key = (batch.device_id, batch.batch_seq)
        self.attempts[key] = self.attempts.get(key, 0) + 1

        # sometimes an old delayed copy arrives first (reordering)
        while self.pending and self.rng.random() < 0.3:
            self._deliver(self.pending.pop(self.rng.randrange(len(self.pending))))

        if self.attempts[key] % self.force == 0:
            return self._deliver(data)
        roll = self.rng.random()
        if roll < 0.15:
            self.faults_injected += 1
            if self.rng.random() < 0.5:
                self.pending.append(data)  # not lost, just late
            raise TransportError("request dropped")
        if roll < 0.30:
            self.faults_injected += 1
            self._deliver(data)
            raise TransportError("ack dropped")
        if roll < 0.50:
            self.faults_injected += 1
            self.pending.append(data)  # duplicate delivery later
            return self._deliver(data)
        return self._deliver(data)

    def flush_pending(self) -> None:
        while self.pending:
            self._deliver(self.pending.pop())

    def fetch_policy(self) -> Policy:
        return self.state.policy


class HttpTransport:
    """JSON-over-HTTP client for the reporting server."""

    def __init__(self, base_url: str, timeout: float = 10.0):
        self.base_url = base_url.rstrip("/")
        self.timeout = timeout

    def send_batch(self, batch: Batch) -> Ack:
        request = urllib.request.Request(
            self.base_url + "/v1/ingest", data=encode_batch(batch),
            headers={"Content-Type": "application/json"}, method="POST")
        try:
            with urllib.request.urlopen(request, timeout=self.timeout) as resp:
                return Ack.from_wire(json.loads(resp.read().decode("utf-8")))
        except urllib.error.HTTPError as exc:
            if exc.code == 400:
                raise MalformedBatch(exc.read().decode("utf-8", "replace"))
            raise TransportError(f"ingest failed: HTTP {exc.code}")
        except (urllib.error.URLError, TimeoutError, ConnectionError, OSError) as exc:
            raise TransportError(f"server unreachable: {exc}")

    def fetch_policy(self) -> Policy:
        try:
            with urllib.request.urlopen(self.base_url + "/v1/policy",
                                        timeout=self.timeout) as resp:
                return Policy.from_wire(json.loads(resp.read().decode("utf-8")))
        except (urllib.error.URLError, TimeoutError, ConnectionError, OSError) as exc:
            raise TransportError(f"policy fetch failed: {exc}")


def alert_record(seq: int, ts: str, layer: str, alert: Alert) -> dict:
    return {"seq": seq, "ts": ts, "layer": layer, "kind": ALERT_KIND,
            "payload": alert_to_wire(alert)}


def capture_record(seq: int, ts: str, layer: str, capture: ScreenCapture) -> dict:
    return {"seq": seq, "ts": ts, "layer": layer, "kind": CAPTURE_KIND,
            "payload": capture_to_wire(capture)}
