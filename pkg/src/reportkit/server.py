"""Reporting layer: consolidated store, named reports, and the HTTP API.

The server ingests batches from all agents, keeps per-device event,
alert, and capture stores in seq order, and builds the report kinds the
parent consumes: screens, apps, software, keylog, calls_sms, social.
The key-log report deliberately contains only chunks with at least one
restricted-word hit, each row annotated with the matched words.

Persistence is a plain directory of JSON-lines files (one per device
plus the policy and alert-ack logs) so every byte is inspectable; report
building is deterministic for a fixed store, and rebuilding a report
from an unchanged store yields byte-identical output.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import mimetypes
import os
import threading
import urllib.parse
from dataclasses import dataclass, field
from datetime import datetime
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from typing import Optional

from .events import (
    AppChange, CallEvent, GpsSample, KeyLogChunk, Kind, MonitoredEvent,
    SmsEvent, SocialEvent, SoftwareChange, canonical_json, format_ts,
    parse_ts, payload_to_wire,
)
from .policy import Alert, Policy, RuleId, ScreenCapture, match_restricted
from . import sync as sync_mod

logger = logging.getLogger(__name__)

EARTH_RADIUS_M = 6_371_000.0

REPORT_KINDS = ("screens", "apps", "software", "keylog", "calls_sms", "social")

STORE_DIR_ENV = "REPORT_STORE_DIR"


class UnknownDevice(KeyError):
    pass


class EmptyWindow(ValueError):
    pass


def haversine_m(lat1: float, lon1: float, lat2: float, lon2: float) -> float:
    """Great-circle distance in meters on a spherical earth."""
    p1, p2 = math.radians(lat1), math.radians(lat2)
    dp = p2 - p1
    dl = math.radians(lon2 - lon1)
    a = math.sin(dp / 2) ** 2 + math.cos(p1) * math.cos(p2) * math.sin(dl / 2) ** 2
    return 2 * EARTH_RADIUS_M * math.asin(math.sqrt(a))


@dataclass
class DeviceStore:
    """Everything the server holds for one device, keyed by seq."""
    device_id: str
    events: dict[int, MonitoredEvent] = field(default_factory=dict)
    alerts: dict[int, Alert] = field(default_factory=dict)
    captures: dict[int, ScreenCapture] = field(default_factory=dict)
    seen: set[int] = field(default_factory=set)
    last_batch_seq: int = 0
    policy_version_seen: Optional[int] = None
    last_seen: Optional[datetime] = None

    def events_in_order(self) -> list[MonitoredEvent]:
        return [self.events[s] for s in sorted(self.events)]

    def gaps(self) -> list[list[int]]:
        """Missing seq ranges below the highest seq seen."""
        if not self.seen:
            return []
        out: list[list[int]] = []
        expected = 1
        for seq in sorted(self.seen):
            if seq > expected:
                out.append([expected, seq - 1])
            expected = seq + 1
        return out

    def newest_ts(self) -> Optional[datetime]:
        candidates = [e.collected_at for e in self.events.values()]
        candidates += [a.raised_at for a in self.alerts.values()]
        candidates += [c.at for c in self.captures.values()]
        return max(candidates) if candidates else None


class ServerState:
    """Consolidated store for all devices plus the active policy.

    Per-device effects are serialized by a per-device lock; the policy
    has its own lock. With store_dir set, every accepted record is
    appended to that device's JSON-lines file and reloaded on restart.
    """

    def __init__(self, store_dir: Optional[str] = None, policy: Optional[Policy] = None):
        self.devices: dict[str, DeviceStore] = {}
        self._policy = policy or Policy()
        self._policy_lock = threading.Lock()
        self._registry_lock = threading.Lock()
        self._device_locks: dict[str, threading.Lock] = {}
        self.store_dir = store_dir
        if store_dir:
            os.makedirs(store_dir, exist_ok=True)
            self._load()

    # --- policy ---

    @property
    def policy(self) -> Policy:
        with self._policy_lock:
            return self._policy

    def put_policy(self, raw_without_version: dict) -> int:
        """Replace the policy from its JSON schema; version strictly bumps."""
        with self._policy_lock:
            new = Policy.from_wire(raw_without_version, version=self._policy.version + 1)
            self._policy = new
            if self.store_dir:
                path = os.path.join(self.store_dir, "policy.json")
                tmp = path + ".tmp"
                with open(tmp, "w", encoding="utf-8") as fh:
                    fh.write(new.to_json())
                os.replace(tmp, path)
            return new.version

    # --- ingestion ---

    def _lock_for(self, device_id: str) -> threading.Lock:
        with self._registry_lock:
            return self._device_locks.setdefault(device_id, threading.Lock())

    def device(self, device_id: str) -> DeviceStore:
        with self._registry_lock:
            return self.devices.setdefault(device_id, DeviceStore(device_id=device_id))

    def require_device(self, device_id: str) -> DeviceStore:
        ds = self.devices.get(device_id)
        if ds is None:
            raise UnknownDevice(device_id)
        return ds

    def snapshot_device(self, device_id: str) -> DeviceStore:
        """Consistent read snapshot of one device's stores. Taken under the
        device lock, so a report never sees a half-applied batch."""
        ds = self.require_device(device_id)
        with self._lock_for(device_id):
            return DeviceStore(
                device_id=ds.device_id,
                events=dict(ds.events),
                alerts={seq: Alert(alert_id=a.alert_id, violation=a.violation,
                                   raised_at=a.raised_at, delivered=a.delivered,
                                   acknowledged=a.acknowledged)
                        for seq, a in ds.alerts.items()},
                captures=dict(ds.captures),
                seen=set(ds.seen),
                last_batch_seq=ds.last_batch_seq,
                policy_version_seen=ds.policy_version_seen,
                last_seen=ds.last_seen,
            )

    def store_batch(self, batch, decoded: list[tuple]) -> tuple[int, int]:
        """Store decoded batch records idempotently; returns (accepted, duplicates)."""
        with self._lock_for(batch.device_id):
            ds = self.device(batch.device_id)
            accepted = duplicates = 0
            for (seq, category, obj), raw in zip(decoded, batch.events):
                if seq in ds.seen:
                    duplicates += 1
                    continue
                ds.seen.add(seq)
                if category == "event":
                    ds.events[seq] = obj
                elif category == sync_mod.ALERT_KIND:
                    ds.alerts[seq] = obj
                else:
                    ds.captures[seq] = obj
                accepted += 1
                self._persist_record(batch.device_id, raw)
            ds.last_batch_seq = max(ds.last_batch_seq, batch.batch_seq)
            ds.policy_version_seen = batch.policy_version_seen
            newest = ds.newest_ts()
            if newest is not None:
                ds.last_seen = newest
            return accepted, duplicates

    def ack_alert(self, alert_id: str) -> bool:
        """Mark an alert acknowledged (and therefore delivered)."""
        for device_id in list(self.devices):
            with self._lock_for(device_id):
                for alert in self.devices[device_id].alerts.values():
                    if alert.alert_id == alert_id:
                        alert.acknowledged = True
                        alert.delivered = True
                        self._persist_ack(alert_id)
                        return True
        return False

    # --- persistence ---

    def _device_path(self, device_id: str) -> str:
        safe = urllib.parse.quote(device_id, safe="")
        return os.path.join(self.store_dir, f"{safe}.jsonl")

    def _persist_record(self, device_id: str, raw: dict) -> None:
        if not self.store_dir:
            return
        with open(self._device_path(device_id), "a", encoding="utf-8") as fh:
            fh.write(canonical_json(raw) + "\n")

    def _persist_ack(self, alert_id: str) -> None:
        if not self.store_dir:
            return
        with open(os.path.join(self.store_dir, "alert-acks.jsonl"), "a",
                  encoding="utf-8") as fh:
            fh.write(canonical_json({"alert_ack": alert_id}) + "\n")

    def _load(self) -> None:
        policy_path = os.path.join(self.store_dir, "policy.json")
        if os.path.exists(policy_path):
            with open(policy_path, encoding="utf-8") as fh:
                self._policy = Policy.from_wire(json.load(fh))
        for name in sorted(os.listdir(self.store_dir)):
            if not name.endswith(".jsonl") or name == "alert-acks.jsonl":
                continue
            device_id = urllib.parse.unquote(name[:-len(".jsonl")])
            ds = self.device(device_id)
            with open(os.path.join(self.store_dir, name), encoding="utf-8") as fh:
                for line in fh:
                    line = line.strip()
                    if not line:
                        continue
                    try:
                        raw = json.loads(line)
                        seq, category, obj = sync_mod._decode_record(0, raw, device_id)
                    except ValueError:
                        logger.warning("store %s: skipping unreadable record", name)
                        continue
                    if seq in ds.seen:
                        continue
                    ds.seen.add(seq)
                    if category == "event":
                        ds.events[seq] = obj
                    elif category == sync_mod.ALERT_KIND:
                        ds.alerts[seq] = obj
                    else:
                        ds.captures[seq] = obj
            ds.last_seen = ds.newest_ts()
        acks = os.path.join(self.store_dir, "alert-acks.jsonl")
        if os.path.exists(acks):
            with open(acks, encoding="utf-8") as fh:
                wanted = set()
                for line in fh:
                    line = line.strip()
                    if line:
                        try:
                            wanted.add(json.loads(line)["alert_ack"])
                        except (json.JSONDecodeError, KeyError):
                            continue
            for ds in self.devices.values():
                for alert in ds.alerts.values():
                    if alert.alert_id in wanted:
                        alert.acknowledged = True
                        alert.delivered = True

    # --- queries ---

    def alert_rows(self, since: Optional[datetime] = None) -> list[dict]:
        """All alerts across devices, newest first."""
        rows = []
        for device_id in sorted(self.devices):
            ds = self.snapshot_device(device_id)
            for seq, alert in ds.alerts.items():
                if since is not None and alert.raised_at < since:
                    continue
                rows.append({
                    "alert_id": alert.alert_id,
                    "device_id": device_id,
                    "rule_id": alert.violation.rule_id.value,
                    "severity": alert.violation.severity.value,
                    "detail": alert.violation.detail,
                    "raised_at": format_ts(alert.raised_at),
                    "delivered": alert.delivered,
                    "acknowledged": alert.acknowledged,
                    "ref": alert.violation.ref.to_wire(),
                    "seq": seq,
                })
        rows.sort(key=lambda r: (r["raised_at"], r["device_id"], r["seq"]), reverse=True)
        for r in rows:
            del r["seq"]
        return rows

    def device_rows(self) -> list[dict]:
        rows = []
        for device_id in sorted(self.devices):
            ds = self.snapshot_device(device_id)
            rows.append({
                "device_id": device_id,
                "last_seen": format_ts(ds.last_seen) if ds.last_seen else None,
                "event_count": len(ds.events),
                "alert_count": len(ds.alerts),
                "capture_count": len(ds.captures),
                "policy_version_seen": ds.policy_version_seen,
                "gaps": ds.gaps(),
            })
        return rows


# --- reports -------------------------------------------------------------------

@dataclass
class Report:
    kind: str
    device_id: str
    window_from: datetime
    window_to: datetime
    generated_at: datetime
    rows: list[dict]

    def to_wire(self) -> dict:
        return {
            "kind": self.kind,
            "device_id": self.device_id,
            "window": {"from": format_ts(self.window_from), "to": format_ts(self.window_to)},
            "generated_at": format_ts(self.generated_at),
            "rows": self.rows,
        }

    def to_json(self) -> str:
        return canonical_json(self.to_wire())

    def to_csv(self) -> str:
        buf = io.StringIO()
        columns = _CSV_COLUMNS[self.kind]
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(columns)
        for row in self.rows:
            writer.writerow([_csv_cell(row.get(c)) for c in columns])
        return buf.getvalue()


_CSV_COLUMNS = {
    "screens": ["at", "subject", "content_hash", "alert_id", "seq"],
    "apps": ["at", "action", "package_id", "source", "seq"],
    "software": ["at", "action", "name", "publisher", "seq"],
    "keylog": ["at", "window_title", "matched_words", "text", "seq"],
    "calls_sms": ["at", "record", "direction", "peer", "duration_s", "body", "seq"],
    "social": ["at", "variant", "detail", "seq"],
}


def _csv_cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, list):
        return "|".join(str(v) for v in value)
    if isinstance(value, dict):
        return canonical_json(value)
    return str(value)


def _in_window(at: datetime, window_from: datetime, window_to: datetime) -> bool:
    return window_from <= at < window_to


def build_report(state: ServerState, kind: str, device_id: str,
                 window_from: datetime, window_to: datetime) -> Report:
    """Build one named report over [from, to). Deterministic for a fixed
    store; the keylog report applies the current policy's restricted
    words and keeps only chunks with at least one hit."""
    if kind not in REPORT_KINDS:
        raise ValueError(f"unknown report kind {kind!r}")
    if window_from >= window_to:
        raise EmptyWindow("window from must precede to")
    ds = state.snapshot_device(device_id)
    rows: list[dict] = []
    if kind == "screens":
        for seq in sorted(ds.captures):
            c = ds.captures[seq]
            if _in_window(c.at, window_from, window_to):
                rows.append({"at": format_ts(c.at), "subject": c.subject,
                             "content_hash": c.content_hash, "alert_id": c.alert_id,
                             "seq": seq})
    elif kind in ("apps", "software"):
        wanted = AppChange if kind == "apps" else SoftwareChange
        for event in ds.events_in_order():
            p = event.payload
            if isinstance(p, wanted) and _in_window(event.collected_at, window_from, window_to):
                row = {"at": format_ts(event.collected_at), "action": p.action.value,
                       "seq": event.seq_no}
                if isinstance(p, AppChange):
                    row.update(package_id=p.package_id, source=p.source.value)
                else:
                    row.update(name=p.name, publisher=p.publisher)
                rows.append(row)
    elif kind == "keylog":
        words = state.policy.restricted_words
        for event in ds.events_in_order():
            p = event.payload
            if not isinstance(p, KeyLogChunk):
                continue
            if not _in_window(event.collected_at, window_from, window_to):
                continue
            matched = match_restricted(p.text, words)
            if matched:
                rows.append({"at": format_ts(event.collected_at),
                             "window_title": p.window_title,
                             "matched_words": matched, "text": p.text,
                             "seq": event.seq_no})
    elif kind == "calls_sms":
        for event in ds.events_in_order():
            p = event.payload
            if not _in_window(event.collected_at, window_from, window_to):
                continue
            if isinstance(p, CallEvent):
                rows.append({"at": format_ts(event.collected_at), "record": "call",
                             "direction": p.direction.value, "peer": p.peer_number,
                             "duration_s": p.duration_s, "body": None,
                             "seq": event.seq_no})
            elif isinstance(p, SmsEvent):
                rows.append({"at": format_ts(event.collected_at), "record": "sms",
                             "direction": p.direction.value, "peer": p.peer_number,
                             "duration_s": None, "body": p.body, "seq": event.seq_no})
    elif kind == "social":
        for event in ds.events_in_order():
            p = event.payload
            if isinstance(p, SocialEvent) and _in_window(event.collected_at,
                                                         window_from, window_to):
                detail = payload_to_wire(p)
                detail.pop("variant")
                detail.pop("at")
                rows.append({"at": format_ts(event.collected_at),
                             "variant": p.variant_name, "detail": detail,
                             "seq": event.seq_no})
    rows.sort(key=lambda r: (r["at"], r["seq"]))
    generated_at = ds.newest_ts() or window_to
    return Report(kind=kind, device_id=device_id, window_from=window_from,
                  window_to=window_to, generated_at=generated_at, rows=rows)


@dataclass
class ConsolidatedUsage:
    """Cross-device rollup: per-kind event counts and one time-ordered
    alert timeline covering every requested device."""
    window_from: datetime
    window_to: datetime
    devices: dict[str, int]
    event_counts: dict[str, int]
    alert_timeline: list[dict]

    @property
    def total_events(self) -> int:
        return sum(self.devices.values())

    def to_wire(self) -> dict:
        return {
            "window": {"from": format_ts(self.window_from), "to": format_ts(self.window_to)},
            "devices": self.devices,
            "event_counts": self.event_counts,
            "total_events": self.total_events,
            "alert_timeline": self.alert_timeline,
        }


def consolidate(state: ServerState, device_ids: list[str],
                window_from: datetime, window_to: datetime) -> ConsolidatedUsage:
    """Merged per-kind counts plus a unified alert timeline across devices."""
    if not device_ids:
        raise ValueError("need at least one device")
    if window_from >= window_to:
        raise EmptyWindow("window from must precede to")
    counts: dict[str, int] = {}
    per_device: dict[str, int] = {}
    timeline: list[dict] = []
    for device_id in device_ids:
        ds = state.snapshot_device(device_id)
        n = 0
        for event in ds.events_in_order():
            if _in_window(event.collected_at, window_from, window_to):
                counts[event.kind.value] = counts.get(event.kind.value, 0) + 1
                n += 1
        per_device[device_id] = n
        for seq in sorted(ds.alerts):
            alert = ds.alerts[seq]
            if _in_window(alert.raised_at, window_from, window_to):
                timeline.append({"at": format_ts(alert.raised_at), "device_id": device_id,
                                 "alert_id": alert.alert_id,
                                 "rule_id": alert.violation.rule_id.value,
                                 "severity": alert.violation.severity.value,
                                 "detail": alert.violation.detail})
    timeline.sort(key=lambda r: (r["at"], r["device_id"], r["alert_id"]))
    return ConsolidatedUsage(window_from=window_from, window_to=window_to,
                             devices=per_device,
                             event_counts=dict(sorted(counts.items())),
                             alert_timeline=timeline)


def movement_summary(state: ServerState, device_id: str,
                     window_from: datetime, window_to: datetime) -> dict:
    """Total great-circle distance over the device's GPS track in window."""
    ds = state.snapshot_device(device_id)
    samples = [e.payload for e in ds.events_in_order()
               if isinstance(e.payload, GpsSample)
               and _in_window(e.collected_at, window_from, window_to)]
    distance = 0.0
    for a, b in zip(samples, samples[1:]):
        distance += haversine_m(a.lat, a.lon, b.lat, b.lon)
    return {"total_distance_m": distance, "sample_count": len(samples)}


def restricted_word_violation_count(state: ServerState, device_id: str,
                                    window_from: datetime, window_to: datetime,
                                    event_kind: Optional[Kind] = Kind.KEYLOG) -> int:
    """Stored restricted-word violations whose triggering event lies in the
    window (optionally filtered to one event kind)."""
    ds = state.snapshot_device(device_id)
    count = 0
    for alert in ds.alerts.values():
        if alert.violation.rule_id is not RuleId.RESTRICTED_WORD:
            continue
        ref = alert.violation.ref
        event = ds.events.get(getattr(ref, "seq_no", -1))
        if event is None:
            continue
        if event_kind is not None and event.kind is not event_kind:
            continue
        if _in_window(event.collected_at, window_from, window_to):
            count += 1
    return count


# --- HTTP layer ------------------------------------------------------------------

class _Handler(BaseHTTPRequestHandler):
    server_version = "reportd/0.1"
    protocol_version = "HTTP/1.1"

    # set by make_server()
    state: ServerState = None
    ui_dir: Optional[str] = None

    def log_message(self, fmt, *args):  # route through logging, not stderr
        logger.debug("%s - %s", self.address_string(), fmt % args)

    # --- helpers ---

    def _send(self, code: int, body: bytes, content_type: str = "application/json") -> None:
        self.send_response(code)
        self.send_header("Content-Type", content_type)
        self.send_header("Content-Length", str(len(body)))
        self.send_header("Access-Control-Allow-Origin", "*")
        self.end_headers()
        self.wfile.write(body)

    def _send_json(self, code: int, obj) -> None:
        self._send(code, canonical_json(obj).encode("utf-8"))

    def _error(self, code: int, message: str) -> None:
        self._send_json(code, {"error": message})

    def _read_body(self) -> bytes:
        length = int(self.headers.get("Content-Length", 0))
        return self.rfile.read(length) if length else b""

    # --- routing ---

    def do_GET(self):
        parsed = urllib.parse.urlparse(self.path)
        parts = [p for p in parsed.path.split("/") if p]
        query = urllib.parse.parse_qs(parsed.query)
        try:
            if parts == ["v1", "policy"]:
                self._send_json(200, self.state.policy.to_wire())
            elif parts == ["v1", "devices"]:
                self._send_json(200, {"devices": self.state.device_rows(),
                                      "current_policy_version": self.state.policy.version})
            elif parts == ["v1", "alerts"]:
                since = None
                if "since" in query:
                    since = parse_ts(query["since"][0], "since")
                self._send_json(200, {"alerts": self.state.alert_rows(since)})
            elif len(parts) == 4 and parts[:2] == ["v1", "reports"]:
                self._get_report(urllib.parse.unquote(parts[2]), parts[3], query)
            elif parts[:1] == ["ui"] or parsed.path == "/":
                self._get_static(parts[1:] if parts[:1] == ["ui"] else [])
            else:
                self._error(404, "no such resource")
        except ValueError as exc:
            self._error(400, str(exc))

    def _get_report(self, device_id: str, kind: str, query: dict):
        if kind not in REPORT_KINDS:
            self._error(404, f"unknown report kind {kind!r}")
            return
        try:
            window_from = parse_ts(query["from"][0], "from")
            window_to = parse_ts(query["to"][0], "to")
        except KeyError as exc:
            self._error(400, f"missing query parameter {exc.args[0]!r}")
            return
        fmt = query.get("format", ["json"])[0]
        if fmt not in ("json", "csv"):
            self._error(400, "format must be json or csv")
            return
        try:
            report = build_report(self.state, kind, device_id, window_from, window_to)
        except UnknownDevice:
            self._error(404, f"unknown device {device_id!r}")
            return
        except EmptyWindow as exc:
            self._error(400, str(exc))
            return
        if fmt == "csv":
            self._send(200, report.to_csv().encode("utf-8"), "text/csv; charset=utf-8")
        else:
            self._send(200, report.to_json().encode("utf-8"))

    def _get_static(self, parts: list[str]):
        if not self.ui_dir:
            self._error(404, "dashboard assets not configured (--ui-dir)")
            return
        rel = "/".join(parts) or "index.html"
        root = os.path.realpath(self.ui_dir)
        full = os.path.realpath(os.path.join(root, rel))
        if not full.startswith(root + os.sep) and full != root:
            self._error(404, "not found")
            return
        if os.path.isdir(full):
            full = os.path.join(full, "index.html")
        if not os.path.isfile(full):
            self._error(404, "not found")
            return
        ctype = mimetypes.guess_type(full)[0] or "application/octet-stream"
        with open(full, "rb") as fh:
            self._send(200, fh.read(), ctype)

    def do_POST(self):
        parts = [p for p in urllib.parse.urlparse(self.path).path.split("/") if p]
        if parts == ["v1", "ingest"]:
            body = self._read_body()
            try:
                batch = sync_mod.decode_batch(body)
                ack = sync_mod.ingest_batch(self.state, batch)
            except (sync_mod.DecodeError, sync_mod.MalformedBatch,
                    sync_mod.ValidationFailed) as exc:
                self._error(400, str(exc))
                return
            self._send_json(200, ack.to_wire())
        elif len(parts) == 4 and parts[:2] == ["v1", "alerts"] and parts[3] == "ack":
            alert_id = urllib.parse.unquote(parts[2])
            if self.state.ack_alert(alert_id):
                self._send_json(200, {"alert_id": alert_id, "acknowledged": True})
            else:
                self._error(404, f"unknown alert {alert_id!r}")
        else:
            self._error(404, "no such resource")

    def do_PUT(self):
        parts = [p for p in urllib.parse.urlparse(self.path).path.split("/") if p]
        if parts == ["v1", "policy"]:
            try:
                raw = json.loads(self._read_body().decode("utf-8"))
                version = self.state.put_policy(raw)
            except (json.JSONDecodeError, UnicodeDecodeError):
                self._error(400, "body must be a JSON policy object")
                return
            except ValueError as exc:
                self._error(400, str(exc))
                return
            self._send_json(200, {"version": version})
        else:
            self._error(404, "no such resource")


def make_server(state: ServerState, port: int = 0,
                ui_dir: Optional[str] = None) -> ThreadingHTTPServer:
    """Build (but do not start) the HTTP server; port 0 picks a free one."""
    handler = type("BoundHandler", (_Handler,), {"state": state, "ui_dir": ui_dir})
    return ThreadingHTTPServer(("127.0.0.1", port), handler)
