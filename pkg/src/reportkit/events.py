"""Typed event taxonomy shared by every collection layer.

Every observation — smartphone, desktop, or social — travels inside the
same envelope (`MonitoredEvent`) and serializes to one canonical JSON
record with the field names ``device_id, seq, ts, layer, kind, payload``.
That record schema is shared verbatim with scenario files and the sync
wire format, so round-tripping is exact: ``canonicalize(serialize(e)) == e``.

Timestamps are UTC ISO-8601 with millisecond precision throughout, which
keeps replays and report ordering bit-exact.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, fields
from datetime import datetime, timezone
from enum import Enum
from typing import Optional, Union
from urllib.parse import urlparse


class Layer(str, Enum):
    SMARTPHONE = "smartphone"
    DESKTOP = "desktop"
    SOCIAL = "social"


class Kind(str, Enum):
    CALL = "call"
    SMS = "sms"
    GPS = "gps"
    WIFI = "wifi"
    BLUETOOTH = "bluetooth"
    APP = "app"
    KEYLOG = "keylog"
    SOFTWARE = "software"
    URL = "url"
    FILE = "file"
    NET = "net"
    SOCIAL = "social"


# Which layer each kind belongs to; the envelope's layer must agree.
KIND_LAYER: dict[Kind, Layer] = {
    Kind.CALL: Layer.SMARTPHONE,
    Kind.SMS: Layer.SMARTPHONE,
    Kind.GPS: Layer.SMARTPHONE,
    Kind.WIFI: Layer.SMARTPHONE,
    Kind.BLUETOOTH: Layer.SMARTPHONE,
    Kind.APP: Layer.SMARTPHONE,
    Kind.KEYLOG: Layer.DESKTOP,
    Kind.SOFTWARE: Layer.DESKTOP,
    Kind.URL: Layer.DESKTOP,
    Kind.FILE: Layer.DESKTOP,
    Kind.NET: Layer.DESKTOP,
    Kind.SOCIAL: Layer.SOCIAL,
}

SMARTPHONE_KINDS = frozenset(k for k, l in KIND_LAYER.items() if l is Layer.SMARTPHONE)
DESKTOP_KINDS = frozenset(k for k, l in KIND_LAYER.items() if l is Layer.DESKTOP)

MAX_SMS_BODY = 10_000
MAX_KEYLOG_TEXT = 4_096


class Direction(str, Enum):
    INCOMING = "incoming"
    OUTGOING = "outgoing"


class ChangeAction(str, Enum):
    INSTALL = "install"
    REMOVE = "remove"


class AppSource(str, Enum):
    TRUSTED = "trusted"
    UNKNOWN = "unknown"


class FileOp(str, Enum):
    CREATE = "create"
    MODIFY = "modify"
    DELETE = "delete"
    RENAME = "rename"
    MOVE = "move"


class NetProto(str, Enum):
    TCP = "tcp"
    UDP = "udp"
    OTHER = "other"


class GroupAction(str, Enum):
    JOIN = "join"
    LEAVE = "leave"


class InteractionKind(str, Enum):
    LIKE = "like"
    SHARE = "share"
    PLUS_ONE = "plus_one"


class CanonicalizeError(ValueError):
    """Base for record-decoding failures; always names the offending field."""

    def __init__(self, field: str, message: str = ""):
        self.field = field
        super().__init__(f"{field}: {message}" if message else field)


class UnknownKind(CanonicalizeError):
    pass


class MissingField(CanonicalizeError):
    pass


class RangeViolation(CanonicalizeError):
    pass


# --- timestamps -------------------------------------------------------------

def parse_ts(value: object, field: str = "ts") -> datetime:
    """Parse an ISO-8601 UTC timestamp, truncated to millisecond precision."""
    if not isinstance(value, str):
        raise RangeViolation(field, "timestamp must be an ISO-8601 string")
    text = value[:-1] + "+00:00" if value.endswith("Z") else value
    try:
        dt = datetime.fromisoformat(text)
    except ValueError:
        raise RangeViolation(field, f"not a valid ISO-8601 timestamp: {value!r}")
    if dt.tzinfo is None:
        raise RangeViolation(field, "timestamp must carry a UTC offset")
    dt = dt.astimezone(timezone.utc)
    return dt.replace(microsecond=(dt.microsecond // 1000) * 1000)


def format_ts(dt: datetime) -> str:
    dt = dt.astimezone(timezone.utc)
    return f"{dt:%Y-%m-%dT%H:%M:%S}.{dt.microsecond // 1000:03d}Z"


def canonical_json(obj: object) -> str:
    """Canonical JSON text: sorted keys, no whitespace, ASCII-only."""
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


# --- payload types ----------------------------------------------------------

@dataclass(frozen=True)
class CallEvent:
    """One incoming or outgoing phone call."""
    direction: Direction
    peer_number: str
    start_at: datetime
    duration_s: int


@dataclass(frozen=True)
class SmsEvent:
    """One sent or received text message."""
    direction: Direction
    peer_number: str
    at: datetime
    body: str


@dataclass(frozen=True)
class GpsSample:
    """A positioning fix used for movement tracking."""
    at: datetime
    lat: float
    lon: float
    accuracy_m: float


@dataclass(frozen=True)
class WifiSample:
    """Internet utilization sample; byte counters are deltas since the
    previous sample, never cumulative, so window sums are plain totals."""
    at: datetime
    bytes_rx: int
    bytes_tx: int
    ssid: str


@dataclass(frozen=True)
class BluetoothTransfer:
    """A file sent or received over the Bluetooth channel."""
    direction: Direction
    file_name: str
    size_bytes: int
    at: datetime
    peer_device: str


@dataclass(frozen=True)
class AppChange:
    """Installation or removal of a mobile application."""
    action: ChangeAction
    package_id: str
    source: AppSource
    at: datetime


@dataclass(frozen=True)
class KeyLogChunk:
    """A bounded chunk of captured keystrokes with its window context."""
    at: datetime
    window_title: str
    text: str


@dataclass(frozen=True)
class SoftwareChange:
    """Installation or removal of desktop software."""
    action: ChangeAction
    name: str
    publisher: str
    at: datetime


@dataclass(frozen=True)
class UrlVisit:
    """A web address entered in a browser."""
    at: datetime
    url: str
    browser_id: str


@dataclass(frozen=True)
class FileSystemOp:
    """A file or folder manipulation; new_path only for rename/move."""
    at: datetime
    op: FileOp
    path: str
    new_path: Optional[str] = None


@dataclass(frozen=True)
class NetworkFlow:
    """A network activity sample (remote endpoint and byte volume)."""
    at: datetime
    remote_host: str
    port: int
    bytes: int
    proto: NetProto


# Social activity variants. A social observation is one record whose payload
# names the variant; the six variants cover posts, friend requests, chats,
# group membership, session time, and lightweight interactions.

@dataclass(frozen=True)
class Post:
    text: str


@dataclass(frozen=True)
class FriendRequest:
    direction: Direction
    accepted: bool


@dataclass(frozen=True)
class ChatMessage:
    direction: Direction
    peer: str
    text: str


@dataclass(frozen=True)
class GroupMembership:
    group_id: str
    action: GroupAction


@dataclass(frozen=True)
class SessionInterval:
    start: datetime
    end: datetime


@dataclass(frozen=True)
class Interaction:
    kind: InteractionKind


SocialVariant = Union[
    Post, FriendRequest, ChatMessage, GroupMembership, SessionInterval, Interaction
]

VARIANT_NAMES: dict[type, str] = {
    Post: "post",
    FriendRequest: "friend",
    ChatMessage: "chat",
    GroupMembership: "group",
    SessionInterval: "session",
    Interaction: "interaction",
}


@dataclass(frozen=True)
class SocialEvent:
    """One social-networking observation (post, friend, chat, group,
    session, or interaction variant)."""
    at: datetime
    variant: SocialVariant

    @property
    def variant_name(self) -> str:
        return VARIANT_NAMES[type(self.variant)]


Payload = Union[
    CallEvent, SmsEvent, GpsSample, WifiSample, BluetoothTransfer, AppChange,
    KeyLogChunk, SoftwareChange, UrlVisit, FileSystemOp, NetworkFlow, SocialEvent,
]

PAYLOAD_TYPES: dict[Kind, type] = {
    Kind.CALL: CallEvent,
    Kind.SMS: SmsEvent,
    Kind.GPS: GpsSample,
    Kind.WIFI: WifiSample,
    Kind.BLUETOOTH: BluetoothTransfer,
    Kind.APP: AppChange,
    Kind.KEYLOG: KeyLogChunk,
    Kind.SOFTWARE: SoftwareChange,
    Kind.URL: UrlVisit,
    Kind.FILE: FileSystemOp,
    Kind.NET: NetworkFlow,
    Kind.SOCIAL: SocialEvent,
}


@dataclass(frozen=True)
class MonitoredEvent:
    """Uniform envelope around one observation from any layer."""
    device_id: str
    layer: Layer
    seq_no: int
    collected_at: datetime
    kind: Kind
    payload: Payload


def dedupe_key(e: MonitoredEvent) -> tuple[str, int]:
    """Identity of an event for idempotent ingestion: (device, seq)."""
    return (e.device_id, e.seq_no)


# --- wire extraction helpers ------------------------------------------------

def _req(payload: dict, field: str) -> object:
    if field not in payload or payload[field] is None:
        raise MissingField(field, "required field absent")
    return payload[field]


def _str(payload: dict, field: str) -> str:
    v = _req(payload, field)
    if not isinstance(v, str):
        raise RangeViolation(field, "expected a string")
    return v


def _int(payload: dict, field: str) -> int:
    v = _req(payload, field)
    if isinstance(v, bool) or not isinstance(v, int):
        raise RangeViolation(field, "expected an integer")
    return v


def _num(payload: dict, field: str) -> float:
    v = _req(payload, field)
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise RangeViolation(field, "expected a number")
    return float(v)


def _bool(payload: dict, field: str) -> bool:
    v = _req(payload, field)
    if not isinstance(v, bool):
        raise RangeViolation(field, "expected a boolean")
    return v


def _enum(payload: dict, field: str, enum_cls: type) -> object:
    v = _str(payload, field)
    try:
        return enum_cls(v)
    except ValueError:
        allowed = ", ".join(m.value for m in enum_cls)
        raise RangeViolation(field, f"{v!r} not one of: {allowed}")


def _ts(payload: dict, field: str) -> datetime:
    return parse_ts(_req(payload, field), field)


# --- payload wire codecs ----------------------------------------------------
# Wire field names are part of the shared record schema; internal dataclass
# names stay descriptive (peer on the wire, peer_number in code).

def _parse_payload(kind: Kind, p: dict) -> Payload:
    if kind is Kind.CALL:
        return CallEvent(
            direction=_enum(p, "direction", Direction),
            peer_number=_str(p, "peer"),
            start_at=_ts(p, "start"),
            duration_s=_int(p, "duration_s"),
        )
    if kind is Kind.SMS:
        return SmsEvent(
            direction=_enum(p, "direction", Direction),
            peer_number=_str(p, "peer"),
            at=_ts(p, "at"),
            body=_str(p, "body"),
        )
    if kind is Kind.GPS:
        return GpsSample(
            at=_ts(p, "at"),
            lat=_num(p, "lat"),
            lon=_num(p, "lon"),
            accuracy_m=_num(p, "accuracy_m"),
        )
    if kind is Kind.WIFI:
        return WifiSample(
            at=_ts(p, "at"),
            bytes_rx=_int(p, "bytes_rx"),
            bytes_tx=_int(p, "bytes_tx"),
            ssid=_str(p, "ssid"),
        )
    if kind is Kind.BLUETOOTH:
        return BluetoothTransfer(
            direction=_enum(p, "direction", Direction),
            file_name=_str(p, "file_name"),
            size_bytes=_int(p, "size_bytes"),
            at=_ts(p, "at"),
            peer_device=_str(p, "peer_device"),
        )
    if kind is Kind.APP:
        return AppChange(
            action=_enum(p, "action", ChangeAction),
            package_id=_str(p, "package_id"),
            source=_enum(p, "source", AppSource),
            at=_ts(p, "at"),
        )
    if kind is Kind.KEYLOG:
        return KeyLogChunk(
            at=_ts(p, "at"),
            window_title=_str(p, "window_title"),
            text=_str(p, "text"),
        )
    if kind is Kind.SOFTWARE:
        return SoftwareChange(
            action=_enum(p, "action", ChangeAction),
            name=_str(p, "name"),
            publisher=_str(p, "publisher"),
            at=_ts(p, "at"),
        )
    if kind is Kind.URL:
        return UrlVisit(
            at=_ts(p, "at"),
            url=_str(p, "url"),
            browser_id=_str(p, "browser_id"),
        )
    if kind is Kind.FILE:
        new_path = p.get("new_path")
        if new_path is not None and not isinstance(new_path, str):
            raise RangeViolation("new_path", "expected a string")
        return FileSystemOp(
            at=_ts(p, "at"),
            op=_enum(p, "op", FileOp),
            path=_str(p, "path"),
            new_path=new_path,
        )
    if kind is Kind.NET:
        return NetworkFlow(
            at=_ts(p, "at"),
            remote_host=_str(p, "remote_host"),
            port=_int(p, "port"),
            bytes=_int(p, "bytes"),
            proto=_enum(p, "proto", NetProto),
        )
    if kind is Kind.SOCIAL:
        return _parse_social(p)
    raise UnknownKind("kind", f"no payload codec for {kind!r}")


def _parse_social(p: dict) -> SocialEvent:
    variant = _str(p, "variant")
    at = _ts(p, "at")
    if variant == "post":
        return SocialEvent(at, Post(text=_str(p, "text")))
    if variant == "friend":
        return SocialEvent(
            at, FriendRequest(direction=_enum(p, "direction", Direction),
                              accepted=_bool(p, "accepted")))
    if variant == "chat":
        return SocialEvent(
            at, ChatMessage(direction=_enum(p, "direction", Direction),
                            peer=_str(p, "peer"), text=_str(p, "text")))
    if variant == "group":
        return SocialEvent(
            at, GroupMembership(group_id=_str(p, "group_id"),
                                action=_enum(p, "action", GroupAction)))
    if variant == "session":
        return SocialEvent(at, SessionInterval(start=_ts(p, "start"), end=_ts(p, "end")))
    if variant == "interaction":
        return SocialEvent(at, Interaction(kind=_enum(p, "kind", InteractionKind)))
    raise RangeViolation("variant", f"{variant!r} is not a social variant")


def payload_to_wire(payload: Payload) -> dict:
    if isinstance(payload, CallEvent):
        return {"direction": payload.direction.value, "peer": payload.peer_number,
                "start": format_ts(payload.start_at), "duration_s": payload.duration_s}
    if isinstance(payload, SmsEvent):
        return {"direction": payload.direction.value, "peer": payload.peer_number,
                "at": format_ts(payload.at), "body": payload.body}
    if isinstance(payload, GpsSample):
        return {"at": format_ts(payload.at), "lat": payload.lat, "lon": payload.lon,
                "accuracy_m": payload.accuracy_m}
    if isinstance(payload, WifiSample):
        return {"at": format_ts(payload.at), "bytes_rx": payload.bytes_rx,
                "bytes_tx": payload.bytes_tx, "ssid": payload.ssid}
    if isinstance(payload, BluetoothTransfer):
        return {"direction": payload.direction.value, "file_name": payload.file_name,
                "size_bytes": payload.size_bytes, "at": format_ts(payload.at),
                "peer_device": payload.peer_device}
    if isinstance(payload, AppChange):
        return {"action": payload.action.value, "package_id": payload.package_id,
                "source": payload.source.value, "at": format_ts(payload.at)}
    if isinstance(payload, KeyLogChunk):
        return {"at": format_ts(payload.at), "window_title": payload.window_title,
                "text": payload.text}
    if isinstance(payload, SoftwareChange):
        return {"action": payload.action.value, "name": payload.name,
                "publisher": payload.publisher, "at": format_ts(payload.at)}
    if isinstance(payload, UrlVisit):
        return {"at": format_ts(payload.at), "url": payload.url,
                "browser_id": payload.browser_id}
    if isinstance(payload, FileSystemOp):
        wire = {"at": format_ts(payload.at), "op": payload.op.value, "path": payload.path}
        if payload.new_path is not None:
            wire["new_path"] = payload.new_path
        return wire
    if isinstance(payload, NetworkFlow):
        return {"at": format_ts(payload.at), "remote_host": payload.remote_host,
                "port": payload.port, "bytes": payload.bytes, "proto": payload.proto.value}
    if isinstance(payload, SocialEvent):
        wire = {"variant": payload.variant_name, "at": format_ts(payload.at)}
        v = payload.variant
        if isinstance(v, Post):
            wire["text"] = v.text
        elif isinstance(v, FriendRequest):
            wire.update(direction=v.direction.value, accepted=v.accepted)
        elif isinstance(v, ChatMessage):
            wire.update(direction=v.direction.value, peer=v.peer, text=v.text)
        elif isinstance(v, GroupMembership):
            wire.update(group_id=v.group_id, action=v.action.value)
        elif isinstance(v, SessionInterval):
            wire.update(start=format_ts(v.start), end=format_ts(v.end))
        elif isinstance(v, Interaction):
            wire["kind"] = v.kind.value
        return wire
    raise TypeError(f"not a payload: {payload!r}")


# --- invariants ---------------------------------------------------------------

def payload_violations(payload: Payload) -> list[tuple[str, str]]:
    """Value invariants for a built payload, as (field, message) pairs."""
    out: list[tuple[str, str]] = []
    if isinstance(payload, CallEvent):
        if payload.duration_s < 0:
            out.append(("duration_s", "must be >= 0"))
    elif isinstance(payload, SmsEvent):
        if len(payload.body) > MAX_SMS_BODY:
            out.append(("body", f"longer than {MAX_SMS_BODY} characters"))
    elif isinstance(payload, GpsSample):
        if not -90.0 <= payload.lat <= 90.0:
            out.append(("lat", "outside [-90, 90]"))
        if not -180.0 <= payload.lon <= 180.0:
            out.append(("lon", "outside [-180, 180]"))
        if payload.accuracy_m < 0:
            out.append(("accuracy_m", "must be >= 0"))
    elif isinstance(payload, WifiSample):
        if payload.bytes_rx < 0:
            out.append(("bytes_rx", "must be >= 0"))
        if payload.bytes_tx < 0:
            out.append(("bytes_tx", "must be >= 0"))
    elif isinstance(payload, BluetoothTransfer):
        if not payload.file_name:
            out.append(("file_name", "must be nonempty"))
        if payload.size_bytes < 0:
            out.append(("size_bytes", "must be >= 0"))
    elif isinstance(payload, AppChange):
        if not payload.package_id:
            out.append(("package_id", "must be nonempty"))
    elif isinstance(payload, KeyLogChunk):
        if len(payload.text) > MAX_KEYLOG_TEXT:
            out.append(("text", f"longer than {MAX_KEYLOG_TEXT} characters"))
    elif isinstance(payload, SoftwareChange):
        if not payload.name:
            out.append(("name", "must be nonempty"))
    elif isinstance(payload, UrlVisit):
        parsed = urlparse(payload.url)
        if not parsed.scheme or not parsed.netloc:
            out.append(("url", "must be absolute (scheme and host)"))
    elif isinstance(payload, FileSystemOp):
        needs_target = payload.op in (FileOp.RENAME, FileOp.MOVE)
        if needs_target and payload.new_path is None:
            out.append(("new_path", "required for rename/move"))
        if not needs_target and payload.new_path is not None:
            out.append(("new_path", "present iff op is rename/move"))
    elif isinstance(payload, NetworkFlow):
        if not 0 <= payload.port <= 65535:
            out.append(("port", "outside [0, 65535]"))
        if payload.bytes < 0:
            out.append(("bytes", "must be >= 0"))
    elif isinstance(payload, SocialEvent):
        v = payload.variant
        if isinstance(v, SessionInterval) and v.end <= v.start:
            out.append(("end", "session end must be after start"))
    return out


def validate(e: MonitoredEvent) -> list[str]:
    """All invariant violations of an event; empty list means ok.

    Total over well-typed input: never raises.
    """
    problems: list[str] = []
    if not e.device_id:
        problems.append("device_id: must be nonempty")
    if e.seq_no < 1:
        problems.append("seq_no: must be >= 1")
    expected_layer = KIND_LAYER.get(e.kind)
    if expected_layer is None:
        problems.append(f"kind: unknown kind {e.kind!r}")
    elif e.layer is not expected_layer:
        problems.append(
            f"layer: kind/layer mismatch ({e.kind.value} belongs to {expected_layer.value})")
    expected_type = PAYLOAD_TYPES.get(e.kind)
    if expected_type is not None and not isinstance(e.payload, expected_type):
        problems.append(f"payload: expected {expected_type.__name__}")
    else:
        problems.extend(f"{f}: {msg}" for f, msg in payload_violations(e.payload))
    return problems


# --- canonical record codec ---------------------------------------------------

def canonicalize(raw_record: dict) -> MonitoredEvent:
    """Decode and validate one canonical JSON record into an envelope.

    Raises UnknownKind / MissingField / RangeViolation, each naming the
    offending field.
    """
    if not isinstance(raw_record, dict):
        raise RangeViolation("record", "expected a JSON object")
    kind_name = _str(raw_record, "kind")
    try:
        kind = Kind(kind_name)
    except ValueError:
        raise UnknownKind("kind", f"unknown kind {kind_name!r}")
    layer = _enum(raw_record, "layer", Layer)
    device_id = _str(raw_record, "device_id")
    if not device_id:
        raise RangeViolation("device_id", "must be nonempty")
    seq_no = _int(raw_record, "seq")
    if seq_no < 1:
        raise RangeViolation("seq", "must be >= 1")
    collected_at = parse_ts(_req(raw_record, "ts"), "ts")
    payload_raw = _req(raw_record, "payload")
    if not isinstance(payload_raw, dict):
        raise RangeViolation("payload", "expected a JSON object")
    payload = _parse_payload(kind, payload_raw)
    event = MonitoredEvent(device_id=device_id, layer=layer, seq_no=seq_no,
                           collected_at=collected_at, kind=kind, payload=payload)
    remaining = validate(event)
    if remaining:
        first = remaining[0]
        field = first.split(":", 1)[0]
        raise RangeViolation(field, first.split(": ", 1)[1] if ": " in first else first)
    return event


def serialize(e: MonitoredEvent) -> dict:
    """The canonical record for an event; inverse of canonicalize."""
    return {
        "device_id": e.device_id,
        "seq": e.seq_no,
        "ts": format_ts(e.collected_at),
        "layer": e.layer.value,
        "kind": e.kind.value,
        "payload": payload_to_wire(e.payload),
    }


def event_json(e: MonitoredEvent) -> str:
    return canonical_json(serialize(e))


def payload_fields(payload: Payload) -> dict:
    """Flat dict view of a payload (report rows, debugging)."""
    if isinstance(payload, SocialEvent):
        return payload_to_wire(payload)
    return {f.name: getattr(payload, f.name) for f in fields(payload)}
