"""Scenario files: deterministic scripts of timed observations.

A scenario is JSON-lines, one record per line, sorted by ``at_ms``:

    {"at_ms": 12000, "kind": "sms", "payload": {...}}

`#`-prefixed lines are comments. Agents replay scenarios on a virtual
clock; the generator below synthesizes profile-weighted scenarios that
are byte-identical for a fixed seed.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass
from datetime import datetime, timedelta, timezone
from typing import Iterable

from .events import (
    KIND_LAYER, CanonicalizeError, Kind, MonitoredEvent, canonical_json,
    canonicalize, format_ts,
)

# All virtual clocks start here; scenario at_ms offsets are added to it.
EPOCH = datetime(2024, 1, 1, tzinfo=timezone.utc)


class ScenarioParseError(ValueError):
    def __init__(self, line_number: int, reason: str):
        self.line_number = line_number
        self.reason = reason
        super().__init__(f"line {line_number}: {reason}")


class InvalidProfile(ValueError):
    pass


@dataclass(frozen=True)
class ScenarioLine:
    at_ms: int
    kind: Kind
    payload: dict

    def to_wire(self) -> dict:
        return {"at_ms": self.at_ms, "kind": self.kind.value, "payload": self.payload}


def envelope(line: ScenarioLine, device_id: str, seq_no: int) -> MonitoredEvent:
    """Wrap a scenario line in the canonical envelope at its virtual time."""
    record = {
        "device_id": device_id,
        "seq": seq_no,
        "ts": format_ts(EPOCH + timedelta(milliseconds=line.at_ms)),
        "layer": KIND_LAYER[line.kind].value,
        "kind": line.kind.value,
        "payload": line.payload,
    }
    return canonicalize(record)


def parse_scenario(lines: Iterable[str]) -> list[ScenarioLine]:
    out: list[ScenarioLine] = []
    last_at = -1
    for line_number, raw in enumerate(lines, start=1):
        stripped = raw.strip()
        if not stripped or stripped.startswith("#"):
            continue
        try:
            record = json.loads(stripped)
        except json.JSONDecodeError as exc:
            raise ScenarioParseError(line_number, f"invalid JSON: {exc.msg}")
        if not isinstance(record, dict):
            raise ScenarioParseError(line_number, "expected a JSON object")
        at_ms = record.get("at_ms")
        if not isinstance(at_ms, int) or isinstance(at_ms, bool) or at_ms < 0:
            raise ScenarioParseError(line_number, "at_ms: expected a non-negative integer")
        if at_ms < last_at:
            raise ScenarioParseError(line_number, f"at_ms {at_ms} not sorted (previous {last_at})")
        last_at = at_ms
        kind_name = record.get("kind")
        try:
            kind = Kind(kind_name)
        except ValueError:
            raise ScenarioParseError(line_number, f"kind: unknown kind {kind_name!r}")
        payload = record.get("payload")
        if not isinstance(payload, dict):
            raise ScenarioParseError(line_number, "payload: expected a JSON object")
        line = ScenarioLine(at_ms=at_ms, kind=kind, payload=payload)
        try:
            envelope(line, "probe", 1)
        except CanonicalizeError as exc:
            raise ScenarioParseError(line_number, str(exc))
        out.append(line)
    return out


def load_scenario(path) -> list[ScenarioLine]:
    with open(path, encoding="utf-8") as fh:
        return parse_scenario(fh)


# --- generation ---------------------------------------------------------------

@dataclass(frozen=True)
class ScenarioProfile:
    """Event-mix preset for the generator. Weights are relative; any kind
    with weight > 0 is guaranteed to appear at least once."""
    name: str
    weights: dict[Kind, float]
    events_per_minute: float = 2.0
    duration_min: int = 60
    seed: int = 0

    def __post_init__(self):
        if any(w < 0 for w in self.weights.values()):
            raise InvalidProfile("weights must be non-negative")
        if not any(w > 0 for w in self.weights.values()):
            raise InvalidProfile("at least one weight must be positive")


PROFILES: dict[str, ScenarioProfile] = {
    "teen-default": ScenarioProfile(
        name="teen-default",
        weights={Kind.CALL: 1.0, Kind.SMS: 1.5, Kind.GPS: 1.2, Kind.WIFI: 1.2,
                 Kind.BLUETOOTH: 0.4, Kind.APP: 0.4, Kind.SOCIAL: 1.8},
        events_per_minute=2.0),
    "heavy-social": ScenarioProfile(
        name="heavy-social",
        weights={Kind.CALL: 0.2, Kind.SMS: 0.6, Kind.GPS: 0.3, Kind.WIFI: 0.6,
                 Kind.SOCIAL: 4.5},
        events_per_minute=3.0),
    "desktop-only": ScenarioProfile(
        name="desktop-only",
        weights={Kind.KEYLOG: 1.6, Kind.SOFTWARE: 0.3, Kind.URL: 1.6,
                 Kind.FILE: 1.0, Kind.NET: 1.2},
        events_per_minute=2.0),
}


def profile_by_name(name: str, seed: int, duration_min: int | None = None) -> ScenarioProfile:
    base = PROFILES.get(name)
    if base is None:
        raise InvalidProfile(f"unknown profile {name!r} (have: {', '.join(sorted(PROFILES))})")
    return ScenarioProfile(name=base.name, weights=base.weights,
                           events_per_minute=base.events_per_minute,
                           duration_min=duration_min or base.duration_min, seed=seed)


_PEERS = ["5550100", "5550101", "5550102", "5550199"]
_SSIDS = ["HomeNet", "CafeWifi", "SchoolGuest"]
_PACKAGES = ["com.game.blocks", "com.chat.bubble", "com.video.clips", "com.study.cards"]
_SOFTWARE = [("PhotoTool", "Acme Labs"), ("GameLauncher", "Funware"),
             ("NoteKeeper", "Deskline"), ("TorrentThing", "Unknown Publisher")]
_URLS = ["https://news.example/today", "https://videos.example/watch?v=17",
         "https://school.example/homework", "http://badsite.example/promo",
         "https://music.example/playlist/4"]
_TEXTS = ["see you at school", "homework due tomorrow", "want to play later",
          "free casino bonus tonight", "coach moved practice to five",
          "that clip was so funny", "place your bet before midnight",
          "mom said dinner at seven"]
_TITLES = ["Browser", "Text Editor", "Game Window", "Chat App"]
_PATHS = ["/home/kid/notes.txt", "/home/kid/homework.doc", "/tmp/clip.mp4",
          "/home/kid/secret/diary.txt"]
_HOSTS = ["cdn.videos.example", "game-servers.example", "mail.example"]
_GROUPS = ["homework-club", "gamer-squad", "late-night-crew"]
_FILE_NAMES = ["song.mp3", "photo.jpg", "game.apk", "notes.pdf"]
_BROWSERS = ["firefox", "chrome"]


def _synth_payload(kind: Kind, at: datetime, rng: random.Random) -> dict:
    iso = format_ts(at)
    if kind is Kind.CALL:
        return {"direction": rng.choice(["incoming", "outgoing"]),
                "peer": rng.choice(_PEERS), "start": iso,
                "duration_s": rng.randrange(5, 600)}
    if kind is Kind.SMS:
        return {"direction": rng.choice(["incoming", "outgoing"]),
                "peer": rng.choice(_PEERS), "at": iso, "body": rng.choice(_TEXTS)}
    if kind is Kind.GPS:
        return {"at": iso, "lat": round(12.0 + rng.random() * 0.05, 6),
                "lon": round(79.8 + rng.random() * 0.05, 6),
                "accuracy_m": round(3.0 + rng.random() * 12.0, 1)}
    if kind is Kind.WIFI:
        return {"at": iso, "bytes_rx": rng.randrange(1_000, 2_000_000),
                "bytes_tx": rng.randrange(500, 300_000), "ssid": rng.choice(_SSIDS)}
    if kind is Kind.BLUETOOTH:
        return {"direction": rng.choice(["incoming", "outgoing"]),
                "file_name": rng.choice(_FILE_NAMES),
                "size_bytes": rng.randrange(10_000, 5_000_000), "at": iso,
                "peer_device": f"BT-{rng.randrange(10, 99)}"}
    if kind is Kind.APP:
        return {"action": rng.choice(["install", "install", "remove"]),
                "package_id": rng.choice(_PACKAGES),
                "source": rng.choice(["trusted", "trusted", "unknown"]), "at": iso}
    if kind is Kind.KEYLOG:
        return {"at": iso, "window_title": rng.choice(_TITLES),
                "text": rng.choice(_TEXTS)}
    if kind is Kind.SOFTWARE:
        name, publisher = rng.choice(_SOFTWARE)
        return {"action": rng.choice(["install", "install", "remove"]),
                "name": name, "publisher": publisher, "at": iso}
    if kind is Kind.URL:
        return {"at": iso, "url": rng.choice(_URLS), "browser_id": rng.choice(_BROWSERS)}
    if kind is Kind.FILE:
        op = rng.choice(["create", "modify", "delete", "rename", "move"])
        payload = {"at": iso, "op": op, "path": rng.choice(_PATHS)}
        if op in ("rename", "move"):
            payload["new_path"] = "/home/kid/moved/" + payload["path"].rsplit("/", 1)[-1]
        return payload
    if kind is Kind.NET:
        return {"at": iso, "remote_host": rng.choice(_HOSTS),
                "port": rng.choice([80, 443, 8080, 27015]),
                "bytes": rng.randrange(200, 900_000),
                "proto": rng.choice(["tcp", "tcp", "udp"])}
    if kind is Kind.SOCIAL:
        variant = rng.choices(
            ["post", "chat", "friend", "group", "session", "interaction"],
            weights=[0.25, 0.30, 0.10, 0.10, 0.15, 0.10])[0]
        if variant == "post":
            return {"variant": "post", "at": iso, "text": rng.choice(_TEXTS)}
        if variant == "chat":
            return {"variant": "chat", "at": iso,
                    "direction": rng.choice(["incoming", "outgoing"]),
                    "peer": rng.choice(["amy", "ben", "cleo"]), "text": rng.choice(_TEXTS)}
        if variant == "friend":
            return {"variant": "friend", "at": iso,
                    "direction": rng.choice(["incoming", "outgoing"]),
                    "accepted": rng.random() < 0.6}
        if variant == "group":
            return {"variant": "group", "at": iso, "group_id": rng.choice(_GROUPS),
                    "action": rng.choice(["join", "join", "leave"])}
        if variant == "session":
            length_s = rng.randrange(60, 1800)
            return {"variant": "session", "at": iso, "start": iso,
                    "end": format_ts(at + timedelta(seconds=length_s))}
        return {"variant": "interaction", "at": iso,
                "kind": rng.choice(["like", "like", "share", "plus_one"])}
    raise InvalidProfile(f"no synthesizer for kind {kind!r}")


def generate_scenario(profile: ScenarioProfile) -> list[str]:
    """Deterministic scenario lines for a profile; byte-identical per seed.
    Every kind with positive weight appears at least once."""
    rng = random.Random(profile.seed)
    duration_ms = profile.duration_min * 60_000
    kinds = [k for k, w in profile.weights.items() if w > 0]
    weights = [profile.weights[k] for k in kinds]
    total = max(len(kinds), round(profile.events_per_minute * profile.duration_min))
    chosen = list(kinds)  # coverage: one of each first
    chosen += rng.choices(kinds, weights=weights, k=total - len(kinds))
    times = sorted(rng.randrange(0, duration_ms) for _ in chosen)
    lines = []
    for at_ms, kind in zip(times, chosen):
        at = EPOCH + timedelta(milliseconds=at_ms)
        payload = _synth_payload(kind, at, rng)
        lines.append(canonical_json({"at_ms": at_ms, "kind": kind.value, "payload": payload}))
    return lines


def write_scenario(path, lines: list[str]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for line in lines:
            fh.write(line + "\n")
