"""Acceptance suite: one test per release criterion, each printing a
PASS line with its measured numbers (run with -s to see them inline).
"""

import json
import random
import threading
import time
import urllib.request
from datetime import timedelta
from fractions import Fraction
from pathlib import Path

import pytest

from reportkit.agents import Agent, AgentConfig, InMemoryRepository, run_agent
from reportkit.cli import dispatch
from reportkit.events import Kind, serialize
from reportkit.policy import AlertLevel, Policy, RuleId
from reportkit.relevance import SessionRating, SumError, mean_relevance, validate_rating
from reportkit.scenario import (
    EPOCH, ScenarioLine, envelope, generate_scenario, parse_scenario, profile_by_name,
)
from reportkit.server import (
    ServerState, build_report, make_server, movement_summary,
    restricted_word_violation_count,
)
from reportkit.social import aggregate, check_thresholds
from reportkit.sync import FaultyTransport, InMemoryTransport

REPO_ROOT = Path(__file__).resolve().parents[1]
WINDOW_FROM = EPOCH
WINDOW_TO = EPOCH + timedelta(days=7)


def _ok(name: str, detail: str = ""):
    print(f"ACCEPTANCE {name}: PASS" + (f" ({detail})" if detail else ""))


def _ts(at_ms):
    return (EPOCH + timedelta(milliseconds=at_ms)).strftime("%Y-%m-%dT%H:%M:%S") + \
        f".{at_ms % 1000:03d}Z"


def _line(at_ms, kind, payload):
    return ScenarioLine(at_ms=at_ms, kind=Kind(kind), payload=payload)


# 1. Table 1 reproduction ------------------------------------------------------

def test_table1_reproduction(capsys):
    started = time.perf_counter()
    code = dispatch(["eval", "--ratings", str(REPO_ROOT / "table1.csv"), "--json"])
    elapsed = time.perf_counter() - started
    assert code == 0
    stats = json.loads(capsys.readouterr().out)
    mean_crr = float(stats["mean_crr"])
    mean_prr = float(stats["mean_prr"])
    mean_cir = float(stats["mean_cir"])
    efficiency = float(stats["efficiency"])
    assert abs(mean_crr - 87.0067) <= 0.01
    assert abs(mean_prr - 6.46) <= 0.005
    assert abs(mean_cir - 6.53) <= 0.005
    assert abs(efficiency - 93.46) <= 0.02
    assert elapsed < 1.0
    with capsys.disabled():
        _ok("table1-reproduction",
            f"crr={mean_crr} prr={mean_prr} cir={mean_cir} "
            f"efficiency={efficiency} in {elapsed:.3f}s")


# 2. Exactly-once visible effect under faults ---------------------------------

def _expected_records(scenario, device):
    return [serialize(envelope(line, device, i + 1))
            for i, line in enumerate(scenario)]


def test_exactly_once_under_fault_schedules():
    started = time.perf_counter()
    schedules = 500
    faults_total = 0
    for seed in range(schedules):
        rng = random.Random(9000 + seed)
        state = ServerState()
        transport = FaultyTransport(state, rng)
        devices = []
        for d in range(1 + (seed % 2)):  # half the schedules run two devices
            name = rng.choice(["teen-default", "desktop-only", "heavy-social"])
            profile = profile_by_name(name, seed=seed * 7 + d,
                                      duration_min=rng.randrange(3, 30))
            scenario = parse_scenario(generate_scenario(profile))[:200]
            config = AgentConfig(
                device_id=f"dev{d}",
                agent_kind="desktop" if name == "desktop-only" else "smartphone",
                batch_max=rng.randrange(1, 25),
                sync_interval_ms=rng.choice([700, 2_000, 5_000, 60_000]),
                retry_limit=1_000)
            run_agent(config, scenario, transport, policy=Policy())
            devices.append((f"dev{d}", scenario))
        transport.flush_pending()
        faults_total += transport.faults_injected
        for device, scenario in devices:
            stored = state.devices[device].events_in_order()
            assert [e.seq_no for e in stored] == list(range(1, len(scenario) + 1))
            assert [serialize(e) for e in stored] == _expected_records(scenario, device)
    elapsed = time.perf_counter() - started
    assert elapsed < 60.0
    assert faults_total > schedules  # the chaos actually happened
    _ok("exactly-once-under-faults",
        f"{schedules} schedules, {faults_total} faults injected, in {elapsed:.1f}s")


# 3. Filter / alert contract ----------------------------------------------------

_TRIGGER_POLICY = dict(
    restricted_words=frozenset({"casino", "bet"}),
    call_blocklist=frozenset({"5550199"}),
    allowed_app_sources=frozenset({"trusted"}),
    max_social_time_s=10**9,
)


def _four_trigger_scenario():
    # exactly 4 rule-triggering events, interleaved with clean filler
    return [
        _line(0, "gps", {"at": _ts(0), "lat": 1.0, "lon": 2.0, "accuracy_m": 4.0}),
        _line(1_000, "call", {"direction": "outgoing", "peer": "5550199",
                              "start": _ts(1_000), "duration_s": 10}),        # 1
        _line(2_000, "sms", {"direction": "incoming", "peer": "5550100",
                             "at": _ts(2_000), "body": "casino tonight?"}),   # 2
        _line(3_000, "sms", {"direction": "outgoing", "peer": "5550100",
                             "at": _ts(3_000), "body": "studying, sorry"}),
        _line(4_000, "app", {"action": "install", "package_id": "com.shady.game",
                             "source": "unknown", "at": _ts(4_000)}),         # 3
        _line(5_000, "social", {"variant": "post", "at": _ts(5_000),
                                "text": "won a bet today"}),                  # 4
        _line(6_000, "wifi", {"at": _ts(6_000), "bytes_rx": 1000, "bytes_tx": 50,
                              "ssid": "HomeNet"}),
    ]


@pytest.mark.parametrize("level,want_alerts,want_captures,want_delivered", [
    (AlertLevel.NOTIFY_CAPTURE, 4, 4, 4),
    (AlertLevel.NOTIFY, 4, 0, 4),
    (AlertLevel.SILENT, 4, 0, 0),
])
def test_filter_alert_contract(level, want_alerts, want_captures, want_delivered):
    started = time.perf_counter()
    policy = Policy(alert_level=level, **_TRIGGER_POLICY)
    state = ServerState(policy=policy)
    agent = Agent(AgentConfig(device_id="kid-phone", agent_kind="smartphone"),
                  InMemoryRepository("kid-phone"), InMemoryTransport(state))
    agent.run(_four_trigger_scenario())
    ds = state.devices["kid-phone"]
    assert len(ds.alerts) == want_alerts
    assert len(ds.captures) == want_captures
    delivered = sum(1 for a in ds.alerts.values() if a.delivered)
    assert delivered == want_delivered
    if level is AlertLevel.SILENT:
        assert all(not a.delivered for a in ds.alerts.values())
    elapsed = time.perf_counter() - started
    assert elapsed < 5.0
    _ok(f"filter-alert-contract[{level.value}]",
        f"alerts={len(ds.alerts)} captures={len(ds.captures)} delivered={delivered}")


# 4. Keylog report rule ----------------------------------------------------------

def test_keylog_report_rule_randomized():
    policy = Policy(restricted_words=frozenset({"casino", "bet"}))
    total_rows = 0
    for seed in range(25):
        state = ServerState(policy=policy)
        profile = profile_by_name("desktop-only", seed=seed,
                                  duration_min=10 + (seed % 30))
        scenario = parse_scenario(generate_scenario(profile))
        agent = Agent(AgentConfig(device_id="desk", agent_kind="desktop"),
                      InMemoryRepository("desk"), InMemoryTransport(state))
        agent.run(scenario)
        report = build_report(state, "keylog", "desk", WINDOW_FROM, WINDOW_TO)
        violations = restricted_word_violation_count(
            state, "desk", WINDOW_FROM, WINDOW_TO, event_kind=Kind.KEYLOG)
        assert len(report.rows) == violations
        total_rows += len(report.rows)
    assert total_rows > 0  # the rule actually exercised
    _ok("keylog-report-rule", f"25 scenarios, {total_rows} flagged rows total")


# 5. End-to-end determinism -------------------------------------------------------

_E2E_POLICY_BODY = {
    "restricted_words": ["casino", "bet"],
    "blocked_url_substrings": ["badsite"],
    "call_blocklist": ["5550199"],
    "allowed_app_sources": ["trusted"],
    "max_social_time_s": 3600,
    "alert_level": "notify_capture",
}


def _e2e_run(tmp_path: Path) -> dict[str, bytes]:
    store = tmp_path / "store"
    state = ServerState(store_dir=str(store))
    httpd = make_server(state, port=0)
    thread = threading.Thread(target=httpd.serve_forever, daemon=True)
    thread.start()
    base = f"http://127.0.0.1:{httpd.server_address[1]}"
    try:
        request = urllib.request.Request(
            base + "/v1/policy", data=json.dumps(_E2E_POLICY_BODY).encode(),
            method="PUT")
        with urllib.request.urlopen(request, timeout=5) as resp:
            assert json.loads(resp.read())["version"] == 2

        phone_scn = tmp_path / "phone.jsonl"
        desk_scn = tmp_path / "desk.jsonl"
        assert dispatch(["scenario", "gen", "--seed", "42", "--profile",
                         "teen-default", "--duration", "45",
                         "--out", str(phone_scn)]) == 0
        assert dispatch(["scenario", "gen", "--seed", "43", "--profile",
                         "desktop-only", "--duration", "45",
                         "--out", str(desk_scn)]) == 0
        assert dispatch(["agent", "--kind", "smartphone", "--device-id", "phone-1",
                         "--scenario", str(phone_scn), "--server", base,
                         "--sync-interval", "5000", "--batch-max", "16"]) == 0
        assert dispatch(["agent", "--kind", "desktop", "--device-id", "desk-1",
                         "--scenario", str(desk_scn), "--server", base,
                         "--sync-interval", "5000", "--batch-max", "16"]) == 0

        exports: dict[str, bytes] = {}
        for device in ("phone-1", "desk-1"):
            for kind in ("screens", "apps", "software", "keylog", "calls_sms", "social"):
                for fmt in ("json", "csv"):
                    out = tmp_path / f"{device}-{kind}.{fmt}"
                    assert dispatch(["export", "--server", base, "--device", device,
                                     "--kind", kind,
                                     "--from", "2024-01-01T00:00:00.000Z",
                                     "--to", "2024-01-08T00:00:00.000Z",
                                     "--format", fmt, "--out", str(out)]) == 0
                    exports[f"{device}/{kind}.{fmt}"] = out.read_bytes()
        return exports
    finally:
        httpd.shutdown()
        httpd.server_close()


def test_end_to_end_determinism(tmp_path, capsys):
    first = _e2e_run(tmp_path / "run1")
    second = _e2e_run(tmp_path / "run2")
    assert first.keys() == second.keys()
    for name in first:
        assert first[name] == second[name], f"export {name} differs between runs"
    nonempty = sum(1 for body in first.values() if json_rows_nonempty(body))
    assert nonempty >= 6  # the runs actually produced report content
    with capsys.disabled():
        _ok("end-to-end-determinism",
            f"{len(first)} exports byte-identical across two full runs")


def json_rows_nonempty(body: bytes) -> bool:
    try:
        return bool(json.loads(body.decode()).get("rows"))
    except (ValueError, AttributeError):
        return body.count(b"\n") > 1  # csv with at least one data row


# 6. Social thresholds --------------------------------------------------------------

def test_social_thresholds_boundary_and_groups():
    rng = random.Random(77)
    day = timedelta(days=1)
    for trial in range(200):
        threshold = rng.randrange(100, 5000)
        session_count = rng.randrange(1, 6)
        durations = [rng.randrange(1, 2000) for _ in range(session_count)]
        if trial % 3 == 0:  # force the exact-boundary case often
            durations[-1] = max(1, threshold - sum(durations[:-1]))
            if sum(durations) != threshold:
                durations = [threshold]
        from reportkit.events import SessionInterval, SocialEvent, GroupMembership, GroupAction
        events = []
        t = EPOCH
        for seconds in durations:
            events.append(SocialEvent(t, SessionInterval(start=t,
                                                         end=t + timedelta(seconds=seconds))))
            t += timedelta(seconds=seconds + 10)
        all_groups = ["g1", "g2", "g3", "g4"]
        joined = rng.sample(all_groups, rng.randrange(0, 5))
        for g in joined:
            events.append(SocialEvent(t, GroupMembership(group_id=g,
                                                         action=GroupAction.JOIN)))
            t += timedelta(seconds=1)
        left = [g for g in joined if rng.random() < 0.3]
        for g in left:
            events.append(SocialEvent(t, GroupMembership(group_id=g,
                                                         action=GroupAction.LEAVE)))
            t += timedelta(seconds=1)
        blocked = frozenset(rng.sample(all_groups + ["g9"], rng.randrange(0, 3)))
        policy = Policy(max_social_time_s=threshold, blocked_groups=blocked)
        summary = aggregate(events, EPOCH, EPOCH + 2 * day)
        violations = check_thresholds(summary, policy)
        time_violations = [v for v in violations if v.rule_id is RuleId.TIME_EXCEEDED]
        group_violations = [v for v in violations if v.rule_id is RuleId.IMPROPER_GROUP]
        expected_time = 1 if sum(durations) > threshold else 0
        current = set(joined) - set(left)
        assert len(time_violations) == expected_time, \
            f"total={sum(durations)} threshold={threshold}"
        assert len(group_violations) == len(current & blocked)
    _ok("social-thresholds", "200 randomized logs incl. exact-boundary cases")


# 7. Movement -------------------------------------------------------------------------

def test_movement_two_sample_track():
    scenario = [
        _line(0, "gps", {"at": _ts(0), "lat": 0.0, "lon": 0.0, "accuracy_m": 3.0}),
        _line(60_000, "gps", {"at": _ts(60_000), "lat": 0.0, "lon": 1.0,
                              "accuracy_m": 3.0}),
    ]
    state = ServerState()
    agent = Agent(AgentConfig(device_id="d1", agent_kind="smartphone"),
                  InMemoryRepository("d1"), InMemoryTransport(state), policy=Policy())
    agent.run(scenario)
    summary = movement_summary(state, "d1", WINDOW_FROM, WINDOW_TO)
    distance = summary["total_distance_m"]
    assert summary["sample_count"] == 2
    assert abs(distance - 111_195) / 111_195 <= 0.005
    _ok("movement-haversine", f"distance={distance:.1f} m")


# 8. Relevance invariants ----------------------------------------------------------------

def test_relevance_invariants_randomized():
    rng = random.Random(123)
    for trial in range(1000):
        rows = []
        for sid in range(1, rng.randrange(2, 20)):
            crr = Fraction(rng.randrange(0, 1001), 10)
            prr = Fraction(rng.randrange(0, int((100 - crr) * 10) + 1), 10)
            rows.append(SessionRating(sid, crr, prr, 100 - crr - prr))
        means = mean_relevance(rows)
        assert abs(float(means.efficiency) - (100 - float(means.mean_cir))) <= 0.1
        # any row off by more than 0.1 must be rejected
        victim = rows[rng.randrange(len(rows))]
        offset = Fraction(rng.randrange(11, 500), 100)  # 0.11 .. 5.00
        bad = SessionRating(victim.session_id, victim.crr_pct,
                            victim.prr_pct, victim.cir_pct + offset)
        with pytest.raises(SumError):
            validate_rating(bad)
    _ok("relevance-invariants", "1000 random rating sets")
