import json
import random
from pathlib import Path

import pytest

from reportkit.agents import (
    Agent, AgentConfig, AgentKind, DesktopState, FileRepository,
    InMemoryRepository, KindMismatch, ServerUnreachable, SmartphoneState,
    run_agent,
)
from reportkit.events import Kind
from reportkit.policy import AlertLevel, Policy
from reportkit.scenario import (
    ScenarioLine, generate_scenario, load_scenario, parse_scenario, profile_by_name,
)
from reportkit.server import ServerState
from reportkit.sync import InMemoryTransport, TransportError

SCENARIOS = Path(__file__).resolve().parents[1] / "scenarios"

# per-stream oracle counts for the bundled scenarios, frozen from
# independent line counting (json one-liner over the files)
SMARTPHONE_SMALL_COUNTS = dict(
    calls_in=6, calls_out=6, sms_in=6, sms_out=7, gps_samples=9,
    wifi_samples=12, bt_in=2, bt_out=1, app_installs=1, app_removals=1)
SMARTPHONE_SMALL_SOCIAL = 9
DESKTOP_SMALL_COUNTS = dict(
    keylog_chunks=16, software_changes=4, url_visits=16, fs_ops=9, net_flows=15)


def _config(kind="smartphone", device="d1", **kw):
    return AgentConfig(device_id=device, agent_kind=kind, **kw)


def _agent(kind="smartphone", device="d1", state=None, policy=None, **kw):
    state = state or ServerState()
    agent = Agent(_config(kind, device, **kw), InMemoryRepository(device),
                  InMemoryTransport(state), policy=policy or Policy())
    return agent, state


def _line(at_ms, kind, payload):
    return ScenarioLine(at_ms=at_ms, kind=Kind(kind), payload=payload)


def _call(at_ms, direction="incoming"):
    ts = f"2024-01-01T00:00:{at_ms // 1000:02d}.{at_ms % 1000:03d}Z"
    return _line(at_ms, "call", {"direction": direction, "peer": "555",
                                 "start": ts, "duration_s": 30})


class RecordingTransport:
    """Wraps a transport and records batch sizes."""

    def __init__(self, inner):
        self.inner = inner
        self.batch_sizes = []

    def send_batch(self, batch):
        ack = self.inner.send_batch(batch)
        self.batch_sizes.append(len(batch.events))
        return ack

    def fetch_policy(self):
        return self.inner.fetch_policy()


class DropFirstAck(RecordingTransport):
    """Delivers every batch but swallows the first ack."""

    def __init__(self, inner):
        super().__init__(inner)
        self.dropped = False

    def send_batch(self, batch):
        ack = super().send_batch(batch)
        if not self.dropped:
            self.dropped = True
            raise TransportError("ack lost")
        return ack


class AlwaysDown:
    def send_batch(self, batch):
        raise TransportError("no route to server")

    def fetch_policy(self):
        raise TransportError("no route to server")


# --- collect / snapshot ---

def test_collect_counts_calls():
    agent, _ = _agent()
    agent.collect(_call(0))
    agent.collect(_call(10, "incoming"))
    agent.collect(_call(20, "outgoing"))
    assert agent.snapshot() == SmartphoneState(calls_in=2, calls_out=1)


def test_snapshot_pure():
    agent, _ = _agent()
    agent.collect(_call(0))
    first = agent.snapshot()
    second = agent.snapshot()
    assert first == second
    first.calls_in = 99  # mutating a snapshot cannot touch the agent
    assert agent.snapshot().calls_in == 1


def test_empty_state_is_all_zero():
    agent, _ = _agent()
    assert agent.snapshot() == SmartphoneState()


def test_collect_rejects_cross_layer_kind():
    agent, _ = _agent("smartphone")
    keylog = _line(0, "keylog", {"at": "2024-01-01T00:00:00.000Z",
                                 "window_title": "w", "text": "x"})
    with pytest.raises(KindMismatch):
        agent.collect(keylog)
    desktop_agent, _ = _agent("desktop")
    with pytest.raises(KindMismatch):
        desktop_agent.collect(_call(0))


def test_social_passes_through_both_agent_kinds():
    post = _line(0, "social", {"variant": "post", "at": "2024-01-01T00:00:00.000Z",
                               "text": "hi"})
    for kind, state_type in (("smartphone", SmartphoneState), ("desktop", DesktopState)):
        agent, _ = _agent(kind)
        agent.collect(post)
        assert agent.snapshot() == state_type()  # social is counted separately
        assert agent.summary.social_events == 1


def test_bundled_smartphone_scenario_counts():
    scenario = load_scenario(SCENARIOS / "smartphone-small.jsonl")
    agent, state = _agent("smartphone")
    summary = agent.run(scenario)
    assert summary.final_state == SmartphoneState(**SMARTPHONE_SMALL_COUNTS)
    assert summary.social_events == SMARTPHONE_SMALL_SOCIAL
    assert summary.events_collected == len(scenario)
    assert summary.events_collected == summary.final_state.total() + summary.social_events
    assert len(state.devices["d1"].events) == len(scenario)


def test_bundled_desktop_scenario_counts():
    scenario = load_scenario(SCENARIOS / "desktop-small.jsonl")
    agent, _ = _agent("desktop")
    summary = agent.run(scenario)
    assert summary.final_state == DesktopState(**DESKTOP_SMALL_COUNTS)
    assert summary.events_collected == len(scenario)


# --- run_agent ---

def test_batching_arithmetic_with_long_interval():
    scenario = [_call(i * 100) for i in range(10)]
    state = ServerState()
    transport = RecordingTransport(InMemoryTransport(state))
    config = _config(batch_max=4, sync_interval_ms=60_000)
    summary = run_agent(config, scenario, transport, policy=Policy())
    assert transport.batch_sizes == [4, 4, 2]
    assert summary.batches_sent == 3
    assert len(state.devices["d1"].events) == 10


def test_empty_scenario_all_zero():
    state = ServerState()
    transport = RecordingTransport(InMemoryTransport(state))
    summary = run_agent(_config(), [], transport, policy=Policy())
    assert summary.events_collected == 0
    assert summary.batches_sent == 0
    assert transport.batch_sizes == []
    assert summary.final_state == SmartphoneState()


def test_dropped_ack_causes_redelivery_not_duplication():
    scenario = [_call(i * 100) for i in range(10)]
    baseline_state = ServerState()
    run_agent(_config(), scenario, InMemoryTransport(baseline_state), policy=Policy())
    baseline_count = len(baseline_state.devices["d1"].events)

    state = ServerState()
    summary = run_agent(_config(), scenario, DropFirstAck(InMemoryTransport(state)),
                        policy=Policy())
    assert summary.duplicates_redelivered >= 1
    assert len(state.devices["d1"].events) == baseline_count


def test_durability_across_restart(tmp_path):
    scenario = [_call(i * 100) for i in range(7)]
    repo_path = tmp_path / "d1.jsonl"
    repo = FileRepository("d1", repo_path)
    agent = Agent(_config(retry_limit=2), repo, AlwaysDown(), policy=Policy())
    with pytest.raises(ServerUnreachable):
        agent.run(scenario)
    repo.close()
    assert repo_path.exists()

    # restart from the same repository file against a healthy server
    state = ServerState()
    repo2 = FileRepository("d1", repo_path)
    agent2 = Agent(_config(), repo2, InMemoryTransport(state), policy=Policy())
    summary = agent2.run([])
    assert summary.events_collected == 0  # nothing new collected
    assert len(state.devices["d1"].events) == len(scenario)
    assert agent2.snapshot().calls_in == 7  # counters recovered from the file
    repo2.close()


def test_repository_files_byte_identical_across_runs(tmp_path):
    scenario = parse_scenario(generate_scenario(profile_by_name("teen-default", seed=6)))
    policy = Policy(restricted_words=frozenset({"casino"}),
                    alert_level=AlertLevel.NOTIFY_CAPTURE)
    blobs = []
    for run in range(2):
        path = tmp_path / f"run{run}.jsonl"
        repo = FileRepository("d1", path)
        agent = Agent(_config(), repo, InMemoryTransport(ServerState()), policy=policy)
        agent.run(scenario)
        repo.close()
        blobs.append(path.read_bytes())
    assert blobs[0] == blobs[1]
    assert blobs[0]  # non-empty


def test_alert_iff_violation_counting():
    scenario = parse_scenario(generate_scenario(profile_by_name("teen-default", seed=8)))
    policy = Policy(restricted_words=frozenset({"casino", "bet"}),
                    call_blocklist=frozenset({"5550199"}),
                    alert_level=AlertLevel.NOTIFY_CAPTURE)
    agent, state = _agent(policy=policy)
    summary = agent.run(scenario)
    assert summary.alerts_raised == summary.violations_found
    assert summary.captures_taken == summary.violations_found
    ds = state.devices["d1"]
    assert len(ds.alerts) == summary.alerts_raised
    assert len(ds.captures) == summary.captures_taken

    # at notify, same violations but no captures
    agent2, state2 = _agent(policy=policy.bumped(alert_level=AlertLevel.NOTIFY))
    summary2 = agent2.run(scenario)
    assert summary2.violations_found == summary.violations_found
    assert summary2.captures_taken == 0
    assert len(state2.devices["d1"].captures) == 0


def test_layer_separation_randomized():
    rng = random.Random(5)
    for _ in range(10):
        seed = rng.randrange(10_000)
        phone = parse_scenario(generate_scenario(profile_by_name("teen-default", seed=seed)))
        desk = parse_scenario(generate_scenario(profile_by_name("desktop-only", seed=seed)))
        agent, state = _agent("smartphone")
        agent.run(phone)
        stored = state.devices["d1"].events_in_order()
        assert all(e.layer.value in ("smartphone", "social") for e in stored)
        agent2, state2 = _agent("desktop", device="d2")
        agent2.run(desk)
        stored2 = state2.devices["d2"].events_in_order()
        assert all(e.layer.value == "desktop" for e in stored2)


def test_policy_refresh_via_ack_piggyback():
    # first event clean under v1; parent adds a word mid-run; the agent
    # learns the new version from the ack and applies it before the next event
    class BumpOnFirstAck(RecordingTransport):
        def __init__(self, inner, state):
            super().__init__(inner)
            self.state = state
            self.bumped = False

        def send_batch(self, batch):
            ack = super().send_batch(batch)
            if not self.bumped:
                self.bumped = True
                self.state.put_policy({"restricted_words": ["casino"]})
                ack = type(ack)(ack.batch_seq, ack.accepted, ack.duplicates,
                                self.state.policy.version)
            return ack

    state = ServerState()
    transport = BumpOnFirstAck(InMemoryTransport(state), state)
    sms = {"direction": "incoming", "peer": "555", "body": "casino night"}
    scenario = [
        _line(0, "sms", {**sms, "at": "2024-01-01T00:00:00.000Z"}),
        _line(6000, "sms", {**sms, "at": "2024-01-01T00:00:06.000Z"}),
    ]
    config = _config(sync_interval_ms=5000)
    agent = Agent(config, InMemoryRepository("d1"), transport)  # policy from server
    summary = agent.run(scenario)
    assert agent.policy.version == 2
    assert summary.alerts_raised == 1  # only the post-update sms triggers


def test_interval_captures_when_enabled():
    scenario = [_call(i * 1000) for i in range(10)]
    agent, state = _agent(capture_interval_ms=3000)
    summary = agent.run(scenario)
    # virtual span is 9 s: timed snapshots at 3 s, 6 s, 9 s
    assert summary.captures_taken == 3
    assert len(state.devices["d1"].captures) == 3


def test_config_validation():
    with pytest.raises(ValueError):
        AgentConfig(device_id="d", agent_kind=AgentKind.SMARTPHONE, sync_interval_ms=0)
    with pytest.raises(ValueError):
        AgentConfig(device_id="d", agent_kind="smartphone", batch_max=0)


def test_snapshot_after_one_url_visit():
    agent, _ = _agent("desktop")
    agent.collect(_line(0, "url", {"at": "2024-01-01T00:00:00.000Z",
                                   "url": "https://news.example/x",
                                   "browser_id": "firefox"}))
    assert agent.snapshot() == DesktopState(url_visits=1)


def test_stream_counters_monotone_across_run():
    import dataclasses
    scenario = parse_scenario(generate_scenario(profile_by_name("teen-default", seed=14)))
    agent, _ = _agent()
    previous = dataclasses.asdict(agent.snapshot())
    for line in scenario:
        agent.collect(line)
        current = dataclasses.asdict(agent.snapshot())
        assert all(current[k] >= previous[k] for k in previous)
        previous = current
    assert sum(previous.values()) + agent.summary.social_events == len(scenario)


def test_agent_policy_version_never_decreases():
    # a transport that reports an *older* policy version must be ignored
    class StaleTransport(RecordingTransport):
        def fetch_policy(self):
            return Policy(version=1)

    state = ServerState()
    state.put_policy({"restricted_words": ["casino"]})  # server at v2
    transport = StaleTransport(InMemoryTransport(state))
    agent = Agent(_config(), InMemoryRepository("d1"), transport,
                  policy=state.policy)
    agent.run([_call(0)])
    assert agent.policy.version == 2
