import random

import pytest

from reportkit.agents import InMemoryRepository
from reportkit.policy import Policy
from reportkit.scenario import envelope, generate_scenario, parse_scenario, profile_by_name
from reportkit.server import ServerState
from reportkit.sync import (
    Ack, Batch, DecodeError, FaultyTransport, InMemoryTransport, MalformedBatch,
    ValidationFailed, decode_batch, drain_batch, encode_batch, ingest_batch,
    record_from_event,
)


def _records(device="d1", n=5, kind_profile="teen-default", seed=3):
    lines = parse_scenario(generate_scenario(profile_by_name(kind_profile, seed=seed)))[:n]
    return [record_from_event(envelope(line, device, i + 1))
            for i, line in enumerate(lines)]


def _repo_with(device="d1", n=5):
    repo = InMemoryRepository(device)
    for record in _records(device, n):
        repo.append(record)
    return repo


# --- drain_batch ---

def test_drain_returns_seq_prefix():
    repo = _repo_with(n=5)
    batch = drain_batch(repo, 3)
    assert [r["seq"] for r in batch.events] == [1, 2, 3]
    assert batch.device_id == "d1"
    assert batch.batch_seq == 1


def test_drain_before_ack_returns_same_prefix():
    repo = _repo_with(n=5)
    first = drain_batch(repo, 3)
    second = drain_batch(repo, 3)
    assert first == second


def test_drain_empty_repo():
    assert drain_batch(InMemoryRepository("d1"), 3) is None


def test_drain_advances_after_ack():
    repo = _repo_with(n=5)
    batch = drain_batch(repo, 3)
    repo.mark_acked(batch.events[-1]["seq"])
    nxt = drain_batch(repo, 3)
    assert [r["seq"] for r in nxt.events] == [4, 5]
    assert nxt.batch_seq == 2


# --- encode / decode ---

def test_encode_decode_round_trip():
    repo = _repo_with(n=4)
    batch = drain_batch(repo, 4)
    assert decode_batch(encode_batch(batch)) == batch


def test_encoding_is_canonical():
    repo = _repo_with(n=4)
    batch = drain_batch(repo, 4)
    assert encode_batch(batch) == encode_batch(drain_batch(repo, 4))


def test_truncated_bytes_rejected():
    repo = _repo_with(n=2)
    data = encode_batch(drain_batch(repo, 2))
    with pytest.raises(DecodeError):
        decode_batch(data[: len(data) // 2])


def test_decode_requires_fields():
    with pytest.raises(DecodeError):
        decode_batch(b'{"device_id": "d1"}')


# --- ingest_batch ---

def test_ingest_twice_is_idempotent():
    state = ServerState()
    batch = drain_batch(_repo_with(n=3), 3)
    first = ingest_batch(state, batch)
    assert (first.accepted, first.duplicates) == (3, 0)
    second = ingest_batch(state, batch)
    assert (second.accepted, second.duplicates) == (0, 3)
    assert len(state.devices["d1"].events) == 3


def test_ack_counts_always_cover_batch():
    state = ServerState()
    records = _records(n=6)
    b1 = Batch("d1", 1, 0, records[:4])
    b2 = Batch("d1", 2, 0, records[2:])  # overlaps 2 records
    a1 = ingest_batch(state, b1)
    a2 = ingest_batch(state, b2)
    assert a1.accepted + a1.duplicates == 4
    assert a2.accepted + a2.duplicates == 4
    assert (a2.accepted, a2.duplicates) == (2, 2)


def test_gap_recorded_for_missing_prefix():
    state = ServerState()
    records = _records(n=5)
    batch = Batch("d1", 1, 0, records[3:])  # seqs 4, 5 only
    ack = ingest_batch(state, batch)
    assert ack.accepted == 2
    assert state.devices["d1"].gaps() == [[1, 3]]


def test_mixed_device_batch_rejected():
    records = _records(device="d1", n=2)
    foreign = dict(records[1])
    foreign["device_id"] = "d2"
    with pytest.raises(MalformedBatch):
        ingest_batch(ServerState(), Batch("d1", 1, 0, [records[0], foreign]))


def test_empty_batch_rejected():
    with pytest.raises(MalformedBatch):
        ingest_batch(ServerState(), Batch("d1", 1, 0, []))


def test_out_of_order_batch_rejected():
    records = _records(n=3)
    with pytest.raises(MalformedBatch):
        ingest_batch(ServerState(), Batch("d1", 1, 0, [records[2], records[0]]))


def test_invalid_event_rejects_whole_batch():
    records = _records(n=3)
    bad = dict(records[1])
    bad["payload"] = {"direction": "sideways"}
    state = ServerState()
    with pytest.raises(ValidationFailed) as exc:
        ingest_batch(state, Batch("d1", 1, 0, [records[0], bad, records[2]]))
    assert exc.value.index == 1
    assert "d1" not in state.devices or len(state.devices["d1"].events) == 0


def test_ack_carries_current_policy_version():
    state = ServerState()
    state.put_policy({"restricted_words": ["casino"]})
    ack = ingest_batch(state, drain_batch(_repo_with(n=1), 1))
    assert ack.current_policy_version == 2


def test_per_device_order_regardless_of_arrival():
    state = ServerState()
    records = _records(n=6)
    ingest_batch(state, Batch("d1", 1, 0, records[4:]))
    ingest_batch(state, Batch("d1", 2, 0, records[:2]))
    ingest_batch(state, Batch("d1", 3, 0, records[2:4]))
    stored = state.devices["d1"].events_in_order()
    assert [e.seq_no for e in stored] == [1, 2, 3, 4, 5, 6]


# --- transports ---

def test_in_memory_transport_round_trips():
    state = ServerState()
    transport = InMemoryTransport(state)
    ack = transport.send_batch(drain_batch(_repo_with(n=2), 2))
    assert isinstance(ack, Ack)
    assert ack.accepted == 2
    assert transport.fetch_policy() == Policy()


def test_faulty_transport_eventually_converges():
    state = ServerState()
    transport = FaultyTransport(state, random.Random(1234))
    repo = _repo_with(n=6)
    sent = 0
    while True:
        batch = drain_batch(repo, 2)
        if batch is None:
            break
        try:
            transport.send_batch(batch)
        except Exception:
            continue
        repo.mark_acked(batch.events[-1]["seq"])
        sent += 1
    transport.flush_pending()
    assert len(state.devices["d1"].events) == 6
    assert sent == 3
