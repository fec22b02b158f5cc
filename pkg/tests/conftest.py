import sys
from datetime import timedelta
from pathlib import Path

from hypothesis import strategies as st

REPO_ROOT = Path(__file__).resolve().parents[1]
sys.path.insert(0, str(REPO_ROOT / "tests"))

from reportkit.events import (  # noqa: E402
    AppChange, AppSource, BluetoothTransfer, CallEvent, ChangeAction,
    ChatMessage, Direction, FileOp, FileSystemOp, FriendRequest, GpsSample,
    GroupAction, GroupMembership, Interaction, InteractionKind, Kind,
    KIND_LAYER, KeyLogChunk, MonitoredEvent, NetProto, NetworkFlow, Post,
    SessionInterval, SmsEvent, SocialEvent, SoftwareChange, UrlVisit,
    WifiSample,
)
from reportkit.scenario import EPOCH  # noqa: E402


# --- shared hypothesis strategies -------------------------------------------

def ts_strategy():
    # millisecond-precision instants across roughly a month of virtual time
    return st.integers(min_value=0, max_value=30 * 24 * 3600 * 1000).map(
        lambda ms: EPOCH + timedelta(milliseconds=ms))


_text = st.text(
    alphabet=st.characters(blacklist_categories=("Cs",), max_codepoint=0x2FFF),
    max_size=40)
_short = st.text(alphabet="abcdefghij0123456789", min_size=1, max_size=12)
_direction = st.sampled_from(list(Direction))


def payload_strategy(kind: Kind):
    if kind is Kind.CALL:
        return st.builds(CallEvent, direction=_direction, peer_number=_short,
                         start_at=ts_strategy(),
                         duration_s=st.integers(min_value=0, max_value=86_400))
    if kind is Kind.SMS:
        return st.builds(SmsEvent, direction=_direction, peer_number=_short,
                         at=ts_strategy(), body=_text)
    if kind is Kind.GPS:
        return st.builds(GpsSample, at=ts_strategy(),
                         lat=st.floats(min_value=-90, max_value=90, allow_nan=False),
                         lon=st.floats(min_value=-180, max_value=180, allow_nan=False),
                         accuracy_m=st.floats(min_value=0, max_value=500, allow_nan=False))
    if kind is Kind.WIFI:
        return st.builds(WifiSample, at=ts_strategy(),
                         bytes_rx=st.integers(min_value=0, max_value=10**9),
                         bytes_tx=st.integers(min_value=0, max_value=10**9),
                         ssid=_short)
    if kind is Kind.BLUETOOTH:
        return st.builds(BluetoothTransfer, direction=_direction, file_name=_short,
                         size_bytes=st.integers(min_value=0, max_value=10**9),
                         at=ts_strategy(), peer_device=_short)
    if kind is Kind.APP:
        return st.builds(AppChange, action=st.sampled_from(list(ChangeAction)),
                         package_id=_short, source=st.sampled_from(list(AppSource)),
                         at=ts_strategy())
    if kind is Kind.KEYLOG:
        return st.builds(KeyLogChunk, at=ts_strategy(), window_title=_short, text=_text)
    if kind is Kind.SOFTWARE:
        return st.builds(SoftwareChange, action=st.sampled_from(list(ChangeAction)),
                         name=_short, publisher=_short, at=ts_strategy())
    if kind is Kind.URL:
        return st.builds(UrlVisit, at=ts_strategy(),
                         url=_short.map(lambda s: f"https://{s}.example/page"),
                         browser_id=_short)
    if kind is Kind.FILE:
        def mk_file(at, op, path, target):
            needs = op in (FileOp.RENAME, FileOp.MOVE)
            return FileSystemOp(at=at, op=op, path=path,
                                new_path=target if needs else None)
        return st.builds(mk_file, at=ts_strategy(), op=st.sampled_from(list(FileOp)),
                         path=_short.map(lambda s: "/tmp/" + s),
                         target=_short.map(lambda s: "/tmp/moved/" + s))
    if kind is Kind.NET:
        return st.builds(NetworkFlow, at=ts_strategy(), remote_host=_short,
                         port=st.integers(min_value=0, max_value=65535),
                         bytes=st.integers(min_value=0, max_value=10**9),
                         proto=st.sampled_from(list(NetProto)))
    if kind is Kind.SOCIAL:
        def mk_session(at, length_s):
            return SocialEvent(at, SessionInterval(start=at,
                                                   end=at + timedelta(seconds=length_s)))
        variants = st.one_of(
            st.builds(Post, text=_text),
            st.builds(FriendRequest, direction=_direction, accepted=st.booleans()),
            st.builds(ChatMessage, direction=_direction, peer=_short, text=_text),
            st.builds(GroupMembership, group_id=_short,
                      action=st.sampled_from(list(GroupAction))),
            st.builds(Interaction, kind=st.sampled_from(list(InteractionKind))),
        )
        return st.one_of(
            st.builds(SocialEvent, at=ts_strategy(), variant=variants),
            st.builds(mk_session, at=ts_strategy(),
                      length_s=st.integers(min_value=1, max_value=7200)),
        )
    raise AssertionError(kind)


def event_strategy(kinds=None):
    kinds = list(kinds) if kinds else list(Kind)

    def build(kind, device, seq, at, payload):
        return MonitoredEvent(device_id=device, layer=KIND_LAYER[kind], seq_no=seq,
                              collected_at=at, kind=kind, payload=payload)

    return st.sampled_from(kinds).flatmap(
        lambda kind: st.builds(build, kind=st.just(kind), device=_short,
                               seq=st.integers(min_value=1, max_value=10**6),
                               at=ts_strategy(), payload=payload_strategy(kind)))
