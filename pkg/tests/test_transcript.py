import json

from kprotect import wire
from kprotect.ranges import IdRange
from kprotect.transcript import InvocationTranscript
from kprotect.wire import ProtocolMessage


def sample() -> InvocationTranscript:
    t = InvocationTranscript("exec-9", "abc", alpha=5, protocol="hybrid", store_versions={"S": 4})
    t.append(edge=("P", "S"), service="S", direction="out", episode=1, target=77,
             message=ProtocolMessage(wire.INVOKE_REQ, 1, range=IdRange.point(77)), precise=True)
    t.append(edge=("P", "S"), service="S", direction="in", episode=1,
             message=ProtocolMessage(wire.INVOKE_RESP, 1, tuples=((77, {"a": "b"}),)))
    return t


def test_ndjson_round_trip(tmp_path):
    t = sample()
    path = tmp_path / "t.ndjson"
    t.dump(path)
    lines = path.read_text().splitlines()
    assert json.loads(lines[0])["type"] == "header"
    assert len(lines) == 3
    back = InvocationTranscript.load(path)
    assert back.events == t.events
    assert back.header() == t.header()


def test_requests_filter():
    t = sample()
    assert [e.seq for e in t.requests()] == [0]
    assert t.requests(wire.SELECTIVITY_REQ) == []
    assert len(t) == 2


def test_messages_drop_sequence_numbers():
    t = sample()
    assert all(m["seq"] is None for m in t.messages())
