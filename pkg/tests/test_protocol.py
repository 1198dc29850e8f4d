import pytest

from parablude.protocol import (
    MESSAGE_TYPES,
    ProtocolError,
    SeqTracker,
    WireMessage,
    decode,
    encode,
)

SAMPLES = {
    "hit": {"pmu_id": "pmu-1", "location": "hand", "confidence": 0.9, "timestamp_ms": 12.5},
    "sword_clash": {"pmu_id": "pmu-1", "confidence": 0.99, "timestamp_ms": 5.0},
    "override": {"target_seq": 4, "location": "torso"},
    "command": {"command": "start"},
    "state": {"snapshot": {"phase": "lobby"}},
    "ack": {"ack_seq": 7},
    "error": {"message": "nope"},
}


class TestCodec:
    @pytest.mark.parametrize("kind", MESSAGE_TYPES)
    def test_round_trip(self, kind):
        msg = WireMessage(type=kind, seq=3, payload=SAMPLES[kind], ts_ms=100.0)
        assert decode(encode(msg)) == msg

    def test_round_trip_without_ts(self):
        msg = WireMessage(type="ack", seq=1, payload={"ack_seq": 1})
        line = encode(msg)
        assert line.endswith("\n") and "\n" not in line[:-1]
        assert decode(line) == msg

    def test_decode_bytes(self):
        msg = WireMessage(type="command", seq=2, payload={"command": "pause"})
        assert decode(encode(msg).encode()) == msg

    def test_unknown_type_named(self):
        with pytest.raises(ProtocolError, match="ping2") as info:
            decode('{"type": "ping2", "seq": 1, "payload": {}}')
        assert info.value.code == "unknown_type"

    def test_missing_payload_field(self):
        with pytest.raises(ProtocolError, match="location"):
            decode('{"type": "hit", "seq": 1, "payload": {"pmu_id": "x", "confidence": 1, "timestamp_ms": 0}}')

    def test_malformed_json(self):
        with pytest.raises(ProtocolError, match="JSON"):
            decode("{nope")

    def test_non_object(self):
        with pytest.raises(ProtocolError, match="object"):
            decode("[1, 2]")

    def test_missing_envelope_fields(self):
        with pytest.raises(ProtocolError, match="seq"):
            decode('{"type": "ack", "payload": {"ack_seq": 1}}')
        with pytest.raises(ProtocolError, match="type"):
            decode('{"seq": 1, "payload": {}}')

    @pytest.mark.parametrize("seq", [0, -3, 1.5, True, "7"])
    def test_bad_seq_values(self, seq):
        with pytest.raises(ProtocolError, match="seq"):
            WireMessage(type="ack", seq=seq, payload={"ack_seq": 1})


class TestSeqTracker:
    def test_strictly_increasing_with_gaps(self):
        t = SeqTracker()
        assert t.check(1) == "new"
        assert t.check(2) == "new"
        assert t.check(9) == "new"

    def test_duplicate_of_last(self):
        t = SeqTracker()
        t.check(4)
        assert t.check(4) == "duplicate"
        assert t.check(4) == "duplicate"
        assert t.check(5) == "new"

    def test_regression_raises(self):
        t = SeqTracker()
        t.check(10)
        with pytest.raises(ProtocolError) as info:
            t.check(3)
        assert info.value.code == "seq_regression"
