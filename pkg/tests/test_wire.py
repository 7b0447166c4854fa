import json

import pytest

from airshield import wire
from airshield.wire import CommandFrame, Opcode


def test_encode_set_duty_full():
    frame = CommandFrame(seq=1, opcode=Opcode.SET_DUTY, payload=200)
    assert wire.encode(frame) == bytes([0xA5, 0x01, 0x01, 0xC8, 0xC8])


def test_encode_ping():
    frame = CommandFrame(seq=0, opcode=Opcode.PING, payload=0)
    assert wire.encode(frame) == bytes([0xA5, 0x00, 0x03, 0x00, 0x03])


def test_payload_out_of_range():
    with pytest.raises(wire.PayloadOutOfRange):
        CommandFrame(seq=0, opcode=Opcode.SET_DUTY, payload=201)


def test_decode_inverse_of_encode():
    frame = wire.decode(bytes([0xA5, 0x01, 0x01, 0xC8, 0xC8]))
    assert frame == CommandFrame(seq=1, opcode=Opcode.SET_DUTY, payload=200)


def test_decode_bad_checksum():
    with pytest.raises(wire.BadChecksum):
        wire.decode(bytes([0xA5, 0x01, 0x01, 0xC8, 0xC9]))


def test_decode_bad_header():
    with pytest.raises(wire.BadHeader):
        wire.decode(bytes([0x5A, 0x01, 0x01, 0xC8, 0xC8]))


def test_decode_bad_length():
    with pytest.raises(wire.BadLength):
        wire.decode(bytes([0xA5, 0x01, 0x01, 0xC8]))
    with pytest.raises(wire.BadLength):
        wire.decode(bytes(6))


def test_decode_unknown_opcode_with_valid_checksum():
    body = [0x00, 0x07, 0x00]
    data = bytes([0xA5, *body, body[0] ^ body[1] ^ body[2]])
    with pytest.raises(wire.UnknownOpcode):
        wire.decode(data)


def test_round_trip_sample_of_valid_frames():
    for opcode in Opcode:
        for payload in (0, 1, 100, 200):
            for seq in (0, 1, 127, 255):
                f = CommandFrame(seq=seq, opcode=opcode, payload=payload)
                assert wire.decode(wire.encode(f)) == f


def test_single_bit_flips_rejected():
    import numpy as np
    rng = np.random.default_rng(8)
    for _ in range(200):
        f = CommandFrame(seq=int(rng.integers(256)),
                         opcode=list(Opcode)[int(rng.integers(3))],
                         payload=int(rng.integers(201)))
        data = bytearray(wire.encode(f))
        for byte_idx in (1, 2, 3):
            for bit in range(8):
                corrupted = bytearray(data)
                corrupted[byte_idx] ^= 1 << bit
                with pytest.raises((wire.BadChecksum, wire.UnknownOpcode,
                                    wire.PayloadOutOfRange)):
                    wire.decode(bytes(corrupted))


def test_duty_helper_scales_to_wire_units():
    assert wire.set_duty_frame(3, 100.0).payload == 200
    assert wire.set_duty_frame(3, 49.75).payload == 100  # 0.5% units
    assert wire.stop_frame(9).payload == 0
    with pytest.raises(wire.PayloadOutOfRange):
        wire.set_duty_frame(0, 101.0)


# --- journal ---------------------------------------------------------------

def test_journal_round_trip(tmp_path):
    path = tmp_path / "j.jsonl"
    records = [{"t_ms": i, "dist_m": 0.1 * i, "state": "SAFE"} for i in range(3)]
    wire.journal_append(path, records)
    got, truncated = wire.journal_read(path)
    assert got == records
    assert not truncated


def test_journal_append_is_incremental(tmp_path):
    path = tmp_path / "j.jsonl"
    wire.journal_append(path, {"a": 1})
    wire.journal_append(path, {"b": 2})
    got, _ = wire.journal_read(path)
    assert got == [{"a": 1}, {"b": 2}]


def test_journal_tolerates_truncated_tail(tmp_path):
    path = tmp_path / "j.jsonl"
    wire.journal_append(path, [{"i": 0}, {"i": 1}])
    with open(path, "a", encoding="utf-8") as fh:
        fh.write('{"i": 2, "dist"')  # torn write, no newline
    got, truncated = wire.journal_read(path)
    assert got == [{"i": 0}, {"i": 1}]
    assert truncated


def test_journal_malformed_line_reports_position(tmp_path):
    path = tmp_path / "j.jsonl"
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps({"i": 0}) + "\n")
        fh.write("not json at all\n")
        fh.write(json.dumps({"i": 2}) + "\n")
    with pytest.raises(wire.MalformedRecord) as exc_info:
        wire.journal_read(path)
    assert exc_info.value.line_no == 2


def test_journal_empty_file(tmp_path):
    path = tmp_path / "j.jsonl"
    path.write_text("")
    assert wire.journal_read(path) == ([], False)


def test_journal_missing_file_is_io_failure(tmp_path):
    with pytest.raises(wire.IoFailure):
        wire.journal_read(tmp_path / "nope.jsonl")


def test_trace_filename_convention():
    assert wire.trace_filename("va", 42) == "trial_va_42.jsonl"


def test_telemetry_record_round_trip(tmp_path):
    rec = wire.TelemetryRecord(t_ms=10, dist_m=0.31, state="ACTIVE", duty_pct=100.0, seq=3)
    path = tmp_path / "telemetry.jsonl"
    wire.journal_append(path, rec.to_json_dict())
    got, _ = wire.journal_read(path)
    assert wire.TelemetryRecord.from_json_dict(got[0]) == rec


def test_telemetry_record_validation():
    with pytest.raises(ValueError):
        wire.TelemetryRecord(t_ms=0, dist_m=0.3, state="WARP", duty_pct=0.0, seq=0)
    with pytest.raises(ValueError):
        wire.TelemetryRecord(t_ms=0, dist_m=float("nan"), state="SAFE", duty_pct=0.0, seq=0)
