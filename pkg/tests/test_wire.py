import socket
import time

import numpy as np
import pytest

from haarpilot.labels import GestureLabel as G
from haarpilot.pilot import HOVER, Command, GestureMap, Mode, Pilot, PlannedAction, World
from haarpilot.wire import (
    LAND_WORD,
    TAKEOFF_WORD,
    AtCommand,
    Idle,
    Pcmd,
    Ref,
    Session,
    SimDroneEndpoint,
    TransportError,
    WireError,
    bits_float,
    decode,
    encode,
    encode_pcmd,
    encode_ref,
    float_bits,
    parse_destination,
    send,
    tick_body,
)


def test_ref_words_from_bit_layout():
    land = (1 << 18) | (1 << 20) | (1 << 22) | (1 << 24) | (1 << 28)
    assert land == 0x11540000 == LAND_WORD == 290717696
    assert TAKEOFF_WORD == land + 2**9 == 290718208
    assert encode_ref(1, True) == b"AT*REF=1,290718208\r"
    assert encode_ref(7, False) == b"AT*REF=7,290717696\r"


def test_pcmd_encoding():
    assert float_bits(0.0) == 0
    assert float_bits(-0.8) == -1085485875 == int(np.float32(-0.8).view(np.int32))
    assert encode_pcmd(5, False, 0, 0, 0, 0) == b"AT*PCMD=5,0,0,0,0,0\r"
    with pytest.raises(WireError):
        encode_pcmd(1, True, float("nan"), 0, 0, 0)
    with pytest.warns(RuntimeWarning):
        assert encode_pcmd(1, True, 2.0, 0, 0, 0) == encode_pcmd(1, True, 1.0, 0, 0, 0)


def test_float_bit_pattern_round_trip():
    rng = np.random.default_rng(0)
    vals = np.concatenate([rng.uniform(-1, 1, 50000), rng.normal(0, 1e3, 50000)]).astype(np.float32)
    oracle = vals.view(np.int32)
    for v, bits in zip(vals.tolist(), oracle.tolist()):
        assert float_bits(v) == bits
        assert bits_float(bits) == v


def test_datagram_round_trip():
    rng = np.random.default_rng(1)
    for seq in range(1, 200):
        axes = [float(np.float32(a)) for a in rng.uniform(-1, 1, 4)]
        cmd = AtCommand(seq, Pcmd(bool(seq % 2), *axes))
        assert decode(encode(cmd)) == cmd
    assert decode(encode_ref(3, True)) == AtCommand(3, Ref(True))


def test_decode_rejects_garbage():
    for bad in (b"", b"hello", b"AT*REF=1,5\r", b"AT*PCMD=1,2,0,0,0,0\r", b"AT*REF=0,290717696\r", b"\xff\xfe"):
        with pytest.raises(WireError):
            decode(bad)


def test_tick_mapping():
    assert tick_body(PlannedAction(Command.TAKE_OFF, (0, 0, 3), 1.0)) == Ref(True)
    assert tick_body(PlannedAction(Command.MOVE_FORWARD, (0.0, 3.0, 0.0), 0.5)) == Pcmd(True, 0.0, -1.0, 0.0, 0.0)
    assert tick_body(HOVER) == Pcmd(False)
    assert tick_body(PlannedAction(Command.TAKE_PICTURE, (0, 0, 0), 0.0)) == Pcmd(False)


class Recorder:
    def __init__(self, fail=0):
        self.sent = []
        self.fail = fail
        self.attempts = 0

    def sendto(self, data, addr):
        self.attempts += 1
        if self.fail:
            self.fail -= 1
            raise OSError("network unreachable")
        self.sent.append(data)

    def close(self):
        pass


def test_sequence_numbers_and_restart():
    s = Session(sock=Recorder())
    s.send_body(Ref(True))
    s.send_body(Pcmd(False))
    assert [e.seq for e in s.log] == [1, 2]
    assert Session(sock=Recorder()).seq == 1


def test_retry_policy():
    rec = Recorder(fail=2)
    s = Session(sock=rec)
    s.send_body(Pcmd(False))
    assert rec.attempts == 3 and len(rec.sent) == 1
    rec = Recorder(fail=10)
    with pytest.raises(TransportError):
        Session(sock=rec).send_body(Pcmd(False))
    assert rec.attempts == 4


def test_idle_keepalives():
    s = Session(sock=Recorder(), watchdog_ms=30)
    send(s, [Ref(True), Idle(0.1)])
    keep = [e for e in s.log if e.keepalive]
    assert 2 <= len(keep) <= 4
    assert all(e.datagram.startswith(b"AT*PCMD=") for e in keep)


def test_parse_destination():
    assert parse_destination("10.0.0.2:7000") == ("10.0.0.2", 7000)
    assert parse_destination("drone") == ("drone", 5556)
    with pytest.raises(WireError):
        parse_destination("host:99999")
    with pytest.raises(WireError):
        parse_destination("host:0")
    assert parse_destination("127.0.0.1:0", bind=True) == ("127.0.0.1", 0)


def test_endpoint_takeoff_then_hovers():
    ep = SimDroneEndpoint()
    try:
        ep.handle(encode_ref(1, True))
        for seq in range(2, 42):
            ep.handle(encode_pcmd(seq, False, 0, 0, 0, 0))
        snap = ep.snapshot()
        assert snap.mode is Mode.HOVERING and snap.state.position[2] == 3.0
    finally:
        ep.stop()


def test_endpoint_stale_and_garbage():
    ep = SimDroneEndpoint()
    try:
        ep.handle(encode_ref(1, True))
        ep.handle(encode_pcmd(7, False, 0, 0, 0, 0))
        before = ep.snapshot().state
        ep.handle(encode_ref(5, False))
        ep.handle(b"\x00garbage")
        snap = ep.snapshot()
        assert snap.state == before and snap.rejected == 1 and snap.malformed == 1 and snap.seq_last == 7
        assert snap.csv().startswith("mode,x,y,z,seq_last\nTakingOff,")
    finally:
        ep.stop()


def test_endpoint_failsafe_holds_position():
    with SimDroneEndpoint(failsafe_s=0.2) as ep:
        sock = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
        sock.sendto(encode_ref(1, True), ep.address)
        ep.wait_for(1)
        time.sleep(0.5)
        assert ep.snapshot().mode is Mode.HOVERING
        sock.close()


def test_udp_flight_matches_in_process():
    with SimDroneEndpoint() as ep:
        with Session(*ep.address) as s:
            p = Pilot(World(operator=(0.0, 8.0, 3.0)), GestureMap(cooldown=0), on_tick=s.send_tick)
            p.run([G.PALM] * 3 + [G.VS] * 3 + [G.GS] * 3 + [G.LF] * 3 + [G.VS] * 3 + [G.FIST] * 3)
            snap = ep.wait_for(s.seq - 1)
    assert snap.received == s.seq - 1
    assert snap.mode is p.state.mode and snap.state.position == p.state.position
