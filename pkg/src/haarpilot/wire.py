"""AT-style REF/PCMD datagrams over UDP and a loopback simulated drone.

Every datagram is one control tick: the endpoint advances its simulator by
one ``pilot.TICK`` per accepted datagram, so a command list replayed over the
wire ends in the same state as feeding it to ``pilot.step`` directly.
"""

from __future__ import annotations

import logging
import math
import re
import socket
import struct
import threading
import time
import warnings
from dataclasses import dataclass

from . import pilot
from .pilot import Command, DroneState, Mode, PlannedAction

log = logging.getLogger(__name__)

DEFAULT_PORT = 5556
WATCHDOG_MS = 30
MAX_DATAGRAM = 1024
FAILSAFE_S = 2.0
RETRIES = 3

REF_BITS = (18, 20, 22, 24, 28)
LAND_WORD = sum(1 << b for b in REF_BITS)
TAKEOFF_BIT = 1 << 9
TAKEOFF_WORD = LAND_WORD | TAKEOFF_BIT


class WireError(ValueError):
    """Malformed datagram or invalid command argument."""


class TransportError(OSError):
    """A datagram could not be sent after all retries."""


def float_bits(x: float) -> int:
    """IEEE-754 single-precision bit pattern of ``x`` read as a signed 32-bit integer."""
    return struct.unpack("<i", struct.pack("<f", x))[0]


def bits_float(i: int) -> float:
    return struct.unpack("<f", struct.pack("<i", i))[0]


@dataclass(frozen=True)
class Ref:
    takeoff: bool

    @property
    def word(self) -> int:
        return TAKEOFF_WORD if self.takeoff else LAND_WORD


@dataclass(frozen=True)
class Pcmd:
    progressive: bool
    roll: float = 0.0
    pitch: float = 0.0
    gaz: float = 0.0
    yaw: float = 0.0

    @property
    def axes(self) -> tuple[float, float, float, float]:
        return self.roll, self.pitch, self.gaz, self.yaw


HOVER_PCMD = Pcmd(False)


@dataclass(frozen=True)
class AtCommand:
    seq: int
    body: Ref | Pcmd


def _check_seq(seq: int):
    if not isinstance(seq, int) or seq < 1 or seq >= 2**32:
        raise WireError(f"sequence number must be a positive 32-bit integer, got {seq!r}")


def encode_ref(seq: int, takeoff: bool) -> bytes:
    _check_seq(seq)
    return f"AT*REF={seq},{TAKEOFF_WORD if takeoff else LAND_WORD}\r".encode("ascii")


def _axis(name: str, v: float) -> int:
    v = float(v)
    if math.isnan(v):
        raise WireError(f"{name} axis is NaN")
    if v < -1.0 or v > 1.0:
        warnings.warn(f"{name} axis {v} clamped to [-1, 1]", RuntimeWarning, stacklevel=3)
        v = min(1.0, max(-1.0, v))
    return float_bits(v)


def encode_pcmd(seq: int, progressive: bool, roll: float, pitch: float, gaz: float, yaw: float) -> bytes:
    _check_seq(seq)
    fields = ",".join(
        str(_axis(n, v)) for n, v in (("roll", roll), ("pitch", pitch), ("gaz", gaz), ("yaw", yaw))
    )
    return f"AT*PCMD={seq},{int(bool(progressive))},{fields}\r".encode("ascii")


def encode(cmd: AtCommand) -> bytes:
    b = cmd.body
    if isinstance(b, Ref):
        return encode_ref(cmd.seq, b.takeoff)
    return encode_pcmd(cmd.seq, b.progressive, *b.axes)


_INT = r"(-?\d+)"
_REF_RE = re.compile(rf"AT\*REF=(\d+),(\d+)\r")
_PCMD_RE = re.compile(rf"AT\*PCMD=(\d+),([01]),{_INT},{_INT},{_INT},{_INT}\r")


def decode(datagram: bytes) -> AtCommand:
    """Parse a single REF or PCMD datagram; anything else raises WireError."""
    if len(datagram) > MAX_DATAGRAM:
        raise WireError(f"datagram of {len(datagram)} bytes exceeds {MAX_DATAGRAM}")
    try:
        text = datagram.decode("ascii")
    except UnicodeDecodeError:
        raise WireError("datagram is not ASCII") from None
    if m := _REF_RE.fullmatch(text):
        seq, word = int(m.group(1)), int(m.group(2))
        _check_seq(seq)
        if word & ~TAKEOFF_BIT != LAND_WORD:
            raise WireError(f"unsupported REF control word {word}")
        return AtCommand(seq, Ref(bool(word & TAKEOFF_BIT)))
    if m := _PCMD_RE.fullmatch(text):
        seq = int(m.group(1))
        _check_seq(seq)
        ints = [int(g) for g in m.groups()[2:]]
        if any(i < -(2**31) or i >= 2**31 for i in ints):
            raise WireError("PCMD axis out of 32-bit range")
        axes = [bits_float(i) for i in ints]
        if any(math.isnan(a) or abs(a) > 1.0 for a in axes):
            raise WireError(f"PCMD axes outside [-1, 1]: {axes}")
        return AtCommand(seq, Pcmd(m.group(2) == "1", *axes))
    raise WireError(f"unrecognized datagram {datagram[:40]!r}")


# --------------------------------------------------------------------------
# mapping between control ticks and datagram bodies


def tick_body(action: PlannedAction) -> Ref | Pcmd:
    """Datagram body for one control tick; pictures travel as a hover."""
    if action.command is Command.TAKE_OFF:
        return Ref(True)
    if action.command is Command.LAND:
        return Ref(False)
    if action.command in pilot.MOVES:
        vx, vy, vz = action.velocity
        s = pilot.MAX_SPEED
        # roll right positive, pitch nose-down (forward) negative
        return Pcmd(True, vx / s, -vy / s, vz / s, 0.0)
    return HOVER_PCMD


def _move_command(vx: float, vy: float) -> Command:
    if abs(vx) >= abs(vy):
        return Command.MOVE_RIGHT if vx > 0 else Command.MOVE_LEFT
    return Command.MOVE_FORWARD if vy > 0 else Command.MOVE_BACKWARD


def body_tick(body: Ref | Pcmd, state: DroneState) -> PlannedAction:
    """The control tick a datagram body asks of a drone in ``state``.

    Takeoff and landing run autonomously: any datagram received mid-phase
    advances that phase by one tick.
    """
    climb = PlannedAction(Command.TAKE_OFF, (0.0, 0.0, pilot.MAX_SPEED), 0.0)
    descend = PlannedAction(Command.LAND, (0.0, 0.0, -pilot.MAX_SPEED), 0.0)
    if isinstance(body, Ref):
        return climb if body.takeoff else descend
    if state.mode is Mode.TAKING_OFF:
        return climb
    if state.mode is Mode.LANDING:
        return descend
    if not body.progressive:
        return pilot.HOVER
    s = pilot.MAX_SPEED
    v = (body.roll * s, -body.pitch * s, body.gaz * s)
    return PlannedAction(_move_command(v[0], v[1]), v, pilot.TICK)


# --------------------------------------------------------------------------
# sender


@dataclass(frozen=True)
class LogEntry:
    t: float
    seq: int
    datagram: bytes
    keepalive: bool


@dataclass(frozen=True)
class Idle:
    seconds: float


class Session:
    """One sender's view of a drone: owns the sequence counter and the keepalive clock."""

    def __init__(self, host: str = "127.0.0.1", port: int = DEFAULT_PORT, watchdog_ms: float = WATCHDOG_MS, sock=None):
        if not 0 < port <= 65535:
            raise WireError(f"port must lie in (0, 65535], got {port}")
        self.address = (host, port)
        self.watchdog = watchdog_ms / 1000.0
        self.seq = 1
        self.log: list[LogEntry] = []
        self._sock = sock or socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
        self._last = time.monotonic()

    def close(self):
        self._sock.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def _transmit(self, data: bytes, keepalive: bool):
        if len(data) > MAX_DATAGRAM:
            raise WireError(f"datagram of {len(data)} bytes exceeds {MAX_DATAGRAM}")
        for attempt in range(RETRIES + 1):
            try:
                self._sock.sendto(data, self.address)
                break
            except OSError as exc:
                log.warning("send attempt %d to %s failed: %s", attempt + 1, self.address, exc)
                if attempt == RETRIES:
                    raise TransportError(f"sending to {self.address} failed after {RETRIES} retries: {exc}") from exc
        self._last = time.monotonic()
        self.log.append(LogEntry(self._last, self.seq, data, keepalive))
        self.seq += 1

    def send_body(self, body: Ref | Pcmd, keepalive: bool = False):
        self._transmit(encode(AtCommand(self.seq, body)), keepalive)

    def send_tick(self, action: PlannedAction):
        self.send_body(tick_body(action))

    def pump(self):
        """Send a hover keepalive if the watchdog interval has passed since the last datagram."""
        if time.monotonic() - self._last >= self.watchdog:
            self.send_body(HOVER_PCMD, keepalive=True)

    def idle(self, seconds: float):
        """Stay silent for ``seconds``, emitting a hover keepalive every watchdog interval."""
        end = time.monotonic() + seconds
        while True:
            due = self._last + self.watchdog
            if due > end:
                break
            pause = due - time.monotonic()
            if pause > 0:
                time.sleep(pause)
            self.send_body(HOVER_PCMD, keepalive=True)
        rest = end - time.monotonic()
        if rest > 0:
            time.sleep(rest)


def send(session: Session, stream) -> list[LogEntry]:
    """Transmit bodies, control ticks and ``Idle`` gaps in order; returns the session log."""
    for item in stream:
        if isinstance(item, Idle):
            session.idle(item.seconds)
        elif isinstance(item, PlannedAction):
            session.send_tick(item)
        else:
            session.send_body(item)
    return session.log


def parse_destination(text: str, bind: bool = False) -> tuple[str, int]:
    """``host:port`` (port defaults to 5556); a bind address may use port 0 for any free port."""
    host, sep, port = text.rpartition(":")
    if not sep or not host:
        host, port = text, str(DEFAULT_PORT)
    try:
        p = int(port)
    except ValueError:
        raise WireError(f"bad port in {text!r}") from None
    if not (0 if bind else 1) <= p <= 65535:
        raise WireError(f"port must lie in (0, 65535], got {p}")
    return host, p


# --------------------------------------------------------------------------
# simulated endpoint


@dataclass(frozen=True)
class Snapshot:
    state: DroneState
    seq_last: int
    received: int
    malformed: int
    rejected: int

    @property
    def mode(self) -> Mode:
        return self.state.mode

    def csv(self) -> str:
        x, y, z = self.state.position
        return f"mode,x,y,z,seq_last\n{self.state.mode.value},{x!r},{y!r},{z!r},{self.seq_last}\n"


class SimDroneEndpoint:
    """UDP receiver driving a simulated drone, one tick per accepted datagram.

    Stale sequence numbers are ignored except ``1``, which starts a new
    session. After ``failsafe_s`` of silence an airborne drone holds position
    in Hovering.
    """

    def __init__(self, host: str = "127.0.0.1", port: int = 0, failsafe_s: float = FAILSAFE_S):
        self._sock = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
        try:
            self._sock.setsockopt(socket.SOL_SOCKET, socket.SO_RCVBUF, 1 << 22)
        except OSError:  # pragma: no cover - platform limits
            pass
        self._sock.bind((host, port))
        self._sock.settimeout(0.05)
        self.failsafe_s = failsafe_s
        self._lock = threading.Lock()
        self._state = DroneState()
        self._seq_last = 0
        self._received = 0
        self.malformed: list[bytes] = []
        self.rejected: list[int] = []
        self._last_rx = time.monotonic()
        self._stop = threading.Event()
        self._thread: threading.Thread | None = None

    @property
    def address(self) -> tuple[str, int]:
        return self._sock.getsockname()

    def start(self) -> SimDroneEndpoint:
        self._thread = threading.Thread(target=self._loop, name="sim-drone", daemon=True)
        self._thread.start()
        return self

    def stop(self):
        self._stop.set()
        if self._thread is not None:
            self._thread.join()
        self._sock.close()

    def __enter__(self):
        return self.start()

    def __exit__(self, *exc):
        self.stop()

    def _loop(self):
        while not self._stop.is_set():
            try:
                data, _ = self._sock.recvfrom(65536)
            except socket.timeout:
                self._check_failsafe()
                continue
            except OSError:  # pragma: no cover - socket closed under us
                break
            self.handle(data)

    def _check_failsafe(self):
        with self._lock:
            if time.monotonic() - self._last_rx < self.failsafe_s:
                return
            s = self._state
            if s.mode in (Mode.MOVING, Mode.TAKING_OFF, Mode.LANDING):
                log.warning("no datagram for %.1f s; holding position", self.failsafe_s)
                self._state = DroneState(Mode.HOVERING, s.position, (0.0, 0.0, 0.0), s.heading, s.pictures_taken)

    def handle(self, data: bytes):
        """Apply one datagram; thread-safe, also usable without the receive loop."""
        with self._lock:
            self._last_rx = time.monotonic()
            try:
                cmd = decode(data)
            except WireError as exc:
                log.warning("malformed datagram ignored: %s", exc)
                self.malformed.append(bytes(data))
                return
            if cmd.seq <= self._seq_last and cmd.seq != 1:
                log.warning("stale sequence %d after %d ignored", cmd.seq, self._seq_last)
                self.rejected.append(cmd.seq)
                return
            self._seq_last = cmd.seq
            self._received += 1
            self._state = pilot.step(self._state, body_tick(cmd.body, self._state))

    def snapshot(self) -> Snapshot:
        with self._lock:
            return Snapshot(self._state, self._seq_last, self._received, len(self.malformed), len(self.rejected))

    def wait_for(self, seq: int, timeout: float = 5.0) -> Snapshot:
        """Block until a datagram with sequence ``>= seq`` has been applied."""
        end = time.monotonic() + timeout
        while True:
            snap = self.snapshot()
            if snap.seq_last >= seq or time.monotonic() > end:
                return snap
            time.sleep(0.002)
