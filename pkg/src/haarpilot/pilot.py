"""Gesture debouncing, safety-gated planning and a first-order drone simulator.

Axes are in feet: ``+x`` to the drone's right, ``+y`` forward (toward the
operator in the usual setup), ``+z`` up. Motion is executed as a sequence of
fixed control ticks so an in-process run and a remote endpoint fed the same
ticks land in the same state.
"""

from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path

from .labels import GESTURES, GestureLabel

TICK = 0.05  # s per control tick
MAX_SPEED = 3.0  # ft/s
HOVER_ALTITUDE = 3.0  # ft
MOVE_DISTANCE = 1.5  # ft per move command
CLEARANCE = 3.0  # ft
SAFETY_SLACK = 1e-9  # absorbs Euler round-off against the planned endpoint


class InputError(ValueError):
    pass


class WorldParseError(InputError):
    def __init__(self, line: int, msg: str):
        super().__init__(f"line {line}: {msg}")
        self.line = line


class Command(Enum):
    TAKE_OFF = "TakeOff"
    LAND = "Land"
    MOVE_LEFT = "MoveLeft"
    MOVE_RIGHT = "MoveRight"
    MOVE_FORWARD = "MoveForward"
    MOVE_BACKWARD = "MoveBackward"
    HOVER = "Hover"
    TAKE_PICTURE = "TakePicture"

    @classmethod
    def parse(cls, token: str) -> Command:
        t = token.strip().replace("_", "").replace("-", "").lower()
        for c in cls:
            if c.value.lower() == t:
                return c
        raise ValueError(f"unknown command {token!r}")


# unit direction per move command
_DIRECTIONS = {
    Command.MOVE_LEFT: (-1.0, 0.0, 0.0),
    Command.MOVE_RIGHT: (1.0, 0.0, 0.0),
    Command.MOVE_FORWARD: (0.0, 1.0, 0.0),
    Command.MOVE_BACKWARD: (0.0, -1.0, 0.0),
}
MOVES = tuple(_DIRECTIONS)


class Mode(Enum):
    LANDED = "Landed"
    TAKING_OFF = "TakingOff"
    HOVERING = "Hovering"
    MOVING = "Moving"
    LANDING = "Landing"


TRANSITIONS = {
    Mode.LANDED: {Mode.LANDED, Mode.TAKING_OFF},
    Mode.TAKING_OFF: {Mode.TAKING_OFF, Mode.HOVERING},
    Mode.HOVERING: {Mode.HOVERING, Mode.MOVING, Mode.LANDING},
    Mode.MOVING: {Mode.MOVING, Mode.HOVERING, Mode.LANDING},
    Mode.LANDING: {Mode.LANDING, Mode.LANDED},
}


DEFAULT_MAP = {
    GestureLabel.PALM: Command.TAKE_OFF,
    GestureLabel.FIST: Command.LAND,
    GestureLabel.GS: Command.MOVE_LEFT,
    GestureLabel.VS: Command.MOVE_FORWARD,
    GestureLabel.LF: Command.TAKE_PICTURE,
}


@dataclass(frozen=True)
class GestureMap:
    commands: dict = field(default_factory=lambda: dict(DEFAULT_MAP))
    k: int = 3
    cooldown: int = 10

    def __post_init__(self):
        if self.k < 1:
            raise InputError(f"debounce length must be >= 1, got {self.k}")
        if self.cooldown < 0:
            raise InputError(f"cooldown must be >= 0, got {self.cooldown}")
        missing = [g.value for g in GESTURES if g not in self.commands]
        if missing:
            raise InputError(f"gesture map has no command for {', '.join(missing)}")
        if GestureLabel.NONE in self.commands:
            raise InputError("None cannot be mapped to a command")

    def command(self, label: GestureLabel, airborne: bool = False) -> Command:
        """Mapped command; a takeoff gesture while airborne means hover."""
        cmd = self.commands[label]
        return Command.HOVER if cmd is Command.TAKE_OFF and airborne else cmd

    @classmethod
    def parse(cls, text: str) -> GestureMap:
        """``gesture=command`` lines over the defaults; ``k=`` and ``cooldown=`` set the debounce."""
        commands = dict(DEFAULT_MAP)
        k, cooldown = 3, 10
        for ln, line in enumerate(text.splitlines(), 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, value = line.partition("=")
            if not sep:
                raise WorldParseError(ln, f"expected key=value, got {line!r}")
            key, value = key.strip(), value.strip()
            try:
                if key.lower() == "k":
                    k = int(value)
                elif key.lower() == "cooldown":
                    cooldown = int(value)
                else:
                    label = GestureLabel.parse(key)
                    if label is GestureLabel.NONE:
                        raise ValueError("None cannot be mapped to a command")
                    commands[label] = Command.parse(value)
            except ValueError as exc:
                raise WorldParseError(ln, str(exc)) from None
        return cls(commands, k, cooldown)

    @classmethod
    def load(cls, path) -> GestureMap:
        return cls.parse(Path(path).read_text())


class Debouncer:
    """Emit a gesture once it holds for ``k`` consecutive frames, then stay quiet for ``cooldown`` frames."""

    def __init__(self, k: int = 3, cooldown: int = 10):
        self.k = k
        self.cooldown = cooldown
        self._label = None
        self._run = 0
        self._quiet = 0

    def push(self, label: GestureLabel) -> GestureLabel | None:
        if self._quiet:
            self._quiet -= 1
            return None
        if label is GestureLabel.NONE:
            self._label, self._run = None, 0
            return None
        if label is self._label:
            self._run += 1
        else:
            self._label, self._run = label, 1
        if self._run >= self.k:
            self._label, self._run = None, 0
            self._quiet = self.cooldown
            return label
        return None


def debounce(labels, gmap: GestureMap | None = None) -> list[tuple[int, Command]]:
    """``(frame number, command)`` pairs, frames counted from 1; takeoff is not resolved against state."""
    gmap = gmap or GestureMap()
    deb = Debouncer(gmap.k, gmap.cooldown)
    out = []
    for i, label in enumerate(labels, 1):
        hit = deb.push(label)
        if hit is not None:
            out.append((i, gmap.commands[hit]))
    return out


# --------------------------------------------------------------------------
# world geometry


@dataclass(frozen=True)
class Box:
    """Axis-aligned box: min corner ``(x, y, z)``, extents ``w`` along x, ``d`` along y, ``h`` along z."""

    x: float
    y: float
    z: float
    w: float
    h: float
    d: float

    def __post_init__(self):
        vals = (self.x, self.y, self.z, self.w, self.h, self.d)
        if not all(math.isfinite(v) for v in vals):
            raise InputError(f"non-finite obstacle {self}")
        if self.w <= 0 or self.h <= 0 or self.d <= 0:
            raise InputError(f"obstacle extents must be positive: {self}")

    @property
    def lo(self):
        return (self.x, self.y, self.z)

    @property
    def hi(self):
        return (self.x + self.w, self.y + self.d, self.z + self.h)


@dataclass(frozen=True)
class World:
    operator: tuple[float, float, float] | None = None
    obstacles: tuple[Box, ...] = ()
    clearance: float = CLEARANCE

    def __post_init__(self):
        if not (self.clearance > 0 and math.isfinite(self.clearance)):
            raise InputError(f"clearance must be positive, got {self.clearance}")
        if self.operator is not None and not all(math.isfinite(v) for v in self.operator):
            raise InputError(f"non-finite operator position {self.operator}")

    @classmethod
    def parse(cls, text: str) -> World:
        operator = None
        obstacles = []
        clearance = CLEARANCE
        for ln, line in enumerate(text.splitlines(), 1):
            parts = line.split("#", 1)[0].split()
            if not parts:
                continue
            kind, args = parts[0].lower(), parts[1:]
            want = {"operator": 3, "obstacle": 6, "clearance": 1}.get(kind)
            if want is None:
                raise WorldParseError(ln, f"unknown directive {parts[0]!r}")
            if len(args) != want:
                raise WorldParseError(ln, f"{kind} takes {want} numbers, got {len(args)}")
            try:
                nums = [float(a) for a in args]
            except ValueError as exc:
                raise WorldParseError(ln, str(exc)) from None
            if not all(math.isfinite(v) for v in nums):
                raise WorldParseError(ln, "non-finite value")
            try:
                if kind == "operator":
                    operator = tuple(nums)
                elif kind == "obstacle":
                    obstacles.append(Box(*nums))
                else:
                    clearance = nums[0]
            except InputError as exc:
                raise WorldParseError(ln, str(exc)) from None
        try:
            return cls(operator, tuple(obstacles), clearance)
        except InputError as exc:
            raise WorldParseError(0, str(exc)) from None

    @classmethod
    def load(cls, path) -> World:
        return cls.parse(Path(path).read_text())


def segment_point_distance(p0, p1, q) -> float:
    d = [b - a for a, b in zip(p0, p1)]
    dd = sum(c * c for c in d)
    t = 0.0 if dd == 0 else max(0.0, min(1.0, sum((qi - ai) * di for qi, ai, di in zip(q, p0, d)) / dd))
    return math.dist([a + t * c for a, c in zip(p0, d)], q)


def segment_box_distance(p0, p1, box: Box) -> float:
    """Exact minimum distance between segment ``p0 -> p1`` and a box.

    The squared distance is convex and piecewise quadratic in the segment
    parameter, with breaks where a coordinate crosses a box face; each piece
    is minimized in closed form.
    """
    lo, hi = box.lo, box.hi
    d = [b - a for a, b in zip(p0, p1)]
    breaks = {0.0, 1.0}
    for a, di, l, h in zip(p0, d, lo, hi):
        if di != 0:
            for face in (l, h):
                t = (face - a) / di
                if 0 < t < 1:
                    breaks.add(t)
    ts = sorted(breaks)

    def sq(t):
        s = 0.0
        for a, di, l, h in zip(p0, d, lo, hi):
            v = a + t * di
            e = l - v if v < l else (v - h if v > h else 0.0)
            s += e * e
        return s

    best = min(sq(t) for t in ts)
    for t0, t1 in zip(ts, ts[1:]):
        mid = 0.5 * (t0 + t1)
        # on this piece each axis is either inside (0) or beyond a fixed face
        qa = qb = 0.0
        for a, di, l, h in zip(p0, d, lo, hi):
            v = a + mid * di
            face = l if v < l else (h if v > h else None)
            if face is not None:
                qa += di * di
                qb += di * (a - face)
        if qa > 0:
            t = -qb / qa
            if t0 < t < t1:
                best = min(best, sq(t))
    return math.sqrt(best)


# --------------------------------------------------------------------------
# state, plans and kinematics


@dataclass(frozen=True)
class DroneState:
    mode: Mode = Mode.LANDED
    position: tuple[float, float, float] = (0.0, 0.0, 0.0)
    velocity: tuple[float, float, float] = (0.0, 0.0, 0.0)
    heading: float = 0.0
    pictures_taken: int = 0

    @property
    def airborne(self) -> bool:
        return self.mode is not Mode.LANDED

    def check(self) -> None:
        vals = (*self.position, *self.velocity, self.heading)
        if not all(math.isfinite(v) for v in vals):
            raise InputError(f"non-finite drone state {self}")
        z = self.position[2]
        if z < 0:
            raise InputError(f"altitude below ground: {z}")
        if (z == 0) != (self.mode is Mode.LANDED):
            raise InputError(f"mode {self.mode.value} inconsistent with altitude {z}")
        if math.hypot(*self.velocity) > MAX_SPEED + 1e-9:
            raise InputError(f"speed above {MAX_SPEED} ft/s")


@dataclass(frozen=True)
class PlannedAction:
    command: Command
    velocity: tuple[float, float, float]
    duration: float

    @property
    def ticks(self) -> int:
        return int(round(self.duration / TICK))


@dataclass(frozen=True)
class Refusal:
    command: Command
    reason: str


REFUSAL_REASONS = ("operator-proximity", "obstacle", "no-op", "landed")


def _check_path(p0, p1, world: World) -> str | None:
    limit = world.clearance + SAFETY_SLACK
    if world.operator is not None and segment_point_distance(p0, p1, world.operator) < limit:
        return "operator-proximity"
    for box in world.obstacles:
        if segment_box_distance(p0, p1, box) < limit:
            return "obstacle"
    return None


def plan(cmd: Command, state: DroneState, world: World, est_operator_distance: float = math.inf):
    """Turn a command into a velocity setpoint and duration, or refuse it with a reason."""
    if math.isnan(est_operator_distance) or est_operator_distance < 0:
        raise InputError(f"invalid operator distance estimate {est_operator_distance}")
    state.check()
    pos = state.position
    if cmd is Command.TAKE_OFF:
        if state.airborne:
            return Refusal(cmd, "no-op")
        target = (pos[0], pos[1], HOVER_ALTITUDE)
        reason = _check_path(pos, target, world)
        if reason:
            return Refusal(cmd, reason)
        return PlannedAction(cmd, (0.0, 0.0, MAX_SPEED), HOVER_ALTITUDE / MAX_SPEED)
    if cmd is Command.LAND:
        if not state.airborne:
            return Refusal(cmd, "no-op")
        target = (pos[0], pos[1], 0.0)
        reason = _check_path(pos, target, world)
        if reason:
            return Refusal(cmd, reason)
        return PlannedAction(cmd, (0.0, 0.0, -MAX_SPEED), pos[2] / MAX_SPEED)
    if cmd is Command.TAKE_PICTURE:
        return PlannedAction(cmd, (0.0, 0.0, 0.0), 0.0)
    if not state.airborne:
        return Refusal(cmd, "landed")
    if cmd is Command.HOVER:
        return PlannedAction(cmd, (0.0, 0.0, 0.0), 0.0)
    if cmd is Command.MOVE_FORWARD and est_operator_distance < world.clearance:
        return Refusal(cmd, "operator-proximity")
    u = _DIRECTIONS[cmd]
    target = tuple(p + MOVE_DISTANCE * c for p, c in zip(pos, u))
    reason = _check_path(pos, target, world)
    if reason:
        return Refusal(cmd, reason)
    return PlannedAction(cmd, tuple(MAX_SPEED * c for c in u), MOVE_DISTANCE / MAX_SPEED)


def step(state: DroneState, action: PlannedAction, dt: float = TICK) -> DroneState:
    """Advance one tick of first-order kinematics under ``action``."""
    if not dt > 0:
        raise InputError(f"dt must be positive, got {dt}")
    cmd = action.command
    x, y, z = state.position
    if cmd is Command.TAKE_PICTURE:
        return replace(state, pictures_taken=state.pictures_taken + 1)
    if cmd is Command.HOVER:
        if state.mode in (Mode.HOVERING, Mode.MOVING):
            return replace(state, mode=Mode.HOVERING, velocity=(0.0, 0.0, 0.0))
        return state
    if cmd is Command.TAKE_OFF:
        if state.mode not in (Mode.LANDED, Mode.TAKING_OFF):
            return state
        vz = action.velocity[2]
        z += vz * dt
        if z >= HOVER_ALTITUDE - 1e-9:
            return replace(state, mode=Mode.HOVERING, position=(x, y, HOVER_ALTITUDE), velocity=(0.0, 0.0, 0.0))
        return replace(state, mode=Mode.TAKING_OFF, position=(x, y, z), velocity=(0.0, 0.0, vz))
    if cmd is Command.LAND:
        if state.mode is Mode.LANDED:
            return state
        vz = action.velocity[2]
        z += vz * dt
        if z <= 1e-9:
            return replace(state, mode=Mode.LANDED, position=(x, y, 0.0), velocity=(0.0, 0.0, 0.0))
        return replace(state, mode=Mode.LANDING, position=(x, y, z), velocity=(0.0, 0.0, vz))
    # lateral move
    if state.mode not in (Mode.HOVERING, Mode.MOVING):
        return state
    vx, vy, vz = action.velocity
    return replace(state, mode=Mode.MOVING, position=(x + vx * dt, y + vy * dt, z + vz * dt), velocity=(vx, vy, vz))


HOVER = PlannedAction(Command.HOVER, (0.0, 0.0, 0.0), 0.0)


def control_ticks(action: PlannedAction) -> list[PlannedAction]:
    """The per-tick sequence that carries out ``action``; moves end with a hover tick."""
    if action.command is Command.TAKE_PICTURE:
        return [action]
    if action.command is Command.HOVER:
        return [HOVER]
    n = max(1, math.ceil(action.duration / TICK - 1e-9))
    ticks = [action] * n
    if action.command in MOVES:
        ticks.append(HOVER)
    return ticks


def execute(state: DroneState, action: PlannedAction, dt: float = TICK) -> DroneState:
    for tick in control_ticks(action):
        state = step(state, tick, dt)
    return state


# --------------------------------------------------------------------------
# flight loop


@dataclass
class TraceRow:
    t: float
    mode: Mode
    position: tuple[float, float, float]
    command: Command | None
    refusal: str | None


TRACE_HEADER = ("t", "mode", "x", "y", "z", "command", "refusal_reason")


class Pilot:
    """Single-owner loop: labels in, debounced commands planned and executed on the simulator.

    ``on_tick`` receives every control tick so a transport can mirror it.
    Sustained ``None`` leaves the drone hovering where it is.
    """

    def __init__(self, world: World | None = None, gmap: GestureMap | None = None, on_tick=None, frame_ticks: int = 2):
        self.world = world or World()
        self.gmap = gmap or GestureMap()
        self.state = DroneState()
        self.debouncer = Debouncer(self.gmap.k, self.gmap.cooldown)
        self.on_tick = on_tick
        self.frame_ticks = frame_ticks
        self.ticks = 0
        self.trace: list[TraceRow] = []

    def _run(self, action: PlannedAction):
        for tick in control_ticks(action):
            self.state = step(self.state, tick)
            if self.on_tick is not None:
                self.on_tick(tick)
            self.ticks += 1

    def operator_distance(self) -> float:
        if self.world.operator is None:
            return math.inf
        return math.dist(self.state.position, self.world.operator)

    def submit(self, cmd: Command, est_operator_distance: float | None = None):
        if est_operator_distance is None:
            est_operator_distance = self.operator_distance()
        result = plan(cmd, self.state, self.world, est_operator_distance)
        if isinstance(result, PlannedAction):
            self._run(result)
        return result

    def feed(self, label: GestureLabel, est_operator_distance: float | None = None) -> TraceRow:
        hit = self.debouncer.push(label)
        cmd = refusal = None
        if hit is not None:
            cmd = self.gmap.command(hit, self.state.airborne)
            result = self.submit(cmd, est_operator_distance)
            if isinstance(result, Refusal):
                refusal = result.reason
        self.ticks += self.frame_ticks
        row = TraceRow(self.ticks * TICK, self.state.mode, self.state.position, cmd, refusal)
        self.trace.append(row)
        return row

    def run(self, labels) -> list[TraceRow]:
        for label in labels:
            self.feed(label)
        return self.trace


def write_trace(rows, fh) -> None:
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(TRACE_HEADER)
    for r in rows:
        w.writerow(
            (
                f"{r.t:.2f}",
                r.mode.value,
                *(f"{v:.6f}" for v in r.position),
                r.command.value if r.command else "",
                r.refusal or "",
            )
        )


def read_label_script(path) -> list[GestureLabel]:
    """Whitespace or newline separated labels; ``Label*N`` or ``LabelxN`` repeats."""
    text = Path(path).read_text() if isinstance(path, (str, os.PathLike)) else path.read()
    out = []
    for ln, line in enumerate(text.splitlines(), 1):
        for tok in line.split("#", 1)[0].replace(",", " ").split():
            name, n = tok, 1
            for sep in ("*", "x", "×"):
                head, s, tail = tok.rpartition(sep)
                if s and head and tail.isdigit():
                    name, n = head, int(tail)
                    break
            try:
                out.extend([GestureLabel.parse(name)] * n)
            except ValueError as exc:
                raise WorldParseError(ln, str(exc)) from None
    return out
