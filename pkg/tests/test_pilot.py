import io
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from haarpilot.labels import GestureLabel as G
from haarpilot.pilot import (
    HOVER,
    TRANSITIONS,
    Box,
    Command,
    DroneState,
    GestureMap,
    InputError,
    Mode,
    Pilot,
    PlannedAction,
    Refusal,
    World,
    WorldParseError,
    control_ticks,
    debounce,
    execute,
    plan,
    read_label_script,
    segment_box_distance,
    segment_point_distance,
    step,
    write_trace,
)

from sims import safety_trials

HOVERING = DroneState(Mode.HOVERING, (0.0, 0.0, 3.0))


def test_debounce_single_run():
    assert debounce([G.GS] * 3) == [(3, Command.MOVE_LEFT)]


def test_debounce_broken_run():
    assert debounce([G.GS, G.VS, G.GS, G.GS]) == []


def test_debounce_cooldown():
    # frames 4..13 are swallowed, a fresh run starts at 14 and completes at 16
    assert debounce([G.PALM] * 15) == [(3, Command.TAKE_OFF)]
    assert debounce([G.PALM] * 16) == [(3, Command.TAKE_OFF), (16, Command.TAKE_OFF)]


def test_debounce_none_resets_run():
    assert debounce([G.FIST, G.FIST, G.NONE, G.FIST, G.FIST, G.FIST]) == [(6, Command.LAND)]


def test_gesture_map_parse():
    m = GestureMap.parse("# custom\nGS=MoveRight\nk=2\ncooldown=0\n")
    assert m.commands[G.GS] is Command.MOVE_RIGHT and (m.k, m.cooldown) == (2, 0)
    assert m.command(G.PALM, airborne=True) is Command.HOVER
    with pytest.raises(WorldParseError) as exc:
        GestureMap.parse("GS=MoveRight\nPalm=Jump\n")
    assert exc.value.line == 2


def test_refusals():
    world = World(operator=(0.0, 2.0, 3.0))
    assert plan(Command.MOVE_FORWARD, HOVERING, world) == Refusal(Command.MOVE_FORWARD, "operator-proximity")
    assert plan(Command.LAND, DroneState(), World()) == Refusal(Command.LAND, "no-op")
    assert plan(Command.MOVE_LEFT, DroneState(), World()) == Refusal(Command.MOVE_LEFT, "landed")
    assert plan(Command.TAKE_OFF, HOVERING, World()) == Refusal(Command.TAKE_OFF, "no-op")


def test_vision_distance_estimate_gates_forward():
    r = plan(Command.MOVE_FORWARD, HOVERING, World(), est_operator_distance=2.0)
    assert r == Refusal(Command.MOVE_FORWARD, "operator-proximity")
    with pytest.raises(InputError):
        plan(Command.MOVE_FORWARD, HOVERING, World(), est_operator_distance=math.nan)


def test_move_left_setpoint():
    a = plan(Command.MOVE_LEFT, HOVERING, World())
    assert a == PlannedAction(Command.MOVE_LEFT, (-3.0, 0.0, 0.0), 0.5)
    assert execute(HOVERING, a).position == pytest.approx((-1.5, 0.0, 3.0))


def test_obstacle_refusal():
    # pillar 2 ft ahead: moving forward would close to 0.5 ft
    world = World(obstacles=(Box(-1.0, 2.0, 0.0, 2.0, 6.0, 1.0),))
    assert plan(Command.MOVE_FORWARD, HOVERING, world) == Refusal(Command.MOVE_FORWARD, "obstacle")
    far = World(obstacles=(Box(-1.0, 3.5, 0.0, 2.0, 6.0, 1.0),))
    assert plan(Command.MOVE_FORWARD, HOVERING, far) == Refusal(Command.MOVE_FORWARD, "obstacle")
    assert isinstance(plan(Command.MOVE_BACKWARD, HOVERING, far), PlannedAction)


def test_degenerate_geometry():
    with pytest.raises(InputError):
        World(operator=(0.0, math.nan, 0.0))
    with pytest.raises(InputError):
        Box(0, 0, 0, 0, 1, 1)
    with pytest.raises(InputError):
        plan(Command.HOVER, DroneState(Mode.HOVERING, (0.0, math.inf, 3.0)), World())


def test_step_examples():
    assert step(HOVERING, HOVER).position == HOVERING.position
    s = DroneState()
    takeoff = plan(Command.TAKE_OFF, s, World())
    s = execute(s, takeoff)
    assert s.mode is Mode.HOVERING and s.position[2] == 3.0
    s = DroneState(Mode.HOVERING, (2.0, 0.0, 3.0))
    for _ in range(10):
        s = step(s, PlannedAction(Command.MOVE_LEFT, (-3.0, 0.0, 0.0), 0.5), 0.05)
    assert s.position[0] == pytest.approx(0.5)


def test_take_picture_counts_without_motion():
    s = execute(HOVERING, plan(Command.TAKE_PICTURE, HOVERING, World()))
    assert s.pictures_taken == 1 and s.position == HOVERING.position


def test_control_ticks_shape():
    a = plan(Command.MOVE_RIGHT, HOVERING, World())
    ticks = control_ticks(a)
    assert len(ticks) == 11 and ticks[-1] is HOVER


def test_transitions_stay_in_graph():
    rng = np.random.default_rng(0)
    for _ in range(300):
        s = DroneState()
        for i in rng.integers(0, len(Command), 12):
            r = plan(list(Command)[int(i)], s, World())
            if isinstance(r, PlannedAction):
                for tick in control_ticks(r):
                    nxt = step(s, tick)
                    assert nxt.mode in TRANSITIONS[s.mode]
                    s = nxt


def test_segment_distances():
    assert segment_point_distance((0, 0, 0), (0, 2, 0), (1, 1, 0)) == 1.0
    assert segment_point_distance((0, 0, 0), (0, 0, 0), (3, 4, 0)) == 5.0
    box = Box(0, 0, 0, 1, 1, 1)
    assert segment_box_distance((-2, 0.5, 0.5), (-1, 0.5, 0.5), box) == 1.0
    assert segment_box_distance((-1, -1, 0.5), (2, 2, 0.5), box) == 0.0


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(-5, 5), min_size=6, max_size=6))
def test_segment_box_distance_matches_sampling(pts):
    box = Box(-1.0, -0.5, 0.0, 2.0, 1.5, 1.0)
    p0, p1 = pts[:3], pts[3:]
    exact = segment_box_distance(p0, p1, box)
    sampled = min(segment_box_distance(q, q, box) for q in np.linspace(p0, p1, 2001))
    assert exact <= sampled + 1e-12
    assert sampled - exact <= 0.01


def test_world_file(tmp_path):
    w = World.parse("operator 0 6 3\nobstacle 2 2 0 1 4 1  # pillar\nclearance 2.5\n")
    assert w.operator == (0.0, 6.0, 3.0) and w.clearance == 2.5 and len(w.obstacles) == 1
    with pytest.raises(WorldParseError) as exc:
        World.parse("operator 0 6 3\nobstacle 1 2\n")
    assert exc.value.line == 2


def test_pilot_flight_with_zero_cooldown():
    p = Pilot(gmap=GestureMap(cooldown=0))
    rows = p.run([G.PALM] * 3 + [G.VS] * 3 + [G.FIST] * 3)
    assert [r.command for r in rows if r.command] == [Command.TAKE_OFF, Command.MOVE_FORWARD, Command.LAND]
    assert p.state.mode is Mode.LANDED and p.state.position == pytest.approx((0.0, 1.5, 0.0))


def test_pilot_default_cooldown_swallows_followups():
    p = Pilot()
    rows = p.run([G.PALM] * 3 + [G.VS] * 3 + [G.FIST] * 3)
    assert [r.command for r in rows if r.command] == [Command.TAKE_OFF]
    assert p.state.mode is Mode.HOVERING


def test_pilot_holds_position_on_none():
    p = Pilot(gmap=GestureMap(cooldown=0))
    p.run([G.PALM] * 3)
    before = p.state
    p.run([G.NONE] * 20)
    assert p.state == before


def test_trace_format():
    p = Pilot(World(operator=(0.0, 4.0, 3.0)), GestureMap(cooldown=0))
    p.run([G.PALM] * 3 + [G.VS] * 3)
    buf = io.StringIO()
    write_trace(p.trace, buf)
    lines = buf.getvalue().splitlines()
    assert lines[0] == "t,mode,x,y,z,command,refusal_reason"
    assert lines[3].endswith(",TakeOff,") and lines[-1].endswith(",MoveForward,operator-proximity")


def test_label_script(tmp_path):
    f = tmp_path / "s.txt"
    f.write_text("Palm*3 VSx2\nFist×2, None # tail\n")
    assert read_label_script(f) == [G.PALM] * 3 + [G.VS, G.VS, G.FIST, G.FIST, G.NONE]
    f.write_text("Palm Wave\n")
    with pytest.raises(WorldParseError):
        read_label_script(f)


def test_random_flights_keep_clearance():
    worst, flights = safety_trials(1, 1000)
    assert worst >= -1e-9 and flights > 800
