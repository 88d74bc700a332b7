"""Randomized worlds and command streams for the safety property."""

import math

import numpy as np

from haarpilot.pilot import Box, Command, Pilot, World, segment_box_distance

COMMANDS = list(Command)


def random_world(rng):
    """Operator and up to three boxes placed around the origin, none within clearance of the start."""
    while True:
        op = tuple(float(v) for v in rng.uniform(-8, 8, 3) * (1, 1, 0) + (0, 0, rng.uniform(0, 6)))
        boxes = tuple(
            Box(*(float(v) for v in rng.uniform(-10, 10, 2)), float(rng.uniform(0, 4)), *(float(v) for v in rng.uniform(0.2, 4, 3)))
            for _ in range(int(rng.integers(0, 4)))
        )
        world = World(op if rng.random() < 0.9 else None, boxes, float(rng.uniform(1.0, 4.0)))
        start = (0.0, 0.0, 0.0)
        if min_clearance(world, start) >= world.clearance:
            return world


def min_clearance(world, p):
    d = math.inf
    if world.operator is not None:
        d = math.dist(p, world.operator)
    for b in world.obstacles:
        d = min(d, segment_box_distance(p, p, b))
    return d


def run_stream(world, commands):
    """Execute ``commands`` directly (no debouncing); return the closest approach over all ticks."""
    closest = [math.inf]

    def watch(_tick):
        closest[0] = min(closest[0], min_clearance(world, pilot.state.position))

    pilot = Pilot(world, on_tick=watch)
    for cmd in commands:
        pilot.submit(cmd)
    return closest[0], pilot


def random_stream(rng, n=8):
    # bias toward takeoff first so most streams actually fly
    cmds = [Command.TAKE_OFF] if rng.random() < 0.8 else []
    cmds += [COMMANDS[int(i)] for i in rng.integers(0, len(COMMANDS), n)]
    return cmds


def safety_trials(seed, n):
    """Smallest clearance margin seen over ``n`` random simulations (negative means a breach)."""
    rng = np.random.default_rng(seed)
    worst = math.inf
    flights = 0
    for _ in range(n):
        world = random_world(rng)
        closest, pilot = run_stream(world, random_stream(rng))
        if closest < math.inf:
            worst = min(worst, closest - world.clearance)
        flights += pilot.ticks > 0
    return worst, flights
