"""Synthetic pedestrian corpora with known flow structure.

Lane agents walk along a waypoint polyline: they spawn on the lane's
entry segment, advance an arc-length cursor at their jittered speed and
head along the local lane tangent plus Gaussian jitter. Turbulent
agents do a bounded random walk: a fresh uniform direction and a
uniform speed in [0.3, 1.8] m/s every step, positions clamped to the
scenario bounds. Stored state velocities are the drawn ones (outgoing
convention, matching lace.ingest).

Everything is deterministic given the scenario seed; each agent draws
from its own child generator, so generation order does not matter.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .core import AgentState, Trajectory, wrap_angle
from .model import write_atomic_text

TURBULENT_SPEED_RANGE = (0.3, 1.8)
MIN_LANE_SPEED = 0.05


@dataclass(frozen=True)
class Lane:
    """A flow lane: spawn segment, waypoint polyline, nominal speed."""

    waypoints: tuple[tuple[float, float], ...]
    entry: tuple[tuple[float, float], tuple[float, float]]
    exit: tuple[tuple[float, float], tuple[float, float]]
    speed: float

    def __post_init__(self) -> None:
        if len(self.waypoints) < 2:
            raise ValueError("a lane needs at least two waypoints")
        if self.speed <= 0:
            raise ValueError("lane speed must be > 0")

    def segment_lengths(self) -> np.ndarray:
        pts = np.asarray(self.waypoints, dtype=float)
        return np.hypot(*(pts[1:] - pts[:-1]).T)

    def length(self) -> float:
        return float(self.segment_lengths().sum())

    def tangent_at(self, arc: float) -> float:
        """Direction of the polyline segment containing arc position ``arc``."""
        pts = np.asarray(self.waypoints, dtype=float)
        cum = np.concatenate([[0.0], np.cumsum(self.segment_lengths())])
        idx = int(np.searchsorted(cum[1:-1], arc, side="right"))
        dx, dy = pts[idx + 1] - pts[idx]
        return wrap_angle(math.atan2(dy, dx))

    def to_dict(self) -> dict:
        return {
            "waypoints": [list(p) for p in self.waypoints],
            "entry": [list(self.entry[0]), list(self.entry[1])],
            "exit": [list(self.exit[0]), list(self.exit[1])],
            "speed": self.speed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Lane":
        return cls(
            waypoints=tuple((float(p[0]), float(p[1])) for p in d["waypoints"]),
            entry=((float(d["entry"][0][0]), float(d["entry"][0][1])),
                   (float(d["entry"][1][0]), float(d["entry"][1][1]))),
            exit=((float(d["exit"][0][0]), float(d["exit"][0][1])),
                  (float(d["exit"][1][0]), float(d["exit"][1][1]))),
            speed=float(d["speed"]),
        )


@dataclass(frozen=True)
class FlowScenario:
    """Corpus recipe: bounds, lanes, turbulence share, jitter, agent count."""

    bounds: tuple[float, float, float, float]
    lanes: tuple[Lane, ...]
    turbulence_fraction: float
    direction_jitter: float
    speed_jitter: float
    agents: int
    seed: int
    walk_steps: int = 30
    start_spread: int = 240
    name: str = "custom"

    def __post_init__(self) -> None:
        xmin, xmax, ymin, ymax = self.bounds
        if xmin >= xmax or ymin >= ymax:
            raise ValueError(f"degenerate bounds {self.bounds}")
        if not 0.0 <= self.turbulence_fraction <= 1.0:
            raise ValueError("turbulence_fraction must lie in [0, 1]")
        if self.direction_jitter < 0 or self.speed_jitter < 0:
            raise ValueError("jitter must be >= 0")
        if self.agents < 0:
            raise ValueError("agents must be >= 0")
        if self.turbulence_fraction < 1.0 and not self.lanes:
            raise ValueError("scenario with laminar agents needs at least one lane")
        for lane in self.lanes:
            for px, py in lane.waypoints:
                if not (xmin <= px <= xmax and ymin <= py <= ymax):
                    raise ValueError(f"lane waypoint ({px}, {py}) outside bounds {self.bounds}")

    def to_dict(self) -> dict:
        return {
            "kind": "lace-scenario",
            "name": self.name,
            "bounds": list(self.bounds),
            "lanes": [lane.to_dict() for lane in self.lanes],
            "turbulence_fraction": self.turbulence_fraction,
            "direction_jitter": self.direction_jitter,
            "speed_jitter": self.speed_jitter,
            "agents": self.agents,
            "seed": self.seed,
            "walk_steps": self.walk_steps,
            "start_spread": self.start_spread,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FlowScenario":
        return cls(
            bounds=tuple(float(v) for v in d["bounds"]),
            lanes=tuple(Lane.from_dict(l) for l in d["lanes"]),
            turbulence_fraction=float(d["turbulence_fraction"]),
            direction_jitter=float(d["direction_jitter"]),
            speed_jitter=float(d["speed_jitter"]),
            agents=int(d["agents"]),
            seed=int(d["seed"]),
            walk_steps=int(d.get("walk_steps", 30)),
            start_spread=int(d.get("start_spread", 240)),
            name=str(d.get("name", "custom")),
        )

    def save(self, path: str) -> None:
        write_atomic_text(path, json.dumps(self.to_dict(), indent=2) + "\n")

    @classmethod
    def load(cls, path: str) -> "FlowScenario":
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


def generate(scenario: FlowScenario, dt: float = 1.0) -> list[Trajectory]:
    """Produce one trajectory per agent, deterministic given the seed.

    The first round((1 - turbulence_fraction) * agents) agents follow a
    lane chosen by their own generator; the rest random-walk. Agents
    whose walk would yield fewer than two states are skipped.
    """
    if dt <= 0:
        raise ValueError("dt must be > 0")
    n_laminar = int(round((1.0 - scenario.turbulence_fraction) * scenario.agents))
    trajectories: list[Trajectory] = []
    for i in range(scenario.agents):
        rng = np.random.default_rng(np.random.SeedSequence((scenario.seed, i)))
        pid = f"a{i:05d}"
        if i < n_laminar:
            traj = _lane_agent(pid, scenario, rng, dt)
        else:
            traj = _turbulent_agent(pid, scenario, rng, dt)
        if traj is not None:
            trajectories.append(traj)
    return trajectories


def _start_step(scenario: FlowScenario, rng: np.random.Generator) -> int:
    if scenario.start_spread <= 0:
        return 0
    return int(rng.integers(0, scenario.start_spread))


def _lane_agent(
    pid: str, scenario: FlowScenario, rng: np.random.Generator, dt: float
) -> Optional[Trajectory]:
    lane = scenario.lanes[int(rng.integers(len(scenario.lanes)))]
    (ax, ay), (bx, by) = lane.entry
    u = rng.random()
    x = ax + u * (bx - ax)
    y = ay + u * (by - ay)
    t = _start_step(scenario, rng)
    xmin, xmax, ymin, ymax = scenario.bounds
    total = lane.length()
    arc = 0.0
    states: list[AgentState] = []
    while arc < total and xmin <= x <= xmax and ymin <= y <= ymax:
        omega = lane.tangent_at(arc)
        if scenario.direction_jitter > 0:
            omega = wrap_angle(omega + rng.normal(0.0, scenario.direction_jitter))
        nu = lane.speed
        if scenario.speed_jitter > 0:
            nu = max(nu + rng.normal(0.0, scenario.speed_jitter), MIN_LANE_SPEED)
        states.append(AgentState(x=x, y=y, omega=omega, nu=nu, t=t))
        x += nu * math.cos(omega) * dt
        y += nu * math.sin(omega) * dt
        arc += nu * dt
        t += 1
    if not states:
        return None
    last = states[-1]
    states.append(AgentState(x=x, y=y, omega=last.omega, nu=last.nu, t=t))
    if len(states) < 2:
        return None
    return Trajectory(person_id=pid, states=tuple(states), dt=dt)


def _turbulent_agent(
    pid: str, scenario: FlowScenario, rng: np.random.Generator, dt: float
) -> Optional[Trajectory]:
    xmin, xmax, ymin, ymax = scenario.bounds
    x = xmin + rng.random() * (xmax - xmin)
    y = ymin + rng.random() * (ymax - ymin)
    t = _start_step(scenario, rng)
    lo, hi = TURBULENT_SPEED_RANGE
    states: list[AgentState] = []
    for _ in range(max(scenario.walk_steps, 2)):
        omega = rng.random() * 2.0 * math.pi
        nu = lo + rng.random() * (hi - lo)
        states.append(AgentState(x=x, y=y, omega=omega, nu=nu, t=t))
        x = min(max(x + nu * math.cos(omega) * dt, xmin), xmax)
        y = min(max(y + nu * math.sin(omega) * dt, ymin), ymax)
        t += 1
    last = states[-1]
    states.append(AgentState(x=x, y=y, omega=last.omega, nu=last.nu, t=t))
    return Trajectory(person_id=pid, states=tuple(states), dt=dt)


# -- named scenarios -----------------------------------------------------------


def _arc_waypoints(
    center: tuple[float, float], radius: float, theta_from: float, theta_to: float, n: int = 64
) -> list[tuple[float, float]]:
    cx, cy = center
    thetas = np.linspace(theta_from, theta_to, n + 1)
    return [(cx + radius * math.cos(th), cy + radius * math.sin(th)) for th in thetas]


def named_scenario(name: str, agents: int, seed: int) -> FlowScenario:
    """Built-in scenario fixtures used by the test and acceptance suites."""
    if name == "straight-east":
        lane = Lane(
            waypoints=((0.0, 10.0), (20.0, 10.0)),
            entry=((0.0, 7.0), (0.0, 13.0)),
            exit=((20.0, 7.0), (20.0, 13.0)),
            speed=1.2,
        )
        return FlowScenario(
            bounds=(0.0, 20.0, 0.0, 20.0), lanes=(lane,),
            turbulence_fraction=0.0, direction_jitter=0.12, speed_jitter=0.08,
            agents=agents, seed=seed, name=name,
        )
    if name == "bidirectional-corridor":
        east = Lane(
            waypoints=((0.0, 10.0), (20.0, 10.0)),
            entry=((0.0, 7.0), (0.0, 13.0)),
            exit=((20.0, 7.0), (20.0, 13.0)),
            speed=1.2,
        )
        west = Lane(
            waypoints=((20.0, 10.0), (0.0, 10.0)),
            entry=((20.0, 7.0), (20.0, 13.0)),
            exit=((0.0, 7.0), (0.0, 13.0)),
            speed=1.2,
        )
        return FlowScenario(
            bounds=(0.0, 20.0, 0.0, 20.0), lanes=(east, west),
            turbulence_fraction=0.0, direction_jitter=0.12, speed_jitter=0.08,
            agents=agents, seed=seed, name=name,
        )
    if name == "curved-arc":
        # straight lead-in, quarter circle of radius 8, straight lead-out
        arc = _arc_waypoints(center=(6.0, 10.0), radius=8.0, theta_from=-math.pi / 2, theta_to=0.0)
        waypoints = [(2.0, 2.0)] + arc + [(14.0, 16.0)]
        lane = Lane(
            waypoints=tuple(waypoints),
            entry=((2.0, 1.2), (2.0, 2.8)),
            exit=((13.2, 16.0), (14.8, 16.0)),
            speed=1.0,
        )
        return FlowScenario(
            bounds=(0.0, 18.0, 0.0, 18.0), lanes=(lane,),
            turbulence_fraction=0.0, direction_jitter=0.08, speed_jitter=0.05,
            agents=agents, seed=seed, name=name,
        )
    if name == "mixed-50":
        base = named_scenario("straight-east", agents, seed)
        return FlowScenario(
            bounds=base.bounds, lanes=base.lanes,
            turbulence_fraction=0.5,
            direction_jitter=base.direction_jitter, speed_jitter=base.speed_jitter,
            agents=agents, seed=seed, name=name,
        )
    raise ValueError(
        f"unknown scenario {name!r}; built-ins: straight-east, bidirectional-corridor, curved-arc, mixed-50"
    )


SCENARIO_NAMES = ("straight-east", "bidirectional-corridor", "curved-arc", "mixed-50")
