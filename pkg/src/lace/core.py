"""Semantic state types and angular arithmetic shared by every other module.

Conventions that the whole package relies on:

* angles are radians in [0, 2pi) everywhere; degrees appear only at I/O
  boundaries,
* time is an integer step index plus a scalar step length ``dt`` in
  seconds, so horizon arithmetic (``T_p = T_s / dt``) stays exact,
* all types here are immutable values and safe to share between threads.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

TWO_PI = 2.0 * math.pi


def wrap_angle(theta: float) -> float:
    """Reduce an angle modulo 2pi into [0, 2pi)."""
    if not math.isfinite(theta):
        raise ValueError(f"angle must be finite, got {theta!r}")
    wrapped = math.fmod(theta, TWO_PI)
    if wrapped < 0.0:
        wrapped += TWO_PI
    # the fixup above can round to exactly 2pi for tiny negative inputs
    if wrapped >= TWO_PI:
        wrapped -= TWO_PI
    return wrapped


def circular_distance(a: float, b: float) -> float:
    """Shortest angular separation between two directions, in [0, pi].

    Symmetric, zero iff the angles coincide modulo 2pi. This is the
    great-circle distance used by the measurement density on the
    direction axis.
    """
    if not (math.isfinite(a) and math.isfinite(b)):
        raise ValueError(f"angles must be finite, got {a!r}, {b!r}")
    d = math.fmod(abs(a - b), TWO_PI)
    return min(d, TWO_PI - d)


def signed_angular_delta(from_angle: float, to_angle: float) -> float:
    """Smallest signed rotation carrying ``from_angle`` onto ``to_angle``.

    Result lies in (-pi, pi]; ``wrap_angle(from_angle + delta)`` equals
    ``wrap_angle(to_angle)`` up to float rounding.
    """
    if not (math.isfinite(from_angle) and math.isfinite(to_angle)):
        raise ValueError(f"angles must be finite, got {from_angle!r}, {to_angle!r}")
    d = math.fmod(to_angle - from_angle, TWO_PI)
    if d > math.pi:
        d -= TWO_PI
    elif d <= -math.pi:
        d += TWO_PI
    return d


@dataclass(frozen=True)
class AgentState:
    """One person's state at step ``t``: position, heading and speed.

    ``omega`` is normalized into [0, 2pi) on construction; ``nu`` must be
    non-negative. Which motion segment the (omega, nu) pair describes
    (into or out of the position) is a producer convention, see
    :mod:`lace.ingest` and :mod:`lace.synth`.
    """

    x: float
    y: float
    omega: float
    nu: float
    t: int

    def __post_init__(self) -> None:
        for name in ("x", "y", "nu"):
            v = getattr(self, name)
            if not math.isfinite(v):
                raise ValueError(f"{name} must be finite, got {v!r}")
        if self.nu < 0.0:
            raise ValueError(f"speed must be >= 0, got {self.nu!r}")
        object.__setattr__(self, "omega", wrap_angle(self.omega))
        object.__setattr__(self, "t", int(self.t))


def propagate(state: AgentState, omega_next: float, nu_next: float, dt: float) -> AgentState:
    """Advance a state one step with the given heading and speed.

    The new state records the motion that produced it: its (omega, nu)
    are the arguments, its step index is ``state.t + 1``.
    """
    if not (math.isfinite(dt) and dt > 0.0):
        raise ValueError(f"dt must be > 0, got {dt!r}")
    if not (math.isfinite(nu_next) and nu_next >= 0.0):
        raise ValueError(f"speed must be >= 0, got {nu_next!r}")
    omega_next = wrap_angle(omega_next)
    return AgentState(
        x=state.x + nu_next * math.cos(omega_next) * dt,
        y=state.y + nu_next * math.sin(omega_next) * dt,
        omega=omega_next,
        nu=nu_next,
        t=state.t + 1,
    )


@dataclass(frozen=True)
class Trajectory:
    """Time-ordered states of one person at uniform step length ``dt``.

    Consecutive states must differ by exactly one step index. Corpus
    trajectories produced by ingest/synth always have >= 2 states (a
    single position defines no velocity); windows cut from them
    (observations, ground truth, rollouts) may hold a single state.
    """

    person_id: str
    states: tuple[AgentState, ...]
    dt: float

    def __post_init__(self) -> None:
        if not (math.isfinite(self.dt) and self.dt > 0.0):
            raise ValueError(f"dt must be > 0, got {self.dt!r}")
        if len(self.states) < 1:
            raise ValueError("trajectory needs at least one state")
        object.__setattr__(self, "states", tuple(self.states))
        for prev, cur in zip(self.states, self.states[1:]):
            if cur.t != prev.t + 1:
                raise ValueError(
                    f"step indices must increase by 1, got {prev.t} -> {cur.t} "
                    f"for person {self.person_id!r}"
                )

    def __len__(self) -> int:
        return len(self.states)

    @property
    def start_t(self) -> int:
        return self.states[0].t

    @property
    def end_t(self) -> int:
        return self.states[-1].t

    def window(self, start: int, length: int) -> "Trajectory":
        """Slice ``length`` states beginning at list offset ``start``."""
        if start < 0 or start + length > len(self.states):
            raise ValueError(f"window [{start}, {start + length}) out of range")
        return Trajectory(self.person_id, self.states[start : start + length], self.dt)


@dataclass(frozen=True)
class PredictionTask:
    """An observation window plus the ground truth that follows it.

    ``observed`` holds exactly ``O_s / dt`` states ending at the current
    step t0; ``ground_truth`` starts at t0 + 1 and holds between 1 and
    ``T_s / dt`` states (shorter when the source track ends early).
    """

    observed: Trajectory
    ground_truth: Trajectory
    o_s: float
    t_s: float

    def __post_init__(self) -> None:
        dt = self.observed.dt
        if self.ground_truth.dt != dt:
            raise ValueError("observed and ground truth must share dt")
        if self.observed.person_id != self.ground_truth.person_id:
            raise ValueError("observed and ground truth must belong to one person")
        o_p = _exact_steps(self.o_s, dt, "O_s")
        t_p = _exact_steps(self.t_s, dt, "T_s")
        if len(self.observed) != o_p:
            raise ValueError(
                f"observed window must hold O_p={o_p} states, got {len(self.observed)}"
            )
        if not 1 <= len(self.ground_truth) <= t_p:
            raise ValueError(
                f"ground truth must hold 1..{t_p} states, got {len(self.ground_truth)}"
            )
        if self.ground_truth.start_t != self.observed.end_t + 1:
            raise ValueError("ground truth must begin immediately after the observation")

    @property
    def dt(self) -> float:
        return self.observed.dt

    @property
    def o_p(self) -> int:
        return len(self.observed)

    @property
    def t_p(self) -> int:
        return _exact_steps(self.t_s, self.dt, "T_s")

    @property
    def effective_horizon(self) -> int:
        """Number of ground-truth steps actually available, in [1, T_p]."""
        return len(self.ground_truth)

    @property
    def task_id(self) -> str:
        return f"{self.observed.person_id}:{self.observed.start_t}"


def _exact_steps(horizon_s: float, dt: float, name: str) -> int:
    steps = horizon_s / dt
    rounded = round(steps)
    if rounded < 1 or abs(steps - rounded) > 1e-9:
        raise ValueError(f"{name}={horizon_s} is not a positive multiple of dt={dt}")
    return int(rounded)
