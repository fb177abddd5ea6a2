"""Rollout generation from an observed history and a learned flow map.

Per prediction step the sampler draws a direction from the laminar
component of the nearest cluster and blends it into the current heading
with a Gaussian kernel whose width is set by the cluster's divergence
score: high divergence (weakly laminar regions) shrinks the correction
toward zero and the rollout degrades gracefully into a constant
velocity extrapolation. Speed is held at the observed value throughout,
people rarely change it over these horizons.
"""

from __future__ import annotations

import math
import zlib
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .core import AgentState, PredictionTask, Trajectory, propagate, signed_angular_delta, wrap_angle
from .model import LaceModel

DEFAULT_RECENCY_SIGMA = 1.5
DEFAULT_R_MAX = 2.0
DEFAULT_N_SAMPLES = 5


@dataclass(frozen=True)
class ObservedVelocity:
    """Recency-weighted velocity estimate at the end of an observation."""

    omega_obs: float
    nu_obs: float


@dataclass(frozen=True)
class DirectionSample:
    """One draw from a cluster's laminar direction marginal."""

    omega_s: float
    bin_prob: float
    kl: float


@dataclass(frozen=True)
class RolloutResult:
    """One sampled future: trajectory, ranking score, coverage fallbacks."""

    trajectory: Trajectory
    log_probability: float
    fallback_steps: int
    sample_index: int


def recency_weight(t: int, sigma: float = DEFAULT_RECENCY_SIGMA) -> float:
    """Unnormalized weight of the velocity t steps before the current one."""
    return 1.0 / (sigma * math.sqrt(2.0 * math.pi) * math.exp(0.5 * (t / sigma) ** 2))


def observed_velocity(
    observed: Trajectory,
    sigma: float = DEFAULT_RECENCY_SIGMA,
    normalize: bool = True,
) -> ObservedVelocity:
    """Estimate the current velocity from an observation window.

    Finite-difference velocities of consecutive positions are weighted
    by a zero-mean Gaussian recency kernel (t = 1 is the most recent
    difference). Weights are normalized to sum one by default so the
    speed estimate is unbiased; the raw-weight mode exists for ablation.
    The direction is the weighted circular mean of the unit headings,
    never a naive angle average.
    """
    if len(observed) < 2:
        raise ValueError("need at least two observed states to estimate a velocity")
    if sigma <= 0:
        raise ValueError("sigma must be > 0")
    states = observed.states
    m = len(states) - 1
    weights = np.array([recency_weight(t, sigma) for t in range(1, m + 1)])
    # difference i runs from states[-(i+1)] to states[-i]; i = 1 is newest
    dx = np.array([states[-i].x - states[-i - 1].x for i in range(1, m + 1)])
    dy = np.array([states[-i].y - states[-i - 1].y for i in range(1, m + 1)])
    dt = observed.dt
    speeds = np.hypot(dx, dy) / dt
    # single division by the weight sum keeps a constant signal exact
    denom = float(weights.sum()) if normalize else 1.0
    nu_obs = float(np.sum(speeds * weights)) / denom
    norms = np.hypot(dx, dy)
    ok = norms > 0.0
    if not np.any(ok):
        return ObservedVelocity(omega_obs=0.0, nu_obs=nu_obs)
    ux = float(np.sum((dx[ok] / norms[ok]) * weights[ok]))
    uy = float(np.sum((dy[ok] / norms[ok]) * weights[ok]))
    if ux == 0.0 and uy == 0.0:
        return ObservedVelocity(omega_obs=0.0, nu_obs=nu_obs)
    return ObservedVelocity(omega_obs=wrap_angle(math.atan2(uy, ux)), nu_obs=nu_obs)


def sample_direction(
    model: LaceModel,
    x: float,
    y: float,
    rng: np.random.Generator,
    r_max: float = DEFAULT_R_MAX,
) -> Optional[DirectionSample]:
    """Draw a direction from the laminar component near (x, y).

    Returns None when the nearest centroid is farther than ``r_max``
    (no coverage, a normal outcome). Otherwise samples a direction bin
    from the cluster's speed-marginalized laminar distribution and
    jitters uniformly within the bin.
    """
    if model.n_clusters == 0:
        raise ValueError("model has no clusters")
    idx, dist = model.nearest_cluster(x, y)
    if dist > r_max:
        return None
    cluster = model.clusters[idx]
    marginal = cluster.gamma_l.direction_marginal()
    cum = np.cumsum(marginal)
    bin_idx = int(np.searchsorted(cum, rng.random() * cum[-1], side="right"))
    bin_idx = min(bin_idx, len(marginal) - 1)
    width = model.geometry.direction_bin_width
    center = (bin_idx + 0.5) * width
    omega_s = wrap_angle(center + (rng.random() - 0.5) * width)
    return DirectionSample(
        omega_s=omega_s,
        bin_prob=float(marginal[bin_idx]),
        kl=cluster.kl_divergence,
    )


def bias_direction(omega_prev: float, omega_s: float, kl: float) -> float:
    """Blend the sampled direction into the current heading.

    The correction is the signed shortest rotation d from the heading to
    the sample scaled by exp(-beta d^2) with beta = 10**kl, so strongly
    laminar regions (small divergence) apply nearly the full rotation
    and turbulent regions barely move the heading.
    """
    if kl < 0:
        raise ValueError("kl must be >= 0")
    d = signed_angular_delta(omega_prev, omega_s)
    if d == 0.0:
        return wrap_angle(omega_prev)
    # cap keeps 10**kl finite; any capped value already zeroes the kernel
    beta = 10.0 ** min(kl, 300.0)
    return wrap_angle(omega_prev + d * math.exp(-beta * d * d))


def _sample_rng(master_seed: int, task_id: str, sample_index: int) -> np.random.Generator:
    return np.random.default_rng(
        np.random.SeedSequence((master_seed, zlib.crc32(task_id.encode("utf-8")), sample_index))
    )


def predict_lace(
    model: LaceModel,
    task: PredictionTask,
    n_samples: int = DEFAULT_N_SAMPLES,
    seed: int = 0,
    r_max: float = DEFAULT_R_MAX,
    recency_sigma: float = DEFAULT_RECENCY_SIGMA,
) -> list[RolloutResult]:
    """Sample rollouts over the task's effective horizon.

    Every sample runs on its own generator derived from (seed, task id,
    sample index), so results do not depend on evaluation order or
    parallel scheduling. Steps without map coverage fall back to the
    current heading and contribute probability one to the ranking score.
    """
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    if model.n_clusters == 0:
        raise ValueError("model has no clusters")
    obs = observed_velocity(task.observed, sigma=recency_sigma)
    horizon = task.effective_horizon
    dt = task.dt
    results = []
    for s in range(n_samples):
        rng = _sample_rng(seed, task.task_id, s)
        last = task.observed.states[-1]
        current = AgentState(x=last.x, y=last.y, omega=obs.omega_obs, nu=obs.nu_obs, t=last.t)
        log_prob = 0.0
        fallback = 0
        states = []
        for _ in range(horizon):
            draw = sample_direction(model, current.x, current.y, rng, r_max)
            if draw is None:
                omega_t = current.omega
                fallback += 1
            else:
                omega_t = bias_direction(current.omega, draw.omega_s, draw.kl)
                log_prob += math.log(draw.bin_prob)
            current = propagate(current, omega_t, obs.nu_obs, dt)
            states.append(current)
        results.append(
            RolloutResult(
                trajectory=Trajectory(task.observed.person_id, tuple(states), dt),
                log_probability=log_prob,
                fallback_steps=fallback,
                sample_index=s,
            )
        )
    return results


def predict_cvm(
    task: PredictionTask,
    recency_sigma: float = DEFAULT_RECENCY_SIGMA,
) -> RolloutResult:
    """Constant velocity baseline: hold the observed velocity for every step."""
    obs = observed_velocity(task.observed, sigma=recency_sigma)
    last = task.observed.states[-1]
    current = AgentState(x=last.x, y=last.y, omega=obs.omega_obs, nu=obs.nu_obs, t=last.t)
    states = []
    for _ in range(task.effective_horizon):
        current = propagate(current, obs.omega_obs, obs.nu_obs, task.dt)
        states.append(current)
    return RolloutResult(
        trajectory=Trajectory(task.observed.person_id, tuple(states), task.dt),
        log_probability=0.0,
        fallback_steps=task.effective_horizon,
        sample_index=0,
    )


def rank(rollouts: Sequence[RolloutResult]) -> list[RolloutResult]:
    """Order rollouts by descending probability product.

    Ties break toward fewer fallback steps, then by sample index, so the
    ordering is a deterministic permutation of the input.
    """
    if not rollouts:
        raise ValueError("cannot rank zero rollouts")
    return sorted(rollouts, key=lambda r: (-r.log_probability, r.fallback_steps, r.sample_index))
