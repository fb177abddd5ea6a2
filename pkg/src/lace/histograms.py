"""Discrete joint direction-speed distributions over a fixed bin grid.

The grid covers the full circle with ``n_direction_bins`` equal direction
bins and the speed range [0, speed_max] with equal-width speed bins. A
flat bin index is ``direction_bin * n_speed_bins + speed_bin``. Bins are
half-open [lo, hi) with the top speed bin closed, so every observation
has exactly one bin.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .core import TWO_PI, circular_distance

PROB_SUM_TOL = 1e-9
KL_EPSILON = 1e-12


@dataclass(frozen=True)
class BinGeometry:
    """Bin layout of the direction-speed grid.

    ``direction_bin_width`` is derived as 2pi / n_direction_bins so the
    direction bins tile the circle exactly; ``n_speed_bins`` is
    ceil(speed_max / speed_bin_width).
    """

    speed_bin_width: float
    speed_max: float
    n_direction_bins: int
    n_speed_bins: int = field(init=False)
    direction_bin_width: float = field(init=False)

    def __post_init__(self) -> None:
        if self.speed_bin_width <= 0 or self.speed_max <= 0:
            raise ValueError("speed_bin_width and speed_max must be > 0")
        if self.n_direction_bins < 1:
            raise ValueError("need at least one direction bin")
        object.__setattr__(self, "n_speed_bins", int(math.ceil(self.speed_max / self.speed_bin_width - 1e-9)))
        object.__setattr__(self, "direction_bin_width", TWO_PI / self.n_direction_bins)

    @classmethod
    def default(cls) -> "BinGeometry":
        """0.2 m/s speed bins on [0, 5] x 10 degree direction bins (900 states)."""
        return cls(speed_bin_width=0.2, speed_max=5.0, n_direction_bins=36)

    @property
    def n_bins(self) -> int:
        return self.n_direction_bins * self.n_speed_bins

    def direction_centers(self) -> np.ndarray:
        return (np.arange(self.n_direction_bins) + 0.5) * self.direction_bin_width

    def speed_centers(self) -> np.ndarray:
        return (np.arange(self.n_speed_bins) + 0.5) * self.speed_bin_width

    def direction_bin(self, omega) -> np.ndarray:
        return np.floor_divide(np.asarray(omega, dtype=float), self.direction_bin_width).astype(np.int64) % self.n_direction_bins

    def speed_bin(self, nu) -> np.ndarray:
        raw = np.floor_divide(np.clip(np.asarray(nu, dtype=float), 0.0, None), self.speed_bin_width).astype(np.int64)
        return np.minimum(raw, self.n_speed_bins - 1)

    def flat_bin(self, omega, nu) -> np.ndarray:
        return self.direction_bin(omega) * self.n_speed_bins + self.speed_bin(nu)

    def bin_center(self, flat_index: int) -> tuple[float, float]:
        d, s = divmod(int(flat_index), self.n_speed_bins)
        return ((d + 0.5) * self.direction_bin_width, (s + 0.5) * self.speed_bin_width)

    def to_dict(self) -> dict:
        return {
            "speed_bin_width": self.speed_bin_width,
            "speed_max": self.speed_max,
            "n_direction_bins": self.n_direction_bins,
            "n_speed_bins": self.n_speed_bins,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "BinGeometry":
        geo = cls(
            speed_bin_width=float(d["speed_bin_width"]),
            speed_max=float(d["speed_max"]),
            n_direction_bins=int(d["n_direction_bins"]),
        )
        if "n_speed_bins" in d and int(d["n_speed_bins"]) != geo.n_speed_bins:
            raise ValueError(
                f"n_speed_bins={d['n_speed_bins']} inconsistent with "
                f"speed_max/speed_bin_width (expected {geo.n_speed_bins})"
            )
        return geo


@dataclass(frozen=True)
class DSHistogram:
    """A probability distribution over the direction-speed grid.

    ``probs`` is a dense float64 vector of length ``geometry.n_bins``
    summing to 1; ``support_count`` is the number of observations behind
    it and ``clipped_count`` how many of those had speeds above
    ``speed_max`` (they land in the top speed bin).
    """

    geometry: BinGeometry
    probs: np.ndarray
    support_count: int
    clipped_count: int = 0

    def __post_init__(self) -> None:
        probs = np.ascontiguousarray(np.asarray(self.probs, dtype=np.float64))
        if probs.shape != (self.geometry.n_bins,):
            raise ValueError(f"probs must have shape ({self.geometry.n_bins},), got {probs.shape}")
        if np.any(probs < 0.0) or not np.all(np.isfinite(probs)):
            raise ValueError("probabilities must be finite and >= 0")
        if self.support_count > 0 and abs(float(probs.sum()) - 1.0) > PROB_SUM_TOL:
            raise ValueError(f"probabilities must sum to 1, got {probs.sum()!r}")
        object.__setattr__(self, "probs", probs)

    def direction_marginal(self) -> np.ndarray:
        """Distribution over direction bins, speed summed out."""
        grid = self.probs.reshape(self.geometry.n_direction_bins, self.geometry.n_speed_bins)
        return grid.sum(axis=1)

    def argmax_direction_bin(self) -> int:
        return int(np.argmax(self.direction_marginal()))


def measurement_model(
    omega: float,
    nu: float,
    j_omega: float,
    j_nu: float,
    sigma_omega: float,
    sigma_nu: float,
) -> float:
    """Density of observing velocity (omega, nu) from grid state (j_omega, j_nu).

    Gaussian in the great-circle direction distance and the absolute
    speed difference, with normalizer 1 / (2 pi sigma_omega sigma_nu).
    """
    if sigma_omega <= 0 or sigma_nu <= 0:
        raise ValueError("sigma_omega and sigma_nu must be > 0")
    dd = circular_distance(omega, j_omega)
    ds = abs(nu - j_nu)
    expo = -(dd * dd) / (2.0 * sigma_omega * sigma_omega) - (ds * ds) / (2.0 * sigma_nu * sigma_nu)
    return math.exp(expo) / (TWO_PI * sigma_omega * sigma_nu)


def measurement_matrix(
    omegas: np.ndarray,
    nus: np.ndarray,
    geometry: BinGeometry,
    sigma_omega: float,
    sigma_nu: float,
) -> np.ndarray:
    """Measurement densities of each observation against every grid state.

    Returns an (n, n_bins) array; row i equals ``measurement_model``
    evaluated at observation i for each bin center.
    """
    if sigma_omega <= 0 or sigma_nu <= 0:
        raise ValueError("sigma_omega and sigma_nu must be > 0")
    omegas = np.asarray(omegas, dtype=float)
    nus = np.asarray(nus, dtype=float)
    dd = np.abs(omegas[:, None] - geometry.direction_centers()[None, :]) % TWO_PI
    dd = np.minimum(dd, TWO_PI - dd)
    ds = np.abs(nus[:, None] - geometry.speed_centers()[None, :])
    e_dir = -(dd * dd) / (2.0 * sigma_omega * sigma_omega)
    e_spd = -(ds * ds) / (2.0 * sigma_nu * sigma_nu)
    coef = 1.0 / (TWO_PI * sigma_omega * sigma_nu)
    dens = coef * np.exp(e_dir[:, :, None] + e_spd[:, None, :])
    return dens.reshape(len(omegas), geometry.n_bins)


def estimate_gamma_r(omegas: np.ndarray, nus: np.ndarray, geometry: BinGeometry) -> DSHistogram:
    """Raw direction-speed histogram of one cluster's velocity observations.

    Bin counts normalized to probabilities. Speeds above ``speed_max``
    are clipped into the top speed bin and counted in ``clipped_count``.
    """
    omegas = np.asarray(omegas, dtype=float)
    nus = np.asarray(nus, dtype=float)
    if omegas.size == 0:
        raise ValueError("cannot estimate a histogram from zero observations")
    clipped = int(np.count_nonzero(nus > geometry.speed_max))
    counts = np.bincount(geometry.flat_bin(omegas, nus), minlength=geometry.n_bins).astype(np.float64)
    return DSHistogram(
        geometry=geometry,
        probs=counts / counts.sum(),
        support_count=int(omegas.size),
        clipped_count=clipped,
    )


def kl_divergence(p: DSHistogram, q: DSHistogram, epsilon: float = KL_EPSILON) -> float:
    """Kullback-Leibler divergence D(p || q) in nats.

    Sums p * ln(p / max(q, epsilon)) over bins where p > 0; the epsilon
    floor keeps the result finite when q has empty bins. Clamped at zero
    against float noise.
    """
    if p.geometry != q.geometry:
        raise ValueError("histograms must share one bin geometry")
    if epsilon <= 0:
        raise ValueError("epsilon must be > 0")
    mask = p.probs > 0.0
    pj = p.probs[mask]
    qj = np.maximum(q.probs[mask], epsilon)
    return max(float(np.sum(pj * np.log(pj / qj))), 0.0)


def floored_bin_count(p: DSHistogram, q: DSHistogram, epsilon: float = KL_EPSILON) -> int:
    """How many bins of the divergence sum hit the epsilon floor."""
    if p.geometry != q.geometry:
        raise ValueError("histograms must share one bin geometry")
    return int(np.count_nonzero((p.probs > 0.0) & (q.probs < epsilon)))
