"""Model learning: spatial clustering, laminar extraction, divergence scoring.

The laminar component of a cluster is pulled out of its raw velocity
observations by a histogram Bayes filter. The filter's transition tally
receives the same measurement-density increment on every source-state
row, so all rows of the cumulative transition matrix stay identical and
the predicted belief collapses to the row-normalized cumulative tally.
``extract_laminar`` exploits this: it keeps the tally as a single
vector instead of the n_bins x n_bins matrix, which changes nothing
numerically (the previous posterior enters the prediction only through
its sum, which cancels in the correction normalizer) but makes training
linear in the number of bins.
"""

from __future__ import annotations

import hashlib
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .core import Trajectory
from .histograms import (
    BinGeometry,
    DSHistogram,
    estimate_gamma_r,
    kl_divergence,
    measurement_matrix,
)
from .model import ClusterModel, LaceModel, TrainParams

log = logging.getLogger(__name__)

_LAMINAR_CHUNK = 1024


@dataclass(frozen=True)
class KMeansResult:
    centroids: np.ndarray
    labels: np.ndarray
    n_iter: int
    sse: float
    converged: bool


def kmeans_xy(
    points: np.ndarray,
    k: int,
    seed: int,
    max_iters: int = 100,
) -> KMeansResult:
    """Lloyd's algorithm over 2D positions, fully deterministic given a seed.

    Deterministic contract (mirrored by the test oracle):

    * initial centroids: ``k`` distinct positions drawn without
      replacement via ``default_rng(seed).choice`` from the
      lexicographically sorted unique rows,
    * assignment: nearest centroid by squared distance, lowest index on
      ties,
    * empty-cluster repair, ascending cluster index: move the centroid
      onto the point currently farthest from its assigned centroid and
      reassign exactly that point,
    * update: member mean per cluster via bincount sums,
    * stop when an assignment repeats the previous one, else after
      ``max_iters`` updates followed by one final assignment.

    If ``k`` exceeds the number of distinct positions it is reduced with
    a warning.
    """
    points = np.ascontiguousarray(np.asarray(points, dtype=np.float64))
    if points.ndim != 2 or points.shape[1] != 2:
        raise ValueError(f"points must have shape (n, 2), got {points.shape}")
    n = len(points)
    if n == 0:
        raise ValueError("cannot cluster zero observations")
    if k < 1:
        raise ValueError("k must be >= 1")
    distinct = np.unique(points, axis=0)
    if k > len(distinct):
        log.warning("reducing k from %d to %d distinct positions", k, len(distinct))
        k = len(distinct)

    rng = np.random.default_rng(seed)
    centroids = distinct[rng.choice(len(distinct), size=k, replace=False)].copy()

    labels: Optional[np.ndarray] = None
    n_iter = 0
    converged = False
    for n_iter in range(1, max_iters + 1):
        new_labels = _assign(points, centroids)
        _repair_empty(points, centroids, new_labels, k)
        if labels is not None and np.array_equal(new_labels, labels):
            labels = new_labels
            converged = True
            break
        labels = new_labels
        centroids = _update(points, labels, k)
    if not converged:
        labels = _assign(points, centroids)
        _repair_empty(points, centroids, labels, k)

    d2 = np.sum((points - centroids[labels]) ** 2, axis=1)
    return KMeansResult(
        centroids=centroids,
        labels=labels,
        n_iter=n_iter,
        sse=float(np.sum(d2)),
        converged=converged,
    )


def _assign(points: np.ndarray, centroids: np.ndarray, chunk: int = 16384) -> np.ndarray:
    labels = np.empty(len(points), dtype=np.int64)
    for lo in range(0, len(points), chunk):
        block = points[lo : lo + chunk]
        d2 = (block[:, 0:1] - centroids[None, :, 0]) ** 2 + (block[:, 1:2] - centroids[None, :, 1]) ** 2
        labels[lo : lo + chunk] = np.argmin(d2, axis=1)
    return labels


def _repair_empty(points: np.ndarray, centroids: np.ndarray, labels: np.ndarray, k: int) -> None:
    counts = np.bincount(labels, minlength=k)
    empties = np.flatnonzero(counts == 0)
    if empties.size == 0:
        return
    d2_own = np.sum((points - centroids[labels]) ** 2, axis=1)
    for e in empties:
        j = int(np.argmax(d2_own))
        centroids[e] = points[j]
        labels[j] = e
        d2_own[j] = 0.0


def _update(points: np.ndarray, labels: np.ndarray, k: int) -> np.ndarray:
    counts = np.bincount(labels, minlength=k).astype(np.float64)
    sx = np.bincount(labels, weights=points[:, 0], minlength=k)
    sy = np.bincount(labels, weights=points[:, 1], minlength=k)
    # repair guarantees counts >= 1
    return np.stack([sx / counts, sy / counts], axis=1)


def extract_laminar(
    omegas: np.ndarray,
    nus: np.ndarray,
    geometry: BinGeometry,
    sigma_omega: float,
    sigma_nu: float,
) -> DSHistogram:
    """Laminar component of one cluster's time-ordered velocity observations.

    Belief starts uniform over the grid. Per observation i, in order:
    the cumulative transition tally gains the observation's measurement
    densities, the predicted belief is the row-normalized tally, the
    posterior is the predicted belief times the measurement densities
    normalized over bins, and the posterior is added to an accumulator.
    The accumulator normalized over bins is the laminar component.

    States visited only intermittently collect little tally mass, so
    their posteriors stay suppressed relative to the raw histogram.
    """
    omegas = np.asarray(omegas, dtype=float)
    nus = np.asarray(nus, dtype=float)
    if omegas.size == 0:
        raise ValueError("cannot extract a laminar component from zero observations")
    tally = np.zeros(geometry.n_bins)
    accum = np.zeros(geometry.n_bins)
    for lo in range(0, omegas.size, _LAMINAR_CHUNK):
        dens = measurement_matrix(
            omegas[lo : lo + _LAMINAR_CHUNK],
            nus[lo : lo + _LAMINAR_CHUNK],
            geometry,
            sigma_omega,
            sigma_nu,
        )
        running = tally + np.cumsum(dens, axis=0)
        posterior = running * dens
        total = posterior.sum(axis=1, keepdims=True)
        # uniform fallback cannot trigger with a Gaussian density, kept
        # as a guard against degenerate sigmas underflowing to zero
        dead = total[:, 0] == 0.0
        if np.any(dead):
            posterior[dead] = dens[dead]
            total = posterior.sum(axis=1, keepdims=True)
            dead = total[:, 0] == 0.0
            posterior[dead] = 1.0
            total = posterior.sum(axis=1, keepdims=True)
        posterior /= total
        accum += posterior.sum(axis=0)
        tally = running[-1]
    return DSHistogram(
        geometry=geometry,
        probs=accum / accum.sum(),
        support_count=int(omegas.size),
    )


@dataclass(frozen=True)
class ObservationTable:
    """Flattened velocity observations, globally ordered by time step.

    One row per motion segment: position where the motion started, its
    heading and speed, the global step index and a trajectory ordinal
    used as a deterministic tie-break.
    """

    xy: np.ndarray
    omega: np.ndarray
    nu: np.ndarray
    t: np.ndarray
    source: np.ndarray

    def __len__(self) -> int:
        return len(self.omega)


def flatten_observations(trajectories: Sequence[Trajectory]) -> ObservationTable:
    """Turn trajectories into per-segment velocity observations.

    Each state except the last contributes one observation (the final
    state only duplicates the previous velocity). Rows are stably sorted
    by (step index, trajectory ordinal) so clusters see observations in
    global time order.
    """
    xs, ys, oms, nus, ts, src = [], [], [], [], [], []
    for i, traj in enumerate(trajectories):
        if len(traj) < 2:
            continue
        for st in traj.states[:-1]:
            xs.append(st.x)
            ys.append(st.y)
            oms.append(st.omega)
            nus.append(st.nu)
            ts.append(st.t)
            src.append(i)
    if not xs:
        raise ValueError("no velocity observations in the training set")
    xy = np.column_stack([np.asarray(xs), np.asarray(ys)])
    t = np.asarray(ts, dtype=np.int64)
    source = np.asarray(src, dtype=np.int64)
    order = np.lexsort((source, t))
    return ObservationTable(
        xy=np.ascontiguousarray(xy[order]),
        omega=np.asarray(oms)[order],
        nu=np.asarray(nus)[order],
        t=t[order],
        source=source[order],
    )


def train(
    trajectories: Sequence[Trajectory],
    geometry: Optional[BinGeometry] = None,
    params: Optional[TrainParams] = None,
    threads: int = 1,
) -> LaceModel:
    """Learn a flow map from trajectories.

    Flattens trajectories to velocity observations, clusters them
    spatially, and per cluster estimates the raw histogram, extracts the
    laminar component and scores the divergence between the two. The
    result is immutable and safe for concurrent readers.
    """
    geometry = geometry or BinGeometry.default()
    params = params or TrainParams()
    table = flatten_observations(trajectories)
    if params.shuffle_seed is not None:
        perm = np.random.default_rng(params.shuffle_seed).permutation(len(table))
        table = ObservationTable(
            xy=table.xy[perm], omega=table.omega[perm], nu=table.nu[perm],
            t=table.t[perm], source=table.source[perm],
        )

    km = kmeans_xy(table.xy, params.k, params.seed, params.max_iters)
    k = len(km.centroids)

    by_label = np.argsort(km.labels, kind="stable")
    bounds = np.searchsorted(km.labels[by_label], np.arange(k + 1))
    member_lists = [by_label[bounds[c] : bounds[c + 1]] for c in range(k)]

    def build(c: int) -> Optional[ClusterModel]:
        members = member_lists[c]
        if members.size == 0:
            return None
        om = table.omega[members]
        nu = table.nu[members]
        gamma_r = estimate_gamma_r(om, nu, geometry)
        gamma_l = extract_laminar(om, nu, geometry, params.sigma_omega, params.sigma_nu)
        return ClusterModel(
            centroid=(float(km.centroids[c, 0]), float(km.centroids[c, 1])),
            member_count=int(members.size),
            gamma_r=gamma_r,
            gamma_l=gamma_l,
            kl_divergence=kl_divergence(gamma_r, gamma_l, params.kl_epsilon),
        )

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            built = list(pool.map(build, range(k)))
    else:
        built = [build(c) for c in range(k)]
    dropped = sum(1 for b in built if b is None)
    if dropped:
        log.warning("dropped %d empty clusters", dropped)
    clusters = [b for b in built if b is not None]

    return LaceModel(
        geometry=geometry,
        clusters=clusters,
        params=params,
        fingerprint=_fingerprint(table, geometry, params),
    )


def _fingerprint(table: ObservationTable, geometry: BinGeometry, params: TrainParams) -> str:
    h = hashlib.sha256()
    h.update(repr(geometry.to_dict()).encode())
    h.update(repr(params.to_dict()).encode())
    for arr in (table.xy, table.omega, table.nu, table.t):
        h.update(np.ascontiguousarray(arr).tobytes())
    return h.hexdigest()
