"""Learned flow-map container and its versioned JSON serialization.

A model holds one bin geometry, the per-cluster distributions and a
nearest-centroid index. The JSON document round-trips exactly: floats
are written with Python's shortest round-trip representation, so
serialize(load(serialize(m))) is byte-identical.
"""

from __future__ import annotations

import json
import os
import tempfile
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.spatial import cKDTree

from .histograms import BinGeometry, DSHistogram

FORMAT_VERSION = 1


class ModelFormatError(ValueError):
    """Raised when a model document is structurally invalid."""


@dataclass(frozen=True)
class ClusterModel:
    """One spatial cluster: centroid, raw and laminar distributions, divergence."""

    centroid: tuple[float, float]
    member_count: int
    gamma_r: DSHistogram
    gamma_l: DSHistogram
    kl_divergence: float

    def __post_init__(self) -> None:
        if self.gamma_r.geometry != self.gamma_l.geometry:
            raise ValueError("gamma_r and gamma_l must share one bin geometry")
        if self.kl_divergence < 0.0:
            raise ValueError("kl_divergence must be >= 0")
        object.__setattr__(self, "centroid", (float(self.centroid[0]), float(self.centroid[1])))


@dataclass(frozen=True)
class TrainParams:
    """Training knobs stamped into the model for reproducibility."""

    k: int = 500
    seed: int = 0
    max_iters: int = 100
    sigma_omega: float = float(np.radians(10.0))
    sigma_nu: float = 0.2
    kl_epsilon: float = 1e-12
    dt: float = 1.0
    shuffle_seed: Optional[int] = None
    region: Optional[tuple[float, float, float, float]] = None
    region_mode: str = "clip"

    def to_dict(self) -> dict:
        return {
            "k": self.k,
            "seed": self.seed,
            "max_iters": self.max_iters,
            "sigma_omega": self.sigma_omega,
            "sigma_nu": self.sigma_nu,
            "kl_epsilon": self.kl_epsilon,
            "dt": self.dt,
            "shuffle_seed": self.shuffle_seed,
            "region": list(self.region) if self.region is not None else None,
            "region_mode": self.region_mode,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TrainParams":
        region = d.get("region")
        return cls(
            k=int(d["k"]),
            seed=int(d["seed"]),
            max_iters=int(d["max_iters"]),
            sigma_omega=float(d["sigma_omega"]),
            sigma_nu=float(d["sigma_nu"]),
            kl_epsilon=float(d["kl_epsilon"]),
            dt=float(d["dt"]),
            shuffle_seed=None if d.get("shuffle_seed") is None else int(d["shuffle_seed"]),
            region=None if region is None else tuple(float(v) for v in region),
            region_mode=str(d.get("region_mode", "clip")),
        )


@dataclass
class LaceModel:
    """Full map of dynamics: geometry, clusters, spatial index, provenance."""

    geometry: BinGeometry
    clusters: list[ClusterModel]
    params: TrainParams
    fingerprint: str = ""
    _tree: Optional[cKDTree] = field(default=None, repr=False, compare=False)

    def __post_init__(self) -> None:
        for c in self.clusters:
            if c.gamma_r.geometry != self.geometry:
                raise ValueError("cluster geometry differs from model geometry")

    @property
    def n_clusters(self) -> int:
        return len(self.clusters)

    def centroids(self) -> np.ndarray:
        return np.asarray([c.centroid for c in self.clusters], dtype=float).reshape(-1, 2)

    def nearest_cluster(self, x: float, y: float) -> tuple[int, float]:
        """Index of the nearest centroid and its Euclidean distance."""
        if not self.clusters:
            raise ValueError("model has no clusters")
        if self._tree is None:
            self._tree = cKDTree(self.centroids())
        dist, idx = self._tree.query([x, y])
        return int(idx), float(dist)

    # -- serialization -----------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "format_version": FORMAT_VERSION,
            "kind": "lace-model",
            "fingerprint": self.fingerprint,
            "geometry": self.geometry.to_dict(),
            "params": self.params.to_dict(),
            "clusters": [
                {
                    "centroid": [c.centroid[0], c.centroid[1]],
                    "member_count": c.member_count,
                    "kl_divergence": c.kl_divergence,
                    "gamma_r": c.gamma_r.probs.tolist(),
                    "gamma_l": c.gamma_l.probs.tolist(),
                }
                for c in self.clusters
            ],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), separators=(",", ":"))

    def save(self, path: str) -> None:
        write_atomic_text(path, self.to_json() + "\n")

    @classmethod
    def from_dict(cls, doc: dict) -> "LaceModel":
        for key in ("format_version", "geometry", "params", "clusters"):
            if key not in doc:
                raise ModelFormatError(f"model document is missing field '{key}'")
        if int(doc["format_version"]) != FORMAT_VERSION:
            raise ModelFormatError(
                f"unsupported format_version {doc['format_version']} (expected {FORMAT_VERSION})"
            )
        try:
            geometry = BinGeometry.from_dict(doc["geometry"])
        except (KeyError, TypeError, ValueError) as exc:
            raise ModelFormatError(f"invalid field 'geometry': {exc}") from exc
        try:
            params = TrainParams.from_dict(doc["params"])
        except (KeyError, TypeError, ValueError) as exc:
            raise ModelFormatError(f"invalid field 'params': {exc}") from exc
        clusters = []
        for i, c in enumerate(doc["clusters"]):
            try:
                n = int(c["member_count"])
                gamma_r = DSHistogram(geometry, np.asarray(c["gamma_r"], dtype=float), n)
                gamma_l = DSHistogram(geometry, np.asarray(c["gamma_l"], dtype=float), n)
                clusters.append(
                    ClusterModel(
                        centroid=(float(c["centroid"][0]), float(c["centroid"][1])),
                        member_count=n,
                        gamma_r=gamma_r,
                        gamma_l=gamma_l,
                        kl_divergence=float(c["kl_divergence"]),
                    )
                )
            except (KeyError, IndexError, TypeError, ValueError) as exc:
                raise ModelFormatError(f"invalid field 'clusters[{i}]': {exc}") from exc
        return cls(
            geometry=geometry,
            clusters=clusters,
            params=params,
            fingerprint=str(doc.get("fingerprint", "")),
        )

    @classmethod
    def load(cls, path: str) -> "LaceModel":
        with open(path, "r", encoding="utf-8") as fh:
            try:
                doc = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ModelFormatError(f"model file is not valid JSON: {exc}") from exc
        if not isinstance(doc, dict):
            raise ModelFormatError("model document must be a JSON object")
        return cls.from_dict(doc)


def write_atomic_text(path: str, text: str) -> None:
    """Write a text file via a temp file + rename in the same directory."""
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix="~")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except OSError:
            pass
        raise
