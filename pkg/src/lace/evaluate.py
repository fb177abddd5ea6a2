"""Displacement-error metrics, aggregation over runs, spatial error binning."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .core import PredictionTask, Trajectory
from .predict import RolloutResult


def step_distances(pred: Trajectory, gt: Trajectory) -> np.ndarray:
    """Per-step Euclidean distances, truncated to the shorter input."""
    m = min(len(pred), len(gt))
    if m == 0:
        raise ValueError("no comparable steps")
    if pred.states[0].t != gt.states[0].t:
        raise ValueError(
            f"step indices misaligned: prediction starts at {pred.states[0].t}, "
            f"ground truth at {gt.states[0].t}"
        )
    px = np.array([s.x for s in pred.states[:m]])
    py = np.array([s.y for s in pred.states[:m]])
    gx = np.array([s.x for s in gt.states[:m]])
    gy = np.array([s.y for s in gt.states[:m]])
    return np.hypot(px - gx, py - gy)


def ade_fde(pred: Trajectory, gt: Trajectory) -> tuple[float, float]:
    """Mean and final displacement error over the comparable steps."""
    d = step_distances(pred, gt)
    return float(d.mean()), float(d[-1])


def topk(rollouts: Sequence[RolloutResult], gt: Trajectory, k: int) -> tuple[float, float]:
    """Best ADE and best FDE among the first k rollouts (ranked input).

    The two minima are taken independently, matching the metric's
    definition: the k candidates are fixed, each error picks its own
    best candidate.
    """
    if not rollouts:
        raise ValueError("empty candidate set")
    if k < 1 or k > len(rollouts):
        raise ValueError(f"k must lie in [1, {len(rollouts)}], got {k}")
    ades, fdes = [], []
    for r in rollouts[:k]:
        a, f = ade_fde(r.trajectory, gt)
        ades.append(a)
        fdes.append(f)
    return min(ades), min(fdes)


@dataclass(frozen=True)
class TaskScore:
    """Errors of one task: rank-1 ADE/FDE, top-k variants, final GT position."""

    task_id: str
    horizon_steps: int
    ade: float
    fde: float
    topk_ade: float
    topk_fde: float
    gt_final_position: tuple[float, float]
    step_l2: tuple[float, ...] = ()


def score_task(task: PredictionTask, ranked: Sequence[RolloutResult], k: int) -> TaskScore:
    """Score ranked rollouts against the task's ground truth.

    ``ade``/``fde`` come from the rank-1 rollout; the top-k variants
    minimize over the first min(k, len) rollouts.
    """
    if not ranked:
        raise ValueError(f"no rollouts for task {task.task_id}")
    gt = task.ground_truth
    d = step_distances(ranked[0].trajectory, gt)
    t_ade, t_fde = topk(ranked, gt, min(k, len(ranked)))
    final = gt.states[-1]
    return TaskScore(
        task_id=task.task_id,
        horizon_steps=task.effective_horizon,
        ade=float(d.mean()),
        fde=float(d[-1]),
        topk_ade=t_ade,
        topk_fde=t_fde,
        gt_final_position=(final.x, final.y),
        step_l2=tuple(float(v) for v in d),
    )


@dataclass(frozen=True)
class AggregateSummary:
    """Across-run statistics in the mean +/- sample-std presentation."""

    runs: int
    n_tasks: int
    run_ade: tuple[float, ...]
    run_fde: tuple[float, ...]
    run_topk_ade: tuple[float, ...]
    run_topk_fde: tuple[float, ...]
    ade_mean: float
    ade_std: float
    fde_mean: float
    fde_std: float
    topk_ade_mean: float
    topk_ade_std: float
    topk_fde_mean: float
    topk_fde_std: float
    single_run: bool

    def to_dict(self) -> dict:
        return {
            "runs": self.runs,
            "n_tasks": self.n_tasks,
            "ade_mean": self.ade_mean,
            "ade_std": self.ade_std,
            "fde_mean": self.fde_mean,
            "fde_std": self.fde_std,
            "topk_ade_mean": self.topk_ade_mean,
            "topk_ade_std": self.topk_ade_std,
            "topk_fde_mean": self.topk_fde_mean,
            "topk_fde_std": self.topk_fde_std,
            "single_run": self.single_run,
            "run_ade": list(self.run_ade),
            "run_fde": list(self.run_fde),
            "run_topk_ade": list(self.run_topk_ade),
            "run_topk_fde": list(self.run_topk_fde),
        }


def _mean_std(values: Sequence[float]) -> tuple[float, float]:
    arr = np.asarray(values, dtype=float)
    mean = float(arr.mean())
    std = 0.0 if len(arr) < 2 else float(arr.std(ddof=1))
    return mean, std


def aggregate(per_run_scores: Sequence[Sequence[TaskScore]]) -> AggregateSummary:
    """Summarize scores grouped by run: per-run means, then mean and
    sample standard deviation across runs. A single run reports std 0
    and sets the ``single_run`` flag."""
    if not per_run_scores:
        raise ValueError("need at least one run")
    for i, scores in enumerate(per_run_scores):
        if not scores:
            raise ValueError(f"run {i} has no task scores")
    run_ade = tuple(float(np.mean([s.ade for s in scores])) for scores in per_run_scores)
    run_fde = tuple(float(np.mean([s.fde for s in scores])) for scores in per_run_scores)
    run_tka = tuple(float(np.mean([s.topk_ade for s in scores])) for scores in per_run_scores)
    run_tkf = tuple(float(np.mean([s.topk_fde for s in scores])) for scores in per_run_scores)
    ade_mean, ade_std = _mean_std(run_ade)
    fde_mean, fde_std = _mean_std(run_fde)
    tka_mean, tka_std = _mean_std(run_tka)
    tkf_mean, tkf_std = _mean_std(run_tkf)
    return AggregateSummary(
        runs=len(per_run_scores),
        n_tasks=len(per_run_scores[0]),
        run_ade=run_ade,
        run_fde=run_fde,
        run_topk_ade=run_tka,
        run_topk_fde=run_tkf,
        ade_mean=ade_mean,
        ade_std=ade_std,
        fde_mean=fde_mean,
        fde_std=fde_std,
        topk_ade_mean=tka_mean,
        topk_ade_std=tka_std,
        topk_fde_mean=tkf_mean,
        topk_fde_std=tkf_std,
        single_run=len(per_run_scores) == 1,
    )


def horizon_curves(scores: Sequence[TaskScore], t_p: int) -> dict:
    """ADE/FDE as functions of the horizon h = 1..t_p.

    At horizon h only tasks with at least h ground-truth steps count;
    FDE(h) is the mean step-h error, ADE(h) the mean of per-task mean
    errors over steps 1..h.
    """
    ade_curve, fde_curve, counts = [], [], []
    for h in range(1, t_p + 1):
        fde_vals = [s.step_l2[h - 1] for s in scores if len(s.step_l2) >= h]
        ade_vals = [float(np.mean(s.step_l2[:h])) for s in scores if len(s.step_l2) >= h]
        counts.append(len(fde_vals))
        fde_curve.append(float(np.mean(fde_vals)) if fde_vals else None)
        ade_curve.append(float(np.mean(ade_vals)) if ade_vals else None)
    return {"horizons": list(range(1, t_p + 1)), "ade": ade_curve, "fde": fde_curve, "counts": counts}


@dataclass(frozen=True)
class HeatmapCell:
    sum_fde: float
    count: int

    @property
    def mean_fde(self) -> float:
        return self.sum_fde / self.count


@dataclass(frozen=True)
class HeatmapGrid:
    """Mean FDE per spatial cell, keyed by the ground-truth final position."""

    cell_size: float
    bounds: tuple[float, float, float, float]
    cells: dict[tuple[int, int], HeatmapCell] = field(default_factory=dict)
    out_of_bounds: int = 0

    def cell_rect(self, ix: int, iy: int) -> tuple[float, float, float, float]:
        xmin, _, ymin, _ = self.bounds
        x0 = xmin + ix * self.cell_size
        y0 = ymin + iy * self.cell_size
        return (x0, y0, x0 + self.cell_size, y0 + self.cell_size)

    def to_rows(self) -> list[dict]:
        rows = []
        for (ix, iy) in sorted(self.cells):
            cell = self.cells[(ix, iy)]
            x0, y0, x1, y1 = self.cell_rect(ix, iy)
            rows.append({
                "cell_ix": ix, "cell_iy": iy,
                "xmin": x0, "ymin": y0, "xmax": x1, "ymax": y1,
                "mean_fde": cell.mean_fde, "count": cell.count,
            })
        return rows


def heatmap(
    scores: Sequence[TaskScore],
    cell_size: float,
    bounds: tuple[float, float, float, float],
) -> HeatmapGrid:
    """Bin each task's FDE into the cell holding its final GT position.

    Cells never hit stay absent (distinguishable from a zero mean);
    tasks ending outside the bounds are only counted.
    """
    if cell_size <= 0:
        raise ValueError("cell_size must be > 0")
    xmin, xmax, ymin, ymax = bounds
    if xmin >= xmax or ymin >= ymax:
        raise ValueError(f"degenerate bounds {bounds}")
    acc: dict[tuple[int, int], list[float]] = {}
    outside = 0
    for s in scores:
        x, y = s.gt_final_position
        if not (xmin <= x <= xmax and ymin <= y <= ymax):
            outside += 1
            continue
        nx = int(math.ceil((xmax - xmin) / cell_size))
        ny = int(math.ceil((ymax - ymin) / cell_size))
        ix = min(int((x - xmin) / cell_size), nx - 1)
        iy = min(int((y - ymin) / cell_size), ny - 1)
        acc.setdefault((ix, iy), []).append(s.fde)
    cells = {
        key: HeatmapCell(sum_fde=float(sum(v)), count=len(v)) for key, v in acc.items()
    }
    return HeatmapGrid(cell_size=cell_size, bounds=bounds, cells=cells, out_of_bounds=outside)
