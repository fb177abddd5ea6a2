"""Command-line pipeline: synth, train, predict, eval, export.

Configuration precedence: built-in defaults (the standard experiment
settings: dt = 1 s, O_s = 3 s, T_s = 20 s, K = 500, top-k = 5, 10
runs), then a JSON config file, then LACE_* environment variables, then
explicit command-line flags. Every output artifact embeds the effective
config so a run can be reproduced from any of its files.

Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
from dataclasses import dataclass, fields
from typing import Optional, Sequence

import numpy as np

from . import evaluate as ev
from . import export as exp
from . import ingest
from . import predict as pred
from . import synth
from .core import AgentState, Trajectory
from .histograms import BinGeometry
from .model import LaceModel, ModelFormatError, TrainParams, write_atomic_text
from .training import train as train_model

log = logging.getLogger(__name__)

ENV_PREFIX = "LACE_"

PREDICTION_CSV_HEADER = (
    "task_id", "sample_rank", "step", "x", "y", "omega", "nu",
    "log_probability", "fallback_steps",
)
SCORE_CSV_HEADER = (
    "run", "task_id", "horizon_steps", "ade", "fde", "topk_ade", "topk_fde", "gt_x", "gt_y",
)
HEATMAP_CSV_HEADER = ("cell_ix", "cell_iy", "xmin", "ymin", "xmax", "ymax", "mean_fde", "count")


class ConfigError(ValueError):
    """Unusable configuration or arguments (exit code 2)."""


@dataclass
class RunConfig:
    """Every experiment knob, with the standard settings as defaults."""

    dt: float = 1.0
    o_s: float = 3.0
    t_s: float = 20.0
    clusters: int = 500
    speed_bin_width: float = 0.2
    speed_max: float = 5.0
    direction_bins: int = 36
    sigma_omega: float = math.radians(10.0)
    sigma_nu: float = 0.2
    r_max: float = 2.0
    n_samples: int = 5
    top_k: int = 5
    runs: int = 10
    seed: int = 0
    stride: Optional[int] = None
    region: Optional[tuple[float, float, float, float]] = None
    region_mode: str = "clip"
    cell_size: float = 1.0
    threads: int = 1
    kl_epsilon: float = 1e-12
    shuffle_seed: Optional[int] = None
    max_tasks: Optional[int] = None

    def to_dict(self) -> dict:
        d = {f.name: getattr(self, f.name) for f in fields(self)}
        if d["region"] is not None:
            d["region"] = list(d["region"])
        return d

    def geometry(self) -> BinGeometry:
        return BinGeometry(
            speed_bin_width=self.speed_bin_width,
            speed_max=self.speed_max,
            n_direction_bins=self.direction_bins,
        )

    def validate(self) -> None:
        for name in ("o_s", "t_s"):
            v = getattr(self, name)
            if abs(v / self.dt - round(v / self.dt)) > 1e-9 or v <= 0:
                raise ConfigError(f"{name}={v} must be a positive multiple of dt={self.dt}")
        if self.region_mode not in ("clip", "contain"):
            raise ConfigError(f"region_mode must be clip or contain, got {self.region_mode!r}")
        if self.runs < 1 or self.n_samples < 1 or self.top_k < 1 or self.clusters < 1:
            raise ConfigError("runs, n_samples, top_k and clusters must be >= 1")
        if self.threads < 1:
            raise ConfigError("threads must be >= 1")


_CONFIG_TYPES = {
    "dt": float, "o_s": float, "t_s": float, "clusters": int,
    "speed_bin_width": float, "speed_max": float, "direction_bins": int,
    "sigma_omega": float, "sigma_nu": float, "r_max": float,
    "n_samples": int, "top_k": int, "runs": int, "seed": int,
    "stride": int, "region_mode": str, "cell_size": float, "threads": int,
    "kl_epsilon": float, "shuffle_seed": int, "max_tasks": int,
}


def build_config(args: argparse.Namespace) -> RunConfig:
    cfg = RunConfig()
    if getattr(args, "config", None):
        path = args.config
        if not os.path.exists(path):
            raise FileNotFoundError(f"config file not found: {path}")
        with open(path, "r", encoding="utf-8") as fh:
            try:
                doc = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"config file {path} is not valid JSON: {exc}") from exc
        _apply_mapping(cfg, doc, f"config file {path}")
    _apply_env(cfg)
    overrides = {
        name: getattr(args, name)
        for name in _CONFIG_TYPES
        if getattr(args, name, None) is not None
    }
    if getattr(args, "region", None) is not None:
        overrides["region"] = args.region
    _apply_mapping(cfg, overrides, "command line")
    cfg.validate()
    return cfg


def _apply_mapping(cfg: RunConfig, mapping: dict, source: str) -> None:
    for key, value in mapping.items():
        if key == "region":
            if value is not None:
                value = tuple(float(v) for v in value)
                if len(value) != 4:
                    raise ConfigError(f"{source}: region needs 4 numbers, got {value}")
            cfg.region = value
        elif key in _CONFIG_TYPES:
            setattr(cfg, key, None if value is None else _CONFIG_TYPES[key](value))
        else:
            raise ConfigError(f"{source}: unknown config key {key!r}")


def _apply_env(cfg: RunConfig) -> None:
    for key, typ in _CONFIG_TYPES.items():
        raw = os.environ.get(ENV_PREFIX + key.upper())
        if raw is not None:
            try:
                setattr(cfg, key, typ(raw))
            except ValueError as exc:
                raise ConfigError(f"bad value for {ENV_PREFIX + key.upper()}: {raw!r}") from exc
    raw = os.environ.get(ENV_PREFIX + "REGION")
    if raw is not None:
        cfg.region = tuple(float(v) for v in raw.split(","))


def _config_note(cfg: RunConfig) -> str:
    return "config: " + json.dumps(cfg.to_dict(), separators=(",", ":"))


# -- data loading ---------------------------------------------------------------


def load_trajectories(path: str, cfg: RunConfig, data_format: str) -> list:
    if not os.path.exists(path):
        raise FileNotFoundError(f"input not found: {path}")
    if data_format == "normalized":
        trajs = ingest.read_trajectory_csv(path, cfg.dt)
    elif data_format == "atc":
        with open(path, "r", encoding="utf-8") as fh:
            report = ingest.parse_csv(fh, ingest.ATC_SCHEMA, strict=False)
        trajs = ingest.resample(report.records, cfg.dt)
    else:
        raise ConfigError(f"unknown data format {data_format!r} (use normalized or atc)")
    if cfg.region is not None:
        trajs = ingest.filter_region(trajs, cfg.region, cfg.region_mode)
    if not trajs:
        raise ConfigError(f"no usable trajectories in {path}")
    return trajs


def build_tasks(path: str, cfg: RunConfig, data_format: str) -> list:
    trajs = load_trajectories(path, cfg, data_format)
    tasks = ingest.make_tasks(trajs, cfg.o_s, cfg.t_s, cfg.stride)
    if cfg.max_tasks is not None:
        tasks = tasks[: cfg.max_tasks]
    if not tasks:
        raise ConfigError(f"no prediction tasks could be cut from {path}")
    return tasks


# -- commands ---------------------------------------------------------------------


def cmd_synth(args: argparse.Namespace) -> int:
    cfg = build_config(args)
    if args.scenario_file:
        scenario = synth.FlowScenario.load(args.scenario_file)
        if args.agents is not None or args.seed is not None:
            scenario = synth.FlowScenario.from_dict(
                {**scenario.to_dict(),
                 "agents": args.agents if args.agents is not None else scenario.agents,
                 "seed": args.seed if args.seed is not None else scenario.seed}
            )
    else:
        scenario = synth.named_scenario(
            args.scenario,
            agents=args.agents if args.agents is not None else 200,
            seed=args.seed if args.seed is not None else cfg.seed,
        )
    trajectories = synth.generate(scenario, cfg.dt)
    note = f"scenario: {json.dumps(scenario.to_dict(), separators=(',', ':'))}"
    ingest.write_trajectory_csv(args.out, trajectories, header_comment=note)
    print(f"wrote {len(trajectories)} trajectories to {args.out}")
    return 0


def cmd_train(args: argparse.Namespace) -> int:
    cfg = build_config(args)
    trajs = load_trajectories(args.data, cfg, args.format)
    params = TrainParams(
        k=cfg.clusters,
        seed=cfg.seed,
        sigma_omega=cfg.sigma_omega,
        sigma_nu=cfg.sigma_nu,
        kl_epsilon=cfg.kl_epsilon,
        dt=cfg.dt,
        shuffle_seed=cfg.shuffle_seed,
        region=cfg.region,
        region_mode=cfg.region_mode,
    )
    model = train_model(trajs, cfg.geometry(), params, threads=cfg.threads)
    model.save(args.out)
    report = _training_report(model, cfg, len(trajs))
    report_path = args.report or (os.path.splitext(args.out)[0] + ".report.json")
    write_atomic_text(report_path, json.dumps(report, indent=2) + "\n")
    print(f"trained {model.n_clusters} clusters from {len(trajs)} trajectories -> {args.out}")
    return 0


def _training_report(model: LaceModel, cfg: RunConfig, n_trajectories: int) -> dict:
    kls = [c.kl_divergence for c in model.clusters]
    edges = np.linspace(0.0, max(max(kls), 1e-9), 21)
    counts, _ = np.histogram(kls, bins=edges)
    return {
        "config": cfg.to_dict(),
        "n_trajectories": n_trajectories,
        "n_observations": int(sum(c.member_count for c in model.clusters)),
        "clusters_requested": cfg.clusters,
        "clusters_kept": model.n_clusters,
        "clusters_dropped": max(cfg.clusters - model.n_clusters, 0),
        "kl_min": min(kls),
        "kl_max": max(kls),
        "kl_mean": float(np.mean(kls)),
        "kl_histogram": {"edges": edges.tolist(), "counts": counts.tolist()},
        "fingerprint": model.fingerprint,
    }


def _check_model_config(model: LaceModel, cfg: RunConfig, args: argparse.Namespace) -> None:
    if model.params.dt != cfg.dt:
        raise ConfigError(
            f"model was trained at dt={model.params.dt} but config requests dt={cfg.dt}"
        )
    explicit_geo = any(
        getattr(args, name, None) is not None
        for name in ("speed_bin_width", "speed_max", "direction_bins")
    )
    if explicit_geo and cfg.geometry() != model.geometry:
        raise ConfigError(
            f"config bin geometry {cfg.geometry().to_dict()} conflicts with "
            f"model geometry {model.geometry.to_dict()}"
        )


def cmd_predict(args: argparse.Namespace) -> int:
    cfg = build_config(args)
    if not os.path.exists(args.model):
        raise FileNotFoundError(f"model not found: {args.model}")
    model = LaceModel.load(args.model)
    _check_model_config(model, cfg, args)
    tasks = build_tasks(args.data, cfg, args.format)
    os.makedirs(args.out_dir, exist_ok=True)
    runs = 1 if args.baseline == "cvm" else cfg.runs
    for run in range(runs):
        lines = [f"# {_config_note(cfg)}", ",".join(PREDICTION_CSV_HEADER)]
        for task in tasks:
            if args.baseline == "cvm":
                ranked = [pred.predict_cvm(task)]
            else:
                rollouts = pred.predict_lace(
                    model, task,
                    n_samples=cfg.n_samples,
                    seed=cfg.seed + run,
                    r_max=cfg.r_max,
                )
                ranked = pred.rank(rollouts)
            for rank_idx, rollout in enumerate(ranked, start=1):
                for step, st in enumerate(rollout.trajectory.states, start=1):
                    lines.append(
                        f"{task.task_id},{rank_idx},{step},{st.x!r},{st.y!r},"
                        f"{st.omega!r},{st.nu!r},{rollout.log_probability!r},"
                        f"{rollout.fallback_steps}"
                    )
        path = os.path.join(args.out_dir, f"predictions_run{run:02d}.csv")
        write_atomic_text(path, "\n".join(lines) + "\n")
    print(f"wrote {runs} prediction file(s) for {len(tasks)} tasks to {args.out_dir}")
    return 0


def _read_predictions(path: str, tasks_by_id: dict, dt: float) -> dict:
    """Parse one predictions CSV back into ranked rollouts per task."""
    import csv as _csv

    groups: dict[tuple[str, int], list] = {}
    meta: dict[tuple[str, int], tuple[float, int]] = {}
    with open(path, "r", encoding="utf-8") as fh:
        reader = _csv.reader(fh)
        header_seen = False
        for row in reader:
            if not row or row[0].lstrip().startswith("#"):
                continue
            if not header_seen:
                if tuple(c.strip() for c in row) != PREDICTION_CSV_HEADER:
                    raise ingest.ParseError(f"unexpected predictions header in {path}: {row}")
                header_seen = True
                continue
            task_id, rank_s, step_s, x, y, omega, nu, logp, fb = row
            key = (task_id, int(rank_s))
            groups.setdefault(key, []).append((int(step_s), float(x), float(y), float(omega), float(nu)))
            meta[key] = (float(logp), int(fb))
    per_task: dict[str, list] = {}
    for (task_id, rank_idx) in sorted(meta, key=lambda k: (k[0], k[1])):
        if task_id not in tasks_by_id:
            raise ConfigError(f"prediction for unknown task {task_id!r} in {path}")
        task = tasks_by_id[task_id]
        rows = sorted(groups[(task_id, rank_idx)])
        t0 = task.observed.end_t
        states = [
            AgentState(x=x, y=y, omega=omega, nu=nu, t=t0 + step)
            for step, x, y, omega, nu in rows
        ]
        logp, fb = meta[(task_id, rank_idx)]
        per_task.setdefault(task_id, []).append(
            pred.RolloutResult(
                trajectory=Trajectory(task.observed.person_id, tuple(states), dt),
                log_probability=logp,
                fallback_steps=fb,
                sample_index=rank_idx - 1,
            )
        )
    return per_task


def cmd_eval(args: argparse.Namespace) -> int:
    cfg = build_config(args)
    tasks = build_tasks(args.data, cfg, args.format)
    tasks_by_id = {t.task_id: t for t in tasks}

    if os.path.isdir(args.pred):
        pred_files = sorted(
            os.path.join(args.pred, name)
            for name in os.listdir(args.pred)
            if name.startswith("predictions_run") and name.endswith(".csv")
        )
        if not pred_files:
            raise ConfigError(f"no predictions_run*.csv files in {args.pred}")
    else:
        if not os.path.exists(args.pred):
            raise FileNotFoundError(f"predictions not found: {args.pred}")
        pred_files = [args.pred]

    per_run_scores = []
    for path in pred_files:
        per_task = _read_predictions(path, tasks_by_id, cfg.dt)
        missing = [tid for tid in tasks_by_id if tid not in per_task]
        if missing:
            raise ConfigError(
                f"{path} misses predictions for {len(missing)} tasks (first: {missing[0]!r})"
            )
        scores = [
            ev.score_task(tasks_by_id[tid], per_task[tid], cfg.top_k) for tid in sorted(tasks_by_id)
        ]
        per_run_scores.append(scores)

    summary = ev.aggregate(per_run_scores)
    t_p = int(round(cfg.t_s / cfg.dt))
    pooled = [s for scores in per_run_scores for s in scores]
    curves = ev.horizon_curves(pooled, t_p)
    bounds = cfg.region if cfg.region is not None else _bounds_from_scores(pooled)
    grid = ev.heatmap(pooled, cfg.cell_size, bounds)

    os.makedirs(args.out_dir, exist_ok=True)
    score_lines = [f"# {_config_note(cfg)}", ",".join(SCORE_CSV_HEADER)]
    for run, scores in enumerate(per_run_scores):
        for s in scores:
            score_lines.append(
                f"{run},{s.task_id},{s.horizon_steps},{s.ade!r},{s.fde!r},"
                f"{s.topk_ade!r},{s.topk_fde!r},{s.gt_final_position[0]!r},{s.gt_final_position[1]!r}"
            )
    write_atomic_text(os.path.join(args.out_dir, "scores.csv"), "\n".join(score_lines) + "\n")

    doc = {"config": cfg.to_dict(), "summary": summary.to_dict(), "horizon_curves": curves,
           "heatmap_out_of_bounds": grid.out_of_bounds}
    write_atomic_text(os.path.join(args.out_dir, "summary.json"), json.dumps(doc, indent=2) + "\n")

    hm_lines = [f"# {_config_note(cfg)}", ",".join(HEATMAP_CSV_HEADER)]
    for row in grid.to_rows():
        hm_lines.append(
            f"{row['cell_ix']},{row['cell_iy']},{row['xmin']!r},{row['ymin']!r},"
            f"{row['xmax']!r},{row['ymax']!r},{row['mean_fde']!r},{row['count']}"
        )
    write_atomic_text(os.path.join(args.out_dir, "heatmap.csv"), "\n".join(hm_lines) + "\n")

    print(
        f"ADE {summary.ade_mean:.3f}+/-{summary.ade_std:.3f}  "
        f"FDE {summary.fde_mean:.3f}+/-{summary.fde_std:.3f}  "
        f"top-{cfg.top_k} ADE {summary.topk_ade_mean:.3f}  FDE {summary.topk_fde_mean:.3f}  "
        f"({summary.n_tasks} tasks, {summary.runs} run(s))"
    )
    return 0


def _bounds_from_scores(scores) -> tuple[float, float, float, float]:
    xs = [s.gt_final_position[0] for s in scores]
    ys = [s.gt_final_position[1] for s in scores]
    return (min(xs) - 0.5, max(xs) + 0.5, min(ys) - 0.5, max(ys) + 0.5)


def cmd_export(args: argparse.Namespace) -> int:
    cfg = build_config(args)
    if args.kind == "arrows":
        if not args.model:
            raise ConfigError("--model is required for kind=arrows")
        if not os.path.exists(args.model):
            raise FileNotFoundError(f"model not found: {args.model}")
        model = LaceModel.load(args.model)
        svg = exp.arrow_map_svg(model, config_note=_config_note(cfg))
    elif args.kind == "heatmap":
        if not args.grid:
            raise ConfigError("--grid is required for kind=heatmap")
        if not os.path.exists(args.grid):
            raise FileNotFoundError(f"heatmap grid not found: {args.grid}")
        rows = _read_heatmap_rows(args.grid)
        bounds = cfg.region
        svg = exp.heatmap_svg(rows, bounds=bounds, config_note=_config_note(cfg))
    else:
        raise ConfigError(f"unknown export kind {args.kind!r} (use arrows or heatmap)")
    exp.save_svg(args.out, svg)
    print(f"wrote {args.out}")
    return 0


def _read_heatmap_rows(path: str) -> list[dict]:
    import csv as _csv

    rows = []
    with open(path, "r", encoding="utf-8") as fh:
        reader = _csv.reader(fh)
        header_seen = False
        for row in reader:
            if not row or row[0].lstrip().startswith("#"):
                continue
            if not header_seen:
                if tuple(c.strip() for c in row) != HEATMAP_CSV_HEADER:
                    raise ingest.ParseError(f"unexpected heatmap header in {path}: {row}")
                header_seen = True
                continue
            rows.append({
                "cell_ix": int(row[0]), "cell_iy": int(row[1]),
                "xmin": float(row[2]), "ymin": float(row[3]),
                "xmax": float(row[4]), "ymax": float(row[5]),
                "mean_fde": float(row[6]), "count": int(row[7]),
            })
    return rows


# -- argument parsing -------------------------------------------------------------


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON config file")
    p.add_argument("--dt", type=float)
    p.add_argument("--o-s", dest="o_s", type=float, help="observation horizon, seconds")
    p.add_argument("--t-s", dest="t_s", type=float, help="prediction horizon, seconds")
    p.add_argument("--clusters", type=int, help="number of spatial clusters K")
    p.add_argument("--speed-bin-width", dest="speed_bin_width", type=float)
    p.add_argument("--speed-max", dest="speed_max", type=float)
    p.add_argument("--direction-bins", dest="direction_bins", type=int)
    p.add_argument("--sigma-omega", dest="sigma_omega", type=float, help="radians")
    p.add_argument("--sigma-nu", dest="sigma_nu", type=float, help="m/s")
    p.add_argument("--r-max", dest="r_max", type=float, help="coverage radius, meters")
    p.add_argument("--n-samples", dest="n_samples", type=int)
    p.add_argument("--top-k", dest="top_k", type=int)
    p.add_argument("--runs", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--stride", type=int, help="task window stride, steps")
    p.add_argument("--region", type=float, nargs=4, metavar=("XMIN", "XMAX", "YMIN", "YMAX"))
    p.add_argument("--region-mode", dest="region_mode", choices=("clip", "contain"))
    p.add_argument("--cell-size", dest="cell_size", type=float)
    p.add_argument("--threads", type=int)
    p.add_argument("--kl-epsilon", dest="kl_epsilon", type=float)
    p.add_argument("--shuffle-seed", dest="shuffle_seed", type=int,
                   help="diagnostic: shuffle observation order before training")
    p.add_argument("--max-tasks", dest="max_tasks", type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lace",
        description="Learn laminar flow maps from trajectories and predict long-term motion.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic trajectory corpus")
    p.add_argument("--scenario", choices=synth.SCENARIO_NAMES, default="straight-east")
    p.add_argument("--scenario-file", help="JSON scenario fixture (overrides --scenario)")
    p.add_argument("--agents", type=int)
    p.add_argument("--out", required=True)
    _add_config_flags(p)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="learn a flow map from a trajectory file")
    p.add_argument("--data", required=True)
    p.add_argument("--format", choices=("normalized", "atc"), default="normalized")
    p.add_argument("--out", required=True)
    p.add_argument("--report", help="training report path (default: <out>.report.json)")
    _add_config_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="roll out predictions for evaluation tasks")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--format", choices=("normalized", "atc"), default="normalized")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--baseline", choices=("lace", "cvm"), default="lace")
    _add_config_flags(p)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("eval", help="score predictions against ground truth")
    p.add_argument("--data", required=True)
    p.add_argument("--format", choices=("normalized", "atc"), default="normalized")
    p.add_argument("--pred", required=True, help="predictions CSV or directory of runs")
    p.add_argument("--out-dir", required=True)
    _add_config_flags(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("export", help="render a model or heatmap to SVG")
    p.add_argument("--kind", choices=("arrows", "heatmap"), required=True)
    p.add_argument("--model")
    p.add_argument("--grid", help="heatmap CSV written by eval")
    p.add_argument("--out", required=True)
    _add_config_flags(p)
    p.set_defaults(func=cmd_export)

    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    logging.basicConfig(level=os.environ.get("LACE_LOGLEVEL", "WARNING"))
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, ingest.SchemaError, ModelFormatError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
