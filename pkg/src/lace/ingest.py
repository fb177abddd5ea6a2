"""Raw trajectory log parsing, resampling and prediction-task windowing.

The pipeline is: parse raw rows into seconds/meters records, snap each
person's samples onto a global uniform time grid (nearest sample within
half a step), recompute headings and speeds from consecutive resampled
positions, and cut observation/ground-truth windows.

Velocity convention: every resampled state carries the outgoing motion
(position i to position i+1); the final state duplicates the previous
velocity so all states are complete. Training consumes the outgoing
observations (see lace.training.flatten_observations).
"""

from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import dataclass, field
from typing import IO, Iterable, Optional, Sequence, Union

import numpy as np

from .core import AgentState, PredictionTask, Trajectory, wrap_angle
from .model import write_atomic_text

log = logging.getLogger(__name__)


class ParseError(ValueError):
    """A malformed input row in strict mode, or an unusable schema."""


class SchemaError(ParseError):
    """The configured column mapping does not match the input."""


@dataclass(frozen=True)
class RawRecord:
    """One input row already converted to seconds and meters."""

    time: float
    person_id: str
    x: float
    y: float
    speed: Optional[float] = None
    motion_angle: Optional[float] = None


@dataclass(frozen=True)
class ColumnSchema:
    """Maps raw columns to record fields and their unit scales.

    Columns are addressed by header name when ``has_header`` is true,
    else by zero-based index. ``time_scale`` and ``coord_scale`` convert
    the raw units into seconds and meters.
    """

    time: Union[str, int]
    person_id: Union[str, int]
    x: Union[str, int]
    y: Union[str, int]
    speed: Optional[Union[str, int]] = None
    motion_angle: Optional[Union[str, int]] = None
    has_header: bool = True
    time_scale: float = 1.0
    coord_scale: float = 1.0
    speed_scale: float = 1.0


# Native ATC shopping-mall format: headerless rows of
# time[ms], person_id, x[mm], y[mm], z[mm], velocity[mm/s],
# motion_angle[rad], facing_angle[rad]. The z and facing-angle columns
# are ignored; velocity and motion angle are kept for diagnostics only.
ATC_SCHEMA = ColumnSchema(
    time=0,
    person_id=1,
    x=2,
    y=3,
    speed=5,
    motion_angle=6,
    has_header=False,
    time_scale=1e-3,
    coord_scale=1e-3,
    speed_scale=1e-3,
)

NORMALIZED_SCHEMA = ColumnSchema(time="t", person_id="person_id", x="x", y="y")

TRAJECTORY_CSV_HEADER = ("person_id", "t", "x", "y", "omega", "nu")


@dataclass
class ParseReport:
    records: list[RawRecord]
    skipped: list[tuple[int, str]] = field(default_factory=list)


def parse_csv(
    stream: Union[IO[str], Iterable[str], str],
    schema: ColumnSchema,
    strict: bool = False,
) -> ParseReport:
    """Parse comma-separated rows into RawRecords.

    ``stream`` is a text file object, an iterable of lines, or a string
    of CSV content. Lines starting with '#' and blank lines are skipped.
    Malformed rows abort with their line number in strict mode and are
    otherwise collected into the report's ``skipped`` list.
    """
    if isinstance(stream, str):
        stream = io.StringIO(stream)
    reader = csv.reader(stream)
    records: list[RawRecord] = []
    skipped: list[tuple[int, str]] = []
    columns: Optional[dict] = None
    line_no = 0
    for row in reader:
        line_no += 1
        if not row or (row[0].lstrip().startswith("#")):
            continue
        if columns is None:
            if schema.has_header:
                columns = _resolve_header(row, schema)
                continue
            columns = _resolve_indices(row, schema)
        try:
            records.append(_parse_row(row, columns, schema, line_no))
        except ParseError as exc:
            if strict:
                raise
            skipped.append((line_no, str(exc)))
    if columns is None and schema.has_header and line_no > 0:
        raise SchemaError("input has no header row")
    if skipped:
        log.warning("skipped %d malformed rows (first: line %d: %s)",
                    len(skipped), skipped[0][0], skipped[0][1])
    return ParseReport(records=records, skipped=skipped)


def _resolve_header(header: list[str], schema: ColumnSchema) -> dict:
    names = [h.strip() for h in header]
    columns = {}
    for fieldname in ("time", "person_id", "x", "y", "speed", "motion_angle"):
        key = getattr(schema, fieldname)
        if key is None:
            columns[fieldname] = None
        elif isinstance(key, int):
            columns[fieldname] = key
        else:
            if key not in names:
                raise SchemaError(f"required column '{key}' not found in header {names}")
            columns[fieldname] = names.index(key)
    return columns


def _resolve_indices(first_row: list[str], schema: ColumnSchema) -> dict:
    columns = {}
    for fieldname in ("time", "person_id", "x", "y", "speed", "motion_angle"):
        key = getattr(schema, fieldname)
        if key is None:
            columns[fieldname] = None
            continue
        if not isinstance(key, int):
            raise SchemaError(f"column '{key}' addressed by name but input has no header")
        if key >= len(first_row):
            raise SchemaError(
                f"column index {key} for '{fieldname}' out of range, row has {len(first_row)} fields"
            )
        columns[fieldname] = key
    return columns


def _parse_row(row: list[str], columns: dict, schema: ColumnSchema, line_no: int) -> RawRecord:
    def number(fieldname: str) -> Optional[float]:
        idx = columns[fieldname]
        if idx is None:
            return None
        if idx >= len(row):
            raise ParseError(f"line {line_no}: missing field '{fieldname}' (column {idx})")
        text = row[idx].strip()
        try:
            value = float(text)
        except ValueError:
            raise ParseError(f"line {line_no}: non-numeric {fieldname} value {text!r}") from None
        if not math.isfinite(value):
            raise ParseError(f"line {line_no}: non-finite {fieldname} value {text!r}")
        return value

    time = number("time") * schema.time_scale
    x = number("x") * schema.coord_scale
    y = number("y") * schema.coord_scale
    speed = number("speed")
    if speed is not None:
        speed *= schema.speed_scale
    angle = number("motion_angle")
    if angle is not None:
        angle = wrap_angle(angle)
    pid = row[columns["person_id"]].strip()
    if not pid:
        raise ParseError(f"line {line_no}: empty person_id")
    return RawRecord(time=time, person_id=pid, x=x, y=y, speed=speed, motion_angle=angle)


# -- resampling --------------------------------------------------------------


def resample(records: Sequence[RawRecord], dt: float) -> list[Trajectory]:
    """Snap records onto the global uniform grid t = k * dt, per person.

    Each record is a candidate for its nearest grid step; per step the
    closest sample within dt/2 wins. A missing grid step, or consecutive
    selections whose raw times differ by more than dt (an occlusion
    gap), splits the person's track. Headings and speeds are recomputed
    from consecutive resampled positions; segments shorter than two
    states are dropped and counted.
    """
    if dt <= 0:
        raise ValueError("dt must be > 0")
    per_person: dict[str, list[RawRecord]] = {}
    for rec in records:
        per_person.setdefault(rec.person_id, []).append(rec)

    trajectories: list[Trajectory] = []
    dropped = 0
    for pid in sorted(per_person):
        recs = sorted(per_person[pid], key=lambda r: r.time)
        selected = _select_grid_samples(recs, dt)
        segments = _split_segments(selected, dt)
        pieces = 0
        for seg in segments:
            traj = _segment_to_trajectory(pid if pieces == 0 else f"{pid}#{pieces}", seg, dt)
            if traj is None:
                dropped += 1
                continue
            trajectories.append(traj)
            pieces += 1
    if dropped:
        log.info("dropped %d sub-2-state segments during resampling", dropped)
    trajectories.sort(key=lambda tr: (tr.person_id, tr.start_t))
    return trajectories


def _select_grid_samples(recs: list[RawRecord], dt: float) -> list[tuple[int, RawRecord]]:
    best: dict[int, tuple[float, RawRecord]] = {}
    order: list[int] = []
    for rec in recs:
        k = int(round(rec.time / dt))
        err = abs(rec.time - k * dt)
        if err > dt / 2 + 1e-9:
            continue
        if k not in best:
            best[k] = (err, rec)
            order.append(k)
        elif err < best[k][0]:
            best[k] = (err, rec)
    return [(k, best[k][1]) for k in sorted(order)]


def _split_segments(
    selected: list[tuple[int, RawRecord]], dt: float
) -> list[list[tuple[int, RawRecord]]]:
    segments: list[list[tuple[int, RawRecord]]] = []
    current: list[tuple[int, RawRecord]] = []
    for k, rec in selected:
        if current:
            prev_k, prev_rec = current[-1]
            if k != prev_k + 1 or (rec.time - prev_rec.time) > dt + 1e-9:
                segments.append(current)
                current = []
        current.append((k, rec))
    if current:
        segments.append(current)
    return segments


def _segment_to_trajectory(
    pid: str, segment: list[tuple[int, RawRecord]], dt: float
) -> Optional[Trajectory]:
    if len(segment) < 2:
        return None
    states = []
    for (k, rec), (_, nxt) in zip(segment, segment[1:]):
        dx = nxt.x - rec.x
        dy = nxt.y - rec.y
        states.append(AgentState(
            x=rec.x, y=rec.y,
            omega=wrap_angle(math.atan2(dy, dx)),
            nu=math.hypot(dx, dy) / dt,
            t=k,
        ))
    last_k, last = segment[-1]
    states.append(AgentState(
        x=last.x, y=last.y, omega=states[-1].omega, nu=states[-1].nu, t=last_k,
    ))
    return Trajectory(person_id=pid, states=tuple(states), dt=dt)


# -- task windowing -----------------------------------------------------------


def make_tasks(
    trajectories: Sequence[Trajectory],
    o_s: float,
    t_s: float,
    stride: Optional[int] = None,
) -> list[PredictionTask]:
    """Cut sliding observation/ground-truth windows from each trajectory.

    Every task has a full O_p-state observation; the ground truth may be
    shorter than T_p when the track ends (its length is the task's
    effective horizon). Windows with no ground-truth step are skipped.
    Default stride is one full window, giving non-overlapping tasks.
    """
    tasks: list[PredictionTask] = []
    for traj in trajectories:
        o_p = _steps(o_s, traj.dt, "O_s")
        t_p = _steps(t_s, traj.dt, "T_s")
        step = stride if stride is not None else o_p + t_p
        if step < 1:
            raise ValueError("stride must be >= 1")
        start = 0
        while start + o_p < len(traj):
            observed = traj.window(start, o_p)
            gt_len = min(t_p, len(traj) - (start + o_p))
            ground_truth = traj.window(start + o_p, gt_len)
            tasks.append(PredictionTask(observed=observed, ground_truth=ground_truth, o_s=o_s, t_s=t_s))
            start += step
    return tasks


def _steps(horizon_s: float, dt: float, name: str) -> int:
    steps = horizon_s / dt
    rounded = round(steps)
    if rounded < 1 or abs(steps - rounded) > 1e-9:
        raise ValueError(f"{name}={horizon_s} is not a positive multiple of dt={dt}")
    return int(rounded)


@dataclass(frozen=True)
class DatasetSplit:
    """Training trajectories plus the evaluation tasks cut from held-out data."""

    training: tuple[Trajectory, ...]
    evaluation: tuple[PredictionTask, ...]


# -- region filtering ---------------------------------------------------------


def filter_region(
    trajectories: Sequence[Trajectory],
    bounds: tuple[float, float, float, float],
    mode: str = "clip",
) -> list[Trajectory]:
    """Restrict trajectories to a rectangle (xmin, xmax, ymin, ymax).

    ``clip`` keeps each maximal in-bounds run of consecutive states as
    its own trajectory (runs shorter than two states are dropped);
    ``contain`` keeps only trajectories lying wholly inside.
    """
    xmin, xmax, ymin, ymax = bounds
    if xmin >= xmax or ymin >= ymax:
        raise ValueError(f"degenerate region bounds {bounds}")
    if mode not in ("clip", "contain"):
        raise ValueError(f"region mode must be 'clip' or 'contain', got {mode!r}")

    def inside(st: AgentState) -> bool:
        return xmin <= st.x <= xmax and ymin <= st.y <= ymax

    out: list[Trajectory] = []
    for traj in trajectories:
        if mode == "contain":
            if all(inside(st) for st in traj.states):
                out.append(traj)
            continue
        run: list[AgentState] = []
        pieces = 0
        for st in traj.states:
            if inside(st):
                run.append(st)
                continue
            pieces += _flush_run(out, traj, run, pieces)
            run = []
        _flush_run(out, traj, run, pieces)
    return out


def _flush_run(out: list[Trajectory], traj: Trajectory, run: list[AgentState], pieces: int) -> int:
    if len(run) < 2:
        return 0
    pid = traj.person_id if pieces == 0 else f"{traj.person_id}@{pieces}"
    out.append(Trajectory(person_id=pid, states=tuple(run), dt=traj.dt))
    return 1


# -- normalized trajectory store ----------------------------------------------


def write_trajectory_csv(path: str, trajectories: Sequence[Trajectory], header_comment: str = "") -> None:
    """Write the normalized store: person_id, t, x, y, omega, nu."""
    lines = []
    if header_comment:
        lines.append(f"# {header_comment}")
    lines.append(",".join(TRAJECTORY_CSV_HEADER))
    for traj in trajectories:
        for st in traj.states:
            lines.append(f"{traj.person_id},{st.t},{st.x!r},{st.y!r},{st.omega!r},{st.nu!r}")
    write_atomic_text(path, "\n".join(lines) + "\n")


def read_trajectory_csv(path: str, dt: float) -> list[Trajectory]:
    """Read the normalized store back into trajectories.

    Rows are grouped by person_id in file order; a jump in the step
    index starts a new trajectory for that person (should not happen for
    files written by this package).
    """
    groups: dict[str, list[AgentState]] = {}
    order: list[str] = []
    with open(path, "r", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header_seen = False
        for row in reader:
            if not row or row[0].lstrip().startswith("#"):
                continue
            if not header_seen:
                if [c.strip() for c in row] != list(TRAJECTORY_CSV_HEADER):
                    raise ParseError(f"unexpected trajectory CSV header {row}")
                header_seen = True
                continue
            pid, t, x, y, omega, nu = row
            if pid not in groups:
                groups[pid] = []
                order.append(pid)
            groups[pid].append(AgentState(x=float(x), y=float(y), omega=float(omega), nu=float(nu), t=int(t)))
    trajectories: list[Trajectory] = []
    for pid in order:
        states = groups[pid]
        start = 0
        pieces = 0
        for i in range(1, len(states) + 1):
            if i == len(states) or states[i].t != states[i - 1].t + 1:
                chunk = states[start:i]
                if len(chunk) >= 2:
                    name = pid if pieces == 0 else f"{pid}&{pieces}"
                    trajectories.append(Trajectory(person_id=name, states=tuple(chunk), dt=dt))
                    pieces += 1
                else:
                    log.warning("dropping single-state group for person %s", pid)
                start = i
    return trajectories


def records_from_trajectories(trajectories: Sequence[Trajectory]) -> list[RawRecord]:
    """View trajectories as raw records (for re-resampling round trips)."""
    recs = []
    for traj in trajectories:
        for st in traj.states:
            recs.append(RawRecord(time=st.t * traj.dt, person_id=traj.person_id, x=st.x, y=st.y))
    return recs
