import math

import numpy as np
import pytest

from lace.core import AgentState, Trajectory
from lace.ingest import (
    ATC_SCHEMA,
    ColumnSchema,
    ParseError,
    RawRecord,
    SchemaError,
    filter_region,
    make_tasks,
    parse_csv,
    read_trajectory_csv,
    records_from_trajectories,
    resample,
    write_trajectory_csv,
)


class TestParseCsv:
    def test_atc_native_units(self):
        row = "1351147000,9332,-12500,3400,1200,1345,1.57,1.60\n"
        report = parse_csv(row, ATC_SCHEMA)
        assert len(report.records) == 1
        rec = report.records[0]
        assert rec.time == pytest.approx(1351147.0)
        assert rec.x == pytest.approx(-12.5)
        assert rec.y == pytest.approx(3.4)
        assert rec.speed == pytest.approx(1.345)
        assert rec.motion_angle == pytest.approx(1.57)
        assert rec.person_id == "9332"

    def test_empty_stream(self):
        assert parse_csv("", ATC_SCHEMA).records == []

    def test_strict_mode_aborts_with_line_number(self):
        content = "100,1,0,0,0,0,0,0\nbroken,1,xx,0,0,0,0,0\n"
        with pytest.raises(ParseError, match="line 2"):
            parse_csv(content, ATC_SCHEMA, strict=True)

    def test_lenient_mode_skips_and_reports(self):
        content = "100,1,0,0,0,0,0,0\nbroken,1,xx,0,0,0,0,0\n200,1,10,0,0,0,0,0\n"
        report = parse_csv(content, ATC_SCHEMA)
        assert len(report.records) == 2
        assert report.skipped[0][0] == 2

    def test_missing_header_column_is_schema_error(self):
        schema = ColumnSchema(time="time", person_id="pid", x="x", y="y")
        with pytest.raises(SchemaError, match="pid"):
            parse_csv("time,id,x,y\n1,9,0,0\n", schema)

    def test_header_schema(self):
        schema = ColumnSchema(time="time", person_id="id", x="x", y="y")
        report = parse_csv("time,id,x,y\n1.5,9,2.0,3.0\n", schema)
        assert report.records == [RawRecord(time=1.5, person_id="9", x=2.0, y=3.0)]

    def test_comment_lines_skipped(self):
        report = parse_csv("# synthetic\n100,1,0,0,0,0,0,0\n", ATC_SCHEMA)
        assert len(report.records) == 1


def straight_records(pid="1", rate_hz=10.0, duration_s=10.0, speed=1.0):
    """Walker going east at the given speed, sampled at rate_hz."""
    out = []
    n = int(duration_s * rate_hz)
    for i in range(n + 1):
        t = i / rate_hz
        out.append(RawRecord(time=t, person_id=pid, x=speed * t, y=0.0))
    return out


class TestResample:
    def test_two_point_east(self):
        recs = [
            RawRecord(time=0.0, person_id="7", x=0.0, y=0.0),
            RawRecord(time=1.0, person_id="7", x=1.0, y=0.0),
        ]
        trajs = resample(recs, dt=1.0)
        assert len(trajs) == 1
        traj = trajs[0]
        assert len(traj) == 2
        assert traj.states[0].nu == pytest.approx(1.0)
        assert traj.states[0].omega == 0.0

    def test_single_sample_dropped(self):
        assert resample([RawRecord(time=0.0, person_id="7", x=0.0, y=0.0)], dt=1.0) == []

    def test_ten_hz_straight_walker_speed(self):
        # oracle: the walker moves exactly 1 m per resampled second
        trajs = resample(straight_records(), dt=1.0)
        assert len(trajs) == 1
        for st in trajs[0].states:
            assert abs(st.nu - 1.0) < 1e-9
            assert abs(st.omega - 0.0) < 1e-9

    def test_resample_is_identity_on_own_output(self):
        trajs = resample(straight_records(rate_hz=7.3), dt=1.0)
        again = resample(records_from_trajectories(trajs), dt=1.0)
        assert [t.person_id for t in again] == [t.person_id for t in trajs]
        for a, b in zip(again, trajs):
            assert [ (s.t, s.x, s.y) for s in a.states ] == [ (s.t, s.x, s.y) for s in b.states ]

    def test_gap_splits_track(self):
        recs = [RawRecord(time=float(t), person_id="1", x=float(t), y=0.0) for t in (0, 1, 2)]
        recs += [RawRecord(time=float(t), person_id="1", x=float(t), y=0.0) for t in (10, 11, 12)]
        trajs = resample(recs, dt=1.0)
        assert len(trajs) == 2
        assert trajs[0].person_id == "1"
        assert trajs[1].person_id == "1#1"
        assert len(trajs[0]) == 3
        assert len(trajs[1]) == 3

    def test_total_states_bounded_by_records(self):
        rng = np.random.default_rng(0)
        recs = []
        for pid in range(5):
            t = 0.0
            for _ in range(50):
                t += rng.uniform(0.05, 2.5)
                recs.append(RawRecord(time=t, person_id=str(pid), x=rng.normal(), y=rng.normal()))
        trajs = resample(recs, dt=1.0)
        assert sum(len(t) for t in trajs) <= len(recs)

    def test_off_grid_samples_snap_within_half_step(self):
        recs = [
            RawRecord(time=0.04, person_id="1", x=0.0, y=0.0),
            RawRecord(time=0.96, person_id="1", x=1.0, y=0.0),
            RawRecord(time=1.90, person_id="1", x=2.0, y=0.0),
        ]
        trajs = resample(recs, dt=1.0)
        assert len(trajs) == 1
        assert [s.t for s in trajs[0].states] == [0, 1, 2]

    def test_raw_gap_above_dt_splits_even_when_grid_is_covered(self):
        # 0.96 -> 2.02 is a 1.06 s hole: the selected samples sit on
        # adjacent grid steps but the occlusion rule still splits there
        recs = [
            RawRecord(time=0.04, person_id="1", x=0.0, y=0.0),
            RawRecord(time=0.96, person_id="1", x=1.0, y=0.0),
            RawRecord(time=2.02, person_id="1", x=2.0, y=0.0),
        ]
        trajs = resample(recs, dt=1.0)
        assert len(trajs) == 1
        assert [s.t for s in trajs[0].states] == [0, 1]

    def test_rejects_bad_dt(self):
        with pytest.raises(ValueError):
            resample([], dt=0.0)


def make_traj(n, person="p", dt=1.0):
    states = [AgentState(x=float(i), y=0.0, omega=0.0, nu=1.0, t=i) for i in range(n)]
    return Trajectory(person_id=person, states=tuple(states), dt=dt)


class TestMakeTasks:
    def test_23_steps_full_ground_truth(self):
        tasks = make_tasks([make_traj(23)], o_s=3.0, t_s=20.0, stride=23)
        assert len(tasks) == 1
        assert tasks[0].o_p == 3
        assert tasks[0].effective_horizon == 20

    def test_10_steps_effective_horizon(self):
        tasks = make_tasks([make_traj(10)], o_s=3.0, t_s=20.0, stride=23)
        assert len(tasks) == 1
        assert tasks[0].effective_horizon == 7

    def test_3_steps_no_tasks(self):
        assert make_tasks([make_traj(3)], o_s=3.0, t_s=20.0) == []

    def test_default_stride_non_overlapping(self):
        tasks = make_tasks([make_traj(46)], o_s=3.0, t_s=20.0)
        assert len(tasks) == 2
        assert tasks[0].observed.start_t == 0
        assert tasks[1].observed.start_t == 23

    def test_observed_always_full_length(self):
        for n in range(4, 60, 7):
            for task in make_tasks([make_traj(n)], o_s=3.0, t_s=20.0, stride=5):
                assert len(task.observed) == 3
                assert 1 <= task.effective_horizon <= 20

    def test_rejects_non_multiple_horizon(self):
        with pytest.raises(ValueError):
            make_tasks([make_traj(30)], o_s=2.5, t_s=20.0)


class TestFilterRegion:
    def test_contain_keeps_only_inside(self):
        inside = make_traj(5, person="in")
        outside = Trajectory(
            "out",
            tuple(AgentState(x=100.0 + i, y=0.0, omega=0.0, nu=1.0, t=i) for i in range(5)),
            1.0,
        )
        kept = filter_region([inside, outside], (-1.0, 10.0, -1.0, 1.0), mode="contain")
        assert [t.person_id for t in kept] == ["in"]

    def test_clip_splits_runs(self):
        # x = 0..9; region keeps x in [0, 2] and [6, 9]
        traj = make_traj(10)
        clipped = filter_region([traj], (-0.5, 2.5, -1.0, 1.0), mode="clip")
        assert len(clipped) == 1
        assert [s.x for s in clipped[0].states] == [0.0, 1.0, 2.0]
        both = filter_region(
            [traj], (-0.5, 9.5, -1.0, 1.0), mode="clip"
        )
        assert len(both) == 1 and len(both[0]) == 10

    def test_clip_preserves_step_indices(self):
        traj = make_traj(10)
        clipped = filter_region([traj], (4.5, 7.5, -1.0, 1.0), mode="clip")
        assert [s.t for s in clipped[0].states] == [5, 6, 7]

    def test_rejects_bad_mode(self):
        with pytest.raises(ValueError):
            filter_region([], (0, 1, 0, 1), mode="inside")


class TestTrajectoryCsv:
    def test_roundtrip_exact(self, tmp_path):
        rng = np.random.default_rng(11)
        trajs = []
        for pid in range(3):
            states = []
            x, y = rng.normal(), rng.normal()
            for i in range(6):
                states.append(AgentState(x=x, y=y, omega=rng.uniform(0, 6.28), nu=rng.uniform(0, 2), t=40 + i))
                x += rng.normal()
                y += rng.normal()
            trajs.append(Trajectory(person_id=f"p{pid}", states=tuple(states), dt=0.5))
        path = tmp_path / "store.csv"
        write_trajectory_csv(str(path), trajs, header_comment="fixture")
        back = read_trajectory_csv(str(path), dt=0.5)
        assert len(back) == len(trajs)
        for a, b in zip(back, trajs):
            assert a.person_id == b.person_id
            assert a.states == b.states

    def test_rejects_wrong_header(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("a,b,c\n1,2,3\n")
        with pytest.raises(ParseError):
            read_trajectory_csv(str(path), dt=1.0)
