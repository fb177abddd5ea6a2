import math

import numpy as np
import pytest

from lace.core import TWO_PI
from lace.synth import (
    SCENARIO_NAMES,
    FlowScenario,
    Lane,
    generate,
    named_scenario,
)


def zero_jitter_straight(agents=20, seed=0):
    lane = Lane(
        waypoints=((0.0, 10.0), (20.0, 10.0)),
        entry=((0.0, 6.0), (0.0, 14.0)),
        exit=((20.0, 6.0), (20.0, 14.0)),
        speed=1.0,
    )
    return FlowScenario(
        bounds=(0.0, 20.0, 0.0, 20.0), lanes=(lane,),
        turbulence_fraction=0.0, direction_jitter=0.0, speed_jitter=0.0,
        agents=agents, seed=seed,
    )


class TestGenerate:
    def test_zero_jitter_straight_lane_collinear(self):
        trajs = generate(zero_jitter_straight())
        assert len(trajs) == 20
        for traj in trajs:
            ys = {st.y for st in traj.states}
            assert len(ys) == 1  # no lateral drift at all
            xs = [st.x for st in traj.states]
            assert all(b - a == pytest.approx(1.0, abs=1e-12) for a, b in zip(xs, xs[1:]))
            for st in traj.states:
                assert st.omega == 0.0

    def test_full_turbulence_direction_uniform(self):
        scenario = FlowScenario(
            bounds=(0.0, 50.0, 0.0, 50.0), lanes=(),
            turbulence_fraction=1.0, direction_jitter=0.0, speed_jitter=0.0,
            agents=2000, seed=3, walk_steps=50,
        )
        trajs = generate(scenario)
        omegas = np.array([st.omega for tr in trajs for st in tr.states[:-1]])
        assert len(omegas) >= 100_000
        bins = 36
        counts = np.bincount((omegas / (TWO_PI / bins)).astype(int) % bins, minlength=bins)
        n = len(omegas)
        p = 1.0 / bins
        sigma = math.sqrt(n * p * (1 - p))
        assert np.all(np.abs(counts - n * p) < 3.5 * sigma)

    def test_speed_range_for_turbulent_agents(self):
        scenario = FlowScenario(
            bounds=(0.0, 20.0, 0.0, 20.0), lanes=(),
            turbulence_fraction=1.0, direction_jitter=0.0, speed_jitter=0.0,
            agents=50, seed=1,
        )
        for traj in generate(scenario):
            for st in traj.states:
                assert 0.3 <= st.nu <= 1.8

    def test_zero_agents_empty_corpus(self):
        scenario = zero_jitter_straight(agents=0)
        assert generate(scenario) == []

    def test_same_seed_bit_identical(self):
        s = named_scenario("mixed-50", agents=60, seed=9)
        a = generate(s)
        b = generate(s)
        assert a == b

    def test_different_seed_differs(self):
        a = generate(named_scenario("mixed-50", agents=60, seed=9))
        b = generate(named_scenario("mixed-50", agents=60, seed=10))
        assert a != b

    def test_positions_stay_in_bounds_for_turbulent(self):
        scenario = FlowScenario(
            bounds=(0.0, 5.0, 0.0, 5.0), lanes=(),
            turbulence_fraction=1.0, direction_jitter=0.0, speed_jitter=0.0,
            agents=30, seed=2, walk_steps=40,
        )
        for traj in generate(scenario):
            for st in traj.states:
                assert 0.0 <= st.x <= 5.0
                assert 0.0 <= st.y <= 5.0

    def test_lane_direction_mean_matches_segment(self):
        scenario = named_scenario("straight-east", agents=150, seed=4)
        trajs = generate(scenario)
        omegas = np.array([st.omega for tr in trajs for st in tr.states[:-1]])
        # average unit vector should point east within 3 sigma / sqrt(n)
        mean_angle = math.atan2(np.sin(omegas).mean(), np.cos(omegas).mean())
        assert abs(mean_angle) < 3 * scenario.direction_jitter / math.sqrt(len(omegas)) + 1e-3

    def test_agent_split_counts(self):
        scenario = named_scenario("mixed-50", agents=100, seed=5)
        trajs = generate(scenario)
        lane_like = sum(1 for t in trajs if t.person_id < "a00050")
        assert lane_like == 50

    def test_invalid_scenario_rejected(self):
        with pytest.raises(ValueError):
            FlowScenario(
                bounds=(0, 1, 0, 1), lanes=(), turbulence_fraction=0.5,
                direction_jitter=0.0, speed_jitter=0.0, agents=10, seed=0,
            )
        with pytest.raises(ValueError):
            FlowScenario(
                bounds=(5, 1, 0, 1), lanes=(), turbulence_fraction=1.0,
                direction_jitter=0.0, speed_jitter=0.0, agents=10, seed=0,
            )


class TestScenarios:
    def test_all_names_generate(self):
        for name in SCENARIO_NAMES:
            trajs = generate(named_scenario(name, agents=15, seed=1))
            assert trajs, name
            for traj in trajs:
                assert len(traj) >= 2

    def test_curved_arc_quarter_turn(self):
        scenario = named_scenario("curved-arc", agents=1, seed=1)
        lane = scenario.lanes[0]
        # tangent rotates from east at the start to north at the end
        assert lane.tangent_at(0.0) == pytest.approx(0.0, abs=1e-9)
        assert lane.tangent_at(lane.length() - 1e-6) == pytest.approx(math.pi / 2, abs=1e-2)

    def test_unknown_name_rejected(self):
        with pytest.raises(ValueError, match="unknown scenario"):
            named_scenario("spiral", agents=5, seed=0)

    def test_json_roundtrip(self, tmp_path):
        scenario = named_scenario("curved-arc", agents=7, seed=3)
        path = tmp_path / "scenario.json"
        scenario.save(str(path))
        back = FlowScenario.load(str(path))
        assert back == scenario
        assert generate(back) == generate(scenario)
