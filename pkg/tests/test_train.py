import math

import numpy as np
import pytest

from lace.core import AgentState, Trajectory
from lace.histograms import BinGeometry, kl_divergence
from lace.model import TrainParams
from lace.synth import generate, named_scenario
from lace.training import extract_laminar, flatten_observations, kmeans_xy, train

from _oracles import laminar_oracle, lloyd_oracle


class TestKMeans:
    def test_two_separated_blobs(self):
        rng = np.random.default_rng(1)
        a = rng.normal(0.0, 0.1, size=(50, 2))
        b = rng.normal(0.0, 0.1, size=(50, 2)) + np.array([100.0, 0.0])
        pts = np.vstack([a, b])
        res = kmeans_xy(pts, k=2, seed=0)
        cents = res.centroids[np.argsort(res.centroids[:, 0])]
        assert np.allclose(cents[0], a.mean(axis=0), atol=1e-9)
        assert np.allclose(cents[1], b.mean(axis=0), atol=1e-9)

    def test_k1_is_global_mean(self):
        rng = np.random.default_rng(2)
        pts = rng.normal(size=(37, 2))
        res = kmeans_xy(pts, k=1, seed=9)
        assert np.allclose(res.centroids[0], pts.mean(axis=0), atol=1e-12)

    def test_grid_matches_lloyd_oracle_bit_for_bit(self):
        # 100 uniform points on a 10x10 grid, K = 4
        xs, ys = np.meshgrid(np.arange(10.0), np.arange(10.0))
        pts = np.column_stack([xs.ravel(), ys.ravel()])
        res = kmeans_xy(pts, k=4, seed=42)
        _, labels, sse = lloyd_oracle(pts, k=4, seed=42)
        assert res.sse == sse
        assert np.array_equal(res.labels, labels)

    @pytest.mark.parametrize("seed", [0, 1, 7, 123])
    def test_random_cloud_matches_oracle(self, seed):
        rng = np.random.default_rng(seed + 1000)
        pts = rng.uniform(0, 30, size=(400, 2))
        res = kmeans_xy(pts, k=17, seed=seed)
        cents, labels, sse = lloyd_oracle(pts, k=17, seed=seed)
        assert res.sse == sse
        assert np.array_equal(res.labels, labels)
        assert np.array_equal(res.centroids, cents)

    def test_k_reduced_to_distinct_positions(self):
        pts = np.array([[0.0, 0.0]] * 5 + [[1.0, 1.0]] * 5)
        res = kmeans_xy(pts, k=10, seed=0)
        assert len(res.centroids) == 2

    def test_no_empty_clusters(self):
        rng = np.random.default_rng(3)
        pts = rng.normal(size=(60, 2))
        res = kmeans_xy(pts, k=20, seed=5)
        assert np.bincount(res.labels, minlength=20).min() >= 1

    def test_rejects_empty_input(self):
        with pytest.raises(ValueError):
            kmeans_xy(np.empty((0, 2)), k=3, seed=0)


SCRIPTED_OBSERVATIONS = [
    (0.50, 0.20), (0.55, 0.30), (3.30, 0.80), (0.48, 0.25), (0.52, 0.22),
    (5.90, 0.70), (0.51, 0.28), (0.49, 0.21), (0.53, 0.26), (2.10, 0.95),
    (0.47, 0.24), (0.54, 0.27), (0.50, 0.23), (4.70, 0.10), (0.52, 0.25),
    (0.48, 0.29), (1.90, 0.55), (0.51, 0.24), (0.49, 0.26), (0.50, 0.22),
]


def toy_geometry():
    return BinGeometry(speed_bin_width=0.5, speed_max=1.0, n_direction_bins=3)


class TestExtractLaminar:
    def test_matches_literal_transcription(self):
        geo = toy_geometry()
        assert geo.n_bins == 6
        oms = np.array([o for o, _ in SCRIPTED_OBSERVATIONS])
        nus = np.array([v for _, v in SCRIPTED_OBSERVATIONS])
        got = extract_laminar(oms, nus, geo, sigma_omega=0.6, sigma_nu=0.3)
        want = laminar_oracle(SCRIPTED_OBSERVATIONS, geo, sigma_omega=0.6, sigma_nu=0.3)
        assert np.max(np.abs(got.probs - want)) < 1e-12

    def test_matches_transcription_on_default_geometry(self):
        geo = BinGeometry.default()
        rng = np.random.default_rng(8)
        oms = rng.uniform(0, 2 * math.pi, 6)
        nus = rng.uniform(0, 2.0, 6)
        got = extract_laminar(oms, nus, geo, math.radians(10.0), 0.2)
        want = laminar_oracle(list(zip(oms, nus)), geo, math.radians(10.0), 0.2)
        assert np.max(np.abs(got.probs - want)) < 1e-12

    def test_constant_signal_concentrates(self):
        geo = BinGeometry.default()
        oms = np.full(200, 1.0)
        nus = np.full(200, 1.3)
        gl = extract_laminar(oms, nus, geo, math.radians(10.0), 0.2)
        sig = int(geo.flat_bin(1.0, 1.3))
        assert int(np.argmax(gl.probs)) == sig
        assert gl.probs[sig] > 1.0 / geo.n_bins

    def test_single_observation_normalizes(self):
        geo = BinGeometry.default()
        gl = extract_laminar(np.array([2.0]), np.array([1.1]), geo, math.radians(10.0), 0.2)
        assert gl.probs.sum() == pytest.approx(1.0, abs=1e-12)
        assert gl.support_count == 1

    def test_output_strictly_positive(self):
        geo = BinGeometry.default()
        rng = np.random.default_rng(4)
        gl = extract_laminar(rng.uniform(0, 6.28, 50), rng.uniform(0, 2, 50), geo,
                             math.radians(10.0), 0.2)
        assert np.all(gl.probs > 0.0)

    def test_deterministic(self):
        geo = toy_geometry()
        oms = np.array([o for o, _ in SCRIPTED_OBSERVATIONS])
        nus = np.array([v for _, v in SCRIPTED_OBSERVATIONS])
        a = extract_laminar(oms, nus, geo, 0.6, 0.3)
        b = extract_laminar(oms, nus, geo, 0.6, 0.3)
        assert np.array_equal(a.probs, b.probs)

    def test_chunking_invariance(self):
        # results must not depend on internal chunk boundaries beyond 1e-12
        import lace.training as train_mod

        geo = toy_geometry()
        rng = np.random.default_rng(9)
        oms = rng.uniform(0, 6.28, 2500)
        nus = rng.uniform(0, 1.0, 2500)
        full = extract_laminar(oms, nus, geo, 0.6, 0.3)
        old = train_mod._LAMINAR_CHUNK
        try:
            train_mod._LAMINAR_CHUNK = 33
            small = extract_laminar(oms, nus, geo, 0.6, 0.3)
        finally:
            train_mod._LAMINAR_CHUNK = old
        assert np.max(np.abs(full.probs - small.probs)) < 1e-12

    def test_rejects_empty(self):
        with pytest.raises(ValueError):
            extract_laminar(np.array([]), np.array([]), toy_geometry(), 0.6, 0.3)


# ---------------------------------------------------------------------------
# train() end to end on synthetic flows
# ---------------------------------------------------------------------------


def small_geometry_params(k=12, seed=3):
    return BinGeometry.default(), TrainParams(k=k, seed=seed)


class TestFlatten:
    def test_outgoing_convention_skips_final_state(self):
        states = tuple(AgentState(x=float(i), y=0.0, omega=0.25 * i, nu=1.0, t=i) for i in range(4))
        table = flatten_observations([Trajectory("p", states, 1.0)])
        assert len(table) == 3
        assert list(table.t) == [0, 1, 2]

    def test_global_time_order(self):
        a = Trajectory("a", tuple(AgentState(float(i), 0, 0, 1, t=10 + i) for i in range(3)), 1.0)
        b = Trajectory("b", tuple(AgentState(float(i), 1, 0, 1, t=i) for i in range(3)), 1.0)
        table = flatten_observations([a, b])
        assert list(table.t) == [0, 1, 10, 11]

    def test_rejects_empty(self):
        with pytest.raises(ValueError):
            flatten_observations([])


class TestTrain:
    def test_eastbound_flow_model(self):
        geo, params = small_geometry_params()
        trajs = generate(named_scenario("straight-east", agents=120, seed=21))
        model = train(trajs, geo, params)
        assert model.n_clusters == 12
        for cluster in model.clusters:
            marg = cluster.gamma_l.direction_marginal()
            best = (int(np.argmax(marg)) + 0.5) * geo.direction_bin_width
            # argmax direction within one bin width of due east
            d = min(best % (2 * math.pi), 2 * math.pi - best % (2 * math.pi))
            assert d <= geo.direction_bin_width

    def test_bidirectional_flow_scores_higher_divergence_on_average(self):
        geo, params = small_geometry_params()
        east = generate(named_scenario("straight-east", agents=120, seed=21))
        both = generate(named_scenario("bidirectional-corridor", agents=120, seed=21))
        m_east = train(east, geo, params)
        m_both = train(both, geo, params)
        kl_east = np.mean([c.kl_divergence for c in m_east.clusters])
        kl_both = np.mean([c.kl_divergence for c in m_both.clusters])
        assert kl_east <= kl_both

    def test_rejects_empty_training_set(self):
        with pytest.raises(ValueError):
            train([], *small_geometry_params())

    def test_identical_seed_identical_model_json(self):
        geo, params = small_geometry_params()
        trajs = generate(named_scenario("mixed-50", agents=60, seed=5))
        m1 = train(trajs, geo, params)
        m2 = train(trajs, geo, params)
        assert m1.to_json() == m2.to_json()

    def test_threads_do_not_change_result(self):
        geo, params = small_geometry_params(k=8)
        trajs = generate(named_scenario("mixed-50", agents=40, seed=6))
        assert train(trajs, geo, params, threads=1).to_json() == \
            train(trajs, geo, params, threads=4).to_json()

    def test_histograms_sum_to_one(self):
        geo, params = small_geometry_params(k=6)
        trajs = generate(named_scenario("mixed-50", agents=50, seed=8))
        model = train(trajs, geo, params)
        for c in model.clusters:
            assert c.gamma_r.probs.sum() == pytest.approx(1.0, abs=1e-9)
            assert c.gamma_l.probs.sum() == pytest.approx(1.0, abs=1e-9)
            assert c.kl_divergence >= 0.0
            assert kl_divergence(c.gamma_r, c.gamma_l) == pytest.approx(c.kl_divergence)

    def test_spatial_index_matches_linear_scan(self):
        geo, params = small_geometry_params(k=25, seed=1)
        trajs = generate(named_scenario("mixed-50", agents=80, seed=13))
        model = train(trajs, geo, params)
        cents = model.centroids()
        rng = np.random.default_rng(0)
        queries = rng.uniform(-5, 25, size=(1000, 2))
        for qx, qy in queries:
            idx, dist = model.nearest_cluster(qx, qy)
            d2 = np.sum((cents - [qx, qy]) ** 2, axis=1)
            assert d2[idx] == pytest.approx(float(d2.min()), rel=1e-12)

    def test_shuffle_seed_changes_order_not_support(self):
        geo, _ = small_geometry_params()
        trajs = generate(named_scenario("mixed-50", agents=40, seed=2))
        base = train(trajs, geo, TrainParams(k=6, seed=3))
        shuf = train(trajs, geo, TrainParams(k=6, seed=3, shuffle_seed=99))
        assert sum(c.member_count for c in base.clusters) == sum(c.member_count for c in shuf.clusters)
