"""Simulator checks: noise-free streams are exact, the inertial synthesis
inverts back to the reference trajectory, bias tracks have the right
statistics, and corruption episodes leave their documented fingerprints."""

import math

import numpy as np
import pytest

from quatvio.dynamics import ImuNoiseModel, NominalState, propagate_nominal
from quatvio.errors import ConfigError
from quatvio.simulate import (
    BENIGN_METRICS,
    CORRUPT_SIGNATURE,
    TRAJECTORY_FAMILIES,
    CorruptionEpisode,
    ScenarioSpec,
    simulate,
)

EPS = 1e-12


class TestNoiseFree:
    def test_static_streams_exact(self):
        spec = ScenarioSpec(trajectory="static", duration=2.0,
                            noise_scale=0.0, seed=3)
        bundle = simulate(spec)
        for u in bundle.imu:
            assert np.allclose(u.omega, 0.0, atol=EPS)
            assert np.allclose(u.accel, [0.0, 0.0, 9.81], atol=EPS)
        for g in bundle.ground_truth:
            assert np.allclose(g.v, 0.0, atol=EPS)
            assert np.array_equal(g.b_a, np.zeros(3))
            assert np.array_equal(g.b_g, np.zeros(3))

    def test_vo_matches_truth_exactly(self):
        spec = ScenarioSpec(trajectory="circle", duration=5.0,
                            noise_scale=0.0, seed=1)
        bundle = simulate(spec)
        gt_by_t = {g.t: g for g in bundle.ground_truth}
        checked = 0
        for m in bundle.vo:
            if m.t in gt_by_t:
                assert np.allclose(m.p, gt_by_t[m.t].p, atol=1e-9)
                assert np.allclose(m.v, gt_by_t[m.t].v, atol=1e-9)
                checked += 1
        assert checked > 10

    def test_imu_inverts_to_trajectory(self):
        """Dead-reckoning the noise-free IMU through the nominal model must
        track the reference: the synthesis is the model's inverse."""
        spec = ScenarioSpec(trajectory="figure8", duration=10.0,
                            noise_scale=0.0, seed=0)
        bundle = simulate(spec)
        noise = ImuNoiseModel()
        g0 = bundle.ground_truth[0]
        x = NominalState(q=g0.q.copy(), v=g0.v.copy(), p=g0.p.copy(),
                         b_a=np.zeros(3), b_g=np.zeros(3))
        t = g0.t
        for u in bundle.imu:
            if u.t <= t:
                continue
            x = propagate_nominal(x, u, (u.t - t) * 1e-9, noise)
            t = u.t
        g_end = bundle.ground_truth[-1]
        assert np.linalg.norm(x.p - g_end.p) < 2e-3
        assert np.linalg.norm(x.v - g_end.v) < 2e-3


class TestStreamShapes:
    def test_counts_and_rates(self):
        spec = ScenarioSpec(trajectory="circle", duration=4.0, imu_rate=200,
                            vo_rate=10, seed=0)
        bundle = simulate(spec)
        assert len(bundle.imu) == 800
        assert len(bundle.ground_truth) == 801  # includes t = 0
        assert len(bundle.vo) == 40
        # visual timestamps are multiples of the frame period, starting
        # one period in
        assert bundle.vo[0].t == 100_000_000
        assert bundle.vo[-1].t == 4_000_000_000

    def test_gt_timestamps_cover_imu(self):
        spec = ScenarioSpec(trajectory="figure8", duration=2.0, seed=0)
        bundle = simulate(spec)
        gt_t = {g.t for g in bundle.ground_truth}
        for u in bundle.imu:
            assert u.t in gt_t

    def test_name(self):
        spec = ScenarioSpec(trajectory="circle", duration=1.0, seed=7)
        assert simulate(spec).name == "circle-seed7"

    def test_all_families_run(self):
        for family in TRAJECTORY_FAMILIES:
            spec = ScenarioSpec(trajectory=family, duration=2.0, seed=0)
            bundle = simulate(spec)
            assert len(bundle.imu) == 400

    def test_unknown_family(self):
        with pytest.raises(ConfigError):
            ScenarioSpec(trajectory="helix", duration=1.0).validate()

    def test_aggressive_rotation_reaches_high_rate(self):
        spec = ScenarioSpec(trajectory="aggressive_rotation", duration=15.0,
                            noise_scale=0.0, seed=0)
        bundle = simulate(spec)
        peak = max(float(np.linalg.norm(u.omega)) for u in bundle.imu)
        assert peak > 2.5


class TestBiasStatistics:
    def test_gm_increment_stats(self):
        """Bias increments over the track must match the exact discrete
        Gauss-Markov law within sampling tolerance."""
        spec = ScenarioSpec(trajectory="static", duration=60.0, seed=5)
        bundle = simulate(spec)
        noise = ImuNoiseModel()
        bg = np.array([g.b_g for g in bundle.ground_truth])
        dt = 1.0 / spec.imu_rate
        decay = math.exp(-dt / noise.tau_g)
        inc = bg[1:] - decay * bg[:-1]
        inc_std_expect = noise.sigma_wg * math.sqrt(
            noise.tau_g / 2.0 * (1.0 - math.exp(-2.0 * dt / noise.tau_g)))
        got = inc.std()
        assert abs(got - inc_std_expect) / inc_std_expect < 0.05

    def test_init_bias_scale(self):
        draws = []
        for seed in range(40):
            spec = ScenarioSpec(trajectory="static", duration=0.1, seed=seed)
            b0 = simulate(spec).ground_truth[0].b_a
            draws.append(b0)
        std = np.array(draws).std()
        assert 0.5 * 0.02 < std < 1.5 * 0.02


class TestDeterminism:
    def test_same_seed_bitwise(self):
        spec = ScenarioSpec(trajectory="waypoint_spline", duration=3.0, seed=9)
        a = simulate(spec)
        b = simulate(spec)
        for ua, ub in zip(a.imu, b.imu):
            assert ua.t == ub.t
            assert np.array_equal(ua.omega, ub.omega)
            assert np.array_equal(ua.accel, ub.accel)
        for ma, mb in zip(a.vo, b.vo):
            assert np.array_equal(ma.p, mb.p)

    def test_different_seed_differs(self):
        a = simulate(ScenarioSpec(trajectory="circle", duration=1.0, seed=0))
        b = simulate(ScenarioSpec(trajectory="circle", duration=1.0, seed=1))
        assert not np.array_equal(a.imu[0].omega, b.imu[0].omega)


class TestCorruption:
    def episodes(self):
        return (
            CorruptionEpisode(start=1.0, end=2.0, kind="dropout"),
            CorruptionEpisode(start=3.0, end=4.0, kind="bias_jump",
                              magnitude=2.0),
            CorruptionEpisode(start=5.0, end=6.0, kind="noise_spike",
                              magnitude=20.0),
        )

    def make(self):
        spec = ScenarioSpec(trajectory="circle", duration=8.0, seed=2,
                            corruption=self.episodes())
        return simulate(spec)

    def test_dropout_removes_frames(self):
        bundle = self.make()
        times = [m.t * 1e-9 for m in bundle.vo]
        assert not any(1.0 <= t < 2.0 for t in times)
        assert any(0.5 <= t < 1.0 for t in times)

    def test_bias_jump_offsets_position(self):
        spec_clean = ScenarioSpec(trajectory="circle", duration=8.0, seed=2)
        clean = {m.t: m for m in simulate(spec_clean).vo}
        bundle = self.make()
        for m in bundle.vo:
            t = m.t * 1e-9
            if 3.0 <= t < 4.0:
                offset = np.linalg.norm(m.p - clean[m.t].p)
                assert np.isclose(offset, 2.0, atol=1e-9)

    def test_corrupt_frames_stamped(self):
        bundle = self.make()
        culled_values = []
        for m in bundle.vo:
            t = m.t * 1e-9
            if 3.0 <= t < 4.0 or 5.0 <= t < 6.0:
                assert m.metrics.pose_chi2 == CORRUPT_SIGNATURE["pose_chi2"]
                assert m.metrics.blur == CORRUPT_SIGNATURE["blur"]
                assert m.metrics.entropy == CORRUPT_SIGNATURE["entropy"]
                if 3.0 <= t < 4.0:
                    culled_values.append(m.metrics.culled_keyframes)
            else:
                assert m.metrics.pose_chi2 == BENIGN_METRICS["pose_chi2"]
        # culled keyframes alternate so the delta channel keeps firing
        assert CORRUPT_SIGNATURE["culled_kf_high"] in culled_values
        assert 0.0 in culled_values

    def test_episode_window_half_open(self):
        ep = CorruptionEpisode(start=1.0, end=2.0, kind="dropout")
        assert ep.active(1.0)
        assert not ep.active(2.0)

    def test_bad_episode_kind(self):
        with pytest.raises(ConfigError):
            ScenarioSpec(
                trajectory="circle", duration=2.0,
                corruption=(CorruptionEpisode(start=0, end=1,
                                              kind="alien"),),
            ).validate()


class TestSpecValidation:
    def test_bad_duration(self):
        with pytest.raises(ConfigError):
            ScenarioSpec(trajectory="circle", duration=0.0).validate()

    def test_bad_rates(self):
        with pytest.raises(ConfigError):
            ScenarioSpec(trajectory="circle", duration=1.0,
                         imu_rate=0).validate()
        with pytest.raises(ConfigError):
            ScenarioSpec(trajectory="circle", duration=1.0,
                         vo_rate=500).validate()

    def test_waypoints_need_three(self):
        spec = ScenarioSpec(trajectory="waypoint_spline", duration=2.0,
                            params={"waypoints": 2})
        with pytest.raises(ConfigError):
            simulate(spec)
