import numpy as np
import pytest

from emstad.detect import (
    Classification,
    ThresholdCache,
    calibrate_threshold,
    classify,
    classify_bins,
    detect,
    estimate_aoas,
    h0_covariance,
    h0_statistics,
    lrt_statistic,
    threshold_digest,
    threshold_from_statistics,
)
from emstad.em import EmConfig, EmState, Responsibilities, component_loglik, run_em
from emstad.hermitian import NotPositiveDefinite
from emstad.montecarlo import derive_trial_rng
from emstad.scene import (
    AngleGrid,
    InterferenceConfig,
    TargetSpec,
    generate_scene,
)

GRID = AngleGrid.default()
INTF = InterferenceConfig(n=8)
TABLE_TARGETS = [
    TargetSpec(6, -16.0, 20.0),
    TargetSpec(13, 4.0, 20.0),
    TargetSpec(16, 12.0, 20.0),
]


def resp_with_q1(q1_values, r=None, k_theta=21):
    q1 = np.asarray(q1_values, float)
    q = np.column_stack([1.0 - q1, q1])
    if r is None:
        r = np.full((len(q1), k_theta), 1.0 / k_theta)
    return Responsibilities(q, np.asarray(r, float))


class TestClassifyBins:
    def test_all_interference(self):
        resp = resp_with_q1(np.zeros(24))
        s = classify_bins(resp)
        assert np.array_equal(s, np.zeros(24, int))

    def test_three_targets(self):
        q1 = np.full(24, 0.1)
        q1[[5, 12, 15]] = 0.9
        s = classify_bins(resp_with_q1(q1))
        assert set(np.flatnonzero(s) + 1) == {6, 13, 16}

    def test_tie_goes_to_interference(self):
        s = classify_bins(resp_with_q1([0.5, 0.5001]))
        assert list(s) == [0, 1]


class TestEstimateAoas:
    def test_concentrated_row(self):
        r = np.zeros((24, 21))
        r[:, 2] = 1.0  # grid index 3 -> -16 degrees on the default grid
        n_hat, theta_hat, t_hat = estimate_aoas(resp_with_q1(np.ones(24), r), {6}, GRID)
        assert n_hat == {6: 3}
        assert theta_hat == {6: -16.0}
        assert t_hat == 1

    def test_empty_set(self):
        n_hat, theta_hat, t_hat = estimate_aoas(resp_with_q1(np.ones(24)), set(), GRID)
        assert n_hat == {} and theta_hat == {} and t_hat == 0

    def test_uniform_row_tie_break(self):
        n_hat, theta_hat, _ = estimate_aoas(resp_with_q1(np.ones(24)), {3}, GRID)
        assert n_hat == {3: 1}
        assert theta_hat == {3: -20.0}

    def test_classify_bundles_everything(self):
        q1 = np.zeros(24)
        q1[[5, 12]] = 0.9
        r = np.full((24, 21), 1.0 / 21)
        r[5] = 0.0
        r[5, 2] = 1.0
        r[12] = 0.0
        r[12, 12] = 1.0
        cls = classify(resp_with_q1(q1, r), GRID)
        assert isinstance(cls, Classification)
        assert cls.omega_t_hat == frozenset({6, 13})
        assert cls.theta_hat == {6: -16.0, 13: 4.0}
        assert cls.t_hat == 2
        assert sum(cls.s_hat) == 2


class TestH0Covariance:
    def test_scaled_identity_columns(self):
        z = np.sqrt(2.0) * np.eye(2)
        assert np.allclose(h0_covariance(z).matrix, np.eye(2))

    def test_identity_two_columns(self):
        assert np.allclose(h0_covariance(np.eye(2)).matrix, np.diag([0.5, 0.5]))

    def test_direct_sum_oracle(self):
        rng = np.random.default_rng(0)
        z = rng.standard_normal((3, 9)) + 1j * rng.standard_normal((3, 9))
        expected = sum(np.outer(z[:, k], z[:, k].conj()) for k in range(9)) / 9
        assert np.allclose(h0_covariance(z).matrix, expected)

    def test_k_below_n(self):
        rng = np.random.default_rng(1)
        z = rng.standard_normal((4, 2)) + 1j * rng.standard_normal((4, 2))
        with pytest.raises(NotPositiveDefinite):
            h0_covariance(z)


class TestLrtStatistic:
    def scene(self, seed=21):
        return generate_scene(24, GRID, INTF, TABLE_TARGETS, derive_trial_rng(seed, 0))

    def test_zero_when_models_identical(self):
        scene = self.scene()
        m0 = h0_covariance(scene.z)
        state = EmState(
            np.array([1.0, 0.0]),
            np.full(21, 1 / 21),
            m0,
            np.zeros((24, 21), complex),
            None,
            0.0,
            1,
        )
        assert abs(lrt_statistic(scene.z, state, GRID)) < 1e-9

    def test_decomposition_identity(self):
        scene = self.scene(22)
        final = run_em(scene.z, GRID)[-1]
        m0 = h0_covariance(scene.z)
        from emstad.em import log_likelihood

        null = sum(component_loglik(scene.z[:, k], 0.0, 0.0, m0) for k in range(24))
        expected = log_likelihood(scene.z, final, GRID) - null
        assert lrt_statistic(scene.z, final, GRID) == pytest.approx(expected, abs=1e-9)

    def test_strong_target_scores_high(self):
        scene = self.scene(23)
        final = run_em(scene.z, GRID)[-1]
        assert lrt_statistic(scene.z, final, GRID) > 50.0


class TestThresholdFromStatistics:
    def test_order_statistic_rank(self):
        stats = np.arange(1.0, 11.0)  # 1..10
        assert threshold_from_statistics(stats, 0.5) == 6.0  # 5th largest
        assert threshold_from_statistics(stats, 0.1) == 10.0  # largest
        assert threshold_from_statistics(stats, 0.99) == 1.0

    def test_large_batch_rank(self):
        stats = np.arange(100000, dtype=float)
        eta = threshold_from_statistics(stats, 1e-3)
        assert eta == 99900.0  # the 100th largest
        assert (stats > eta).sum() == 99

    @pytest.mark.parametrize("seed", range(3))
    def test_monotone_in_pfa(self, seed):
        rng = np.random.default_rng(seed)
        stats = rng.standard_normal(500)
        etas = [threshold_from_statistics(stats, pfa) for pfa in (0.01, 0.1, 0.3, 0.6)]
        assert all(a >= b for a, b in zip(etas, etas[1:]))

    def test_validation(self):
        with pytest.raises(ValueError):
            threshold_from_statistics([1.0], 0.0)
        with pytest.raises(ValueError):
            threshold_from_statistics([], 0.5)


class TestCalibration:
    def test_deterministic_and_order_consistent(self):
        stats = h0_statistics(24, GRID, INTF, EmConfig(), 12, base_seed=7)
        eta = threshold_from_statistics(stats, 0.25)
        eta2 = calibrate_threshold(24, GRID, INTF, EmConfig(), 0.25, 12, base_seed=7)
        assert eta == eta2
        stats_again = h0_statistics(24, GRID, INTF, EmConfig(), 12, base_seed=7)
        assert np.array_equal(stats, stats_again)

    def test_cache_roundtrip(self, tmp_path):
        cache = ThresholdCache(tmp_path / "cache.json")
        digest = threshold_digest(24, GRID, INTF, EmConfig(), 0.25, 4, 3)
        cache.put(digest, 0.25, 4, 1.25, 3)
        eta = calibrate_threshold(
            24, GRID, INTF, EmConfig(), 0.25, 4, base_seed=3, cache=cache
        )
        assert eta == 1.25  # served from the cache, no trials run
        eta_fresh = calibrate_threshold(
            24, GRID, INTF, EmConfig(), 0.25, 4, base_seed=3, cache=cache, recalibrate=True
        )
        assert eta_fresh != 1.25
        assert cache.get(digest) == eta_fresh

    def test_digest_distinguishes_configs(self):
        a = threshold_digest(24, GRID, INTF, EmConfig(), 1e-3, 100, 1)
        b = threshold_digest(24, GRID, INTF, EmConfig(), 1e-2, 100, 1)
        c = threshold_digest(24, GRID, InterferenceConfig(n=8, rho_c=0.5), EmConfig(), 1e-3, 100, 1)
        assert len({a, b, c}) == 3


class TestDetect:
    def test_pipeline_and_boundary_rule(self):
        scene = generate_scene(24, GRID, INTF, TABLE_TARGETS, derive_trial_rng(33, 0))
        report = detect(scene.z, np.inf, GRID, EmConfig())
        assert report.decision == "H0"
        assert report.classification.t_hat >= 1  # populated despite the H0 call
        at_boundary = detect(scene.z, report.statistic, GRID, EmConfig())
        assert at_boundary.decision == "H0"  # strict inequality
        below = detect(scene.z, report.statistic - 1e-6, GRID, EmConfig())
        assert below.decision == "H1"

    def test_scale_invariance_through_generator(self):
        # scaling the noise power by 4 at fixed CNR and SINR scales the data
        # exactly by 2 and leaves every classification output unchanged
        strong = InterferenceConfig(n=8, sigma_n2=4.0, cnr_db=15.0, rho_c=0.9)
        a = generate_scene(24, GRID, INTF, TABLE_TARGETS, derive_trial_rng(44, 0))
        b = generate_scene(24, GRID, strong, TABLE_TARGETS, derive_trial_rng(44, 0))
        assert np.allclose(b.z, 2.0 * a.z)
        assert np.allclose(
            h0_covariance(b.z).matrix, 4.0 * h0_covariance(a.z).matrix, rtol=1e-12
        )
        cls_a = classify(run_em(a.z, GRID)[-1].resp, GRID)
        cls_b = classify(run_em(b.z, GRID)[-1].resp, GRID)
        assert cls_a.s_hat == cls_b.s_hat
        assert cls_a.n_hat == cls_b.n_hat
