import math

import numpy as np
import pytest
from scipy.stats import halfcauchy, norm

from gprdd import (
    KDELTA_SE,
    Observation,
    PriorConfig,
    SEParams,
    Theta,
    assemble_joint,
    build_components,
    canonicalize,
    delta_conditional,
    gen_well_specified,
    log_marginal,
    log_prior,
)
from gprdd.linalg import BASE_JITTER
from gprdd.model import JointGaussian, LikelihoodCache, coord_kind, half_cauchy_logpdf

from conftest import compose_joint_oracle


class TestCanonicalize:
    def test_single_group_two_rows(self):
        ds = canonicalize([Observation(1.0, 0.4, True, "a"), Observation(0.0, -0.4, False, "a")])
        assert ds.N_minus == 1 and ds.N_plus == 1
        np.testing.assert_array_equal(ds.treated, [False, True])
        np.testing.assert_array_equal(ds.z, [-0.4, 0.4])

    def test_sharp_rule_overrides_flag_with_warning(self):
        with pytest.warns(UserWarning, match="sharp rule"):
            ds = canonicalize([Observation(0.0, 0.3, False, "a"), Observation(0.0, -0.3, False, "a")])
        assert bool(ds.treated[1]) is True

    def test_two_group_interleaved_order(self):
        # hand-enumerated: controls of g1 then g2 (input order kept), then treated g1, g2
        obs = [
            Observation(10.0, 0.2, True, "g1"),
            Observation(20.0, -0.1, False, "g2"),
            Observation(30.0, -0.5, False, "g1"),
            Observation(40.0, 0.8, True, "g2"),
            Observation(50.0, -0.3, False, "g1"),
            Observation(60.0, 0.9, True, "g1"),
        ]
        ds = canonicalize(obs)
        np.testing.assert_array_equal(ds.y, [30.0, 50.0, 20.0, 10.0, 60.0, 40.0])
        np.testing.assert_array_equal(ds.group_index, [0, 0, 1, 0, 0, 1])
        assert ds.labels == ("g1", "g2")
        assert ds.label_map == {"g1": 1, "g2": 2}

    def test_rejects_empty_and_nonfinite(self):
        with pytest.raises(ValueError, match="empty"):
            canonicalize([])
        with pytest.raises(ValueError, match="non-finite"):
            canonicalize([Observation(float("nan"), 0.1, True, "a")])
        with pytest.raises(ValueError, match="non-finite"):
            canonicalize([Observation(0.0, float("inf"), True, "a")])

    def test_cutoff_value_is_treated(self):
        ds = canonicalize([Observation(0.0, 0.0, True, "a"), Observation(0.0, -1.0, False, "a")])
        assert bool(ds.treated[1]) is True


class TestThetaVector:
    def test_round_trip_and_order(self):
        theta = Theta(
            mu=-0.3,
            sigma_minus_sq=np.array([1.0, 2.0]),
            sigma_plus_sq=np.array([3.0, 4.0]),
            f_kernel=SEParams(6.0, 9.0),
            g_kernel=SEParams(7.0, 10.0),
            delta_kernel=SEParams(5.0, 8.0),
        )
        vec = theta.to_vector()
        np.testing.assert_array_equal(vec, [-0.3, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10])
        back = Theta.from_vector(vec, 2)
        np.testing.assert_array_equal(back.to_vector(), vec)
        assert theta.dim == 11

    def test_coord_names_and_kinds(self):
        names = Theta.coord_names(2)
        assert names[0] == "mu"
        assert names[1:5] == ("sigma_minus_sq_1", "sigma_minus_sq_2", "sigma_plus_sq_1", "sigma_plus_sq_2")
        assert names[5:] == ("r_delta_sq", "r_f_sq", "r_g_sq", "inv_lsq_delta", "inv_lsq_f", "inv_lsq_g")
        kinds = [coord_kind(i, 2) for i in range(11)]
        assert kinds == [
            "mu", "sigma", "sigma", "sigma", "sigma",
            "delta_kernel", "f_kernel", "g_kernel",
            "delta_kernel", "f_kernel", "g_kernel",
        ]


class TestAssembleJoint:
    def test_no_treated_rows(self):
        obs = [Observation(0.1 * i, -1.0 + 0.05 * i, False, "a") for i in range(4)]
        ds = canonicalize(obs)
        theta = Theta(
            mu=2.0,
            sigma_minus_sq=np.array([0.4]),
            sigma_plus_sq=np.array([0.4]),
            f_kernel=SEParams(1.0, 1.0),
            g_kernel=SEParams(1.0, 1.0),
            delta_kernel=SEParams(1.0, 1.0),
        )
        jg = assemble_joint(build_components(ds, theta), theta)
        np.testing.assert_array_equal(jg.Lambda12, np.zeros((1, 4)))
        comps = build_components(ds, theta)
        np.testing.assert_allclose(jg.Lambda22, comps.Kg + comps.D + np.diag(comps.Sigma), rtol=1e-15)

    def test_mean_vector_layout(self):
        obs = [
            Observation(0.0, -0.5, False, "a"),
            Observation(0.0, 0.2, True, "a"),
            Observation(0.0, 0.6, True, "a"),
        ]
        ds = canonicalize(obs)
        theta = Theta(
            mu=2.0,
            sigma_minus_sq=np.array([0.4]),
            sigma_plus_sq=np.array([0.4]),
            f_kernel=SEParams(1.0, 1.0),
            g_kernel=SEParams(1.0, 1.0),
            delta_kernel=SEParams(1.0, 1.0),
        )
        jg = assemble_joint(build_components(ds, theta), theta)
        np.testing.assert_array_equal(jg.mu_Y, [0.0, 2.0, 2.0])
        np.testing.assert_array_equal(jg.mu_delta, [2.0])

    def test_blocks_match_composition_oracle(self, six_row_dataset, theta_j2):
        comps = build_components(six_row_dataset, theta_j2)
        jg = assemble_joint(comps, theta_j2)
        mu_Y, cov_dY, cov_Y = compose_joint_oracle(six_row_dataset, comps, theta_j2)
        np.testing.assert_allclose(jg.mu_Y, mu_Y, atol=1e-15)
        np.testing.assert_allclose(jg.Lambda12, cov_dY, rtol=1e-14)
        np.testing.assert_allclose(jg.Lambda22, cov_Y, rtol=1e-14)

    def test_covariance_matches_generative_monte_carlo(self, six_row_dataset, theta_j2):
        # simulate the full generative hierarchy and compare empirical joint
        # covariance of (delta, Y) entrywise within 3 Monte-Carlo ses
        ds, theta = six_row_dataset, theta_j2
        comps = build_components(ds, theta)
        jg = assemble_joint(comps, theta)
        rng = np.random.default_rng(7)
        n_draws = 200_000
        N, J = ds.N, ds.J
        L_g = np.linalg.cholesky(comps.Kg + 1e-10 * np.eye(N))
        L_d = np.linalg.cholesky(comps.D + 1e-10 * np.eye(N))
        L_k = np.linalg.cholesky(comps.Kdelta + 1e-12 * np.eye(J))
        shared = rng.standard_normal((n_draws, N)) @ L_g.T
        dev = rng.standard_normal((n_draws, N)) @ L_d.T
        delta = theta.mu + rng.standard_normal((n_draws, J)) @ L_k.T
        eps = rng.standard_normal((n_draws, N)) * np.sqrt(comps.Sigma)
        y = shared + dev + eps
        y[:, ds.N_minus :] += delta[:, ds.treated_group_index]
        emp = np.cov(np.hstack([delta, y]).T)
        full = np.block([[jg.Lambda11, jg.Lambda12], [jg.Lambda12.T, jg.Lambda22]])
        mc_se = np.sqrt((np.outer(np.diag(full), np.diag(full)) + full**2) / n_draws)
        assert np.all(np.abs(emp - full) <= 3.0 * mc_se)


def _naive_log_marginal(Y, jg):
    # independent path: explicit inverse and determinant, same documented
    # base jitter on the diagonal
    m = jg.Lambda22 + BASE_JITTER * np.max(np.diag(jg.Lambda22)) * np.eye(jg.Lambda22.shape[0])
    r = Y - jg.mu_Y
    _, logdet = np.linalg.slogdet(m)
    n = Y.shape[0]
    return -0.5 * (n * math.log(2 * math.pi) + logdet + r @ np.linalg.inv(m) @ r)


class TestLogMarginal:
    def test_standard_normal_point(self):
        jg = JointGaussian(
            mu_delta=np.array([0.0]),
            mu_Y=np.array([0.0]),
            Lambda11=np.array([[1.0]]),
            Lambda12=np.array([[0.0]]),
            Lambda22=np.array([[1.0]]),
        )
        assert log_marginal(np.array([0.0]), jg) == pytest.approx(-0.5 * math.log(2 * math.pi), abs=1e-6)

    def test_within_group_permutation_invariance(self, theta_j2):
        obs = [
            Observation(0.3, -0.7, False, "g1"),
            Observation(-0.1, -0.2, False, "g1"),
            Observation(0.2, -0.4, False, "g2"),
            Observation(1.1, 0.3, True, "g1"),
            Observation(0.9, 0.5, True, "g2"),
            Observation(1.4, 0.9, True, "g2"),
        ]
        ds1 = canonicalize(obs)
        obs[0], obs[1] = obs[1], obs[0]
        ds2 = canonicalize(obs)
        v1 = log_marginal(ds1.y, assemble_joint(build_components(ds1, theta_j2), theta_j2))
        v2 = log_marginal(ds2.y, assemble_joint(build_components(ds2, theta_j2), theta_j2))
        assert v1 == pytest.approx(v2, rel=1e-10)

    def test_against_naive_dense_oracle(self):
        obs = [
            Observation(0.4, -0.9, False, "a"),
            Observation(-0.2, -0.1, False, "a"),
            Observation(1.3, 0.2, True, "a"),
            Observation(0.8, 0.7, True, "a"),
        ]
        ds = canonicalize(obs)
        theta = Theta(
            mu=0.5,
            sigma_minus_sq=np.array([0.3]),
            sigma_plus_sq=np.array([0.7]),
            f_kernel=SEParams(1.1, 1.3),
            g_kernel=SEParams(0.6, 0.4),
            delta_kernel=SEParams(0.9, 1.0),
        )
        jg = assemble_joint(build_components(ds, theta), theta)
        ours = log_marginal(ds.y, jg)
        naive = _naive_log_marginal(ds.y, jg)
        assert ours == pytest.approx(naive, rel=1e-10)

    def test_density_integrates_to_one_single_observation(self):
        jg = JointGaussian(
            mu_delta=np.array([0.0]),
            mu_Y=np.array([0.4]),
            Lambda11=np.array([[1.0]]),
            Lambda12=np.array([[0.0]]),
            Lambda22=np.array([[2.3]]),
        )
        sd = math.sqrt(2.3)
        ys = np.linspace(0.4 - 10 * sd, 0.4 + 10 * sd, 20001)
        dens = np.array([math.exp(log_marginal(np.array([y]), jg)) for y in ys])
        assert np.trapezoid(dens, ys) == pytest.approx(1.0, abs=1e-6)


class TestLogPrior:
    def _theta_single(self, value):
        # J=1 theta whose positive entries are all `value`
        return Theta(
            mu=0.0,
            sigma_minus_sq=np.array([value]),
            sigma_plus_sq=np.array([value]),
            f_kernel=SEParams(value, value),
            g_kernel=SEParams(value, value),
            delta_kernel=SEParams(value, value),
        )

    def test_half_cauchy_at_its_scale(self):
        gamma = 2.7
        assert half_cauchy_logpdf(gamma, gamma) == pytest.approx(math.log(1.0 / (math.pi * gamma)), abs=1e-13)

    def test_mu_contribution(self):
        pc = PriorConfig(cauchy_scale=5.0, mu_sd=100.0)
        theta = self._theta_single(1.0)
        base = log_prior(theta, pc)
        # mu = 0 contributes exactly the normal normalization
        positives = 8 * half_cauchy_logpdf(1.0, 5.0)
        assert base - positives == pytest.approx(-0.5 * math.log(2 * math.pi * 100.0**2), abs=1e-12)

    def test_doubling_scale_matches_direct_density(self):
        x = 1.7
        for gamma in (2.0, 4.0):
            ours = half_cauchy_logpdf(x, gamma)
            direct = halfcauchy.logpdf(x, scale=gamma)
            assert ours == pytest.approx(direct, abs=1e-12)
        diff = half_cauchy_logpdf(x, 4.0) - half_cauchy_logpdf(x, 2.0)
        expected = halfcauchy.logpdf(x, scale=4.0) - halfcauchy.logpdf(x, scale=2.0)
        assert diff == pytest.approx(expected, abs=1e-12)

    def test_full_log_prior_matches_scipy(self):
        pc = PriorConfig(cauchy_scale=3.0, mu_sd=10.0)
        theta = Theta(
            mu=-1.2,
            sigma_minus_sq=np.array([0.5, 2.0]),
            sigma_plus_sq=np.array([1.5, 0.1]),
            f_kernel=SEParams(2.2, 0.4),
            g_kernel=SEParams(0.9, 1.8),
            delta_kernel=SEParams(1.1, 3.3),
        )
        vec = theta.to_vector()
        expected = norm.logpdf(vec[0], scale=10.0) + halfcauchy.logpdf(vec[1:], scale=3.0).sum()
        assert log_prior(theta, pc) == pytest.approx(expected, rel=1e-12)

    def test_nonpositive_entry_rejected(self):
        with pytest.raises(ValueError):
            half_cauchy_logpdf(0.0, 1.0)


class TestDeltaConditional:
    def test_no_treated_gives_prior(self):
        obs = [Observation(0.1, -0.5, False, "a"), Observation(0.2, -0.1, False, "a")]
        ds = canonicalize(obs)
        theta = Theta(
            mu=1.5,
            sigma_minus_sq=np.array([0.4]),
            sigma_plus_sq=np.array([0.4]),
            f_kernel=SEParams(1.0, 1.0),
            g_kernel=SEParams(1.0, 1.0),
            delta_kernel=SEParams(0.8, 1.0),
        )
        jg = assemble_joint(build_components(ds, theta), theta)
        dp = delta_conditional(jg, ds.y)
        np.testing.assert_allclose(dp.mean, [1.5], atol=1e-12)
        np.testing.assert_allclose(dp.cov, jg.Lambda11, atol=1e-12)

    def test_infinite_noise_limit(self, six_row_dataset, theta_j2):
        theta = Theta(
            mu=theta_j2.mu,
            sigma_minus_sq=np.full(2, 1e10),
            sigma_plus_sq=np.full(2, 1e10),
            f_kernel=theta_j2.f_kernel,
            g_kernel=theta_j2.g_kernel,
            delta_kernel=theta_j2.delta_kernel,
        )
        jg = assemble_joint(build_components(six_row_dataset, theta), theta)
        dp = delta_conditional(jg, six_row_dataset.y)
        np.testing.assert_allclose(dp.mean, jg.mu_delta, atol=1e-4)
        np.testing.assert_allclose(dp.cov, jg.Lambda11, atol=1e-4)

    def test_matches_generic_conditioning_oracle(self, six_row_dataset, theta_j2):
        comps = build_components(six_row_dataset, theta_j2)
        jg = assemble_joint(comps, theta_j2)
        Y = six_row_dataset.y
        dp = delta_conditional(jg, Y)
        mu_Y, cov_dY, cov_Y = compose_joint_oracle(six_row_dataset, comps, theta_j2)
        m = cov_Y + BASE_JITTER * np.max(np.diag(cov_Y)) * np.eye(cov_Y.shape[0])
        inv = np.linalg.inv(m)
        mean_o = np.full(2, theta_j2.mu) + cov_dY @ inv @ (Y - mu_Y)
        cov_o = comps.Kdelta - cov_dY @ inv @ cov_dY.T
        np.testing.assert_allclose(dp.mean, mean_o, rtol=1e-8)
        np.testing.assert_allclose(dp.cov, cov_o, rtol=1e-8)

    def test_conditioning_never_inflates_variance(self, six_row_dataset, theta_j2):
        jg = assemble_joint(build_components(six_row_dataset, theta_j2), theta_j2)
        dp = delta_conditional(jg, six_row_dataset.y)
        gap = jg.Lambda11 - dp.cov
        assert np.min(np.linalg.eigvalsh(gap)) >= -1e-10
        assert np.min(np.linalg.eigvalsh(dp.cov)) >= -1e-10

    def test_posterior_calibration_over_simulated_datasets(self, theta_j2):
        # z-scores of the analytic conditional at the generating
        # hyperparameters should have variance near one
        rng = np.random.default_rng(31)
        zs = []
        for _ in range(500):
            data, truth = gen_well_specified(2, 8, theta_j2, rng)
            jg = assemble_joint(build_components(data, theta_j2), theta_j2)
            dp = delta_conditional(jg, data.y)
            zs.append((truth.delta_true - dp.mean) / np.sqrt(np.diag(dp.cov)))
        zs = np.concatenate(zs)
        assert 0.85 <= zs.var() <= 1.15


class TestLikelihoodCache:
    def test_every_coordinate_matches_full_rebuild(self, six_row_dataset, theta_j2):
        cache = LikelihoodCache(six_row_dataset, theta_j2, KDELTA_SE)
        vec = theta_j2.to_vector()
        for i in range(vec.size):
            value = vec[i] * 1.3 + (0.2 if i == 0 else 0.0)
            cand = cache.evaluate(i, value)
            v2 = vec.copy()
            v2[i] = value
            th2 = Theta.from_vector(v2, 2)
            jg2 = assemble_joint(build_components(six_row_dataset, th2, KDELTA_SE), th2)
            assert cand.log_marginal == pytest.approx(log_marginal(six_row_dataset.y, jg2), rel=1e-9)

    def test_commit_then_delta_posterior_matches_direct(self, six_row_dataset, theta_j2):
        cache = LikelihoodCache(six_row_dataset, theta_j2, KDELTA_SE)
        cand = cache.evaluate(3, 0.9)  # a sigma_plus coordinate
        cache.commit(cand)
        dp_cache, _ = cache.delta_posterior()
        th2 = cache.theta
        jg2 = assemble_joint(build_components(six_row_dataset, th2, KDELTA_SE), th2)
        dp = delta_conditional(jg2, six_row_dataset.y)
        np.testing.assert_allclose(dp_cache.mean, dp.mean, rtol=1e-9)
        np.testing.assert_allclose(dp_cache.cov, dp.cov, rtol=1e-8, atol=1e-12)
