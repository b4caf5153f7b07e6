import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from gprdd import (
    KDELTA_DIAG,
    KDELTA_SE,
    Observation,
    SEParams,
    Theta,
    build_components,
    canonicalize,
    se_eval,
    se_matrix,
)
from gprdd.kernels import kdelta_matrix
from gprdd.linalg import jittered_cholesky

finite = st.floats(min_value=-50, max_value=50, allow_nan=False)


def _theta(J, **kw):
    base = dict(
        mu=0.0,
        sigma_minus_sq=np.full(J, 0.5),
        sigma_plus_sq=np.full(J, 0.5),
        f_kernel=SEParams(1.0, 1.0),
        g_kernel=SEParams(1.0, 1.0),
        delta_kernel=SEParams(1.0, 1.0),
    )
    base.update(kw)
    return Theta(**base)


class TestSEEval:
    def test_at_zero_distance(self):
        assert se_eval(0.0, 0.0, SEParams(1.0, 1.0)) == 1.0

    def test_unit_distance(self):
        assert se_eval(0.0, 1.0, SEParams(1.0, 1.0)) == pytest.approx(math.exp(-0.5), abs=1e-9)

    @given(finite, finite)
    def test_symmetry(self, x, y):
        p = SEParams(1.3, 0.7)
        assert se_eval(x, y, p) == se_eval(y, x, p)

    @given(finite)
    def test_diagonal_is_variance_exactly(self, x):
        p = SEParams(2.5, 3.0)
        assert se_eval(x, x, p) == 2.5

    @pytest.mark.parametrize("variance,inv", [(0.0, 1.0), (-1.0, 1.0), (1.0, 0.0), (1.0, float("nan"))])
    def test_invalid_params_rejected(self, variance, inv):
        with pytest.raises(ValueError):
            SEParams(variance, inv)


class TestSEMatrix:
    def test_single_point(self):
        out = se_matrix(np.array([0.0]), np.array([0.0]), SEParams(1.9, 1.0))
        np.testing.assert_array_equal(out, [[1.9]])

    def test_square_symmetric_with_variance_diagonal(self):
        xs = np.array([0.0, 0.4, -1.2])
        out = se_matrix(xs, xs, SEParams(0.8, 2.0))
        assert np.array_equal(out, out.T)
        assert np.all(np.diag(out) == 0.8)

    def test_matches_scalar_eval(self):
        xs = np.array([0.0, 1.0, -0.3])
        ys = np.array([0.5, 2.0])
        p = SEParams(1.4, 0.9)
        out = se_matrix(xs, ys, p)
        for i, x in enumerate(xs):
            for j, y in enumerate(ys):
                assert out[i, j] == pytest.approx(se_eval(x, y, p), rel=1e-15)

    def test_jittered_diagonal_factorizes_100_random_inputs(self):
        rng = np.random.default_rng(99)
        for _ in range(100):
            n = int(rng.integers(2, 30))
            xs = rng.uniform(-3, 3, n)
            if rng.random() < 0.3:  # force duplicates, the nasty case
                xs[: n // 2] = xs[0]
            variance = float(rng.uniform(0.1, 10.0))
            out = se_matrix(xs, xs, SEParams(variance, float(rng.uniform(0.1, 5.0))))
            np.linalg.cholesky(out + 1e-8 * variance * np.eye(n))


class TestBuildComponents:
    def test_all_control_single_group(self):
        obs = [Observation(0.1 * i, -1.0 + 0.1 * i, False, "a") for i in range(5)]
        ds = canonicalize(obs)
        comps = build_components(ds, _theta(1))
        assert comps.H.shape == (0, 1)
        expected = se_matrix(ds.z, ds.z, SEParams(1.0, 1.0))
        np.testing.assert_allclose(comps.D, expected, rtol=1e-15)

    def test_diagonal_mode(self):
        obs = [Observation(0.0, -0.5, False, g) for g in "abc"] + [
            Observation(0.0, 0.5, True, g) for g in "abc"
        ]
        ds = canonicalize(obs)
        comps = build_components(ds, _theta(3, delta_kernel=SEParams(2.0, 1.0)), KDELTA_DIAG)
        np.testing.assert_array_equal(comps.Kdelta, 2.0 * np.eye(3))

    def test_d_nonzero_pattern_two_groups(self):
        obs = [
            Observation(0.0, -0.5, False, "a"),
            Observation(0.0, -0.6, False, "b"),
            Observation(0.0, 0.5, True, "a"),
            Observation(0.0, 0.6, True, "b"),
        ]
        ds = canonicalize(obs)
        comps = build_components(ds, _theta(2))
        # brute-force enumeration of same-group index pairs
        expected_nonzero = {
            (k, l)
            for k in range(4)
            for l in range(4)
            if ds.group_index[k] == ds.group_index[l]
        }
        actual_nonzero = {(k, l) for k in range(4) for l in range(4) if comps.D[k, l] != 0.0}
        assert actual_nonzero == expected_nonzero
        assert len(actual_nonzero) == 8

    def test_sigma_assignment(self, six_row_dataset, theta_j2):
        comps = build_components(six_row_dataset, theta_j2)
        ds = six_row_dataset
        for i in range(ds.N):
            j = ds.group_index[i]
            expected = theta_j2.sigma_plus_sq[j] if ds.treated[i] else theta_j2.sigma_minus_sq[j]
            assert comps.Sigma[i] == expected

    def test_h_marginal_sums(self, six_row_dataset, theta_j2):
        comps = build_components(six_row_dataset, theta_j2)
        np.testing.assert_array_equal(comps.H.sum(axis=1), np.ones(six_row_dataset.N_plus))
        np.testing.assert_array_equal(comps.H.sum(axis=0), six_row_dataset.n_plus)

    def test_rejects_non_canonical(self, six_row_dataset, theta_j2):
        ds = six_row_dataset
        ds.treated = ds.treated[::-1].copy()  # corrupt ordering
        with pytest.raises(ValueError):
            build_components(ds, theta_j2)

    def test_lambda22_core_is_positive_definite(self, six_row_dataset, theta_j2):
        comps = build_components(six_row_dataset, theta_j2)
        m = comps.Kg + comps.D + np.diag(comps.Sigma)
        lower, _ = jittered_cholesky(m)
        assert np.all(np.isfinite(lower))

    def test_within_group_permutation_equivariance(self, theta_j2):
        obs = [
            Observation(0.3, -0.7, False, "g1"),
            Observation(-0.1, -0.2, False, "g1"),
            Observation(0.2, -0.4, False, "g2"),
            Observation(1.1, 0.3, True, "g1"),
            Observation(0.9, 0.5, True, "g2"),
            Observation(1.4, 0.9, True, "g2"),
        ]
        ds = canonicalize(obs)
        swapped = obs.copy()
        swapped[0], swapped[1] = swapped[1], swapped[0]  # same group, both control
        ds2 = canonicalize(swapped)
        comps = build_components(ds, theta_j2)
        comps2 = build_components(ds2, theta_j2)
        perm = np.array([1, 0, 2, 3, 4, 5])
        np.testing.assert_array_equal(comps2.Kg, comps.Kg[np.ix_(perm, perm)])
        np.testing.assert_array_equal(comps2.D, comps.D[np.ix_(perm, perm)])
        np.testing.assert_array_equal(comps2.Sigma, comps.Sigma[perm])
        np.testing.assert_array_equal(comps2.Kdelta, comps.Kdelta)


class TestKdeltaMatrix:
    def test_se_over_index_grid(self):
        p = SEParams(1.5, 0.3)
        out = kdelta_matrix(4, p, KDELTA_SE)
        idx = np.arange(1.0, 5.0)
        expected = se_matrix(idx, idx, p)
        np.testing.assert_allclose(out, expected, rtol=1e-15)

    def test_unknown_mode(self):
        with pytest.raises(ValueError):
            kdelta_matrix(3, SEParams(1.0, 1.0), "bogus")
