import numpy as np
import pytest

from covbounds.data_model import MaskedDataset, build_design, validate_cov
from covbounds.errors import NotSymmetricError, SingularBlockError
from covbounds.mvn_stats import (
    MvnParams,
    conditional_law,
    conditional_mean,
    logdet_psd,
    min_eigenvalue,
    observed_loglik,
    sym_inverse,
)


def _params(mu, sigma):
    return MvnParams.from_arrays(mu, sigma)


def _dense_logpdf(x, mu, sigma):
    # direct density evaluation, independent of the eigen-based code path
    d = x - mu
    q = len(x)
    return -0.5 * (q * np.log(2 * np.pi) + np.log(np.linalg.det(sigma)) + d @ np.linalg.solve(sigma, d))


class TestObservedLoglik:
    def test_standard_normal_at_zero(self):
        ds = MaskedDataset.from_array([[0.0]])
        d = build_design([[0]], [[0]], 1, 1)
        ll = observed_loglik(ds, d, _params([0.0], [[1.0]]))
        assert ll == pytest.approx(-0.9189385, abs=1e-7)

    def test_split_blocks_equal_merged(self, rng):
        x = rng.standard_normal((6, 3))
        ds = MaskedDataset.from_array(x)
        params = _params(np.zeros(3), np.eye(3) + 0.2)
        one = build_design([range(6)], [range(3)], 6, 3)
        two = build_design([range(3), range(3, 6)], [range(3), range(3)], 6, 3)
        assert observed_loglik(ds, one, params) == pytest.approx(observed_loglik(ds, two, params), rel=1e-14)

    def test_matches_dense_density(self, rng):
        d = build_design([[0, 1], [2, 3, 4]], [[0, 1, 2], [1, 3]], 5, 4)
        x = rng.standard_normal((5, 4))
        x[~d.observed_mask()] = np.nan
        ds = MaskedDataset.from_array(x)
        A = rng.standard_normal((4, 4))
        sigma = A @ A.T + np.eye(4)
        mu = rng.standard_normal(4)
        expect = 0.0
        for k, g in enumerate(d.groups):
            J = d.block_vars(k)
            for i in d.block_rows(k):
                expect += _dense_logpdf(x[i, J], mu[J], sigma[np.ix_(J, J)])
        assert observed_loglik(ds, d, _params(mu, sigma)) == pytest.approx(expect, rel=1e-12)

    def test_free_entries_do_not_matter(self, fig2_design, rng):
        x = rng.standard_normal((2, 3))
        x[~fig2_design.observed_mask()] = np.nan
        ds = MaskedDataset.from_array(x)
        base = np.array([[1.0, 0.6, 0.0], [0.6, 1.0, 0.8], [0.0, 0.8, 1.0]])
        other = base.copy()
        other[0, 2] = other[2, 0] = 0.9
        l0 = observed_loglik(ds, fig2_design, _params(np.zeros(3), base))
        l1 = observed_loglik(ds, fig2_design, _params(np.zeros(3), other))
        assert abs(l0 - l1) <= 1e-10 * abs(l0)

    def test_singular_block(self):
        ds = MaskedDataset.from_array([[1.0, 1.0]])
        d = build_design([[0]], [[0, 1]], 1, 2)
        with pytest.raises(SingularBlockError) as info:
            observed_loglik(ds, d, _params(np.zeros(2), np.ones((2, 2))))
        assert info.value.block == 1


class TestConditionalLaw:
    def test_independence(self):
        law = conditional_law(_params(np.zeros(4), np.eye(4)), [0, 3], [1, 2])
        assert np.array_equal(law.coef, np.zeros((2, 2)))
        assert np.array_equal(law.cond_cov, np.eye(2))

    def test_bivariate(self):
        law = conditional_law(_params([0, 0], [[1, 0.5], [0.5, 1]]), [1], [0])
        assert law.coef == pytest.approx(np.array([[0.5]]), abs=1e-15)
        assert law.cond_cov == pytest.approx(np.array([[0.75]]), abs=1e-15)

    def test_schur_complement_psd(self, rng):
        A = rng.standard_normal((6, 6))
        law = conditional_law(_params(np.zeros(6), A @ A.T + 0.1 * np.eye(6)), [0, 2, 5], [1, 3, 4])
        assert np.linalg.eigvalsh(law.cond_cov)[0] >= 0

    def test_reconstructs_joint(self, rng):
        A = rng.standard_normal((5, 5))
        sigma = A @ A.T + np.eye(5)
        T, G = np.array([0, 3]), np.array([1, 2, 4])
        law = conditional_law(_params(np.zeros(5), sigma), T, G)
        s_gg = sigma[np.ix_(G, G)]
        s_tg = law.coef @ s_gg
        s_tt = law.cond_cov + law.coef @ s_gg @ law.coef.T
        assert s_tg == pytest.approx(sigma[np.ix_(T, G)], abs=1e-10)
        assert s_tt == pytest.approx(sigma[np.ix_(T, T)], abs=1e-10)

    def test_rejects_overlap_and_empty(self):
        params = _params(np.zeros(3), np.eye(3))
        with pytest.raises(ValueError):
            conditional_law(params, [0, 1], [1, 2])
        with pytest.raises(ValueError):
            conditional_law(params, [0], [])

    def test_singular_given_block(self):
        with pytest.raises(SingularBlockError):
            conditional_law(_params(np.zeros(3), np.ones((3, 3))), [0], [1, 2])


class TestConditionalMean:
    def test_centered_input(self, rng):
        A = rng.standard_normal((4, 4))
        mu = np.array([1.0, -2.0, 3.0, 0.5])
        law = conditional_law(_params(mu, A @ A.T + np.eye(4)), [0, 2], [1, 3])
        assert conditional_mean(law, mu, mu[[1, 3]], target=2) == pytest.approx(3.0)

    def test_bivariate_value(self):
        law = conditional_law(_params([0, 0], [[1, 0.5], [0.5, 1]]), [1], [0])
        assert conditional_mean(law, [0, 0], [2.0], target=1) == pytest.approx(1.0)

    def test_invariant_when_row_covariances_identified(self):
        # W (col 2) given (U, V) in a 4-variable design where W's covariances with
        # U and V are identified and only (W, X) is free
        mask_sigma = np.array([
            [1.0, 0.3, 0.2, 0.1],
            [0.3, 1.0, 0.4, 0.2],
            [0.2, 0.4, 1.0, 0.0],
            [0.1, 0.2, 0.0, 1.0],
        ])
        other = mask_sigma.copy()
        other[2, 3] = other[3, 2] = 0.5
        x = np.array([0.7, -1.1])
        laws = [conditional_law(_params(np.zeros(4), s), [2], [0, 1]) for s in (mask_sigma, other)]
        vals = [conditional_mean(l, np.zeros(4), x, target=2) for l in laws]
        assert vals[0] == vals[1]


class TestMatrixUtilities:
    def test_identity(self):
        assert logdet_psd(np.eye(4)) == 0.0
        assert min_eigenvalue(np.eye(4)) == 1.0

    def test_diag(self):
        assert logdet_psd(np.diag([2.0, 3.0])) == pytest.approx(np.log(6))
        assert min_eigenvalue(np.diag([2.0, 3.0])) == pytest.approx(2.0)

    def test_tiny_asymmetry_is_symmetrized(self, rng):
        A = rng.standard_normal((4, 4))
        S = A @ A.T + np.eye(4)
        S2 = S.copy()
        S2[0, 1] += 1e-13
        assert logdet_psd(S2) == pytest.approx(logdet_psd((S2 + S2.T) / 2), abs=1e-14)
        assert min_eigenvalue(S2) == min_eigenvalue((S2 + S2.T) / 2)

    def test_asymmetric_rejected(self):
        with pytest.raises(NotSymmetricError):
            logdet_psd(np.array([[1.0, 0.5], [0.0, 1.0]]))

    def test_singular_logdet_is_finite(self):
        assert np.isfinite(logdet_psd(np.zeros((2, 2))))

    def test_inverse_condition_threshold(self):
        with pytest.raises(SingularBlockError):
            sym_inverse(np.diag([1.0, 1e-13]))
        inv, logdet = sym_inverse(np.diag([2.0, 4.0]))
        assert inv == pytest.approx(np.diag([0.5, 0.25]))
        assert logdet == pytest.approx(np.log(8))
