import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from specmix import (
    Model,
    ModelConstants,
    MomentSet,
    combine_moments,
    gmm_estimate_sigma2,
    gmm_moments,
    lda_center_moments,
    lda_doc_statistics,
    lda_moments,
    lda_raw_moments,
)
from specmix.exceptions import (
    DegenerateDataError,
    InsufficientLengthError,
    ShapeMismatchError,
)

from conftest import brute_force_doc_statistics


def assert_m3_symmetric(m3, tol=1e-12):
    scale = max(np.abs(m3).max(), 1e-30)
    for perm in [(0, 2, 1), (1, 0, 2), (1, 2, 0), (2, 0, 1), (2, 1, 0)]:
        assert np.abs(m3 - m3.transpose(perm)).max() <= tol * scale


class TestModelConstants:
    def test_lda_beta_gamma_formulas(self):
        k, alpha_b = 4, 0.7
        c = ModelConstants.for_lda(k=k, alpha_b=alpha_b)
        a0 = k * alpha_b
        assert c.beta == pytest.approx(alpha_b / ((a0 + 1) * a0), rel=1e-15)
        assert c.gamma == pytest.approx(
            2 * alpha_b / ((a0 + 2) * (a0 + 1) * a0), rel=1e-15)

    def test_gmm_weights_are_beta_and_gamma(self):
        w = np.array([0.2, 0.3, 0.5])
        c = ModelConstants.for_gmm(k=3, weights=w)
        assert np.array_equal(c.beta, w)
        assert np.array_equal(c.gamma, w)

    def test_invalid(self):
        with pytest.raises(ValueError):
            ModelConstants.for_lda(k=3, alpha_b=0.0)
        with pytest.raises(ValueError):
            ModelConstants.for_gmm(k=2, weights=np.array([0.7, 0.7]))


class TestGmmSigma2:
    def test_identical_points_give_zero(self):
        x = np.tile(np.array([[1.0], [2.0], [-3.0]]), (1, 2))
        assert gmm_estimate_sigma2(x) == 0.0

    def test_constant_dimension_gives_zero(self, rng):
        x = rng.standard_normal((4, 200))
        x[2] = 5.0
        assert gmm_estimate_sigma2(x) == pytest.approx(0.0, abs=1e-12)

    def test_isotropic_noise_recovered(self, rng):
        # oracle: eigen-decomposition of the sample covariance of a pure
        # Gaussian; at N=100000 the smallest-eigenvalue bias is within 5%
        mu = np.array([1.0, -2.0, 0.5])
        x = mu[:, None] + 2.0 * rng.standard_normal((3, 100_000))
        assert gmm_estimate_sigma2(x) == pytest.approx(4.0, rel=0.05)

    def test_too_few_points(self):
        with pytest.raises(DegenerateDataError):
            gmm_estimate_sigma2(np.zeros((3, 1)))


class TestGmmMoments:
    def test_single_zero_observation(self):
        ms = gmm_moments(np.zeros((3, 1)), sigma2=0.0)
        assert np.all(ms.m1 == 0) and np.all(ms.m2 == 0) and np.all(ms.m3 == 0)
        assert ms.n == 1

    def test_single_observation_outer_products(self):
        x = np.array([1.0, -2.0, 0.5])
        ms = gmm_moments(x[:, None], sigma2=0.0)
        assert np.allclose(ms.m2, np.outer(x, x))
        assert np.allclose(ms.m3, x[:, None, None] * x[None, :, None] * x[None, None, :])

    def test_sigma2_correction_matches_population(self, rng):
        # frozen generating parameters; oracle is the analytic rank-K form
        d, n = 5, 200_000
        a = rng.standard_normal((d, 2)) * 2.0
        w = np.array([0.4, 0.6])
        sigma2 = 0.5
        labels = rng.choice(2, size=n, p=w)
        x = a[:, labels] + np.sqrt(sigma2) * rng.standard_normal((d, n))
        ms = gmm_moments(x, sigma2=sigma2)
        target_m2 = a @ np.diag(w) @ a.T
        assert np.linalg.norm(ms.m2 - target_m2) <= 0.02 * np.linalg.norm(target_m2)
        target_m3 = sum(w[k] * np.einsum("a,b,c->abc", a[:, k], a[:, k], a[:, k])
                        for k in range(2))
        assert np.linalg.norm(ms.m3 - target_m3) <= 0.03 * np.linalg.norm(target_m3)

    def test_m3_symmetry(self, rng):
        x = rng.standard_normal((4, 50))
        ms = gmm_moments(x, sigma2=0.3)
        assert_m3_symmetric(ms.m3)

    def test_empty_dataset(self):
        with pytest.raises(DegenerateDataError):
            gmm_moments(np.zeros((3, 0)), sigma2=0.0)


class TestDocStatistics:
    def test_repeated_single_word(self):
        c = np.zeros(4)
        c[1] = 3.0
        m1, pair, triple = lda_doc_statistics(c)
        assert m1[1] == 1.0
        expected_pair = np.zeros((4, 4))
        expected_pair[1, 1] = 1.0
        assert np.allclose(pair, expected_pair)
        expected_triple = np.zeros((4, 4, 4))
        expected_triple[1, 1, 1] = 1.0
        assert np.allclose(triple, expected_triple)

    def test_three_distinct_words(self):
        # all 6 ordered distinct position pairs enumerated by hand
        c = np.array([1.0, 1.0, 1.0, 0.0])
        _, pair, _ = lda_doc_statistics(c)
        expected = np.zeros((4, 4))
        expected[:3, :3] = (np.ones((3, 3)) - np.eye(3)) / 6.0
        assert np.allclose(pair, expected)

    def test_matches_brute_force_enumeration(self, rng):
        for _ in range(10):
            c = rng.integers(0, 4, size=5).astype(float)
            c[rng.integers(0, 5)] += max(0, 6 - c.sum())
            if c.sum() < 3:
                continue
            m1, pair, triple = lda_doc_statistics(c)
            bm1, bpair, btriple = brute_force_doc_statistics(c)
            assert np.abs(m1 - bm1).max() < 1e-12
            assert np.abs(pair - bpair).max() < 1e-12
            assert np.abs(triple - btriple).max() < 1e-12

    def test_short_document_rejected(self):
        with pytest.raises(InsufficientLengthError):
            lda_doc_statistics(np.array([1.0, 1.0]))


class TestLdaMoments:
    def test_vanishing_concentration_single_doc(self):
        docs = np.zeros((3, 1))
        docs[0, 0] = 5.0
        consts = ModelConstants.for_lda(k=2, alpha_b=1e-12)
        ms = lda_moments(docs, consts)
        expected = np.zeros((3, 3))
        expected[0, 0] = 1.0
        assert np.allclose(ms.m2, expected, atol=1e-9)

    def test_monte_carlo_matches_analytic_m2(self, rng):
        # oracle: beta * sum_k a_k a_k^T with the generating topics
        d, k, n, ell = 20, 4, 100_000, 10
        a = rng.dirichlet(np.full(d, 0.5), size=k).T
        consts = ModelConstants.for_lda(k=k, alpha_b=1.0)
        b = rng.dirichlet(np.full(k, 1.0), size=n)
        probs = b @ a.T
        docs = np.empty((d, n))
        for i in range(n):
            docs[:, i] = rng.multinomial(ell, probs[i])
        ms = lda_moments(docs, consts, with_m3=False)
        target = consts.beta * (a @ a.T)
        assert np.linalg.norm(ms.m2 - target) <= 0.02 * np.linalg.norm(target)

    def test_m3_symmetry(self, rng):
        docs = rng.integers(0, 5, size=(6, 40)).astype(float)
        docs[0] += 3.0
        ms = lda_moments(docs, ModelConstants.for_lda(k=3, alpha_b=0.5))
        assert_m3_symmetric(ms.m3)

    def test_short_document_names_index(self):
        docs = np.full((4, 3), 2.0)
        docs[:, 1] = 0.0
        docs[0, 1] = 2.0
        with pytest.raises(InsufficientLengthError) as exc:
            lda_moments(docs, ModelConstants.for_lda(k=2, alpha_b=1.0))
        assert exc.value.doc_index == 1
        assert "1" in str(exc.value)


class TestCombineMoments:
    def test_zero_pseudo_count_is_identity(self, rng):
        x = rng.standard_normal((3, 10))
        mt = gmm_moments(x, sigma2=0.1)
        mp = MomentSet(m1=np.ones(3), m2=np.eye(3), m3=np.zeros((3, 3, 3)), n=0.0)
        out = combine_moments(mt, mp)
        assert np.array_equal(out.m1, mt.m1)
        assert np.array_equal(out.m2, mt.m2)
        assert np.array_equal(out.m3, mt.m3)

    def test_equal_weight_average(self):
        mt = MomentSet(m1=np.zeros(2), m2=np.zeros((2, 2)), m3=None, n=7.0)
        m = np.array([[2.0, 0.0], [0.0, 4.0]])
        mp = MomentSet(m1=np.array([2.0, 2.0]), m2=m, m3=None, n=7.0)
        out = combine_moments(mt, mp)
        assert np.allclose(out.m2, m / 2.0)
        assert np.allclose(out.m1, np.array([1.0, 1.0]))
        assert out.n == 14.0

    def test_gmm_concatenation_equivalence(self, rng):
        # oracle: direct recomputation on the concatenated data
        xt = rng.standard_normal((4, 30))
        xp = rng.standard_normal((4, 11)) + 1.0
        sigma2 = 0.7
        combined = combine_moments(gmm_moments(xt, sigma2), gmm_moments(xp, sigma2))
        direct = gmm_moments(np.hstack([xt, xp]), sigma2)
        assert np.abs(combined.m1 - direct.m1).max() < 1e-12
        assert np.abs(combined.m2 - direct.m2).max() < 1e-12
        assert np.abs(combined.m3 - direct.m3).max() < 1e-12

    def test_lda_concatenation_equivalence_on_raw(self, rng):
        docs_a = rng.integers(0, 4, size=(5, 12)).astype(float) + 1.0
        docs_b = rng.integers(0, 6, size=(5, 7)).astype(float) + 1.0
        consts = ModelConstants.for_lda(k=2, alpha_b=0.8)
        combined_raw = combine_moments(lda_raw_moments(docs_a), lda_raw_moments(docs_b))
        direct_raw = lda_raw_moments(np.hstack([docs_a, docs_b]))
        assert np.abs(combined_raw.m2 - direct_raw.m2).max() < 1e-12
        assert np.abs(combined_raw.m3 - direct_raw.m3).max() < 1e-12
        centered = lda_center_moments(combined_raw, consts)
        direct = lda_moments(np.hstack([docs_a, docs_b]), consts)
        assert np.abs(centered.m2 - direct.m2).max() < 1e-12
        assert np.abs(centered.m3 - direct.m3).max() < 1e-12

    def test_shape_mismatch(self, rng):
        mt = gmm_moments(rng.standard_normal((3, 5)), 0.0, with_m3=False)
        mp = gmm_moments(rng.standard_normal((4, 5)), 0.0, with_m3=False)
        with pytest.raises(ShapeMismatchError):
            combine_moments(mt, mp)


@settings(deadline=None, max_examples=25)
@given(st.lists(st.integers(min_value=0, max_value=5), min_size=3, max_size=7))
def test_doc_statistics_brute_force_property(counts):
    c = np.asarray(counts, dtype=float)
    if c.sum() < 3:
        c[0] += 3 - c.sum()
    m1, pair, triple = lda_doc_statistics(c)
    bm1, bpair, btriple = brute_force_doc_statistics(c)
    assert np.abs(m1 - bm1).max() < 1e-12
    assert np.abs(pair - bpair).max() < 1e-12
    assert np.abs(triple - btriple).max() < 1e-12
