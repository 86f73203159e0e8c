import numpy as np
import pytest

from sepcert.positive_lti import (
    certify_positive_lti,
    verify_diagonal_metric,
    verify_weight_decay,
)

from .test_optim import random_metzler


class TestCertifyPositiveLti:
    def test_identity(self):
        cert = certify_positive_lti(-np.eye(3))
        np.testing.assert_allclose(cert.p, np.ones(3))
        np.testing.assert_allclose(cert.q, np.ones(3))
        np.testing.assert_allclose(cert.d, np.ones(3))
        assert cert.decay == pytest.approx(1.0, abs=1e-9)

    def test_symmetric_example(self):
        A = np.array([[-2.0, 1.0], [1.0, -2.0]])
        cert = certify_positive_lti(A)
        np.testing.assert_allclose(cert.p, [1.0, 1.0])
        np.testing.assert_allclose(cert.d, [1.0, 1.0])
        # A^T D + D A = 2A has eigenvalues {-6, -2}: decay 1
        assert cert.decay == pytest.approx(1.0, abs=1e-6)

    def test_not_hurwitz(self):
        assert certify_positive_lti(np.array([[0.0, 1.0], [1.0, -3.0]])) is None

    def test_strongly_asymmetric(self):
        # the matrix that breaks the naive right-vector product construction
        A = np.array([[-2.0, 0.1], [10.0, -2.0]])
        cert = certify_positive_lti(A)
        assert cert is not None
        D = np.diag(cert.d)
        assert np.linalg.eigvalsh(A.T @ D + D @ A).max() < 0

    def test_certificate_invariants_random(self):
        rng = np.random.default_rng(10)
        for _ in range(100):
            A = random_metzler(rng, int(rng.integers(2, 11)), hurwitz=True)
            cert = certify_positive_lti(A)
            assert cert is not None
            # sum weights: A^T p < 0 elementwise
            assert np.all(A.T @ cert.p < 0)
            # max weights: the right comparison vector 1/q decays
            assert np.all(A @ (1.0 / cert.q) < 0)
            # product construction, exactly
            np.testing.assert_array_equal(cert.d, cert.p * cert.q)
            # certified rate
            D = np.diag(cert.d)
            S = A.T @ D + D @ A + 2.0 * cert.decay * D
            assert np.linalg.eigvalsh(S).max() <= 1e-9

    def test_not_hurwitz_random(self):
        rng = np.random.default_rng(11)
        for _ in range(100):
            A = random_metzler(rng, int(rng.integers(2, 11)), hurwitz=False)
            assert certify_positive_lti(A) is None

    def test_d_construction_validity(self):
        # checkable content of the product construction: lambda_max < 0 strictly
        rng = np.random.default_rng(12)
        for _ in range(100):
            A = random_metzler(rng, int(rng.integers(2, 9)), hurwitz=True)
            cert = certify_positive_lti(A)
            D = np.diag(cert.d)
            assert np.linalg.eigvalsh(A.T @ D + D @ A).max() < 0

    def test_scaling_covariance(self):
        rng = np.random.default_rng(13)
        for _ in range(20):
            A = random_metzler(rng, int(rng.integers(2, 7)), hurwitz=True)
            base = certify_positive_lti(A).decay
            for c in (0.25, 3.0, 40.0):
                scaled = certify_positive_lti(c * A).decay
                assert scaled == pytest.approx(c * base, abs=1e-6 * c)

    def test_decay_positive(self):
        rng = np.random.default_rng(14)
        for _ in range(30):
            A = random_metzler(rng, int(rng.integers(2, 8)), hurwitz=True)
            assert certify_positive_lti(A).decay > 0

    def test_rejects_non_metzler(self):
        with pytest.raises(ValueError, match="Metzler"):
            certify_positive_lti(np.array([[-1.0, -0.5], [0.0, -1.0]]))


class TestVerifyDiagonalMetric:
    def test_examples(self):
        assert verify_diagonal_metric(-np.eye(2), np.ones(2), 1.0) is True
        assert verify_diagonal_metric(-np.eye(2), np.ones(2), 1.01) is False
        A = np.array([[-1.0, 0.5], [0.5, -1.0]])
        assert verify_diagonal_metric(A, np.ones(2), 0.5) is True

    def test_works_on_non_metzler_matrices(self):
        # perturbation re-checks use arbitrary sign patterns
        A = np.array([[-2.0, -0.3], [0.4, -2.0]])
        assert verify_diagonal_metric(A, np.ones(2), 1.0) is True

    def test_validates_inputs(self):
        with pytest.raises(ValueError):
            verify_diagonal_metric(-np.eye(2), np.ones(2), -0.5)
        with pytest.raises(ValueError):
            verify_diagonal_metric(-np.eye(2), np.array([1.0, 0.0]), 0.5)


class TestVerifyWeightDecay:
    def test_identity_example(self):
        rep = verify_weight_decay(-np.eye(2), np.ones(2), np.ones(2))
        assert rep.margin_sum == pytest.approx(1.0)
        assert rep.margin_max == pytest.approx(1.0)
        assert rep.valid

    def test_symmetric_example(self):
        A = np.array([[-2.0, 1.0], [1.0, -2.0]])
        rep = verify_weight_decay(A, np.ones(2), np.ones(2))
        assert rep.margin_sum == pytest.approx(1.0)
        assert rep.margin_max == pytest.approx(1.0)

    def test_invalid_weights_reported(self):
        A = np.array([[-1.0, 2.0], [2.0, -1.0]])
        rep = verify_weight_decay(A, np.ones(2), np.ones(2))
        assert rep.margin_sum == pytest.approx(-1.0)
        assert not rep.valid

    def test_margins_match_certificate(self):
        rng = np.random.default_rng(15)
        for _ in range(30):
            A = random_metzler(rng, int(rng.integers(2, 9)), hurwitz=True)
            cert = certify_positive_lti(A)
            rep = verify_weight_decay(A, cert.p, cert.q)
            assert rep.valid

    def test_rejects_nonpositive_weights(self):
        with pytest.raises(ValueError):
            verify_weight_decay(-np.eye(2), np.array([1.0, -1.0]), np.ones(2))
