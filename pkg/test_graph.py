#!/usr/bin/env python3
"""
Unit tests for the implicit normalized Laplacian.
"""

import os
import sys
import tempfile
import unittest

import numpy as np
import pandas as pd
import scipy.sparse as sp
from numpy.testing import assert_allclose

from graph import (
    DegreeVector,
    compute_degrees,
    dense_normalized_laplacian,
    laplacian_quadratic_form,
    save_degrees_csv,
    weight_rows,
)
from rb_features import KernelParams, generate_rb_features


def _random_sparse(n=200, D=120, density=0.05, seed=0):
    rng = np.random.default_rng(seed)
    Z = sp.random(n, D, density=density, format="csr", random_state=rng)
    # a shared column keeps every degree positive
    Z = sp.hstack([Z, sp.csr_matrix(np.full((n, 1), 0.1))]).tocsr()
    return Z


class TestDegrees(unittest.TestCase):
    """Test suite for the two-matvec degree computation"""

    def test_identity(self):
        """Test Z = I gives unit degrees"""
        deg = compute_degrees(sp.identity(2, format="csr"))
        assert_allclose(deg.values, [1.0, 1.0])
        self.assertEqual(deg.n_clamped, 0)

    def test_identical_rows(self):
        """Test two identical rows [1, 0] give degrees (2, 2)"""
        deg = compute_degrees(sp.csr_matrix(np.array([[1.0, 0.0], [1.0, 0.0]])))
        assert_allclose(deg.values, [2.0, 2.0])

    def test_matches_dense_row_sums(self):
        """Test degrees equal the row sums of the dense Z Z^T"""
        Z = _random_sparse()
        W = (Z @ Z.T).toarray()
        assert_allclose(compute_degrees(Z).values, W.sum(axis=1), rtol=0, atol=1e-10)

    def test_dense_input(self):
        """Test dense feature matrices are accepted"""
        Z = _random_sparse(seed=1).toarray()
        assert_allclose(compute_degrees(Z).values, (Z @ Z.T).sum(axis=1), atol=1e-10)

    def test_isolated_row_clamped(self):
        """Test an all-zero row is clamped to the floor"""
        Z = sp.csr_matrix(np.array([[1.0, 0.0], [0.0, 0.0]]))
        deg = compute_degrees(Z, floor=1e-12)
        self.assertEqual(deg.n_clamped, 1)
        self.assertEqual(deg.values[1], 1e-12)

    def test_rb_degrees_at_least_one(self):
        """Test RB rows have unit norm so every degree is at least 1"""
        rng = np.random.default_rng(2)
        Z, _ = generate_rb_features(rng.standard_normal((60, 3)), 32, KernelParams(), seed=0)
        self.assertTrue(np.all(compute_degrees(Z).values >= 1 - 1e-9))

    def test_relative_floor_bounds_signed_degrees(self):
        """Test a negative degree from signed features is lifted to a fraction of the median"""
        Z = np.array([[1.0, 0.0], [1.0, 0.0], [1.0, 0.0], [-0.9, 0.0]])
        deg = compute_degrees(Z, relative_floor=0.1)
        assert_allclose(deg.values, [2.1, 2.1, 2.1, 0.21], atol=1e-12)
        self.assertEqual(deg.n_clamped, 1)

    def test_relative_floor_bounds_row_weights(self):
        """Test no row weight exceeds sqrt(1 / ratio) times the median row weight"""
        rng = np.random.default_rng(5)
        Z = rng.standard_normal((300, 16)) / 4.0 + 0.05
        deg = compute_degrees(Z, relative_floor=0.1)
        scale = 1.0 / np.sqrt(deg.values)
        self.assertLessEqual(scale.max() / np.median(scale), np.sqrt(10.0) + 1e-9)

    def test_relative_floor_keeps_nonnegative_degrees(self):
        """Test degrees above the relative floor are untouched"""
        Z = _random_sparse(seed=6)
        plain = compute_degrees(Z)
        floored = compute_degrees(Z, relative_floor=1e-3)
        assert_allclose(floored.values, plain.values)
        self.assertEqual(floored.n_clamped, 0)

    def test_negative_relative_floor_rejected(self):
        """Test a negative relative floor is an error"""
        with self.assertRaises(ValueError):
            compute_degrees(np.eye(2), relative_floor=-0.5)


class TestWeightRows(unittest.TestCase):
    """Test suite for D^{-1/2} Z"""

    def test_unit_degrees_leave_matrix_unchanged(self):
        """Test deg = 1 gives Zhat = Z"""
        Z = _random_sparse(20, 10, seed=3)
        Zhat = weight_rows(Z, DegreeVector(np.ones(20)))
        assert_allclose(Zhat.toarray(), Z.toarray())

    def test_single_row_halved(self):
        """Test degree 4 halves the row"""
        Zhat = weight_rows(sp.csr_matrix(np.array([[2.0, 4.0]])), DegreeVector(np.array([4.0])))
        assert_allclose(Zhat.toarray(), [[1.0, 2.0]])

    def test_dense_oracle(self):
        """Test Zhat Zhat^T equals D^{-1/2} Z Z^T D^{-1/2}"""
        Z = _random_sparse(seed=4)
        deg = compute_degrees(Z)
        Zhat = weight_rows(Z, deg)
        W = (Z @ Z.T).toarray()
        s = 1 / np.sqrt(deg.values)
        expected = s[:, None] * W * s[None, :]
        self.assertLessEqual(np.abs((Zhat @ Zhat.T).toarray() - expected).max(), 1e-12)

    def test_sparsity_pattern_kept(self):
        """Test the non-zero structure is unchanged and the input is not modified"""
        Z = _random_sparse(seed=5)
        before = Z.data.copy()
        Zhat = weight_rows(Z, compute_degrees(Z))
        np.testing.assert_array_equal(Zhat.indices, Z.indices)
        np.testing.assert_array_equal(Z.data, before)

    def test_non_positive_degree_rejected(self):
        """Test a zero degree is a contract violation"""
        with self.assertRaises(ValueError):
            weight_rows(sp.identity(2, format="csr"), DegreeVector(np.array([1.0, 0.0])))

    def test_length_mismatch_rejected(self):
        """Test degree vector length must match the rows"""
        with self.assertRaises(ValueError):
            weight_rows(sp.identity(3, format="csr"), DegreeVector(np.ones(2)))


class TestQuadraticForm(unittest.TestCase):
    """Test suite for trace(U^T L U)"""

    def test_zero_matrix(self):
        """Test Zhat = 0 gives K"""
        U = np.linalg.qr(np.random.default_rng(0).standard_normal((10, 3)))[0]
        self.assertAlmostEqual(laplacian_quadratic_form(sp.csr_matrix((10, 4)), U), 3.0, places=12)

    def test_top_singular_vectors(self):
        """Test U spanning the top-K left singular vectors gives K - sum sigma^2"""
        Z = _random_sparse(50, 30, seed=6)
        Zhat = weight_rows(Z, compute_degrees(Z))
        U, s, _ = np.linalg.svd(Zhat.toarray(), full_matrices=False)
        self.assertAlmostEqual(laplacian_quadratic_form(Zhat, U[:, :4]), 4 - np.sum(s[:4] ** 2), places=10)

    def test_dense_oracle(self):
        """Test agreement with the dense trace computation"""
        Z = _random_sparse(seed=7)
        Zhat = weight_rows(Z, compute_degrees(Z))
        U = np.linalg.qr(np.random.default_rng(1).standard_normal((200, 5)))[0]
        L = np.eye(200) - (Zhat @ Zhat.T).toarray()
        self.assertAlmostEqual(laplacian_quadratic_form(Zhat, U), np.trace(U.T @ L @ U), delta=1e-10)

    def test_top_singular_value_is_one(self):
        """Test the largest singular value of Zhat is 1 for a connected graph"""
        Z = _random_sparse(40, 20, seed=8)
        Zhat = weight_rows(Z, compute_degrees(Z))
        self.assertAlmostEqual(np.linalg.norm(Zhat.toarray(), 2), 1.0, delta=1e-6)


class TestDenseLaplacian(unittest.TestCase):
    """Test suite for the dense oracle Laplacian"""

    def test_matches_implicit_form(self):
        """Test I - D^{-1/2} W D^{-1/2} equals I - Zhat Zhat^T"""
        Z = _random_sparse(30, 15, seed=9)
        W = (Z @ Z.T).toarray()
        L = dense_normalized_laplacian(W)
        Zhat = weight_rows(Z, compute_degrees(Z)).toarray()
        assert_allclose(L, np.eye(30) - Zhat @ Zhat.T, atol=1e-12)

    def test_degrees_csv(self):
        """Test the degree dump has index and degree columns"""
        with tempfile.TemporaryDirectory() as tmp:
            path = os.path.join(tmp, "deg.csv")
            save_degrees_csv(DegreeVector(np.array([1.5, 2.0])), path)
            frame = pd.read_csv(path)
        self.assertEqual(list(frame.columns), ["index", "degree"])
        assert_allclose(frame["degree"], [1.5, 2.0])


def run_tests():
    """Run all tests and return success status"""
    suite = unittest.TestLoader().loadTestsFromModule(sys.modules[__name__])
    runner = unittest.TextTestRunner(verbosity=2)
    result = runner.run(suite)
    return result.wasSuccessful()


if __name__ == '__main__':
    success = run_tests()
    sys.exit(0 if success else 1)
