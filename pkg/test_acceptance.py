#!/usr/bin/env python3
"""
Slow end-to-end checks: convergence rates, agreement with exact clustering,
scaling exponents and thread determinism.

These take minutes and are skipped unless RBSC_RUN_SLOW=1:

    RBSC_RUN_SLOW=1 python test_acceptance.py
"""

import os
import sys
import tempfile
import unittest

import numpy as np
from numpy.testing import assert_array_equal

from bench import ExperimentSpec, fit_scaling_exponent, rank_sweep_trace_gaps, run_experiment
from datasets import Dataset, SyntheticSpec, make_synthetic, standardize
from metrics import evaluate, nmi
from rb_features import KernelParams, exact_kernel_matrix, generate_rb_features
from spectral import METHODS, PipelineSeeds, exact_spectral_cluster, run_method, spectral_cluster_rb

RUN_SLOW = os.getenv("RBSC_RUN_SLOW", "0") == "1"
LAPLACIAN = KernelParams("laplacian", 1.0)


def _blobs(n, seed=0):
    return make_synthetic(SyntheticSpec(kind="blobs", K=3, N=n, d=2, separation=6.0, seed=seed))


@unittest.skipUnless(RUN_SLOW, "set RBSC_RUN_SLOW=1 to run acceptance checks")
class TestKernelApproximation(unittest.TestCase):
    """RB kernel approximation error against the exact kernel"""

    def test_error_halves_when_R_quadruples(self):
        """Test the mean error halves (within 25%) from R=256 to 1024 to 4096"""
        rng = np.random.default_rng(0)
        X = standardize(Dataset(rng.standard_normal((100, 5)))).X
        exact = exact_kernel_matrix(X, LAPLACIAN)
        iu = np.triu_indices(100, k=1)

        errors = []
        for R in (256, 1024, 4096):
            per_seed = []
            for seed in range(5):
                Z, _ = generate_rb_features(X, R, LAPLACIAN, seed)
                per_seed.append(np.mean(np.abs((Z @ Z.T).toarray()[iu] - exact[iu])))
            errors.append(float(np.mean(per_seed)))

        self.assertLessEqual(errors[-1], 0.02)
        for coarse, fine in zip(errors, errors[1:]):
            self.assertGreaterEqual(fine / coarse, 0.5 * 0.75)
            self.assertLessEqual(fine / coarse, 0.5 * 1.25)


@unittest.skipUnless(RUN_SLOW, "set RBSC_RUN_SLOW=1 to run acceptance checks")
class TestTraceGapRate(unittest.TestCase):
    """Trace gap of the RB and RF embeddings as R grows"""

    @classmethod
    def setUpClass(cls):
        cls.gaps = rank_sweep_trace_gaps(_blobs(1000), 3, [32, 64, 128, 256, 512], range(10), LAPLACIAN)
        cls.medians = cls.gaps.groupby(["method", "R"])["trace_gap"].median()

    def test_rb_rate(self):
        """Test the median RB gap is non-increasing with log-log slope <= -0.7"""
        rb = self.medians.loc["sc_rb"]
        self.assertTrue(np.all(np.diff(rb.to_numpy()) <= 0))
        slope, _ = np.polyfit(np.log(rb.index.to_numpy(dtype=float)), np.log(rb.to_numpy()), 1)
        self.assertLessEqual(slope, -0.7)

    def test_rb_not_worse_than_rf(self):
        """Test RB has the smaller median gap at R=64 and R=128"""
        for R in (64, 128):
            self.assertLessEqual(self.medians.loc[("sc_rb", R)], self.medians.loc[("sc_rf", R)])


@unittest.skipUnless(RUN_SLOW, "set RBSC_RUN_SLOW=1 to run acceptance checks")
class TestExactAgreement(unittest.TestCase):
    """SC_RB against exact spectral clustering with the same kernel"""

    def test_nmi_within_tolerance(self):
        """Test median SC_RB NMI at R=1024 is within 0.05 of exact SC over 5 seeds"""
        ds = _blobs(2000, seed=1)
        exact, approx = [], []
        for seed in range(5):
            exact.append(nmi(exact_spectral_cluster(ds, 3, LAPLACIAN, seed=seed).labels, ds.labels))
            result = spectral_cluster_rb(ds, 3, 1024, LAPLACIAN, PipelineSeeds.from_seed(seed))
            approx.append(nmi(result.labels, ds.labels))
        self.assertLessEqual(abs(np.median(approx) - np.median(exact)), 0.05)


@unittest.skipUnless(RUN_SLOW, "set RBSC_RUN_SLOW=1 to run acceptance checks")
class TestScalability(unittest.TestCase):
    """Total time grows at most slightly faster than linearly"""

    def _sweep(self, tmp, variable, values, N):
        spec = ExperimentSpec.from_dict({
            "name": f"{variable}-scaling",
            "synthetic": {"kind": "blobs", "K": 3, "N": N, "d": 2, "separation": 6, "seed": 0},
            "methods": ["sc_rb"],
            "sweep": {"variable": variable, "values": values},
            "seeds": [0, 1, 2],
            "R": 256,
            "output_dir": tmp,
        })
        return run_experiment(spec, os.path.join(tmp, f"{variable}.csv"))

    def test_sample_sweep_exponent(self):
        """Test the time exponent in N stays at or below 1.3"""
        with tempfile.TemporaryDirectory() as tmp:
            records = self._sweep(tmp, "N", [10000, 20000, 40000, 80000], 10000)
        self.assertTrue(all(r.ok for r in records))
        self.assertLessEqual(fit_scaling_exponent(records, "N"), 1.3)

    def test_rank_sweep_exponent(self):
        """Test the time exponent in R stays at or below 1.3"""
        with tempfile.TemporaryDirectory() as tmp:
            records = self._sweep(tmp, "R", [64, 128, 256, 512, 1024], 20000)
        self.assertTrue(all(r.ok for r in records))
        self.assertLessEqual(fit_scaling_exponent(records, "R"), 1.3)


@unittest.skipUnless(RUN_SLOW, "set RBSC_RUN_SLOW=1 to run acceptance checks")
class TestDeterminism(unittest.TestCase):
    """Every pipeline reproduces its labels across thread counts"""

    def test_all_methods(self):
        """Test bit-identical labels and equal metrics for 1, 2 and 8 threads"""
        ds = _blobs(1500, seed=3)
        for method in METHODS:
            runs = [run_method(method, ds, 3, 128, LAPLACIAN, seed=7, n_threads=t) for t in (1, 2, 8)]
            reports = [evaluate(r.labels, ds.labels) for r in runs]
            for other, report in zip(runs[1:], reports[1:]):
                assert_array_equal(runs[0].labels, other.labels)
                self.assertEqual(reports[0], report)


def run_tests():
    """Run all tests and return success status"""
    suite = unittest.TestLoader().loadTestsFromModule(sys.modules[__name__])
    runner = unittest.TextTestRunner(verbosity=2)
    result = runner.run(suite)
    return result.wasSuccessful()


if __name__ == '__main__':
    success = run_tests()
    sys.exit(0 if success else 1)
