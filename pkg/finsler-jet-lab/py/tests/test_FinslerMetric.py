import math
import os
import unittest
from unittest import mock

from hypothesis import given, settings
from hypothesis import strategies as st
import numpy as np
from numpy.testing import assert_allclose

from FinslerErrors import (
    DomainError,
    FinslerLabError,
    NotPositiveDefiniteError,
    ScenarioError,
    ZeroSectionError,
)
import FinslerMetric as fm

IDENTITY_TOLERANCE = 1e-10


class TestFinslerMetric(unittest.TestCase):

    def setUp(self):

        self.euclidean = fm.catalog_structure("euclidean", 2)
        self.randers = fm.catalog_structure("randers", 2, {"b": 0.3})
        self.sphere = fm.catalog_structure("round_sphere", 2)
        self.minkowski = fm.catalog_structure("locally_minkowski", 2)
        self.sample_spec = fm.SampleSpec(seed=42, count=64)

    def test_catalog_labels_and_text(self):

        self.assertEqual(self.euclidean.label, "euclidean")
        self.assertEqual(self.sphere.domain_box, fm.SPHERE_DOMAIN_BOX)
        labelled = fm.catalog_structure("randers", 2, {"b": 0.3, "label": "wind"})
        self.assertEqual(labelled.label, "wind")
        self.assertEqual(set(self.randers.params), {"alpha", "beta"})

    def test_catalog_errors(self):

        with self.assertRaises(ScenarioError):
            fm.catalog_structure("hyperbolic", 2)
        with self.assertRaises(ScenarioError):
            fm.catalog_structure("round_sphere", 3)
        with self.assertRaises(ScenarioError):
            fm.catalog_structure("riemannian", 2)
        with self.assertRaises(ScenarioError):
            fm.catalog_structure("riemannian", 2, {"metric": [["1", "t1"], ["0", "1"]]})
        with self.assertRaises(ScenarioError):
            fm.catalog_structure("randers", 2, {"beta": ["0.1"]})
        with self.assertRaises(ScenarioError):
            fm.catalog_structure("locally_minkowski", 2, {"f_squared": "t1^2*s1^2 + s2^2"})
        with self.assertRaises(ScenarioError):
            fm.make_structure(0, "s1^2")

    def test_catalog_structures_validate(self):

        # All identities hold to 1e-10 at 64 sampled points
        for fs in [self.euclidean, self.randers, self.sphere, self.minkowski]:
            report = fm.validate_structure(fs, self.sample_spec, IDENTITY_TOLERANCE)
            self.assertEqual(report.count, 64)
            self.assertTrue(report.passed, [c for c in report.checks if not c.passed])

    def test_riemannian_validates(self):

        fs = fm.catalog_structure(
            "riemannian", 2, {"metric": [["1 + t2^2", "0.5*t1"], ["0.5*t1", "2"]]}
        )
        report = fm.validate_structure(fs, fm.SampleSpec(count=16))
        self.assertTrue(report.passed)

    def test_randers_with_large_covector_fails(self):

        fs = fm.catalog_structure("randers", 2, {"b": 1.2})
        report = fm.validate_structure(fs, fm.SampleSpec(count=16))
        self.assertFalse(report.passed)
        norm = next(c for c in report.checks if c.name == "randers_beta_norm")
        self.assertFalse(norm.passed)
        self.assertAlmostEqual(norm.value, 1.2)

    def test_non_homogeneous_structure_fails(self):

        fs = fm.make_structure(2, "s1^2 + s2^2 + s1")
        report = fm.validate_structure(fs, fm.SampleSpec(count=8))
        failed = {c.name for c in report.checks if not c.passed}
        self.assertIn("homogeneity", failed)

    def test_sampling_is_deterministic(self):

        first = fm.sample_base_points(self.randers, fm.SampleSpec(seed=7, count=5))
        second = fm.sample_base_points(self.randers, fm.SampleSpec(seed=7, count=5))
        other = fm.sample_base_points(self.randers, fm.SampleSpec(seed=8, count=5))
        self.assertEqual(first, second)
        self.assertNotEqual(first, other)

    def test_sampling_respects_domain_box(self):

        points = fm.sample_base_points(self.sphere, fm.SampleSpec(count=32))
        for pt in points:
            self.assertTrue(0.3 <= pt.t[0] <= math.pi - 0.3)

    def test_sampling_box_on_zero_section(self):

        spec = fm.SampleSpec(count=1, s_box=[[0.0, 0.0], [0.0, 0.0]])
        with self.assertRaises(ScenarioError):
            fm.sample_base_points(self.euclidean, spec)

    def test_euclidean_tensors(self):

        pt = fm.make_point([0.1, 0.2], [0.3, -0.4])
        assert_allclose(fm.metric_tensor(self.euclidean, pt).components, np.eye(2))
        cartan = fm.cartan_tensor(self.euclidean, pt)
        assert_allclose(cartan.lower.components, np.zeros((2, 2, 2)), atol=1e-14)

    def test_randers_metric_tensor(self):

        pt = fm.make_point([0.0, 0.0], [0.6, 0.8])
        s = np.array(pt.s)
        b = np.array([0.3, 0.0])

        # g = (F/α)(δ - ℓℓ) + (ℓ + b)(ℓ + b) with ℓ = s/α
        alpha = np.linalg.norm(s)
        ell = s / alpha
        f = alpha + b @ s
        expected = (f / alpha) * (np.eye(2) - np.outer(ell, ell)) + np.outer(ell + b, ell + b)
        g = fm.metric_tensor(self.randers, pt).components
        assert_allclose(g, expected, atol=1e-12)

    def test_cartan_tensor_is_symmetric_and_mixed(self):

        pt = fm.make_point([0.0, 0.0], [0.6, -0.8])
        cartan = fm.cartan_tensor(self.randers, pt)
        lower = cartan.lower.components
        assert_allclose(lower, np.transpose(lower, (1, 0, 2)), atol=1e-12)
        assert_allclose(lower, np.transpose(lower, (2, 1, 0)), atol=1e-12)
        g = fm.metric_tensor(self.randers, pt).components
        assert_allclose(np.einsum("lb,bae->lae", g, cartan.mixed.components), lower, atol=1e-12)

    @given(
        st.floats(min_value=-1.0, max_value=1.0),
        st.floats(min_value=-1.0, max_value=1.0),
        st.floats(min_value=0.05, max_value=1.0),
    )
    @settings(max_examples=20, deadline=None)
    def test_euler_identity(self, t1, s1, s2):

        pt = fm.make_point([t1, 0.0], [s1, s2])
        tensors = fm.fundamental_tensors(self.randers, pt)
        s = np.array(pt.s)
        self.assertAlmostEqual(tensors.f_squared, s @ tensors.g @ s, places=12)
        assert_allclose(tensors.cartan @ s, np.zeros((2, 2)), atol=1e-12)

    def test_point_errors(self):

        with self.assertRaises(ZeroSectionError):
            fm.fundamental_tensors(self.euclidean, fm.make_point([0.0, 0.0], [0.0, 0.0]))
        with self.assertRaises(DomainError):
            fm.fundamental_tensors(self.sphere, fm.make_point([0.0, 0.0], [1.0, 0.0]))

    def test_indefinite_metric(self):

        fs = fm.make_structure(2, "s1^2 - s2^2")
        pt = fm.make_point([0.0, 0.0], [1.0, 0.5])
        with self.assertRaises(NotPositiveDefiniteError):
            fm.metric_tensor(fs, pt, strict=True)
        with self.assertLogs(level="WARNING"):
            fm.metric_tensor(fs, pt)

    def test_tensor_checks_symmetry(self):

        with self.assertRaises(FinslerLabError):
            fm.Tensor(np.array([[1.0, 2.0], [0.0, 1.0]]), "ll", ((0, 1),))

    def test_relative_residual(self):

        self.assertEqual(fm.relative_residual([], []), 0.0)
        self.assertAlmostEqual(fm.relative_residual([0.5], [0.25]), 0.25)
        self.assertAlmostEqual(fm.relative_residual([10.0], [9.0]), 0.1)

        # Small tensors compare absolutely
        self.assertAlmostEqual(fm.relative_residual([1e-6], [3e-6]), 2e-6, places=15)
        self.assertAlmostEqual(fm.relative_residual([0.0, 1e-9], [0.0, 0.0]), 1e-9, places=18)

    def test_thread_count(self):

        with mock.patch.dict(os.environ, {"FINSLERLAB_THREADS": "3"}):
            self.assertEqual(fm.get_thread_count(), 3)
            self.assertEqual(fm.map_points(lambda x: x * x, range(6)), [0, 1, 4, 9, 16, 25])
        with mock.patch.dict(os.environ, {"FINSLERLAB_THREADS": "many"}):
            with self.assertRaises(ScenarioError):
                fm.get_thread_count()
        with mock.patch.dict(os.environ, {"FINSLERLAB_THREADS": "0"}):
            with self.assertRaises(ScenarioError):
                fm.get_thread_count()

    def test_threaded_validation_matches_serial(self):

        serial = fm.validate_structure(self.randers, fm.SampleSpec(count=8))
        with mock.patch.dict(os.environ, {"FINSLERLAB_THREADS": "4"}):
            threaded = fm.validate_structure(self.randers, fm.SampleSpec(count=8))
        self.assertEqual(serial, threaded)


if __name__ == "__main__":
    unittest.main()
