import math
import unittest

import numpy as np
from numpy.testing import assert_allclose

from FinslerErrors import OrderExceededError, UnsupportedVarianceError
import BerwaldConnection as bc
import FinslerMetric as fm
import ScalarExpr as se

GEOMETRY_TOLERANCE = 1e-8


class TestBerwaldConnection(unittest.TestCase):

    def setUp(self):

        self.sphere = fm.catalog_structure("round_sphere", 2)
        self.randers = fm.catalog_structure(
            "randers", 2, {"beta": ["0.3*cos(t2)", "0.1*sin(t1)"]}
        )
        self.constant_randers = fm.catalog_structure("randers", 2, {"b": 0.3})
        self.minkowski = fm.catalog_structure("locally_minkowski", 2)
        self.points = fm.sample_base_points(self.randers, fm.SampleSpec(seed=3, count=6))
        self.sphere_point = fm.make_point([1.1, 0.4], [0.3, -0.7])

    def test_geometry_identities_hold(self):

        # Spray forms, N = ∂G/∂s, Γs = N, 2G = Ns and B = Γ + C_{|0}
        for fs in [self.randers, self.minkowski]:
            for pt in self.points:
                geo = bc.base_geometry(fs, pt)
                for name, residual in bc.geometry_residuals(geo).items():
                    self.assertLessEqual(residual, GEOMETRY_TOLERANCE, (fs.label, name, pt))

    def test_sphere_spray(self):

        theta = self.sphere_point.t[0]
        s1, s2 = self.sphere_point.s
        expected = [
            -0.5 * math.sin(theta) * math.cos(theta) * s2**2,
            math.cos(theta) / math.sin(theta) * s1 * s2,
        ]
        assert_allclose(bc.spray(self.sphere, self.sphere_point), expected, atol=1e-12)

    def test_sphere_berwald_is_levi_civita(self):

        geo = bc.base_geometry(self.sphere, self.sphere_point)
        theta = self.sphere_point.t[0]
        gamma = np.zeros((2, 2, 2))
        gamma[0, 1, 1] = -math.sin(theta) * math.cos(theta)
        gamma[1, 0, 1] = gamma[1, 1, 0] = math.cos(theta) / math.sin(theta)
        assert_allclose(geo.gamma, gamma, atol=1e-12)
        assert_allclose(geo.b, gamma, atol=1e-10)
        assert_allclose(geo.p_curvature, np.zeros((2, 2, 2, 2)), atol=1e-9)

    def test_sphere_curvature(self):

        curvatures = bc.berwald_torsion_curvature(self.sphere, self.sphere_point)
        curvature = curvatures.curvature.components
        theta = self.sphere_point.t[0]
        self.assertAlmostEqual(curvature[0, 1, 1, 0], math.sin(theta) ** 2, places=8)
        self.assertAlmostEqual(curvature[1, 0, 0, 1], 1.0, places=8)

        # Antisymmetric in the last two indices
        assert_allclose(curvature, -np.swapaxes(curvature, 2, 3), atol=1e-15)

    def test_constant_randers_is_flat(self):

        # Parallel β leaves the straight lines of α as geodesics
        pt = self.points[0]
        geo = bc.base_geometry(self.constant_randers, pt)
        assert_allclose(geo.spray, np.zeros(2), atol=1e-12)
        assert_allclose(geo.b, np.zeros((2, 2, 2)), atol=1e-10)
        assert_allclose(geo.curvature, np.zeros((2, 2, 2, 2)), atol=1e-8)

    def test_minkowski_connection_vanishes(self):

        geo = bc.base_geometry(self.minkowski, self.points[1])
        assert_allclose(geo.n, np.zeros((2, 2)), atol=1e-12)
        assert_allclose(geo.torsion, np.zeros((2, 2, 2)), atol=1e-10)

    def test_p_curvature_is_symmetric(self):

        for pt in self.points:
            curvatures = bc.berwald_torsion_curvature(self.randers, pt)
            fm.check_symmetry(curvatures.p_curvature.components, (1, 2, 3), 1e-9)

    def test_nonlinear_connection_is_homogeneous(self):

        pt = self.points[2]
        n = bc.nonlinear_cartan(self.randers, pt).components
        scaled = fm.make_point(pt.t, 2.5 * np.array(pt.s))
        assert_allclose(bc.nonlinear_cartan(self.randers, scaled).components, 2.5 * n, atol=1e-10)

    def test_spray_connection_and_berwald_scale_with_direction(self):

        # G, N and B are homogeneous of degrees 2, 1 and 0 in s
        for pt in self.points[:3]:
            geo = bc.base_geometry(self.randers, pt, 4)
            for scale in [0.5, 2.0]:
                scaled = bc.base_geometry(
                    self.randers, fm.make_point(pt.t, scale * np.array(pt.s)), 4
                )
                assert_allclose(scaled.spray, scale**2 * geo.spray, atol=1e-10)
                assert_allclose(scaled.n, scale * geo.n, atol=1e-10)
                assert_allclose(scaled.b, geo.b, atol=1e-10)

    def test_berwald_coefficients_transform_under_linear_change(self):

        # New coordinates t̄ = A t with F̄(t̄, s̄) = F(A⁻¹t̄, A⁻¹s̄)
        a = np.array([[2.0, 1.0], [0.5, 1.5]])
        a_inv = np.linalg.inv(a)
        names = se.source_variables(2)
        replacements = {}
        for prefix in ["t", "s"]:
            for i in range(2):
                text = f"{float(a_inv[i, 0])!r}*{prefix}1 + {float(a_inv[i, 1])!r}*{prefix}2"
                replacements[f"{prefix}{i + 1}"] = se.parse(text, names)
        pulled = fm.make_structure(
            2, se.to_text(se.substitute(self.randers.f_squared, replacements)), "linear change"
        )
        for pt in self.points[:3]:
            b = bc.base_geometry(self.randers, pt, 4).b
            moved = fm.make_point(a @ np.array(pt.t), a @ np.array(pt.s))
            expected = np.einsum("gm,mjk,ja,kb->gab", a, b, a_inv, a_inv)
            assert_allclose(bc.base_geometry(pulled, moved, 4).b, expected, atol=1e-10)

    def test_berwald_coefficients_are_symmetric(self):

        b = bc.berwald_coeffs(self.randers, self.points[3]).components
        assert_allclose(b, np.swapaxes(b, 1, 2), atol=1e-15)
        christoffel = bc.generalized_christoffel(self.randers, self.points[3]).components
        assert_allclose(christoffel, np.swapaxes(christoffel, 1, 2), atol=1e-15)

    def test_rund_connection_is_compatible(self):

        pt = self.points[4]
        for field in ["g", "s", "F"]:
            derivative = bc.rund_h_covariant(self.randers, pt, field)
            assert_allclose(derivative, np.zeros_like(derivative), atol=1e-9, err_msg=field)

    def test_rund_derivative_of_scalar_expression(self):

        # δt¹/δt^γ is the unit covector, t carries no s dependence
        pt = self.points[5]
        field = se.parse("t1", self.randers.variables)
        assert_allclose(bc.rund_h_covariant(self.randers, pt, field), [1.0, 0.0])

        # δs¹/δt^γ = −N¹_γ
        field = se.parse("s1", self.randers.variables)
        n = bc.base_geometry(self.randers, pt, 3).n
        assert_allclose(bc.rund_h_covariant(self.randers, pt, field), -n[0], atol=1e-12)

    def test_unsupported_field(self):

        with self.assertRaises(UnsupportedVarianceError):
            bc.rund_h_covariant(self.randers, self.points[0], "torsion")

    def test_order_requirements(self):

        with self.assertRaises(OrderExceededError):
            bc.base_geometry(self.randers, self.points[0], 2)
        with self.assertRaises(OrderExceededError):
            bc.berwald_torsion_curvature(self.randers, self.points[0], 4)
        geo = bc.base_geometry(self.randers, self.points[0], 4)
        self.assertIsNone(geo.curvature)
        with self.assertRaises(OrderExceededError):
            geo.require("b", "curvature")

    def test_formal_christoffel(self):

        gamma = bc.formal_christoffel(self.sphere, self.sphere_point)
        self.assertEqual(gamma.variance, "ull")
        theta = self.sphere_point.t[0]
        self.assertAlmostEqual(
            gamma.components[0, 1, 1], -math.sin(theta) * math.cos(theta), places=12
        )


if __name__ == "__main__":
    unittest.main()
