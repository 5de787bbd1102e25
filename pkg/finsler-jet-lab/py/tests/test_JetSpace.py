import unittest

import numpy as np
from numpy.testing import assert_allclose, assert_array_equal

from FinslerErrors import DimensionMismatchError, ScenarioError, TargetZeroSectionError
import AffineMaps as am
import BerwaldConnection as bc
import FinslerMetric as fm
import JetSpace as js

JET_TOLERANCE = 1e-7


class TestJetSpace(unittest.TestCase):

    def setUp(self):

        self.euclidean = fm.catalog_structure("euclidean", 2)
        self.sphere = fm.catalog_structure("round_sphere", 2)
        self.randers = fm.catalog_structure(
            "randers", 2, {"beta": ["0.3*cos(t2)", "0.1*sin(t1)"]}
        )
        self.spec = js.JetSampleSpec(seed=5, count=3)
        self.jp = js.sample_jet_points(self.randers, self.sphere, self.spec)[0]
        self.jet_geo = js.jet_geometry(self.randers, self.sphere, self.jp)

    def test_jet_point_coordinates(self):

        jp = js.JetPoint([0.1, 0.2], [1.0, 2.0], [0.3, 0.4], [[1, 2], [3, 4]], [[1, 0], [0, 1]])
        assert_array_equal(jp.fiber_direction, [1.0, 2.0])
        self.assertEqual(jp.jet_coordinates.shape, (2, 4))
        self.assertEqual(jp.target_point, fm.make_point([0.3, 0.4], [1.0, 2.0]))
        self.assertEqual(jp.to_dict()["x_alpha"], [[1.0, 2.0], [3.0, 4.0]])
        with self.assertRaises(DimensionMismatchError):
            js.JetPoint([0.1, 0.2], [1.0], [0.3], [[1, 2]], [[1, 0]])

    def test_jet_point_zero_sections(self):

        jp = js.JetPoint([0.1, 0.2], [1.0, 0.0], [0.3, 0.4], np.eye(2), [[0, 1], [0, 1]])
        with self.assertRaises(TargetZeroSectionError):
            js.check_jet_point(jp)

    def test_sampling_is_deterministic(self):

        first = js.sample_jet_points(self.randers, self.sphere, self.spec)
        second = js.sample_jet_points(self.randers, self.sphere, self.spec)
        for a, b in zip(first, second):
            self.assertEqual(a.to_dict(), b.to_dict())

        # x is drawn from the domain of the target
        for jp in first:
            self.assertTrue(0.3 <= jp.x[0] <= np.pi - 0.3)

        bad = js.JetSampleSpec(count=1, x_box=[[0.0, 1.0]])
        with self.assertRaises(ScenarioError):
            js.sample_jet_points(self.randers, self.sphere, bad)

    def test_jet_geometry_checks_dimensions(self):

        line = fm.catalog_structure("euclidean", 1)
        with self.assertRaises(DimensionMismatchError):
            js.jet_geometry(self.randers, line, self.jp)

    def test_temporal_connection_from_normal_components(self):

        p = 2
        blocks = js.berwald_temporal_nlc(self.randers, self.jp, self.jet_geo.source)
        full = js.temporal_nlc_from_normal(self.randers, self.jp, self.jet_geo.source)
        assert_allclose(full[:, :p, :p], blocks["M1"], atol=1e-14)
        assert_allclose(full[:, p:, :p], blocks["M2"], atol=1e-14)
        assert_allclose(full[:, :p, p:], blocks["M3"], atol=1e-14)
        assert_array_equal(blocks["M4"], np.zeros((2, 2, 2)))
        assert_array_equal(full[:, p:, p:], np.zeros((2, 2, 2)))

    def test_spatial_connection(self):

        spatial = js.berwald_spatial_nlc(self.sphere, self.jp, self.jet_geo.target)
        b_target = self.jet_geo.target.b
        assert_allclose(
            spatial["N2"][:, 0, :], b_target @ self.jp.y_a[:, 0], atol=1e-14
        )

    def test_dconnection_coefficients(self):

        connection = js.jet_dconnection(self.randers, self.sphere, self.jp, self.jet_geo)
        self.assertEqual(len(connection.coefficients), 11)
        self.assertEqual(connection.coefficients["L_hh"].shape, (2, 2, 2, 2, 2))
        self.assertEqual(connection.normal.shape, (4, 4, 4))
        assert_array_equal(connection.normal[:2, 2:, :], np.zeros((2, 2, 4)))

    def test_delta_factorizations_are_exact(self):

        blocks = js.dcurvatures_closed(self.randers, self.sphere, self.jp, self.jet_geo).blocks
        delta = np.eye(2)
        assert_array_equal(blocks["C14"], -np.einsum("li,adbc->ladibc", delta, blocks["C1"]))
        assert_array_equal(blocks["C16"], -np.einsum("li,adbc->ladibc", delta, blocks["C5"]))
        assert_array_equal(blocks["C23"], np.einsum("ae,libk->laeibk", delta, blocks["C10"]))
        assert_array_equal(blocks["C30"], np.einsum("ae,lcijk->laceijk", delta, blocks["C13"]))
        assert_array_equal(blocks["C7"], blocks["C1"])
        assert_array_equal(blocks["C5"], -blocks["C3"])

    def test_alternated_blocks_are_antisymmetric(self):

        torsions = js.dtorsions_closed(self.randers, self.sphere, self.jp, self.jet_geo).blocks
        curvatures = js.dcurvatures_closed(self.randers, self.sphere, self.jp, self.jet_geo).blocks
        for label in ["T4", "T7"]:
            assert_array_equal(torsions[label], -np.swapaxes(torsions[label], 2, 3))
        for label in ["T14", "T15"]:
            assert_array_equal(torsions[label], -np.swapaxes(torsions[label], 2, 3))
        for label in ["C1", "C2", "C12"]:
            assert_array_equal(curvatures[label], -np.swapaxes(curvatures[label], 2, 3))

    def test_euclidean_blocks_vanish(self):

        report = js.cross_validate(self.euclidean, self.euclidean, self.spec, scenario="flat")
        self.assertTrue(report.overall_pass)
        self.assertEqual(report.scenario, "flat")
        self.assertEqual(len(report.blocks), 45)
        for block in report.blocks:
            self.assertLessEqual(block.max_abs_closed, 1e-14, block.label)
        self.assertLessEqual(max(report.vanishing.values()), 1e-12)

    def test_randers_to_sphere(self):

        report = js.cross_validate(self.randers, self.sphere, self.spec, JET_TOLERANCE)
        self.assertTrue(report.overall_pass, report.failing_blocks)
        self.assertEqual(report.samples, 3)
        self.assertEqual(report.failures, [])
        self.assertLessEqual(max(report.vanishing.values()), 1e-6)

        # The structures are curved, so the comparison is not vacuous
        by_label = {block.label: block for block in report.blocks}
        self.assertGreater(by_label["C12"].max_abs_closed, 1e-3)
        self.assertGreater(by_label["T1"].max_abs_closed, 1e-3)

    def test_randers_to_randers(self):

        report = js.cross_validate(
            self.randers, self.randers, js.JetSampleSpec(seed=9, count=2), JET_TOLERANCE
        )
        self.assertTrue(report.overall_pass, report.failing_blocks)

    def test_catalog_pairs_at_hundred_points(self):

        minkowski = fm.catalog_structure("locally_minkowski", 2)
        pairs = [
            (self.euclidean, self.euclidean),
            (self.sphere, self.euclidean),
            (self.randers, self.sphere),
            (self.randers, self.randers),
            (minkowski, self.randers),
        ]
        spec = js.JetSampleSpec(seed=42, count=100)
        for src, tgt in pairs:
            report = js.cross_validate(src, tgt, spec, JET_TOLERANCE)
            self.assertEqual(report.samples, 100)
            self.assertEqual(report.failures, [], (src.label, tgt.label))
            self.assertTrue(report.overall_pass, (src.label, tgt.label, report.failing_blocks))

    def test_injected_fault_fails(self):

        report = js.cross_validate(
            self.euclidean, self.euclidean, js.JetSampleSpec(count=2), inject_fault="C12"
        )
        self.assertFalse(report.overall_pass)
        self.assertEqual(report.failing_blocks, ["C12"])
        with self.assertLogs(level="WARNING"):
            js.cross_validate(
                self.euclidean, self.euclidean, js.JetSampleSpec(count=1), inject_fault="T3"
            )
        with self.assertRaises(ScenarioError):
            js.cross_validate(self.euclidean, self.euclidean, inject_fault="C31")

    def test_prolongation_of_linear_map(self):

        m = am.parse_map(["2*t1 + t2", "t1 - t2"], 2)
        jp = js.prolongation_jet_point(m, fm.make_point([0.2, 0.3], [1.0, -0.5]))
        assert_array_equal(jp.x_alpha, [[2.0, 1.0], [1.0, -1.0]])
        assert_array_equal(jp.y_a, jp.x_alpha)
        jet_geo = js.jet_geometry(self.euclidean, self.euclidean, jp)
        closed = js.dtorsions_closed(self.euclidean, self.euclidean, jp, jet_geo).blocks
        closed.update(js.dcurvatures_closed(self.euclidean, self.euclidean, jp, jet_geo).blocks)
        for label, block in closed.items():
            assert_allclose(block, np.zeros_like(block), atol=1e-14, err_msg=label)

    def test_prolongation_between_curved_structures(self):

        m = am.identity_map(2)
        jp = js.prolongation_jet_point(m, fm.make_point([0.2, 0.3], [1.0, -0.5]))
        jet_geo = js.jet_geometry(self.randers, self.randers, jp)
        lift = js.JetLift(jet_geo)
        residuals = js.compare_blocks(
            js.dtorsions_closed(self.randers, self.randers, jp, jet_geo),
            js.dtorsions_general(self.randers, self.randers, jp, jet_geo, lift),
        )
        residuals.update(
            js.compare_blocks(
                js.dcurvatures_closed(self.randers, self.randers, jp, jet_geo),
                js.dcurvatures_general(self.randers, self.randers, jp, jet_geo, lift),
            )
        )
        self.assertEqual(len(residuals), 45)
        self.assertLessEqual(max(residuals.values()), JET_TOLERANCE)

    def test_riemannian_source_has_no_p_blocks(self):

        # The Berwald connection of a Riemannian metric has P = 0
        jp = js.sample_jet_points(self.sphere, self.euclidean, js.JetSampleSpec(count=1))[0]
        blocks = js.dcurvatures_closed(self.sphere, self.euclidean, jp).blocks
        for label in ["C3", "C5", "C8", "C9"]:
            assert_allclose(blocks[label], np.zeros_like(blocks[label]), atol=1e-8, err_msg=label)

    def test_lift_derivatives_match_finite_differences(self):

        lift = js.JetLift(self.jet_geo)
        jp = self.jp
        d_source, d_x, _ = lift.split(lift.b_target)
        h = 1e-5

        def target_b(jp):
            return bc.base_geometry(self.sphere, jp.target_point, 4).b

        for i in range(2):
            step = np.eye(2)[i] * h
            forward = js.JetPoint(jp.t, jp.s, jp.x + step, jp.x_alpha, jp.y_a)
            backward = js.JetPoint(jp.t, jp.s, jp.x - step, jp.x_alpha, jp.y_a)
            difference = (target_b(forward) - target_b(backward)) / (2 * h)
            assert_allclose(d_x[..., i], difference, atol=1e-6)

            # B̃ depends on s through y = y_a s
            forward = js.JetPoint(jp.t, jp.s + step, jp.x, jp.x_alpha, jp.y_a)
            backward = js.JetPoint(jp.t, jp.s - step, jp.x, jp.x_alpha, jp.y_a)
            difference = (target_b(forward) - target_b(backward)) / (2 * h)
            assert_allclose(d_source[..., 2 + i], difference, atol=1e-6)


if __name__ == "__main__":
    unittest.main()
