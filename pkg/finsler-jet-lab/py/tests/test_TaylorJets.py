from fractions import Fraction
import math
import unittest

from hypothesis import given, settings
from hypothesis import strategies as st
import numpy as np
from numpy.testing import assert_allclose
from scipy import sparse

from FinslerErrors import (
    DimensionMismatchError,
    DivisionNearZeroError,
    DomainError,
    OrderExceededError,
    SingularMatrixError,
)
import TaylorJets as tj

coefficient_lists = st.lists(
    st.floats(min_value=-2.0, max_value=2.0, allow_nan=False), min_size=10, max_size=10
)


class TestTaylorJets(unittest.TestCase):

    def setUp(self):

        # Two variables at order three
        self.num_vars = 2
        self.order = 3
        self.x, self.y = tj.lift_point([0.5, -0.25], self.order)

    def series(self, coefficients):
        return tj.TaylorValue(self.num_vars, self.order, coefficients)

    def test_multi_indices_are_graded(self):

        indices = tj.get_multi_indices(2, 3)
        self.assertEqual(indices.shape, (10, 2))
        self.assertEqual(tj.get_num_coeffs(3, 2), 10)
        self.assertTrue(np.all(np.diff(indices.sum(axis=1)) >= 0))

        # Lower orders are a prefix of higher orders
        np.testing.assert_array_equal(tj.get_multi_indices(2, 2), indices[:6])

    def test_dense_storage_stays_small(self):

        # F² of a 3-dimensional structure at the default order
        self.assertEqual(tj.get_num_coeffs(6, tj.DEFAULT_ORDER), 924)
        _, _, scatter = tj.get_product_table(6, 3)
        self.assertTrue(sparse.issparse(scatter))

        # Jet lift for p = n = 3: t, s, x and the 3 x 6 jet coordinates
        lifted = tj.lift_point(np.linspace(0.0, 1.0, 27), 1)
        self.assertEqual(lifted[0].data.shape, (28,))

    def test_lift_variable(self):

        self.assertEqual(self.x.value, 0.5)
        self.assertEqual(self.x.coeffs, {(0, 0): 0.5, (1, 0): 1.0})
        with self.assertRaises(IndexError):
            tj.lift_variable(2, 0.0, 2, 3)

    def test_product_of_lifted_variables(self):

        product = (1.0 + self.x) * (1.0 - self.x)
        self.assertAlmostEqual(product.value, 0.75)
        self.assertAlmostEqual(tj.partial_coeff(product, [1, 0]), -1.0)
        self.assertAlmostEqual(tj.partial_coeff(product, [2, 0]), -2.0)
        self.assertAlmostEqual(tj.partial_coeff(product, [3, 0]), 0.0)

    def test_partial_coeff_scales_by_factorials(self):

        cube = self.x * self.x * self.x
        self.assertAlmostEqual(tj.partial_coeff(cube, [3, 0]), 6.0)
        self.assertAlmostEqual(tj.partial_coeff(cube, [2, 0]), 6.0 * 0.5)
        mixed = self.x * self.x * self.y
        self.assertAlmostEqual(tj.partial_coeff(mixed, [2, 1]), 2.0)

    def test_partial_coeff_beyond_order(self):

        with self.assertRaises(OrderExceededError):
            tj.partial_coeff(self.x, [2, 2])

    def test_division_gives_geometric_series(self):

        u = tj.lift_variable(0, 0.0, 1, 5)
        quotient = 1.0 / (1.0 - u)
        assert_allclose(quotient.data, np.ones(6))

    def test_division_near_zero(self):

        u = tj.lift_variable(0, 0.0, 1, 3)
        with self.assertRaises(DivisionNearZeroError):
            1.0 / u

    def test_sqrt_matches_binomial_series(self):

        u = tj.lift_variable(0, 1.0, 1, 4)
        root = tj.elementary("sqrt", u)
        expected = [1.0, 0.5, -0.125, 0.0625, -0.0390625]
        assert_allclose(root.data, expected, rtol=1e-14)

    def test_sqrt_of_non_positive(self):

        u = tj.lift_variable(0, 0.0, 1, 3)
        with self.assertRaises(DomainError):
            tj.elementary("sqrt", u)
        with self.assertRaises(DomainError):
            tj.elementary("pow_rational", u, Fraction(-1))

    def test_pow_rational_matches_direct_power(self):

        u = tj.lift_variable(0, 2.0, 1, 3)
        cube_root = tj.elementary("pow_rational", u, Fraction(1, 3))
        self.assertAlmostEqual(cube_root.value, 2.0 ** (1 / 3))
        self.assertAlmostEqual(
            tj.partial_coeff(cube_root, [1]), (1 / 3) * 2.0 ** (-2 / 3)
        )
        square = u**2
        assert_allclose(square.data, [4.0, 4.0, 1.0, 0.0], atol=1e-15)

    def test_exp_derivatives(self):

        u = tj.lift_variable(0, 0.3, 1, 5)
        exponential = tj.elementary("exp", u)
        for k in range(6):
            self.assertAlmostEqual(tj.partial_coeff(exponential, [k]), math.exp(0.3))

    @given(st.floats(min_value=-10.0, max_value=10.0, allow_nan=False))
    @settings(max_examples=25, deadline=None)
    def test_pythagorean_identity(self, value):

        u = tj.lift_variable(0, value, 1, 6)
        identity = tj.elementary("sin", u) ** 2 + tj.elementary("cos", u) ** 2
        assert_allclose(identity.data, [1.0] + [0.0] * 6, atol=1e-12)

    @given(coefficient_lists, coefficient_lists, coefficient_lists)
    @settings(max_examples=25, deadline=None)
    def test_ring_axioms(self, a, b, c):

        a, b, c = self.series(a), self.series(b), self.series(c)
        assert_allclose((a * (b + c)).data, (a * b + a * c).data, atol=1e-12)
        assert_allclose((a * b).data, (b * a).data, atol=1e-12)
        assert_allclose(((a * b) * c).data, (a * (b * c)).data, atol=1e-11)

    def test_operands_must_share_order(self):

        other = tj.lift_variable(0, 0.0, 2, 2)
        with self.assertRaises(ValueError):
            self.x + other

    def test_gradient_and_series_derivative(self):

        f = self.x * self.x * self.y
        assert_allclose(tj.gradient(f), [2 * 0.5 * -0.25, 0.25])
        dfdx = tj.series_derivative(f, 0)
        self.assertEqual(dfdx.order, 2)
        self.assertAlmostEqual(dfdx.value, 2 * 0.5 * -0.25)
        self.assertAlmostEqual(tj.partial_coeff(dfdx, [1, 1]), 2.0)

    def test_truncate(self):

        f = tj.elementary("exp", self.x)
        low = tj.truncate(f, 1)
        self.assertEqual(low.order, 1)
        assert_allclose(low.data, f.data[:3])
        with self.assertRaises(OrderExceededError):
            tj.truncate(low, 2)

    def test_stack_and_index(self):

        vector = tj.stack([self.x, self.y])
        self.assertEqual(vector.shape, (2,))
        self.assertEqual(vector[1].value, -0.25)
        self.assertEqual([v.value for v in vector], [0.5, -0.25])

    def test_contract_matches_scalar_products(self):

        vector = tj.stack([self.x, self.y])
        matrix = np.array([[1.0, 2.0], [3.0, 4.0]])
        image = tj.contract("ij,j->i", matrix, vector)
        expected = 3.0 * self.x + 4.0 * self.y
        assert_allclose(image[1].data, expected.data)

        square = tj.contract("i,i->", vector, vector)
        assert_allclose(square.data, (self.x * self.x + self.y * self.y).data, atol=1e-15)

    def test_matrix_inverse(self):

        matrix = tj.stack(
            [
                tj.stack([2.0 + self.x, self.x * self.y]),
                tj.stack([self.x * self.y, 1.0 + self.y * self.y]),
            ]
        )
        inverse = tj.taylor_matrix_inverse(matrix)
        product = tj.contract("ij,jk->ik", matrix, inverse)
        identity = tj.constant(np.eye(2), self.num_vars, self.order)
        assert_allclose(product.data, identity.data, atol=1e-12)

    def test_matrix_inverse_of_singular_matrix(self):

        zero = tj.constant(np.zeros((2, 2)), self.num_vars, self.order)
        with self.assertRaises(SingularMatrixError):
            tj.taylor_matrix_inverse(zero)
        with self.assertRaises(DimensionMismatchError):
            tj.taylor_matrix_inverse(tj.constant(np.ones((2, 3)), 2, 1))

    def test_compose_matches_direct_evaluation(self):

        # sin(u) expanded about u = 0.5 + (-0.25), composed with u = x + y
        inner_var = tj.lift_variable(0, 0.25, 1, self.order)
        inner = tj.elementary("sin", inner_var)
        composed = tj.taylor_compose(inner, [self.x + self.y])
        direct = tj.elementary("sin", self.x + self.y)
        assert_allclose(composed.data, direct.data, atol=1e-14)

    def test_compose_checks_argument_count(self):

        with self.assertRaises(DimensionMismatchError):
            tj.taylor_compose(self.x, [self.x])


if __name__ == "__main__":
    unittest.main()
