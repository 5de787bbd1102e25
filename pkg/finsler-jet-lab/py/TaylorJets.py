from fractions import Fraction
from functools import lru_cache
from itertools import combinations_with_replacement
import math

import numpy as np
from scipy import sparse

from FinslerErrors import (
    DimensionMismatchError,
    DivisionNearZeroError,
    DomainError,
    OrderExceededError,
    SingularMatrixError,
)

DEFAULT_ORDER = 6
EPSILON_DIV = 1e-12
MAX_CONDITION = 1e12

ARITH_KINDS = ("add", "sub", "mul", "div", "neg")
ELEMENTARY_KINDS = ("sqrt", "sin", "cos", "exp", "pow_rational")


@lru_cache(maxsize=None)
def get_multi_indices(num_vars, order):
    """Rank the multi-indices of total degree at most order.

    Multi-indices are graded by total degree, and ordered within a
    degree by the variable combinations they count, so that the ranks
    of a lower order are a prefix of the ranks of a higher order.

    Parameters
    ----------
    num_vars : int
        Number of independent variables
    order : int
        Truncation order

    Returns
    -------
    numpy.ndarray
        Read-only integer array of shape (number of coefficients,
        num_vars)
    """
    rows = [np.zeros(num_vars, dtype=np.int64)]
    for degree in range(1, order + 1):
        for combo in combinations_with_replacement(range(num_vars), degree):
            rows.append(np.bincount(combo, minlength=num_vars))
    indices = np.array(rows, dtype=np.int64).reshape(-1, num_vars)
    indices.flags.writeable = False
    return indices


@lru_cache(maxsize=None)
def get_rank_map(num_vars, order):
    return {
        tuple(index): rank
        for rank, index in enumerate(get_multi_indices(num_vars, order).tolist())
    }


def get_num_coeffs(num_vars, order):
    return get_multi_indices(num_vars, order).shape[0]


@lru_cache(maxsize=None)
def get_product_table(num_vars, order):
    """Tabulate the truncated Cauchy convolution.

    Parameters
    ----------
    num_vars : int
        Number of independent variables
    order : int
        Truncation order

    Returns
    -------
    left : numpy.ndarray
        Rank of the left factor of each contributing pair
    right : numpy.ndarray
        Rank of the right factor of each contributing pair
    scatter : scipy.sparse.csr_matrix
        Matrix summing pair products into the rank of their product
    """
    indices = get_multi_indices(num_vars, order)
    rank_map = get_rank_map(num_vars, order)
    degrees = indices.sum(axis=1)
    left, right = np.nonzero(degrees[:, None] + degrees[None, :] <= order)
    sums = indices[left] + indices[right]
    target = np.array([rank_map[tuple(row)] for row in sums.tolist()], dtype=np.intp)
    scatter = sparse.csr_matrix(
        (np.ones(len(target)), (target, np.arange(len(target)))),
        shape=(len(indices), len(target)),
    )
    return left, right, scatter


@lru_cache(maxsize=None)
def get_derivative_table(num_vars, order, var_index):
    # Result multi-index m comes from m + e_v, scaled by m_v + 1
    lower = get_multi_indices(num_vars, order - 1)
    rank_map = get_rank_map(num_vars, order)
    raised = lower.copy()
    raised[:, var_index] += 1
    source = np.array([rank_map[tuple(row)] for row in raised.tolist()], dtype=np.intp)
    factor = raised[:, var_index].astype(float)
    return source, factor


def _multiply_data(a, b, num_vars, order):
    left, right, scatter = get_product_table(num_vars, order)
    terms = a[..., left] * b[..., right]
    flat = terms.reshape(-1, terms.shape[-1])
    product = np.asarray(scatter @ flat.T).T
    return product.reshape(terms.shape[:-1] + (scatter.shape[0],))


def _zero_constant(data):
    tail = np.array(data, dtype=float)
    tail[..., 0] = 0.0
    return tail


class TaylorValue:
    """Truncated multivariate Taylor expansion at a base point.

    Coefficients are stored in the Taylor convention, the coefficient of
    a multi-index m being the partial derivative of order m divided by
    m!. A TaylorValue may carry leading tensor axes, in which case it is
    an array of expansions sharing num_vars and order, indexed like a
    numpy array. Instances are immutable.

    Coefficients are held densely in rank order whatever num_vars is;
    only the product and derivative index tables are sparse. Expansions
    of F² have 2p variables, at most 6 for p <= 3, and the jet lifts with
    more variables are truncated at order 1, so the dense arrays stay small.
    """

    __array_ufunc__ = None

    def __init__(self, num_vars, order, data):
        if order < 0:
            raise ValueError(f"Truncation order must be non-negative, got {order}")
        data = np.array(data, dtype=float)
        num_coeffs = get_num_coeffs(num_vars, order)
        if data.ndim == 0 or data.shape[-1] != num_coeffs:
            raise ValueError(
                f"Expected {num_coeffs} coefficients for {num_vars} variables "
                f"at order {order}, got shape {data.shape}"
            )
        data.flags.writeable = False
        self.num_vars = num_vars
        self.order = order
        self.data = data

    @property
    def shape(self):
        return self.data.shape[:-1]

    @property
    def value(self):
        if self.shape == ():
            return float(self.data[0])
        return self.data[..., 0].copy()

    @property
    def coeffs(self):
        """Map from multi-index to coefficient, omitting zero
        coefficients other than the constant term."""
        if self.shape != ():
            raise ValueError("Coefficient maps are defined for scalar series only")
        indices = get_multi_indices(self.num_vars, self.order)
        return {
            tuple(index): float(coeff)
            for rank, (index, coeff) in enumerate(zip(indices.tolist(), self.data))
            if rank == 0 or coeff != 0.0
        }

    def __getitem__(self, key):
        if not isinstance(key, tuple):
            key = (key,)
        return TaylorValue(self.num_vars, self.order, self.data[key])

    def __len__(self):
        return self.shape[0]

    def __iter__(self):
        for i in range(len(self)):
            yield self[i]

    def __repr__(self):
        return (
            f"TaylorValue(num_vars={self.num_vars}, order={self.order}, "
            f"shape={self.shape}, value={self.value})"
        )

    def __add__(self, other):
        return arith("add", self, other)

    def __radd__(self, other):
        return arith("add", other, self)

    def __sub__(self, other):
        return arith("sub", self, other)

    def __rsub__(self, other):
        return arith("sub", other, self)

    def __mul__(self, other):
        return arith("mul", self, other)

    def __rmul__(self, other):
        return arith("mul", other, self)

    def __truediv__(self, other):
        return arith("div", self, other)

    def __rtruediv__(self, other):
        return arith("div", other, self)

    def __neg__(self):
        return arith("neg", self)

    def __pow__(self, exponent):
        return elementary("pow_rational", self, Fraction(exponent))


def constant(value, num_vars, order):
    value = np.asarray(value, dtype=float)
    data = np.zeros(value.shape + (get_num_coeffs(num_vars, order),))
    data[..., 0] = value
    return TaylorValue(num_vars, order, data)


def lift_variable(var_index, value, num_vars, order):
    """Expand the coordinate function of one variable.

    Parameters
    ----------
    var_index : int
        Index of the variable, 0 <= var_index < num_vars
    value : float
        Value of the variable at the base point
    num_vars : int
        Number of independent variables
    order : int
        Truncation order

    Returns
    -------
    TaylorValue
        Constant term value, unit linear coefficient at var_index
    """
    if not 0 <= var_index < num_vars:
        raise IndexError(f"Variable index {var_index} out of range for {num_vars}")
    lifted = constant(value, num_vars, order)
    if order >= 1:
        data = np.array(lifted.data)
        data[1 + var_index] = 1.0
        lifted = TaylorValue(num_vars, order, data)
    return lifted


def lift_point(values, order):
    """Lift every coordinate of a point, one variable per coordinate."""
    num_vars = len(values)
    return [lift_variable(i, v, num_vars, order) for i, v in enumerate(values)]


def _coerce(operand, num_vars, order):
    if isinstance(operand, TaylorValue):
        if operand.num_vars != num_vars or operand.order != order:
            raise ValueError(
                "Operands must share num_vars and order, got "
                f"({operand.num_vars}, {operand.order}) and ({num_vars}, {order})"
            )
        return operand
    return constant(operand, num_vars, order)


def arith(kind, a, b=None, epsilon_div=None):
    """Truncated arithmetic on Taylor values.

    Parameters
    ----------
    kind : str
        One of 'add', 'sub', 'mul', 'div', 'neg'
    a : TaylorValue | float
        First operand
    b : TaylorValue | float
        Second operand, omitted for 'neg'
    epsilon_div : float
        Smallest admissible constant term of a divisor, defaults to
        EPSILON_DIV

    Returns
    -------
    TaylorValue
        Result truncated at the common order
    """
    if kind not in ARITH_KINDS:
        raise ValueError(f"Unknown arithmetic kind '{kind}'")
    ref = a if isinstance(a, TaylorValue) else b
    num_vars, order = ref.num_vars, ref.order
    a = _coerce(a, num_vars, order)
    if kind == "neg":
        return TaylorValue(num_vars, order, -a.data)
    b = _coerce(b, num_vars, order)
    if kind == "add":
        return TaylorValue(num_vars, order, a.data + b.data)
    if kind == "sub":
        return TaylorValue(num_vars, order, a.data - b.data)
    if kind == "mul":
        return TaylorValue(num_vars, order, _multiply_data(a.data, b.data, num_vars, order))

    # Division solves q·b = a degree by degree
    if epsilon_div is None:
        epsilon_div = EPSILON_DIV
    b0 = b.data[..., :1]
    if np.any(np.abs(b0) < epsilon_div):
        raise DivisionNearZeroError(
            f"Divisor constant term {np.min(np.abs(b0))} is below {epsilon_div}"
        )
    tail = _zero_constant(b.data)
    quotient = a.data / b0
    for _ in range(order):
        quotient = (a.data - _multiply_data(quotient, tail, num_vars, order)) / b0
    return TaylorValue(num_vars, order, quotient)


def integer_power(base, exponent):
    """Raise a float or a TaylorValue to an integer power by repeated
    squaring, so that plain and series evaluation round identically."""
    result = None
    square = base
    n = abs(int(exponent))
    while n:
        if n & 1:
            result = square if result is None else result * square
        n >>= 1
        if n:
            square = square * square
    if result is None:
        result = base * 0.0 + 1.0
    if exponent < 0:
        result = 1.0 / result
    return result


def _apply(function, values):
    return np.vectorize(function, otypes=[float])(values)


def _compose_univariate(a, coefficients):
    # Horner evaluation of sum_k c_k h^k with h = a - a(0)
    num_vars, order = a.num_vars, a.order
    h = _zero_constant(a.data)
    result = np.zeros(a.data.shape)
    result[..., 0] = coefficients[order]
    for k in range(order - 1, -1, -1):
        result = _multiply_data(result, h, num_vars, order)
        result[..., 0] += coefficients[k]
    return TaylorValue(num_vars, order, result)


def _binomial_coefficients(a0, exponent, first, order):
    coefficients = [first]
    for k in range(1, order + 1):
        coefficients.append(coefficients[-1] * (exponent - k + 1) / k / a0)
    return coefficients


def elementary(kind, a, exponent=None, epsilon_div=None):
    """Compose an elementary function with a Taylor value.

    Parameters
    ----------
    kind : str
        One of 'sqrt', 'sin', 'cos', 'exp', 'pow_rational'
    a : TaylorValue
        Argument
    exponent : fractions.Fraction
        Rational exponent, required for 'pow_rational'
    epsilon_div : float
        Smallest admissible constant term for roots and negative powers

    Returns
    -------
    TaylorValue
        Coefficients of the composition, exact to the truncation order
    """
    if kind not in ELEMENTARY_KINDS:
        raise ValueError(f"Unknown elementary function '{kind}'")
    if epsilon_div is None:
        epsilon_div = EPSILON_DIV
    order = a.order
    a0 = a.data[..., 0]

    if kind == "pow_rational":
        exponent = Fraction(exponent)
        if exponent.denominator == 1:
            try:
                return integer_power(a, exponent.numerator)
            except DivisionNearZeroError as exc:
                raise DomainError("Negative power of a vanishing series") from exc
        if np.any(a0 < epsilon_div):
            raise DomainError(
                f"Rational power {exponent} of non-positive constant term "
                f"{np.min(a0)}"
            )
        first = _apply(lambda v: v ** float(exponent), a0)
        return _compose_univariate(
            a, _binomial_coefficients(a0, float(exponent), first, order)
        )

    if kind == "sqrt":
        if np.any(a0 < epsilon_div):
            raise DomainError(f"Square root of non-positive constant term {np.min(a0)}")
        first = _apply(math.sqrt, a0)
        return _compose_univariate(a, _binomial_coefficients(a0, 0.5, first, order))

    if kind == "exp":
        first = _apply(math.exp, a0)
        return _compose_univariate(
            a, [first / math.factorial(k) for k in range(order + 1)]
        )

    # Derivatives of sin and cos cycle with period four
    sin0 = _apply(math.sin, a0)
    cos0 = _apply(math.cos, a0)
    if kind == "sin":
        cycle = [sin0, cos0, -sin0, -cos0]
    else:
        cycle = [cos0, -sin0, -cos0, sin0]
    return _compose_univariate(
        a, [cycle[k % 4] / math.factorial(k) for k in range(order + 1)]
    )


def partial_coeff(a, multi_index):
    """Extract a partial derivative at the base point.

    Parameters
    ----------
    a : TaylorValue
        Expansion
    multi_index : list[int]
        Differentiation counts per variable

    Returns
    -------
    float | numpy.ndarray
        Stored coefficient times the product of factorials of the
        multi-index
    """
    multi_index = tuple(int(m) for m in multi_index)
    if len(multi_index) != a.num_vars:
        raise ValueError(
            f"Multi-index {multi_index} does not match {a.num_vars} variables"
        )
    if sum(multi_index) > a.order:
        raise OrderExceededError(
            f"Derivative of degree {sum(multi_index)} exceeds order {a.order}"
        )
    rank = get_rank_map(a.num_vars, a.order)[multi_index]
    scale = float(np.prod([math.factorial(m) for m in multi_index]))
    coeff = a.data[..., rank] * scale
    return float(coeff) if a.shape == () else coeff


def gradient(a):
    """First partial derivatives, stacked on a trailing axis."""
    if a.order < 1:
        raise OrderExceededError("Gradient of an order-0 series")
    return np.array(a.data[..., 1 : 1 + a.num_vars])


def series_derivative(a, var_index):
    """Differentiate a series with respect to one variable.

    The result is truncated at order - 1.
    """
    if a.order == 0:
        raise OrderExceededError("Cannot differentiate an order-0 series")
    if not 0 <= var_index < a.num_vars:
        raise IndexError(f"Variable index {var_index} out of range for {a.num_vars}")
    source, factor = get_derivative_table(a.num_vars, a.order, var_index)
    return TaylorValue(a.num_vars, a.order - 1, a.data[..., source] * factor)


def truncate(a, order):
    if order > a.order:
        raise OrderExceededError(f"Cannot raise order {a.order} to {order}")
    num_coeffs = get_num_coeffs(a.num_vars, order)
    return TaylorValue(a.num_vars, order, a.data[..., :num_coeffs])


def stack(values, axis=0):
    if axis < 0:
        raise ValueError("Stack along a leading axis")
    values = list(values)
    num_vars, order = values[0].num_vars, values[0].order
    for value in values:
        _coerce(value, num_vars, order)
    data = np.stack([value.data for value in values], axis=axis)
    return TaylorValue(num_vars, order, data)


def contract(subscripts, a, b):
    """Series-valued einsum of two operands.

    Each operand is a TaylorValue array or a plain numpy array; entries
    of two TaylorValue operands are multiplied as truncated series. The
    letter 'z' is reserved for the coefficient axis.

    Parameters
    ----------
    subscripts : str
        Einsum subscripts over the leading axes, for example 'ij,j->i'
    a : TaylorValue | numpy.ndarray
        Left operand
    b : TaylorValue | numpy.ndarray
        Right operand

    Returns
    -------
    TaylorValue
        Contracted series
    """
    inputs, output = subscripts.replace(" ", "").split("->")
    left_sub, right_sub = inputs.split(",")
    if isinstance(a, TaylorValue) and isinstance(b, TaylorValue):
        _coerce(b, a.num_vars, a.order)
        left, right, scatter = get_product_table(a.num_vars, a.order)
        terms = np.einsum(
            f"{left_sub}z,{right_sub}z->{output}z", a.data[..., left], b.data[..., right]
        )
        flat = terms.reshape(-1, terms.shape[-1])
        product = np.asarray(scatter @ flat.T).T
        data = product.reshape(terms.shape[:-1] + (scatter.shape[0],))
        return TaylorValue(a.num_vars, a.order, data)
    if isinstance(a, TaylorValue):
        data = np.einsum(f"{left_sub}z,{right_sub}->{output}z", a.data, np.asarray(b))
        return TaylorValue(a.num_vars, a.order, data)
    data = np.einsum(f"{left_sub},{right_sub}z->{output}z", np.asarray(a), b.data)
    return TaylorValue(b.num_vars, b.order, data)


def taylor_matrix_inverse(m, max_condition=None):
    """Invert a square matrix of Taylor values.

    The constant-term matrix M0 is inverted directly and the series
    M^-1 = sum_k (-M0^-1 E)^k M0^-1, with E = M - M0, is summed to the
    truncation order.

    Parameters
    ----------
    m : TaylorValue | list[list[TaylorValue]]
        Square matrix, as a TaylorValue of shape (p, p) or as nested
        lists of scalar TaylorValue
    max_condition : float
        Largest admissible condition number of M0, defaults to
        MAX_CONDITION

    Returns
    -------
    TaylorValue
        Inverse, of shape (p, p)
    """
    if not isinstance(m, TaylorValue):
        m = stack([stack(row) for row in m])
    if len(m.shape) != 2 or m.shape[0] != m.shape[1]:
        raise DimensionMismatchError(f"Expected a square matrix, got shape {m.shape}")
    if max_condition is None:
        max_condition = MAX_CONDITION
    m0 = m.value
    try:
        condition = np.linalg.cond(m0)
        if not np.isfinite(condition) or condition > max_condition:
            raise SingularMatrixError(
                f"Constant-term matrix has condition number {condition}"
            )
        inverse0 = np.linalg.inv(m0)
    except np.linalg.LinAlgError as exc:
        raise SingularMatrixError("Constant-term matrix is singular") from exc

    tail = TaylorValue(m.num_vars, m.order, _zero_constant(m.data))
    step = -contract("ij,jk->ik", inverse0, tail)
    term = constant(inverse0, m.num_vars, m.order)
    inverse = term
    for _ in range(m.order):
        term = contract("ij,jk->ik", step, term)
        inverse = inverse + term
    return inverse


def taylor_compose(inner, args):
    """Substitute outer series into an inner truncated expansion.

    The inner expansion is taken about the constant terms of args, so
    only the non-constant parts of args enter. The result is exact to
    the smaller of the two orders.

    Parameters
    ----------
    inner : TaylorValue
        Expansion in len(args) variables, possibly an array
    args : list[TaylorValue]
        Scalar series in the outer variables, one per inner variable

    Returns
    -------
    TaylorValue
        Composite in the outer variables, with the shape of inner
    """
    if len(args) != inner.num_vars:
        raise DimensionMismatchError(
            f"Inner expansion has {inner.num_vars} variables, got {len(args)} args"
        )
    num_vars, order = args[0].num_vars, args[0].order
    displacements = [_zero_constant(_coerce(arg, num_vars, order).data) for arg in args]
    one = constant(1.0, num_vars, order).data
    limit = min(inner.order, order)

    powers = [[one] for _ in args]
    result = np.zeros(inner.shape + (len(one),))
    indices = get_multi_indices(inner.num_vars, inner.order)
    for rank, index in enumerate(indices.tolist()):
        if sum(index) > limit:
            break
        monomial = one
        for i, k in enumerate(index):
            while len(powers[i]) <= k:
                powers[i].append(
                    _multiply_data(powers[i][-1], displacements[i], num_vars, order)
                )
            if k:
                monomial = _multiply_data(monomial, powers[i][k], num_vars, order)
        result = result + inner.data[..., rank, None] * monomial
    return TaylorValue(num_vars, order, result)
