from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
import itertools
import logging
import math
import os

import numpy as np

from FinslerErrors import (
    DimensionMismatchError,
    DomainError,
    EvaluationError,
    FinslerLabError,
    NotPositiveDefiniteError,
    ScenarioError,
    SingularMetricError,
    ZeroSectionError,
)
import ScalarExpr as se
import TaylorJets as tj

EPSILON_ZERO_SECTION = 1e-8
MIN_EIGENVALUE = 1e-10
IDENTITY_TOLERANCE = 1e-10
SYMMETRY_TOLERANCE = 1e-9
HOMOGENEITY_SCALES = (0.5, 2.0, 7.0)
DEFAULT_SAMPLE_COUNT = 64
DEFAULT_SEED = 42
DEFAULT_BOX = (-1.0, 1.0)
MAX_REJECTIONS = 10000

CATALOG = ("euclidean", "riemannian", "randers", "locally_minkowski", "round_sphere")
SPHERE_DOMAIN_BOX = ((0.3, math.pi - 0.3), (-math.pi, math.pi))


@dataclass(frozen=True)
class FinslerStructure:
    """A Finsler structure given by the expression of F² in the source
    variables t1..tp, s1..sp."""

    dim: int
    f_squared: se.Expr
    label: str = ""
    domain_box: tuple | None = None
    params: dict = field(default_factory=dict, compare=False, hash=False)

    @property
    def variables(self):
        return se.source_variables(self.dim)


@dataclass(frozen=True)
class BasePoint:
    t: tuple
    s: tuple

    @property
    def dim(self):
        return len(self.t)


@dataclass
class SampleSpec:
    seed: int = DEFAULT_SEED
    count: int = DEFAULT_SAMPLE_COUNT
    t_box: list | None = None
    s_box: list | None = None


@dataclass(frozen=True)
class Tensor:
    """Dense components with declared variance, one letter per axis, 'u'
    for an upper and 'l' for a lower index. Symmetric axis groups are
    checked on construction."""

    components: np.ndarray
    variance: str
    symmetric_axes: tuple = ()

    def __post_init__(self):
        components = np.array(self.components, dtype=float)
        if components.ndim != len(self.variance):
            raise DimensionMismatchError(
                f"Variance '{self.variance}' does not match shape {components.shape}"
            )
        for group in self.symmetric_axes:
            check_symmetry(components, group)
        components.flags.writeable = False
        object.__setattr__(self, "components", components)


@dataclass(frozen=True)
class CartanTensor:
    lower: Tensor
    mixed: Tensor


@dataclass(frozen=True)
class FundamentalTensors:
    f_squared: float
    g: np.ndarray
    g_inverse: np.ndarray
    cartan: np.ndarray
    cartan_mixed: np.ndarray
    eigenvalues: np.ndarray


@dataclass
class CheckResult:
    name: str
    passed: bool
    value: float
    tolerance: float
    worst_point: dict | None = None
    message: str = ""


@dataclass
class ValidationReport:
    label: str
    seed: int
    count: int
    checks: list

    @property
    def passed(self):
        return all(check.passed for check in self.checks)


def get_thread_count():
    """Worker count for point sweeps, from FINSLERLAB_THREADS."""
    value = os.getenv("FINSLERLAB_THREADS", "1")
    try:
        count = int(value)
    except ValueError as exc:
        raise ScenarioError(f"FINSLERLAB_THREADS must be an integer, got {value}") from exc
    if count < 1:
        raise ScenarioError(f"FINSLERLAB_THREADS must be at least 1, got {count}")
    return count


def map_points(function, items):
    """Apply a pure per-point function over items, preserving order."""
    items = list(items)
    threads = get_thread_count()
    if threads == 1 or len(items) < 2:
        return [function(item) for item in items]
    with ThreadPoolExecutor(max_workers=threads) as executor:
        return list(executor.map(function, items))


def relative_residual(a, b):
    """Largest absolute difference divided by max(1, max|a|, max|b|).

    The floor at 1 makes this an absolute comparison for tensors whose
    entries all lie below 1 in magnitude.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.size == 0:
        return 0.0
    scale = max(1.0, float(np.max(np.abs(a))), float(np.max(np.abs(b))))
    return float(np.max(np.abs(a - b))) / scale


def symmetrize(components, first=1, second=2):
    """Average over a swap of two axes, exactly symmetric afterwards."""
    return 0.5 * (components + np.swapaxes(components, first, second))


def check_symmetry(components, axes, tolerance=SYMMETRY_TOLERANCE):
    scale = max(1.0, float(np.max(np.abs(components), initial=0.0)))
    order = list(range(components.ndim))
    for perm in itertools.permutations(axes):
        permuted = list(order)
        for source, target in zip(axes, perm):
            permuted[source] = target
        difference = components - np.transpose(components, permuted)
        residual = float(np.max(np.abs(difference), initial=0.0))
        if residual > tolerance * scale:
            raise FinslerLabError(
                f"Components are not symmetric in axes {axes}: residual {residual}"
            )


def make_structure(dim, f_squared, label="", domain_box=None, params=None):
    """Create a Finsler structure from the text of F².

    Parameters
    ----------
    dim : int
        Source dimension p
    f_squared : str
        Expression of F² in t1..tp, s1..sp
    label : str
        Name used in reports
    domain_box : list
        Optional bounds (lo, hi) per coordinate t

    Returns
    -------
    FinslerStructure
    """
    if dim < 1:
        raise ScenarioError(f"Dimension must be at least 1, got {dim}")
    expr = se.parse(f_squared, se.source_variables(dim))
    if domain_box is not None:
        domain_box = tuple((float(lo), float(hi)) for lo, hi in domain_box)
        if len(domain_box) != dim:
            raise ScenarioError(f"Domain box has {len(domain_box)} entries, expected {dim}")
    return FinslerStructure(dim, expr, label or f_squared, domain_box, dict(params or {}))


def _quadratic_form_text(matrix, names):
    terms = []
    for i, j in itertools.combinations_with_replacement(range(len(names)), 2):
        entry = matrix[i][j]
        factor = "" if i == j else "2*"
        terms.append(f"{factor}({entry})*{names[i]}*{names[j]}")
    return " + ".join(terms)


def _parse_matrix(matrix, dim, variables, name):
    if len(matrix) != dim or any(len(row) != dim for row in matrix):
        raise ScenarioError(f"{name} must be a {dim}x{dim} matrix")
    parsed = [[se.parse(str(entry), variables) for entry in row] for row in matrix]
    for i, j in itertools.combinations(range(dim), 2):
        if parsed[i][j] != parsed[j][i]:
            raise ScenarioError(f"{name} must be symmetric, entries ({i + 1},{j + 1}) differ")
    return parsed


def catalog_structure(name, dim, params=None):
    """Build one of the catalog structures.

    Parameters
    ----------
    name : str
        One of 'euclidean', 'riemannian', 'randers', 'locally_minkowski',
        'round_sphere'
    dim : int
        Source dimension p
    params : dict
        Catalog parameters: 'metric' (matrix of expressions in t) for
        riemannian; 'alpha' (matrix), 'beta' (covector) or 'b' (float)
        for randers; 'f_squared' (expression in s) for
        locally_minkowski

    Returns
    -------
    FinslerStructure
    """
    params = dict(params or {})
    t_names = [f"t{i + 1}" for i in range(dim)]
    s_names = [f"s{i + 1}" for i in range(dim)]
    label = params.pop("label", name)
    domain_box = params.pop("domain_box", None)

    if name == "euclidean":
        text = " + ".join(f"{s}^2" for s in s_names)
        return make_structure(dim, text, label, domain_box)

    if name == "riemannian":
        if "metric" not in params:
            raise ScenarioError("Riemannian structure needs a 'metric' matrix")
        metric = params["metric"]
        _parse_matrix(metric, dim, t_names, "metric")
        text = _quadratic_form_text(metric, s_names)
        return make_structure(dim, text, label, domain_box, {"metric": metric})

    if name == "randers":
        identity = [["1" if i == j else "0" for j in range(dim)] for i in range(dim)]
        alpha = params.get("alpha", identity)
        if "beta" in params:
            beta = [str(b) for b in params["beta"]]
        else:
            beta = [str(params.get("b", 0.0))] + ["0"] * (dim - 1)
        if len(beta) != dim:
            raise ScenarioError(f"Randers covector has {len(beta)} entries, expected {dim}")
        alpha_exprs = _parse_matrix(alpha, dim, t_names, "alpha")
        beta_exprs = [se.parse(b, t_names) for b in beta]
        beta_text = " + ".join(f"({b})*{s}" for b, s in zip(beta, s_names))
        text = f"(sqrt({_quadratic_form_text(alpha, s_names)}) + {beta_text})^2"
        return make_structure(
            dim, text, label, domain_box, {"alpha": alpha_exprs, "beta": beta_exprs}
        )

    if name == "locally_minkowski":
        if "f_squared" in params:
            text = params["f_squared"]
        else:
            quartic = [f"{s}^4" for s in s_names]
            quartic += [f"{a}^2*{b}^2" for a, b in itertools.combinations(s_names, 2)]
            text = f"sqrt({' + '.join(quartic)})"
        structure = make_structure(dim, text, label, domain_box)
        if se.free_variables(structure.f_squared) & set(t_names):
            raise ScenarioError("Locally Minkowski F² must depend on s only")
        return structure

    if name == "round_sphere":
        if dim != 2:
            raise ScenarioError(f"Round sphere has dimension 2, got {dim}")
        return make_structure(
            2, "s1^2 + sin(t1)^2*s2^2", label, domain_box or SPHERE_DOMAIN_BOX
        )

    raise ScenarioError(f"Unknown catalog structure '{name}', expected one of {CATALOG}")


def make_point(t, s):
    return BasePoint(tuple(float(v) for v in t), tuple(float(v) for v in s))


def check_base_point(fs, pt, epsilon_zero_section=None):
    if epsilon_zero_section is None:
        epsilon_zero_section = EPSILON_ZERO_SECTION
    if len(pt.t) != fs.dim or len(pt.s) != fs.dim:
        raise DimensionMismatchError(
            f"Point has dimensions ({len(pt.t)}, {len(pt.s)}), structure has {fs.dim}"
        )
    if np.linalg.norm(pt.s) < epsilon_zero_section:
        raise ZeroSectionError(f"Direction {pt.s} lies on the zero section")
    if fs.domain_box is not None:
        for value, (lo, hi) in zip(pt.t, fs.domain_box):
            if not lo <= value <= hi:
                raise DomainError(f"Point {pt.t} lies outside of the domain {fs.domain_box}")


def point_values(fs, pt):
    return dict(zip(fs.variables, list(pt.t) + list(pt.s)))


def expand_f_squared(fs, pt, order=tj.DEFAULT_ORDER):
    """Expand F² in the 2p variables (t, s) about a base point.

    Variables 0..p-1 are t1..tp and p..2p-1 are s1..sp.
    """
    check_base_point(fs, pt)
    lifted = tj.lift_point(list(pt.t) + list(pt.s), order)
    try:
        return se.eval_taylor(fs.f_squared, dict(zip(fs.variables, lifted)))
    except EvaluationError as exc:
        raise DomainError(f"F² cannot be evaluated at {pt}: {exc}") from exc


def s_multi_index(dim, *s_indices, t_indices=()):
    """Multi-index in (t, s) counting the given t and s derivatives."""
    index = [0] * (2 * dim)
    for a in s_indices:
        index[dim + a] += 1
    for a in t_indices:
        index[a] += 1
    return index


def derivative_array(series, dim, s_count, t_count=0):
    """Array of partial derivatives of a scalar series in (t, s).

    Axes run over s-derivative indices first, then t-derivative indices.
    """
    shape = (dim,) * (s_count + t_count)
    result = np.zeros(shape)
    for combo in itertools.product(range(dim), repeat=s_count + t_count):
        index = s_multi_index(dim, *combo[:s_count], t_indices=combo[s_count:])
        result[combo] = tj.partial_coeff(series, index)
    return result


def tensors_from_series(f2, dim, max_condition=None):
    """Fundamental tensors from an expansion of F² of order >= 3."""
    g = 0.5 * derivative_array(f2, dim, 2)
    cartan = 0.25 * derivative_array(f2, dim, 3)
    if max_condition is None:
        max_condition = tj.MAX_CONDITION
    condition = np.linalg.cond(g)
    if not np.isfinite(condition) or condition > max_condition:
        raise SingularMetricError(f"Fundamental tensor has condition number {condition}")
    g_inverse = np.linalg.inv(g)
    return FundamentalTensors(
        f_squared=f2.value,
        g=g,
        g_inverse=g_inverse,
        cartan=cartan,
        cartan_mixed=np.einsum("bl,lae->bae", g_inverse, cartan),
        eigenvalues=np.linalg.eigvalsh(g),
    )


def fundamental_tensors(fs, pt):
    return tensors_from_series(expand_f_squared(fs, pt, 3), fs.dim)


def metric_tensor(fs, pt, strict=False, min_eigenvalue=None):
    """Fundamental metric tensor g = (1/2) ∂²F²/∂s∂s.

    Parameters
    ----------
    fs : FinslerStructure
    pt : BasePoint
    strict : bool
        Raise instead of logging a warning when g is not positive
        definite

    Returns
    -------
    Tensor
        Symmetric components g_{αβ}
    """
    if min_eigenvalue is None:
        min_eigenvalue = MIN_EIGENVALUE
    f2 = expand_f_squared(fs, pt, 2)
    g = 0.5 * derivative_array(f2, fs.dim, 2)
    smallest = float(np.min(np.linalg.eigvalsh(g)))
    if smallest < min_eigenvalue:
        message = f"Fundamental tensor of {fs.label} at {pt} has eigenvalue {smallest}"
        if strict:
            raise NotPositiveDefiniteError(message)
        logging.warning(message)
    return Tensor(g, "ll", ((0, 1),))


def cartan_tensor(fs, pt):
    """Cartan tensor C = (1/4) ∂³F²/∂s∂s∂s, with the mixed form
    C^β_{αε} = g^{βλ} C_{λαε} on axes (β, α, ε)."""
    tensors = fundamental_tensors(fs, pt)
    return CartanTensor(
        lower=Tensor(tensors.cartan, "lll", ((0, 1, 2),)),
        mixed=Tensor(tensors.cartan_mixed, "ull", ((1, 2),)),
    )


def sample_base_points(fs, sample_spec=None, epsilon_zero_section=None):
    """Draw seeded uniform points in the t and s boxes, rejecting points
    on the zero section."""
    if sample_spec is None:
        sample_spec = SampleSpec()
    if epsilon_zero_section is None:
        epsilon_zero_section = EPSILON_ZERO_SECTION
    t_box = np.array(sample_spec.t_box or fs.domain_box or [DEFAULT_BOX] * fs.dim, dtype=float)
    s_box = np.array(sample_spec.s_box or [DEFAULT_BOX] * fs.dim, dtype=float)
    if t_box.shape != (fs.dim, 2) or s_box.shape != (fs.dim, 2):
        raise ScenarioError(f"Sampling boxes must have {fs.dim} (lo, hi) rows")
    rng = np.random.default_rng(sample_spec.seed)
    points = []
    rejected = 0
    while len(points) < sample_spec.count:
        t = rng.uniform(t_box[:, 0], t_box[:, 1])
        s = rng.uniform(s_box[:, 0], s_box[:, 1])
        if np.linalg.norm(s) < epsilon_zero_section:
            rejected += 1
            if rejected > MAX_REJECTIONS:
                raise ScenarioError("Sampling box for s collapses onto the zero section")
            continue
        points.append(make_point(t, s))
    if rejected:
        logging.warning(f"Rejected {rejected} samples on the zero section")
    return points


def randers_beta_norm(fs, pt):
    """Norm of β with respect to α at the point t of a Randers structure."""
    values = point_values(fs, pt)
    alpha = np.array([[se.evaluate(entry, values) for entry in row] for row in fs.params["alpha"]])
    beta = np.array([se.evaluate(entry, values) for entry in fs.params["beta"]])
    return float(np.sqrt(beta @ np.linalg.solve(alpha, beta)))


def _point_checks(fs, pt, scales):
    values = point_values(fs, pt)
    tensors = fundamental_tensors(fs, pt)
    s = np.array(pt.s)
    f2 = tensors.f_squared
    rows = {
        "euler_identity": abs(f2 - s @ tensors.g @ s) / max(1.0, abs(f2)),
        "cartan_contraction": float(np.max(np.abs(tensors.cartan @ s)))
        / max(1.0, float(np.max(np.abs(tensors.cartan)))),
        "positive_definite": float(np.min(tensors.eigenvalues)),
    }
    rows["homogeneity"] = max(
        se.check_homogeneity(fs.f_squared, fs.variables[fs.dim :], 2, [values], scale).max_residual
        for scale in scales
    )
    g_scale = max(1.0, float(np.max(np.abs(tensors.g))))
    rows["metric_homogeneity"] = max(
        float(np.max(np.abs(fundamental_tensors(fs, make_point(pt.t, scale * s)).g - tensors.g)))
        / g_scale
        for scale in scales
    )
    if "alpha" in fs.params and "beta" in fs.params:
        rows["randers_beta_norm"] = randers_beta_norm(fs, pt)
    return rows


def validate_structure(
    fs,
    sample_spec=None,
    tolerance=IDENTITY_TOLERANCE,
    min_eigenvalue=None,
    scales=HOMOGENEITY_SCALES,
):
    """Validate a structure at sampled points.

    Checks 2-homogeneity of F², the Euler identity F² = g(s, s), the
    contractions C_{αβμ}s^μ = 0, 0-homogeneity of g, positive
    definiteness of g and, for Randers structures, the norm of β.
    Failures are report entries, nothing is raised.

    Parameters
    ----------
    fs : FinslerStructure
    sample_spec : SampleSpec
    tolerance : float
        Largest admissible residual of the identities

    Returns
    -------
    ValidationReport
    """
    if sample_spec is None:
        sample_spec = SampleSpec()
    if min_eigenvalue is None:
        min_eigenvalue = MIN_EIGENVALUE
    points = sample_base_points(fs, sample_spec)

    def evaluate_point(pt):
        try:
            return pt, _point_checks(fs, pt, scales), None
        except FinslerLabError as exc:
            return pt, None, exc

    worst = {}
    failures = []
    for pt, rows, error in map_points(evaluate_point, points):
        if error is not None:
            failures.append((pt, error))
            continue
        for name, value in rows.items():
            # Eigenvalues and norms are worst when smallest or largest
            keep_smallest = name == "positive_definite"
            current = worst.get(name)
            if (
                current is None
                or (keep_smallest and value < current[0])
                or (not keep_smallest and value > current[0])
            ):
                worst[name] = (value, pt)

    checks = []
    for name, (value, pt) in worst.items():
        where = {"t": list(pt.t), "s": list(pt.s)}
        if name == "positive_definite":
            passed = value >= min_eigenvalue
            if not passed:
                logging.warning(
                    f"{fs.label} is not positive definite: eigenvalue {value} at {where}"
                )
            checks.append(CheckResult(name, passed, value, min_eigenvalue, where))
        elif name == "randers_beta_norm":
            checks.append(CheckResult(name, value < 1.0, value, 1.0, where))
        else:
            checks.append(CheckResult(name, value <= tolerance, value, tolerance, where))
    if failures:
        pt, error = failures[0]
        checks.append(
            CheckResult(
                "evaluation",
                False,
                float(len(failures)),
                0.0,
                {"t": list(pt.t), "s": list(pt.s)},
                str(error),
            )
        )
    return ValidationReport(fs.label, sample_spec.seed, len(points), checks)
