from dataclasses import dataclass
import logging

import numpy as np

from FinslerErrors import (
    CrossCheckFailureError,
    FinslerLabError,
    OrderExceededError,
    SprayMismatchError,
    UnsupportedVarianceError,
)
import FinslerMetric as fm
import ScalarExpr as se
import TaylorJets as tj

SPRAY_TOLERANCE = 1e-8
CROSS_CHECK_TOLERANCE = 1e-8
NLC_TOLERANCE = 1e-9

# Derivatives of B and of N_{α:β} at the point need F² to order five
MIN_CURVATURE_ORDER = 5
MIN_ORDER = 3

BUILTIN_FIELDS = ("g", "s", "F", "C")


@dataclass(frozen=True)
class BaseGeometry:
    """Connection objects of a Finsler structure at one base point.

    Arrays put upper indices first, then lower indices, each group in
    printed order: gamma[μ, α, β] is γ^μ_{αβ}, n[β, α] is N^β_α and
    cartan_h[γ, α, β, μ] is C^γ_{αβ|μ}. Trailing axes of length 2p hold
    first derivatives in (t, s). Fields that need a higher expansion
    order than the one requested are None.
    """

    dim: int
    point: fm.BasePoint
    order: int
    f_squared: float
    g: np.ndarray
    g_inverse: np.ndarray
    cartan: np.ndarray
    cartan_mixed: np.ndarray
    dg: np.ndarray
    gamma: np.ndarray
    spray_formal: np.ndarray
    spray: np.ndarray
    n: np.ndarray
    n_cartan: np.ndarray
    christoffel: np.ndarray
    n_series: tj.TaylorValue
    b: np.ndarray | None = None
    b_series: tj.TaylorValue | None = None
    cartan_h: np.ndarray | None = None
    b_formula: np.ndarray | None = None
    dn: np.ndarray | None = None
    torsion: np.ndarray | None = None
    db: np.ndarray | None = None
    p_curvature: np.ndarray | None = None
    curvature: np.ndarray | None = None
    n_colon: np.ndarray | None = None
    n_colon_series: tj.TaylorValue | None = None
    dn_colon: np.ndarray | None = None

    def require(self, *names):
        for name in names:
            if getattr(self, name) is None:
                raise OrderExceededError(
                    f"'{name}' needs a larger expansion order than {self.order}"
                )


@dataclass
class BerwaldCurvatures:
    torsion: fm.Tensor
    curvature: fm.Tensor
    p_curvature: fm.Tensor


def _s_jacobian(series, dim):
    """Differentiate an array of series in every s variable, appending
    the derivative index as a trailing axis."""
    return tj.stack(
        [tj.series_derivative(series, dim + a) for a in range(dim)],
        axis=len(series.shape),
    )


def _t_jacobian(series, dim):
    return tj.stack(
        [tj.series_derivative(series, a) for a in range(dim)],
        axis=len(series.shape),
    )


def _delta(derivatives, n, dim):
    """Adapted derivative δ/δt^μ = ∂/∂t^μ − N^ε_μ ∂/∂s^ε from first
    derivatives in (t, s) on the trailing axis."""
    return derivatives[..., :dim] - np.einsum("em,...e->...m", n, derivatives[..., dim:])


def _christoffel_from(derivatives, g_inverse):
    # ½ g^{με}(d_{εα,β} + d_{εβ,α} − d_{αβ,ε}) for d[x, y, z] = D_z g_{xy}
    lowered = (
        derivatives + derivatives.transpose(0, 2, 1) - derivatives.transpose(2, 0, 1)
    )
    return fm.symmetrize(0.5 * np.einsum("me,eab->mab", g_inverse, lowered))


def spray_series(fs, pt, order=tj.DEFAULT_ORDER, max_condition=None):
    """Series of the metric, its inverse and the spray at a base point.

    The spray G^γ = (g^{γμ}/4)(∂²F²/∂s^μ∂t^ν s^ν − ∂F²/∂t^μ) is built in
    series arithmetic, so its s-derivatives give N and B.

    Returns
    -------
    tuple
        The expansion of F² (order K), g and its inverse (order K - 2)
        and G (order K - 2)
    """
    p = fs.dim
    f2 = fm.expand_f_squared(fs, pt, order)
    d_s = _s_jacobian(f2, p)
    g_series = _s_jacobian(d_s, p)
    g_series = 0.5 * tj.TaylorValue(
        g_series.num_vars,
        g_series.order,
        fm.symmetrize(g_series.data, 0, 1),
    )
    g_inverse_series = tj.taylor_matrix_inverse(g_series, max_condition)
    mixed = _t_jacobian(d_s, p)
    s_series = tj.stack(
        [tj.lift_variable(p + a, pt.s[a], 2 * p, order - 2) for a in range(p)]
    )
    euler_lagrange = tj.contract("mn,n->m", mixed, s_series) - tj.truncate(
        _t_jacobian(f2, p), order - 2
    )
    spray = 0.25 * tj.contract("gm,m->g", g_inverse_series, euler_lagrange)
    return f2, g_series, g_inverse_series, spray


def spray_and_connection(fs, pt, max_condition=None):
    """Spray G^γ and nonlinear connection N^γ_α = ∂G^γ/∂s^α at a point,
    from the smallest expansion that yields them."""
    _, _, _, spray = spray_series(fs, pt, MIN_ORDER, max_condition)
    return spray.value, _s_jacobian(spray, fs.dim).value


def base_geometry(fs, pt, order=tj.DEFAULT_ORDER, max_condition=None):
    """Compute every connection object of a structure at a base point
    from one expansion of F².

    Parameters
    ----------
    fs : FinslerStructure
    pt : BasePoint
    order : int
        Expansion order of F² in (t, s); 3 gives the spray and the
        connections, 4 adds B and the torsion, 5 adds the curvatures
    max_condition : float
        Largest admissible condition number of g

    Returns
    -------
    BaseGeometry
    """
    if order < MIN_ORDER:
        raise OrderExceededError(f"Connection objects need order {MIN_ORDER}, got {order}")
    p = fs.dim
    f2, g_series, g_inverse_series, spray = spray_series(fs, pt, order, max_condition)
    tensors = fm.tensors_from_series(f2, p, max_condition)
    g_inverse = tensors.g_inverse
    s = np.array(pt.s)

    dg = tj.gradient(g_series)
    gamma = _christoffel_from(dg[..., :p], g_inverse)
    spray_formal = 0.5 * np.einsum("mab,a,b->m", gamma, s, s)
    n_series = _s_jacobian(spray, p)
    n = n_series.value
    n_cartan = np.einsum("bae,e->ba", gamma, s) - np.einsum(
        "bae,emn,m,n->ba", tensors.cartan_mixed, gamma, s, s
    )
    christoffel = _christoffel_from(_delta(dg, n, p), g_inverse)

    fields = dict(
        dim=p,
        point=pt,
        order=order,
        f_squared=tensors.f_squared,
        g=tensors.g,
        g_inverse=g_inverse,
        cartan=tensors.cartan,
        cartan_mixed=tensors.cartan_mixed,
        dg=dg,
        gamma=gamma,
        spray_formal=spray_formal,
        spray=spray.value,
        n=n,
        n_cartan=n_cartan,
        christoffel=christoffel,
        n_series=n_series,
    )
    if order < 4:
        return BaseGeometry(**fields)

    b_series = _s_jacobian(n_series, p)
    b_series = tj.TaylorValue(
        b_series.num_vars, b_series.order, fm.symmetrize(b_series.data)
    )
    b = b_series.value

    # C^γ_{αβ} = g^{γλ} C_{λαβ} as a series, for its adapted derivative
    cartan_mixed_series = 0.5 * tj.contract(
        "gl,lab->gab",
        tj.truncate(g_inverse_series, order - 3),
        _s_jacobian(g_series, p),
    )
    cm = tensors.cartan_mixed
    gm = christoffel
    cartan_h = (
        _delta(tj.gradient(cartan_mixed_series), n, p)
        + np.einsum("eab,gem->gabm", cm, gm)
        - np.einsum("geb,eam->gabm", cm, gm)
        - np.einsum("gae,ebm->gabm", cm, gm)
    )
    b_formula = fm.symmetrize(christoffel + np.einsum("gabm,m->gab", cartan_h, s))

    dn = tj.gradient(n_series)
    delta_n = _delta(dn, n, p)
    fields.update(
        b=b,
        b_series=b_series,
        cartan_h=cartan_h,
        b_formula=b_formula,
        dn=dn,
        torsion=delta_n - delta_n.transpose(0, 2, 1),
    )
    if order < MIN_CURVATURE_ORDER:
        return BaseGeometry(**fields)

    db = tj.gradient(b_series)
    delta_b = _delta(db, n, p)
    half = delta_b + np.einsum("mbg,ame->abge", b, b)
    curvature = half - half.transpose(0, 1, 3, 2)

    # N^c_{α:β} = ∂N^c_α/∂t^β + N^d_α B^c_{dβ} − N^c_γ B^γ_{αβ}
    n_low = tj.truncate(n_series, order - 4)
    n_colon_series = (
        _t_jacobian(n_series, p)
        + tj.contract("da,cdb->cab", n_low, b_series)
        - tj.contract("cg,gab->cab", n_low, b_series)
    )
    fields.update(
        db=db,
        p_curvature=db[..., p:],
        curvature=curvature,
        n_colon=n_colon_series.value,
        n_colon_series=n_colon_series,
        dn_colon=tj.gradient(n_colon_series),
    )
    return BaseGeometry(**fields)


def geometry_residuals(geo):
    """Relative residuals of the identities relating the connection
    objects, keyed by check name."""
    s = np.array(geo.point.s)
    residuals = {
        "spray": fm.relative_residual(geo.spray_formal, geo.spray),
        "nonlinear_cartan": fm.relative_residual(geo.n_cartan, geo.n),
        "christoffel_contraction": fm.relative_residual(
            np.einsum("gam,m->ga", geo.christoffel, s), geo.n
        ),
        "spray_contraction": fm.relative_residual(2.0 * geo.spray, geo.n @ s),
    }
    if geo.b is not None:
        residuals["berwald"] = fm.relative_residual(geo.b_formula, geo.b)
    return residuals


def formal_christoffel(fs, pt):
    """Formal Christoffel symbols γ^μ_{αβ}, axes (μ, α, β)."""
    geo = base_geometry(fs, pt, MIN_ORDER)
    return fm.Tensor(geo.gamma, "ull", ((1, 2),))


def spray(fs, pt, tolerance=SPRAY_TOLERANCE):
    """Spray coefficients G^μ = ½ γ^μ_{αβ} s^α s^β.

    The value is checked against the Euler-Lagrange form of the spray,
    computed from the derivatives of F².

    Raises
    ------
    SprayMismatchError
        If the two forms differ by more than tolerance, relatively
    """
    geo = base_geometry(fs, pt, MIN_ORDER)
    residual = fm.relative_residual(geo.spray_formal, geo.spray)
    if residual > tolerance:
        raise SprayMismatchError(
            f"Spray forms of {fs.label} differ by {residual} at {pt}"
        )
    return geo.spray_formal


def nonlinear_cartan(fs, pt, tolerance=NLC_TOLERANCE):
    """Nonlinear Cartan connection N^β_α = γ^β_{αε}s^ε −
    C^β_{αε}γ^ε_{μν}s^μs^ν, axes (β, α), checked against ∂G^β/∂s^α."""
    geo = base_geometry(fs, pt, MIN_ORDER)
    residual = fm.relative_residual(geo.n_cartan, geo.n)
    if residual > tolerance:
        raise CrossCheckFailureError(
            f"Nonlinear connection of {fs.label} differs from ∂G/∂s by {residual} at {pt}"
        )
    return fm.Tensor(geo.n_cartan, "ul")


def generalized_christoffel(fs, pt):
    geo = base_geometry(fs, pt, MIN_ORDER)
    return fm.Tensor(geo.christoffel, "ull", ((1, 2),))


def berwald_coeffs(fs, pt, tolerance=CROSS_CHECK_TOLERANCE, order=4):
    """Berwald coefficients B^γ_{αβ} = ∂²G^γ/∂s^α∂s^β, axes (γ, α, β).

    Raises
    ------
    CrossCheckFailureError
        If Γ^γ_{αβ} + C^γ_{αβ|0} differs from the spray derivative by
        more than tolerance, relatively
    """
    geo = base_geometry(fs, pt, order)
    residual = fm.relative_residual(geo.b_formula, geo.b)
    if residual > tolerance:
        raise CrossCheckFailureError(
            f"Berwald coefficients of {fs.label} differ by {residual} at {pt}"
        )
    return fm.Tensor(geo.b, "ull", ((1, 2),))


def rund_h_covariant(fs, pt, field, order=4):
    """Horizontal covariant derivative of the Rund connection.

    Parameters
    ----------
    fs : FinslerStructure
    pt : BasePoint
    field : str | Expr
        One of 'g' (g_{αβ|γ}, axes (α, β, γ)), 's' (s^α_{|γ}, axes (α,
        γ)), 'F' (F_{|γ}) or 'C' (C^γ_{αβ|μ}, axes (γ, α, β, μ)), or a
        scalar expression in the source variables

    Returns
    -------
    numpy.ndarray
    """
    geo = base_geometry(fs, pt, order)
    p = fs.dim
    if isinstance(field, str) and field in BUILTIN_FIELDS:
        if field == "g":
            return (
                _delta(geo.dg, geo.n, p)
                - np.einsum("eb,eag->abg", geo.g, geo.christoffel)
                - np.einsum("ae,ebg->abg", geo.g, geo.christoffel)
            )
        if field == "s":
            return -geo.n + np.einsum("aeg,e->ag", geo.christoffel, np.array(pt.s))
        if field == "C":
            return geo.cartan_h
        f2 = fm.expand_f_squared(fs, pt, 1)
        f = tj.elementary("sqrt", f2)
        return _delta(tj.gradient(f), geo.n, p)
    if isinstance(field, (se.Constant, se.Variable, se.Unary, se.Binary, se.Power)):
        lifted = tj.lift_point(list(pt.t) + list(pt.s), 1)
        series = se.eval_taylor(field, dict(zip(fs.variables, lifted)))
        return _delta(tj.gradient(series), geo.n, p)
    raise UnsupportedVarianceError(
        f"Cannot differentiate field {field!r}, expected one of {BUILTIN_FIELDS} "
        "or a scalar expression"
    )


def berwald_torsion_curvature(fs, pt, order=tj.DEFAULT_ORDER):
    """Torsion ^bR^α_{βγ} and curvatures ^bR^α_{βγε}, ^bP^α_{βγε} of the
    Berwald connection."""
    if order < MIN_CURVATURE_ORDER:
        raise OrderExceededError(
            f"Berwald curvatures need order {MIN_CURVATURE_ORDER}, got {order}"
        )
    geo = base_geometry(fs, pt, order)
    p_curvature = geo.p_curvature
    try:
        fm.check_symmetry(p_curvature, (1, 2, 3))
    except FinslerLabError:
        logging.warning(f"Berwald curvature P of {fs.label} is not symmetric at {pt}")
    return BerwaldCurvatures(
        torsion=fm.Tensor(geo.torsion, "ull"),
        curvature=fm.Tensor(geo.curvature, "ulll"),
        p_curvature=fm.Tensor(p_curvature, "ulll"),
    )
