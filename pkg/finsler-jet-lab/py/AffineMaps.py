from dataclasses import dataclass
import logging
import math

import numpy as np

from FinslerErrors import (
    DimensionMismatchError,
    SingularJacobianError,
    TargetZeroSectionError,
)
import Autoparallels as ap
import BerwaldConnection as bc
import FinslerMetric as fm
import ScalarExpr as se
import TaylorJets as tj

AFFINE_TOLERANCE = 1e-8
SIGMA_MIN = 1e-8
ISOMETRY_TOLERANCE = 1e-10
TENSION_TOLERANCE = 1e-8
SPRAY_EQUALITY_TOLERANCE = 1e-8
TRANSPORT_TOLERANCE = 1e-5


@dataclass(frozen=True)
class SmoothMap:
    """A map φ from a p-dimensional source to an n-dimensional target,
    given by n component expressions in t1..tp."""

    source_dim: int
    target_dim: int
    components: tuple
    label: str = ""


@dataclass
class MapDifferentials:
    value: np.ndarray
    jacobian: np.ndarray
    hessian: np.ndarray
    pushed_point: fm.BasePoint | None


@dataclass
class AffineResidual:
    """τ^i_{αβ} on axes (i, α, β) and its sup norm at a base point."""

    tau: np.ndarray
    sup: float
    point: fm.BasePoint


@dataclass
class NondegeneracyReport:
    singular_values: list
    min_singular_value: float
    sigma_min: float
    worst_point: fm.BasePoint | None

    @property
    def passed(self):
        return self.min_singular_value >= self.sigma_min


@dataclass
class IsometryReport:
    residuals: dict
    tolerances: dict
    count: int

    @property
    def checks(self):
        return {
            name: value <= self.tolerances[name] for name, value in self.residuals.items()
        }

    @property
    def passed(self):
        return self.checks["scalar"] and self.checks["metric"]


@dataclass
class TensionField:
    simplified: np.ndarray
    full: np.ndarray

    @property
    def residual(self):
        return fm.relative_residual(self.simplified, self.full)


@dataclass
class TransportReport:
    sup_residual: float
    sup_christoffel_residual: float
    witness_time: float
    trace: ap.GeodesicTrace


@dataclass
class IdentityReport:
    affine_sup: float
    spray_sup: float
    affine_tolerance: float
    spray_tolerance: float

    @property
    def affine(self):
        return self.affine_sup <= self.affine_tolerance

    @property
    def equal_sprays(self):
        return self.spray_sup <= self.spray_tolerance

    @property
    def consistent(self):
        return self.affine == self.equal_sprays


def parse_map(texts, source_dim, label=""):
    """Parse the components of a map, which may use t1..tp only."""
    t_names = [f"t{i + 1}" for i in range(source_dim)]
    components = tuple(se.parse(text, t_names) for text in texts)
    if not components:
        raise DimensionMismatchError("A map needs at least one component")
    return SmoothMap(source_dim, len(components), components, label or ", ".join(texts))


def identity_map(dim):
    return parse_map([f"t{i + 1}" for i in range(dim)], dim, "identity")


def map_differentials(m, pt, epsilon_zero_section=None):
    """Value, Jacobian φ^i_α and Hessian φ^i_{αβ} of a map at a point.

    Parameters
    ----------
    m : SmoothMap
    pt : BasePoint
        Point (t, s) of the source
    epsilon_zero_section : float
        Smallest admissible norm of the pushed direction dφ(s)

    Returns
    -------
    MapDifferentials
        The pushed point (φ(t), φ_α s^α) is None if s is empty
    """
    if len(pt.t) != m.source_dim:
        raise DimensionMismatchError(
            f"Point has dimension {len(pt.t)}, map has source dimension {m.source_dim}"
        )
    if epsilon_zero_section is None:
        epsilon_zero_section = fm.EPSILON_ZERO_SECTION
    p = m.source_dim
    lifted = tj.lift_point(pt.t, 2)
    bindings = {f"t{i + 1}": lifted[i] for i in range(p)}
    series = [se.eval_taylor(component, bindings) for component in m.components]
    value = np.array([c.value for c in series])
    jacobian = np.array([tj.gradient(c) for c in series])
    hessian = np.zeros((m.target_dim, p, p))
    for i, c in enumerate(series):
        for a in range(p):
            for b in range(p):
                index = [0] * p
                index[a] += 1
                index[b] += 1
                hessian[i, a, b] = tj.partial_coeff(c, index)

    pushed = None
    if pt.s:
        y = jacobian @ np.array(pt.s)
        if np.linalg.norm(y) < epsilon_zero_section:
            raise TargetZeroSectionError(f"dφ(s) = {y} lies on the target zero section")
        pushed = fm.make_point(value, y)
    return MapDifferentials(value, jacobian, hessian, pushed)


def nondegeneracy_check(m, pts, sigma_min=SIGMA_MIN):
    """Smallest singular value of the Jacobian at each point."""
    if m.source_dim > m.target_dim:
        raise DimensionMismatchError(
            f"A map from dimension {m.source_dim} to {m.target_dim} cannot be nondegenerate"
        )
    singular_values = []
    worst = (math.inf, None)
    for pt in pts:
        jacobian = map_differentials(m, fm.BasePoint(pt.t, ())).jacobian
        values = np.linalg.svd(jacobian, compute_uv=False)
        singular_values.append(values.tolist())
        if values[-1] < worst[0]:
            worst = (float(values[-1]), pt)
    return NondegeneracyReport(singular_values, worst[0], sigma_min, worst[1])


def _tau(d, b, b_target):
    tau = (
        d.hessian
        - np.einsum("gab,ig->iab", b, d.jacobian)
        + np.einsum("ijk,ja,kb->iab", b_target, d.jacobian, d.jacobian)
    )
    return fm.symmetrize(tau)


def affine_residual(src, tgt, m, pt, sigma_min=SIGMA_MIN):
    """Affine residual τ^i_{αβ} = φ^i_{αβ} − B^γ_{αβ}φ^i_γ +
    B̃^i_{jk}φ^j_αφ^k_β, with B̃ at the pushed point (φ(t), dφ(s)).

    Returns
    -------
    AffineResidual
    """
    d = map_differentials(m, pt)
    if np.linalg.svd(d.jacobian, compute_uv=False)[-1] < sigma_min:
        logging.warning(f"Map {m.label} is degenerate at {pt.t}")
    b = bc.base_geometry(src, pt, 4).b
    b_target = bc.base_geometry(tgt, d.pushed_point, 4).b
    tau = _tau(d, b, b_target)
    return AffineResidual(tau, float(np.max(np.abs(tau))), pt)


def affine_sweep(src, tgt, m, pts, tolerance=AFFINE_TOLERANCE):
    """Sup of the affine residual over points, with the worst point as a
    witness."""
    residuals = fm.map_points(lambda pt: affine_residual(src, tgt, m, pt), pts)
    worst = max(residuals, key=lambda r: r.sup)
    return {
        "sup": worst.sup,
        "tolerance": tolerance,
        "affine": worst.sup <= tolerance,
        "witness": {"t": list(worst.point.t), "s": list(worst.point.s)},
    }


def _inverse_jacobian(jacobian, sigma_min):
    if jacobian.shape[0] != jacobian.shape[1]:
        raise DimensionMismatchError(f"Isometries need equal dimensions, got {jacobian.shape}")
    if np.linalg.svd(jacobian, compute_uv=False)[-1] < sigma_min:
        raise SingularJacobianError(f"Jacobian {jacobian.tolist()} is singular")
    return np.linalg.inv(jacobian)


def isometry_check(
    src,
    tgt,
    m,
    pts,
    tolerance=ISOMETRY_TOLERANCE,
    cross_check_tolerance=bc.CROSS_CHECK_TOLERANCE,
    sigma_min=SIGMA_MIN,
):
    """Check F(t, s) = F̃(φ(t), dφ(s)) and the pullback relations.

    Besides the scalar condition and g_{αβ} = g̃_{ij}φ^i_αφ^j_β, the
    report holds the inverse relation g^{αβ} = g̃^{ij}ψ^α_iψ^β_j, the
    spray pullback 2G^γ = 2G̃^mψ^γ_m + φ^m_{αβ}ψ^γ_m s^α s^β and the
    Berwald pullback B^γ_{αβ} = B̃^m_{jk}φ^j_αφ^k_βψ^γ_m +
    φ^m_{αβ}ψ^γ_m, where ψ is the inverse of the Jacobian. The map is
    an isometry when the scalar and metric residuals pass.
    """
    if m.source_dim != m.target_dim or src.dim != tgt.dim:
        raise DimensionMismatchError(
            f"Isometries need equal dimensions, got {m.source_dim} and {m.target_dim}"
        )

    def point_residuals(pt):
        d = map_differentials(m, pt)
        psi = _inverse_jacobian(d.jacobian, sigma_min)
        s = np.array(pt.s)
        geo = bc.base_geometry(src, pt, 4)
        geo_target = bc.base_geometry(tgt, d.pushed_point, 4)
        f = math.sqrt(geo.f_squared)
        f_target = math.sqrt(geo_target.f_squared)
        pulled_spray = psi @ (
            2.0 * geo_target.spray + np.einsum("mab,a,b->m", d.hessian, s, s)
        )
        pulled_b = np.einsum(
            "mjk,ja,kb,gm->gab", geo_target.b, d.jacobian, d.jacobian, psi
        ) + np.einsum("mab,gm->gab", d.hessian, psi)
        return {
            "scalar": abs(f - f_target) / max(1.0, f),
            "metric": fm.relative_residual(geo.g, d.jacobian.T @ geo_target.g @ d.jacobian),
            "inverse_metric": fm.relative_residual(
                geo.g_inverse, psi @ geo_target.g_inverse @ psi.T
            ),
            "spray": fm.relative_residual(2.0 * geo.spray, pulled_spray),
            "berwald": fm.relative_residual(geo.b, pulled_b),
        }

    residuals = {}
    for rows in fm.map_points(point_residuals, pts):
        for name, value in rows.items():
            residuals[name] = max(residuals.get(name, 0.0), value)
    tolerances = {
        "scalar": tolerance,
        "metric": tolerance,
        "inverse_metric": tolerance,
        "spray": cross_check_tolerance,
        "berwald": cross_check_tolerance,
    }
    return IsometryReport(residuals, tolerances, len(pts))


def _target_cartan_derivative(tgt, pushed):
    # C̃^i_{jkl} = g̃^{im} ∂C̃_{jkl}/∂y^m, taken literally
    n = tgt.dim
    f2 = fm.expand_f_squared(tgt, pushed, 4)
    tensors = fm.tensors_from_series(f2, n)
    dc = 0.25 * fm.derivative_array(f2, n, 4)
    return tensors, np.einsum("im,jklm->ijkl", tensors.g_inverse, dc)


def tension_field(src, tgt, m, pt):
    """Tension field τ^i(φ) at a point.

    The simplified form is built from the affine residual τ^i_{αβ}; the
    full form uses the Γ-brackets of the source and target, which agree
    with τ once contracted with s.

    Returns
    -------
    TensionField
    """
    d = map_differentials(m, pt)
    s = np.array(pt.s)
    geo = bc.base_geometry(src, pt, 4)
    geo_target = bc.base_geometry(tgt, d.pushed_point, 4)
    tensors, cartan_4 = _target_cartan_derivative(tgt, d.pushed_point)
    cartan_3 = tensors.cartan_mixed
    g_inverse = geo.g_inverse
    phi = d.jacobian

    def combine(first, bracket):
        return (
            np.einsum("ab,iab->i", g_inverse, first)
            + 4.0 * np.einsum("ab,ijk,ka,jbg,g->i", g_inverse, cartan_3, phi, bracket, s)
            + np.einsum("ab,ijkl,ka,lb,jge,g,e->i", g_inverse, cartan_4, phi, phi, bracket, s, s)
        )

    tau = _tau(d, geo.b, geo_target.b)
    christoffel_bracket = (
        d.hessian
        - np.einsum("mbg,jm->jbg", geo.christoffel, phi)
        + np.einsum("jpq,pb,qg->jbg", geo_target.christoffel, phi, phi)
    )
    tension = TensionField(simplified=combine(tau, tau), full=combine(tau, christoffel_bracket))
    if tension.residual > TENSION_TOLERANCE:
        logging.warning(f"Tension field forms of {m.label} differ by {tension.residual}")
    return tension


def autoparallel_transport_test(
    src, tgt, m, initial, t_final, tol=ap.DEFAULT_TOL, samples=ap.DEFAULT_SAMPLES
):
    """Map an autoparallel of the source through φ and measure the target
    autoparallel residual ẍ + Ñ(x, ẋ)ẋ along the image.

    The image is x = φ(c), ẋ = φ_α ċ^α and ẍ = φ_{αβ}ċ^αċ^β + φ_μ c̈^μ.
    The Γ̃-form residual ẍ + Γ̃(x, ẋ)ẋẋ is reported as well.
    """
    trace = ap.integrate_autoparallel(src, initial, t_final, tol, samples)
    sup_residual = 0.0
    sup_christoffel = 0.0
    witness = trace.states[0].time
    for state, acceleration in zip(trace.states, trace.accelerations):
        d = map_differentials(m, fm.BasePoint(state.position, state.velocity))
        v = np.array(state.velocity)
        x_dot = np.array(d.pushed_point.s)
        x_ddot = np.einsum("iab,a,b->i", d.hessian, v, v) + d.jacobian @ acceleration
        _, n_target = bc.spray_and_connection(tgt, d.pushed_point)
        residual = float(np.max(np.abs(x_ddot + n_target @ x_dot)))
        christoffel = bc.base_geometry(tgt, d.pushed_point, bc.MIN_ORDER).christoffel
        sup_christoffel = max(
            sup_christoffel,
            float(np.max(np.abs(x_ddot + np.einsum("ijk,j,k->i", christoffel, x_dot, x_dot)))),
        )
        if residual > sup_residual:
            sup_residual = residual
            witness = state.time
    return TransportReport(sup_residual, sup_christoffel, witness, trace)


def identity_map_criterion(
    src, tgt, pts, affine_tolerance=AFFINE_TOLERANCE, spray_tolerance=SPRAY_EQUALITY_TOLERANCE
):
    """Compare the affine residual of the identity map between two
    structures on the same manifold with the spray difference
    max|G − G̃|; the identity is affine exactly when the sprays agree."""
    if src.dim != tgt.dim:
        raise DimensionMismatchError(f"Structures have dimensions {src.dim} and {tgt.dim}")
    identity = identity_map(src.dim)

    def point_values(pt):
        residual = affine_residual(src, tgt, identity, pt).sup
        spray_src, _ = bc.spray_and_connection(src, pt)
        spray_tgt, _ = bc.spray_and_connection(tgt, pt)
        return residual, float(np.max(np.abs(spray_src - spray_tgt)))

    rows = fm.map_points(point_values, pts)
    return IdentityReport(
        affine_sup=max(row[0] for row in rows),
        spray_sup=max(row[1] for row in rows),
        affine_tolerance=affine_tolerance,
        spray_tolerance=spray_tolerance,
    )
