from dataclasses import dataclass, field
import logging

import numpy as np

from FinslerErrors import (
    DimensionMismatchError,
    FinslerLabError,
    ScenarioError,
    TargetZeroSectionError,
    ZeroSectionError,
)
import AffineMaps as am
import BerwaldConnection as bc
import FinslerMetric as fm
import TaylorJets as tj

JET_TOLERANCE = 1e-7
DEFAULT_JET_COUNT = 100
DEFAULT_JET_SEED = 42
MAX_REJECTIONS = 10000

TORSION_LABELS = tuple(f"T{k}" for k in range(1, 16))
CURVATURE_LABELS = tuple(f"C{k}" for k in range(1, 31))

# Index blocks of the full general-formula arrays: H selects the
# horizontal half of a doubled index A = (α, a), V the vertical half
H, V, ALL = "H", "V", "ALL"
GENERAL_BLOCKS = {
    "T1": ("t1", (V, H, H)),
    "T2": ("t3", (ALL, V, H, ALL, ALL)),
    "T3": ("t3", (ALL, V, V, ALL, ALL)),
    "T4": ("t4", (ALL, H, H, H)),
    "T5": ("t4", (ALL, H, H, V)),
    "T6": ("t4", (ALL, H, V, H)),
    "T7": ("t4", (ALL, V, H, H)),
    "T8": ("t4", (ALL, V, H, V)),
    "T9": ("t4", (ALL, V, V, H)),
    "T10": ("t5", (ALL, H, H, ALL)),
    "T11": ("t5", (ALL, H, V, ALL)),
    "T12": ("t5", (ALL, V, H, ALL)),
    "T13": ("t5", (ALL, V, V, ALL)),
    "T14": ("t6", (ALL, H, ALL, ALL)),
    "T15": ("t6", (ALL, V, ALL, ALL)),
    "C1": ("c1", (H, H, H, H)),
    "C2": ("c1", (V, H, H, H)),
    "C3": ("c1", (H, H, H, V)),
    "C4": ("c1", (V, H, H, V)),
    "C5": ("c1", (H, H, V, H)),
    "C6": ("c1", (V, H, V, H)),
    "C7": ("c1", (V, V, H, H)),
    "C8": ("c1", (V, V, H, V)),
    "C9": ("c1", (V, V, V, H)),
    "C10": ("c2", (ALL, ALL, H, ALL)),
    "C11": ("c2", (ALL, ALL, V, ALL)),
    "C12": ("c3", (ALL, ALL, ALL, ALL)),
    "C13": ("c4", (ALL, V, ALL, ALL, ALL)),
    "C14": ("c5", (ALL, H, H, ALL, H, H)),
    "C15": ("c5", (ALL, H, H, ALL, H, V)),
    "C16": ("c5", (ALL, H, H, ALL, V, H)),
    "C17": ("c5", (ALL, V, H, ALL, H, H)),
    "C18": ("c5", (ALL, V, H, ALL, H, V)),
    "C19": ("c5", (ALL, V, H, ALL, V, H)),
    "C20": ("c5", (ALL, V, V, ALL, H, H)),
    "C21": ("c5", (ALL, V, V, ALL, H, V)),
    "C22": ("c5", (ALL, V, V, ALL, V, H)),
    "C23": ("c6", (ALL, H, H, ALL, H, ALL)),
    "C24": ("c6", (ALL, H, H, ALL, V, ALL)),
    "C25": ("c6", (ALL, V, V, ALL, H, ALL)),
    "C26": ("c6", (ALL, V, V, ALL, V, ALL)),
    "C27": ("c7", (ALL, H, H)),
    "C28": ("c7", (ALL, V, V)),
    "C29": ("c8", (ALL, H, V, H)),
    "C30": ("c8", (ALL, V, V, V)),
}


@dataclass
class JetPoint:
    """Coordinates (t^α, s^a, x^i, x^i_α, y^i_a) of J¹(TM, N); x_alpha
    and y_a have shape (n, p)."""

    t: np.ndarray
    s: np.ndarray
    x: np.ndarray
    x_alpha: np.ndarray
    y_a: np.ndarray

    def __post_init__(self):
        self.t = np.asarray(self.t, dtype=float)
        self.s = np.asarray(self.s, dtype=float)
        self.x = np.asarray(self.x, dtype=float)
        self.x_alpha = np.asarray(self.x_alpha, dtype=float).reshape(len(self.x), len(self.t))
        self.y_a = np.asarray(self.y_a, dtype=float).reshape(len(self.x), len(self.t))
        if len(self.s) != len(self.t):
            raise DimensionMismatchError(f"t and s have lengths {len(self.t)} and {len(self.s)}")

    @property
    def source_point(self):
        return fm.make_point(self.t, self.s)

    @property
    def fiber_direction(self):
        """Y^l = y^l_a s^a."""
        return self.y_a @ self.s

    @property
    def target_point(self):
        return fm.make_point(self.x, self.fiber_direction)

    @property
    def jet_coordinates(self):
        """X^i_A = (x^i_α, y^i_a), of shape (n, 2p)."""
        return np.hstack([self.x_alpha, self.y_a])

    def to_dict(self):
        return {
            "t": self.t.tolist(),
            "s": self.s.tolist(),
            "x": self.x.tolist(),
            "x_alpha": self.x_alpha.tolist(),
            "y_a": self.y_a.tolist(),
        }


@dataclass
class JetSampleSpec:
    seed: int = DEFAULT_JET_SEED
    count: int = DEFAULT_JET_COUNT
    t_box: list | None = None
    s_box: list | None = None
    x_box: list | None = None
    x_alpha_box: tuple = (-1.0, 1.0)
    y_a_box: tuple = (-1.0, 1.0)


@dataclass
class JetGeometry:
    """Base-manifold data of the source at (t, s) and of the target at
    (x, y^l_a s^a), shared by the closed and the general formulas."""

    point: JetPoint
    source: bc.BaseGeometry
    target: bc.BaseGeometry


@dataclass
class JetConnection:
    normal: np.ndarray
    temporal: dict
    spatial: dict
    coefficients: dict
    n_colon: np.ndarray


@dataclass
class BlockSet:
    blocks: dict
    vanishing: dict = field(default_factory=dict)


@dataclass
class BlockResult:
    label: str
    shape: tuple
    max_abs_closed: float
    max_rel_residual: float
    passed: bool


@dataclass
class CrossCheckReport:
    scenario: str
    seed: int
    samples: int
    blocks: list
    vanishing: dict
    failures: list
    tolerance: float

    @property
    def overall_pass(self):
        return not self.failures and all(block.passed for block in self.blocks)

    @property
    def failing_blocks(self):
        return [block.label for block in self.blocks if not block.passed]


def check_jet_point(jp, epsilon_zero_section=None):
    if epsilon_zero_section is None:
        epsilon_zero_section = fm.EPSILON_ZERO_SECTION
    if np.linalg.norm(jp.s) < epsilon_zero_section:
        raise ZeroSectionError(f"Direction {jp.s.tolist()} lies on the zero section")
    if np.linalg.norm(jp.fiber_direction) < epsilon_zero_section:
        raise TargetZeroSectionError(
            f"y_a s^a = {jp.fiber_direction.tolist()} lies on the target zero section"
        )


def jet_geometry(src, tgt, jp, order=tj.DEFAULT_ORDER):
    if len(jp.t) != src.dim or len(jp.x) != tgt.dim:
        raise DimensionMismatchError(
            f"Jet point has dimensions ({len(jp.t)}, {len(jp.x)}), "
            f"structures have ({src.dim}, {tgt.dim})"
        )
    check_jet_point(jp)
    source = bc.base_geometry(src, jp.source_point, order)
    target = bc.base_geometry(tgt, jp.target_point, order)
    source.require("n_colon", "dn_colon", "db", "curvature")
    target.require("p_curvature", "curvature")
    return JetGeometry(jp, source, target)


def prolongation_jet_point(m, pt):
    """1-jet prolongation of a map at a point: x = φ(t) and x_α = y_a =
    φ_α."""
    d = am.map_differentials(m, fm.BasePoint(pt.t, ()))
    return JetPoint(pt.t, pt.s, d.value, d.jacobian, d.jacobian)


def sample_jet_points(src, tgt, spec=None, epsilon_zero_section=None):
    """Seeded uniform jet points, rejecting zero-section violations of s
    and of y_a s^a."""
    if spec is None:
        spec = JetSampleSpec()
    if epsilon_zero_section is None:
        epsilon_zero_section = fm.EPSILON_ZERO_SECTION
    p, n = src.dim, tgt.dim
    t_box = np.array(spec.t_box or src.domain_box or [fm.DEFAULT_BOX] * p, dtype=float)
    s_box = np.array(spec.s_box or [fm.DEFAULT_BOX] * p, dtype=float)
    x_box = np.array(spec.x_box or tgt.domain_box or [fm.DEFAULT_BOX] * n, dtype=float)
    if t_box.shape != (p, 2) or s_box.shape != (p, 2) or x_box.shape != (n, 2):
        raise ScenarioError("Jet sampling boxes do not match the structure dimensions")
    rng = np.random.default_rng(spec.seed)
    points = []
    rejected = 0
    while len(points) < spec.count:
        jp = JetPoint(
            rng.uniform(t_box[:, 0], t_box[:, 1]),
            rng.uniform(s_box[:, 0], s_box[:, 1]),
            rng.uniform(x_box[:, 0], x_box[:, 1]),
            rng.uniform(*spec.x_alpha_box, size=(n, p)),
            rng.uniform(*spec.y_a_box, size=(n, p)),
        )
        try:
            check_jet_point(jp, epsilon_zero_section)
        except FinslerLabError:
            rejected += 1
            if rejected > MAX_REJECTIONS:
                raise ScenarioError("Jet sampling boxes collapse onto a zero section")
            continue
        points.append(jp)
    if rejected:
        logging.warning(f"Rejected {rejected} jet samples on a zero section")
    return points


def normal_components(geo):
    """Normal components Γ^C_{AB} of the Berwald connection, axes (C, A,
    B) over doubled indices A = (α, a)."""
    p = geo.dim
    b = geo.b
    table = np.zeros((2 * p,) * 3)
    table[:p, :p, :p] = b
    table[p:, :p, :p] = geo.n_colon
    table[p:, p:, :p] = b
    table[p:, :p, p:] = b
    return table


def berwald_temporal_nlc(src, jp, geo=None):
    """Blocks ^1M^{(j)}_{(β)α}, ^2M^{(j)}_{(b)α}, ^3M^{(j)}_{(β)a} and
    ^4M^{(j)}_{(b)a} = 0 of the Berwald temporal nonlinear connection, on
    axes (j, B, A)."""
    if geo is None:
        check_jet_point(jp)
        geo = bc.base_geometry(src, jp.source_point)
        geo.require("n_colon")
    b = geo.b
    x_alpha, y_a = jp.x_alpha, jp.y_a
    n, p = x_alpha.shape
    return {
        "M1": -np.einsum("gab,jg->jba", b, x_alpha) - np.einsum("cab,jc->jba", geo.n_colon, y_a),
        "M2": -np.einsum("cab,jc->jba", b, y_a),
        "M3": -np.einsum("cab,jc->jba", b, y_a),
        "M4": np.zeros((n, p, p)),
    }


def temporal_nlc_from_normal(src, jp, geo=None):
    """Temporal nonlinear connection M^{(j)}_{(B)A} = −Γ^C_{AB}X^j_C from
    the normal components, on axes (j, B, A)."""
    if geo is None:
        check_jet_point(jp)
        geo = bc.base_geometry(src, jp.source_point)
        geo.require("n_colon")
    return -np.einsum("cab,jc->jba", normal_components(geo), jp.jet_coordinates)


def berwald_spatial_nlc(tgt, jp, target=None):
    """Blocks ^1N^{(j)}_{(β)i} = B̃^j_{ik}x^k_β and ^2N^{(j)}_{(b)i} =
    B̃^j_{ik}y^k_b, on axes (j, B, i), from one evaluation of B̃ at (x,
    y_a s^a)."""
    if target is None:
        check_jet_point(jp)
        target = bc.base_geometry(tgt, jp.target_point, 4)
    return {
        "N1": np.einsum("jik,kb->jbi", target.b, jp.x_alpha),
        "N2": np.einsum("jik,kb->jbi", target.b, jp.y_a),
    }


def jet_dconnection(src, tgt, jp, jet_geo=None):
    """The eleven nonvanishing coefficients of the jet Berwald linear
    d-connection.

    Keys name the coefficient; the G blocks carry −δ^i_j and the L blocks
    δ^B_A factors. Axes put upper indices first.
    """
    if jet_geo is None:
        jet_geo = jet_geometry(src, tgt, jp)
    geo, target = jet_geo.source, jet_geo.target
    p, n = geo.dim, target.dim
    b, n_colon, b_target = geo.b, geo.n_colon, target.b
    delta_n = np.eye(n)
    delta_p = np.eye(p)
    # Suffixes give the horizontal (h) or vertical (v) type of the upper
    # and then the lower doubled indices
    coefficients = {
        "Gbar_h_hh": b,
        "Gbar_v_hh": n_colon,
        "Gbar_v_vh": b,
        "Gbar_v_hv": b,
        "G_hh_h": -np.einsum("ij,bga->ibajg", delta_n, b),
        "G_vh_h": -np.einsum("ij,bga->ibajg", delta_n, n_colon),
        "G_vh_v": -np.einsum("ij,bca->ibajc", delta_n, b),
        "G_vv_h": -np.einsum("ij,bga->ibajg", delta_n, b),
        "L": b_target,
        "L_hh": np.einsum("ba,ijk->ibajk", delta_p, b_target),
        "L_vv": np.einsum("ba,ijk->ibajk", delta_p, b_target),
    }
    return JetConnection(
        normal=normal_components(geo),
        temporal=berwald_temporal_nlc(src, jp, geo),
        spatial=berwald_spatial_nlc(tgt, jp, target),
        coefficients=coefficients,
        n_colon=n_colon,
    )


def alternate(f, first, second):
    """Alternate sum f(α, β) − f(β, α) over two axes."""
    return f - np.swapaxes(f, first, second)


def dtorsions_closed(src, tgt, jp, jet_geo=None):
    """The fifteen torsion blocks T1..T15 from base-manifold data.

    Returns
    -------
    BlockSet
    """
    if jet_geo is None:
        jet_geo = jet_geometry(src, tgt, jp)
    geo, target = jet_geo.source, jet_geo.target
    p = geo.dim
    b, n, pc, r = geo.b, geo.n, geo.p_curvature, geo.curvature
    nc, dnc, db = geo.n_colon, geo.dn_colon, geo.db
    bt, nt, pt, rt = target.b, target.n, target.p_curvature, target.curvature
    s, xa, ya = jp.s, jp.x_alpha, jp.y_a
    y = jp.fiber_direction

    blocks = {"T1": geo.torsion.copy()}
    blocks["T2"] = np.einsum("mikj,ku,b->mbuij", pt, xa, s)
    blocks["T3"] = np.einsum("mikj,kc,b->mbcij", pt, ya, s)

    h = 0.5 * r + np.einsum("euac,cb->euab", pc, n)
    f = (
        np.einsum("cbua->cuab", dnc[..., :p])
        + np.einsum("dbu,cda->cuab", nc, b)
        - np.einsum("cbg,gau->cuab", nc, b)
    )
    blocks["T4"] = alternate(
        -np.einsum("euab,me->muab", h, xa) + np.einsum("cuab,mc->muab", f, ya), 2, 3
    )
    bracket = (
        np.einsum("cbua->cuab", db[..., :p])
        - np.einsum("caub->cuab", dnc[..., p:])
        + np.einsum("dbu,cda->cuab", b, b)
        - np.einsum("gau,cgb->cuab", b, b)
    )
    blocks["T5"] = -np.einsum("euab,me->muab", pc, xa) + np.einsum(
        "cuab,mc->muab", bracket, ya
    )
    bracket = (
        np.einsum("caub->cuab", db[..., :p])
        - np.einsum("cbua->cuab", dnc[..., p:])
        + np.einsum("dau,cdb->cuab", b, b)
        - np.einsum("gbu,cga->cuab", b, b)
    )
    blocks["T6"] = np.einsum("euab,me->muab", pc, xa) - np.einsum(
        "cuab,mc->muab", bracket, ya
    )
    h = 0.5 * r + np.einsum("dcaf,fb->dcab", pc, n)
    blocks["T7"] = alternate(-np.einsum("dcab,md->mcab", h, ya), 2, 3)
    blocks["T8"] = -np.einsum("dcab,md->mcab", pc, ya)
    blocks["T9"] = np.einsum("dcab,md->mcab", pc, ya)
    blocks["T10"] = -np.einsum("mjkl,cab,b,ku,lc->muaj", pt, b, s, xa, ya)
    blocks["T11"] = -np.einsum("mjkl,ku,la->muaj", pt, xa, ya)
    blocks["T12"] = -np.einsum("mjkl,dab,b,kc,ld->mcaj", pt, b, s, ya, ya)
    blocks["T13"] = -np.einsum("mjkl,kc,la->mcaj", pt, ya, ya)
    h = (
        0.5 * rt
        + np.einsum("mkil,lj->mkij", pt, nt)
        - np.einsum("mkil,ljq,q->mkij", pt, bt, y)
    )
    blocks["T14"] = alternate(np.einsum("mkij,ku->muij", h, xa), 2, 3)
    blocks["T15"] = alternate(np.einsum("mkij,kc->mcij", h, ya), 2, 3)
    return BlockSet(blocks)


def dcurvatures_closed(src, tgt, jp, jet_geo=None):
    """The thirty curvature blocks C1..C30 from base-manifold data.

    Blocks carrying a Kronecker factor are built as that factor times
    the block they reduce to.

    Returns
    -------
    BlockSet
    """
    if jet_geo is None:
        jet_geo = jet_geometry(src, tgt, jp)
    geo, target = jet_geo.source, jet_geo.target
    p, n = geo.dim, target.dim
    b, nn, pc, r = geo.b, geo.n, geo.p_curvature, geo.curvature
    nc, dnc, db = geo.n_colon, geo.dn_colon, geo.db
    bt, nt, pt, rt = target.b, target.n, target.p_curvature, target.curvature
    s, ya = jp.s, jp.y_a
    y = jp.fiber_direction

    blocks = {}
    blocks["C1"] = alternate(0.5 * r + np.einsum("dabc,cg->dabg", pc, nn), 2, 3)
    blocks["C2"] = alternate(
        dnc[..., :p]
        + np.einsum("cab,dcg->dabg", nc, b)
        - np.einsum("dub,uag->dabg", nc, b),
        2,
        3,
    )
    blocks["C3"] = pc.copy()
    blocks["C4"] = (
        dnc[..., p:]
        - np.einsum("dacb->dabc", db[..., :p])
        + np.einsum("uab,duc->dabc", b, b)
        - np.einsum("fac,dfb->dabc", b, b)
    )
    blocks["C5"] = -pc
    blocks["C6"] = (
        db[..., :p]
        - np.einsum("dagb->dabg", dnc[..., p:])
        + np.einsum("cab,dcg->dabg", b, b)
        - np.einsum("uag,dub->dabg", b, b)
    )
    blocks["C7"] = alternate(0.5 * r + np.einsum("dabc,cg->dabg", pc, nn), 2, 3)
    blocks["C8"] = pc.copy()
    blocks["C9"] = -pc
    blocks["C10"] = -np.einsum("likj,cba,a,jc->libk", pt, b, s, ya)
    blocks["C11"] = -np.einsum("likj,jb->libk", pt, ya)
    blocks["C12"] = alternate(
        0.5 * rt
        + np.einsum("lijr,rk->lijk", pt, nt)
        - np.einsum("lijr,rkq,q->lijk", pt, bt, y),
        2,
        3,
    )
    blocks["C13"] = np.einsum("lijk,c->lcijk", pt, s)

    def minus_delta(block):
        # −δ^l_i times a block with axes (A, D, B, C)
        return -np.einsum("li,adbc->ladibc", np.eye(n), block)

    f17 = (
        np.einsum("abeg->aebg", dnc[..., :p])
        + np.einsum("cbe,acg->aebg", nc, b)
        - np.einsum("abu,ueg->aebg", nc, b)
    )
    bracket18 = (
        np.einsum("abec->aebc", dnc[..., p:])
        - np.einsum("aceb->aebc", db[..., :p])
        + np.einsum("ube,auc->aebc", b, b)
        - np.einsum("dce,adb->aebc", b, b)
    )
    bracket19 = (
        np.einsum("abeg->aebg", db[..., :p])
        - np.einsum("ageb->aebg", dnc[..., p:])
        + np.einsum("cbe,acg->aebg", b, b)
        - np.einsum("uge,aub->aebg", b, b)
    )
    blocks["C14"] = minus_delta(blocks["C1"])
    blocks["C15"] = minus_delta(blocks["C3"])
    blocks["C16"] = minus_delta(blocks["C5"])
    blocks["C17"] = minus_delta(alternate(f17, 2, 3))
    blocks["C18"] = minus_delta(bracket18)
    blocks["C19"] = minus_delta(bracket19)
    blocks["C20"] = minus_delta(blocks["C7"])
    blocks["C21"] = minus_delta(blocks["C8"])
    blocks["C22"] = minus_delta(blocks["C9"])

    delta_p = np.eye(p)
    blocks["C23"] = np.einsum("ae,libk->laeibk", delta_p, blocks["C10"])
    blocks["C24"] = np.einsum("ae,libk->laeibk", delta_p, blocks["C11"])
    blocks["C25"] = np.einsum("ae,libk->laeibk", delta_p, blocks["C10"])
    blocks["C26"] = np.einsum("ae,libk->laeibk", delta_p, blocks["C11"])
    blocks["C27"] = np.einsum("ae,lijk->laeijk", delta_p, blocks["C12"])
    blocks["C28"] = np.einsum("ae,lijk->laeijk", delta_p, blocks["C12"])
    blocks["C29"] = np.einsum("ae,lcijk->laceijk", delta_p, blocks["C13"])
    blocks["C30"] = np.einsum("ae,lcijk->laceijk", delta_p, blocks["C13"])
    return BlockSet(blocks)


class JetLift:
    """Order-1 lift of a jet point in all of its coordinates (t, s, x,
    X^i_A), with the jet Berwald nonlinear connection as series.

    Base-manifold data enter as inner order-1 expansions composed with
    the lifted coordinates, B̃ through the substitution y^l = y^l_a s^a.
    """

    def __init__(self, jet_geo):
        jp = jet_geo.point
        p, n = len(jp.t), len(jp.x)
        self.p, self.n = p, n
        values = np.concatenate([jp.t, jp.s, jp.x, jp.jet_coordinates.ravel()])
        lifted = tj.lift_point(values, 1)
        num_vars = len(values)
        self.source_args = lifted[: 2 * p]
        self.x_args = lifted[2 * p : 2 * p + n]
        coordinates = tj.stack(lifted[2 * p + n :])
        self.jet = tj.TaylorValue(
            num_vars, 1, coordinates.data.reshape(n, 2 * p, coordinates.data.shape[-1])
        )
        s_args = tj.stack(self.source_args[p:])
        self.fiber = tj.contract("la,a->l", self.jet[:, p:], s_args)

        geo = jet_geo.source
        b1 = tj.truncate(geo.b_series, 1).data
        normal = np.zeros((2 * p,) * 3 + (b1.shape[-1],))
        normal[:p, :p, :p] = b1
        normal[p:, :p, :p] = tj.truncate(geo.n_colon_series, 1).data
        normal[p:, p:, :p] = b1
        normal[p:, :p, p:] = b1
        self.normal = tj.taylor_compose(tj.TaylorValue(2 * p, 1, normal), self.source_args)
        self.b_target = tj.taylor_compose(
            tj.truncate(jet_geo.target.b_series, 1), list(self.x_args) + list(self.fiber)
        )

        # M^{(j)}_{(B)A} = −Γ^C_{AB}X^j_C and N^{(j)}_{(B)i} = B̃^j_{ik}X^k_B
        self.temporal = -tj.contract("cab,jc->jba", self.normal, self.jet)
        self.spatial = tj.contract("jik,kb->jbi", self.b_target, self.jet)
        self.temporal_value = self.temporal.value
        self.spatial_value = self.spatial.value

    def split(self, series):
        p2, n = 2 * self.p, self.n
        gradient = tj.gradient(series)
        d_jet = gradient[..., p2 + n :].reshape(series.shape + (n, p2))
        return gradient[..., :p2], gradient[..., p2 : p2 + n], d_jet

    def d_jet(self, series):
        """∂/∂X^j_B on trailing axes (j, B)."""
        return self.split(series)[2]

    def delta_source(self, series):
        """δ^J/δT^A = ∂/∂T^A − M^{(j)}_{(B)A} ∂/∂X^j_B."""
        d_source, _, d_jet = self.split(series)
        return d_source - np.einsum("jba,...jb->...a", self.temporal_value, d_jet)

    def delta_target(self, series):
        """δ^J/δx^i = ∂/∂x^i − N^{(j)}_{(B)i} ∂/∂X^j_B."""
        _, d_x, d_jet = self.split(series)
        return d_x - np.einsum("jbi,...jb->...i", self.spatial_value, d_jet)


def _slices(spec, p):
    lookup = {H: slice(0, p), V: slice(p, 2 * p), ALL: slice(None)}
    return tuple(lookup[key] for key in spec)


def torsion_arrays(lift):
    """Full torsion arrays 't1'..'t6' of the jet Berwald connection from
    the general formulas, on axes with upper indices first."""
    p, n = lift.p, lift.n
    normal = lift.normal.value
    b_target = lift.b_target.value

    arrays = {"t1": alternate(normal, 1, 2)}
    # G^{(m)(B)}_{(M)(j)A} = −δ^m_j Γ^B_{AM} on axes (m, B, M, j, A)
    g_block = -np.einsum("mj,bae->mbeja", np.eye(n), normal)
    arrays["t2"] = np.einsum("meajb->mbeaj", lift.d_jet(lift.temporal)) - np.einsum(
        "mbeja->mbeaj", g_block
    )
    # L^{(m)(B)}_{(M)(j)i} = δ^B_M B̃^m_{ji} on axes (m, B, M, i, j)
    l_block = np.einsum("be,mji->mbeij", np.eye(2 * p), b_target)
    arrays["t3"] = np.einsum("meijb->mbeij", lift.d_jet(lift.spatial)) - l_block
    arrays["t4"] = alternate(lift.delta_source(lift.temporal), 2, 3)
    arrays["t5"] = lift.delta_target(lift.temporal) - np.einsum(
        "meja->meaj", lift.delta_source(lift.spatial)
    )
    arrays["t6"] = alternate(lift.delta_target(lift.spatial), 2, 3)
    return arrays


def curvature_arrays(lift):
    """Full curvature arrays 'c1'..'c8' of the jet Berwald connection
    from the general formulas."""
    p, n = lift.p, lift.n
    normal = lift.normal.value
    b_target = lift.b_target.value

    arrays = {
        "c1": alternate(lift.delta_source(lift.normal), 2, 3)
        + np.einsum("mab,dmc->dabc", normal, normal)
        - np.einsum("mac,dmb->dabc", normal, normal),
        "c2": -np.einsum("likb->libk", lift.delta_source(lift.b_target)),
        "c3": alternate(lift.delta_target(lift.b_target), 2, 3)
        + np.einsum("mij,lmk->lijk", b_target, b_target)
        - np.einsum("mik,lmj->lijk", b_target, b_target),
        "c4": np.einsum("lijkg->lgijk", lift.d_jet(lift.b_target)),
    }

    # G^{(l)(A)}_{(D)(i)B} = −δ^l_i Γ^A_{BD} and L^{(l)(A)}_{(D)(i)k} =
    # δ^A_D B̃^l_{ik}, on axes (l, A, D, i, B) and (l, A, D, i, k)
    g_series = tj.contract("li,abd->ladib", -np.eye(n), lift.normal)
    l_series = tj.contract("ad,lik->ladik", np.eye(2 * p), lift.b_target)
    g_value, l_value = g_series.value, l_series.value
    arrays["c5"] = (
        alternate(lift.delta_source(g_series), 4, 5)
        + np.einsum("maeib,ledmc->ladibc", g_value, g_value)
        - np.einsum("maeic,ledmb->ladibc", g_value, g_value)
    )
    arrays["c6"] = (
        lift.delta_target(g_series)
        - np.einsum("ladikb->ladibk", lift.delta_source(l_series))
        + np.einsum("maeib,ledmk->ladibk", g_value, l_value)
        - np.einsum("maeik,ledmb->ladibk", l_value, g_value)
    )
    arrays["c7"] = (
        alternate(lift.delta_target(l_series), 4, 5)
        + np.einsum("maeij,ledmk->ladijk", l_value, l_value)
        - np.einsum("maeik,ledmj->ladijk", l_value, l_value)
    )
    arrays["c8"] = np.einsum("ladijkg->lagdijk", lift.d_jet(l_series))
    return arrays


def _select_blocks(arrays, labels, p):
    """Cut the named blocks out of full arrays; what remains outside them
    is reported as its largest magnitude per array."""
    blocks = {}
    remainders = {name: np.array(array) for name, array in arrays.items()}
    for label in labels:
        name, spec = GENERAL_BLOCKS[label]
        index = _slices(spec, p)
        blocks[label] = arrays[name][index].copy()
        remainders[name][index] = 0.0
    vanishing = {
        name: float(np.max(np.abs(array), initial=0.0)) for name, array in remainders.items()
    }
    return BlockSet(blocks, vanishing)


def dtorsions_general(src, tgt, jp, jet_geo=None, lift=None):
    """Torsion blocks from the general formulas, with the largest
    magnitude of the components outside the fifteen blocks."""
    if jet_geo is None:
        jet_geo = jet_geometry(src, tgt, jp)
    if lift is None:
        lift = JetLift(jet_geo)
    return _select_blocks(torsion_arrays(lift), TORSION_LABELS, lift.p)


def dcurvatures_general(src, tgt, jp, jet_geo=None, lift=None):
    if jet_geo is None:
        jet_geo = jet_geometry(src, tgt, jp)
    if lift is None:
        lift = JetLift(jet_geo)
    return _select_blocks(curvature_arrays(lift), CURVATURE_LABELS, lift.p)


def compare_blocks(closed, general):
    """Relative residual per block between two block sets."""
    return {
        label: fm.relative_residual(closed.blocks[label], general.blocks[label])
        for label in closed.blocks
    }


def cross_validate(src, tgt, spec=None, tolerance=JET_TOLERANCE, scenario="", inject_fault=None):
    """Compare the closed and the general torsion and curvature blocks
    at seeded jet points.

    Parameters
    ----------
    src, tgt : FinslerStructure
    spec : JetSampleSpec
    tolerance : float
        Largest admissible relative residual per block
    scenario : str
        Name recorded in the report
    inject_fault : str
        Label of a closed block to corrupt, for exercising the failure
        path

    Returns
    -------
    CrossCheckReport
        Per-point errors are listed in failures, not raised
    """
    if spec is None:
        spec = JetSampleSpec()
    labels = TORSION_LABELS + CURVATURE_LABELS
    if inject_fault is not None and inject_fault not in labels:
        raise ScenarioError(f"Unknown block '{inject_fault}'")
    points = sample_jet_points(src, tgt, spec)
    logging.info(f"Cross-validating {len(points)} jet points of {scenario or src.label}")

    def evaluate(jp):
        try:
            jet_geo = jet_geometry(src, tgt, jp)
            closed = dtorsions_closed(src, tgt, jp, jet_geo).blocks
            closed.update(dcurvatures_closed(src, tgt, jp, jet_geo).blocks)
            lift = JetLift(jet_geo)
            torsions = dtorsions_general(src, tgt, jp, jet_geo, lift)
            curvatures = dcurvatures_general(src, tgt, jp, jet_geo, lift)
        except FinslerLabError as exc:
            return jp, None, None, None, exc
        if inject_fault is not None:
            closed[inject_fault] = closed[inject_fault] + 1.0
        general = dict(torsions.blocks, **curvatures.blocks)
        vanishing = dict(torsions.vanishing, **curvatures.vanishing)
        return jp, closed, general, vanishing, None

    worst_abs = {label: 0.0 for label in labels}
    worst_rel = {label: 0.0 for label in labels}
    shapes = {}
    vanishing = {}
    failures = []
    for jp, closed, general, point_vanishing, error in fm.map_points(evaluate, points):
        if error is not None:
            failures.append({"point": jp.to_dict(), "error": str(error)})
            continue
        for label in labels:
            shapes[label] = closed[label].shape
            worst_abs[label] = max(worst_abs[label], float(np.max(np.abs(closed[label]))))
            worst_rel[label] = max(
                worst_rel[label], fm.relative_residual(closed[label], general[label])
            )
        for name, value in point_vanishing.items():
            vanishing[name] = max(vanishing.get(name, 0.0), value)

    blocks = [
        BlockResult(
            label,
            tuple(shapes.get(label, ())),
            worst_abs[label],
            worst_rel[label],
            worst_rel[label] <= tolerance,
        )
        for label in labels
    ]
    report = CrossCheckReport(
        scenario or f"{src.label} -> {tgt.label}",
        spec.seed,
        len(points),
        blocks,
        vanishing,
        failures,
        tolerance,
    )
    if not report.overall_pass:
        logging.warning(f"Jet cross-validation failed for blocks {report.failing_blocks}")
    return report
