from dataclasses import dataclass, field
import logging
import math
from pathlib import Path

import numpy as np
import pandas as pd
from scipy.integrate import simpson, solve_ivp

from FinslerErrors import (
    ScenarioError,
    StepSizeUnderflowError,
    ZeroVelocityError,
)
import BerwaldConnection as bc
import FinslerMetric as fm
import ScalarExpr as se

DEFAULT_TOL = 1e-8
DEFAULT_SAMPLES = 101
RHS_TOLERANCE = 1e-10
ACCELERATION_FORMS = ("nonlinear", "spray", "christoffel", "formal")


@dataclass(frozen=True)
class CurveState:
    time: float
    position: tuple
    velocity: tuple


@dataclass
class GeodesicTrace:
    """Samples of a curve with its speed profile F(c, ċ).

    Accelerations are those of the autoparallel equation for integrated
    traces and finite differences for sampled curves.
    """

    states: list
    speeds: np.ndarray
    accelerations: np.ndarray
    statistics: dict = field(default_factory=dict)

    @property
    def times(self):
        return np.array([state.time for state in self.states])

    @property
    def positions(self):
        return np.array([state.position for state in self.states])

    @property
    def velocities(self):
        return np.array([state.velocity for state in self.states])

    @property
    def speed_drift(self):
        """Largest relative deviation of the speed from its initial value."""
        return float(np.max(np.abs(self.speeds - self.speeds[0])) / self.speeds[0])


def make_state(time, position, velocity):
    return CurveState(
        float(time),
        tuple(float(v) for v in position),
        tuple(float(v) for v in velocity),
    )


def _state_point(fs, state):
    if np.linalg.norm(state.velocity) < fm.EPSILON_ZERO_SECTION:
        raise ZeroVelocityError(
            f"Velocity {state.velocity} at time {state.time} lies on the zero section"
        )
    return fm.BasePoint(state.position, state.velocity)


def autoparallel_rhs(fs, state, tolerance=RHS_TOLERANCE):
    """Acceleration −N^α_β(c, ċ)ċ^β of the autoparallel through a state.

    The value is compared with −2G^α(c, ċ), and a disagreement beyond
    tolerance is logged.
    """
    pt = _state_point(fs, state)
    spray, n = bc.spray_and_connection(fs, pt)
    acceleration = -n @ np.array(state.velocity)
    residual = fm.relative_residual(acceleration, -2.0 * spray)
    if residual > tolerance:
        logging.warning(
            f"Autoparallel accelerations of {fs.label} differ by {residual} at time {state.time}"
        )
    return acceleration


def autoparallel_acceleration(fs, state, form="nonlinear"):
    """Acceleration of the autoparallel through a state in one of its
    equivalent forms.

    Parameters
    ----------
    fs : FinslerStructure
    state : CurveState
    form : str
        'nonlinear' for −N ċ, 'spray' for −2G, 'christoffel' for
        −Γ ċ ċ and 'formal' for −γ ċ ċ

    Returns
    -------
    numpy.ndarray
    """
    if form not in ACCELERATION_FORMS:
        raise ValueError(
            f"Unknown acceleration form '{form}', expected one of {ACCELERATION_FORMS}"
        )
    pt = _state_point(fs, state)
    v = np.array(state.velocity)
    if form in ("nonlinear", "spray"):
        spray, n = bc.spray_and_connection(fs, pt)
        return -n @ v if form == "nonlinear" else -2.0 * spray
    geo = bc.base_geometry(fs, pt, bc.MIN_ORDER)
    table = geo.christoffel if form == "christoffel" else geo.gamma
    return -np.einsum("mab,a,b->m", table, v, v)


def speed(fs, position, velocity):
    values = dict(zip(fs.variables, list(position) + list(velocity)))
    return math.sqrt(se.evaluate(fs.f_squared, values))


def integrate_autoparallel(fs, initial, t_final, tol=DEFAULT_TOL, samples=DEFAULT_SAMPLES):
    """Integrate the autoparallel equation c̈ + N(c, ċ)ċ = 0.

    Uses the embedded Dormand-Prince 5(4) pair with relative tolerance
    tol and absolute tolerance tol / 1000, sampled from dense output at
    equally spaced times.

    Parameters
    ----------
    fs : FinslerStructure
    initial : CurveState
        Initial time, position and velocity
    t_final : float
        Final time
    tol : float
        Per-step error tolerance
    samples : int
        Number of samples in the trace

    Returns
    -------
    GeodesicTrace
    """
    if tol <= 0:
        raise ScenarioError(f"Integration tolerance must be positive, got {tol}")
    if samples < 2:
        raise ScenarioError(f"A trace needs at least two samples, got {samples}")
    _state_point(fs, initial)
    p = fs.dim

    def rhs(time, y):
        state = CurveState(time, tuple(y[:p]), tuple(y[p:]))
        return np.concatenate([y[p:], autoparallel_rhs(fs, state)])

    def zero_velocity(time, y):
        return np.linalg.norm(y[p:]) - fm.EPSILON_ZERO_SECTION

    zero_velocity.terminal = True

    logging.info(f"Integrating autoparallel of {fs.label} from {initial}")
    times = np.linspace(initial.time, t_final, samples)
    solution = solve_ivp(
        rhs,
        (initial.time, t_final),
        np.concatenate([initial.position, initial.velocity]),
        method="RK45",
        t_eval=times,
        dense_output=True,
        events=zero_velocity,
        rtol=tol,
        atol=tol * 1e-3,
    )
    if solution.status == 1:
        raise ZeroVelocityError(f"Velocity vanished at time {solution.t_events[0][0]}")
    if solution.status != 0:
        raise StepSizeUnderflowError(f"Integration failed: {solution.message}")

    states = [
        CurveState(float(time), tuple(y[:p]), tuple(y[p:]))
        for time, y in zip(solution.t, solution.y.T)
    ]
    statistics = {
        "nfev": int(solution.nfev),
        "status": int(solution.status),
        "message": solution.message,
        "tol": tol,
    }
    return GeodesicTrace(
        states=states,
        speeds=np.array([speed(fs, s.position, s.velocity) for s in states]),
        accelerations=np.array([autoparallel_rhs(fs, s) for s in states]),
        statistics=statistics,
    )


def integrate_autoparallels(fs, initials, t_final, tol=DEFAULT_TOL, samples=DEFAULT_SAMPLES):
    """Integrate independent curves, in parallel when threads allow."""
    return fm.map_points(
        lambda initial: integrate_autoparallel(fs, initial, t_final, tol, samples),
        initials,
    )


def trace_from_samples(fs, times, positions, velocities=None):
    """Trace of a given curve, with velocities and accelerations from
    finite differences where not supplied."""
    times = np.asarray(times, dtype=float)
    positions = np.asarray(positions, dtype=float)
    if np.any(np.diff(times) <= 0):
        raise ValueError("Time stamps of a trace must increase")
    if velocities is None:
        velocities = np.gradient(positions, times, axis=0, edge_order=2)
    velocities = np.asarray(velocities, dtype=float)
    states = [make_state(*row) for row in zip(times, positions, velocities)]
    return GeodesicTrace(
        states=states,
        speeds=np.array([speed(fs, s.position, s.velocity) for s in states]),
        accelerations=np.gradient(velocities, times, axis=0, edge_order=2),
        statistics={"source": "samples"},
    )


def autoparallel_residuals(fs, trace):
    """Largest residual of the trace accelerations in the Christoffel,
    formal Christoffel and spray forms of the autoparallel equation."""
    residuals = {form: 0.0 for form in ACCELERATION_FORMS if form != "nonlinear"}
    for state, acceleration in zip(trace.states, trace.accelerations):
        for form in residuals:
            residual = np.max(
                np.abs(acceleration - autoparallel_acceleration(fs, state, form))
            )
            residuals[form] = max(residuals[form], float(residual))
    return residuals


def energy(fs, trace):
    """Absolute energy, the integral of F²(c, ċ) along the trace by
    composite Simpson quadrature."""
    return float(simpson(trace.speeds**2, x=trace.times))


def trace_frame(trace):
    p = len(trace.states[0].position)
    frame = pd.DataFrame(
        np.column_stack([trace.times, trace.positions, trace.velocities, trace.speeds]),
        columns=["time"]
        + [f"t{i + 1}" for i in range(p)]
        + [f"v{i + 1}" for i in range(p)]
        + ["speed_F"],
    )
    return frame


def write_trace_csv(trace, path):
    """Write a trace as CSV, floats in their shortest round-trip form like
    the JSON reports."""
    path = Path(path)
    logging.info(f"Writing trace to {path}")
    trace_frame(trace).to_csv(path, index=False)
