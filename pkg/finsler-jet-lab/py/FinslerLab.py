import argparse
from contextlib import contextmanager
from dataclasses import dataclass, field
import json
import logging
import os
from pathlib import Path
import sys

import numpy as np
import pandas as pd

from FinslerErrors import (
    FinslerLabError,
    ScenarioError,
    StepSizeUnderflowError,
    ZeroVelocityError,
)
import AffineMaps as am
import Autoparallels as ap
import BerwaldConnection as bc
import FinslerMetric as fm
import JetSpace as js
import ScalarExpr as se
import TaylorJets as tj

EXIT_PASS = 0
EXIT_FAIL = 1
EXIT_CONFIG = 2

# Scenario tolerance keys and the module constants they override
TOLERANCES = {
    "epsilon_div": (tj, "EPSILON_DIV"),
    "max_condition": (tj, "MAX_CONDITION"),
    "homogeneity": (se, "HOMOGENEITY_TOLERANCE"),
    "epsilon_zero_section": (fm, "EPSILON_ZERO_SECTION"),
    "min_eigenvalue": (fm, "MIN_EIGENVALUE"),
    "identity": (fm, "IDENTITY_TOLERANCE"),
    "spray": (bc, "SPRAY_TOLERANCE"),
    "cross_check": (bc, "CROSS_CHECK_TOLERANCE"),
    "nlc": (bc, "NLC_TOLERANCE"),
    "ode": (ap, "DEFAULT_TOL"),
    "affine": (am, "AFFINE_TOLERANCE"),
    "sigma_min": (am, "SIGMA_MIN"),
    "isometry": (am, "ISOMETRY_TOLERANCE"),
    "tension": (am, "TENSION_TOLERANCE"),
    "spray_equality": (am, "SPRAY_EQUALITY_TOLERANCE"),
    "transport": (am, "TRANSPORT_TOLERANCE"),
    "jet": (js, "JET_TOLERANCE"),
}
AFFINE_CHECKS = ("affine", "harmonic", "transport", "isometry", "identity", "nondegeneracy")
DEFAULT_AFFINE_CHECKS = ("affine", "harmonic", "transport")


@dataclass
class Scenario:
    """A scenario file: structures, an optional map, sampling and
    tolerance overrides."""

    name: str
    source: fm.FinslerStructure
    target: fm.FinslerStructure
    smooth_map: am.SmoothMap | None = None
    sampling: fm.SampleSpec = field(default_factory=fm.SampleSpec)
    jet_sampling: js.JetSampleSpec = field(default_factory=js.JetSampleSpec)
    tolerances: dict = field(default_factory=dict)
    checks: tuple = DEFAULT_AFFINE_CHECKS
    geodesic: dict = field(default_factory=dict)
    transport: dict = field(default_factory=dict)

    def tolerance(self, name):
        if name in self.tolerances:
            return self.tolerances[name]
        module, attribute = TOLERANCES[name]
        return getattr(module, attribute)


def read_scenario_json(path):
    """Read a scenario file, reporting the line and column of malformed
    JSON."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ScenarioError(f"Cannot read scenario {path}: {exc}") from exc
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ScenarioError(
            f"Malformed JSON in {path} at line {exc.lineno} column {exc.colno}: {exc.msg}"
        ) from exc
    if not isinstance(data, dict):
        raise ScenarioError(f"Scenario {path} must hold a JSON object")
    return data


def build_structure(spec, role):
    """Build a structure from a catalog name or a raw expression of F²."""
    if not isinstance(spec, dict) or "dim" not in spec:
        raise ScenarioError(f"The {role} structure needs an object with a 'dim'")
    dim = int(spec["dim"])
    if "catalog" in spec:
        params = dict(spec.get("params", {}))
        if "label" in spec:
            params["label"] = spec["label"]
        if "domain_box" in spec:
            params["domain_box"] = spec["domain_box"]
        return fm.catalog_structure(spec["catalog"], dim, params)
    if "f_squared" in spec:
        return fm.make_structure(
            dim, spec["f_squared"], spec.get("label", ""), spec.get("domain_box")
        )
    raise ScenarioError(f"The {role} structure needs a 'catalog' name or an 'f_squared'")


def _sample_spec(spec, factory):
    try:
        return factory(**spec)
    except TypeError as exc:
        raise ScenarioError(f"Invalid sampling specification: {exc}") from exc


def load_scenario(path):
    """Load and check a scenario file.

    Parameters
    ----------
    path : str | Path

    Returns
    -------
    Scenario

    Raises
    ------
    ScenarioError
        On unreadable or malformed files, unknown tolerance keys,
        unknown checks or inconsistent dimensions
    """
    data = read_scenario_json(path)
    if "source" not in data:
        raise ScenarioError("A scenario needs a 'source' structure")
    source = build_structure(data["source"], "source")
    target = build_structure(data["target"], "target") if "target" in data else source

    smooth_map = None
    if "map" in data:
        components = data["map"].get("components", [])
        smooth_map = am.parse_map(components, source.dim, data["map"].get("label", ""))
        if smooth_map.target_dim != target.dim:
            raise ScenarioError(
                f"Map has {smooth_map.target_dim} components, target has dimension {target.dim}"
            )

    tolerances = {}
    for name, value in data.get("tolerances", {}).items():
        if name not in TOLERANCES:
            raise ScenarioError(f"Unknown tolerance '{name}', expected one of {sorted(TOLERANCES)}")
        tolerances[name] = float(value)

    checks = tuple(data.get("checks", DEFAULT_AFFINE_CHECKS))
    unknown = set(checks) - set(AFFINE_CHECKS)
    if unknown:
        raise ScenarioError(f"Unknown checks {sorted(unknown)}, expected some of {AFFINE_CHECKS}")

    return Scenario(
        name=data.get("name", Path(path).stem),
        source=source,
        target=target,
        smooth_map=smooth_map,
        sampling=_sample_spec(data.get("sampling", {}), fm.SampleSpec),
        jet_sampling=_sample_spec(data.get("jet_sampling", {}), js.JetSampleSpec),
        tolerances=tolerances,
        checks=checks,
        geodesic=dict(data.get("geodesic", {})),
        transport=dict(data.get("transport", {})),
    )


@contextmanager
def tolerance_overrides(tolerances):
    """Set module tolerances for the duration of a command."""
    saved = {}
    try:
        for name, value in tolerances.items():
            module, attribute = TOLERANCES[name]
            saved[name] = getattr(module, attribute)
            setattr(module, attribute, value)
        yield
    finally:
        for name, value in saved.items():
            module, attribute = TOLERANCES[name]
            setattr(module, attribute, value)


def to_jsonable(value):
    """Convert numpy values and tuples to plain JSON types."""
    if isinstance(value, dict):
        return {str(k): to_jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [to_jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return to_jsonable(value.tolist())
    if isinstance(value, np.bool_):
        return bool(value)
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, (float, np.floating)):
        return float(value)
    return value


def write_report(report, out=None):
    """Write a report as JSON to a file or stdout.

    Floats are written in their shortest round-trip form, so identical
    reports give identical bytes.
    """
    text = json.dumps(to_jsonable(report), indent=2) + "\n"
    if out is None:
        sys.stdout.write(text)
    else:
        logging.info(f"Writing report to {out}")
        Path(out).write_text(text)


def validation_dict(report):
    return {
        "label": report.label,
        "seed": report.seed,
        "count": report.count,
        "passed": report.passed,
        "checks": [
            {
                "name": check.name,
                "passed": check.passed,
                "value": check.value,
                "tolerance": check.tolerance,
                "worst_point": check.worst_point,
                "message": check.message,
            }
            for check in report.checks
        ],
    }


def cmd_validate(scenario):
    """Validate the source structure, and the target when it differs."""
    structures = [scenario.source]
    if scenario.target is not scenario.source:
        structures.append(scenario.target)
    reports = [
        fm.validate_structure(
            fs,
            scenario.sampling,
            tolerance=scenario.tolerance("identity"),
            min_eigenvalue=scenario.tolerance("min_eigenvalue"),
        )
        for fs in structures
    ]
    passed = all(report.passed for report in reports)
    return {
        "scenario": scenario.name,
        "structures": [validation_dict(report) for report in reports],
        "passed": passed,
    }, passed


def _default_start(fs):
    if fs.domain_box is not None:
        return [0.5 * (lo + hi) for lo, hi in fs.domain_box]
    return [0.0] * fs.dim


def geodesic_settings(scenario, args):
    """Initial data of a geodesic run: flags override the scenario's
    'geodesic' section, which overrides the defaults."""
    fs = scenario.source
    section = scenario.geodesic
    settings = {
        "t0": args.t0 or section.get("t0") or _default_start(fs),
        "v0": args.v0 or section.get("v0") or [1.0] + [0.0] * (fs.dim - 1),
        "tmax": args.tmax if args.tmax is not None else section.get("tmax", 1.0),
        "tol": args.tol if args.tol is not None else section.get("tol", scenario.tolerance("ode")),
        "samples": (
            args.samples if args.samples is not None else section.get("samples", ap.DEFAULT_SAMPLES)
        ),
    }
    if len(settings["t0"]) != fs.dim or len(settings["v0"]) != fs.dim:
        raise ScenarioError(f"Initial position and velocity need {fs.dim} entries")
    if np.linalg.norm(settings["v0"]) < fm.EPSILON_ZERO_SECTION:
        raise ScenarioError(f"Initial velocity {settings['v0']} lies on the zero section")
    return settings


def cmd_geodesic(scenario, settings, csv=None):
    fs = scenario.source
    initial = ap.make_state(0.0, settings["t0"], settings["v0"])
    trace = ap.integrate_autoparallel(
        fs, initial, float(settings["tmax"]), float(settings["tol"]), int(settings["samples"])
    )
    if csv is not None:
        ap.write_trace_csv(trace, csv)
    final = trace.states[-1]
    return {
        "scenario": scenario.name,
        "structure": fs.label,
        "t0": settings["t0"],
        "v0": settings["v0"],
        "tmax": settings["tmax"],
        "tol": settings["tol"],
        "samples": len(trace.states),
        "endpoint": {"position": final.position, "velocity": final.velocity},
        "speed_initial": trace.speeds[0],
        "speed_drift": trace.speed_drift,
        "energy": ap.energy(fs, trace),
        "statistics": trace.statistics,
        "csv": str(csv) if csv is not None else None,
    }, True


def _transport_initial(scenario):
    section = scenario.transport
    fs = scenario.source
    t0 = section.get("t0") or _default_start(fs)
    v0 = section.get("v0") or [1.0] + [0.0] * (fs.dim - 1)
    return ap.make_state(0.0, t0, v0), float(section.get("tmax", 1.0))


def cmd_affine(scenario):
    """Run the requested map checks and collect their verdicts."""
    if scenario.smooth_map is None:
        raise ScenarioError("The affine command needs a scenario with a 'map'")
    src, tgt, m = scenario.source, scenario.target, scenario.smooth_map
    pts = fm.sample_base_points(src, scenario.sampling)
    results = {}
    verdicts = {}

    if "nondegeneracy" in scenario.checks:
        report = am.nondegeneracy_check(m, pts, scenario.tolerance("sigma_min"))
        results["nondegeneracy"] = {
            "min_singular_value": report.min_singular_value,
            "sigma_min": report.sigma_min,
        }
        verdicts["nondegeneracy"] = report.passed

    if "affine" in scenario.checks:
        results["affine"] = am.affine_sweep(src, tgt, m, pts, scenario.tolerance("affine"))
        verdicts["affine"] = results["affine"]["affine"]

    if "harmonic" in scenario.checks:
        tensions = fm.map_points(lambda pt: am.tension_field(src, tgt, m, pt), pts)
        sup = max(float(np.max(np.abs(t.simplified))) for t in tensions)
        results["harmonic"] = {
            "sup": sup,
            "form_residual": max(t.residual for t in tensions),
            "tolerance": scenario.tolerance("tension"),
        }
        verdicts["harmonic"] = sup <= scenario.tolerance("tension")

    if "transport" in scenario.checks:
        initial, t_final = _transport_initial(scenario)
        report = am.autoparallel_transport_test(
            src, tgt, m, initial, t_final, scenario.tolerance("ode")
        )
        results["transport"] = {
            "sup_residual": report.sup_residual,
            "sup_christoffel_residual": report.sup_christoffel_residual,
            "witness_time": report.witness_time,
            "tolerance": scenario.tolerance("transport"),
        }
        verdicts["transport"] = report.sup_residual <= scenario.tolerance("transport")

    if "isometry" in scenario.checks:
        report = am.isometry_check(
            src,
            tgt,
            m,
            pts,
            tolerance=scenario.tolerance("isometry"),
            cross_check_tolerance=scenario.tolerance("cross_check"),
            sigma_min=scenario.tolerance("sigma_min"),
        )
        results["isometry"] = {
            "residuals": report.residuals,
            "tolerances": report.tolerances,
            "checks": report.checks,
        }
        verdicts["isometry"] = report.passed

    if "identity" in scenario.checks:
        report = am.identity_map_criterion(
            src,
            tgt,
            pts,
            affine_tolerance=scenario.tolerance("affine"),
            spray_tolerance=scenario.tolerance("spray_equality"),
        )
        results["identity"] = {
            "affine_sup": report.affine_sup,
            "spray_sup": report.spray_sup,
            "affine": report.affine,
            "equal_sprays": report.equal_sprays,
        }
        verdicts["identity"] = report.consistent

    passed = all(verdicts.values())
    return {
        "scenario": scenario.name,
        "map": m.label,
        "source": src.label,
        "target": tgt.label,
        "seed": scenario.sampling.seed,
        "samples": len(pts),
        "results": results,
        "verdicts": verdicts,
        "passed": passed,
    }, passed


def cross_check_dict(report):
    return {
        "scenario": report.scenario,
        "seed": report.seed,
        "samples": report.samples,
        "tolerance": report.tolerance,
        "blocks": [
            {
                "label": block.label,
                "shape": list(block.shape),
                "max_abs_closed": block.max_abs_closed,
                "max_rel_residual": block.max_rel_residual,
                "pass": block.passed,
            }
            for block in report.blocks
        ],
        "vanishing": report.vanishing,
        "failures": report.failures,
        "failing_blocks": report.failing_blocks,
        "overall_pass": report.overall_pass,
    }


def cmd_jet_report(scenario, inject_fault=None):
    report = js.cross_validate(
        scenario.source,
        scenario.target,
        scenario.jet_sampling,
        tolerance=scenario.tolerance("jet"),
        scenario=scenario.name,
        inject_fault=inject_fault,
    )
    table = pd.DataFrame(
        [(b.label, b.max_abs_closed, b.max_rel_residual, b.passed) for b in report.blocks],
        columns=["block", "max_abs_closed", "max_rel_residual", "pass"],
    )
    logging.info(f"Jet cross-validation of {scenario.name}:\n{table.to_string(index=False)}")
    if report.failing_blocks:
        logging.error(f"Failing blocks: {', '.join(report.failing_blocks)}")
    return cross_check_dict(report), report.overall_pass


def make_parser():
    parser = argparse.ArgumentParser(
        prog="FinslerLab", description="Numerical Finsler geometry workbench"
    )
    parser.add_argument(
        "--verbose",
        action="store_true",
        help="log progress at level INFO",
    )
    subparsers = parser.add_subparsers(dest="command", required=True)

    def add_command(name, help_text):
        subparser = subparsers.add_parser(name, help=help_text)
        subparser.add_argument("scenario", type=Path, help="path of the scenario JSON file")
        subparser.add_argument(
            "--out", type=Path, default=None, help="path of the JSON report, stdout if omitted"
        )
        return subparser

    add_command("validate", "validate the structures of a scenario")
    geodesic = add_command("geodesic", "integrate an autoparallel of the source structure")
    geodesic.add_argument("--t0", type=float, nargs="+", help="initial position")
    geodesic.add_argument("--v0", type=float, nargs="+", help="initial velocity")
    geodesic.add_argument("--tmax", type=float, help="final time")
    geodesic.add_argument("--tol", type=float, help="integration tolerance")
    geodesic.add_argument("--samples", type=int, help="number of trace samples")
    geodesic.add_argument("--csv", type=Path, help="path of the trace CSV file")
    add_command("affine", "check a map for affine, harmonic and isometric behaviour")
    jet_report = add_command("jet-report", "cross-validate the jet torsions and curvatures")
    jet_report.add_argument("--inject-fault", default=None, help=argparse.SUPPRESS)
    return parser


def configure_logging(verbose):
    level = "INFO" if verbose else os.getenv("FINSLERLAB_LOG_LEVEL", "WARNING").upper()
    try:
        logging.basicConfig(
            level=level,
            stream=sys.stderr,
            format="%(asctime)s %(levelname)s %(message)s",
            force=True,
        )
    except ValueError as exc:
        raise ScenarioError(f"Invalid FINSLERLAB_LOG_LEVEL '{level}'") from exc


def main(argv=None):
    """Run a command and return its exit code: 0 when every check
    passes, 1 when a check fails and 2 on configuration errors."""
    parser = make_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_PASS if exc.code == 0 else EXIT_CONFIG

    try:
        configure_logging(args.verbose)
        fm.get_thread_count()
        scenario = load_scenario(args.scenario)
        settings = geodesic_settings(scenario, args) if args.command == "geodesic" else None
    except FinslerLabError as exc:
        # Parse and dimension errors in expressions surface here too
        logging.error(f"Configuration error: {exc}")
        return EXIT_CONFIG

    try:
        with tolerance_overrides(scenario.tolerances):
            if args.command == "validate":
                report, passed = cmd_validate(scenario)
            elif args.command == "geodesic":
                report, passed = cmd_geodesic(scenario, settings, args.csv)
            elif args.command == "affine":
                report, passed = cmd_affine(scenario)
            else:
                report, passed = cmd_jet_report(scenario, args.inject_fault)
    except ScenarioError as exc:
        logging.error(f"Configuration error: {exc}")
        return EXIT_CONFIG
    except (ZeroVelocityError, StepSizeUnderflowError) as exc:
        logging.error(f"Integration failed: {exc}")
        write_report({"scenario": scenario.name, "error": str(exc), "passed": False}, args.out)
        return EXIT_FAIL
    except FinslerLabError as exc:
        logging.error(f"{type(exc).__name__}: {exc}")
        write_report({"scenario": scenario.name, "error": str(exc), "passed": False}, args.out)
        return EXIT_FAIL

    write_report(report, args.out)
    return EXIT_PASS if passed else EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
