#!/usr/bin/env python3
"""
grushin-lab - numerical checks of Hardy-Rellich inequalities and frequency functions for Baouendi-Grushin operators.

Every command reads one JSON experiment config, writes CSV/JSON result files and reports through its exit code.
"""
import os
import sys
import math
import errno
import logging
from logging.handlers import RotatingFileHandler
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple, cast

import typer
import click
import numpy as np
from platformdirs import user_log_dir

from .utils import decorate, ensure_dir_exists, NoExceptionFormatter
from .lab_config import (
    load_experiment_config,
    space_params,
    identity_spaces,
    hardy_spaces,
    quadrature_settings,
    radii as config_radii,
    field_by_name,
    solver_grids,
    potential as config_potential,
    ExperimentConfig,
)
from .geometry import LabException, SpaceParams, random_points, identity_residuals
from .fields import AnalyticField, BiradialField, Cutoff, Potential
from .quadrature import QuadratureSettings, self_test
from .frequency import (
    FrequencyProfile,
    compute_profile,
    radius_grid,
    check_H_derivative,
    check_I_derivative,
    check_boundary_forms,
    check_monotonicity,
    check_doubling,
    check_energy_bound,
    check_caccioppoli,
    with_discretization_error,
    cutoff_constants,
    smallness_check,
    smallness_threshold,
    vanishing_order_fit,
    InsufficientRange,
)
from .hardy import CSV_COLUMNS, FAIL, run_suite
from .solver import (
    CONVERGENCE_COLUMNS,
    GridSpec,
    SolveFailure,
    SolveRun,
    convergence_study,
    field_bvp,
    mms_spec,
    solve_and_lift,
)
from . import lab_report, __version__

APP_NAME = "grushin-lab"
LOG_FILE = os.path.join(user_log_dir(APP_NAME, appauthor=False), "out.log")

EXIT_CODE_OK = 0
# At least one check did not pass
EXIT_CODE_FAILED = 1
EXIT_CODE_ARGS = 2
# Use exit code 3 for exceptions since click already returns 1 and 2
# (1 for aborts and 2 invalid arguments)
EXIT_CODE_EXC = 3

# Smallest observed order of the manufactured solution error that still passes
MIN_CONVERGENCE_ORDER = 1.9
# Identity residuals written out but not gated: the bracket [X_i, Z] compared with Z instead of X_i
UNGATED_RESIDUALS = {"commutator_as_z"}

log = logging.getLogger()


app = typer.Typer(
    help="Numerical experiments for Hardy-Rellich inequalities and frequency functions of Baouendi-Grushin operators.",
    context_settings=dict(max_content_width=120),
    add_completion=False,
)


def setup_logging(verbose: bool = False) -> None:  # pragma: no cover
    """Set up logging for the whole app."""
    log_dir = os.path.dirname(LOG_FILE)
    try:
        if not os.path.exists(log_dir):
            os.makedirs(log_dir)

        max_total_size = 1024 * 1024
        file_count = 2
        file_handler = RotatingFileHandler(
            LOG_FILE,
            mode="a",
            maxBytes=max_total_size // file_count,
            backupCount=file_count - 1,
            encoding=None,
            delay=False,
        )
    except OSError as err:
        if err.errno == errno.EACCES:
            print("WARN: No permissions to create logging directory or file: " + LOG_FILE)
            return
        raise err

    file_handler.setFormatter(
        logging.Formatter("[%(asctime)s] %(name)-10.10s %(threadName)-12.12s %(levelname)-8.8s  %(message)s")
    )
    file_handler.setLevel(logging.INFO)

    stream_handler = logging.StreamHandler()
    stream_handler.setFormatter(NoExceptionFormatter("%(levelname)s: %(message)s"))
    stream_handler.setLevel(logging.WARN)
    # Get the root logger to setup logging for all other modules
    log.addHandler(file_handler)
    log.addHandler(stream_handler)
    # Set the root level to lowest detail otherwise it's never passed on to handlers or other loggers
    log.setLevel(logging.DEBUG)
    if verbose:
        file_handler.setLevel(logging.DEBUG)
        stream_handler.setLevel(logging.DEBUG)


# Shared command line options of every experiment
EXPERIMENT_OPTIONS = [
    click.option(
        "--config",
        "-c",
        type=click.Path(exists=True, dir_okay=False),
        help="JSON experiment config (default is the built-in config).",
    ),
    click.option(
        "--out",
        "-o",
        type=click.Path(file_okay=False),
        default=None,
        help="Directory for result files (default is 'output_dir' of the config).",
    ),
    click.option(
        "--threads",
        "-t",
        type=click.IntRange(min=1),
        default=1,
        show_default=True,
        help="Number of worker threads for independent checks.",
    ),
]

# Body of an experiment: (config, output directory, threads) -> all checks passed
Experiment = Callable[[ExperimentConfig, str, int], bool]


def run_experiment(name: str, config_path: Optional[str], out: Optional[str], threads: int, body: Experiment) -> None:
    """Load the config, run one experiment and exit with the code matching its outcome."""
    try:
        config = load_experiment_config(config_path)
        out_dir = out or config["output_dir"]
        ensure_dir_exists(out_dir)
        log.info("Running %s into %s", name, out_dir)
        passed = body(config, out_dir, threads)
    except SolveFailure as exc:
        print(exc)
        sys.exit(EXIT_CODE_FAILED)
    except LabException as exc:
        print(exc)
        sys.exit(EXIT_CODE_ARGS)
    except Exception as exc:  # pragma: no cover
        logging.exception(exc)
        sys.exit(EXIT_CODE_EXC)
    if not passed:
        print(f"{name}: some checks failed, see {out_dir}")
        sys.exit(EXIT_CODE_FAILED)


def run_identities(config: ExperimentConfig, out_dir: str, threads: int) -> bool:
    section = config["identities"]
    threshold = section["threshold"]
    header = ["space", "field", "points"]
    rows: List[List[Any]] = []
    passed = True
    for sp in identity_spaces(config):
        points = random_points(sp, section["points"], section["seed"])
        for name in section["fields"]:
            worst = identity_residuals(points, sp, field_by_name(name, sp)).worst()
            slack = worst.pop("z_bound_slack")
            gated = [value for key, value in worst.items() if key not in UNGATED_RESIDUALS]
            ok = max(gated) <= threshold and slack >= -threshold
            passed = passed and ok
            if len(header) == 3:
                header += list(worst) + ["z_bound_slack", "passed"]
            rows.append([sp.label(), name, section["points"]] + list(worst.values()) + [slack, ok])
    lab_report.write_csv(os.path.join(out_dir, "identities.csv"), header, rows, config)
    print(f"Checked gauge identities for {len(rows)} space/field pairs")
    return passed


def run_quad_selftest(config: ExperimentConfig, out_dir: str, threads: int) -> bool:
    sp = space_params(config)
    items = self_test(sp, quadrature_settings(config, threads))
    rows = [[item.name, item.value, item.expected, item.error_budget, item.passed] for item in items]
    lab_report.write_csv(
        os.path.join(out_dir, "quad_selftest.csv"),
        ["check", "value", "expected", "error_budget", "passed"],
        rows,
        config,
    )
    for item in items:
        print(f"{item.name}: {item.value:.6f} (expected {item.expected:.6f} +/- {item.error_budget:g})")
    return all(item.passed for item in items)


def run_hardy(config: ExperimentConfig, out_dir: str, threads: int) -> bool:
    section = config["hardy"]
    settings = quadrature_settings(config)
    reports = []
    for sp in hardy_spaces(config):
        fields = [field_by_name(name, sp) for name in section["fields"]]
        reports += run_suite(fields, section["radii"], settings, section["checks"], threads)
    lab_report.write_csv(os.path.join(out_dir, "hardy.csv"), CSV_COLUMNS, [r.row() for r in reports], config)
    failed = [r for r in reports if r.verdict == FAIL]
    for item in failed:
        print(f"FAIL {item.inequality} for {item.field} ({item.space}) at r={item.r:g}: slack {item.slack:.3e}")
    print(f"Checked {len(reports)} inequality instances, {len(failed)} failed")
    return not failed


def _solution_radii(config: ExperimentConfig, sp: SpaceParams) -> np.ndarray:
    """Radii whose gauge balls fit inside the solver rectangle."""
    r_in = solver_grids(config)[-1].inscribed_radius(sp)
    return radius_grid(r_in / 4.0, r_in, config["radii"]["per_decade"])


def _analyze_profile(
    profile: FrequencyProfile,
    u: AnalyticField,
    w: Optional[AnalyticField],
    potential: Optional[Potential],
    config: ExperimentConfig,
    settings: QuadratureSettings,
) -> Dict[str, Any]:
    """Identity residuals, monotonicity, doubling and the auxiliary estimates of one profile."""
    section = config["frequency"]
    sp = profile.sp
    r = profile.radii
    h_check = check_H_derivative(profile)
    i_check, i_constant = check_I_derivative(profile)
    r0 = section["r0"]
    if not r[0] < r0 <= r[-1]:
        r0 = float(r[r.size // 2])
        log.warning("r0 outside of the scanned radii, using r0=%g", r0)
    monotonicity = check_monotonicity(profile, r0)
    result: Dict[str, Any] = {
        "field": profile.field,
        "space": sp.label(),
        "truncated": profile.truncated,
        "H_derivative_residual": h_check.worst,
        "H1_derivative_residual": float(np.nanmax(h_check.extra["H1_residual"])) if h_check.extra else None,
        "I_derivative_constant": i_constant,
        "boundary_forms": check_boundary_forms(profile),
        "monotonicity": {
            "status": monotonicity.status,
            "r0": monotonicity.r0,
            "threshold": monotonicity.threshold,
            "omega_size": int(np.sum(monotonicity.omega)),
            "beta_hat": monotonicity.beta_hat,
            "beta_error": monotonicity.beta_error,
            "violations": monotonicity.violations,
        },
        "N_min": float(np.min(profile["N"])),
        "N_max": float(np.max(profile["N"])),
    }
    try:
        doubling = check_doubling(profile, monotonicity.beta_hat)
        result["doubling"] = {
            "log_C": doubling.log_C,
            "A": doubling.A,
            "gamma": doubling.gamma,
            "fitted": doubling.fitted,
            "h_level_holds": doubling.h_level_holds,
            "max_ratio": float(np.max(doubling.ratios)),
        }
    except InsufficientRange as exc:
        log.warning("Skipping doubling: %s", exc)
        result["doubling"] = None
    energy_constant, mask = check_energy_bound(profile)
    result["energy_bound"] = {"constant": energy_constant, "radii": int(np.sum(mask))}
    try:
        fit = vanishing_order_fit(r, profile["M"])
        result["vanishing_order"] = {
            "order": fit.order,
            "rate": fit.rate,
            "classification": fit.classification,
        }
    except InsufficientRange as exc:
        log.warning("Skipping vanishing order fit: %s", exc)
        result["vanishing_order"] = None

    r_cacc = float(r[-1]) / 2.0
    cutoff = Cutoff(r_cacc)
    caccioppoli = check_caccioppoli(u, r_cacc, settings, potential, cutoff, w)
    c_grad, c_hess = cutoff_constants(cutoff, sp)
    result["caccioppoli"] = {
        "r": caccioppoli.r,
        "lhs": caccioppoli.lhs,
        "empirical_constant": caccioppoli.empirical_constant,
        "cutoff_gradient_constant": c_grad,
        "cutoff_hessian_constant": c_hess,
    }
    c0 = config["potential"]["c0"]
    if sp.m > 2 and sp.Q > 6:
        verdict = smallness_check(c0, sp)
        result["smallness"] = {"margins": verdict.margins, "thresholds": smallness_threshold(sp)}
    result["passed"] = bool(h_check.worst <= section["tolerance"]) and monotonicity.violations == 0
    return result


def _profile_potential(config: ExperimentConfig) -> Optional[Potential]:
    if not config["frequency"]["use_potential"]:
        return None
    return config_potential(config)


def frequency_report(
    u: AnalyticField,
    w: Optional[AnalyticField],
    radii: Sequence[float],
    config: ExperimentConfig,
    out_dir: str,
    threads: int,
    stem: str = "frequency",
    potential: Optional[Potential] = None,
    coarse: Optional[SolveRun] = None,
) -> bool:
    """
    Compute a frequency profile, write it with its analysis and print the headline numbers.

    With `coarse`, the solution of the same problem on a grid with twice the spacing, the differences
    between both profiles join the error budgets.
    """
    settings = quadrature_settings(config)
    profile = compute_profile(u, radii, settings, w, potential, threads)
    if coarse is not None:
        coarse_profile = compute_profile(coarse.u, radii, settings, coarse.w, potential, threads)
        profile = with_discretization_error(profile, coarse_profile)
    lab_report.write_csv(os.path.join(out_dir, stem + ".csv"), profile.header(), profile.rows(), config)
    result = _analyze_profile(profile, u, w, potential, config, settings)
    result["discretization_error"] = coarse is not None
    lab_report.write_json(os.path.join(out_dir, stem + ".json"), result)
    print(f"Frequency of {profile.field}: N in [{result['N_min']:.6g}, {result['N_max']:.6g}]")
    print(f"H' identity: largest relative residual {result['H_derivative_residual']:.3e}")
    print(f"Monotonicity: {result['monotonicity']['status']}, beta={result['monotonicity']['beta_hat']:.6g}")
    return cast(bool, result["passed"])


def _boundary_run(config: ExperimentConfig, sp: SpaceParams, grid: GridSpec) -> SolveRun:
    section = config["solver"]
    boundary = field_by_name(section["boundary"], sp)
    if not isinstance(boundary, BiradialField):
        raise LabException(f"boundary field '{boundary.name}' is not bi-radial")
    spec = field_bvp(grid, boundary, config_potential(config), section["regularization"], section["rho_min"])
    return solve_and_lift(spec, section["residual_target"])


def _coarse_grid(config: ExperimentConfig) -> GridSpec:
    """The grid before the finest one, or the finest grid with doubled spacing."""
    grids = solver_grids(config)
    return grids[-2] if len(grids) > 1 else grids[-1].coarsened()


def _solution_report(
    run: SolveRun, config: ExperimentConfig, sp: SpaceParams, out_dir: str, threads: int, stem: str
) -> bool:
    coarse = _boundary_run(config, sp, _coarse_grid(config))
    radii = _solution_radii(config, sp)
    return frequency_report(run.u, run.w, radii, config, out_dir, threads, stem, run.potential, coarse)


def run_frequency(config: ExperimentConfig, out_dir: str, threads: int) -> bool:
    sp = space_params(config)
    name = config["frequency"]["field"]
    if name == "solution":
        run = _boundary_run(config, sp, solver_grids(config)[-1])
        return _solution_report(run, config, sp, out_dir, threads, "frequency")
    field = field_by_name(name, sp)
    potential = _profile_potential(config)
    return frequency_report(field, None, config_radii(config), config, out_dir, threads, potential=potential)


def _convergence(config: ExperimentConfig, sp: SpaceParams, out_dir: str) -> Tuple[bool, List[Any]]:
    section = config["solver"]
    potential = config_potential(config)
    rows = convergence_study(
        lambda grid: mms_spec(grid, sp, potential),
        solver_grids(config),
        section["residual_target"],
    )
    table = [[getattr(row, column) for column in CONVERGENCE_COLUMNS] for row in rows]
    lab_report.write_csv(os.path.join(out_dir, "solve_convergence.csv"), CONVERGENCE_COLUMNS, table, config)
    rates = [row.l2_rate for row in rows if math.isfinite(row.l2_rate)]
    for row in rows:
        print(f"{row.n_s}x{row.n_t}: L2 error {row.l2_error:.3e}, order {row.l2_rate:.3f}")
    return (not rates or rates[-1] >= MIN_CONVERGENCE_ORDER), rates


def run_solve(config: ExperimentConfig, out_dir: str, threads: int) -> bool:
    section = config["solver"]
    sp = space_params(config)
    passed = True
    rates: List[Any] = []
    if section["mms"]:
        passed, rates = _convergence(config, sp, out_dir)

    run = _boundary_run(config, sp, solver_grids(config)[-1])
    run.solution.u.to_csv(os.path.join(out_dir, "solution_u.csv"))
    run.solution.w.to_csv(os.path.join(out_dir, "solution_w.csv"))
    lab_report.write_json(
        os.path.join(out_dir, "solve.json"),
        {
            "report": run.solution.report.as_dict(),
            "boundary": section["boundary"],
            "space": sp.label(),
            "convergence_orders": rates,
            "passed": passed,
            "config": config,
        },
    )
    print(f"Solved on {run.solution.report.n_s}x{run.solution.report.n_t}, residual {run.solution.report.residual:.3e}")
    if section["chain_frequency"]:
        chained = _solution_report(run, config, sp, out_dir, threads, "solve_frequency")
        passed = passed and chained
    return passed


def version_callback(value: bool) -> None:
    """Print out application's version info."""
    if value:
        typer.echo(f"{APP_NAME}, version {__version__}")
        raise typer.Exit()


@app.callback()
def main(
    verbose: bool = typer.Option(False, "--verbose", "-v", help="Give more verbose output."),
    version: Optional[bool] = typer.Option(None, "--version", callback=version_callback, is_eager=True),
) -> None:
    """Use to add arguments related to whole app and not only specific sub-commands."""
    setup_logging(verbose)  # pragma: no cover


@click.command()
@decorate(EXPERIMENT_OPTIONS)
def identities(config: Optional[str], out: Optional[str], threads: int) -> None:
    """Check the identities of the gauge norm and the commutator relation at random points."""
    run_experiment("identities", config, out, threads, run_identities)


@click.command(name="quad-selftest")
@decorate(EXPERIMENT_OPTIONS)
def quad_selftest(config: Optional[str], out: Optional[str], threads: int) -> None:
    """Check the integration rules: scaling exponent, co-area formula and divergence identity."""
    run_experiment("quad-selftest", config, out, threads, run_quad_selftest)


@click.command()
@decorate(EXPERIMENT_OPTIONS)
def hardy(config: Optional[str], out: Optional[str], threads: int) -> None:
    """
    Check the Hardy and Rellich inequalities over the configured fields and radii.

    Writes one CSV row per (inequality, field, space, radius).
    """
    run_experiment("hardy", config, out, threads, run_hardy)


@click.command()
@decorate(EXPERIMENT_OPTIONS)
def frequency(config: Optional[str], out: Optional[str], threads: int) -> None:
    """
    Compute the frequency function of a field and check its derivative identity, monotonicity and doubling.

    The field "solution" solves the configured boundary value problem first.
    """
    run_experiment("frequency", config, out, threads, run_frequency)


@click.command()
@decorate(EXPERIMENT_OPTIONS)
def solve(config: Optional[str], out: Optional[str], threads: int) -> None:
    """Solve the bi-radial coupled system, with a manufactured solution convergence study if configured."""
    run_experiment("solve", config, out, threads, run_solve)


@click.command()
@decorate(EXPERIMENT_OPTIONS)
def report(config: Optional[str], out: Optional[str], threads: int) -> None:
    """Merge every result file of the output directory into summary.json."""

    def summarize(experiment: ExperimentConfig, out_dir: str, _threads: int) -> bool:
        summary = lab_report.summarize(out_dir)
        print(f"Summarized {len(summary['files']) + len(summary['results'])} result files into {out_dir}")
        return cast(bool, summary["passed"])

    run_experiment("report", config, out, threads, summarize)


# Typer/Click combination object
# cast() needed because Type is incorrectly defined in library?
cli_app = cast(click.Group, typer.main.get_command(app))
cli_app.add_command(identities)
cli_app.add_command(quad_selftest)
cli_app.add_command(hardy)
cli_app.add_command(frequency)
cli_app.add_command(solve)
cli_app.add_command(report)


if __name__ == "__main__":
    cli_app()
