"""Hardy and Rellich type inequalities on gauge balls, checked by quadrature of both sides."""
import math
import logging
from dataclasses import dataclass, field as dc_field
from typing import Callable, Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from .fields import AnalyticField, FieldData
from .geometry import InputError, Sample, SpaceParams, gauge, random_points
from .quadrature import QuadratureResult, QuadratureSettings, Weight, ball_integrals, settings_for, sphere_integrals
from .utils import parallel_map

_log = logging.getLogger(__name__)

PASS = "PASS"
FAIL = "FAIL"
REPORT = "REPORT"

CSV_COLUMNS = [
    "inequality",
    "field",
    "space",
    "r",
    "lhs",
    "rhs",
    "slack",
    "empirical_constant",
    "error_budget",
    "verdict",
]

# Integrand building blocks, evaluated from the horizontal data of a field at quadrature nodes
Term = Callable[[FieldData, Sample, SpaceParams], np.ndarray]


def _u_sq(d: FieldData, smp: Sample, sp: SpaceParams) -> np.ndarray:
    return np.square(d.u)


def _lap_sq(d: FieldData, smp: Sample, sp: SpaceParams) -> np.ndarray:
    return np.square(d.lap)


def _grad_lap_sq(d: FieldData, smp: Sample, sp: SpaceParams) -> np.ndarray:
    if d.grad_lap_sq is None:
        raise InputError("this inequality needs third derivatives of the field")
    return d.grad_lap_sq


def _grad_sq(d: FieldData, smp: Sample, sp: SpaceParams) -> np.ndarray:
    return d.grad_sq


@dataclass(frozen=True)
class Integral:
    """One integral of an inequality: over the ball or against the boundary measure psi / |grad rho|."""

    name: str
    term: Term
    weight: Callable[[Sample, SpaceParams], np.ndarray]
    singular: Weight = Weight()
    boundary: bool = False


@dataclass
class InequalityReport:
    inequality: str
    field: str
    space: str
    r: float
    lhs: float
    rhs: float
    slack: float
    empirical_constant: float
    error_budget: float
    verdict: str
    terms: Dict[str, float] = dc_field(default_factory=dict)

    def row(self) -> List[object]:
        return [getattr(self, column) for column in CSV_COLUMNS]


def _one(smp: Sample, sp: SpaceParams) -> np.ndarray:
    return np.ones(np.shape(smp.rho))


def _psi(smp: Sample, sp: SpaceParams) -> np.ndarray:
    return smp.psi


def _inv_s2(smp: Sample, sp: SpaceParams) -> np.ndarray:
    return 1.0 / np.square(smp.s)


def _inv_rho2_psi(smp: Sample, sp: SpaceParams) -> np.ndarray:
    return 1.0 / (np.square(smp.rho) * smp.psi)


def _psi_rho2(smp: Sample, sp: SpaceParams) -> np.ndarray:
    return smp.psi / np.square(smp.rho)


def _psi_rho6(smp: Sample, sp: SpaceParams) -> np.ndarray:
    return smp.psi / smp.rho**6


def _inv_rho4(smp: Sample, sp: SpaceParams) -> np.ndarray:
    return 1.0 / smp.rho**4


def _inv_rho6(smp: Sample, sp: SpaceParams) -> np.ndarray:
    return 1.0 / smp.rho**6


def _inv_rho4_s2(smp: Sample, sp: SpaceParams) -> np.ndarray:
    return 1.0 / (smp.rho**4 * np.square(smp.s))


GRAD = Integral("grad", _grad_sq, _one)
GRAD_LAP = Integral("grad_lap", _grad_lap_sq, _one)
U_SPHERE = Integral("u_sphere", _u_sq, _psi, boundary=True)
LAP_SPHERE = Integral("lap_sphere", _lap_sq, _psi, boundary=True)


def integrate(
    u: AnalyticField,
    r: float,
    integrals: Iterable[Integral],
    settings: Optional[QuadratureSettings] = None,
) -> Dict[str, QuadratureResult]:
    """Evaluate every integral of `integrals` for the field on B_r, sharing quadrature nodes."""
    sp = u.sp
    settings = settings_for(u.biradial, settings)
    integrals = list(integrals)

    def integrand(parts: List[Integral]) -> Callable[[Sample], Dict[str, np.ndarray]]:
        def evaluate(smp: Sample) -> Dict[str, np.ndarray]:
            d = u.data(smp)
            with np.errstate(divide="ignore", invalid="ignore"):
                values = {part.name: part.term(d, smp, sp) * part.weight(smp, sp) for part in parts}
            # 0 * inf on the axis, where the weighted integrand vanishes
            return {name: np.where(np.isfinite(v), v, 0.0) for name, v in values.items()}

        return evaluate

    results: Dict[str, QuadratureResult] = {}
    volume = [part for part in integrals if not part.boundary]
    boundary = [part for part in integrals if part.boundary]
    for part in integrals:
        part.singular.check(sp)
    if volume:
        results.update(ball_integrals(integrand(volume), r, sp, settings, breaks=u.breaks()))
    if boundary:
        results.update(sphere_integrals(integrand(boundary), r, sp, settings))
    return results


def _require(condition: bool, message: str) -> None:
    if not condition:
        raise InputError(message)


def _empirical(lhs: float, denominator: float) -> float:
    if lhs == 0.0:
        return 0.0
    return lhs / denominator if denominator > 0 else math.inf


def _gated(
    name: str,
    u: AnalyticField,
    r: float,
    lhs: Integral,
    rhs: Sequence[Tuple[float, Integral]],
    settings: Optional[QuadratureSettings],
) -> InequalityReport:
    """Inequality LHS <= sum of c_k * term_k with explicit constants c_k."""
    values = integrate(u, r, [lhs] + [term for _, term in rhs], settings)
    lhs_value = values[lhs.name].value
    rhs_value = sum(c * values[term.name].value for c, term in rhs)
    budget = values[lhs.name].error_estimate + sum(abs(c) * values[term.name].error_estimate for c, term in rhs)
    slack = rhs_value - lhs_value
    report = InequalityReport(
        inequality=name,
        field=u.name,
        space=u.sp.label(),
        r=r,
        lhs=lhs_value,
        rhs=rhs_value,
        slack=slack,
        empirical_constant=_empirical(lhs_value, rhs_value),
        error_budget=budget,
        verdict=PASS if slack >= -budget else FAIL,
        terms={key: result.value for key, result in values.items()},
    )
    _log.debug("%s for %s at r=%g: lhs=%.12g rhs=%.12g %s", name, u.name, r, lhs_value, rhs_value, report.verdict)
    return report


def _reported(
    name: str,
    u: AnalyticField,
    r: float,
    lhs: Integral,
    rhs: Sequence[Tuple[float, Integral]],
    settings: Optional[QuadratureSettings],
    extra: Sequence[Integral] = (),
) -> Tuple[InequalityReport, Dict[str, QuadratureResult]]:
    """Inequality with an unknown constant: report LHS / (sum of scaled terms)."""
    values = integrate(u, r, [lhs] + [term for _, term in rhs] + list(extra), settings)
    lhs_value = values[lhs.name].value
    denominator = sum(c * values[term.name].value for c, term in rhs)
    budget = values[lhs.name].error_estimate + sum(abs(c) * values[term.name].error_estimate for c, term in rhs)
    report = InequalityReport(
        inequality=name,
        field=u.name,
        space=u.sp.label(),
        r=r,
        lhs=lhs_value,
        rhs=denominator,
        slack=math.nan,
        empirical_constant=_empirical(lhs_value, denominator),
        error_budget=budget,
        verdict=REPORT,
        terms={key: result.value for key, result in values.items()},
    )
    return report, values


def _rellich_denominators(r: float) -> List[Tuple[float, Integral]]:
    return [(r**-4, GRAD), (1.0, GRAD_LAP), (r**-5, U_SPHERE), (r**-1, LAP_SPHERE)]


def check_hardy_x(u: AnalyticField, r: float, settings: Optional[QuadratureSettings] = None) -> InequalityReport:
    """int u^2/|x|^2 <= (2/(m-2))^2 int |X u|^2 + 2/(m-2) r^-1 int_{dB} u^2 psi."""
    sp = u.sp
    lhs = Integral("u_over_x2", _u_sq, _inv_s2, Weight(2.0, 2.0))
    lhs.singular.check(sp)
    c = 2.0 / (sp.m - 2)
    return _gated("hardy_x", u, r, lhs, [(c**2, GRAD), (c / r, U_SPHERE)], settings)


def check_hardy_psi(u: AnalyticField, r: float, settings: Optional[QuadratureSettings] = None) -> InequalityReport:
    """Same right side as check_hardy_x with the weight 1/(rho^2 psi) on the left."""
    sp = u.sp
    Weight(2.0, 2.0).check(sp)
    lhs = Integral("u_over_rho2_psi", _u_sq, _inv_rho2_psi, Weight(2.0 * sp.alpha, 2.0))
    c = 2.0 / (sp.m - 2)
    return _gated("hardy_psi", u, r, lhs, [(c**2, GRAD), (c / r, U_SPHERE)], settings)


def check_hardy_gauge(u: AnalyticField, r: float, settings: Optional[QuadratureSettings] = None) -> InequalityReport:
    """int u^2 psi/rho^2 <= (2/(Q-2))^2 int |X u|^2 + 2/(Q-2) r^-1 int_{dB} u^2 psi."""
    sp = u.sp
    _require(sp.Q > 2, "the gauge Hardy inequality needs Q > 2")
    lhs = Integral("u_psi_over_rho2", _u_sq, _psi_rho2, Weight(0.0, 2.0))
    c = 2.0 / (sp.Q - 2)
    return _gated("hardy_gauge", u, r, lhs, [(c**2, GRAD), (c / r, U_SPHERE)], settings)


def _rellich_lhs(sp: SpaceParams) -> Integral:
    lhs = Integral("u_psi_over_rho6", _u_sq, _psi_rho6, Weight(0.0, 6.0))
    lhs.singular.check(sp)
    return lhs


def check_rellich_1(u: AnalyticField, r: float, settings: Optional[QuadratureSettings] = None) -> InequalityReport:
    """int psi u^2/rho^6 <= (Q-6)^-2 int (Delta_X u)^2/(rho^2 psi) + 2/(Q-6) r^-5 int_{dB} u^2 psi."""
    sp = u.sp
    lhs = _rellich_lhs(sp)
    lap_term = Integral("lap_over_rho2_psi", _lap_sq, _inv_rho2_psi, Weight(2.0 * sp.alpha, 2.0))
    q6 = sp.Q - 6.0
    return _gated("rellich_1", u, r, lhs, [(q6**-2, lap_term), (2.0 / q6 / r**5, U_SPHERE)], settings)


def check_rellich_2(u: AnalyticField, r: float, settings: Optional[QuadratureSettings] = None) -> InequalityReport:
    """Rellich bound with the horizontal gradient of Delta_X u and two boundary terms."""
    sp = u.sp
    lhs = _rellich_lhs(sp)
    Weight(2.0, 2.0).check(sp)
    m2, q6 = sp.m - 2.0, sp.Q - 6.0
    rhs = [
        (4.0 / (m2**2 * q6**2), GRAD_LAP),
        (2.0 / (m2 * q6**2) / r, LAP_SPHERE),
        (2.0 / q6 / r**5, U_SPHERE),
    ]
    return _gated("rellich_2", u, r, lhs, rhs, settings)


def check_grad_hardy(u: AnalyticField, r: float, settings: Optional[QuadratureSettings] = None) -> InequalityReport:
    """int |X u|^2/rho^4 against the four lower order terms; the constant is reported."""
    sp = u.sp
    _rellich_lhs(sp)
    Weight(2.0, 2.0).check(sp)
    lhs = Integral("grad_over_rho4", _grad_sq, _inv_rho4, Weight(0.0, 4.0))
    report, _ = _reported("grad_hardy", u, r, lhs, _rellich_denominators(r), settings)
    return report


def axis_domination(sp: SpaceParams, count: int = 1000, seed: int = 7) -> bool:
    """Pointwise rho >= |x| at random points, so that 1/rho^6 <= 1/(rho^4 |x|^2)."""
    p = random_points(sp, count, seed)
    return bool(np.all(gauge(p, sp) >= p.s * (1.0 - 1e-14)))


def check_weighted_hardy(u: AnalyticField, r: float, settings: Optional[QuadratureSettings] = None) -> InequalityReport:
    """The chain int u^2/rho^6 <= int u^2/(rho^4 |x|^2) <= C (lower order terms); the first step is gated."""
    sp = u.sp
    _rellich_lhs(sp)
    lhs = Integral("u_over_rho4_x2", _u_sq, _inv_rho4_s2, Weight(2.0, 6.0))
    lhs.singular.check(sp)
    lower = Integral("u_over_rho6", _u_sq, _inv_rho6, Weight(0.0, 6.0))
    report, values = _reported("weighted_hardy", u, r, lhs, _rellich_denominators(r), settings, [lower])
    first_slack = values[lhs.name].value - values[lower.name].value
    first_budget = values[lhs.name].error_estimate + values[lower.name].error_estimate
    if not axis_domination(sp) or first_slack < -first_budget:
        _log.warning("weighted_hardy: first step of the chain fails for %s at r=%g", u.name, r)
        report.verdict = FAIL
    report.slack = first_slack
    return report


def check_weighted_hardy_explicit(
    u: AnalyticField, r: float, settings: Optional[QuadratureSettings] = None
) -> InequalityReport:
    """int u^2/(rho^4 |x|^2) <= 4/(m-2)^2 int |X u|^2/rho^4 + 8/(m-2) int u^2 psi/rho^6 + 2/(m-2) r^-5 int u^2 psi."""
    sp = u.sp
    _rellich_lhs(sp)
    lhs = Integral("u_over_rho4_x2", _u_sq, _inv_rho4_s2, Weight(2.0, 6.0))
    lhs.singular.check(sp)
    m2 = sp.m - 2.0
    rhs = [
        (4.0 / m2**2, Integral("grad_over_rho4", _grad_sq, _inv_rho4, Weight(0.0, 4.0))),
        (8.0 / m2, Integral("u_psi_over_rho6", _u_sq, _psi_rho6, Weight(0.0, 6.0))),
        (2.0 / m2 / r**5, U_SPHERE),
    ]
    return _gated("weighted_hardy_explicit", u, r, lhs, rhs, settings)


Check = Callable[[AnalyticField, float, Optional[QuadratureSettings]], InequalityReport]

CHECKS: Mapping[str, Check] = {
    "hardy_x": check_hardy_x,
    "hardy_psi": check_hardy_psi,
    "hardy_gauge": check_hardy_gauge,
    "rellich_1": check_rellich_1,
    "rellich_2": check_rellich_2,
    "grad_hardy": check_grad_hardy,
    "weighted_hardy": check_weighted_hardy,
    "weighted_hardy_explicit": check_weighted_hardy_explicit,
}


def run_suite(
    fields: Sequence[AnalyticField],
    radii: Sequence[float],
    settings: Optional[QuadratureSettings] = None,
    checks: Optional[Sequence[str]] = None,
    workers: int = 1,
) -> List[InequalityReport]:
    """Run every check over every (field, radius) pair; results come back in input order."""
    names = list(checks or CHECKS)
    for name in names:
        if name not in CHECKS:
            raise InputError(f"unknown inequality '{name}'")
    jobs = [(name, u, r) for name in names for u in fields for r in radii]
    _log.info("Running %d inequality checks", len(jobs))
    return parallel_map(lambda job: CHECKS[job[0]](job[1], job[2], settings), jobs, workers)
