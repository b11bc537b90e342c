"""Frequency function machinery: boundary mass H, energy I, frequency N = rI/H and what is derived from them.

For a solution of Delta_X u = w, Delta_X w = V u:

    H(r) = int_{dB_r} (u^2 + r^4 w^2) psi / |grad rho|
    I(r) = int_{B_r} |X u|^2 + u w + r^4 (|X w|^2 + V w u)
"""
import math
import logging
from dataclasses import dataclass, field as dc_field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.interpolate import CubicSpline

from .fields import AnalyticField, Cutoff, FieldData, Potential
from .geometry import (
    InputError,
    LabException,
    Sample,
    SpaceParams,
    horizontal_gradient,
    horizontal_hessian,
    psi,
    random_points,
)
from .quadrature import QuadratureSettings, Weight, ball_integrals, settings_for, sphere_integrals
from .utils import parallel_map

_log = logging.getLogger(__name__)

# Strict inequalities on N use this tolerance for ties
TIE_TOLERANCE = 1e-12
# Profiles end at the first radius where H is not above this many error budgets
H_MARGIN = 3.0

FINITE_ORDER = "FINITE_ORDER"
SUPER_POLYNOMIAL = "SUPER_POLYNOMIAL"
EMPTY_OMEGA = "EMPTY_OMEGA"

PROFILE_COLUMNS = ["H1", "H2", "H", "I1", "I1b", "I2", "I2b", "I", "N", "M", "Mu", "E", "ZU", "ZW"]


class DegenerateH(LabException):
    """Exception raised when the boundary mass H vanishes within its error budget."""


class InsufficientRange(LabException):
    """Exception raised when a fit gets too few usable radii."""


@dataclass(frozen=True)
class SmallnessVerdict:
    c0: float
    m: int
    Q: float
    with_axis_term: bool
    with_unit_shift: bool
    basic: bool
    # 1 minus the left side of each condition; positive when the condition holds
    margins: Dict[str, float] = dc_field(default_factory=dict)


def _smallness_base(sp: SpaceParams) -> float:
    if sp.m <= 2 or sp.Q <= 6:
        raise InputError(f"smallness conditions need m > 2 and Q > 6, got {sp.label()}")
    return (sp.m - 2.0) ** 2 * (sp.Q - 6.0)


def smallness_check(c0: float, sp: SpaceParams) -> SmallnessVerdict:
    """Evaluate the three smallness conditions on c0."""
    base = _smallness_base(sp)
    margins = {
        "with_axis_term": 1.0 - (4.0 * c0 / base + 4.0 / (sp.m - 2.0) ** 4),
        "with_unit_shift": 1.0 - 4.0 * (c0 + 1.0) / base,
        "basic": 1.0 - 4.0 * c0 / base,
    }
    return SmallnessVerdict(
        c0=c0,
        m=sp.m,
        Q=sp.Q,
        with_axis_term=margins["with_axis_term"] > 0,
        with_unit_shift=margins["with_unit_shift"] > 0,
        basic=margins["basic"] > 0,
        margins=margins,
    )


def smallness_threshold(sp: SpaceParams) -> Dict[str, float]:
    """Supremum of admissible c0 for each condition."""
    quarter = _smallness_base(sp) / 4.0
    return {
        "with_axis_term": quarter * (1.0 - 4.0 / (sp.m - 2.0) ** 4),
        "with_unit_shift": quarter - 1.0,
        "basic": quarter,
    }


def young_split(c0: float, sp: SpaceParams) -> Tuple[float, float]:
    """Minimiser eps* and minimum of 4 eps/((m-2)^2 (Q-6)^2) + c0^2/((m-2)^2 eps)."""
    _smallness_base(sp)
    if c0 <= 0:
        raise InputError("the split needs c0 > 0")
    eps_star = c0 * (sp.Q - 6.0) / 2.0
    return eps_star, 4.0 * c0 / ((sp.m - 2.0) ** 2 * (sp.Q - 6.0))


def radius_grid(r_min: float, r_max: float, per_decade: int = 64) -> np.ndarray:
    """Log-uniform radii from r_min to r_max, both included."""
    if not 0 < r_min < r_max or per_decade < 1:
        raise InputError("radius grid needs 0 < r_min < r_max and per_decade >= 1")
    count = int(math.ceil(per_decade * math.log10(r_max / r_min))) + 1
    return np.geomspace(r_min, r_max, max(count, 2))


@dataclass
class FrequencyProfile:
    """Profile columns per radius, with their error estimates."""

    field: str
    sp: SpaceParams
    radii: np.ndarray
    values: Dict[str, np.ndarray]
    errors: Dict[str, np.ndarray] = dc_field(default_factory=dict)
    truncated: bool = False

    def __getitem__(self, column: str) -> np.ndarray:
        return self.values[column]

    def error(self, column: str) -> np.ndarray:
        return self.errors.get(column, np.zeros(self.radii.shape))

    def header(self) -> List[str]:
        columns = [c for c in PROFILE_COLUMNS if c in self.values]
        return ["r"] + columns + [f"{c}_err" for c in columns if c in self.errors]

    def rows(self) -> List[List[float]]:
        columns = [c for c in PROFILE_COLUMNS if c in self.values]
        result = []
        for k, r in enumerate(self.radii):
            row = [float(r)] + [float(self.values[c][k]) for c in columns]
            row += [float(self.errors[c][k]) for c in columns if c in self.errors]
            result.append(row)
        return result


def _w_data(u_data: FieldData, w: Optional[AnalyticField], smp: Sample) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Value, |X w|^2 and Z w of the second unknown."""
    if w is not None:
        d = w.data(smp)
        return d.u, d.grad_sq, d.z
    if u_data.grad_lap_sq is None or u_data.z_lap is None:
        raise InputError("w cannot be derived from a field without third derivatives; supply it")
    return u_data.lap, u_data.grad_lap_sq, u_data.z_lap


def _radius_integrals(
    u: AnalyticField,
    w: Optional[AnalyticField],
    potential: Potential,
    r: float,
    settings: QuadratureSettings,
) -> Dict[str, Tuple[float, float]]:
    sp = u.sp

    def volume(smp: Sample) -> Dict[str, np.ndarray]:
        d = u.data(smp)
        wv, w_grad_sq, _ = _w_data(d, w, smp)
        V = potential.values(smp, sp)
        return {
            "I1": d.grad_sq + d.u * wv,
            "I2": w_grad_sq + V * wv * d.u,
            "M": (np.square(d.u) + np.square(wv)) * smp.psi,
            "Mu": np.square(d.u) * smp.psi,
            "E1": d.grad_sq,
            "E2": w_grad_sq,
        }

    def boundary(smp: Sample) -> Dict[str, np.ndarray]:
        d = u.data(smp)
        wv, _, zw = _w_data(d, w, smp)
        return {
            "H1": np.square(d.u) * smp.psi,
            "H2": np.square(wv) * smp.psi,
            "I1b": d.u * d.z * smp.psi / smp.rho,
            "I2b": wv * zw * smp.psi / smp.rho,
            "ZU": np.square(d.z) * smp.psi,
            "ZW": np.square(zw) * smp.psi,
        }

    weights = [Weight(0.0, 4.0)] if potential.c0 != 0.0 and potential.epsilon == 0.0 else []
    breaks = tuple(u.breaks()) + (() if w is None else tuple(w.breaks())) + potential.breaks()
    results = ball_integrals(volume, r, sp, settings, weights, breaks)
    results.update(sphere_integrals(boundary, r, sp, settings))
    return {name: (res.value, res.error_estimate) for name, res in results.items()}


def compute_profile(
    u: AnalyticField,
    radii: Sequence[float],
    settings: Optional[QuadratureSettings] = None,
    w: Optional[AnalyticField] = None,
    potential: Optional[Potential] = None,
    workers: int = 1,
) -> FrequencyProfile:
    """Compute H, I, N and the auxiliary masses at every radius; w defaults to Delta_X u."""
    radii_arr = np.asarray(radii, dtype=float)
    if radii_arr.ndim != 1 or radii_arr.size == 0 or np.any(np.diff(radii_arr) <= 0) or radii_arr[0] <= 0:
        raise InputError("radii must be positive and increasing")
    biradial = u.biradial and (w is None or w.biradial)
    settings = settings_for(biradial, settings)
    potential = potential or Potential()
    per_radius = parallel_map(lambda r: _radius_integrals(u, w, potential, float(r), settings), radii_arr, workers)

    raw = {name: np.array([item[name][0] for item in per_radius]) for name in per_radius[0]}
    err = {name: np.array([item[name][1] for item in per_radius]) for name in per_radius[0]}
    r4 = radii_arr**4
    values = {key: raw[key] for key in ["H1", "H2", "I1", "I1b", "I2", "I2b", "M", "Mu", "ZU", "ZW"]}
    errors = {key: err[key] for key in values}
    values["H"] = raw["H1"] + r4 * raw["H2"]
    errors["H"] = err["H1"] + r4 * err["H2"]
    values["I"] = raw["I1"] + r4 * raw["I2"]
    errors["I"] = err["I1"] + r4 * err["I2"]
    values["E"] = raw["E1"] + r4 * raw["E2"]
    errors["E"] = err["E1"] + r4 * err["E2"]

    positive = values["H"] > H_MARGIN * errors["H"]
    keep = int(np.argmin(positive)) if not np.all(positive) else radii_arr.size
    if keep == 0:
        raise DegenerateH(f"H vanishes within its error budget at r={radii_arr[0]:g} for {u.name}")
    truncated = keep < radii_arr.size
    if truncated:
        _log.warning("H not positive beyond r=%g for %s; profile truncated", radii_arr[keep - 1], u.name)
    values = {key: v[:keep] for key, v in values.items()}
    errors = {key: e[:keep] for key, e in errors.items()}
    radii_arr = radii_arr[:keep]

    values["N"] = radii_arr * values["I"] / values["H"]
    errors["N"] = radii_arr * (errors["I"] + np.abs(values["I"]) * errors["H"] / values["H"]) / values["H"]
    _log.debug("Profile for %s over %d radii", u.name, radii_arr.size)
    return FrequencyProfile(u.name, u.sp, radii_arr, values, errors, truncated)


def with_discretization_error(profile: FrequencyProfile, coarse: FrequencyProfile) -> FrequencyProfile:
    """Add |profile - coarse| of every column to its error budget.

    `coarse` is the profile of the same problem solved on a grid with twice the spacing, over the same radii.
    """
    keep = min(profile.radii.size, coarse.radii.size)
    if not np.allclose(profile.radii[:keep], coarse.radii[:keep], rtol=1e-12, atol=0.0):
        raise InputError("profiles of the two grids use different radii")
    values = {key: v[:keep] for key, v in profile.values.items()}
    errors = {key: profile.error(key)[:keep] for key in values}
    for key in values:
        if key in coarse.values:
            errors[key] = errors[key] + np.abs(values[key] - coarse[key][:keep])
    _log.debug("Discretization error of N for %s: %.3g", profile.field, float(np.max(errors["N"])))
    truncated = profile.truncated or keep < profile.radii.size
    return FrequencyProfile(profile.field, profile.sp, profile.radii[:keep], values, errors, truncated)


def _d_log_r(x: np.ndarray, f: np.ndarray) -> np.ndarray:
    """df/d(log r); fourth order central differences when the grid is log-uniform."""
    h = np.diff(x)
    if x.size >= 5 and np.allclose(h, h[0], rtol=1e-9):
        df = np.full(x.shape, np.nan)
        df[2:-2] = (f[:-4] - 8.0 * f[1:-3] + 8.0 * f[3:-1] - f[4:]) / (12.0 * h[0])
        return df
    return np.gradient(f, x, edge_order=2)


def log_derivative(r: np.ndarray, f: np.ndarray) -> np.ndarray:
    """df/dr on a radius grid.

    Columns of one sign are differentiated as log|f|, which is exact for power laws. The two points at each
    end are NaN on log-uniform grids.
    """
    x = np.log(r)
    if r.size < 3:
        raise InsufficientRange("a derivative needs at least three radii")
    if np.all(f > 0) or np.all(f < 0):
        return f * _d_log_r(x, np.log(np.abs(f))) / r
    return _d_log_r(x, f) / r


@dataclass
class DerivativeCheck:
    """Finite-difference derivative against an identity, per radius."""

    radii: np.ndarray
    measured: np.ndarray
    predicted: np.ndarray
    residual: np.ndarray
    extra: Dict[str, np.ndarray] = dc_field(default_factory=dict)

    @property
    def worst(self) -> float:
        finite = self.residual[np.isfinite(self.residual)]
        return float(np.max(finite)) if finite.size else math.nan


def _relative(measured: np.ndarray, predicted: np.ndarray) -> np.ndarray:
    scale = np.maximum(np.abs(measured), np.abs(predicted))
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(scale > 0, np.abs(measured - predicted) / scale, 0.0)


def check_H_derivative(profile: FrequencyProfile) -> DerivativeCheck:
    """Compare H' with (Q-1) H/r + 2 I + 4 r^3 H2, and H1' with (Q-1) H1/r + 2 I1 when available."""
    r, Q = profile.radii, profile.sp.Q
    measured = log_derivative(r, profile["H"])
    predicted = (Q - 1.0) * profile["H"] / r + 2.0 * profile["I"] + 4.0 * r**3 * profile["H2"]
    result = DerivativeCheck(r, measured, predicted, _relative(measured, predicted))
    if "H1" in profile.values and "I1" in profile.values:
        h1_measured = log_derivative(r, profile["H1"])
        h1_predicted = (Q - 1.0) * profile["H1"] / r + 2.0 * profile["I1"]
        result.extra["H1_residual"] = _relative(h1_measured, h1_predicted)
    _log.debug("H' identity: worst relative residual %.3g", result.worst)
    return result


def check_I_derivative(profile: FrequencyProfile) -> Tuple[DerivativeCheck, float]:
    """Compare I' with its main part (Q-2) I/r + 2 ZU/r^2 + 2 r^2 ZW; returns max r |rest| / |I| too."""
    r, Q = profile.radii, profile.sp.Q
    measured = log_derivative(r, profile["I"])
    predicted = (Q - 2.0) * profile["I"] / r + 2.0 * profile["ZU"] / r**2 + 2.0 * r**2 * profile["ZW"]
    rest = measured - predicted
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.abs(r * rest / profile["I"])
    usable = np.isfinite(ratio)
    constant = float(np.max(ratio[usable])) if np.any(usable) else math.nan
    return DerivativeCheck(r, measured, predicted, _relative(measured, predicted), {"rest": rest}), constant


def check_boundary_forms(profile: FrequencyProfile) -> Dict[str, float]:
    """Largest |volume - boundary| over 3 error budgets for I1 and I2; at most 1 when they agree."""
    result = {}
    for key in ["I1", "I2"]:
        budget = 3.0 * (profile.error(key) + profile.error(key + "b"))
        diff = np.abs(profile[key] - profile[key + "b"])
        scale = np.maximum(budget, 1e-12 * np.maximum(np.abs(profile[key]), 1.0))
        result[key] = float(np.max(diff / scale))
    return result


@dataclass
class MonotonicityResult:
    status: str
    r0: float
    threshold: float
    omega: np.ndarray
    beta_hat: float
    violations: int
    # Resolution of beta_hat implied by the error budget of N
    beta_error: float = 0.0


def check_monotonicity(profile: FrequencyProfile, r0: float) -> MonotonicityResult:
    """Fit beta with N'/N >= -beta/r on {r < r0 : N(r) > max(1, N(r0))}."""
    r, N = profile.radii, profile["N"]
    if not r[0] < r0 <= r[-1]:
        raise InputError(f"r0={r0:g} must lie inside the profile range")
    N_r0 = float(np.interp(math.log(r0), np.log(r), N))
    threshold = max(1.0, N_r0)
    omega = (r < r0) & (N > threshold + TIE_TOLERANCE)
    if not np.any(omega):
        _log.info("Omega is empty for %s at r0=%g", profile.field, r0)
        return MonotonicityResult(EMPTY_OMEGA, r0, threshold, omega, 0.0, 0)
    positive = np.where(N > 0, N, np.nan)
    with np.errstate(divide="ignore", invalid="ignore"):
        slope = r * log_derivative(r, positive) / positive
        # the central stencil amplifies errors of log N by 1.5 / h
        resolution = 1.5 * profile.error("N") / positive / float(np.mean(np.diff(np.log(r))))
    usable = omega & np.isfinite(slope)
    beta_hat = max(0.0, float(np.max(-slope[usable]))) if np.any(usable) else 0.0
    beta_error = float(np.max(resolution[usable])) if np.any(usable) else 0.0
    violations = int(np.sum(slope[usable] < -beta_hat - TIE_TOLERANCE))
    _log.debug("Monotonicity for %s: beta=%.6g on %d radii", profile.field, beta_hat, int(np.sum(omega)))
    return MonotonicityResult("OK", r0, threshold, omega, beta_hat, violations, beta_error)


@dataclass
class DoublingResult:
    radii: np.ndarray
    ratios: np.ndarray
    h_ratios: np.ndarray
    log_C: float
    A: float
    gamma: float
    fitted: bool
    h_level_holds: bool


def _doubled(profile: FrequencyProfile, column: str) -> Tuple[np.ndarray, np.ndarray]:
    """Ratio column(2r)/column(r) for the radii whose double lies in the profile range."""
    r = profile.radii
    log_values = np.log(profile[column])
    spline = CubicSpline(np.log(r), log_values)
    usable = 2.0 * r <= r[-1] * (1.0 + 1e-12)
    radii = r[usable]
    return radii, np.exp(spline(np.log(np.minimum(2.0 * radii, r[-1]))) - log_values[usable])


def check_doubling(profile: FrequencyProfile, beta_hat: Optional[float] = None) -> DoublingResult:
    """Doubling ratios of the ball mass of (u, w), with log D <= log C + A r^-gamma fitted when beta > 2."""
    if np.any(profile["M"] <= 0) or np.any(profile["H"] <= 0):
        raise DegenerateH("doubling ratios need positive masses")
    radii, ratios = _doubled(profile, "M")
    _, h_ratios = _doubled(profile, "H")
    if radii.size == 0:
        raise InsufficientRange("no radius r with 2r inside the profile range")
    log_d = np.log(ratios)
    gamma = 0.0
    fitted = False
    if beta_hat is not None and beta_hat > 2.0:
        fitted = True
        gamma = beta_hat - 2.0
        design = np.stack([np.ones(radii.shape), radii**-gamma], axis=-1)
        (log_C, A), *_ = np.linalg.lstsq(design, log_d, rcond=None)
        A = max(0.0, float(A))
        log_C = float(np.max(log_d - A * radii**-gamma))
    else:
        A = 0.0
        log_C = float(np.max(log_d))
    Q = profile.sp.Q
    bound = (Q + 3.0) * math.log(2.0) + A * radii**-gamma
    h_level_holds = bool(np.all(np.log(h_ratios) <= bound + 1e-9))
    _log.debug("Doubling for %s: log C=%.6g A=%.6g gamma=%.6g", profile.field, log_C, A, gamma)
    return DoublingResult(radii, ratios, h_ratios, log_C, A, gamma, fitted, h_level_holds)


def check_energy_bound(profile: FrequencyProfile) -> Tuple[float, np.ndarray]:
    """Empirical constant of int |X u|^2 + r^4 int |X w|^2 <= C I(r) on the radii where H/r < I."""
    mask = profile["H"] / profile.radii < profile["I"]
    if not np.any(mask):
        return math.nan, mask
    return float(np.max(profile["E"][mask] / profile["I"][mask])), mask


@dataclass(frozen=True)
class CaccioppoliResult:
    r: float
    lhs: float
    potential_term: float
    mass_term: float
    empirical_constant: float


def check_caccioppoli(
    u: AnalyticField,
    r: float,
    settings: Optional[QuadratureSettings] = None,
    potential: Optional[Potential] = None,
    cutoff: Optional[Cutoff] = None,
    w: Optional[AnalyticField] = None,
) -> CaccioppoliResult:
    """int_{B_r} (Delta_X u)^2 against 2 int_{B_2r} V u^2 eta^4 + C r^-4 int_{B_2r} u^2."""
    sp = u.sp
    potential = potential or Potential()
    cutoff = cutoff or Cutoff(r)
    settings = settings_for(u.biradial and (w is None or w.biradial), settings)

    def integrand(smp: Sample) -> Dict[str, np.ndarray]:
        d = u.data(smp)
        lap = d.lap if w is None else w.data(smp).u
        eta = cutoff.derivatives(smp.rho)[0]
        return {
            "lhs": np.where(smp.rho <= r, np.square(lap), 0.0),
            "potential": potential.values(smp, sp) * np.square(d.u) * eta**4,
            "mass": np.square(d.u),
        }

    breaks = (r, cutoff.r, 2.0 * cutoff.r) + tuple(u.breaks()) + potential.breaks()
    values = ball_integrals(integrand, 2.0 * r, sp, settings, breaks=breaks)
    lhs, pot, mass = values["lhs"].value, values["potential"].value, values["mass"].value
    constant = max(0.0, (lhs - 2.0 * pot) * r**4 / mass) if mass > 0 else 0.0
    return CaccioppoliResult(r, lhs, pot, mass, constant)


def cutoff_constants(cutoff: Cutoff, sp: SpaceParams, count: int = 2000, seed: int = 11) -> Tuple[float, float]:
    """Sampled sup of |X eta| r / psi^(1/2) and |X_i X_j eta| r^2 over B_2r minus B_r."""
    r = cutoff.r
    p = random_points(sp, count, seed, r_min=r, r_max=2.0 * r)
    field = cutoff.as_field(sp)
    jet = field.jet(p)
    grad = np.linalg.norm(horizontal_gradient(jet, p, sp), axis=-1)
    hess = np.max(np.abs(horizontal_hessian(jet, p, sp)), axis=(-2, -1))
    return float(np.max(grad * r / np.sqrt(psi(p, sp)))), float(np.max(hess * r**2))


@dataclass(frozen=True)
class VanishingOrder:
    order: float
    rate: float
    classification: str
    power_residual: float
    exponential_residual: float


def vanishing_order_fit(radii: Sequence[float], masses: Sequence[float]) -> VanishingOrder:
    """Fit M(r) ~ r^k and M(r) ~ exp(-B r^-gamma) to ball masses and keep the better description."""
    r = np.asarray(radii, dtype=float)
    M = np.asarray(masses, dtype=float)
    usable = (r > 0) & (M > 0)
    if np.sum(usable) < 5:
        raise InsufficientRange("a vanishing order fit needs at least five positive masses")
    r, M = r[usable], M[usable]
    x, y = np.log(r), np.log(M)
    order, intercept = np.polyfit(x, y, 1)
    power_residual = float(np.sqrt(np.mean((y - (order * x + intercept)) ** 2)))
    rate = math.nan
    exponential_residual = math.inf
    if np.all(M < 1.0):
        ex, ey = np.log(1.0 / r), np.log(-y)
        rate, ex_intercept = np.polyfit(ex, ey, 1)
        # compare both fits in log M
        predicted = -np.exp(rate * ex + ex_intercept)
        exponential_residual = float(np.sqrt(np.mean((y - predicted) ** 2)))
    classification = SUPER_POLYNOMIAL if exponential_residual < power_residual else FINITE_ORDER
    return VanishingOrder(float(order), float(rate), classification, power_residual, exponential_residual)


def iterated_doubling_bound(M_R: float, R: float, k: int, C: float, A: float, gamma: float) -> np.ndarray:
    """Lower bounds of M(R / 2^j), j = 0..k, obtained by applying the doubling bound j times."""
    if k < 0 or R <= 0 or C <= 0:
        raise InputError("iterated doubling needs k >= 0, R > 0 and C > 0")
    log_steps = [math.log(C) + A * (R / 2.0**i) ** -gamma for i in range(1, k + 1)]
    return M_R * np.exp(-np.concatenate([[0.0], np.cumsum(log_steps)]))
