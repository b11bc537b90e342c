"""Integrals over gauge balls and gauge spheres.

Two regimes are available. "reduced2d" integrates bi-radial integrands in the polar chart
(rho, theta) -> (s, t) with graded Gauss-Legendre panels. "qmc" samples the full space with scrambled
Sobol points and handles any integrand that can be evaluated at ambient points.

Sphere integrals carry the co-area weight: sphere(f, r) = int_{dB_r} f / |grad rho| d sigma, so that
int_0^r sphere(f, rho) d rho = ball(f, r).
"""
import math
import logging
from dataclasses import dataclass, replace
from functools import lru_cache
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
from scipy.special import gamma as gamma_fn, roots_legendre
from scipy.stats import qmc

from .geometry import EPS, InputError, LabException, Point, Sample, SpaceParams, dilate, gauge_st, psi_st
from .utils import pairwise_sum, parallel_map

_log = logging.getLogger(__name__)

REDUCED2D = "reduced2d"
QMC = "qmc"
METHODS = (REDUCED2D, QMC)

# Bounds of the relative half width of the shell behind qmc sphere integrals
MIN_SHELL_STEP = 1e-3
MAX_SHELL_STEP = 0.1

Integrand = Callable[[Sample], Dict[str, np.ndarray]]
ScalarIntegrand = Callable[[Sample], np.ndarray]


class NonIntegrableWeight(LabException):
    """Exception raised when a singular weight makes an integral divergent."""


@dataclass(frozen=True)
class Weight:
    """Singular behaviour of an integrand: like |x|^(-x_power) near the axis, rho^(-degree) near the origin."""

    x_power: float = 0.0
    degree: float = 0.0

    def check(self, sp: SpaceParams) -> None:
        if self.x_power >= sp.m:
            raise NonIntegrableWeight(f"|x|^-{self.x_power:g} is not integrable for m={sp.m}")
        if self.degree >= sp.Q:
            raise NonIntegrableWeight(f"rho^-{self.degree:g} is not integrable for Q={sp.Q:g}")


@dataclass(frozen=True)
class QuadratureSettings:
    method: str = REDUCED2D
    rel_tol: float = 1e-8
    # Multiplies Gauss nodes per panel and qmc points
    node_factor: int = 1
    max_level: int = 5
    qmc_points: int = 2**20
    qmc_seed: int = 12345
    qmc_replicates: int = 8
    workers: int = 1

    def __post_init__(self) -> None:
        if self.method not in METHODS:
            raise InputError(f"unknown quadrature method '{self.method}'")
        if self.node_factor < 1 or self.qmc_points < 2 * self.qmc_replicates or self.qmc_replicates < 2:
            raise InputError("quadrature needs at least one node per panel and two qmc replicates")
        if self.max_level < 1 or self.workers < 1 or not self.rel_tol > 0:
            raise InputError("quadrature needs max_level >= 1, workers >= 1 and a positive tolerance")

    def refined(self) -> "QuadratureSettings":
        """Settings with doubled node counts."""
        return replace(self, node_factor=2 * self.node_factor)


@dataclass(frozen=True)
class QuadratureResult:
    value: float
    error_estimate: float
    method: str
    nodes: int


def sphere_area(k: int) -> float:
    """Area of the unit sphere in R^k (2 for k=1)."""
    return 2.0 * math.pi ** (k / 2.0) / float(gamma_fn(k / 2.0))


@dataclass(frozen=True)
class PolarChart:
    """Chart (rho, theta) -> (s, t) onto the gauge spheres, with the Jacobian of dx dy."""

    sp: SpaceParams

    def to_st(self, rho: np.ndarray, theta: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        al = self.sp.alpha
        s = rho * np.power(np.sin(theta), 1.0 / (al + 1.0))
        t = np.power(rho, al + 1.0) * np.cos(theta) / (al + 1.0)
        return s, t

    def density(self, rho: np.ndarray, theta: np.ndarray) -> np.ndarray:
        """J(rho, theta) with dx dy = J d rho d theta after integrating the Euclidean sphere directions."""
        sp = self.sp
        al = sp.alpha
        s, t = self.to_st(rho, theta)
        det = np.power(rho, al + 1.0) * np.power(np.sin(theta), -al / (al + 1.0)) / (al + 1.0)
        return sphere_area(sp.m) * sphere_area(sp.n) * np.power(s, sp.m - 1) * np.power(t, sp.n - 1) * det

    def sample(self, rho: np.ndarray, theta: np.ndarray) -> Sample:
        s, t = self.to_st(rho, theta)
        rho_b = np.broadcast_to(rho, s.shape)
        return Sample(s, t, rho_b, psi_st(s, rho_b, self.sp))


@lru_cache(maxsize=64)
def _legendre(q: int) -> Tuple[np.ndarray, np.ndarray]:
    nodes, weights = roots_legendre(q)
    return nodes, weights


def gauss_nodes(breaks: Sequence[float], q: int) -> Tuple[np.ndarray, np.ndarray]:
    """Composite Gauss-Legendre rule with q nodes on each panel between consecutive breakpoints."""
    ref_x, ref_w = _legendre(q)
    lo = np.asarray(breaks[:-1])[:, None]
    hi = np.asarray(breaks[1:])[:, None]
    x = 0.5 * (hi - lo) * ref_x[None, :] + 0.5 * (hi + lo)
    w = 0.5 * (hi - lo) * ref_w[None, :]
    return x.ravel(), w.ravel()


def graded_breaks(a: float, b: float, levels: int, extra: Iterable[float] = ()) -> List[float]:
    """Breakpoints on [a, b] refined dyadically toward a, merged with extra breakpoints inside (a, b)."""
    points = {a, b}
    points.update(a + (b - a) * 2.0**-k for k in range(1, levels))
    points.update(x for x in extra if a < x < b)
    return sorted(points)


def _level_shape(level: int, settings: QuadratureSettings) -> Tuple[int, int]:
    return 6 + 6 * level, (8 + 4 * level) * settings.node_factor


def theta_nodes(level: int, settings: QuadratureSettings) -> Tuple[np.ndarray, np.ndarray]:
    """Gauss nodes on [0, pi/2] graded toward both ends."""
    levels, q = _level_shape(level, settings)
    quarter = math.pi / 4.0
    left = graded_breaks(0.0, quarter, levels)
    right = [math.pi / 2.0 - x for x in reversed(graded_breaks(0.0, quarter, levels))]
    return gauss_nodes(left + right[1:], q)


def radial_nodes(r: float, level: int, settings: QuadratureSettings, extra: Iterable[float] = ()) -> Tuple[
    np.ndarray, np.ndarray
]:
    """Gauss nodes on [0, r] graded toward the origin."""
    levels, q = _level_shape(level, settings)
    return gauss_nodes(graded_breaks(0.0, r, levels, extra), q)


def _check(r: float, sp: SpaceParams, weights: Iterable[Weight]) -> None:
    if not r > 0:
        raise InputError(f"radius must be positive, got {r}")
    for weight in weights:
        weight.check(sp)


def _converged(value: float, previous: float, magnitude: float, settings: QuadratureSettings) -> Tuple[bool, float]:
    diff = abs(value - previous)
    return diff <= settings.rel_tol * magnitude, diff + 64 * EPS * magnitude


def _reduced(
    evaluate: Callable[[int], Tuple[Dict[str, float], Dict[str, float], int]], settings: QuadratureSettings, what: str
) -> Dict[str, QuadratureResult]:
    """Refine level by level until two successive levels agree for every integrand."""
    previous, _, _ = evaluate(0)
    for level in range(1, settings.max_level + 1):
        values, magnitudes, nodes = evaluate(level)
        results = {}
        done = True
        for name, value in values.items():
            ok, err = _converged(value, previous[name], magnitudes[name], settings)
            done = done and ok
            results[name] = QuadratureResult(value, err, REDUCED2D, nodes)
        if done:
            _log.debug("%s converged at level %d with %d nodes", what, level, nodes)
            return results
        previous = values
    _log.warning("%s did not reach relative tolerance %g; reporting last level", what, settings.rel_tol)
    return results


def _weighted_sums(
    integrand: Integrand, samples: List[Tuple[Sample, np.ndarray]], workers: int
) -> Tuple[Dict[str, float], Dict[str, float]]:
    """Evaluate chunks (possibly in parallel) and reduce each integrand with a fixed pairwise tree."""
    parts = parallel_map(lambda chunk: {k: v * chunk[1] for k, v in integrand(chunk[0]).items()}, samples, workers)
    values, magnitudes = {}, {}
    for name in parts[0]:
        stacked = np.concatenate([np.ravel(part[name]) for part in parts])
        values[name] = pairwise_sum(stacked)
        magnitudes[name] = pairwise_sum(np.abs(stacked))
    return values, magnitudes


def _row_chunks(count: int, workers: int) -> List[slice]:
    chunks = max(1, min(count, 4 * workers))
    bounds = np.linspace(0, count, chunks + 1).astype(int)
    return [slice(lo, hi) for lo, hi in zip(bounds[:-1], bounds[1:]) if hi > lo]


def _reduced_ball(
    integrand: Integrand, r: float, sp: SpaceParams, settings: QuadratureSettings, breaks: Sequence[float]
) -> Dict[str, QuadratureResult]:
    chart = PolarChart(sp)

    def evaluate(level: int) -> Tuple[Dict[str, float], Dict[str, float], int]:
        rho, w_rho = radial_nodes(r, level, settings, breaks)
        theta, w_theta = theta_nodes(level, settings)
        chunks = []
        for rows in _row_chunks(rho.size, settings.workers):
            R, TH = rho[rows, None], theta[None, :]
            weight = chart.density(R, TH) * w_rho[rows, None] * w_theta[None, :]
            chunks.append((chart.sample(R, TH), weight))
        values, magnitudes = _weighted_sums(integrand, chunks, settings.workers)
        return values, magnitudes, rho.size * theta.size

    return _reduced(evaluate, settings, f"ball integral r={r:g}")


def _reduced_sphere(
    integrand: Integrand, r: float, sp: SpaceParams, settings: QuadratureSettings
) -> Dict[str, QuadratureResult]:
    chart = PolarChart(sp)

    def evaluate(level: int) -> Tuple[Dict[str, float], Dict[str, float], int]:
        theta, w_theta = theta_nodes(level, settings)
        R = np.full(theta.shape, float(r))
        values, magnitudes = _weighted_sums(
            integrand, [(chart.sample(R, theta), chart.density(R, theta) * w_theta)], 1
        )
        return values, magnitudes, theta.size

    return _reduced(evaluate, settings, f"sphere integral r={r:g}")


@lru_cache(maxsize=8)
def _sobol_unit_points(dim: int, points: int, replicates: int, seed: int) -> np.ndarray:
    """Scrambled Sobol replicates in [0, 1)^dim, shape (replicates, points/replicates, dim)."""
    per_replicate = 2 ** int(math.floor(math.log2(points // replicates)))
    batches = [
        qmc.Sobol(d=dim, scramble=True, seed=seed + rep).random_base2(int(math.log2(per_replicate)))
        for rep in range(replicates)
    ]
    result = np.stack(batches)
    result.setflags(write=False)
    return result


def _qmc_box_points(sp: SpaceParams, settings: QuadratureSettings) -> Tuple[Point, float]:
    """Points of the bounding box of the unit ball, with the box volume."""
    unit = _sobol_unit_points(
        sp.dim, settings.qmc_points * settings.node_factor, settings.qmc_replicates, settings.qmc_seed
    )
    y_half = 1.0 / (sp.alpha + 1.0)
    x = 2.0 * unit[..., : sp.m] - 1.0
    y = y_half * (2.0 * unit[..., sp.m :] - 1.0)
    volume = 2.0**sp.m * (2.0 * y_half) ** sp.n
    return Point(x, y), volume


def shell_step(r: float, settings: QuadratureSettings) -> float:
    """Half width h of the shell B_{r+h} minus B_{r-h} used for qmc sphere integrals."""
    return r * min(max(10.0 * math.sqrt(settings.rel_tol), MIN_SHELL_STEP), MAX_SHELL_STEP)


def _qmc(
    integrand: Integrand, r: float, sp: SpaceParams, settings: QuadratureSettings, sphere: bool
) -> Dict[str, QuadratureResult]:
    """Randomized QMC over the ball; sphere integrals are (ball(r+h) - ball(r-h)) / 2h.

    Both balls are sampled with the same unit points dilated to their radius, so the difference keeps
    the noise level of a single ball integral.
    """
    unit, unit_volume = _qmc_box_points(sp, settings)
    replicates, per_replicate = unit.x.shape[0], unit.x.shape[1]
    inside = gauge_st(unit.s, unit.t, sp) <= 1.0
    if sphere:
        h = shell_step(r, settings)
        radii = [(r + h, 0.5 / h), (r - h, -0.5 / h)]
    else:
        radii = [(r, 1.0)]

    def replicate_sums(rep: int) -> Dict[str, Tuple[float, float]]:
        mask = inside[rep]
        p = Point(unit.x[rep][mask], unit.y[rep][mask])
        half_mask = (np.arange(per_replicate) < per_replicate // 2)[mask]
        sums: Dict[str, Tuple[float, float]] = {}
        for radius, coef in radii:
            scale = coef * unit_volume * radius**sp.Q / per_replicate
            values = integrand(Sample.from_point(dilate(p, radius, sp), sp))
            for k, v in values.items():
                full, half = sums.get(k, (0.0, 0.0))
                sums[k] = (full + pairwise_sum(v) * scale, half + pairwise_sum(v[half_mask]) * 2 * scale)
        return sums

    sums = parallel_map(replicate_sums, range(replicates), settings.workers)
    results = {}
    for name in sums[0]:
        full = np.array([s[name][0] for s in sums])
        half = np.array([s[name][1] for s in sums])
        value = pairwise_sum(full) / replicates
        half_value = pairwise_sum(half) / replicates
        std_error = float(np.std(full, ddof=1)) / math.sqrt(replicates)
        error = max(std_error, abs(value - half_value))
        results[name] = QuadratureResult(value, error, QMC, replicates * per_replicate)
    return results


def ball_integrals(
    integrand: Integrand,
    r: float,
    sp: SpaceParams,
    settings: Optional[QuadratureSettings] = None,
    weights: Iterable[Weight] = (),
    breaks: Sequence[float] = (),
) -> Dict[str, QuadratureResult]:
    """Integrals over B_r of every integrand returned by `integrand`, sharing nodes."""
    settings = settings or QuadratureSettings()
    _check(r, sp, weights)
    if settings.method == QMC:
        return _qmc(integrand, r, sp, settings, sphere=False)
    return _reduced_ball(integrand, r, sp, settings, breaks)


def sphere_integrals(
    integrand: Integrand,
    r: float,
    sp: SpaceParams,
    settings: Optional[QuadratureSettings] = None,
    weights: Iterable[Weight] = (),
) -> Dict[str, QuadratureResult]:
    """Integrals over the gauge sphere of radius r against d sigma / |grad rho|."""
    settings = settings or QuadratureSettings()
    _check(r, sp, weights)
    if settings.method == QMC:
        return _qmc(integrand, r, sp, settings, sphere=True)
    return _reduced_sphere(integrand, r, sp, settings)


def ball_integral(
    f: ScalarIntegrand,
    r: float,
    sp: SpaceParams,
    settings: Optional[QuadratureSettings] = None,
    weight: Weight = Weight(),
    breaks: Sequence[float] = (),
) -> QuadratureResult:
    """Integral of f over B_r."""
    return ball_integrals(lambda smp: {"f": f(smp)}, r, sp, settings, [weight], breaks)["f"]


def sphere_integral(
    f: ScalarIntegrand,
    r: float,
    sp: SpaceParams,
    settings: Optional[QuadratureSettings] = None,
    weight: Weight = Weight(),
) -> QuadratureResult:
    """Integral of f / |grad rho| over the gauge sphere of radius r."""
    return sphere_integrals(lambda smp: {"f": f(smp)}, r, sp, settings, [weight])["f"]


def settings_for(biradial: bool, settings: Optional[QuadratureSettings] = None) -> QuadratureSettings:
    """Fall back to qmc for fields the (s, t) chart cannot evaluate."""
    settings = settings or QuadratureSettings()
    if biradial or settings.method == QMC:
        return settings
    _log.debug("Field is not bi-radial, switching quadrature to qmc")
    return replace(settings, method=QMC)


@dataclass(frozen=True)
class SelfTestItem:
    name: str
    value: float
    expected: float
    error_budget: float

    @property
    def passed(self) -> bool:
        return abs(self.value - self.expected) <= self.error_budget


def scaling_exponent(sp: SpaceParams, settings: QuadratureSettings, radii: Sequence[float] = (0.5, 1.0, 2.0)) -> float:
    """Least-squares slope of log |B_r| against log r."""
    volumes = [ball_integral(lambda smp: np.ones(np.shape(smp.rho)), r, sp, settings).value for r in radii]
    slope, _ = np.polyfit(np.log(radii), np.log(volumes), 1)
    return float(slope)


def self_test(sp: SpaceParams, settings: Optional[QuadratureSettings] = None, r: float = 1.0) -> List[SelfTestItem]:
    """Scaling, co-area and divergence checks of the integration rules."""
    settings = settings or QuadratureSettings()
    items = [SelfTestItem("scaling_exponent", scaling_exponent(sp, settings), sp.Q, 1e-3)]

    # co-area: int_0^r sphere(f, rho) d rho = ball(f, r) for f = rho^2 psi
    def f(smp: Sample) -> np.ndarray:
        return np.square(smp.rho) * smp.psi

    ball = ball_integral(f, r, sp, settings)
    rho_nodes, rho_weights = gauss_nodes([0.0, r], 24)
    shells = [sphere_integral(f, float(rho), sp, settings) for rho in rho_nodes]
    layered = pairwise_sum(np.array([s.value for s in shells]) * rho_weights)
    budget = 3.0 * (ball.error_estimate + pairwise_sum(np.array([s.error_estimate for s in shells]) * rho_weights))
    items.append(SelfTestItem("co_area", layered, ball.value, max(budget, settings.rel_tol * abs(ball.value))))

    # divergence: int_B Delta_X rho^4 = sphere(Z rho^4 psi / rho) = 4 r^3 sphere(psi)
    beta = 4.0
    lap = ball_integral(
        lambda smp: beta * (beta + sp.Q - 2.0) * np.power(smp.rho, beta - 2.0) * smp.psi, r, sp, settings
    )
    flux = sphere_integral(lambda smp: beta * np.power(smp.rho, beta - 1.0) * smp.psi, r, sp, settings)
    budget = 3.0 * (lap.error_estimate + flux.error_estimate)
    items.append(SelfTestItem("divergence", lap.value, flux.value, max(budget, settings.rel_tol * abs(flux.value))))
    for item in items:
        _log.debug("Quadrature self-test %s: %.12g (expected %.12g)", item.name, item.value, item.expected)
    return items
