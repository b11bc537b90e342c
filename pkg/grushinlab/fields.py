"""Catalog of analytic test fields with exact jets, the cutoff function, potentials and bi-radial grid fields."""
import csv
import math
import logging
from dataclasses import dataclass, field as dc_field
from typing import Dict, List, Mapping, Optional, Sequence, Tuple, cast

import numpy as np
from scipy.interpolate import RectBivariateSpline
from scipy.special import comb

from .geometry import (
    BiradialPartials,
    DegeneratePoint,
    InputError,
    Jet,
    JetSource,
    LabException,
    Point,
    Sample,
    SpaceParams,
    biradial_jet,
    dilate,
    gauge_power_partials,
    gauge_st,
    horizontal_gradient,
    laplace_X,
    laplace_gradient,
    power_derivatives,
    z_derivative,
)

_log = logging.getLogger(__name__)

# Monomial exponents (i, j) of a^i b^j with a = s^2 and b = t^2
Monomials = Mapping[Tuple[float, int], float]


class NonBiradial(LabException):
    """Exception raised when the bi-radial reduction is requested for a field that is not bi-radial."""


@dataclass(frozen=True)
class FieldData:
    """Horizontal quantities of a field u at a batch of nodes."""

    u: np.ndarray
    grad_sq: np.ndarray
    lap: np.ndarray
    z: np.ndarray
    # |X (Delta_X u)|^2 and Z (Delta_X u), missing when the field has no third derivatives
    grad_lap_sq: Optional[np.ndarray] = None
    z_lap: Optional[np.ndarray] = None


class AnalyticField(JetSource):
    """A scalar field with known jets and metadata used to choose quadrature paths and checks."""

    biradial = False

    def __init__(self, name: str, sp: SpaceParams, smoothness: float = math.inf, degree: Optional[float] = None):
        self.name = name
        self.sp = sp
        self.smoothness = smoothness
        self.degree = degree

    def __repr__(self) -> str:
        return f"<{type(self).__name__} {self.name} ({self.sp.label()})>"

    def jet(self, p: Point) -> Jet:  # pragma: no cover
        raise NotImplementedError

    def exact_laplace(self, p: Point) -> Optional[np.ndarray]:
        """Closed-form Delta_X, if the family declares one."""
        return None

    def value(self, p: Point) -> np.ndarray:
        return self.jet(p).value

    def breaks(self) -> Tuple[float, ...]:
        """Gauge radii where the field loses smoothness; quadrature panels end there."""
        return ()

    def data(self, sample: Sample) -> FieldData:
        """Evaluate the horizontal quantities at the sample nodes through the ambient jet."""
        if sample.point is None:
            raise NonBiradial(f"field '{self.name}' is not bi-radial and needs ambient sample points")
        p, sp = sample.point, self.sp
        jet = self.jet(p)
        grad_x = horizontal_gradient(jet, p, sp)
        lap_grad: Optional[Jet] = None
        if jet.third is not None:
            lap_grad = Jet(laplace_X(jet, p, sp), laplace_gradient(jet, p, sp))
        return FieldData(
            u=jet.value,
            grad_sq=np.sum(grad_x**2, axis=-1),
            lap=laplace_X(jet, p, sp),
            z=z_derivative(jet, p, sp),
            grad_lap_sq=None if lap_grad is None else np.sum(horizontal_gradient(lap_grad, p, sp) ** 2, axis=-1),
            z_lap=None if lap_grad is None else z_derivative(lap_grad, p, sp),
        )


class BiradialField(AnalyticField):
    """A field depending only on s = |x| and t = |y|, described by its partials in a = s^2 and b = t^2."""

    biradial = True

    def partials(self, a: np.ndarray, b: np.ndarray) -> BiradialPartials:  # pragma: no cover
        raise NotImplementedError

    def jet(self, p: Point) -> Jet:
        return biradial_jet(self.partials(np.square(p.s), np.square(p.t)), p, self.sp, order=3)

    def values(self, s: np.ndarray, t: np.ndarray) -> np.ndarray:
        return self.partials(np.square(s), np.square(t)).f

    def laplacian_values(self, s: np.ndarray, t: np.ndarray) -> np.ndarray:
        """Delta_X from the (a, b) partials; finite on the axes for fields built from monomials."""
        sp = self.sp
        a, b = np.square(s), np.square(t)
        d = self.partials(a, b)
        return 2 * sp.m * d.fa + 4 * a * d.faa + np.power(a, sp.alpha) * (2 * sp.n * d.fb + 4 * b * d.fbb)

    def exact_laplace(self, p: Point) -> Optional[np.ndarray]:
        return self.laplacian_values(p.s, p.t)

    def data(self, sample: Sample) -> FieldData:
        sp = self.sp
        n, m, al = sp.n, sp.m, sp.alpha
        a, b = np.square(sample.s), np.square(sample.t)
        d = self.partials(a, b)
        a_al = np.power(a, al)
        inner = 2 * n * d.fb + 4 * b * d.fbb
        lap = 2 * m * d.fa + 4 * a * d.faa + a_al * inner
        with np.errstate(divide="ignore", invalid="ignore"):
            a_al1 = al * np.power(a, al - 1.0)
        lap_a = (2 * m + 4) * d.faa + 4 * a * d.faaa + a_al1 * inner + a_al * (2 * n * d.fab + 4 * b * d.fabb)
        lap_b = 2 * m * d.fab + 4 * a * d.faab + a_al * ((2 * n + 4) * d.fbb + 4 * b * d.fbbb)
        return FieldData(
            u=d.f,
            grad_sq=4 * a * d.fa**2 + 4 * a_al * b * d.fb**2,
            lap=lap,
            z=2 * a * d.fa + 2 * (al + 1) * b * d.fb,
            grad_lap_sq=4 * a * lap_a**2 + 4 * a_al * b * lap_b**2,
            z_lap=2 * a * lap_a + 2 * (al + 1) * b * lap_b,
        )


def _falling(power: float, order: int) -> float:
    result = 1.0
    for k in range(order):
        result *= power - k
    return result


class BiradialPolynomial(BiradialField):
    """Finite sum of c * (s^2)^i (t^2)^j; non-integer i is allowed for gauge-adapted terms."""

    def __init__(self, coeffs: Monomials, sp: SpaceParams, name: Optional[str] = None):
        self.coeffs: Dict[Tuple[float, int], float] = {
            (float(i), int(j)): float(c) for (i, j), c in coeffs.items() if c != 0.0
        }
        degrees = {2 * i + sp.kappa * j for (i, j) in self.coeffs}
        super().__init__(
            name or self.describe(self.coeffs),
            sp,
            math.inf if all(float(i).is_integer() for (i, _) in self.coeffs) else 2.0,
            degrees.pop() if len(degrees) == 1 else (0.0 if not degrees else None),
        )

    @staticmethod
    def describe(coeffs: Mapping[Tuple[float, int], float]) -> str:
        if not coeffs:
            return "0"
        terms = []
        for (i, j), c in sorted(coeffs.items()):
            factors = [f"{c:g}"] + ([f"s^{2 * i:g}"] if i else []) + ([f"t^{2 * j}"] if j else [])
            terms.append("*".join(factors))
        return "+".join(terms)

    def partials(self, a: np.ndarray, b: np.ndarray) -> BiradialPartials:
        a = np.asarray(a, dtype=float)
        b = np.asarray(b, dtype=float)
        out = {key: np.zeros(np.broadcast(a, b).shape) for key in BiradialPartials.__dataclass_fields__}
        names = {(0, 0): "f", (1, 0): "fa", (0, 1): "fb", (2, 0): "faa", (1, 1): "fab", (0, 2): "fbb"}
        names.update({(3, 0): "faaa", (2, 1): "faab", (1, 2): "fabb", (0, 3): "fbbb"})
        with np.errstate(divide="ignore", invalid="ignore"):
            for (i, j), c in self.coeffs.items():
                for (pa, pb), key in names.items():
                    coef = c * _falling(i, pa) * _falling(j, pb)
                    if coef == 0.0:
                        continue
                    out[key] = out[key] + coef * np.power(a, i - pa) * np.power(b, j - pb)
        return BiradialPartials(**out)

    def laplacian(self) -> "BiradialPolynomial":
        """Exact Delta_X as another (generalized) bi-radial polynomial."""
        sp = self.sp
        result: Dict[Tuple[float, int], float] = {}
        for (i, j), c in self.coeffs.items():
            x_coef = c * (2 * sp.m * i + 4 * i * (i - 1))
            y_coef = c * (2 * sp.n * j + 4 * j * (j - 1))
            if x_coef:
                result[(i - 1, j)] = result.get((i - 1, j), 0.0) + x_coef
            if y_coef:
                key = (i + sp.alpha, j - 1)
                result[key] = result.get(key, 0.0) + y_coef
        return BiradialPolynomial(result, sp, name=f"Delta_X({self.name})")


class GaugeFunctionField(BiradialField):
    """A field phi(rho^(2(alpha+1))) given by phi and its first three derivatives."""

    def phi(self, P: np.ndarray) -> Sequence[np.ndarray]:  # pragma: no cover
        raise NotImplementedError

    def partials(self, a: np.ndarray, b: np.ndarray) -> BiradialPartials:
        a = np.asarray(a, dtype=float)
        P = np.power(a, self.sp.alpha + 1.0) + (self.sp.alpha + 1.0) ** 2 * np.asarray(b, dtype=float)
        return gauge_power_partials(self.phi(P), a, np.asarray(b, dtype=float), self.sp)


class RhoPower(GaugeFunctionField):
    def __init__(self, beta: float, sp: SpaceParams):
        super().__init__(f"rho^{beta:g}", sp, math.inf if beta == 0 else beta, beta)
        self.beta = beta

    def phi(self, P: np.ndarray) -> Sequence[np.ndarray]:
        if self.beta != 0 and self.beta < self.sp.kappa and np.any(P == 0.0):
            raise DegeneratePoint(f"rho^{self.beta:g} is not smooth at the origin")
        return power_derivatives(P, self.beta / self.sp.kappa)

    def exact_laplace(self, p: Point) -> Optional[np.ndarray]:
        beta, sp = self.beta, self.sp
        rho = gauge_st(p.s, p.t, sp)
        if beta == 0:
            return np.zeros(rho.shape)
        if np.any(rho == 0.0):
            raise DegeneratePoint("closed-form Laplacian of a rho power at the origin")
        return beta * (beta + sp.Q - 2) * np.power(rho, beta - 2 - 2 * sp.alpha) * np.power(p.s, 2 * sp.alpha)


class Bump(GaugeFunctionField):
    """(1 - (rho/r)^(2(alpha+1)))^3 inside B_r, zero outside."""

    def __init__(self, r: float, sp: SpaceParams):
        if r <= 0:
            raise InputError("bump radius must be positive")
        super().__init__(f"bump({r:g})", sp, 2.0)
        self.r = r

    def phi(self, P: np.ndarray) -> Sequence[np.ndarray]:
        R = self.r**self.sp.kappa
        inside = P < R
        v = np.where(inside, 1.0 - P / R, 0.0)
        return [v**3, -3.0 * v**2 / R, 6.0 * v / R**2, np.where(inside, -6.0 / R**3, 0.0)]

    def breaks(self) -> Tuple[float, ...]:
        return (self.r,)


def _smoothstep(order: int) -> np.polynomial.Polynomial:
    """Smoothstep polynomial of degree 2*order+1 rising from 0 at 0 to 1 at 1."""
    coeffs = np.zeros(2 * order + 2)
    for k in range(order + 1):
        coeffs[order + 1 + k] = comb(order + k, k, exact=True) * comb(2 * order + 1, order - k, exact=True) * (-1) ** k
    return np.polynomial.Polynomial(coeffs)


@dataclass(frozen=True)
class Cutoff:
    """Radial cutoff eta(rho): 1 on [0, r], 0 beyond 2r, smoothstep of odd degree in between."""

    r: float
    degree: int = 5

    def __post_init__(self) -> None:
        if self.r <= 0 or self.degree < 3 or self.degree % 2 == 0:
            raise InputError("cutoff needs r > 0 and an odd smoothstep degree >= 3")

    @property
    def step(self) -> np.polynomial.Polynomial:
        return _smoothstep((self.degree - 1) // 2)

    def derivatives(self, rho: np.ndarray) -> List[np.ndarray]:
        """eta and its first three derivatives in rho."""
        tau = (np.asarray(rho, dtype=float) - self.r) / self.r
        ramp = (tau > 0.0) & (tau < 1.0)
        step = self.step
        result = [np.where(tau <= 0.0, 1.0, np.where(ramp, 1.0 - step(np.clip(tau, 0, 1)), 0.0))]
        for order in range(1, 4):
            deriv = step.deriv(order)
            result.append(np.where(ramp, -deriv(np.clip(tau, 0, 1)) / self.r**order, 0.0))
        return result

    def bounds(self, samples: int = 20001) -> Tuple[float, float]:
        """Constants C with |eta'| <= C/r and |eta''| <= C/r^2."""
        tau = np.linspace(0.0, 1.0, samples)
        step = self.step
        return float(np.max(np.abs(step.deriv(1)(tau)))), float(np.max(np.abs(step.deriv(2)(tau))))

    def as_field(self, sp: SpaceParams) -> "CutoffField":
        return CutoffField(self, sp)


class CutoffField(GaugeFunctionField):
    def __init__(self, cutoff: Cutoff, sp: SpaceParams):
        super().__init__(f"cutoff({cutoff.r:g})", sp, (cutoff.degree - 1) / 2)
        self.cutoff = cutoff

    def breaks(self) -> Tuple[float, ...]:
        return (self.cutoff.r, 2.0 * self.cutoff.r)

    def phi(self, P: np.ndarray) -> Sequence[np.ndarray]:
        k = self.sp.kappa
        rho = np.power(P, 1.0 / k)
        eta = self.cutoff.derivatives(rho)
        ramp = eta[1] != 0.0
        safe_P = np.where(ramp, P, 1.0)
        _, g1, g2, g3 = power_derivatives(safe_P, 1.0 / k)
        return [
            eta[0],
            np.where(ramp, eta[1] * g1, 0.0),
            np.where(ramp, eta[2] * g1**2 + eta[1] * g2, 0.0),
            np.where(ramp, eta[3] * g1**3 + 3 * eta[2] * g1 * g2 + eta[1] * g3, 0.0),
        ]


class CoordinateField(AnalyticField):
    """The harmonic coordinate function x_i."""

    def __init__(self, index: int, sp: SpaceParams):
        if not 1 <= index <= sp.m:
            raise InputError(f"coordinate index must lie in 1..{sp.m}, got {index}")
        super().__init__(f"x{index}", sp, math.inf, 1.0)
        self.index = index

    def jet(self, p: Point) -> Jet:
        batch = p.x.shape[:-1]
        dim = self.sp.dim
        grad = np.zeros(batch + (dim,))
        grad[..., self.index - 1] = 1.0
        return Jet(p.x[..., self.index - 1], grad, np.zeros(batch + (dim, dim)), np.zeros(batch + (dim, dim, dim)))

    def exact_laplace(self, p: Point) -> Optional[np.ndarray]:
        return np.zeros(p.x.shape[:-1])


class DilatedField(AnalyticField):
    """The composition u(dilate(p, lam))."""

    def __init__(self, inner: AnalyticField, lam: float):
        super().__init__(f"{inner.name}@{lam:g}", inner.sp, inner.smoothness, inner.degree)
        self.inner = inner
        self.lam = lam
        self.biradial = inner.biradial
        sp = inner.sp
        self._scale = np.array([lam] * sp.m + [lam ** (sp.alpha + 1.0)] * sp.n)

    def jet(self, p: Point) -> Jet:
        j = self.inner.jet(dilate(p, self.lam, self.sp))
        d = self._scale
        hess = None if j.hess is None else j.hess * d[:, None] * d[None, :]
        third = None if j.third is None else j.third * d[:, None, None] * d[None, :, None] * d[None, None, :]
        return Jet(j.value, j.grad * d, hess, third)

    def exact_laplace(self, p: Point) -> Optional[np.ndarray]:
        inner = self.inner.exact_laplace(dilate(p, self.lam, self.sp))
        return None if inner is None else self.lam**2 * inner

    def breaks(self) -> Tuple[float, ...]:
        return tuple(b / self.lam for b in self.inner.breaks())

    def data(self, sample: Sample) -> FieldData:
        if not self.biradial:
            return super().data(sample)
        lam, sp = self.lam, self.sp
        scaled = Sample(lam * sample.s, lam ** (sp.alpha + 1.0) * sample.t, lam * sample.rho, sample.psi)
        d = self.inner.data(scaled)
        return FieldData(
            u=d.u,
            grad_sq=lam**2 * d.grad_sq,
            lap=lam**2 * d.lap,
            z=d.z,
            grad_lap_sq=None if d.grad_lap_sq is None else lam**6 * d.grad_lap_sq,
            z_lap=None if d.z_lap is None else lam**2 * d.z_lap,
        )

    def values(self, s: np.ndarray, t: np.ndarray) -> np.ndarray:
        inner = cast(BiradialField, self.inner)
        return inner.values(self.lam * s, self.lam ** (self.sp.alpha + 1.0) * t)


def rho_power(beta: float, sp: SpaceParams) -> RhoPower:
    """The gauge power rho^beta."""
    return RhoPower(beta, sp)


def coordinate_field(index: int, sp: SpaceParams) -> CoordinateField:
    """The coordinate x_index (1-based)."""
    return CoordinateField(index, sp)


def biradial_polynomial(coeffs: Monomials, sp: SpaceParams, name: Optional[str] = None) -> BiradialPolynomial:
    """Polynomial in s^2 and t^2 given as {(i, j): coefficient}."""
    return BiradialPolynomial(coeffs, sp, name)


def constant_field(value: float, sp: SpaceParams) -> BiradialPolynomial:
    return BiradialPolynomial({(0, 0): value}, sp, name="1" if value == 1 else f"{value:g}")


def bump(r: float, sp: SpaceParams) -> Bump:
    """Compactly supported test function vanishing with its gradient on the sphere of radius r."""
    return Bump(r, sp)


def harmonic_field(sp: SpaceParams) -> BiradialPolynomial:
    """The Delta_X-harmonic field |x|^(2(alpha+1)) - ((alpha+1)(m+2 alpha)/n) |y|^2."""
    kappa = (sp.alpha + 1.0) * (sp.m + 2.0 * sp.alpha) / sp.n
    return BiradialPolynomial({(sp.alpha + 1.0, 0): 1.0, (0, 1): -kappa}, sp, name="harmonic")


def dilated(inner: AnalyticField, lam: float) -> DilatedField:
    if lam <= 0:
        raise InputError("dilation factor must be positive")
    return DilatedField(inner, lam)


def catalog(sp: SpaceParams) -> Dict[str, AnalyticField]:
    """Named test fields used by the command line."""
    fields: List[AnalyticField] = [
        constant_field(1.0, sp),
        rho_power(2.0, sp),
        rho_power(4.0, sp),
        rho_power(6.0, sp),
        bump(1.0, sp),
        biradial_polynomial({(1, 0): 1.0}, sp, name="s^2"),
        biradial_polynomial({(0, 1): 1.0}, sp, name="t^2"),
        biradial_polynomial({(1, 1): 1.0}, sp, name="s^2*t^2"),
        biradial_polynomial({(0, 0): 1.0, (1, 0): 1.0, (0, 1): -1.0}, sp, name="1+s^2-t^2"),
        harmonic_field(sp),
        coordinate_field(1, sp),
    ]
    return {f.name: f for f in fields}


@dataclass(frozen=True)
class Potential:
    """The potential c0 / rho_eps^4 with rho_eps^k = rho^k + eps^k (k = 2(alpha+1)); zero when c0 = 0."""

    c0: float = 0.0
    epsilon: float = 0.0

    def values(self, sample: Sample, sp: SpaceParams) -> np.ndarray:
        if self.c0 == 0.0:
            return np.zeros(np.shape(sample.rho))
        return self.at_rho(sample.rho, sp)

    def at_rho(self, rho: np.ndarray, sp: SpaceParams) -> np.ndarray:
        k = sp.kappa
        rho_eps = np.power(np.power(rho, k) + self.epsilon**k, 1.0 / k)
        if self.c0 != 0.0 and np.any(rho_eps == 0.0):
            raise DegeneratePoint("unregularized potential evaluated at the origin")
        with np.errstate(divide="ignore"):
            return self.c0 / rho_eps**4

    def breaks(self) -> Tuple[float, ...]:
        """Quadrature breakpoint at the regularization radius, where V turns over."""
        return (self.epsilon,) if self.c0 != 0.0 and self.epsilon > 0.0 else ()

    def dilated(self, lam: float) -> "Potential":
        """Potential lam^4 V(dilate(p, lam))."""
        return Potential(self.c0, self.epsilon / lam)


@dataclass(frozen=True)
class GridField:
    """Samples of a bi-radial field on a uniform (s, t) rectangle, even in s and in t."""

    s_grid: np.ndarray
    t_grid: np.ndarray
    values: np.ndarray
    symmetry: str = dc_field(default="even-even")

    def __post_init__(self) -> None:
        for name, grid in [("s", self.s_grid), ("t", self.t_grid)]:
            if grid.ndim != 1 or grid.size < 2:
                raise InputError(f"{name}-grid needs at least two nodes")
            if grid[0] != 0.0 or np.any(np.diff(grid) <= 0):
                raise InputError(f"{name}-grid must start at 0 and increase")
        if self.values.shape != (self.s_grid.size, self.t_grid.size):
            raise InputError("grid values do not match the grid shape")
        if not np.all(np.isfinite(self.values)):
            raise InputError("grid values must be finite")

    @property
    def h_s(self) -> float:
        return float(self.s_grid[1] - self.s_grid[0])

    @property
    def h_t(self) -> float:
        return float(self.t_grid[1] - self.t_grid[0])

    def spline(self) -> RectBivariateSpline:
        """Bicubic interpolating spline of the even extension to negative s and t."""
        s_ext = np.concatenate([-self.s_grid[:0:-1], self.s_grid])
        t_ext = np.concatenate([-self.t_grid[:0:-1], self.t_grid])
        v = self.values
        v_ext = np.concatenate([v[:0:-1, :], v], axis=0)
        v_ext = np.concatenate([v_ext[:, :0:-1], v_ext], axis=1)
        return RectBivariateSpline(s_ext, t_ext, v_ext, kx=3, ky=3, s=0)

    def to_csv(self, path: str) -> None:
        with open(path, "w", newline="") as csv_file:
            writer = csv.writer(csv_file)
            writer.writerow(["s-grid"] + [format(v, ".17g") for v in self.s_grid])
            writer.writerow(["t-grid"] + [format(v, ".17g") for v in self.t_grid])
            for row in self.values:
                writer.writerow([format(v, ".17g") for v in row])

    @classmethod
    def from_csv(cls, path: str) -> "GridField":
        with open(path, "r", newline="") as csv_file:
            rows = list(csv.reader(csv_file))
        if len(rows) < 2 or rows[0][0] != "s-grid" or rows[1][0] != "t-grid":
            raise InputError(f"'{path}' is not a grid field file")
        s_grid = np.array([float(v) for v in rows[0][1:]])
        t_grid = np.array([float(v) for v in rows[1][1:]])
        values = np.array([[float(v) for v in row] for row in rows[2:]])
        return cls(s_grid, t_grid, values.reshape(s_grid.size, t_grid.size))


def sample_to_grid(f: AnalyticField, s_max: float, t_max: float, n_s: int, n_t: int) -> GridField:
    """Sample a bi-radial field at the nodes of a uniform (s, t) grid."""
    if not f.biradial:
        raise NonBiradial(f"field '{f.name}' is not bi-radial")
    if n_s < 2 or n_t < 2 or s_max <= 0 or t_max <= 0:
        raise InputError("grid needs at least two nodes per direction and positive extent")
    s_grid = np.linspace(0.0, s_max, n_s)
    t_grid = np.linspace(0.0, t_max, n_t)
    S, T = np.meshgrid(s_grid, t_grid, indexing="ij")
    return GridField(s_grid, t_grid, cast(BiradialField, f).values(S, T))
