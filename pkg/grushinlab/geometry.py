"""Module with the Baouendi-Grushin gauge geometry: dilations, gauge norm, angle function and horizontal derivatives.

Points may be batched: `Point.x` has shape (..., m) and `Point.y` shape (..., n), and every function here acts
element-wise over the leading batch dimensions.
"""
import logging
from dataclasses import dataclass
from typing import Callable, Dict, Optional, Sequence, Union

import numpy as np

_log = logging.getLogger(__name__)

EPS = float(np.finfo(float).eps)
# Below this angle value the bound |Zu| <= rho psi^(-1/2) |X u| is not evaluated.
PSI_FLOOR = 1e-10

Scalar = Union[float, np.ndarray]


class LabException(Exception):
    """Base class of all errors raised by the lab."""


class InputError(LabException, ValueError):
    """Exception raised for parameters outside of their admissible range."""


class DegeneratePoint(LabException):
    """Exception raised when a quantity without a limit is evaluated at the origin."""


@dataclass(frozen=True)
class SpaceParams:
    """Ambient dimensions and the degeneracy exponent of the Grushin vector fields."""

    m: int
    n: int
    alpha: float

    def __post_init__(self) -> None:
        if int(self.m) != self.m or self.m < 1:
            raise InputError(f"m must be a positive integer, got {self.m}")
        if int(self.n) != self.n or self.n < 1:
            raise InputError(f"n must be a positive integer, got {self.n}")
        if not 0.0 < self.alpha <= 1.0:
            raise InputError(f"alpha must lie in (0, 1], got {self.alpha}")

    @property
    def Q(self) -> float:
        """Homogeneous dimension."""
        return self.m + (self.alpha + 1.0) * self.n

    @property
    def dim(self) -> int:
        return self.m + self.n

    @property
    def kappa(self) -> float:
        """Exponent 2(alpha+1) for which rho**kappa is smooth."""
        return 2.0 * (self.alpha + 1.0)

    @property
    def hardy_ok(self) -> bool:
        return self.m > 2

    @property
    def rellich_ok(self) -> bool:
        return self.Q > 6

    @property
    def suc_ok(self) -> bool:
        return self.m > 4 and self.Q > 6

    def label(self) -> str:
        return f"m={self.m},n={self.n},alpha={self.alpha:g}"


@dataclass(frozen=True)
class Point:
    """A (possibly batched) point (x, y) of R^m x R^n."""

    x: np.ndarray
    y: np.ndarray

    @classmethod
    def of(cls, x: Sequence[float], y: Sequence[float]) -> "Point":
        x_arr = np.asarray(x, dtype=float)
        y_arr = np.asarray(y, dtype=float)
        if not (np.all(np.isfinite(x_arr)) and np.all(np.isfinite(y_arr))):
            raise InputError("point coordinates must be finite")
        return cls(x_arr, y_arr)

    @property
    def s(self) -> np.ndarray:
        """Euclidean norm |x|."""
        return np.linalg.norm(self.x, axis=-1)

    @property
    def t(self) -> np.ndarray:
        """Euclidean norm |y|."""
        return np.linalg.norm(self.y, axis=-1)

    @property
    def coords(self) -> np.ndarray:
        return np.concatenate([self.x, self.y], axis=-1)

    def shifted(self, index: int, step: Scalar) -> "Point":
        """Move coordinate `index` (x-block first) by `step`."""
        coords = self.coords.copy()
        coords[..., index] += step
        m = self.x.shape[-1]
        return Point(coords[..., :m], coords[..., m:])


@dataclass(frozen=True)
class Jet:
    """Value and Euclidean partial derivatives of a scalar field at a (batched) point."""

    value: np.ndarray
    grad: np.ndarray
    hess: Optional[np.ndarray] = None
    third: Optional[np.ndarray] = None


@dataclass(frozen=True)
class BiradialPartials:
    """Partials of f(a, b) with a = |x|^2, b = |y|^2, up to third order."""

    f: np.ndarray
    fa: np.ndarray
    fb: np.ndarray
    faa: np.ndarray
    fab: np.ndarray
    fbb: np.ndarray
    faaa: np.ndarray
    faab: np.ndarray
    fabb: np.ndarray
    fbbb: np.ndarray


@dataclass(frozen=True)
class Sample:
    """Geometric data at quadrature nodes; `point` is None on the bi-radial (s, t) path."""

    s: np.ndarray
    t: np.ndarray
    rho: np.ndarray
    psi: np.ndarray
    point: Optional[Point] = None

    @classmethod
    def from_st(cls, s: np.ndarray, t: np.ndarray, sp: SpaceParams) -> "Sample":
        rho = gauge_st(s, t, sp)
        return cls(s, t, rho, psi_st(s, rho, sp))

    @classmethod
    def from_point(cls, p: Point, sp: SpaceParams) -> "Sample":
        s, t = p.s, p.t
        rho = gauge_st(s, t, sp)
        return cls(s, t, rho, psi_st(s, rho, sp), p)


class JetSource:
    """Anything that can produce jets at points, such as the fields of the catalog."""

    name: str

    def jet(self, p: Point) -> Jet:  # pragma: no cover
        raise NotImplementedError


def gauge_st(s: Scalar, t: Scalar, sp: SpaceParams) -> np.ndarray:
    """Gauge norm expressed through s = |x| and t = |y|."""
    k = sp.kappa
    return np.power(np.power(s, k) + (sp.alpha + 1.0) ** 2 * np.square(t), 1.0 / k)


def gauge(p: Point, sp: SpaceParams) -> np.ndarray:
    """Gauge norm rho of the point."""
    return gauge_st(p.s, p.t, sp)


def psi_st(s: Scalar, rho: Scalar, sp: SpaceParams) -> np.ndarray:
    """Angle function from s = |x| and rho; raises at the origin."""
    rho_arr = np.asarray(rho, dtype=float)
    if np.any(rho_arr == 0.0):
        raise DegeneratePoint("the angle function is undefined at the origin")
    return np.power(np.asarray(s, dtype=float) / rho_arr, 2.0 * sp.alpha)


def psi(p: Point, sp: SpaceParams) -> np.ndarray:
    """Angle function |x|^(2 alpha) / rho^(2 alpha), equal to |X rho|^2."""
    return psi_st(p.s, gauge(p, sp), sp)


def dilate(p: Point, lam: Scalar, sp: SpaceParams) -> Point:
    """Anisotropic dilation (lam x, lam^(alpha+1) y); `lam` may be one value per batch entry."""
    lam_arr = np.asarray(lam, dtype=float)
    if np.any(lam_arr <= 0.0):
        raise InputError("dilation factor must be positive")
    lam_arr = lam_arr[..., None]
    return Point(p.x * lam_arr, p.y * np.power(lam_arr, sp.alpha + 1.0))


def _x_weight(p: Point, sp: SpaceParams) -> np.ndarray:
    return np.power(p.s, sp.alpha)[..., None]


def horizontal_gradient(j: Jet, p: Point, sp: SpaceParams) -> np.ndarray:
    """Return (X_1 f, ..., X_{m+n} f) with X_i = d/dx_i and X_{m+j} = |x|^alpha d/dy_j."""
    return np.concatenate([j.grad[..., : sp.m], _x_weight(p, sp) * j.grad[..., sp.m :]], axis=-1)


def laplace_X(j: Jet, p: Point, sp: SpaceParams) -> np.ndarray:
    """Baouendi-Grushin Laplacian Delta_x f + |x|^(2 alpha) Delta_y f."""
    if j.hess is None:
        raise InputError("the Laplacian needs a jet carrying a Hessian")
    diag = np.diagonal(j.hess, axis1=-2, axis2=-1)
    return np.sum(diag[..., : sp.m], axis=-1) + np.power(p.s, 2.0 * sp.alpha) * np.sum(diag[..., sp.m :], axis=-1)


def z_derivative(j: Jet, p: Point, sp: SpaceParams) -> np.ndarray:
    """Derivative along the dilation generator Z = x.grad_x + (alpha+1) y.grad_y."""
    return np.sum(p.x * j.grad[..., : sp.m], axis=-1) + (sp.alpha + 1.0) * np.sum(p.y * j.grad[..., sp.m :], axis=-1)


def horizontal_hessian(j: Jet, p: Point, sp: SpaceParams) -> np.ndarray:
    """Matrix of second horizontal derivatives X_a X_b f (not symmetric off the x-block)."""
    if j.hess is None:
        raise InputError("horizontal Hessian needs a jet carrying a Hessian")
    weights = np.concatenate([np.ones(p.x.shape), np.broadcast_to(_x_weight(p, sp), p.y.shape)], axis=-1)
    result = weights[..., :, None] * weights[..., None, :] * j.hess
    # X_i applied to |x|^alpha d/dy_j f differentiates the weight too
    with np.errstate(divide="ignore", invalid="ignore"):
        weight_grad = sp.alpha * np.power(p.s, sp.alpha - 2.0)[..., None] * p.x
    weight_grad = np.where(np.isfinite(weight_grad), weight_grad, 0.0)
    result[..., : sp.m, sp.m :] += weight_grad[..., :, None] * j.grad[..., None, sp.m :]
    return result


def laplace_gradient(j: Jet, p: Point, sp: SpaceParams) -> np.ndarray:
    """Euclidean gradient of Delta_X f, built from third derivatives."""
    if j.third is None or j.hess is None:
        raise InputError("the gradient of the Laplacian needs third derivatives")
    m = sp.m
    third_x = np.einsum("...ikk->...i", j.third[..., :, :m, :m])
    third_y = np.einsum("...ikk->...i", j.third[..., :, m:, m:])
    lap_y = np.sum(np.diagonal(j.hess, axis1=-2, axis2=-1)[..., m:], axis=-1)
    s = p.s
    result = third_x + np.power(s, 2.0 * sp.alpha)[..., None] * third_y
    with np.errstate(divide="ignore", invalid="ignore"):
        weight_grad = 2.0 * sp.alpha * np.power(s, 2.0 * sp.alpha - 2.0)[..., None] * p.x
    weight_grad = np.where(np.isfinite(weight_grad), weight_grad, 0.0)
    result[..., :m] += weight_grad * lap_y[..., None]
    return result


def biradial_jet(partials: BiradialPartials, p: Point, sp: SpaceParams, order: int = 2) -> Jet:
    """Chain rule from (a, b) partials to Euclidean partials in (x, y)."""
    z = p.coords
    group = np.array([0] * sp.m + [1] * sp.n)
    first = np.stack([partials.fa, partials.fb], axis=-1)
    second = np.stack(
        [np.stack([partials.faa, partials.fab], axis=-1), np.stack([partials.fab, partials.fbb], axis=-1)], axis=-2
    )
    first_g = first[..., group]
    grad = 2.0 * z * first_g
    if order < 2:
        return Jet(partials.f, grad)
    second_g = second[..., group[:, None], group[None, :]]
    eye = np.eye(sp.dim)
    hess = 2.0 * eye * first_g[..., None] + 4.0 * z[..., :, None] * z[..., None, :] * second_g
    if order < 3:
        return Jet(partials.f, grad, hess)
    third_ab = np.empty(partials.f.shape + (2, 2, 2))
    third_ab[..., 0, 0, 0] = partials.faaa
    third_ab[..., 1, 1, 1] = partials.fbbb
    for idx in [(0, 0, 1), (0, 1, 0), (1, 0, 0)]:
        third_ab[(...,) + idx] = partials.faab
    for idx in [(0, 1, 1), (1, 0, 1), (1, 1, 0)]:
        third_ab[(...,) + idx] = partials.fabb
    third_g = third_ab[..., group[:, None, None], group[None, :, None], group[None, None, :]]
    third = (
        4.0 * eye[:, :, None] * z[..., None, None, :] * second_g[..., :, None, :]
        + 4.0 * eye[:, None, :] * z[..., None, :, None] * second_g[..., :, :, None]
        + 4.0 * eye[None, :, :] * z[..., :, None, None] * second_g[..., :, :, None]
        + 8.0 * z[..., :, None, None] * z[..., None, :, None] * z[..., None, None, :] * third_g
    )
    return Jet(partials.f, grad, hess, third)


def _power_term(coef: float, base: np.ndarray, exponent: float) -> np.ndarray:
    """coef * base**exponent, exactly zero when coef vanishes."""
    if coef == 0.0:
        return np.zeros_like(base)
    with np.errstate(divide="ignore", invalid="ignore"):
        return coef * np.power(base, exponent)


def gauge_power_partials(phi: Sequence[np.ndarray], a: np.ndarray, b: np.ndarray, sp: SpaceParams) -> BiradialPartials:
    """(a, b)-partials of phi(P) with P = rho^(2(alpha+1)) = a^(alpha+1) + (alpha+1)^2 b.

    `phi` holds phi, phi', phi'' and phi''' evaluated at P.
    """
    al = sp.alpha
    pa = _power_term(al + 1.0, a, al)
    paa = _power_term((al + 1.0) * al, a, al - 1.0)
    paaa = _power_term((al + 1.0) * al * (al - 1.0), a, al - 2.0)
    pb = (al + 1.0) ** 2
    f0, f1, f2, f3 = phi
    return BiradialPartials(
        f=f0,
        fa=f1 * pa,
        fb=f1 * pb,
        faa=f2 * pa**2 + f1 * paa,
        fab=f2 * pa * pb,
        fbb=f2 * pb**2,
        faaa=f3 * pa**3 + 3.0 * f2 * pa * paa + f1 * paaa,
        faab=f3 * pa**2 * pb + f2 * paa * pb,
        fabb=f3 * pa * pb**2,
        fbbb=f3 * pb**3,
    )


def power_derivatives(base: np.ndarray, q: float, orders: int = 4) -> Sequence[np.ndarray]:
    """Derivatives of base**q of orders 0..orders-1; singular terms at base=0 are taken as zero."""
    result = []
    coef = 1.0
    for order in range(orders):
        term = _power_term(coef, base, q - order)
        result.append(np.where(np.isfinite(term), term, 0.0))
        coef *= q - order
    return result


def gauge_jet(p: Point, sp: SpaceParams) -> Jet:
    """Analytic jet (value, gradient, Hessian) of the gauge norm."""
    a, b = np.square(p.s), np.square(p.t)
    P = np.power(a, sp.alpha + 1.0) + (sp.alpha + 1.0) ** 2 * b
    if np.any(P == 0.0):
        raise DegeneratePoint("the gauge norm is not differentiable at the origin")
    return biradial_jet(gauge_power_partials(power_derivatives(P, 1.0 / sp.kappa), a, b, sp), p, sp)


def fd_jet(func: Callable[[Point], np.ndarray], p: Point, sp: SpaceParams) -> Jet:
    """Central finite-difference jet of a scalar callable (gradient step eps^(1/3), Hessian step eps^(1/4))."""
    coords = p.coords
    value = func(p)
    dim = sp.dim
    grad = np.empty(coords.shape)
    hess = np.empty(coords.shape + (dim,))
    scale = np.maximum(1.0, np.abs(coords))
    h1 = EPS ** (1.0 / 3.0) * scale
    h2 = EPS**0.25 * scale
    for i in range(dim):
        grad[..., i] = (func(p.shifted(i, h1[..., i])) - func(p.shifted(i, -h1[..., i]))) / (2.0 * h1[..., i])
        for k in range(i, dim):
            hi, hk = h2[..., i], h2[..., k]
            if i == k:
                second = (func(p.shifted(i, hi)) - 2.0 * value + func(p.shifted(i, -hi))) / hi**2
            else:
                pp = p.shifted(i, hi).shifted(k, hk)
                pm = p.shifted(i, hi).shifted(k, -hk)
                mp = p.shifted(i, -hi).shifted(k, hk)
                mm = p.shifted(i, -hi).shifted(k, -hk)
                second = (func(pp) - func(pm) - func(mp) + func(mm)) / (4.0 * hi * hk)
            hess[..., i, k] = second
            hess[..., k, i] = second
    return Jet(value, grad, hess)


def random_points(
    sp: SpaceParams, count: int, seed: int, r_min: float = 0.5, r_max: float = 2.0
) -> Point:
    """Random points with gauge norm log-uniform in [r_min, r_max]."""
    rng = np.random.default_rng(seed)
    raw = Point(rng.standard_normal((count, sp.m)), rng.standard_normal((count, sp.n)))
    target = np.exp(rng.uniform(np.log(r_min), np.log(r_max), count))
    return dilate(raw, target / gauge(raw, sp), sp)


@dataclass(frozen=True)
class IdentityResiduals:
    """Per-point absolute residuals of the gauge identities, and the slack of the Z-bound."""

    laplace_rho: np.ndarray
    z_rho: np.ndarray
    gradient_pairing: np.ndarray
    angle: np.ndarray
    commutator: np.ndarray
    commutator_as_z: np.ndarray
    z_bound_slack: np.ndarray

    def worst(self) -> Dict[str, float]:
        """Largest residual of every identity, and the smallest slack of the bound."""
        result = {
            name: float(np.max(np.abs(getattr(self, name))))
            for name in ["laplace_rho", "z_rho", "gradient_pairing", "angle", "commutator", "commutator_as_z"]
        }
        result["z_bound_slack"] = float(np.min(self.z_bound_slack))
        return result


def _x_derivative(func: Callable[[Point], np.ndarray], p: Point, index: int, sp: SpaceParams) -> np.ndarray:
    """Apply the vector field X_index to `func` by a central difference."""
    coord = p.coords[..., index]
    h = EPS ** (1.0 / 3.0) * np.maximum(1.0, np.abs(coord))
    diff = (func(p.shifted(index, h)) - func(p.shifted(index, -h))) / (2.0 * h)
    if index >= sp.m:
        diff = diff * np.power(p.s, sp.alpha)
    return diff


def _z_along_dilation(func: Callable[[Point], np.ndarray], p: Point, sp: SpaceParams) -> np.ndarray:
    """Apply Z to `func` as the derivative of func(dilate(p, lam)) at lam = 1."""
    h = EPS ** (1.0 / 3.0)
    return (func(dilate(p, 1.0 + h, sp)) - func(dilate(p, 1.0 - h, sp))) / (2.0 * h)


def identity_residuals(p: Point, sp: SpaceParams, test: JetSource) -> IdentityResiduals:
    """Evaluate the gauge identities and the commutator relation [X_i, Z] = X_i at the given points."""
    rho_jet = gauge_jet(p, sp)
    rho = rho_jet.value
    ang = psi(p, sp)
    rho_x = horizontal_gradient(rho_jet, p, sp)
    tj = test.jet(p)
    test_x = horizontal_gradient(tj, p, sp)
    test_z = z_derivative(tj, p, sp)

    def z_test(q: Point) -> np.ndarray:
        return z_derivative(test.jet(q), q, sp)

    commutator = np.zeros(rho.shape)
    commutator_as_z = np.zeros(rho.shape)
    for i in range(sp.dim):

        def x_test(q: Point, i: int = i) -> np.ndarray:
            return horizontal_gradient(test.jet(q), q, sp)[..., i]

        bracket = _x_derivative(z_test, p, i, sp) - _z_along_dilation(x_test, p, sp)
        commutator = np.maximum(commutator, np.abs(bracket - test_x[..., i]))
        commutator_as_z = np.maximum(commutator_as_z, np.abs(bracket - test_z))

    with np.errstate(divide="ignore"):
        bound = rho / np.sqrt(ang) * np.linalg.norm(test_x, axis=-1)
    slack = np.where(ang >= PSI_FLOOR, bound - np.abs(test_z), np.inf)
    _log.debug("Identity residuals evaluated at %d points for %s", rho.size, test.name)
    return IdentityResiduals(
        laplace_rho=laplace_X(rho_jet, p, sp) - (sp.Q - 1.0) * ang / rho,
        z_rho=z_derivative(rho_jet, p, sp) - rho,
        gradient_pairing=np.sum(test_x * rho_x, axis=-1) - test_z * ang / rho,
        angle=np.sum(rho_x**2, axis=-1) - ang,
        commutator=commutator,
        commutator_as_z=commutator_as_z,
        z_bound_slack=slack,
    )
