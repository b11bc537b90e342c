"""Finite-difference solver for Delta_X u = w + G, Delta_X w = V u + F under bi-radial symmetry.

In s = |x|, t = |y| the operator reads

    L[u] = u_ss + (m-1)/s u_s + s^(2 alpha) (u_tt + (n-1)/t u_t)

on the rectangle [0, S] x [0, T]. Even reflection gives the axis rules m u_ss at s = 0 and
n s^(2 alpha) u_tt at t = 0; the outer edges s = S and t = T carry Dirichlet data.
"""
import math
import logging
from dataclasses import dataclass
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy import sparse
from scipy.integrate import trapezoid
from scipy.sparse.linalg import norm as sparse_norm, splu

from .fields import (
    AnalyticField,
    BiradialField,
    BiradialPolynomial,
    FieldData,
    GridField,
    Potential,
    biradial_polynomial,
)
from .geometry import InputError, Jet, LabException, Point, Sample, SpaceParams, gauge_st
from .quadrature import sphere_area

_log = logging.getLogger(__name__)

SMOOTH = "smooth"
EXCISION = "excision"

MIN_NODES = 16
RESIDUAL_TARGET = 1e-10

# (s, t) -> values, for boundary data and sources
GridFunction = Callable[[np.ndarray, np.ndarray], np.ndarray]


class SolveFailure(LabException):
    """Exception raised when the solution misses the residual target."""


class SingularSystem(LabException):
    """Exception raised when the discrete system cannot be factorized."""


class OutOfDomain(LabException):
    """Exception raised when a lifted grid field is queried outside its rectangle."""


@dataclass(frozen=True)
class GridSpec:
    s_max: float
    t_max: float
    n_s: int
    n_t: int

    def __post_init__(self) -> None:
        if self.n_s < MIN_NODES or self.n_t < MIN_NODES:
            raise InputError(f"grids need at least {MIN_NODES} nodes per direction")
        if not (self.s_max > 0 and self.t_max > 0):
            raise InputError("grid extent must be positive")

    @property
    def h_s(self) -> float:
        return self.s_max / (self.n_s - 1)

    @property
    def h_t(self) -> float:
        return self.t_max / (self.n_t - 1)

    @property
    def size(self) -> int:
        return self.n_s * self.n_t

    def axes(self) -> Tuple[np.ndarray, np.ndarray]:
        return np.linspace(0.0, self.s_max, self.n_s), np.linspace(0.0, self.t_max, self.n_t)

    def mesh(self) -> Tuple[np.ndarray, np.ndarray]:
        s, t = self.axes()
        S, T = np.meshgrid(s, t, indexing="ij")
        return S, T

    def refined(self) -> "GridSpec":
        """Grid with halved spacing (2n - 1 nodes)."""
        return GridSpec(self.s_max, self.t_max, 2 * self.n_s - 1, 2 * self.n_t - 1)

    def coarsened(self) -> "GridSpec":
        """Grid with doubled spacing ((n + 1) / 2 nodes), exact for odd node counts."""
        return GridSpec(self.s_max, self.t_max, (self.n_s + 1) // 2, (self.n_t + 1) // 2)

    def inscribed_radius(self, sp: SpaceParams) -> float:
        """Largest gauge radius whose ball fits in the rectangle."""
        return min(self.s_max, ((sp.alpha + 1.0) * self.t_max) ** (1.0 / (sp.alpha + 1.0)))


@dataclass
class BiradialOperator:
    grid: GridSpec
    sp: SpaceParams
    matrix: sparse.csr_matrix
    # Flat mask of nodes carrying the stencil; the others are outer Dirichlet nodes
    interior: np.ndarray

    def apply(self, values: np.ndarray) -> np.ndarray:
        """L applied to nodal values of shape (n_s, n_t); NaN on the Dirichlet edges."""
        result = self.matrix @ np.ravel(values)
        return np.where(self.interior, result, np.nan).reshape(self.grid.n_s, self.grid.n_t)


def assemble(grid: GridSpec, sp: SpaceParams) -> BiradialOperator:
    """Assemble the second order stencil; node (i, j) has index i * n_t + j."""
    n_s, n_t = grid.n_s, grid.n_t
    hs2, ht2 = grid.h_s**2, grid.h_t**2
    I, J = np.meshgrid(np.arange(n_s), np.arange(n_t), indexing="ij")
    S, T = I * grid.h_s, J * grid.h_t
    interior = (I < n_s - 1) & (J < n_t - 1)
    weight = np.power(S, 2.0 * sp.alpha)
    rows: List[np.ndarray] = []
    cols: List[np.ndarray] = []
    vals: List[np.ndarray] = []

    def add(mask: np.ndarray, di: int, dj: int, coef: np.ndarray) -> None:
        mask = mask & interior
        rows.append((I * n_t + J)[mask])
        cols.append(((I + di) * n_t + (J + dj))[mask])
        vals.append(np.broadcast_to(coef, I.shape)[mask])

    on_s_axis = I == 0
    on_t_axis = J == 0
    with np.errstate(divide="ignore", invalid="ignore"):
        drift_s = np.where(on_s_axis, 0.0, (sp.m - 1) / (2.0 * np.where(on_s_axis, 1.0, S) * grid.h_s))
        drift_t = np.where(on_t_axis, 0.0, (sp.n - 1) / (2.0 * np.where(on_t_axis, 1.0, T) * grid.h_t))

    # x-part
    add(on_s_axis, 1, 0, 2.0 * sp.m / hs2)
    add(on_s_axis, 0, 0, -2.0 * sp.m / hs2)
    add(~on_s_axis, 1, 0, 1.0 / hs2 + drift_s)
    add(~on_s_axis, -1, 0, 1.0 / hs2 - drift_s)
    add(~on_s_axis, 0, 0, -2.0 / hs2)
    # y-part, degenerate on s = 0
    add(on_t_axis, 0, 1, weight * 2.0 * sp.n / ht2)
    add(on_t_axis, 0, 0, -weight * 2.0 * sp.n / ht2)
    add(~on_t_axis, 0, 1, weight * (1.0 / ht2 + drift_t))
    add(~on_t_axis, 0, -1, weight * (1.0 / ht2 - drift_t))
    add(~on_t_axis, 0, 0, -2.0 * weight / ht2)

    matrix = sparse.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(grid.size, grid.size)
    ).tocsr()
    matrix.sum_duplicates()
    _log.debug("Assembled operator on %dx%d grid with %d nonzeros", n_s, n_t, matrix.nnz)
    return BiradialOperator(grid, sp, matrix, np.ravel(interior))


def default_epsilon(grid: GridSpec, cells: float = 2.0) -> float:
    """Regularization radius of the potential, a number of grid cells."""
    return cells * max(grid.h_s, grid.h_t)


def _zero(s: np.ndarray, t: np.ndarray) -> np.ndarray:
    return np.zeros(np.broadcast(s, t).shape)


@dataclass(frozen=True)
class BVPSpec:
    """Coupled boundary value problem on the rectangle of `grid`."""

    grid: GridSpec
    sp: SpaceParams
    u_data: GridFunction
    w_data: GridFunction
    potential: Potential = Potential()
    source_f: GridFunction = _zero
    source_g: GridFunction = _zero
    regularization: str = SMOOTH
    rho_min: float = 0.0

    def __post_init__(self) -> None:
        if self.regularization not in (SMOOTH, EXCISION):
            raise InputError(f"unknown regularization '{self.regularization}'")
        if self.regularization == EXCISION and not self.rho_min > 0:
            raise InputError("excision needs rho_min > 0")
        if self.regularization == SMOOTH and self.potential.c0 != 0.0 and self.potential.epsilon <= 0.0:
            raise InputError("a singular potential needs epsilon > 0 or an excised origin")


@dataclass(frozen=True)
class SolveReport:
    residual: float
    unknowns: int
    n_s: int
    n_t: int
    c0: float
    epsilon: float
    regularization: str
    rho_min: float
    dirichlet_nodes: int

    def as_dict(self) -> Dict[str, Any]:
        return dict(self.__dict__)


@dataclass(frozen=True)
class Solution:
    u: GridField
    w: GridField
    report: SolveReport


def _dirichlet_mask(spec: BVPSpec, op: BiradialOperator) -> np.ndarray:
    S, T = spec.grid.mesh()
    mask = ~op.interior
    if spec.regularization == EXCISION:
        mask = mask | np.ravel(gauge_st(S, T, spec.sp) < spec.rho_min)
    return mask


def _potential_values(spec: BVPSpec, dirichlet: np.ndarray) -> np.ndarray:
    S, T = spec.grid.mesh()
    rho = np.ravel(gauge_st(S, T, spec.sp))
    V = np.zeros(rho.shape)
    if spec.potential.c0 != 0.0:
        V[~dirichlet] = spec.potential.at_rho(rho[~dirichlet], spec.sp)
    return V


def solve(spec: BVPSpec, op: Optional[BiradialOperator] = None, residual_target: float = RESIDUAL_TARGET) -> Solution:
    """Monolithic sparse solve of [L, -Id; -V, L] (u, w) = (G, F) with Dirichlet rows."""
    op = op or assemble(spec.grid, spec.sp)
    if op.grid != spec.grid:
        raise InputError("operator and problem use different grids")
    S, T = spec.grid.mesh()
    dirichlet = _dirichlet_mask(spec, op)
    free = ~dirichlet
    free_diag = sparse.diags(free.astype(float))
    fixed_diag = sparse.diags(dirichlet.astype(float))
    V = _potential_values(spec, dirichlet)

    L = free_diag @ op.matrix
    A = sparse.bmat(
        [[L + fixed_diag, -free_diag], [-sparse.diags(V * free), L + fixed_diag]],
        format="csr",
    )
    b = np.concatenate(
        [
            np.where(free, np.ravel(np.broadcast_to(spec.source_g(S, T), S.shape)), np.ravel(spec.u_data(S, T))),
            np.where(free, np.ravel(np.broadcast_to(spec.source_f(S, T), S.shape)), np.ravel(spec.w_data(S, T))),
        ]
    )
    if not np.all(np.isfinite(b)):
        raise InputError("boundary data and sources must be finite on the grid")

    # Row equilibration
    scale = 1.0 / np.maximum(np.asarray(abs(A).max(axis=1).todense()).ravel(), np.finfo(float).tiny)
    A_eq = sparse.diags(scale) @ A
    try:
        lu = splu(A_eq.tocsc())
    except RuntimeError as exc:
        raise SingularSystem(f"factorization failed on a {spec.grid.n_s}x{spec.grid.n_t} grid: {exc}") from exc
    x = lu.solve(scale * b)
    x += lu.solve(scale * (b - A @ x))

    residual = float(np.linalg.norm(b - A @ x, np.inf))
    norm_scale = float(sparse_norm(A, np.inf) * np.linalg.norm(x, np.inf) + np.linalg.norm(b, np.inf))
    relative = residual / norm_scale if norm_scale > 0 else 0.0
    if not np.all(np.isfinite(x)):
        raise SingularSystem("solution contains non-finite values")
    report = SolveReport(
        residual=relative,
        unknowns=2 * spec.grid.size,
        n_s=spec.grid.n_s,
        n_t=spec.grid.n_t,
        c0=spec.potential.c0,
        epsilon=spec.potential.epsilon,
        regularization=spec.regularization,
        rho_min=spec.rho_min,
        dirichlet_nodes=int(np.sum(dirichlet)),
    )
    _log.debug("Solved %d unknowns, relative residual %.3g", report.unknowns, relative)
    if relative >= residual_target:
        raise SolveFailure(f"relative residual {relative:.3g} misses the target {residual_target:g}")
    s_axis, t_axis = spec.grid.axes()
    n = spec.grid.size
    shape = (spec.grid.n_s, spec.grid.n_t)
    return Solution(
        GridField(s_axis, t_axis, x[:n].reshape(shape)), GridField(s_axis, t_axis, x[n:].reshape(shape)), report
    )


class LiftedField(AnalyticField):
    """A grid field read as a bi-radial field through its bicubic spline."""

    biradial = True

    def __init__(self, gf: GridField, sp: SpaceParams, name: str = "grid"):
        super().__init__(name, sp, 2.0)
        self.grid_field = gf
        self._spline = gf.spline()
        self._limits = (float(gf.s_grid[-1]), float(gf.t_grid[-1]))

    def _check(self, s: np.ndarray, t: np.ndarray) -> None:
        s_max, t_max = self._limits
        if np.any(s > s_max * (1 + 1e-12)) or np.any(t > t_max * (1 + 1e-12)):
            raise OutOfDomain(f"field '{self.name}' is only known on [0, {s_max:g}] x [0, {t_max:g}]")

    def _eval(self, s: np.ndarray, t: np.ndarray, ds: int = 0, dt: int = 0) -> np.ndarray:
        s, t = np.broadcast_arrays(np.asarray(s, dtype=float), np.asarray(t, dtype=float))
        return np.asarray(self._spline.ev(s.ravel(), t.ravel(), dx=ds, dy=dt)).reshape(s.shape)

    def values(self, s: np.ndarray, t: np.ndarray) -> np.ndarray:
        self._check(np.asarray(s), np.asarray(t))
        return self._eval(s, t)

    def jet(self, p: Point) -> Jet:
        s, t = p.s, p.t
        self._check(s, t)
        with np.errstate(divide="ignore", invalid="ignore"):
            gx = np.where(s > 0, self._eval(s, t, ds=1) / s, 0.0)[..., None] * p.x
            gy = np.where(t > 0, self._eval(s, t, dt=1) / t, 0.0)[..., None] * p.y
        return Jet(self._eval(s, t), np.concatenate([gx, gy], axis=-1))

    def laplacian_values(self, s: np.ndarray, t: np.ndarray) -> np.ndarray:
        return self._data(s, t).lap

    def exact_laplace(self, p: Point) -> Optional[np.ndarray]:
        return self.laplacian_values(p.s, p.t)

    def _data(self, s: np.ndarray, t: np.ndarray) -> FieldData:
        sp = self.sp
        self._check(s, t)
        f_s, f_t = self._eval(s, t, ds=1), self._eval(s, t, dt=1)
        f_ss, f_tt = self._eval(s, t, ds=2), self._eval(s, t, dt=2)
        with np.errstate(divide="ignore", invalid="ignore"):
            radial_s = np.where(s > 0, f_s / s, f_ss)
            radial_t = np.where(t > 0, f_t / t, f_tt)
        weight = np.power(s, 2.0 * sp.alpha)
        return FieldData(
            u=self._eval(s, t),
            grad_sq=f_s**2 + weight * f_t**2,
            lap=f_ss + (sp.m - 1) * radial_s + weight * (f_tt + (sp.n - 1) * radial_t),
            z=s * f_s + (sp.alpha + 1.0) * t * f_t,
        )

    def data(self, sample: Sample) -> FieldData:
        return self._data(np.asarray(sample.s), np.asarray(sample.t))


def lift_to_ambient(gf: GridField, sp: SpaceParams, name: str = "grid") -> LiftedField:
    """Evaluator of a bi-radial grid field usable wherever catalog fields are."""
    if gf.symmetry != "even-even":
        raise InputError(f"cannot lift a grid field with symmetry '{gf.symmetry}'")
    return LiftedField(gf, sp, name)


def _field_function(f: BiradialField) -> GridFunction:
    return lambda s, t: f.values(s, t)


def _laplacian_function(f: BiradialField) -> GridFunction:
    return lambda s, t: f.laplacian_values(s, t)


def field_bvp(
    grid: GridSpec,
    u_field: BiradialField,
    potential: Potential = Potential(),
    regularization: str = SMOOTH,
    rho_min: float = 0.0,
) -> BVPSpec:
    """Problem with Dirichlet data u = f and w = Delta_X f taken from a bi-radial field."""
    return BVPSpec(
        grid,
        u_field.sp,
        _field_function(u_field),
        _laplacian_function(u_field),
        potential,
        regularization=regularization,
        rho_min=rho_min,
    )


DEFAULT_MMS_U = {(0, 0): 1.0, (2, 0): 0.5, (1, 1): 1.0, (0, 2): -0.25}
DEFAULT_MMS_W = {(0, 0): 2.0, (1, 0): 1.0, (1, 1): -0.5, (0, 2): 0.3}


def mms_spec(
    grid: GridSpec,
    sp: SpaceParams,
    potential: Potential = Potential(),
    exact_u: Optional[BiradialPolynomial] = None,
    exact_w: Optional[BiradialPolynomial] = None,
) -> Tuple[BVPSpec, BiradialPolynomial, BiradialPolynomial]:
    """Manufactured problem: sources G = Delta_X u* - w* and F = Delta_X w* - V u*."""
    u_star = exact_u or biradial_polynomial(DEFAULT_MMS_U, sp, name="mms_u")
    w_star = exact_w or biradial_polynomial(DEFAULT_MMS_W, sp, name="mms_w")
    lap_u, lap_w = u_star.laplacian(), w_star.laplacian()

    def source_g(s: np.ndarray, t: np.ndarray) -> np.ndarray:
        return lap_u.values(s, t) - w_star.values(s, t)

    def source_f(s: np.ndarray, t: np.ndarray) -> np.ndarray:
        if potential.c0 == 0.0:
            return lap_w.values(s, t)
        return lap_w.values(s, t) - potential.at_rho(gauge_st(s, t, sp), sp) * u_star.values(s, t)

    spec = BVPSpec(
        grid,
        sp,
        _field_function(u_star),
        _field_function(w_star),
        potential,
        source_f=source_f,
        source_g=source_g,
    )
    return spec, u_star, w_star


@dataclass(frozen=True)
class ConvergenceRow:
    n_s: int
    n_t: int
    h: float
    l2_error: float
    max_error: float
    l2_rate: float
    max_rate: float
    residual: float


CONVERGENCE_COLUMNS = ["n_s", "n_t", "h", "l2_error", "max_error", "l2_rate", "max_rate", "residual"]


def l2_error(solution: GridField, exact: BiradialField, sp: SpaceParams) -> float:
    """L2 norm of the error over the rectangle, with the measure of the ambient space."""
    S, T = np.meshgrid(solution.s_grid, solution.t_grid, indexing="ij")
    err = solution.values - exact.values(S, T)
    density = sphere_area(sp.m) * sphere_area(sp.n) * np.power(S, sp.m - 1) * np.power(T, sp.n - 1)
    inner = trapezoid(err**2 * density, solution.t_grid, axis=1)
    return math.sqrt(float(trapezoid(inner, solution.s_grid)))


def convergence_study(
    make_spec: Callable[[GridSpec], Tuple[BVPSpec, BiradialField, BiradialField]],
    grids: Sequence[GridSpec],
    residual_target: float = RESIDUAL_TARGET,
) -> List[ConvergenceRow]:
    """Solve on each grid and compare with the manufactured solution; rates against the previous grid."""
    rows: List[ConvergenceRow] = []
    for grid in grids:
        spec, exact_u, _ = make_spec(grid)
        solution = solve(spec, residual_target=residual_target)
        S, T = grid.mesh()
        e_l2 = l2_error(solution.u, exact_u, spec.sp)
        e_max = float(np.max(np.abs(solution.u.values - exact_u.values(S, T))))
        h = max(grid.h_s, grid.h_t)
        l2_rate = max_rate = math.nan
        if rows:
            ratio = rows[-1].h / h
            l2_rate = math.log(rows[-1].l2_error / e_l2) / math.log(ratio)
            max_rate = math.log(rows[-1].max_error / e_max) / math.log(ratio)
        rows.append(ConvergenceRow(grid.n_s, grid.n_t, h, e_l2, e_max, l2_rate, max_rate, solution.report.residual))
        _log.info("Grid %dx%d: L2 error %.3e, rate %.3f", grid.n_s, grid.n_t, e_l2, l2_rate)
    return rows


@dataclass
class SolveRun:
    """Solution together with the lifted fields and the potential used by the frequency pipeline."""

    solution: Solution
    u: LiftedField
    w: LiftedField
    potential: Potential


def solve_and_lift(spec: BVPSpec, residual_target: float = RESIDUAL_TARGET) -> SolveRun:
    solution = solve(spec, residual_target=residual_target)
    return SolveRun(
        solution,
        lift_to_ambient(solution.u, spec.sp, "solution_u"),
        lift_to_ambient(solution.w, spec.sp, "solution_w"),
        spec.potential,
    )
