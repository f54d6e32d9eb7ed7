"""Regularized p-Laplace Dirichlet problem and the estimates built on it.

The discrete energy averages ``G_eps`` over the ``2^N`` corner gradients of
every grid cell. That keeps the scheme free of checkerboard modes, reduces
to plain forward differences in one dimension and to the five-point
Laplacian for ``p = 2``. Unknowns are nodes inside the ball; the remaining
nodes carry the Dirichlet data (see :class:`DirichletProblem`).
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .fracnorm import SeminormParams, slobodeckii_seminorm
from .grid import (MollifierSpec, Region, ScalarField, VectorField, corner_gradient_operators,
                   gradient, mollify)
from .report import EstimateReport, implied_constant


@dataclass(frozen=True)
class EnergyParams:
    p: float
    eps: float = 1e-8

    def __post_init__(self):
        if not self.p > 2:
            raise ValueError(f"p must be > 2, got {self.p}")
        if self.eps < 0:
            raise ValueError("eps must be >= 0")

    @property
    def conjugate(self) -> float:
        return self.p / (self.p - 1)


def g_eps(z2: np.ndarray, params: EnergyParams) -> np.ndarray:
    """``G_eps`` as a function of ``|z|^2``."""
    return (params.eps + z2) ** (params.p / 2) / params.p


def v_map(z: np.ndarray, p: float) -> np.ndarray:
    """``V(z) = |z|^((p-2)/2) z`` along the leading axis of ``z``."""
    mag = np.sqrt(np.sum(z ** 2, axis=0))
    return mag ** ((p - 2) / 2) * z


@dataclass(frozen=True, eq=False)
class DirichletProblem:
    """Regularized problem on a ball with data ``f`` and boundary values ``g``.

    Unknowns are the nodes more than half a spacing inside the sphere, so the
    layer of Dirichlet nodes (which hold ``g``) is centred on the sphere
    rather than lying outside it. The energy runs over every cell with an
    unknown corner.
    """

    ball: Region
    f: ScalarField
    g: ScalarField
    params: EnergyParams
    mollify_radius: float | None = None

    def __post_init__(self):
        if self.f.grid != self.g.grid:
            raise ValueError("f and g must share a grid")
        if self.ball.kind != "ball":
            raise ValueError("the Dirichlet domain must be a ball")
        if not self.ball.inside_box(self.f.grid):
            raise ValueError("ball must lie inside the grid box")

    @property
    def grid(self):
        return self.f.grid

    @cached_property
    def rho(self) -> float:
        return 3 * self.grid.spacing if self.mollify_radius is None else self.mollify_radius

    @cached_property
    def f_eps(self) -> ScalarField:
        if self.rho <= 0:
            return self.f
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            return mollify(self.f, MollifierSpec(self.rho))

    @cached_property
    def free(self) -> np.ndarray:
        """Flat boolean mask of the unknown nodes."""
        inner = Region.ball(self.ball.radius - 0.5 * self.grid.spacing, self.ball.center)
        return inner.contains(self.grid.coords(), strict=True).ravel()

    @cached_property
    def active_cells(self) -> np.ndarray:
        """Flat mask of cells with at least one unknown corner."""
        free = self.free.reshape(self.grid.shape)
        dim = self.grid.dimension
        n = self.grid.nodes_per_axis
        touch = np.zeros(self.grid.cell_shape, bool)
        for corner in range(2 ** dim):
            bits = [(corner >> (dim - 1 - j)) & 1 for j in range(dim)]
            touch |= free[tuple(slice(b, b + n - 1) for b in bits)]
        return touch.ravel()

    @cached_property
    def operators(self) -> list[list[sp.csr_matrix]]:
        """Corner gradient operators restricted to the active cells."""
        rows = self.active_cells
        return [[d[rows] for d in corner] for corner in corner_gradient_operators(self.grid)]

    def lift_values(self, x: np.ndarray) -> np.ndarray:
        u = self.g.values.ravel().copy()
        u[self.free] = x
        return u


@dataclass
class SolveReport:
    u_eps: ScalarField
    iterations: int
    residual_norm: float
    energy: float
    converged: bool
    energy_trace: list[float] = field(default_factory=list)
    eps_schedule: list[float] = field(default_factory=list)
    gradient_fallbacks: int = 0
    tolerance: float = float("nan")


def _corner_grads(u_flat: np.ndarray, prob: DirichletProblem) -> list[np.ndarray]:
    return [np.stack([d @ u_flat for d in corner]) for corner in prob.operators]


def _energy_x(x, prob: DirichletProblem, params: EnergyParams) -> float:
    u_flat = prob.lift_values(x)
    e = 0.0
    for z in _corner_grads(u_flat, prob):
        e += float(np.sum(g_eps(np.sum(z ** 2, axis=0), params)))
    e /= 2 ** prob.grid.dimension
    e -= float(np.sum(prob.f_eps.values.ravel()[prob.free] * x))
    return e * prob.grid.cell_volume


def _gradient_x(x, prob: DirichletProblem, params: EnergyParams) -> np.ndarray:
    """``dE/dx`` divided by the cell volume."""
    u_flat = prob.lift_values(x)
    weight = 1.0 / 2 ** prob.grid.dimension
    full = np.zeros_like(u_flat)
    for corner, z in zip(prob.operators, _corner_grads(u_flat, prob)):
        a = weight * (params.eps + np.sum(z ** 2, axis=0)) ** (params.p / 2 - 1)
        for d, zj in zip(corner, z):
            full += d.T @ (a * zj)
    return full[prob.free] - prob.f_eps.values.ravel()[prob.free]


def _hessian_x(x, prob: DirichletProblem, params: EnergyParams) -> sp.csr_matrix:
    weight = 1.0 / 2 ** prob.grid.dimension
    p = params.p
    u_flat = prob.lift_values(x)
    hess = None
    for corner, z in zip(prob.operators, _corner_grads(u_flat, prob)):
        s = params.eps + np.sum(z ** 2, axis=0)
        a = s ** (p / 2 - 1)
        b = (p - 2) * s ** (p / 2 - 2)
        ds = [d[:, prob.free] for d in corner]
        for j, dj in enumerate(ds):
            for k, dk in enumerate(ds):
                coef = b * z[j] * z[k] + (a if j == k else 0.0)
                term = dj.T @ sp.diags(weight * coef) @ dk
                hess = term if hess is None else hess + term
    return sp.csr_matrix(hess)


def energy(u: ScalarField, prob: DirichletProblem) -> float:
    """Discrete energy ``sum G_eps(grad u) vol - sum f_eps u vol`` over the ball.

    Only the values of ``u`` at the unknowns matter; the other nodes follow
    hold ``g``.
    """
    return _energy_x(u.values.ravel()[prob.free], prob, prob.params)


def residual(u: ScalarField, prob: DirichletProblem) -> ScalarField:
    """Gradient of the discrete energy per unit cell volume, zero off the unknowns."""
    out = np.zeros(u.grid.size)
    out[prob.free] = _gradient_x(u.values.ravel()[prob.free], prob, prob.params)
    return ScalarField(u.grid, out.reshape(u.grid.shape))


def _newton(x, prob, params, tol, max_iter, damping, trace, counters):
    vol = prob.grid.cell_volume
    r = _gradient_x(x, prob, params)
    e = _energy_x(x, prob, params)
    its = 0
    while r.size and np.max(np.abs(r)) > tol and its < max_iter:
        its += 1
        rhs = -r
        step = None
        try:
            hess = _hessian_x(x, prob, params)
            with warnings.catch_warnings():
                warnings.simplefilter("error", spla.MatrixRankWarning)
                step = spla.spsolve(hess.tocsc(), rhs)
            if not np.all(np.isfinite(step)) or step @ rhs <= 0:
                step = None
        except (RuntimeError, spla.MatrixRankWarning, ValueError):
            step = None
        if step is None:
            counters["fallback"] += 1
            step = rhs / max(np.abs(rhs).max(), 1e-300) * prob.grid.spacing
        slope = -float(step @ rhs) * vol
        lam = damping
        accepted = False
        while lam > 1e-12:
            trial = x + lam * step
            e_new = _energy_x(trial, prob, params)
            if e_new <= e + 1e-4 * lam * slope or abs(e_new - e) <= 1e-15 * max(1.0, abs(e)):
                accepted = True
                break
            lam *= 0.5
        if not accepted:
            break
        x, e = trial, e_new
        trace.append(e_new)
        r = _gradient_x(x, prob, params)
    rnorm = float(np.max(np.abs(r))) if r.size else 0.0
    return x, its, rnorm, e


def solve_dirichlet(prob: DirichletProblem, tol: float = 1e-8, max_iter: int = 200,
                    damping: float = 1.0, init: ScalarField | np.ndarray | None = None,
                    continuation: bool = True) -> SolveReport:
    """Damped Newton on the discrete energy with optional eps-continuation.

    The iterate starts from ``g`` (so ``g`` itself is returned when it already
    solves the problem) or from ``init`` on the unknowns. With continuation,
    a short ladder of larger ``eps`` values provides warm starts; the final
    solve always uses ``prob.params.eps``. ``residual_norm`` is the max-norm
    of :func:`residual`.
    """
    params = prob.params
    if not params.eps > 0:
        raise ValueError("solve_dirichlet needs eps > 0")
    if not tol > 0:
        raise ValueError("tolerance must be positive")
    start = prob.g.values if init is None else (
        init.values if isinstance(init, ScalarField) else np.asarray(init))
    x = np.array(start, dtype=float).ravel()[prob.free]
    schedule = [params.eps]
    r0 = _gradient_x(x, prob, params)
    if continuation and r0.size and np.max(np.abs(r0)) > tol:
        e0 = 1.0
        while e0 > params.eps * 100:
            schedule.insert(-1, e0)
            e0 *= 1e-2
    trace = [_energy_x(x, prob, params)]
    counters = {"fallback": 0}
    total = 0
    for k, eps in enumerate(schedule):
        stage = EnergyParams(params.p, eps)
        last = k == len(schedule) - 1
        stage_tol = tol if last else max(tol, 1e-6)
        stage_trace: list[float] = []
        x, its, rnorm, e = _newton(x, prob, stage, stage_tol, max_iter, damping,
                                   stage_trace, counters)
        total += its
        if last:
            trace.extend(stage_trace)
    u = ScalarField(prob.grid, prob.lift_values(x).reshape(prob.grid.shape))
    return SolveReport(u, total, rnorm, e, rnorm <= tol, trace, schedule,
                       counters["fallback"], tol)


def v_field(u: ScalarField, p: float) -> VectorField:
    """Cellwise ``V(grad u)`` with ``V(0) = 0``."""
    if not p > 2:
        raise ValueError(f"p must be > 2, got {p}")
    grad = gradient(u)
    vals = v_map(grad.stacked(), p)
    comps = tuple(ScalarField(u.grid, v, None, "cell") for v in vals)
    return VectorField(u.grid, comps)


# -- pointwise inequalities -----------------------------------------------------

def inequality_ratios(z: np.ndarray, w: np.ndarray, p: float) -> tuple[np.ndarray, np.ndarray]:
    """Ratios whose suprema are the two pointwise constants.

    ``z`` and ``w`` have shape ``(N, n)`` (or ``(n,)`` for scalars). Pairs with
    ``z == w`` are returned as NaN.
    """
    z = np.atleast_2d(np.asarray(z, dtype=float))
    w = np.atleast_2d(np.asarray(w, dtype=float))
    dzw = np.sqrt(np.sum((z - w) ** 2, axis=0))
    dv = np.sqrt(np.sum((v_map(z, p) - v_map(w, p)) ** 2, axis=0))
    a = (p - 2) / 2
    zz = np.sqrt(np.sum(z ** 2, axis=0))
    ww = np.sqrt(np.sum(w ** 2, axis=0))
    same = dzw == 0
    with np.errstate(divide="ignore", invalid="ignore"):
        r1 = np.where(same, np.nan, dzw / dv ** (2 / p))
        r2 = np.where(same, np.nan, dv / ((zz ** a + ww ** a) * dzw))
    return r1, r2


def sample_pairs(sample_count: int, dim: int = 2, seed: int = 0,
                 magnitudes: tuple[float, float] = (1e-3, 1e3)) -> tuple[np.ndarray, np.ndarray]:
    """Random pairs with log-uniform magnitudes and uniform directions."""
    rng = np.random.default_rng(seed)
    lo, hi = np.log(magnitudes[0]), np.log(magnitudes[1])

    def draw():
        d = rng.standard_normal((dim, sample_count))
        d /= np.linalg.norm(d, axis=0)
        return d * np.exp(rng.uniform(lo, hi, sample_count))

    return draw(), draw()


@dataclass
class InequalityFit:
    p: float
    c1: float
    c2: float
    sample_count: int
    skipped: int
    dim: int
    seed: int


def pointwise_inequalities(p: float, sample_count: int = 10 ** 4, dim: int = 2,
                           seed: int = 0) -> InequalityFit:
    """Largest sampled ratios for both pointwise inequalities."""
    if not p > 2:
        raise ValueError(f"p must be > 2, got {p}")
    if sample_count < 10 ** 3:
        raise ValueError("sample_count must be at least 1000")
    z, w = sample_pairs(sample_count, dim, seed)
    r1, r2 = inequality_ratios(z, w, p)
    skipped = int(np.isnan(r1).sum())
    return InequalityFit(p, float(np.nanmax(r1)), float(np.nanmax(r2)), sample_count,
                         skipped, dim, seed)


# -- estimates ---------------------------------------------------------------

def _ball_integral_cells(values: np.ndarray, grid, region: Region) -> float:
    mask = region.contains(grid.coords("cell"))
    return float(np.sum(values[mask]) * grid.cell_volume)


def verify_energy_estimate(report: SolveReport, U: ScalarField,
                           prob: DirichletProblem) -> EstimateReport:
    """Energy bound of the regularized solution against the data.

    ``U`` supplies the boundary values; integrals run over cells whose centres
    lie in the ball.
    """
    if not report.converged:
        raise ValueError("energy estimate needs a converged solve")
    p, eps = prob.params.p, prob.params.eps
    pc = prob.params.conjugate
    ball, g = prob.ball, prob.grid
    du = gradient(report.u_eps).magnitude()
    dU = gradient(U).magnitude()
    lhs = _ball_integral_cells(du ** p, g, ball)
    f_mask = ball.contains(g.coords())
    f_norm = float(np.sum(np.abs(prob.f_eps.values[f_mask]) ** pc) * g.cell_volume)
    terms = {
        "eps_grad_U": eps ** ((p - 1) / 2) * _ball_integral_cells(dU, g, ball),
        "grad_U_p": _ball_integral_cells(dU ** p, g, ball),
        "f_eps": ball.volume(g.dimension) ** (pc / g.dimension) * f_norm,
    }
    ratio, degenerate = implied_constant(lhs, sum(terms.values()))
    return EstimateReport("energy", lhs, terms, ratio,
                          {"p": p, "eps": eps, "R": ball.radius, "h_grid": g.spacing},
                          degenerate, report.converged)


def v_derivative_integrals(u: ScalarField, p: float, r: float | None = None,
                           region: Region | None = None) -> list[float]:
    """``int_{B_r} |d_j V|^2`` per direction from face differences of cell V.

    Only faces whose two neighbouring cell centres both lie in ``B_r`` (or in
    ``region`` when given) count.
    """
    g = u.grid
    v = v_field(u, p).stacked()
    region = Region.ball(r) if region is None else region
    inside = region.contains(g.coords("cell"))
    out = []
    for j in range(g.dimension):
        dv = np.diff(v, axis=j + 1) / g.spacing
        both = np.logical_and(np.take(inside, np.arange(inside.shape[j] - 1), axis=j),
                              np.take(inside, np.arange(1, inside.shape[j]), axis=j))
        sq = np.sum(dv ** 2, axis=0)
        out.append(float(np.sum(sq[both]) * g.cell_volume))
    return out


def check_smoothness_exponent(s: float, p: float) -> None:
    lo = (p - 2) / p
    if not lo < s <= 1:
        raise ValueError(f"s={s} must lie in ((p-2)/p, 1] = ({lo:.6g}, 1]")


def verify_sobolev_estimate(u: ScalarField, f: ScalarField, p: float, s: float, r: float,
                            R: float, eps: float = 0.0,
                            pair_budget: float = 4e8) -> EstimateReport:
    """Local second-order estimate for ``V`` on concentric balls ``B_r`` in ``B_R``.

    ``lhs`` is the largest of the per-direction integrals, which are also
    listed in ``extra["per_direction"]``.
    """
    check_smoothness_exponent(s, p)
    if not 0 < r < R:
        raise ValueError("need 0 < r < R")
    g = u.grid
    pc = p / (p - 1)
    big = Region.ball(R)
    if not big.inside_box(g):
        raise ValueError("B_R must lie inside the grid box")
    per_j = v_derivative_integrals(u, p, r)
    lhs = max(per_j)
    grad2 = gradient(u).magnitude() ** 2
    energy_term = (R - r) ** -2 * _ball_integral_cells((eps + grad2) ** (p / 2), g, big)
    if s == 1:
        fg = gradient(f).magnitude()
        f_semi = _ball_integral_cells(fg ** pc, g, big) ** (1 / pc)
    else:
        f_semi = slobodeckii_seminorm(f, SeminormParams(s, pc), big, pair_budget=pair_budget)
    f_term = (R ** (s - (p - 2) / p) * f_semi) ** pc
    terms = {"energy": energy_term, "source": f_term}
    ratio, degenerate = implied_constant(lhs, energy_term + f_term)
    return EstimateReport("sobolev", lhs, terms, ratio,
                          {"p": p, "s": s, "r": r, "R": R, "eps": eps, "h_grid": g.spacing},
                          degenerate, True, {"per_direction": per_j, "f_seminorm": f_semi})


def fractional_gradient_check(u: ScalarField, sigma: float, p: float, inner: Region,
                              pair_budget: float = 4e8) -> float:
    """Largest Slobodeckii seminorm of order ``sigma`` of the gradient components."""
    if not 0 < sigma < 2 / p:
        raise ValueError(f"sigma={sigma} must lie in (0, 2/p) = (0, {2 / p:.6g})")
    prm = SeminormParams(sigma, p)
    return max(slobodeckii_seminorm(c, prm, inner, pair_budget=pair_budget)
               for c in gradient(u).components)


def vona_check(u: ScalarField, p: float) -> float:
    """Largest ratio ``|d_j V|^2 / ((p^2/4) M |d_j grad u|^2)`` over faces.

    ``M`` is the larger of ``|grad u|^(p-2)`` at the two cells sharing the
    face. The ratio never exceeds one (mean value theorem applied to ``V``).
    """
    g = gradient(u).stacked()
    v = v_map(g, p)
    mag = np.sqrt(np.sum(g ** 2, axis=0)) ** (p - 2)
    worst = 0.0
    for j in range(u.dimension):
        dv2 = np.sum(np.diff(v, axis=j + 1) ** 2, axis=0)
        dg2 = np.sum(np.diff(g, axis=j + 1) ** 2, axis=0)
        n = mag.shape[j]
        m = np.maximum(np.take(mag, np.arange(n - 1), axis=j), np.take(mag, np.arange(1, n), axis=j))
        bound = p * p / 4 * m * dg2
        ok = bound > 0
        if np.any(dv2[~ok] > 0):
            return math.inf
        if np.any(ok):
            worst = max(worst, float(np.max(dv2[ok] / bound[ok])))
    return worst
