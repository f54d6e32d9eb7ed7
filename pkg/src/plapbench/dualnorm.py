"""Discrete negative Sobolev norms and the weak-derivative norm check.

A functional on test functions supported in a ball is stored through its
representer ``g`` on nodes, ``<F, phi> = cellvol * sum g phi``. The dual
norm is the supremum of ``<F, phi> / P(phi)`` where ``P`` is either
``||grad phi||_{L^r}`` (smoothness one) or the all-space Gagliardo seminorm
of the zero extension. The supremum is found through the equivalent convex
problem ``min P(phi)^r / r - <F, phi>`` whose minimizer attains it; the
reported value is always the ratio recomputed at the returned test function,
so it is a certified lower bound.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import linalg, optimize

from ._kernels import gagliardo_energy, pair_sum
from .fracnorm import (DEFAULT_PAIR_BUDGET, PairBudgetError, SeminormParams, _kernel_table,
                       lattice_zeta, slobodeckii_seminorm)
from .grid import GridSpec, Region, ScalarField, forward_difference_operators
from .report import EstimateReport, implied_constant


@dataclass(frozen=True)
class DualSettings:
    """Solver knobs. ``restarts`` counts random starts after the representer start."""
    restarts: int = 5
    max_iter: int = 3000
    gtol: float = 1e-10
    smoothing: float = 1e-12
    seed: int = 0
    pair_budget: float = DEFAULT_PAIR_BUDGET
    precondition_limit: int = 4000


@dataclass(frozen=True, eq=False)
class Functional:
    """Linear functional on node test functions.

    Either ``density`` (action ``sum density * phi * cellvol``) or the
    derivative form ``(f, axis)`` with action
    ``-sum f * D_axis phi * cellvol``, ``D`` the forward difference.
    """

    grid: GridSpec
    density: ScalarField | None = None
    f: ScalarField | None = None
    axis: int | None = None

    def __post_init__(self):
        if (self.density is None) == (self.f is None):
            raise ValueError("give exactly one of density or (f, axis)")
        if self.f is not None and not (self.axis is not None and 0 <= self.axis < self.grid.dimension):
            raise ValueError(f"axis must be in [0, {self.grid.dimension - 1}]")

    @property
    def representer(self) -> np.ndarray:
        """Node array ``g`` with ``<F, phi> = cellvol * sum g phi``."""
        if self.density is not None:
            return np.asarray(self.density.values, dtype=float)
        # summation by parts: -sum f (phi(x+h) - phi(x))/h = sum phi (f(x) - f(x-h))/h
        f = np.asarray(self.f.values, dtype=float)
        back = np.zeros_like(f)
        sl = [slice(None)] * f.ndim
        sl_src = list(sl)
        sl[self.axis] = slice(1, None)
        sl_src[self.axis] = slice(None, -1)
        back[tuple(sl)] = f[tuple(sl_src)]
        return (f - back) / self.grid.spacing

    def action(self, phi: ScalarField | np.ndarray) -> float:
        vals = phi.values if isinstance(phi, ScalarField) else np.asarray(phi, dtype=float)
        if self.density is not None:
            return float(np.sum(self.density.values * vals) * self.grid.cell_volume)
        d = forward_difference_operators(self.grid)[self.axis]
        dphi = (d @ vals.ravel()).reshape(self.grid.shape)
        return float(-np.sum(self.f.values * dphi) * self.grid.cell_volume)

    def __mul__(self, scalar: float) -> "Functional":
        if self.density is not None:
            return Functional(self.grid, density=self.density * scalar)
        return Functional(self.grid, f=self.f * scalar, axis=self.axis)

    __rmul__ = __mul__


def density_functional(density: ScalarField) -> Functional:
    return Functional(density.grid, density=density)


def weak_derivative_functional(f: ScalarField, axis: int) -> Functional:
    """``phi -> -<f, D_axis phi>``, the distributional derivative of ``f`` (0-based axis)."""
    return Functional(f.grid, f=f, axis=axis)


@dataclass
class DualNormResult:
    value: float
    maximizer: ScalarField
    primal_params: tuple[float, float]
    iterations: int
    converged: bool
    restarts: int = 0
    ratios: list[float] = field(default_factory=list)


class _Primal:
    """``P(phi)^r`` and its gradient for test functions on the nodes of ``mask``."""

    def __init__(self, grid: GridSpec, mask: np.ndarray, sigma: float, r: float,
                 pair_budget: float):
        self.grid = grid
        self.mask = mask
        self.sigma = sigma
        self.r = r
        flat = np.flatnonzero(mask.ravel())
        if sigma == 1.0:
            self.ops = [d[:, flat].tocsr() for d in forward_difference_operators(grid)]
            return
        idx = np.argwhere(mask).astype(np.int64)
        m = idx.shape[0]
        if float(m) * m > pair_budget:
            raise PairBudgetError(f"dual norm needs {float(m) * m:.3g} pair evaluations per "
                                  f"step, over the pair budget of {pair_budget:.3g}")
        dim = grid.dimension
        span = tuple(int(np.ptp(idx[:, j])) + 1 for j in range(dim))
        self.table, self.strides = _kernel_table(span, dim + sigma * r)
        self.idx = np.ascontiguousarray(idx - idx.min(axis=0))
        _, rowsum = pair_sum(self.idx, np.zeros(m), np.arange(m, dtype=np.int64), np.ones(m),
                             self.table, self.strides, 1.0)
        self.tail = lattice_zeta(dim, sigma * r) - rowsum
        self.scale = grid.spacing ** (dim - sigma * r)

    def energy(self, x: np.ndarray, delta: float) -> tuple[float, np.ndarray]:
        r = self.r
        if self.sigma == 1.0:
            grads = [d @ x for d in self.ops]
            s = sum(gj * gj for gj in grads) + delta
            base = delta ** (0.5 * r) if delta > 0 else 0.0
            val = float(np.sum(s ** (0.5 * r) - base))
            w = r * s ** (0.5 * r - 1.0) if delta > 0 else r * np.where(s > 0, s, 1.0) ** (0.5 * r - 1.0)
            grad = sum(d.T @ (w * gj) for d, gj in zip(self.ops, grads))
            vol = self.grid.cell_volume
            return val * vol, grad * vol
        val, grad = gagliardo_energy(self.idx, np.ascontiguousarray(x), self.table,
                                     self.strides, self.tail, r, delta)
        return val * self.scale, grad * self.scale

    def quadratic_form(self) -> np.ndarray:
        """Dense Hessian of the ``r = 2`` analogue of the energy (same kernel)."""
        if self.sigma == 1.0:
            a = sum((d.T @ d) for d in self.ops)
            return 2.0 * self.grid.cell_volume * a.toarray()
        m = self.idx.shape[0]
        flat = np.zeros((m, m), dtype=np.int64)
        for j in range(self.idx.shape[1]):
            flat += np.abs(self.idx[:, j, None] - self.idx[None, :, j]) * self.strides[j]
        t = self.table[flat]
        a = -t
        a[np.diag_indices(m)] += t.sum(axis=1) + self.tail
        return 4.0 * self.scale * a

    def seminorm(self, x: np.ndarray) -> float:
        val, _ = self.energy(x, 0.0)
        return max(val, 0.0) ** (1.0 / self.r)


def support_mask(grid: GridSpec, ball: Region) -> np.ndarray:
    """Nodes strictly inside ``ball``; test functions vanish elsewhere."""
    if not ball.inside_box(grid):
        raise ValueError("ball leaves the grid box; enlarge the grid")
    return ball.contains(grid.coords(), strict=True)


def primal_seminorm(phi: ScalarField, sigma: float, r: float, ball: Region) -> float:
    """The primal seminorm used by :func:`dual_seminorm`, for a test function in ``ball``."""
    mask = support_mask(phi.grid, ball)
    if np.any(phi.values[~mask] != 0):
        raise ValueError("test function is not supported strictly inside the ball")
    if sigma == 1.0:
        prim = _Primal(phi.grid, mask, 1.0, r, DEFAULT_PAIR_BUDGET)
        return prim.seminorm(phi.values[mask])
    return slobodeckii_seminorm(phi, SeminormParams(sigma, r))


def dual_seminorm(F: Functional, sigma: float, r: float, ball: Region,
                  settings: DualSettings = DualSettings()) -> DualNormResult:
    """Discrete dual norm of ``F`` against the primal space of smoothness ``sigma``, exponent ``r``.

    The first start is the representer of ``F`` restricted to the ball, the
    others are seeded Gaussian vectors; the best recomputed ratio wins.
    ``converged`` is False when no start reached the stationarity tolerance,
    in which case the value is still a valid lower bound.
    """
    if not 0 < sigma <= 1:
        raise ValueError(f"primal smoothness out of (0,1]: {sigma}")
    if not 1 < r < np.inf:
        raise ValueError(f"primal exponent out of (1,inf): {r}")
    grid = F.grid
    mask = support_mask(grid, ball)
    g = F.representer[mask]
    vol = grid.cell_volume
    zero = ScalarField(grid, np.zeros(grid.shape))
    if g.size == 0 or not np.any(g):
        return DualNormResult(0.0, zero, (sigma, r), 0, True, settings.restarts)
    prim = _Primal(grid, mask, sigma, r, settings.pair_budget)

    def ratio(x):
        p = prim.seminorm(x)
        return vol * float(g @ x) / p if p > 0 else 0.0

    # normalize so the dual norm is of order one
    c = max(ratio(g), np.finfo(float).tiny)
    gn = g / c
    delta = settings.smoothing if r < 2 else 0.0

    # change of variables x = L^{-T} y with L L^T the quadratic analogue
    chol = None
    if g.size <= settings.precondition_limit:
        try:
            chol = linalg.cholesky(prim.quadratic_form() / (2.0 * vol), lower=True)
        except linalg.LinAlgError:
            chol = None

    def to_x(y):
        return y if chol is None else linalg.solve_triangular(chol, y, lower=True, trans="T")

    def objective(y):
        x = to_x(y)
        val, grad = prim.energy(x, delta)
        gx = grad / (r * vol) - gn
        if chol is not None:
            gx = linalg.solve_triangular(chol, gx, lower=True)
        return val / (r * vol) - float(gn @ x), gx

    rng = np.random.default_rng(settings.seed)
    starts = [gn] + [rng.standard_normal(g.size) for _ in range(settings.restarts)]
    best = (-np.inf, None, 0, False)
    ratios = []
    for x0 in starts:
        y0 = x0 if chol is None else chol.T @ x0
        res = optimize.minimize(objective, y0, jac=True, method="L-BFGS-B",
                                options={"maxiter": settings.max_iter, "gtol": settings.gtol,
                                         "ftol": 1e-15, "maxcor": 20})
        x = to_x(res.x)
        val = ratio(x)
        ratios.append(val)
        stationary = bool(res.success) or float(np.max(np.abs(res.jac))) <= 1e-7
        if val > best[0]:
            best = (val, x, int(res.nit), stationary)
    val, x, nit, conv = best
    full = np.zeros(grid.shape)
    full[mask] = x
    return DualNormResult(max(val, 0.0), ScalarField(grid, full), (sigma, r), nit, conv,
                          settings.restarts, ratios)


def negative_norm_check(f: ScalarField, beta: float, q: float, ball: Region,
                        settings: DualSettings = DualSettings()) -> EstimateReport:
    """``max_j ||D_j f||_{dual of W_0^{1-beta,q'}(ball)}`` against ``[f]_{W^{beta,q}(ball)}``."""
    if not 0 < beta < 1:
        raise ValueError(f"beta out of (0,1): {beta}")
    if not 1 < q < np.inf:
        raise ValueError(f"q out of (1,inf): {q}")
    qc = q / (q - 1)
    rhs = slobodeckii_seminorm(f, SeminormParams(beta, q), region=ball)
    results = [dual_seminorm(weak_derivative_functional(f, j), 1.0 - beta, qc, ball, settings)
               for j in range(f.dimension)]
    lhs = max(res.value for res in results)
    const, degenerate = implied_constant(lhs, rhs)
    return EstimateReport(
        which="negative_norm", lhs=lhs, rhs_terms={"slobodeckii": rhs},
        implied_constant=const,
        parameters={"beta": beta, "q": q, "ball": ball.describe()},
        degenerate=degenerate, converged=all(res.converged for res in results),
        extra={"per_axis": [res.value for res in results], "restarts": settings.restarts})
