"""K-functional of real interpolation on a ball, and its explicit splitting.

``K(t, u) = inf ||u - v||_X + t ||v||_Y`` for the couples ``(L^q, D_0^{1,q})``
and ``(L^q, W^{1,q})`` on a ball. The infimum lies on the Pareto frontier of
``(||u - v||_X, ||v||_Y)``, which is traced by the minimizers ``v(mu)`` of
``||u - v||_X^q / q + mu ||v||_Y^q / q``; ``K`` is then a one-dimensional
minimization over ``log mu``, with the endpoints ``v = u`` and ``v = 0``
always included. For ``q = 2`` the frontier is explicit through an
eigendecomposition; otherwise each ``v(mu)`` comes from a damped Newton
solve with smoothing ``1e-12`` of ``|.|^q`` at the origin.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy import linalg, optimize
from scipy.sparse import linalg as spla

from .fracnorm import EmbeddingReport, SeminormParams, slobodeckii_seminorm
from .grid import (MollifierSpec, Region, ScalarField, dilate, forward_difference_operators,
                   mollify)
from .report import implied_constant

COUPLES = ("D0", "W1")
DEFAULT_T_POINTS = 40


@dataclass(frozen=True)
class InterpolationParams:
    """``theta`` in (0,1), exponent ``q`` and the couple, ``"D0"`` or ``"W1"``."""
    theta: float
    q: float
    couple: str = "D0"

    def __post_init__(self):
        if not 0 < self.theta < 1:
            raise ValueError(f"theta out of (0,1): {self.theta}")
        if not 1 < self.q < np.inf:
            raise ValueError(f"q out of (1,inf): {self.q}")
        if self.couple not in COUPLES:
            raise ValueError(f"couple must be one of {COUPLES}, got {self.couple!r}")


@dataclass(frozen=True)
class KSettings:
    smoothing: float = 1e-12
    newton_tol: float = 1e-9
    newton_iter: int = 100
    scan_points: int = 65
    mu_range: tuple[float, float] = (1e-8, 1e8)
    xtol: float = 1e-10
    xtol_power: float = 1e-4
    dense_limit: int = 6000


@dataclass
class KPoint:
    t: float
    k_value: float
    part_x_norm: float
    part_y_norm: float
    decomposition: tuple[ScalarField, ScalarField]
    mu: float = float("nan")
    converged: bool = True
    stationarity: float = 0.0


@dataclass
class KProfile:
    points: list[KPoint]
    profile_integral: float
    theta: float
    q: float
    couple: str
    body: float = 0.0
    tail_low: float = 0.0
    tail_high: float = 0.0

    @property
    def t(self) -> np.ndarray:
        return np.array([p.t for p in self.points])

    @property
    def k(self) -> np.ndarray:
        return np.array([p.k_value for p in self.points])

    @property
    def converged(self) -> bool:
        return all(p.converged for p in self.points)

    def rows(self) -> list[dict]:
        return [{"t": p.t, "K": p.k_value, "part_x_norm": p.part_x_norm,
                 "part_y_norm": p.part_y_norm, "converged": p.converged} for p in self.points]


class _Couple:
    """Norms of one couple on a fixed grid and ball, in terms of the free values of ``v``."""

    def __init__(self, u: ScalarField, ball: Region, prm: InterpolationParams):
        grid = u.grid
        if not ball.inside_box(grid):
            raise ValueError("ball leaves the grid box; enlarge the grid")
        self.grid = grid
        self.q = prm.q
        self.couple = prm.couple
        self.vol = grid.cell_volume
        coords = grid.coords(u.centering)
        if prm.couple == "D0":
            self.free = ball.contains(coords, strict=True)
            self.x_mask = np.ones(grid.shape, bool)
            ops = forward_difference_operators(grid)
            cols = np.flatnonzero(self.free.ravel())
            self.ops = [d[:, cols].tocsr() for d in ops]
        else:
            self.free = ball.contains(coords)
            self.x_mask = self.free
            cols = np.flatnonzero(self.free.ravel())
            ops = forward_difference_operators(grid)
            # differences whose both endpoints lie in the closed ball
            keep = []
            for d in ops:
                dd = d[:, cols].tocsr()
                inner = np.asarray(abs(d).sum(axis=1)).ravel()
                inner_in = np.asarray(abs(dd).sum(axis=1)).ravel()
                rows = np.flatnonzero((inner_in > 0) & np.isclose(inner_in, inner))
                keep.append(dd[rows])
            self.ops = keep
        self.u = np.asarray(u.values, dtype=float)
        self.u_free = self.u[self.free]
        outside = self.u[self.x_mask & ~self.free]
        self.x_out = float(np.sum(np.abs(outside) ** self.q) * self.vol)

    def x_norm(self, v: np.ndarray) -> float:
        return (self.x_out + float(np.sum(np.abs(self.u_free - v) ** self.q)) * self.vol) ** (1 / self.q)

    def y_norm(self, v: np.ndarray) -> float:
        s = sum((d @ v) ** 2 for d in self.ops)
        val = float(np.sum(s ** (self.q / 2))) * self.vol
        if self.couple == "W1":
            val += float(np.sum(np.abs(v) ** self.q)) * self.vol
        return val ** (1 / self.q)

    def laplacian(self) -> sp.csr_matrix:
        a = sum((d.T @ d) for d in self.ops)
        if self.couple == "W1":
            a = a + sp.identity(self.u_free.size)
        return sp.csr_matrix(a)

    def full(self, v: np.ndarray) -> ScalarField:
        out = np.zeros(self.grid.shape)
        out[self.free] = v
        return ScalarField(self.grid, out)


class _QuadraticFrontier:
    """``v(mu) = (I + mu A)^{-1} u`` for ``q = 2``."""

    def __init__(self, c: _Couple, dense_limit: int):
        self.c = c
        a = c.laplacian()
        n = a.shape[0]
        self.dense = n <= dense_limit
        if self.dense:
            self.lam, self.vec = linalg.eigh(a.toarray())
            self.lam = np.maximum(self.lam, 0.0)
            self.coef = self.vec.T @ c.u_free
        else:
            self.a = a.tocsc()

    def norms(self, mu: float) -> tuple[float, float]:
        c = self.c
        if self.dense:
            d = 1.0 / (1.0 + mu * self.lam)
            ax = c.x_out + float(np.sum((mu * self.lam * d * self.coef) ** 2)) * c.vol
            ay = float(np.sum(self.lam * (d * self.coef) ** 2)) * c.vol
            return math.sqrt(ax), math.sqrt(max(ay, 0.0))
        v = self.solve(mu)
        return c.x_norm(v), c.y_norm(v)

    def solve(self, mu: float) -> np.ndarray:
        if self.dense:
            return self.vec @ (self.coef / (1.0 + mu * self.lam))
        n = self.a.shape[0]
        return spla.spsolve((sp.identity(n, format="csc") + mu * self.a).tocsc(), self.c.u_free)


class _PowerFrontier:
    """Newton solves of ``sum |u - v|^q / q + mu |grad v|^q / q`` (smoothed) for ``q != 2``."""

    def __init__(self, c: _Couple, settings: KSettings):
        self.c = c
        self.s = settings
        self.cache: dict[float, np.ndarray] = {}
        self.worst = 0.0

    def _parts(self, v, mu, dl):
        c, q = self.c, self.c.q
        e = v - c.u_free
        se = e * e + dl
        grads = [d @ v for d in c.ops]
        sg = sum(gj * gj for gj in grads) + dl
        val = (np.sum(se ** (q / 2)) + mu * np.sum(sg ** (q / 2))) / q
        grad = se ** (q / 2 - 1) * e + mu * sum(d.T @ (sg ** (q / 2 - 1) * gj)
                                               for d, gj in zip(c.ops, grads))
        diag = se ** (q / 2 - 1) + (q - 2) * se ** (q / 2 - 2) * e * e
        hess = sp.diags(diag)
        a = sg ** (q / 2 - 1)
        b = (q - 2) * sg ** (q / 2 - 2)
        for i, (di, gi) in enumerate(zip(c.ops, grads)):
            for j, (dj, gj) in enumerate(zip(c.ops, grads)):
                w = b * gi * gj + (a if i == j else 0.0)
                hess = hess + mu * (di.T @ sp.diags(w) @ dj)
        if c.couple == "W1":
            sv = v * v + dl
            val += mu * np.sum(sv ** (q / 2)) / q
            grad = grad + mu * sv ** (q / 2 - 1) * v
            hess = hess + mu * sp.diags(sv ** (q / 2 - 1) + (q - 2) * sv ** (q / 2 - 2) * v * v)
        return float(val), grad, sp.csc_matrix(hess)

    def _newton(self, v, mu, dl, tol):
        res = np.inf
        for _ in range(self.s.newton_iter):
            val, grad, hess = self._parts(v, mu, dl)
            res = float(np.max(np.abs(grad)))
            if res <= tol:
                break
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                step = spla.spsolve(hess, -grad)
            if not np.all(np.isfinite(step)):
                step = -grad
            slope = float(step @ grad)
            if slope >= 0:
                step, slope = -grad, -float(grad @ grad)
            lam = 1.0
            while lam > 1e-12:
                if self._parts(v + lam * step, mu, dl)[0] <= val + 1e-4 * lam * slope:
                    break
                lam *= 0.5
            if lam <= 1e-12:
                break
            v = v + lam * step
        return v, res

    def solve(self, mu: float) -> np.ndarray:
        if mu in self.cache:
            return self.cache[mu]
        if self.cache:
            near = min(self.cache, key=lambda m: abs(math.log(m) - math.log(mu)))
            v = self.cache[near].copy()
        else:
            v = self.c.u_free.copy()
        scale = max(float(np.max(np.abs(self.c.u_free))), 1e-300)
        unit = scale ** (self.c.q - 1) * max(1.0, mu)
        target = self.s.smoothing
        # continuation in the smoothing for q < 2, where |.|^q is not C^2 at 0
        stages = [target]
        if self.c.q < 2:
            d = 1e-2 * scale * scale
            stages = []
            while d > target:
                stages.append(d)
                d *= 1e-3
            stages.append(target)
        for dl in stages[:-1]:
            v, _ = self._newton(v, mu, dl, 1e-6 * unit)
        v, res = self._newton(v, mu, stages[-1], self.s.newton_tol * unit)
        self.worst = max(self.worst, res / unit)
        self.cache[mu] = v
        return v

    def norms(self, mu: float) -> tuple[float, float]:
        v = self.solve(mu)
        return self.c.x_norm(v), self.c.y_norm(v)


def _frontier(c: _Couple, settings: KSettings):
    if c.q == 2:
        return _QuadraticFrontier(c, settings.dense_limit)
    return _PowerFrontier(c, settings)


def _k_point(c: _Couple, front, t: float, settings: KSettings) -> KPoint:
    zero = np.zeros_like(c.u_free)
    # endpoints: v = u restricted to the free nodes, and v = 0
    cands = [(c.x_norm(c.u_free) + t * c.y_norm(c.u_free), 0.0, c.u_free),
             (c.x_norm(zero), math.inf, zero)]
    if np.any(c.u_free):
        lo, hi = np.log(settings.mu_range[0]), np.log(settings.mu_range[1])
        # fixed scan shared by every t (solves are cached), then a local refinement
        grid = np.linspace(lo, hi, settings.scan_points)

        def cost(lm):
            a, b = front.norms(float(np.exp(lm)))
            return a + t * b

        vals = np.array([cost(lm) for lm in grid])
        i = int(np.argmin(vals))
        a_ = grid[max(i - 1, 0)]
        b_ = grid[min(i + 1, grid.size - 1)]
        if b_ > a_:
            opt = optimize.minimize_scalar(cost, bounds=(a_, b_), method="bounded",
                                           options={"xatol": settings.xtol if c.q == 2
                                                    else settings.xtol_power})
            lm = float(opt.x) if opt.fun <= vals[i] else float(grid[i])
        else:
            lm = float(grid[i])
        mu = float(np.exp(lm))
        v = front.solve(mu)
        cands.append((c.x_norm(v) + t * c.y_norm(v), mu, v))
    k, mu, v = min(cands, key=lambda z: z[0])
    a, b = c.x_norm(v), c.y_norm(v)
    u2 = c.full(v)
    u_full = ScalarField(c.grid, c.u)
    stat = getattr(front, "worst", 0.0)
    conv = stat <= 1e-6 if isinstance(front, _PowerFrontier) else True
    return KPoint(t, a + t * b, a, b, (u_full - u2, u2), mu, conv, stat)


def k_functional(u: ScalarField, t: float, prm: InterpolationParams, ball: Region,
                 settings: KSettings = KSettings()) -> KPoint:
    """``K(t, u)`` for the couple of ``prm`` on ``ball``; ``u = u1 + u2`` exactly on nodes.

    ``k_value`` is achieved by the returned splitting, hence an upper bound of
    the discrete infimum.
    """
    if not t > 0:
        raise ValueError(f"t must be positive, got {t}")
    c = _Couple(u, ball, prm)
    return _k_point(c, _frontier(c, settings), t, settings)


def k_functional_many(u: ScalarField, t_values, prm: InterpolationParams, ball: Region,
                      settings: KSettings = KSettings()) -> list[KPoint]:
    """:func:`k_functional` at several ``t``, sharing the frontier computation."""
    c = _Couple(u, ball, prm)
    front = _frontier(c, settings)
    out = []
    for t in t_values:
        if not t > 0:
            raise ValueError(f"t must be positive, got {t}")
        out.append(_k_point(c, front, float(t), settings))
    return out


def default_t_grid(radius: float, points: int = DEFAULT_T_POINTS) -> np.ndarray:
    return np.geomspace(1e-3 * radius, 1e3 * radius, points)


def interpolation_profile(u: ScalarField, prm: InterpolationParams, ball: Region,
                          t_grid=None, settings: KSettings = KSettings()) -> KProfile:
    """Sample ``K`` on a log grid and integrate ``t^(-theta q) K^q dt/t``.

    The body is the trapezoid rule in ``log t``. Below the grid ``K(t)`` is
    continued linearly (``K/t`` is nonincreasing, and ``K(t) ~ t ||u||_Y``);
    above it ``K`` is held at its last value, which is bounded by ``||u||_X``.
    """
    t_grid = default_t_grid(ball.radius) if t_grid is None else np.asarray(t_grid, dtype=float)
    if t_grid.ndim != 1 or t_grid.size < 2 or np.any(np.diff(t_grid) <= 0) or t_grid[0] <= 0:
        raise ValueError("t_grid must be increasing and positive")
    pts = k_functional_many(u, t_grid, prm, ball, settings)
    th, q = prm.theta, prm.q
    k = np.array([p.k_value for p in pts])
    y = t_grid ** (-th * q) * k ** q
    body = float(np.trapezoid(y, np.log(t_grid)))
    tail_low = float(k[0] ** q * t_grid[0] ** (-th * q) / ((1 - th) * q))
    tail_high = float(k[-1] ** q * t_grid[-1] ** (-th * q) / (th * q))
    return KProfile(pts, body + tail_low + tail_high, th, q, prm.couple, body, tail_low, tail_high)


def explicit_decomposition(u: ScalarField, t: float, m: MollifierSpec | None = None,
                           radius: float | None = None) -> tuple[ScalarField, ScalarField]:
    """``u_t = mollify(dilate(u, t), psi_t)`` and ``u - u_t`` for ``0 < t < R/2``.

    ``u_t`` vanishes at every node with ``|x - c| >= R``.
    """
    if radius is None:
        if u.support is None or u.support.kind != "ball":
            raise ValueError("explicit_decomposition needs a field supported in a ball")
        radius = u.support.radius
    if not 0 < t < radius / 2:
        raise ValueError(f"t={t} must lie in (0, R/2) with R={radius}")
    m = MollifierSpec(t) if m is None else m
    if not math.isclose(m.radius, t, rel_tol=1e-12):
        raise ValueError("mollifier radius must equal t")
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        v = dilate(u, t, radius)
        ut = mollify(v, m)
    ut = ScalarField(u.grid, ut.values, Region.ball(radius, u.support.center if u.support else ()),
                     u.centering)
    return ut, ScalarField(u.grid, u.values - ut.values, None, u.centering)


def decomposition_cost(u: ScalarField, t: float, q: float, ball: Region) -> float:
    """``||u - u_t||_{L^q} + t ||grad u_t||_{L^q}`` for the explicit splitting."""
    ut, rem = explicit_decomposition(u, t, radius=ball.radius)
    c = _Couple(u, ball, InterpolationParams(0.5, q, "D0"))
    v = ut.values[c.free]
    if np.any(ut.values[~c.free] != 0):
        raise AssertionError("explicit decomposition left the ball")
    return c.x_norm(v) + t * c.y_norm(v)


def lemma_a1_check(u: ScalarField, beta: float, q: float, ball: Region,
                   t_grid=None, settings: KSettings = KSettings()) -> EmbeddingReport:
    """Profile of ``(L^q, W^{1,q})_{beta,q}`` against ``(||u||_q + [u]_{W^{beta,q}})^q`` on ``ball``.

    ``implied_constant`` is profile / norm; ``terms`` holds both ratios.
    """
    if not 0 < beta < 1:
        raise ValueError(f"beta out of (0,1): {beta}")
    prof = interpolation_profile(u, InterpolationParams(beta, q, "W1"), ball, t_grid, settings)
    mask = ball.contains(u.grid.coords(u.centering))
    lq = float(np.sum(np.abs(u.values[mask]) ** q) * u.grid.cell_volume) ** (1 / q)
    semi = slobodeckii_seminorm(u, SeminormParams(beta, q), region=ball)
    rhs = (lq + semi) ** q
    ratio, degenerate = implied_constant(prof.profile_integral, rhs)
    inverse = rhs / prof.profile_integral if prof.profile_integral > 0 else math.inf
    return EmbeddingReport("A.1", prof.profile_integral, rhs, 1.0, ratio, degenerate, False,
                           {"beta": beta, "q": q, "ball": ball.describe()},
                           {"profile_over_norm": ratio, "norm_over_profile": inverse,
                            "lq_norm": lq, "slobodeckii": semi,
                            "converged": prof.converged})


def lemma_a4_check(u: ScalarField, beta: float, q: float, ball: Region,
                   t_grid=None, settings: KSettings = KSettings()) -> EmbeddingReport:
    """Profile of ``(L^{q'}, D_0^{1,q'})_{1-beta,q'}`` against the all-space ``[u]^{q'}_{W^{1-beta,q'}}``."""
    if not 0 < beta < 1:
        raise ValueError(f"beta out of (0,1): {beta}")
    qc = q / (q - 1)
    prof = interpolation_profile(u, InterpolationParams(1 - beta, qc, "D0"), ball, t_grid,
                                 settings)
    semi = slobodeckii_seminorm(u, SeminormParams(1 - beta, qc)) ** qc
    ratio, degenerate = implied_constant(prof.profile_integral, semi)
    inverse = semi / prof.profile_integral if prof.profile_integral > 0 else math.inf
    return EmbeddingReport("A.4", prof.profile_integral, semi, 1.0, ratio, degenerate, False,
                           {"beta": beta, "q": q, "ball": ball.describe()},
                           {"profile_over_seminorm": ratio, "seminorm_over_profile": inverse,
                            "converged": prof.converged})
