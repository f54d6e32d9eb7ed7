"""Scripted studies: the radial-power sharpness sweep, scaling invariance,
corpus refinement studies and the config-driven command dispatch."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Any, Callable, Sequence

import numpy as np

from .analytic import Gaussian, RadialPower, parse_analytic
from .fracnorm import SeminormParams, slobodeckii_seminorm
from .grid import DEFAULT_NODE_BUDGET, Region, ScalarField, build_grid, sample_field
from .plap import (DirichletProblem, EnergyParams, residual, solve_dirichlet,
                   v_derivative_integrals, verify_sobolev_estimate)
from .report import linear_fit, loglog_fit

VERDICTS = ("bounded", "log", "power")


def alpha_tilde(N: int, p: float) -> float:
    """Largest exponent for which ``V(grad |x|^-alpha)`` is locally in ``W^{1,2}``."""
    return (N - 2) / p - 1


def alpha_s(N: int, p: float, s: float) -> float:
    """Largest exponent for which the source of ``|x|^-alpha`` is locally in ``W^{s,p'}``."""
    return N / p - (s + 1) / (p - 1) - 1


def annulus_exponent(N: int, p: float, alpha: float) -> float:
    """Exponent ``e`` in ``int_{delta<|x|<R} |dV|^2 ~ delta^e`` for ``U = |x|^-alpha``."""
    return N - 2 - (alpha + 1) * p


def _zeros(grid) -> ScalarField:
    return ScalarField(grid, np.zeros(grid.shape))


# -- radial source -----------------------------------------------------------

@dataclass(frozen=True)
class RadialSource:
    """``-Delta_p |x|^-alpha = constant * |x|^-exponent``.

    With ``U = r^-alpha`` one has ``|U'|^{p-2} U' = -alpha |alpha|^{p-2} r^{-(alpha+1)(p-1)}``,
    so ``constant = alpha |alpha|^{p-2} (N - 1 - (alpha+1)(p-1))`` and
    ``exponent = (alpha+1)(p-1) + 1``. The sign is that of ``-Delta_p``.
    """

    N: int
    p: float
    alpha: float

    @property
    def constant(self) -> float:
        a, p = self.alpha, self.p
        return a * abs(a) ** (p - 2) * (self.N - 1 - (a + 1) * (p - 1))

    @property
    def exponent(self) -> float:
        return (self.alpha + 1) * (self.p - 1) + 1

    @property
    def degenerate(self) -> bool:
        return math.isclose(self.exponent, self.N, rel_tol=0, abs_tol=1e-12)

    @property
    def singular(self) -> bool:
        return self.exponent > 0 and not self.degenerate

    def __call__(self, coords):
        return RadialPower(self.exponent, self.constant)(coords)

    def at_radius(self, r: float) -> float:
        return self.constant * r ** (-self.exponent)


def source_of_radial_power(N: int, p: float, alpha: float) -> RadialSource:
    if alpha == 0:
        raise ValueError("alpha must be nonzero")
    if not p > 2:
        raise ValueError(f"p must be > 2, got {p}")
    return RadialSource(N, p, alpha)


def source_residual_error(N: int, p: float, alpha: float, h: float, inner: float = 0.1,
                          outer: float = 1.0) -> float:
    """Max gap between the discrete ``-Delta_p U`` and the closed form on an annulus.

    Measured relative to the largest ``|alpha|^(p-1) r^-exponent`` on the
    annulus, which stays meaningful when the exact source vanishes.
    """
    grid = build_grid(N, 1.25 * outer, h)
    U = sample_field(grid, RadialPower(alpha), singularity="clip")
    prob = DirichletProblem(Region.ball(outer), _zeros(grid), U, EnergyParams(p, 0.0))
    res = residual(U, prob).values
    src = source_of_radial_power(N, p, alpha)
    ring = Region.annulus(inner, outer - 2 * h).contains(grid.coords()) & prob.free.reshape(grid.shape)
    exact = src(grid.coords())
    r = grid.radius()[ring]
    scale = float(np.max(abs(alpha) ** (p - 1) * r ** -src.exponent))
    return float(np.max(np.abs(res[ring] - exact[ring]))) / scale


# -- sharpness sweep ---------------------------------------------------------

@dataclass(frozen=True)
class SharpnessSpec:
    """One exponent of the radial family on ``B_R``.

    ``ladder`` dyadic radii ``delta_k = R 2^-k``, ``k = 1..ladder``; each shell
    ``[delta_k, 2 delta_k)`` lives on its own grid with ``delta_k / h`` equal to
    the resolution of the level.
    """

    N: int
    p: float
    alpha: float
    s: float | None = None
    radius: float = 0.9
    ladder: int = 10
    levels: tuple[int, ...] = (4, 8)

    def __post_init__(self):
        if self.N not in (1, 2, 3):
            raise ValueError("N must be 1, 2 or 3")
        if not self.p > 2:
            raise ValueError(f"p must be > 2, got {self.p}")
        limit = self.N / self.p - 1
        if not self.alpha < limit:
            raise ValueError(f"alpha={self.alpha} >= N/p - 1 = {limit:.6g}: "
                             "U is not in W^{1,p}_loc")
        if self.ladder < 4:
            raise ValueError("ladder needs at least 4 radii")

    @property
    def alpha_tilde(self) -> float:
        return alpha_tilde(self.N, self.p)

    @property
    def alpha_s(self) -> float | None:
        return None if self.s is None else alpha_s(self.N, self.p, self.s)

    @property
    def predicted_exponent(self) -> float:
        return annulus_exponent(self.N, self.p, self.alpha)

    @property
    def deltas(self) -> np.ndarray:
        return self.radius * 2.0 ** -np.arange(1, self.ladder + 1)


@dataclass
class SweepRow:
    alpha: float
    delta: float
    level: int
    annulus_integral: float
    shell_integral: float
    fitted_exponent: float
    verdict: str


def shell_integral(N: int, p: float, alpha: float, a: float, points: int) -> float:
    """``sum_j int_{a <= |x| < 2a} |d_j V|^2`` for ``U = |x|^-alpha`` with ``a / h = points``."""
    h = a / points
    grid = build_grid(N, 2 * a + 3 * h, h)
    U = sample_field(grid, RadialPower(alpha), singularity="clip")
    return float(sum(v_derivative_integrals(U, p, region=Region.annulus(a, 2 * a))))


def classify(deltas: Sequence[float], totals: Sequence[float], shells: Sequence[float],
             window: int = 4) -> tuple[str, float]:
    """Verdict and fitted shell exponent from the last ``window`` ladder points.

    bounded: final increment under 5% of the total, or shells decaying at a
    fitted exponent of at least 0.05 (a summable tail); log: total linear in
    ``log(1/delta)`` with R^2 >= 0.98 and fitted exponent under 0.05 in size;
    power otherwise.
    """
    d = np.asarray(deltas, float)[-window:]
    tot = np.asarray(totals, float)[-window:]
    sh = np.asarray(shells, float)[-window:]
    expo = loglog_fit(zip(d, sh)).slope if np.all(sh > 0) else math.inf
    if tot[-1] > 0 and (tot[-1] - tot[-2]) / tot[-1] < 0.05 or expo >= 0.05:
        return "bounded", expo
    if linear_fit(np.log(1 / d), tot).r_squared >= 0.98 and abs(expo) < 0.05:
        return "log", expo
    return "power", expo


def sharpness_sweep(spec: SharpnessSpec) -> list[SweepRow]:
    rows: list[SweepRow] = []
    deltas = spec.deltas
    for level in spec.levels:
        shells = np.array([shell_integral(spec.N, spec.p, spec.alpha, a, level) for a in deltas])
        totals = np.cumsum(shells)
        verdict, expo = classify(deltas, totals, shells)
        rows.extend(SweepRow(spec.alpha, float(a), level, float(t), float(s), expo, verdict)
                    for a, t, s in zip(deltas, totals, shells))
    return rows


def final_verdict(rows: Sequence[SweepRow]) -> tuple[str, float]:
    finest = max(r.level for r in rows)
    row = next(r for r in rows if r.level == finest)
    return row.verdict, row.fitted_exponent


def alpha_scan(N: int, p: float, alphas: Sequence[float], **kwargs) -> dict[float, list[SweepRow]]:
    return {float(a): sharpness_sweep(SharpnessSpec(N, p, float(a), **kwargs)) for a in alphas}


def transition_alpha(scan: dict[float, list[SweepRow]]) -> float | None:
    """First exponent whose verdict is divergent after a bounded one."""
    alphas = sorted(scan)
    verdicts = [final_verdict(scan[a])[0] for a in alphas]
    for a0, a1, v0, v1 in zip(alphas, alphas[1:], verdicts, verdicts[1:]):
        if v0 == "bounded" and v1 != "bounded":
            return a1
    return None


@dataclass
class DyadicSeminorm:
    """``[f]^q_{W^{s,q}(B_R)}`` of a radially homogeneous ``f`` as a dyadic series.

    ``shells[k] = I(B_{r_k}) - I(B_{r_{k+1}})`` with ``r_k = R 2^-k``, each on a
    grid with ``r_k / h = points``; the tail continues the last shell ratio
    geometrically and is infinite when that ratio is at least one.
    """

    points: int
    shells: list[float]
    ratio: float
    total: float

    @property
    def finite(self) -> bool:
        return math.isfinite(self.total)


def dyadic_seminorm(spec, N: int, s: float, q: float, radius: float, points: int,
                    shells: int = 3, pair_budget: float = 1e9) -> DyadicSeminorm:
    prm = SeminormParams(s, q)
    parts = []
    for k in range(shells):
        r = radius * 2.0 ** -k
        h = r / points
        grid = build_grid(N, r + 2 * h, h)
        f = sample_field(grid, spec, Region.ball(r), singularity="clip")
        outer = slobodeckii_seminorm(f, prm, Region.ball(r), pair_budget=pair_budget) ** q
        inner = slobodeckii_seminorm(f, prm, Region.ball(r / 2), pair_budget=pair_budget) ** q
        parts.append(outer - inner)
    ratio = parts[-1] / parts[-2] if parts[-2] > 0 else math.inf
    total = sum(parts) + (parts[-1] * ratio / (1 - ratio) if ratio < 1 else math.inf)
    return DyadicSeminorm(points, parts, ratio, total)


@dataclass
class ChainReport:
    """The source of ``|x|^-alpha`` is in ``W^{s,p'}`` while ``V`` leaves ``W^{1,2}``."""

    N: int
    p: float
    s: float
    alpha: float
    alpha_tilde: float
    alpha_s: float
    f_seminorms: list[DyadicSeminorm]
    f_drift: float
    f_stable: bool
    v_verdict: str
    v_exponent: float
    holds: bool


def sharpness_chain(N: int = 3, p: float = 3.0, s: float = 0.2, alpha: float | None = None,
                    radius: float = 0.9, ratios: Sequence[int] = (8, 16, 32),
                    drift_tolerance: float = 0.2, levels: tuple[int, ...] = (8,),
                    pair_budget: float = 1e9) -> ChainReport:
    """Pick ``alpha`` between the two thresholds and test both halves of the dichotomy.

    The seminorm of ``f_alpha`` on ``B_R`` is the dyadic series of
    :func:`dyadic_seminorm` at each resolution ``r_k / h`` in ``ratios``; it
    is stable when the totals of the last two resolutions agree to
    ``drift_tolerance`` and the increments between resolutions contract.
    """
    at, as_ = alpha_tilde(N, p), alpha_s(N, p, s)
    if not s < (p - 2) / p:
        raise ValueError("the chain needs s below (p-2)/p")
    alpha = 0.5 * (at + as_) if alpha is None else alpha
    src = source_of_radial_power(N, p, alpha)
    pc = p / (p - 1)
    vals = [dyadic_seminorm(src, N, s, pc, radius, n, pair_budget=pair_budget) for n in ratios]
    tot = [v.total for v in vals]
    drift = abs(tot[-1] - tot[-2]) / abs(tot[-2]) if math.isfinite(tot[-2]) else math.inf
    steps = np.diff(tot) if all(map(math.isfinite, tot)) else [math.inf]
    contracting = all(abs(b) < abs(a) for a, b in zip(steps[:-1], steps[1:]))
    stable = all(v.finite for v in vals) and drift <= drift_tolerance and contracting
    rows = sharpness_sweep(SharpnessSpec(N, p, alpha, s, radius, levels=levels))
    verdict, expo = final_verdict(rows)
    return ChainReport(N, p, s, alpha, at, as_, vals, drift, stable, verdict, expo,
                       stable and verdict != "bounded")


# -- scaling invariance ------------------------------------------------------

@dataclass(frozen=True)
class Rescaled:
    """``x -> amplitude * spec(lam x)``."""
    spec: Any
    lam: float
    amplitude: float = 1.0

    def __call__(self, coords):
        return self.amplitude * self.spec([self.lam * x for x in coords])


@dataclass(frozen=True)
class ScalingCheckSpec:
    """Base case and dilations for the local estimate.

    ``mode="similar"`` shrinks the grid box and spacing with the data, so
    the discrete problems are exact rescalings; ``mode="fixed_extent"`` keeps
    the box and refines the spacing by ``lam``.
    """

    N: int = 2
    p: float = 4.0
    f: Any = Gaussian(0.5)
    ball_radius: float = 1.0
    r: float = 0.5
    R: float = 0.9
    s: float = 0.9
    h: float = 2 ** -4
    half_width: float = 1.25
    eps: float = 1e-8
    lambdas: tuple[float, ...] = (1.0, 2.0)
    mode: str = "similar"
    max_nodes: int = DEFAULT_NODE_BUDGET

    def __post_init__(self):
        if self.mode not in ("similar", "fixed_extent"):
            raise ValueError("mode must be 'similar' or 'fixed_extent'")
        if any(lam <= 0 for lam in self.lambdas):
            raise ValueError("lambdas must be positive")


@dataclass
class ScalingRow:
    lam: float
    lhs: float
    energy_term: float
    source_term: float
    implied_constant: float
    predicted_factor: float
    lhs_factor: float
    rhs_factor: float


@dataclass
class ScalingReport:
    rows: list[ScalingRow]
    max_side_error: float
    constant_drift: float
    exponent: float


def scaling_invariance_check(spec: ScalingCheckSpec) -> ScalingReport:
    """Both sides of the local estimate under ``U -> U(lam x)/lam``, ``f -> lam f(lam x)``.

    Each side should pick up the factor ``lam^(2-N)``.
    """
    rows = []
    base = None
    expo = 2 - spec.N
    for lam in spec.lambdas:
        L = spec.half_width / lam if spec.mode == "similar" else spec.half_width
        grid = build_grid(spec.N, L, spec.h / lam, spec.max_nodes)
        f = sample_field(grid, Rescaled(spec.f, lam, lam))
        ball = Region.ball(spec.ball_radius / lam)
        zero = _zeros(grid)
        prob = DirichletProblem(ball, f, zero, EnergyParams(spec.p, spec.eps))
        sol = solve_dirichlet(prob)
        rep = verify_sobolev_estimate(sol.u_eps, f, spec.p, spec.s, spec.r / lam, spec.R / lam,
                                      spec.eps)
        row = ScalingRow(lam, rep.lhs, rep.rhs_terms["energy"], rep.rhs_terms["source"],
                         rep.implied_constant, lam ** expo, 1.0, 1.0)
        if base is None:
            base = row
        row.lhs_factor = row.lhs / base.lhs / lam ** expo * base.lam ** expo
        row.rhs_factor = ((row.energy_term + row.source_term)
                          / (base.energy_term + base.source_term) / lam ** expo * base.lam ** expo)
        rows.append(row)
    side = max(max(abs(r.lhs_factor - 1), abs(r.rhs_factor - 1)) for r in rows)
    drift = max(abs(r.implied_constant / rows[0].implied_constant - 1) for r in rows)
    return ScalingReport(rows, side, drift, expo)


# -- corpus studies ----------------------------------------------------------

@dataclass
class CorpusRow:
    name: str
    spacings: list[float]
    values: list[float]
    drift: float
    finite: bool


def corpus_study(cases: Sequence[tuple[str, Callable[[float], float]]],
                 spacings: Sequence[float] | Callable[[str], Sequence[float]]) -> list[CorpusRow]:
    """Evaluate each ``(name, fn)`` at every spacing and record the relative drift.

    ``spacings`` may depend on the case name (for mixed-dimension corpora).
    """
    out = []
    for name, fn in cases:
        hs = list(spacings(name) if callable(spacings) else spacings)
        vals = [float(fn(h)) for h in hs]
        finite = bool(np.all(np.isfinite(vals)))
        ref = abs(vals[-2]) if len(vals) > 1 else 1.0
        drift = abs(vals[-1] - vals[-2]) / ref if len(vals) > 1 and ref > 0 else 0.0
        out.append(CorpusRow(name, hs, vals, drift, finite))
    return out


def field_spec(text: str):
    """Analytic field from a config string (see :func:`plapbench.analytic.parse_analytic`)."""
    return parse_analytic(text)
