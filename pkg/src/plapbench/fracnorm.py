"""Finite differences, fractional seminorms and the embedding checkers.

All seminorms are taken over the whole lattice with zero extension unless a
region is given. Sup-type seminorms (Nikolskii, Besov) are maxima over a
finite shift ladder and are therefore lower bounds of the continuum sup;
the ladder used is returned in the result metadata.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Sequence

import numpy as np
from scipy import special

from ._kernels import pair_sum
from .grid import GridSpec, Region, ScalarField, forward_difference_operators
from .report import implied_constant

DEFAULT_PAIR_BUDGET = 4 * 10 ** 8
FAMILIES = ("nikolskii", "besov", "slobodeckii")


class PairBudgetError(RuntimeError):
    """The Gagliardo double sum would exceed the configured pair budget."""


@dataclass(frozen=True)
class LatticeShift:
    offset: tuple[int, ...]
    spacing: float

    def __post_init__(self):
        if not any(self.offset):
            raise ValueError("a lattice shift needs a nonzero offset")

    @property
    def h(self) -> np.ndarray:
        return np.asarray(self.offset, dtype=float) * self.spacing

    @property
    def magnitude(self) -> float:
        return float(np.linalg.norm(self.h))


def _directions(dim: int, diagonals: bool) -> list[tuple[int, ...]]:
    dirs = [tuple(int(i == j) for i in range(dim)) for j in range(dim)]
    if diagonals:
        for signs in itertools.product((-1, 0, 1), repeat=dim):
            nz = [s for s in signs if s]
            if len(nz) >= 2 and nz[0] == 1:
                dirs.append(signs)
    return dirs


def shift_ladder(grid: GridSpec, max_length: float | None = None,
                 diagonals: bool = True) -> list[LatticeShift]:
    """Dyadic ladder ``2^k`` times axis and (optionally) diagonal directions.

    Directions are taken from a half space since ``||delta_h u||`` is even
    in ``h``. Shifts longer than ``max_length`` (default: the grid width)
    are dropped.
    """
    if max_length is None:
        max_length = 2 * grid.extent
    out = []
    for d in _directions(grid.dimension, diagonals):
        k = 1
        while True:
            s = LatticeShift(tuple(k * c for c in d), grid.spacing)
            if s.magnitude > max_length * (1 + 1e-12):
                break
            out.append(s)
            k *= 2
    return sorted(out, key=lambda s: (s.magnitude, s.offset))


@dataclass(frozen=True)
class SeminormParams:
    beta: float
    q: float
    family: str = "slobodeckii"
    shifts: tuple[LatticeShift, ...] | None = None

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown seminorm family {self.family!r}")
        if not self.q >= 1:
            raise ValueError(f"q must be >= 1, got {self.q}")
        lo, hi, closed = {"nikolskii": (0, 1, True), "besov": (0, 2, False),
                          "slobodeckii": (0, 1, False)}[self.family]
        ok = lo < self.beta <= hi if closed else lo < self.beta < hi
        if not ok:
            bracket = "]" if closed else ")"
            raise ValueError(f"beta out of ({lo},{hi}{bracket} for {self.family}: {self.beta}")


@dataclass
class SeminormResult:
    """A seminorm value plus the metadata needed to reproduce it."""

    family: str
    beta: float
    q: float
    value: float
    region: str = "all-space"
    grid_spacing: float = float("nan")
    shift_ladder: list = field(default_factory=list)
    argmax_shift: tuple = ()
    pair_count: int = 0

    def __float__(self) -> float:
        return self.value


def _shifted(values: np.ndarray, offset: Sequence[int], pad: int) -> np.ndarray:
    """``values`` zero-padded by ``pad`` and sampled at ``x + offset``."""
    big = np.pad(values, pad)
    sl = tuple(slice(pad + o, pad + o + n) for o, n in zip(offset, values.shape))
    return big[sl]


def _difference_padded(values: np.ndarray, offset: Sequence[int], order: int) -> np.ndarray:
    """Difference of the zero extension, on a box that contains its support."""
    reach = order * max(abs(o) for o in offset)
    base = np.pad(values, reach)
    big = np.pad(values, 2 * reach)

    def at(mult):
        sl = tuple(slice(reach + mult * o, reach + mult * o + n)
                   for o, n in zip(offset, base.shape))
        return big[sl]

    if order == 1:
        return at(1) - base
    return at(2) + base - 2 * at(1)


def finite_difference(u: ScalarField, h: LatticeShift, order: int = 1) -> ScalarField:
    """``delta_h u`` (order 1) or ``delta_h^2 u`` (order 2) on the same grid.

    The result is exact on the lattice. Raises if part of the difference
    would fall outside the grid box; the seminorms below pad internally
    and never hit this.
    """
    if order not in (1, 2):
        raise ValueError("order must be 1 or 2")
    if len(h.offset) != u.dimension:
        raise ValueError("shift dimension does not match the field")
    full = _difference_padded(u.values, h.offset, order)
    reach = order * max(abs(o) for o in h.offset)
    inner = tuple(slice(reach, reach + n) for n in u.values.shape)
    kept = full[inner]
    lost = np.abs(full).sum() - np.abs(kept).sum()
    if lost > 1e-12 * max(1.0, np.abs(full).sum()):
        raise ValueError("finite difference leaves the grid box; enlarge the grid")
    return ScalarField(u.grid, kept, None, u.centering)


def lq_norm(u: ScalarField | np.ndarray, q: float, cell_volume: float | None = None) -> float:
    if isinstance(u, ScalarField):
        cell_volume = u.grid.cell_volume
        u = u.values
    return float((np.sum(np.abs(u) ** q) * cell_volume) ** (1.0 / q))


def _sup_seminorm(u: ScalarField, prm: SeminormParams, family: str, order: int,
                  details: bool):
    shifts = prm.shifts if prm.shifts is not None else shift_ladder(u.grid)
    if not shifts:
        raise ValueError("shift set is empty")
    vol = u.grid.cell_volume
    best, arg = 0.0, ()
    ladder = []
    if np.any(u.values):
        for s in shifts:
            d = _difference_padded(u.values, s.offset, order)
            ratio = lq_norm(d, prm.q, vol) / s.magnitude ** prm.beta
            ladder.append([list(s.offset), s.magnitude, ratio])
            if ratio > best:
                best, arg = ratio, s.offset
    if not details:
        return best
    return SeminormResult(family, prm.beta, prm.q, best, "all-space", u.grid.spacing,
                          ladder, tuple(arg))


def nikolskii_seminorm(u: ScalarField, prm: SeminormParams, details: bool = False):
    """``max_h ||delta_h u||_{L^q} / |h|^beta`` over the shift ladder."""
    return _sup_seminorm(u, prm, "nikolskii", 1, details)


def besov_seminorm(u: ScalarField, prm: SeminormParams, details: bool = False):
    """``max_h ||delta_h^2 u||_{L^q} / |h|^beta`` over the shift ladder."""
    return _sup_seminorm(u, prm, "besov", 2, details)


# -- Gagliardo double sum ----------------------------------------------------

@lru_cache(maxsize=64)
def lattice_zeta(dim: int, s: float) -> float:
    """``sum_{k in Z^N, k != 0} |k|^{-(N + s)}`` for ``s > 0``.

    Exact via the Riemann zeta in one dimension; in two and three dimensions
    a direct sum over a large ball plus the integral tail, with the tail
    radius matched to the lattice point count.
    """
    if s <= 0:
        raise ValueError("lattice zeta needs s > 0")
    if dim == 1:
        return float(2 * special.zeta(1 + s))
    kr = 400 if dim == 2 else 60
    ax = np.arange(-kr, kr + 1, dtype=float)
    total = 0.0
    count = 0
    if dim == 2:
        r2 = ax[:, None] ** 2 + ax[None, :] ** 2
        inside = (r2 <= kr * kr) & (r2 > 0)
        total = float(np.sum(r2[inside] ** (-(dim + s) / 2)))
        count = int(inside.sum()) + 1
    else:
        for x in ax:
            r2 = x * x + ax[:, None] ** 2 + ax[None, :] ** 2
            inside = (r2 <= kr * kr) & (r2 > 0)
            total += float(np.sum(r2[inside] ** (-(dim + s) / 2)))
            count += int(inside.sum()) + (1 if x == 0 else 0)
    unit = math.pi ** (dim / 2) / math.gamma(dim / 2 + 1)
    rho = (count / unit) ** (1.0 / dim)
    area = dim * unit
    return total + area * rho ** (-s) / s


def _kernel_table(span: Sequence[int], exponent: float) -> tuple[np.ndarray, np.ndarray]:
    axes = [np.arange(n, dtype=float) for n in span]
    r2 = 0.0
    for j, a in enumerate(axes):
        shape = [1] * len(axes)
        shape[j] = a.size
        r2 = r2 + a.reshape(shape) ** 2
    with np.errstate(divide="ignore"):
        table = np.where(r2 > 0, r2 ** (-exponent / 2), 0.0)
    strides = np.array([int(np.prod(span[j + 1:])) for j in range(len(span))], dtype=np.int64)
    return np.ascontiguousarray(table.ravel()), strides


def _is_cube_symmetric(values: np.ndarray) -> bool:
    # rounding in |x|^2 differs between mirrored nodes, hence the tolerance
    atol = 1e-13 * float(np.max(np.abs(values), initial=0.0))

    def same(other):
        return np.allclose(values, other, rtol=1e-13, atol=atol)

    if len(set(values.shape)) > 1:
        return False
    for ax in range(values.ndim):
        if not same(np.flip(values, axis=ax)):
            return False
    for perm in itertools.permutations(range(values.ndim)):
        if not same(np.transpose(values, perm)):
            return False
    return True


def _orbit_weights(doubled: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Fundamental-domain rows and hyperoctahedral orbit sizes.

    ``doubled`` holds twice the coordinates relative to the symmetry centre,
    so cell centres are integers too.
    """
    dim = doubled.shape[1]
    fund = np.all(doubled >= 0, axis=1)
    for j in range(dim - 1):
        fund &= doubled[:, j] <= doubled[:, j + 1]
    rows = np.flatnonzero(fund)
    pts = doubled[rows]
    w = np.empty(rows.size)
    for i, c in enumerate(pts):
        _, counts = np.unique(c, return_counts=True)
        perms = math.factorial(dim) // math.prod(math.factorial(k) for k in counts)
        w[i] = perms * 2 ** int(np.count_nonzero(c))
    return rows, w


def slobodeckii_seminorm(u: ScalarField, prm: SeminormParams, region: Region | None = None,
                         pair_budget: float = DEFAULT_PAIR_BUDGET, symmetry: str = "auto",
                         details: bool = False):
    """Gagliardo seminorm by a midpoint double sum over lattice points.

    With ``region=None`` the integral is over all of space for the zero
    extension of ``u``: pairs inside the support are summed directly and the
    pairs with one point outside are summed in closed form through
    :func:`lattice_zeta`. With a region only pairs of points in the region
    count. The diagonal is always excluded.

    ``symmetry="auto"`` detects fields invariant under the symmetries of the
    cube (and a region centred at the origin) and sums the outer loop over a
    fundamental domain; the result is the same up to rounding.
    """
    if prm.family != "slobodeckii":
        raise ValueError("slobodeckii_seminorm needs family='slobodeckii'")
    g = u.grid
    dim = g.dimension
    exponent = dim + prm.beta * prm.q
    if region is None:
        mask = u.values != 0
        label = "all-space"
    else:
        mask = region.contains(g.coords(u.centering))
        label = region.describe()
    idx = np.argwhere(mask).astype(np.int64)
    vals = np.ascontiguousarray(u.values[mask], dtype=float)
    m = idx.shape[0]
    result = SeminormResult("slobodeckii", prm.beta, prm.q, 0.0, label, g.spacing)
    if m == 0 or (region is not None and np.ptp(vals) == 0 and m > 0):
        return result if details else 0.0

    outer = np.arange(m, dtype=np.int64)
    weights = np.ones(m)
    centred = region is None or not region.center or not np.any(region.center)
    if symmetry == "auto" and centred and dim > 1 and _is_cube_symmetric(u.values):
        centre = np.array(u.values.shape) - 1
        outer, weights = _orbit_weights(2 * idx - centre)
    pairs = int(outer.size) * m
    result.pair_count = pairs
    if pairs > pair_budget:
        raise PairBudgetError(f"double sum needs {pairs:.3g} pair evaluations, over the "
                              f"pair budget of {pair_budget:.3g}")
    span = tuple(int(np.ptp(idx[:, j])) + 1 for j in range(dim))
    table, strides = _kernel_table(span, exponent)
    shifted = np.ascontiguousarray(idx - idx.min(axis=0))
    total, rowsum = pair_sum(shifted, vals, outer, weights, table, strides, float(prm.q))
    if region is None:
        z = lattice_zeta(dim, prm.beta * prm.q)
        total += 2.0 * float(np.sum(weights * np.abs(vals[outer]) ** prm.q * (z - rowsum)))
    scaled = max(total, 0.0) * g.spacing ** (dim - prm.beta * prm.q)
    result.value = scaled ** (1.0 / prm.q)
    return result if details else result.value


# -- embeddings --------------------------------------------------------------

EMBEDDINGS = ("2.2", "2.3", "2.4a", "2.4b")


@dataclass
class EmbeddingReport:
    """One side-by-side evaluation of an embedding inequality.

    ``implied_constant`` is ``lhs / rhs`` with the explicit parameter
    prefactor kept separately in ``prefactor``, so
    ``lhs <= C * prefactor * rhs`` holds with ``C = implied_constant / prefactor``.
    """

    which: str
    lhs: float
    rhs: float
    prefactor: float
    implied_constant: float
    degenerate: bool = False
    violation: bool = False
    parameters: dict = field(default_factory=dict)
    terms: dict = field(default_factory=dict)

    @property
    def normalized_constant(self) -> float:
        return self.implied_constant / self.prefactor


def nodal_gradient(u: ScalarField) -> list[ScalarField]:
    """Forward differences ``(u(x + h e_j) - u(x)) / h`` as node fields.

    Computed on a grid padded by one node so nothing is lost at the edge; the
    returned fields live on that padded grid.
    """
    g = u.grid
    big = GridSpec(g.dimension, g.half_width + g.spacing, g.spacing)
    vals = np.pad(u.values, 1)
    ops = forward_difference_operators(big)
    return [ScalarField(big, (d @ vals.ravel()).reshape(big.shape)) for d in ops]


def check_embedding(u: ScalarField, which: str, beta: float, q: float,
                    alpha: float | None = None, shifts=None) -> EmbeddingReport:
    """Evaluate one of the fractional embedding inequalities on ``u``.

    ``which`` selects

    * ``"2.2"``: ``[u]_N(beta,q) <= C/(1-beta) [u]_B(beta,q)``
    * ``"2.3"``: ``[u]_W(alpha,q)^q <= C beta/((beta-alpha) alpha)
      ([u]_N(beta,q)^q)^(alpha/beta) (||u||_q^q)^((beta-alpha)/beta)``
    * ``"2.4a"``: ``||grad u||_q^q <= C beta^(-(beta+q)/(beta+1))
      (||u||_q^q)^(beta/(beta+1)) ([u]_B(1+beta,q)^q)^(1/(beta+1))``
    * ``"2.4b"``: ``[grad u]_W(alpha,q)^q <= C ([u]_B(1+beta,q)^q)^((alpha+1)/(beta+1))
      (||u||_q^q)^((beta-alpha)/(beta+1))``

    The gradient is the nodal forward difference; vector quantities add the
    ``q``-th powers of their components.
    """
    if which not in EMBEDDINGS:
        raise ValueError(f"unknown embedding {which!r}; expected one of {EMBEDDINGS}")
    needs_alpha = which != "2.2"
    if needs_alpha and (alpha is None or not 0 < alpha < beta < 1):
        raise ValueError("need 0 < alpha < beta < 1")
    if which == "2.2" and not 0 < beta < 1:
        raise ValueError("need 0 < beta < 1")
    norm_q = lq_norm(u, q) ** q
    terms: dict[str, float] = {"lq_norm_q": norm_q}
    if which == "2.2":
        lhs = nikolskii_seminorm(u, SeminormParams(beta, q, "nikolskii", shifts))
        rhs = besov_seminorm(u, SeminormParams(beta, q, "besov", shifts))
        terms.update(nikolskii=lhs, besov=rhs)
        prefactor = 1.0 / (1.0 - beta)
    elif which == "2.3":
        lhs = slobodeckii_seminorm(u, SeminormParams(alpha, q)) ** q
        nik = nikolskii_seminorm(u, SeminormParams(beta, q, "nikolskii", shifts)) ** q
        rhs = nik ** (alpha / beta) * norm_q ** ((beta - alpha) / beta)
        terms.update(slobodeckii_q=lhs, nikolskii_q=nik)
        prefactor = beta / ((beta - alpha) * alpha)
    else:
        bes = besov_seminorm(u, SeminormParams(1 + beta, q, "besov", shifts)) ** q
        terms["besov_q"] = bes
        grads = nodal_gradient(u)
        if which == "2.4a":
            lhs = sum(lq_norm(gj, q) ** q for gj in grads)
            rhs = norm_q ** (beta / (beta + 1)) * bes ** (1 / (beta + 1))
            prefactor = beta ** (-(beta + q) / (beta + 1))
        else:
            lhs = sum(slobodeckii_seminorm(gj, SeminormParams(alpha, q)) ** q for gj in grads)
            rhs = bes ** ((alpha + 1) / (beta + 1)) * norm_q ** ((beta - alpha) / (beta + 1))
            prefactor = 1.0
        terms["lhs"] = lhs
    ratio, degenerate = implied_constant(lhs, rhs)
    return EmbeddingReport(which, float(lhs), float(rhs), float(prefactor), float(ratio),
                           degenerate, degenerate and lhs > 0,
                           {"alpha": alpha, "beta": beta, "q": q, "h_grid": u.grid.spacing},
                           terms)
