"""Uniform Cartesian grids, discrete fields and the primitives built on them.

Nodes sit at ``(i - m) * h`` for ``i = 0..2m`` on every axis, so the grid is
symmetric about the origin and always contains it. Scalar fields live either
on nodes or on cell centres; both are zero outside their support and outside
the grid box.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from functools import cached_property
from typing import Callable, Sequence

import numpy as np
import scipy.ndimage as ndi
import scipy.signal
import scipy.sparse as sp

DEFAULT_NODE_BUDGET = 2 ** 24


class NodeBudgetError(ValueError):
    """Raised when a grid would exceed the configured number of nodes."""


class DegenerateKernelWarning(UserWarning):
    """The discrete mollifier collapsed to the identity."""


@dataclass(frozen=True)
class GridSpec:
    dimension: int
    half_width: float
    spacing: float

    @property
    def half_nodes(self) -> int:
        return int(math.floor(self.half_width / self.spacing + 1e-9))

    @property
    def nodes_per_axis(self) -> int:
        return 2 * self.half_nodes + 1

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.nodes_per_axis,) * self.dimension

    @property
    def cell_shape(self) -> tuple[int, ...]:
        return (self.nodes_per_axis - 1,) * self.dimension

    @property
    def size(self) -> int:
        return self.nodes_per_axis ** self.dimension

    @property
    def cell_volume(self) -> float:
        return self.spacing ** self.dimension

    @property
    def extent(self) -> float:
        """Coordinate of the outermost node on each axis."""
        return self.half_nodes * self.spacing

    @cached_property
    def axis(self) -> np.ndarray:
        return (np.arange(self.nodes_per_axis) - self.half_nodes) * self.spacing

    @cached_property
    def cell_axis(self) -> np.ndarray:
        return self.axis[:-1] + 0.5 * self.spacing

    def coords(self, centering: str = "node") -> list[np.ndarray]:
        """Sparse, broadcastable coordinate arrays (``np.ix_`` style)."""
        ax = self.axis if centering == "node" else self.cell_axis
        return list(np.meshgrid(*([ax] * self.dimension), indexing="ij", sparse=True))

    def radius(self, centering: str = "node", center: Sequence[float] | None = None) -> np.ndarray:
        r2 = 0.0
        for j, x in enumerate(self.coords(centering)):
            c = 0.0 if center is None else center[j]
            r2 = r2 + (x - c) ** 2
        return np.sqrt(r2) * np.ones(self.field_shape(centering))

    def field_shape(self, centering: str) -> tuple[int, ...]:
        return self.shape if centering == "node" else self.cell_shape

    def points(self, centering: str = "node") -> np.ndarray:
        """Dense ``(npoints, N)`` array of coordinates in C order."""
        ax = self.axis if centering == "node" else self.cell_axis
        mesh = np.meshgrid(*([ax] * self.dimension), indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)

    def scaled(self, factor: float) -> "GridSpec":
        """The same lattice with every length multiplied by ``factor``."""
        return GridSpec(self.dimension, self.half_width * factor, self.spacing * factor)


def build_grid(N: int, L: float, h_grid: float,
               max_nodes: int = DEFAULT_NODE_BUDGET) -> GridSpec:
    """Symmetric grid of spacing ``h_grid`` covering ``[-L, L]^N``.

    Raises
    ------
    ValueError
        For ``N`` outside ``{1, 2, 3}`` or a non-positive spacing.
    NodeBudgetError
        When the node count would exceed ``max_nodes``.
    """
    if N not in (1, 2, 3):
        raise ValueError(f"dimension must be 1, 2 or 3, got {N}")
    if not h_grid > 0:
        raise ValueError(f"grid spacing must be positive, got {h_grid}")
    if not h_grid < L:
        raise ValueError(f"grid spacing {h_grid} must be smaller than the half width {L}")
    per_axis = 2 * math.floor(L / h_grid + 1e-9) + 1
    if float(per_axis) ** N > max_nodes:
        raise NodeBudgetError(
            f"grid with {per_axis}^{N} nodes exceeds the node budget of {max_nodes}")
    return GridSpec(int(N), float(L), float(h_grid))


@dataclass(frozen=True)
class Region:
    """Ball, annulus or axis-aligned box (``radius`` is the half side)."""

    kind: str = "ball"
    radius: float = 1.0
    center: tuple = ()
    inner_radius: float = 0.0

    def __post_init__(self):
        if self.kind not in ("ball", "annulus", "box"):
            raise ValueError(f"unknown region kind {self.kind!r}")
        if not self.radius > 0:
            raise ValueError("region radius must be positive")
        if self.kind == "annulus" and not 0 < self.inner_radius < self.radius:
            raise ValueError("annulus inner radius must lie in (0, radius)")

    @classmethod
    def ball(cls, radius: float, center: Sequence[float] = ()) -> "Region":
        return cls("ball", float(radius), tuple(center))

    @classmethod
    def box(cls, half_side: float, center: Sequence[float] = ()) -> "Region":
        return cls("box", float(half_side), tuple(center))

    @classmethod
    def annulus(cls, inner: float, outer: float, center: Sequence[float] = ()) -> "Region":
        return cls("annulus", float(outer), tuple(center), float(inner))

    def center_of(self, dim: int) -> np.ndarray:
        c = np.zeros(dim)
        c[: len(self.center)] = self.center
        return c

    def contains(self, coords: Sequence[np.ndarray], strict: bool = False) -> np.ndarray:
        """Membership mask for broadcastable coordinate arrays.

        The closed region is used unless ``strict``; a relative slack of
        1e-12 keeps nodes that sit exactly on the boundary inside.
        """
        c = self.center_of(len(coords))
        tol = 1e-12 * self.radius
        if self.kind == "box":
            d = 0.0
            for j, x in enumerate(coords):
                d = np.maximum(d, np.abs(x - c[j]))
        else:
            d2 = 0.0
            for j, x in enumerate(coords):
                d2 = d2 + (x - c[j]) ** 2
            d = np.sqrt(d2)
        shape = np.broadcast(*coords).shape
        mask = d < self.radius - tol if strict else d <= self.radius + tol
        if self.kind == "annulus":
            mask = mask & (d >= self.inner_radius - tol)
        return np.broadcast_to(mask, shape).copy()

    def grown(self, amount: float) -> "Region":
        if self.kind == "annulus":
            inner = self.inner_radius - amount
            if inner <= 0:
                return Region("ball", self.radius + amount, self.center)
            return Region("annulus", self.radius + amount, self.center, inner)
        return Region(self.kind, self.radius + amount, self.center)

    def scaled(self, factor: float) -> "Region":
        return Region(self.kind, self.radius * factor, tuple(c * factor for c in self.center),
                      self.inner_radius * factor)

    def volume(self, dim: int) -> float:
        if self.kind == "box":
            return (2 * self.radius) ** dim
        unit = math.pi ** (dim / 2) / math.gamma(dim / 2 + 1)
        vol = unit * self.radius ** dim
        if self.kind == "annulus":
            vol -= unit * self.inner_radius ** dim
        return vol

    def inside_box(self, grid: GridSpec) -> bool:
        c = self.center_of(grid.dimension)
        return bool(np.all(np.abs(c) + self.radius <= grid.extent * (1 + 1e-12)))

    def describe(self) -> str:
        s = f"{self.kind}(R={self.radius:g}"
        if self.kind == "annulus":
            s += f", r={self.inner_radius:g}"
        if self.center:
            s += f", c={tuple(self.center)}"
        return s + ")"


@dataclass(frozen=True, eq=False)
class ScalarField:
    """Values on the nodes (or cell centres) of a grid, zero off ``support``."""

    grid: GridSpec
    values: np.ndarray
    support: Region | None = None
    centering: str = "node"

    def __post_init__(self):
        if self.centering not in ("node", "cell"):
            raise ValueError("centering must be 'node' or 'cell'")
        vals = np.array(self.values, dtype=float)
        expected = self.grid.field_shape(self.centering)
        if vals.shape != expected:
            raise ValueError(f"values have shape {vals.shape}, grid expects {expected}")
        if not np.all(np.isfinite(vals)):
            raise ValueError("field values must be finite")
        if self.support is not None:
            vals[~self.support.contains(self.grid.coords(self.centering))] = 0.0
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    @property
    def dimension(self) -> int:
        return self.grid.dimension

    def coords(self) -> list[np.ndarray]:
        return self.grid.coords(self.centering)

    def at(self, index: Sequence[int]) -> float:
        """Value at an integer index; zero outside the grid (zero extension)."""
        idx = tuple(int(i) for i in index)
        if any(i < 0 or i >= n for i, n in zip(idx, self.values.shape)):
            return 0.0
        return float(self.values[idx])

    def replace(self, values: np.ndarray, support: Region | None | str = "keep") -> "ScalarField":
        sup = self.support if support == "keep" else support
        return ScalarField(self.grid, values, sup, self.centering)

    def _combine(self, other: "ScalarField", op) -> "ScalarField":
        if other.grid != self.grid or other.centering != self.centering:
            raise ValueError("fields live on different grids")
        sup = self.support if self.support == other.support else None
        return ScalarField(self.grid, op(self.values, other.values), sup, self.centering)

    def __add__(self, other):
        return self._combine(other, np.add)

    def __sub__(self, other):
        return self._combine(other, np.subtract)

    def __mul__(self, scalar):
        return ScalarField(self.grid, self.values * float(scalar), self.support, self.centering)

    __rmul__ = __mul__

    def __neg__(self):
        return self * -1.0


@dataclass(frozen=True, eq=False)
class VectorField:
    """``N`` cell-centred scalar components."""

    grid: GridSpec
    components: tuple[ScalarField, ...]

    def __post_init__(self):
        if len(self.components) != self.grid.dimension:
            raise ValueError("a vector field needs one component per dimension")
        object.__setattr__(self, "components", tuple(self.components))

    def stacked(self) -> np.ndarray:
        return np.stack([c.values for c in self.components])

    def magnitude(self) -> np.ndarray:
        return np.sqrt(np.sum(self.stacked() ** 2, axis=0))


@dataclass(frozen=True)
class MollifierSpec:
    """Normalised bump ``exp(-1/(1-|x|^2))`` rescaled to ``radius``."""

    radius: float
    profile: str = "bump"

    def kernel(self, grid: GridSpec) -> np.ndarray:
        h = grid.spacing
        k = int(math.floor(self.radius / h))
        ax = np.arange(-k, k + 1) * h
        mesh = np.meshgrid(*([ax] * grid.dimension), indexing="ij", sparse=True)
        r = np.sqrt(sum(m ** 2 for m in mesh)) / self.radius if self.radius > 0 else None
        if r is None:
            return np.ones((1,) * grid.dimension)
        w = np.zeros(np.broadcast(*mesh).shape)
        inside = r < 1.0
        w[inside] = np.exp(-1.0 / (1.0 - r[inside] ** 2))
        return w / w.sum()


def sample_field(grid: GridSpec, spec: Callable, support: Region | None = None,
                 singularity: str = "raise", centering: str = "node") -> ScalarField:
    """Evaluate an analytic spec at every node (or cell centre).

    ``singularity="clip"`` replaces non-finite values of a radial spec by the
    value at radius ``h_grid`` (the first shell). Any other policy raises on
    non-finite values inside the support.
    """
    coords = grid.coords(centering)
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        vals = np.asarray(spec(coords), dtype=float) * np.ones(grid.field_shape(centering))
    mask = np.ones(vals.shape, bool) if support is None else support.contains(coords)
    bad = ~np.isfinite(vals) & mask
    if np.any(bad):
        if singularity != "clip" or not hasattr(spec, "at_radius"):
            raise ValueError("analytic field is not finite on the support; "
                             "pass singularity='clip' for radial power specs")
        vals[bad] = spec.at_radius(grid.spacing)
    vals[~mask] = 0.0
    return ScalarField(grid, vals, support, centering)


def gradient(u: ScalarField) -> VectorField:
    """Cell-centred gradient of a node field.

    Component ``j`` on a cell is the mean of the forward differences along the
    ``2^(N-1)`` cell edges parallel to axis ``j``; exact for affine fields.
    """
    if u.centering != "node":
        raise ValueError("gradient expects a node-centred field")
    if u.grid.nodes_per_axis < 2:
        raise ValueError("gradient needs at least two nodes per axis")
    h = u.grid.spacing
    comps = []
    for j in range(u.dimension):
        d = np.diff(u.values, axis=j) / h
        for k in range(u.dimension):
            if k != j:
                d = 0.5 * (np.take(d, np.arange(d.shape[k] - 1), axis=k)
                           + np.take(d, np.arange(1, d.shape[k]), axis=k))
        comps.append(ScalarField(u.grid, d, None, "cell"))
    return VectorField(u.grid, tuple(comps))


def corner_gradients(values: np.ndarray, h: float) -> list[np.ndarray]:
    """Per-cell gradients seen from each of the ``2^N`` cell corners.

    Entry ``c`` (a corner bit pattern, axis 0 most significant) is an array of
    shape ``(N, *cell_shape)`` whose component ``j`` is the difference along the
    cell edge that leaves corner ``c`` in direction ``j``. Each is exact for
    affine data; their average recovers :func:`gradient`.
    """
    dim = values.ndim
    n = values.shape[0]
    out = []
    for corner in range(2 ** dim):
        bits = [(corner >> (dim - 1 - j)) & 1 for j in range(dim)]
        comps = []
        for j in range(dim):
            lo = [slice(b, b + n - 1) for b in bits]
            hi = list(lo)
            hi[j] = slice(0, n - 1) if bits[j] else slice(1, n)
            sign = -1.0 if bits[j] else 1.0
            comps.append(sign * (values[tuple(hi)] - values[tuple(lo)]) / h)
        out.append(np.stack(comps))
    return out


def corner_gradient_operators(grid: GridSpec) -> list[list[sp.csr_matrix]]:
    """Sparse versions of :func:`corner_gradients` (cells x nodes)."""
    dim = grid.dimension
    n = grid.nodes_per_axis
    h = grid.spacing
    node_index = np.arange(grid.size).reshape(grid.shape)
    ncell = (n - 1) ** dim
    rows = np.arange(ncell)
    ops = []
    for corner in range(2 ** dim):
        bits = [(corner >> (dim - 1 - j)) & 1 for j in range(dim)]
        lo = node_index[tuple(slice(b, b + n - 1) for b in bits)].ravel()
        per_axis = []
        for j in range(dim):
            sl = [slice(b, b + n - 1) for b in bits]
            sl[j] = slice(0, n - 1) if bits[j] else slice(1, n)
            hi = node_index[tuple(sl)].ravel()
            sign = -1.0 if bits[j] else 1.0
            data = np.concatenate([np.full(ncell, sign / h), np.full(ncell, -sign / h)])
            mat = sp.csr_matrix((data, (np.concatenate([rows, rows]), np.concatenate([hi, lo]))),
                                shape=(ncell, grid.size))
            per_axis.append(mat)
        ops.append(per_axis)
    return ops


def forward_difference_operators(grid: GridSpec) -> list[sp.csr_matrix]:
    """Node-to-node forward differences ``(u(x + h e_j) - u(x)) / h``.

    Values beyond the grid box are zero, so these are exact for fields whose
    support stays inside the box.
    """
    n = grid.nodes_per_axis
    h = grid.spacing
    d1 = sp.diags([-np.ones(n), np.ones(n - 1)], [0, 1], shape=(n, n)) / h
    eye = sp.identity(n, format="csr")
    ops = []
    for j in range(grid.dimension):
        mats = [eye] * grid.dimension
        mats[j] = d1
        op = mats[0]
        for m in mats[1:]:
            op = sp.kron(op, m)
        ops.append(sp.csr_matrix(op))
    return ops


def region_mask(grid: GridSpec, region: Region | None, centering: str = "node",
                strict: bool = False) -> np.ndarray:
    if region is None:
        return np.ones(grid.field_shape(centering), bool)
    return region.contains(grid.coords(centering), strict=strict)


def mask_volume(grid: GridSpec, region: Region, centering: str = "node") -> float:
    return float(region_mask(grid, region, centering).sum() * grid.cell_volume)


def integrate(u: ScalarField, region: Region | None = None, power: float = 1.0,
              return_volume: bool = False):
    """Midpoint rule for ``int_region |u|^power``.

    Sums over the cells (dual cells for node fields) whose centres lie in the
    closed region. With ``return_volume`` the mask volume is returned too, so
    callers can record the O(h) geometric error of the mask.
    """
    if power < 1:
        raise ValueError("power must be >= 1")
    if region is not None and not region.inside_box(u.grid):
        raise ValueError(f"region {region.describe()} escapes the grid box "
                         f"[-{u.grid.extent:g}, {u.grid.extent:g}]^{u.dimension}")
    mask = region_mask(u.grid, region, u.centering)
    val = float(np.sum(np.abs(u.values[mask]) ** power) * u.grid.cell_volume)
    if return_volume:
        return val, float(mask.sum() * u.grid.cell_volume)
    return val


def mollify(u: ScalarField, m: MollifierSpec) -> ScalarField:
    """Discrete convolution with the normalised kernel of ``m``.

    A kernel that only sees the centre node (``radius <= h_grid``) leaves the
    field unchanged and emits :class:`DegenerateKernelWarning`.
    """
    kern = m.kernel(u.grid)
    support = None if u.support is None else u.support.grown(m.radius)
    if kern.size == 1:
        warnings.warn(f"mollifier radius {m.radius:g} does not exceed the grid spacing "
                      f"{u.grid.spacing:g}; kernel is the identity",
                      DegenerateKernelWarning, stacklevel=2)
        return ScalarField(u.grid, u.values, u.support, u.centering)
    if kern.size <= 7 ** u.dimension:
        out = ndi.convolve(u.values, kern, mode="constant", cval=0.0)
    else:
        out = scipy.signal.fftconvolve(u.values, kern, mode="same")
        out[np.abs(out) < 1e-15 * max(1.0, np.abs(u.values).max())] = 0.0
    if support is not None and not support.inside_box(u.grid):
        support = None
    return ScalarField(u.grid, out, support, u.centering)


def dilate(u: ScalarField, t: float, radius: float | None = None) -> ScalarField:
    """``v_t(x) = u(R x / (R - t))`` by multilinear interpolation.

    ``u`` must be supported in a ball ``B_R`` (taken from ``u.support`` unless
    ``radius`` is given) and ``0 < t <= R/2``; the result vanishes outside
    ``B_{R-t}``.
    """
    if radius is None:
        if u.support is None or u.support.kind != "ball":
            raise ValueError("dilate needs a field supported in a ball")
        radius = u.support.radius
        center = u.support.center_of(u.dimension)
    else:
        center = np.zeros(u.dimension)
    if not 0 < t <= radius / 2:
        raise ValueError(f"dilation parameter t={t} must lie in (0, R/2] with R={radius}")
    g = u.grid
    scale = radius / (radius - t)
    coords = g.coords(u.centering)
    offset = g.half_nodes if u.centering == "node" else g.half_nodes - 0.5
    idx = [((x - center[j]) * scale + center[j]) / g.spacing + offset for j, x in enumerate(coords)]
    idx = np.broadcast_arrays(*idx)
    vals = ndi.map_coordinates(u.values, np.stack(idx), order=1, mode="constant", cval=0.0)
    new_support = Region("ball", radius - t, tuple(center))
    vals[~new_support.contains(coords, strict=True)] = 0.0
    return ScalarField(g, vals, new_support, u.centering)
