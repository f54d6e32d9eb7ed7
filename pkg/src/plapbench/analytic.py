"""Closed-form scalar functions that can be sampled on a grid.

Each spec is a small frozen dataclass taking a list of broadcastable
coordinate arrays (as returned by ``GridSpec.coords``). ``parse_analytic``
turns strings such as ``"bump(radius=0.8)"`` into specs for the CLI.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, fields

import numpy as np


def _radius(coords, center=None):
    r2 = 0.0
    for j, x in enumerate(coords):
        c = 0.0 if center is None else center[j]
        r2 = r2 + (x - c) ** 2
    return np.sqrt(r2)


@dataclass(frozen=True)
class Constant:
    value: float = 1.0

    def __call__(self, coords):
        return np.full(np.broadcast(*coords).shape, float(self.value))


@dataclass(frozen=True)
class Affine:
    """``offset + sum_j slope_j x_j``; a scalar slope acts on the first axis."""
    slope: tuple | float = 1.0
    offset: float = 0.0

    def __call__(self, coords):
        s = np.atleast_1d(np.asarray(self.slope, dtype=float))
        out = np.full(np.broadcast(*coords).shape, float(self.offset))
        for j, x in enumerate(coords[: s.size]):
            out = out + s[j] * x
        return out


@dataclass(frozen=True)
class Quadratic:
    """``scale * |x|^2``."""
    scale: float = 1.0

    def __call__(self, coords):
        return self.scale * _radius(coords) ** 2


@dataclass(frozen=True)
class Hat:
    """Radial tent ``height * max(0, 1 - |x - center| / radius)``."""
    radius: float = 1.0
    height: float = 1.0
    center: tuple = ()

    def __call__(self, coords):
        r = _radius(coords, self.center or None)
        return self.height * np.maximum(0.0, 1.0 - r / self.radius)


@dataclass(frozen=True)
class Bump:
    """Smooth compactly supported ``exp(1 - 1/(1 - |x|^2/radius^2))``."""
    radius: float = 1.0
    height: float = 1.0
    center: tuple = ()

    def __call__(self, coords):
        r = _radius(coords, self.center or None) / self.radius
        out = np.zeros_like(r)
        inside = r < 1.0
        out[inside] = np.exp(1.0 - 1.0 / (1.0 - r[inside] ** 2))
        return self.height * out


@dataclass(frozen=True)
class Gaussian:
    width: float = 0.3
    height: float = 1.0
    center: tuple = ()

    def __call__(self, coords):
        r = _radius(coords, self.center or None)
        return self.height * np.exp(-0.5 * (r / self.width) ** 2)


@dataclass(frozen=True)
class Indicator:
    """Indicator of ``lower <= x_axis <= upper`` intersected with ``|x| <= radius``."""
    lower: float = 0.0
    upper: float = 1.0
    axis: int = 0
    radius: float = np.inf

    def __call__(self, coords):
        x = coords[self.axis]
        shape = np.broadcast(*coords).shape
        inside = np.broadcast_to((x >= self.lower - 1e-12) & (x <= self.upper + 1e-12), shape)
        if np.isfinite(self.radius):
            inside = inside & (_radius(coords) <= self.radius + 1e-12)
        return inside.astype(float)


@dataclass(frozen=True)
class Cosine:
    """``cos(freq * x_axis + phase)`` times an optional smooth window of given radius."""
    freq: float = np.pi
    phase: float = 0.0
    axis: int = 0
    window: float = 0.0

    def __call__(self, coords):
        out = np.cos(self.freq * coords[self.axis] + self.phase) * np.ones(
            np.broadcast(*coords).shape)
        if self.window > 0:
            out = out * Bump(radius=self.window)(coords)
        return out


@dataclass(frozen=True)
class RadialPower:
    """``scale * |x|^(-alpha)``, optionally times a smooth cutoff of radius ``cutoff``.

    Singular at the origin when ``alpha > 0``; ``sample_field`` applies the
    grid's singularity policy there.
    """
    alpha: float = 0.5
    scale: float = 1.0
    cutoff: float = 0.0

    @property
    def singular(self) -> bool:
        return self.alpha > 0

    def __call__(self, coords):
        r = _radius(coords)
        with np.errstate(divide="ignore", invalid="ignore"):
            out = self.scale * r ** (-self.alpha)
        if self.alpha == 0:
            out = np.full_like(r, self.scale)
        if self.cutoff > 0:
            out = out * np.where(r < self.cutoff, (1.0 - (r / self.cutoff) ** 2) ** 2, 0.0)
        return out

    def at_radius(self, r: float) -> float:
        val = self.scale * r ** (-self.alpha)
        if self.cutoff > 0:
            val *= (1.0 - (r / self.cutoff) ** 2) ** 2 if r < self.cutoff else 0.0
        return float(val)


@dataclass(frozen=True)
class Sum:
    terms: tuple = ()

    def __call__(self, coords):
        out = 0.0
        for t in self.terms:
            out = out + t(coords)
        return out * np.ones(np.broadcast(*coords).shape)


@dataclass(frozen=True)
class Product:
    terms: tuple = ()

    def __call__(self, coords):
        out = 1.0
        for t in self.terms:
            out = out * t(coords)
        return out * np.ones(np.broadcast(*coords).shape)


REGISTRY = {
    "constant": Constant,
    "affine": Affine,
    "quadratic": Quadratic,
    "hat": Hat,
    "bump": Bump,
    "gaussian": Gaussian,
    "indicator": Indicator,
    "cosine": Cosine,
    "radial_power": RadialPower,
}

_CALL = re.compile(r"^\s*([a-z_]+)\s*(?:\((.*)\))?\s*$")


def _parse_value(text: str):
    text = text.strip()
    if text.startswith("(") and text.endswith(")"):
        inner = text[1:-1].strip()
        return tuple(float(v) for v in inner.split(";") if v.strip()) if inner else ()
    if text in ("inf", "+inf"):
        return np.inf
    if text == "pi":
        return np.pi
    try:
        return int(text)
    except ValueError:
        return float(text)


def parse_analytic(text: str):
    """Parse ``name(key=value, ...)``; tuple values use ``(a; b)``.

    ``+`` joins terms into a :class:`Sum`, ``*`` into a :class:`Product`.
    """
    if "+" in text and not re.search(r"e\+", text):
        return Sum(tuple(parse_analytic(t) for t in text.split("+")))
    if "*" in text:
        return Product(tuple(parse_analytic(t) for t in text.split("*")))
    m = _CALL.match(text)
    if not m or m.group(1) not in REGISTRY:
        raise ValueError(f"unknown analytic field {text!r}; known: {sorted(REGISTRY)}")
    cls = REGISTRY[m.group(1)]
    kwargs = {}
    names = {f.name for f in fields(cls)}
    if m.group(2):
        for item in m.group(2).split(","):
            if not item.strip():
                continue
            key, _, val = item.partition("=")
            key = key.strip()
            if key not in names:
                raise ValueError(f"{cls.__name__} has no parameter {key!r}")
            kwargs[key] = _parse_value(val)
    return cls(**kwargs)
