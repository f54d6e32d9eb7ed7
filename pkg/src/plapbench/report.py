"""Serialization, refinement bookkeeping and least-squares fit helpers.

Every verifier in the package returns plain dataclasses; this module turns
them into byte-stable JSON/CSV and provides the two fits used for
convergence and divergence verdicts.
"""

from __future__ import annotations

import csv
import io
import json
import math
import warnings
from dataclasses import dataclass, field, fields, is_dataclass
from pathlib import Path
from typing import Any, Iterable, Sequence

import numpy as np

SCHEMA_VERSION = 1
FLOAT_DIGITS = 17


class RefinementWarning(UserWarning):
    """Errors or increments of a refinement study are not decreasing."""


@dataclass
class FitResult:
    slope: float
    intercept: float
    r_squared: float


@dataclass
class RefinementStudy:
    """Values of one quantity over a sequence of grid spacings.

    ``levels`` holds ``(h_grid, value)`` pairs sorted by decreasing spacing.
    """

    levels: list[tuple[float, float]]
    observed_order: float = float("nan")
    stable: bool = False
    criterion: str = ""
    warning: bool = False

    def __post_init__(self):
        self.levels = sorted(((float(h), float(v)) for h, v in self.levels),
                             key=lambda hv: -hv[0])

    @property
    def spacings(self) -> np.ndarray:
        return np.array([h for h, _ in self.levels])

    @property
    def values(self) -> np.ndarray:
        return np.array([v for _, v in self.levels])

    def max_drift(self) -> float:
        """Largest relative change between successive levels."""
        v = self.values
        if len(v) < 2:
            return 0.0
        scale = np.maximum(np.abs(v[:-1]), np.finfo(float).tiny)
        return float(np.max(np.abs(np.diff(v)) / scale))

    def evaluate(self, reference: float | None = None,
                 drift_tolerance: float | None = None) -> "RefinementStudy":
        if len(self.levels) >= 3 or reference is not None and len(self.levels) >= 2:
            self.observed_order, self.warning = observed_order(self, reference)
        if drift_tolerance is not None:
            self.stable = self.max_drift() <= drift_tolerance
            self.criterion = f"relative drift <= {drift_tolerance:g}"
        return self


@dataclass
class EstimateReport:
    """Left side, named right-side terms and implied constant of an estimate."""

    which: str
    lhs: float
    rhs_terms: dict[str, float]
    implied_constant: float
    parameters: dict[str, Any] = field(default_factory=dict)
    degenerate: bool = False
    converged: bool = True
    extra: dict[str, Any] = field(default_factory=dict)

    @property
    def rhs(self) -> float:
        return float(sum(self.rhs_terms.values()))


def implied_constant(lhs: float, rhs: float) -> tuple[float, bool]:
    """Return ``(lhs / rhs, degenerate)`` with the 0/0 convention."""
    if rhs > 0:
        return lhs / rhs, False
    if lhs == 0:
        return 0.0, True
    return math.inf, True


def observed_order(study: RefinementStudy, reference: float | None = None
                   ) -> tuple[float, bool]:
    """Observed convergence order of a refinement study.

    With a reference value the errors ``e_k = |v_k - reference|`` are used and
    the order is the mean of ``log(e_k / e_{k+1}) / log(h_k / h_{k+1})``.
    Without one, successive increments play the role of errors (Aitken-style),
    which needs at least three levels.

    Returns
    -------
    order : float
    warning : bool
        True when the errors (or increments) fail to decrease strictly.
    """
    h = study.spacings
    v = study.values
    if reference is not None:
        err = np.abs(v - reference)
        ratios = h[:-1] / h[1:]
    else:
        if len(v) < 3:
            raise ValueError("observed order without a reference needs >= 3 levels")
        err = np.abs(np.diff(v))
        ratios = h[1:-1] / h[2:]
    warn = bool(np.any(err[1:] >= err[:-1]))
    tiny = np.finfo(float).tiny
    orders = np.log(np.maximum(err[:-1], tiny) / np.maximum(err[1:], tiny)) / np.log(ratios)
    order = float(np.mean(orders))
    if warn:
        warnings.warn("refinement errors are not strictly decreasing", RefinementWarning,
                      stacklevel=2)
    return order, warn


def linear_fit(x: Sequence[float], y: Sequence[float]) -> FitResult:
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.size < 2:
        raise ValueError("need at least two points")
    slope, intercept = np.polyfit(x, y, 1)
    resid = y - (slope * x + intercept)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    ss_res = float(np.sum(resid ** 2))
    r2 = 1.0 if ss_tot == 0.0 else max(0.0, min(1.0, 1.0 - ss_res / ss_tot))
    return FitResult(float(slope), float(intercept), r2)


def loglog_fit(points: Iterable[tuple[float, float]]) -> FitResult:
    """Least-squares line through ``(log x, log y)``."""
    pts = np.asarray(list(points), dtype=float)
    if pts.ndim != 2 or pts.shape[0] < 3:
        raise ValueError("loglog_fit needs at least 3 points")
    if np.any(pts <= 0):
        raise ValueError("loglog_fit needs strictly positive coordinates")
    return linear_fit(np.log(pts[:, 0]), np.log(pts[:, 1]))


# -- serialization -----------------------------------------------------------

def format_float(x: float) -> str:
    return format(float(x), f".{FLOAT_DIGITS}g")


def _jsonable(obj: Any) -> Any:
    if is_dataclass(obj) and not isinstance(obj, type):
        return {f.name: _jsonable(getattr(obj, f.name)) for f in fields(obj)
                if not f.name.startswith("_")}
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer, int)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        x = float(obj)
        if math.isfinite(x):
            return float(format_float(x))
        return "inf" if x > 0 else ("-inf" if x < 0 else "nan")
    if hasattr(obj, "to_record"):
        return _jsonable(obj.to_record())
    if obj is None or isinstance(obj, str):
        return obj
    return str(obj)


def to_json(record: Any, kind: str) -> str:
    payload = {"schema_version": SCHEMA_VERSION, "kind": kind, "data": _jsonable(record)}
    return json.dumps(payload, indent=2, sort_keys=True) + "\n"


def write_json(path: str | Path, record: Any, kind: str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(to_json(record, kind))
    return path


def csv_text(header: Sequence[str], rows: Iterable[Sequence[Any]]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([format_float(v) if isinstance(v, (float, np.floating)) else v
                         for v in row])
    return buf.getvalue()


def write_csv(path: str | Path, header: Sequence[str], rows: Iterable[Sequence[Any]]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(csv_text(header, rows))
    return path
