import numpy as np
import pytest
from hypothesis import given, strategies as st

from plapbench.report import (RefinementStudy, RefinementWarning, csv_text, format_float,
                              implied_constant, linear_fit, loglog_fit, observed_order, to_json)


def _study(errors):
    return RefinementStudy([(2.0 ** -k, e) for k, e in enumerate(errors)])


def test_order_first():
    assert observed_order(_study([0.4, 0.2, 0.1]), 0.0)[0] == pytest.approx(1.0, abs=1e-8)


def test_order_second():
    assert observed_order(_study([0.4, 0.1, 0.025]), 0.0)[0] == pytest.approx(2.0)


def test_order_constant_errors_warns():
    with pytest.warns(RefinementWarning):
        order, warn = observed_order(_study([0.3, 0.3, 0.3]), 0.0)
    assert warn and abs(order) < 1e-12


def test_order_from_increments():
    # v_k = 1 + h_k: increments halve, so the order is one
    vals = [1 + 2.0 ** -k for k in range(4)]
    order, warn = observed_order(_study(vals))
    assert order == pytest.approx(1.0) and not warn


def test_order_without_reference_needs_three_levels():
    with pytest.raises(ValueError):
        observed_order(_study([1.0, 0.5]))


def test_levels_sorted_by_decreasing_spacing():
    s = RefinementStudy([(0.25, 1.0), (1.0, 3.0), (0.5, 2.0)])
    assert list(s.spacings) == [1.0, 0.5, 0.25]
    assert s.max_drift() == pytest.approx(0.5)


def test_loglog_square():
    x = np.linspace(1, 5, 9)
    fit = loglog_fit(zip(x, x ** 2))
    assert fit.slope == pytest.approx(2.0) and fit.r_squared == pytest.approx(1.0)


def test_loglog_constant():
    assert loglog_fit([(1, 3), (2, 3), (4, 3)]).slope == pytest.approx(0.0, abs=1e-14)


def test_loglog_noisy(rng):
    x = np.geomspace(0.01, 1, 20)
    y = x ** 1.5 * (1 + 0.01 * rng.standard_normal(x.size))
    assert abs(loglog_fit(zip(x, y)).slope - 1.5) < 0.1


@pytest.mark.parametrize("pts", [[(1, 1), (2, 2)], [(0, 1), (1, 2), (2, 3)], [(1, -1), (2, 2), (3, 3)]])
def test_loglog_rejects(pts):
    with pytest.raises(ValueError):
        loglog_fit(pts)


@given(st.floats(1e-3, 1e3), st.floats(1e-3, 1e3), st.floats(-3, 3))
def test_loglog_slope_invariant_under_rescaling(a, b, k):
    x = np.array([0.5, 1.0, 3.0, 7.0])
    y = x ** k * np.array([1.0, 1.1, 0.9, 1.05])
    s0 = loglog_fit(zip(x, y)).slope
    assert loglog_fit(zip(a * x, b * y)).slope == pytest.approx(s0, abs=1e-10)


@given(st.lists(st.floats(-10, 10), min_size=3, max_size=12))
def test_r_squared_in_unit_interval(y):
    fit = linear_fit(np.arange(len(y)), y)
    assert 0.0 <= fit.r_squared <= 1.0


def test_implied_constant_conventions():
    assert implied_constant(0.0, 0.0) == (0.0, True)
    assert implied_constant(1.0, 0.0) == (float("inf"), True)
    assert implied_constant(1.0, 4.0) == (0.25, False)


def test_float_formatting_round_trips():
    for x in [0.1, 1 / 3, 2.0 ** -40, 1e300]:
        assert float(format_float(x)) == x
    assert csv_text(["a"], [[0.1]]) == "a\n0.10000000000000001\n"


def test_json_versioned():
    text = to_json({"x": 1.0, "y": float("inf")}, "demo")
    assert '"schema_version": 1' in text and '"inf"' in text
