import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from plapbench.analytic import Gaussian
from plapbench.experiments import (ScalingCheckSpec, SharpnessSpec, alpha_s, alpha_tilde,
                                   annulus_exponent, classify, corpus_study, dyadic_seminorm,
                                   final_verdict, scaling_invariance_check, sharpness_sweep,
                                   source_of_radial_power, source_residual_error,
                                   transition_alpha)
from plapbench.grid import NodeBudgetError


def test_thresholds():
    assert alpha_tilde(3, 3.0) == pytest.approx(-2 / 3)
    assert alpha_s(3, 3.0, 0.2) == pytest.approx(-0.6)
    assert annulus_exponent(3, 3.0, alpha_tilde(3, 3.0)) == pytest.approx(0.0, abs=1e-12)


@given(st.integers(1, 3), st.floats(2.1, 8.0), st.floats(0.01, 0.99))
def test_alpha_s_above_tilde(N, p, s):
    # the source threshold always sits above the energy threshold
    assert alpha_s(N, p, s) > alpha_tilde(N, p) - 1e-12 or s > (p - 2) / p


def test_source_constant():
    src = source_of_radial_power(3, 3.0, 0.1)
    assert src.constant == pytest.approx(-0.002)
    assert src.exponent == pytest.approx(3.2)
    assert src.at_radius(0.5) == pytest.approx(-0.002 * 0.5 ** -3.2)


def test_source_degenerate():
    # the fundamental solution: exponent N, constant zero
    src = source_of_radial_power(2, 3.0, -0.5)
    assert src.degenerate and not src.singular
    assert src.constant == 0


def test_source_rejects():
    with pytest.raises(ValueError):
        source_of_radial_power(2, 3.0, 0.0)
    with pytest.raises(ValueError):
        source_of_radial_power(2, 2.0, -0.5)


@pytest.mark.parametrize("N,alpha", [(1, 0.5), (2, -0.3)])
def test_source_residual_decreases(N, alpha):
    errs = [source_residual_error(N, 3.0, alpha, h, inner=0.3) for h in (1 / 16, 1 / 32, 1 / 64)]
    assert errs[0] > errs[1] > errs[2]
    assert errs[2] < 0.02


def test_sharpness_spec_errors():
    with pytest.raises(ValueError, match="W\\^\\{1,p\\}_loc"):
        SharpnessSpec(3, 3.0, 0.0)
    with pytest.raises(ValueError):
        SharpnessSpec(4, 3.0, -1.0)
    with pytest.raises(ValueError):
        SharpnessSpec(3, 3.0, -1.0, ladder=3)


@pytest.mark.parametrize("alpha,verdict", [(-0.8, "bounded"), (-0.5, "power")])
def test_sweep_verdicts(alpha, verdict):
    spec = SharpnessSpec(3, 3.0, alpha, ladder=6, levels=(4,))
    rows = sharpness_sweep(spec)
    v, expo = final_verdict(rows)
    assert v == verdict
    assert expo == pytest.approx(spec.predicted_exponent, abs=0.05)


def test_transition():
    scan = {a: sharpness_sweep(SharpnessSpec(3, 3.0, a, ladder=6, levels=(4,)))
            for a in (-0.8, -0.7, -0.6)}
    assert transition_alpha(scan) == -0.6


def test_classify_log():
    d = 0.9 * 2.0 ** -np.arange(1, 9)
    shells = np.ones(8)
    assert classify(d, np.cumsum(shells), shells)[0] == "log"


@pytest.mark.parametrize("N,alpha", [(2, -0.2), (2, -2.0), (1, -0.3)])
def test_dyadic_ratio_is_homogeneity(N, alpha):
    p, s = 3.0, 0.2
    q = p / (p - 1)
    src = source_of_radial_power(N, p, alpha)
    d = dyadic_seminorm(src, N, s, q, 0.9, 8)
    # shells of a degree -e homogeneous function scale by 2^-(N - s q - e q)
    assert d.ratio == pytest.approx(2 ** -(N - s * q - src.exponent * q), rel=1e-6)
    assert d.finite == (d.ratio < 1)


def test_scaling_identity():
    a = scaling_invariance_check(ScalingCheckSpec(h=2 ** -3, lambdas=(1.0,)))
    b = scaling_invariance_check(ScalingCheckSpec(h=2 ** -3, lambdas=(1.0,)))
    assert a == b
    assert a.max_side_error == 0 and a.constant_drift == 0


def test_scaling_similar():
    rep = scaling_invariance_check(ScalingCheckSpec(h=2 ** -3, lambdas=(1.0, 2.0, 0.5)))
    assert rep.max_side_error < 1e-8
    assert rep.constant_drift < 1e-8


def test_scaling_budget():
    with pytest.raises(NodeBudgetError):
        scaling_invariance_check(ScalingCheckSpec(N=3, h=2 ** -3, lambdas=(1.0, 64.0),
                                                  mode="fixed_extent", max_nodes=10 ** 5))


def test_scaling_spec_errors():
    with pytest.raises(ValueError):
        ScalingCheckSpec(mode="other")
    with pytest.raises(ValueError):
        ScalingCheckSpec(lambdas=(1.0, 0.0))


def test_corpus_study():
    rows = corpus_study([("lin", lambda h: 1 + h), ("nan", lambda h: math.nan)], [0.5, 0.25])
    assert rows[0].drift == pytest.approx(0.25 / 1.5)
    assert not rows[1].finite


def test_corpus_callable_spacings():
    rows = corpus_study([("a", lambda h: h)], lambda name: [1.0, 2.0])
    assert rows[0].spacings == [1.0, 2.0] and rows[0].drift == 1.0
