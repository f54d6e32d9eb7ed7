"""Acceptance criteria, one test each; every test prints a single PASS/FAIL line."""

import time
import warnings

import numpy as np
import pytest

from plapbench.analytic import Bump, Constant, Cosine, Gaussian, Hat, Indicator, RadialPower
from plapbench.cli import RunConfig, run_config
from plapbench.dualnorm import (DualSettings, density_functional, dual_seminorm,
                                negative_norm_check)
from plapbench.experiments import (ScalingCheckSpec, alpha_scan, alpha_tilde, annulus_exponent,
                                   final_verdict, scaling_invariance_check, sharpness_chain,
                                   transition_alpha)
from plapbench.fracnorm import check_embedding
from plapbench.grid import Region, ScalarField, build_grid, sample_field
from plapbench.kfunctional import (InterpolationParams, decomposition_cost, interpolation_profile,
                                   k_functional, k_functional_many, lemma_a4_check)
from plapbench.plap import (DirichletProblem, EnergyParams, energy, pointwise_inequalities,
                            residual, solve_dirichlet)
from plapbench.report import RefinementStudy, linear_fit

BALL = Region.ball(1.0)


@pytest.fixture
def verdict(capsys):
    def emit(number: int, ok: bool, detail: str, started: float):
        with capsys.disabled():
            print(f"\nACCEPTANCE {number}: {'PASS' if ok else 'FAIL'} | {detail} "
                  f"| {time.time() - started:.1f}s")
        assert ok, detail
    return emit


def _zeros(grid):
    return ScalarField(grid, np.zeros(grid.shape))


def test_1_radial_oracle(verdict):
    t0 = time.time()
    N, p = 2, 4.0
    exact0 = 0.75 * 2 ** (-1 / 3)
    levels, centre = [], None
    for h in (2 ** -4, 2 ** -5, 2 ** -6):
        grid = build_grid(N, 1.25, h)
        prob = DirichletProblem(BALL, sample_field(grid, Constant(1.0)), _zeros(grid),
                                EnergyParams(p, 1e-8))
        rep = solve_dirichlet(prob)
        r = grid.radius().ravel()[prob.free]
        exact = (p - 1) / p * N ** (-1 / (p - 1)) * (1 - r ** (p / (p - 1)))
        levels.append((h, float(np.max(np.abs(rep.u_eps.values.ravel()[prob.free] - exact)))))
        c = grid.half_nodes
        centre = rep.u_eps.values[c, c]
    study = RefinementStudy(levels).evaluate(reference=0.0)
    errs = study.values
    ok = (bool(np.all(np.diff(errs) < 0)) and study.observed_order >= 0.9
          and abs(centre / exact0 - 1) <= 0.02)
    verdict(1, ok, f"errors {', '.join(f'{e:.3g}' for e in errs)}, order "
                   f"{study.observed_order:.3f} >= 0.9, u(0) rel err "
                   f"{abs(centre / exact0 - 1):.4f} <= 0.02", t0)


def test_2_gradient_consistency(verdict):
    t0 = time.time()
    rng = np.random.default_rng(2)
    worst = 0.0
    for N, p in [(1, 2.5), (2, 3.0), (2, 4.0)]:
        grid = build_grid(N, 1.25, 2 ** -3)
        f = ScalarField(grid, rng.standard_normal(grid.shape))
        prob = DirichletProblem(BALL, f, _zeros(grid), EnergyParams(p, 1e-3), mollify_radius=0)
        x = rng.standard_normal(int(prob.free.sum()))

        def field(y):
            return ScalarField(grid, prob.lift_values(y).reshape(grid.shape))

        r = residual(field(x), prob).values.ravel()[prob.free] * grid.cell_volume
        for _ in range(20):
            d = rng.standard_normal(x.size)
            s = 1e-6
            fd = (energy(field(x + s * d), prob) - energy(field(x - s * d), prob)) / (2 * s)
            worst = max(worst, abs(fd - r @ d) / abs(r @ d))
    verdict(2, worst <= 1e-6, f"max relative error {worst:.2e} <= 1e-6 over 3x20 directions", t0)


def test_3_pointwise_inequalities(verdict):
    t0 = time.time()
    from plapbench.plap import inequality_ratios, sample_pairs
    worst_growth, worst_scale, violations = 0.0, 0.0, 0
    for p in (2.5, 3.0, 4.0, 6.0):
        small = pointwise_inequalities(p, 10 ** 4, seed=1)
        large = pointwise_inequalities(p, 10 ** 5, seed=2)
        worst_growth = max(worst_growth, abs(large.c1 / small.c1 - 1),
                           abs(large.c2 / small.c2 - 1))
        z, w = sample_pairs(10 ** 4, 2, seed=1)
        r1, r2 = inequality_ratios(z, w, p)
        violations += int(np.sum(r1 > small.c1 * (1 + 1e-12)) + np.sum(r2 > small.c2 * (1 + 1e-12)))
        s1, s2 = inequality_ratios(1e3 * z, 1e3 * w, p)
        ok = np.isfinite(r1)
        worst_scale = max(worst_scale, float(np.max(np.abs(s1[ok] / r1[ok] - 1))),
                          float(np.max(np.abs(s2[ok] / r2[ok] - 1))))
    ok = worst_growth <= 0.01 and worst_scale <= 1e-10 and violations == 0
    verdict(3, ok, f"10x growth drift {worst_growth:.4f} <= 0.01, scale drift "
                   f"{worst_scale:.1e} <= 1e-10, violations {violations}", t0)


# Besov smoothness of each field at q = 2, used to skip embeddings it cannot enter.
EMBED_CORPUS = [
    (1, Hat(radius=0.8), 1.5), (1, Hat(radius=0.5, center=(0.2,)), 1.5), (1, Hat(radius=0.3), 1.5),
    (1, Bump(radius=0.9), 9.0), (1, Bump(radius=0.5), 9.0),
    (1, Indicator(-0.5, 0.5), 0.5), (1, Indicator(0.0, 0.75), 0.5),
    (1, RadialPower(-0.5, cutoff=0.8), 1.0), (1, RadialPower(-0.2, cutoff=0.9), 0.7),
    (1, RadialPower(-1.5, cutoff=0.7), 2.0),
    (2, Hat(radius=0.8), 1.5), (2, Hat(radius=0.5), 1.5), (2, Bump(radius=0.9), 9.0),
    (2, Bump(radius=0.6), 9.0), (2, Indicator(-0.5, 0.5, radius=0.8), 0.5),
    (2, Indicator(0.0, 0.9, axis=1, radius=0.9), 0.5), (2, RadialPower(0.3, cutoff=0.8), 0.7),
    (2, RadialPower(-0.5, cutoff=0.8), 1.5), (2, RadialPower(0.1, cutoff=0.6), 0.9),
    (2, Gaussian(0.2), 9.0),
]
EMBED_H = {1: (2 ** -6, 2 ** -7), 2: (2 ** -4, 2 ** -5)}


def test_4_embeddings(verdict):
    t0 = time.time()
    beta, alpha, q = 0.5, 0.3, 2.0
    worst, checks, finite = 0.0, 0, True
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        for N, spec, smooth in EMBED_CORPUS:
            fields = [sample_field(build_grid(N, 1.25, h), spec, BALL, singularity="clip")
                      for h in EMBED_H[N]]
            for which in ("2.2", "2.3", "2.4a", "2.4b"):
                if which.startswith("2.4") and smooth < 1 + beta:
                    continue
                c = [check_embedding(u, which, beta, q, alpha=alpha).implied_constant
                     for u in fields]
                finite &= bool(np.all(np.isfinite(c)))
                worst = max(worst, abs(c[1] / c[0] - 1))
                checks += 1
        trend_ok = True
        for spec in (Hat(radius=0.8), Bump(radius=0.9), Indicator(-0.5, 0.5)):
            u = sample_field(build_grid(1, 1.25, 2 ** -7), spec, BALL)
            reps = [check_embedding(u, "2.3", 0.8, q, alpha=a) for a in (0.5, 0.7, 0.78)]
            pre = [r.prefactor for r in reps]
            imp = [r.implied_constant for r in reps]
            trend_ok &= bool(np.all(np.diff(pre) > 0) and np.all(np.diff(imp) > 0))
    ok = finite and worst <= 0.3 and trend_ok
    verdict(4, ok, f"{checks} checks on {len(EMBED_CORPUS)} fields, finite {finite}, max drift "
                   f"{worst:.3f} <= 0.30, 2.3 blow-up trend monotone {trend_ok}", t0)


NEG_CORPUS = [
    (1, Hat(radius=0.8)), (1, Bump(radius=0.9)), (1, Gaussian(0.25)), (1, Indicator(-0.5, 0.5)),
    (1, RadialPower(-0.5, cutoff=0.8)), (1, Cosine(freq=6.0, window=0.9)),
    (2, Hat(radius=0.8)), (2, Bump(radius=0.9)), (2, Gaussian(0.3)),
    (2, Indicator(-0.4, 0.4, radius=0.8)),
]


def test_5_negative_norm(verdict):
    t0 = time.time()
    g = build_grid(1, 1.25, 2 ** -7)
    closed = float(dual_seminorm(density_functional(sample_field(g, Constant(1.0))), 1.0, 2.0,
                                 BALL).value)
    solver_err = abs(closed / np.sqrt(2 / 3) - 1)
    H = {1: (2 ** -6, 2 ** -7), 2: (2 ** -3, 2 ** -4)}
    worst = 0.0
    for beta, q in [(0.4, 1.5), (0.6, 1.5), (0.6, 3.0)]:
        for N, spec in NEG_CORPUS:
            c = [negative_norm_check(sample_field(build_grid(N, 1.25, h), spec, BALL), beta, q,
                                     BALL, DualSettings(restarts=0)).implied_constant
                 for h in H[N]]
            worst = max(worst, abs(c[1] / c[0] - 1))
    ok = solver_err <= 0.02 and worst <= 0.25
    verdict(5, ok, f"sqrt(2/3) rel err {solver_err:.4f} <= 0.02, corpus max drift "
                   f"{worst:.3f} <= 0.25 (1-D 2^-6/2^-7, 2-D 2^-3/2^-4)", t0)


def _tiny_oracle(u, h, q, t, free):
    cp = pytest.importorskip("cvxpy")
    n = u.size
    d = (np.eye(n, k=1) - np.eye(n)) / h
    emb = np.eye(n)[:, free]
    v = cp.Variable(int(free.sum()))
    w = h ** (1 / q)
    prob = cp.Problem(cp.Minimize(w * cp.pnorm(u - emb @ v, q) + t * w * cp.pnorm(d @ emb @ v, q)))
    prob.solve(solver=cp.CLARABEL, tol_gap_abs=1e-12, tol_gap_rel=1e-12, tol_feas=1e-12)
    return float(prob.value)


def test_6_k_functional(verdict):
    t0 = time.time()
    tiny = sample_field(build_grid(1, 1.0, 0.25), Hat(radius=1.0))
    free = BALL.contains(tiny.grid.coords(), strict=True)
    brute = max(abs(k_functional(tiny, t, InterpolationParams(0.5, 2.0), BALL).k_value
                    - _tiny_oracle(tiny.values, 0.25, 2.0, t, free)) for t in (0.1, 1.0, 10.0))
    H = {1: (2 ** -6, 2 ** -7), 2: (2 ** -4, 2 ** -5)}
    decomp, invariant, a4_drift, a4_lo, a4_hi = 0.0, 0.0, 0.0, np.inf, 0.0
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        for N, spec in NEG_CORPUS:
            beta = 0.6 if isinstance(spec, Indicator) else 0.5
            fields = [sample_field(build_grid(N, 1.25, h), spec, BALL) for h in H[N]]
            c = [lemma_a4_check(u, beta, 2.0, BALL).implied_constant for u in fields]
            a4_drift = max(a4_drift, abs(c[1] / c[0] - 1))
            a4_lo, a4_hi = min(a4_lo, *c), max(a4_hi, *c)
            u = fields[-1]
            ts = np.geomspace(1e-2, 0.5 * (1 - 1e-6), 6)
            ks = k_functional_many(u, ts, InterpolationParams(0.5, 2.0), BALL)
            decomp = max(decomp, max(decomposition_cost(u, t, 2.0, BALL) / k.k_value
                                     for t, k in zip(ts, ks)))
            prof = interpolation_profile(u, InterpolationParams(1 - beta, 2.0), BALL)
            slopes = np.diff(prof.k) / np.diff(prof.t)
            scale = float(np.max(np.abs(u.values)))
            invariant = max(invariant, float(-np.min(np.diff(prof.k))) / scale,
                            float(np.max(np.diff(slopes) * np.diff(prof.t)[1:])) / scale)
    ok = (brute <= 1e-6 and decomp <= 10 and invariant <= 1e-6 and a4_drift <= 0.3
          and 0 < a4_lo and np.isfinite(a4_hi))
    verdict(6, ok, f"brute force gap {brute:.1e} <= 1e-6, decomposition/K max {decomp:.2f} <= 10, "
                   f"invariant slack {invariant:.1e} <= 1e-6 |u|, A.4 factor in "
                   f"[{a4_lo:.3f}, {a4_hi:.3f}] drift {a4_drift:.3f} <= 0.30", t0)


def test_7_sharpness(verdict):
    t0 = time.time()
    notes, ok = [], True
    for N, p in [(3, 3.0), (2, 4.0)]:
        at = alpha_tilde(N, p)
        scan = alpha_scan(N, p, [at + 0.05 * k for k in range(-2, 3)], ladder=10, levels=(4, 8))
        trans = transition_alpha(scan)
        at_key = min(scan, key=lambda a: abs(a - at))
        fin = [r for r in scan[at_key] if r.level == 8]
        d = np.array([r.delta for r in fin])[-4:]
        tot = np.array([r.annulus_integral for r in fin])[-4:]
        r2 = linear_fit(np.log(1 / d), tot).r_squared
        hi = max(scan)
        expo = final_verdict(scan[hi])[1]
        pred = annulus_exponent(N, p, hi)
        ok &= (trans is not None and abs(trans - at) <= 0.05 + 1e-12 and r2 >= 0.98
               and abs(expo / pred - 1) <= 0.15)
        notes.append(f"({N},{p:g}) transition {trans:.4f} vs {at:.4f}, R2 {r2:.4f}, "
                     f"exponent {expo:.3f} vs {pred:.3f}")
    chain = sharpness_chain()
    ok &= chain.holds
    notes.append(f"chain alpha {chain.alpha:.4f}: f series {chain.f_seminorms[-1].total:.4g} "
                 f"drift {chain.f_drift:.3f}, V {chain.v_verdict}")
    verdict(7, ok, "; ".join(notes), t0)


def test_8_scaling(verdict):
    t0 = time.time()
    reps = [scaling_invariance_check(ScalingCheckSpec(lambdas=(1.0, 2.0))),
            scaling_invariance_check(ScalingCheckSpec(N=3, h=2 ** -3, lambdas=(1.0, 2.0)))]
    side = max(r.max_side_error for r in reps)
    drift = max(r.constant_drift for r in reps)
    ok = side <= 0.05 and drift <= 0.05
    verdict(8, ok, f"N=2,3 (exponents {reps[0].exponent}, {reps[1].exponent}): side factor "
                   f"error {side:.2e} <= 0.05, constant drift {drift:.2e} <= 0.05", t0)


def test_9_determinism(verdict, tmp_path):
    t0 = time.time()
    configs = {
        "solve": "[solve]\ndim = 1\nh = 0.0625\np = 3\n",
        "kfunc": "[kfunc]\ndim = 1\nh = 0.0625\nq = 3\nt_points = 8\n",
        "dualnorm": "[run]\nseed = 4\n[dualnorm]\ndim = 1\nh = 0.125\nrestarts = 2\n",
        "sweep-sharpness": "[sweep-sharpness]\nalphas = -0.7\nladder = 5\nlevels = 4\n",
        "check-scaling": "[check-scaling]\nh = 0.125\n",
    }
    mismatched = []
    for command, text in configs.items():
        runs = []
        for tag in ("a", "b"):
            cfg = RunConfig.from_text(text, command, out=str(tmp_path / command / tag))
            _, files = run_config(cfg)
            runs.append({f.name: f.read_bytes() for f in files if f.suffix == ".csv"})
        if runs[0] != runs[1] or not runs[0]:
            mismatched.append(command)
    verdict(9, not mismatched, f"{len(configs)} commands run twice, mismatched: "
                               f"{mismatched or 'none'}", t0)
