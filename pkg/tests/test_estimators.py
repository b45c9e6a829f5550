import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from skdv.coefficients import AdditiveJumps, BoundedMultiplicativeJumps, DiagonalDampedDiffusion, LinearJumps, ZeroJumps
from skdv.estimators import (
    EnsembleBlowUp,
    aldous_check,
    check_p_window,
    doob_surrogate,
    estimate_moments,
    halving_stability,
    i_bound_check,
    ito_decomposition,
    ito_ensemble,
    make_solver,
    mean_se,
    minimal_taylor_constants,
    run_ensemble,
    stopping_index,
    taylor_remainder_check,
    trajectory_functionals,
)
from skdv.noise import IntensityMeasure
from skdv.solver import SolverConfig
from skdv.spectral import SpectralGrid

TWO_PI = 2 * math.pi


def U0(x):
    return np.sin(x) + 0.5 * np.cos(2 * x)


def jd_models(g):
    nu = IntensityMeasure([1.0, -1.0], [1.0, 1.0])
    return BoundedMultiplicativeJumps(nu, 0.3, 10.0), DiagonalDampedDiffusion(g, amplitude=0.3), nu


def additive_models(g):
    nu = IntensityMeasure([1.0, -0.5], [1.0, 1.0])
    return AdditiveJumps(nu, g.interpolate(np.cos).coeffs, 0.5), None, nu


def diffusion_only(g):
    return ZeroJumps(), DiagonalDampedDiffusion(g, amplitude=0.3), IntensityMeasure.empty()


# -- plumbing ---------------------------------------------------------------------


def test_mean_se_fsum():
    mu, se = mean_se([1e16, 1.0, -1e16, 1.0])
    assert mu == 0.5
    assert mean_se([2.0])[1] != mean_se([2.0])[1]  # nan for a single value


def test_run_ensemble_thread_independent():
    g = SpectralGrid(0, TWO_PI, 8)
    s = make_solver(g, SolverConfig(dt=0.01, T=0.5, m=8, seed=5), jd_models)
    u0 = g.interpolate(U0)
    red = lambda tr: float(tr.states[-1] @ tr.states[-1])
    a = run_ensemble(s, u0, 16, red, threads=1).values
    b = run_ensemble(s, u0, 16, red, threads=4).values
    assert a == b


def test_run_ensemble_blowup_tolerance():
    g = SpectralGrid(0, TWO_PI, 16)
    nu = IntensityMeasure([1.0, -1.0], [1.0, 1.0])
    models = (LinearJumps(nu, 30.0), DiagonalDampedDiffusion(g, amplitude=30.0), nu)
    cfg = SolverConfig(dt=1e-3, T=0.3, m=16, R=math.inf, cutoff_forced_one=True, scheme="exponential_euler")
    s = make_solver(g, cfg, models)
    with pytest.raises(EnsembleBlowUp) as info:
        run_ensemble(s, g.interpolate(U0), 4, lambda tr: 0.0)
    assert info.value.n_blowups > 0 and info.value.first is not None
    res = run_ensemble(s, g.interpolate(U0), 4, lambda tr: 0.0, tolerate=1.0)
    assert len(res.blowups) + len(res.ok) == 4


# -- moments ------------------------------------------------------------------------


def test_noise_off_deterministic_moments():
    cfgs = [SolverConfig(dt=1e-3, T=0.5, m=m) for m in (8, 16)]
    st_ = estimate_moments(cfgs, None, U0, 4, p_values=(1.0, 2.0))
    g = SpectralGrid(0, TWO_PI, 8)
    tr = make_solver(g, cfgs[0], None).simulate(g.interpolate(U0))
    det = trajectory_functionals(tr, [1.0, 2.0])
    mu, se = st_.sup_moment[(8, 2.0)]
    assert mu == pytest.approx(det["sup"][2.0], rel=1e-14) and se == 0.0
    assert st_.v_integral[8][1] == 0.0


def test_v_integral_uniform_in_m():
    cfgs = [SolverConfig(dt=2**-7, T=1.0, m=m, seed=1) for m in (16, 32, 64)]
    st_ = estimate_moments(cfgs, diffusion_only, U0, 50, p_values=(1.0,))
    r = st_.uniform_ratio()
    assert r["v_integral"] <= 2.0 and st_.bounded_uniformly()
    tabs = st_.tables()
    assert [row[0] for row in tabs["v_integral"][1]] == [16, 32, 64]
    d = st_.to_dict()
    assert d["ms"] == [16, 32, 64] and len(d["sup_moment"]) == 3


def test_standard_error_clt_scaling():
    cfg = [SolverConfig(dt=2**-6, T=0.5, m=8, seed=2)]
    a = estimate_moments(cfg, jd_models, U0, 400, p_values=(1.0,))
    b = estimate_moments(cfg, jd_models, U0, 800, p_values=(1.0,))
    ratio = b.v_integral[8][1] / a.v_integral[8][1]
    assert abs(ratio - 1 / math.sqrt(2)) < 0.2 / math.sqrt(2)


def test_halving_stability_report():
    coarse = estimate_moments([SolverConfig(dt=2**-6, T=0.5, m=8, seed=2, noise_refine=1)], jd_models, U0, 200, (1.0,))
    fine = estimate_moments([SolverConfig(dt=2**-7, T=0.5, m=8, seed=2)], jd_models, U0, 200, (1.0,))
    rep = halving_stability(coarse, fine)
    assert set(rep) == {"sup_moment[m=8,p=1]", "v_integral[m=8]"}
    assert all(v["ok"] for v in rep.values()), rep


def test_p_window():
    assert check_p_window([0.5, 1, 2.5], 1.0) == []
    notes = check_p_window([2.9], 1.0)
    assert len(notes) == 1 and "2+zeta/2" in notes[0]
    with pytest.raises(ValueError):
        check_p_window([3.5], 1.0)
    with pytest.raises(ValueError):
        check_p_window([0.25], 1.0)


def test_estimate_moments_rejects_duplicate_m():
    with pytest.raises(ValueError):
        estimate_moments([SolverConfig(dt=0.1, T=0.1, m=4)] * 2, None, U0, 2)


# -- Ito decomposition ---------------------------------------------------------------------


def test_ito_noise_off():
    g = SpectralGrid(0, TWO_PI, 16)
    s = make_solver(g, SolverConfig(dt=1e-3, T=1.0, m=16), None)
    tr = s.simulate(g.interpolate(U0))
    d = ito_decomposition(tr, None, None, None, 2.0)
    assert not np.any(d.M) and not np.any(d.I)
    # deterministic balance: |u|^{2p} is conserved and K only carries rounding
    assert d.rel_residual < 1e-10
    assert np.max(np.abs(d.K)) < 1e-10 * d.A[0]


def test_ito_jump_only_residual_and_bound():
    g = SpectralGrid(0, TWO_PI, 16)
    F, Phi, nu = additive_models(g)
    s = make_solver(g, SolverConfig(dt=2**-8, T=1.0, m=16, seed=3), (F, Phi, nu))
    tr = s.simulate(g.interpolate(U0), 0)
    assert len(tr.jump_log) > 0
    for p in (1.0, 1.5, 2.0):
        d = ito_decomposition(tr, None, F, nu, p, s.cutoff)
        K, M, I = d
        assert np.all(np.isfinite(K)) and np.all(np.isfinite(M))
        # F independent of u: |I| grows linearly, bound uses Taylor constants
        assert i_bound_check(d, F)["holds"]
    d1 = ito_decomposition(tr, None, F, nu, 1.0, s.cutoff)
    assert d1.rel_residual < 1e-2


def test_ito_residual_shrinks_with_dt():
    g = SpectralGrid(0, TWO_PI, 8)
    res = []
    for dt in (2**-6, 2**-8):
        s = make_solver(g, SolverConfig(dt=dt, T=1.0, m=8, seed=3), jd_models)
        vals = []
        for i in range(40):
            tr = s.simulate(g.interpolate(U0), i)
            vals.append(ito_decomposition(tr, s.Phi, s.F, s.nu, 1.0, s.cutoff).rel_residual)
        res.append(np.mean(vals))
    assert res[1] < res[0]


def test_ito_requires_increments():
    g = SpectralGrid(0, TWO_PI, 8)
    s = make_solver(g, SolverConfig(dt=0.01, T=0.1, m=8, keep_increments=False), jd_models)
    tr = s.simulate(g.interpolate(U0))
    with pytest.raises(ValueError):
        ito_decomposition(tr, s.Phi, s.F, s.nu, 1.0)
    with pytest.raises(ValueError):
        ito_decomposition(tr, None, None, None, 0.5)


def test_jump_martingale_mean_zero():
    out = ito_ensemble(SolverConfig(dt=2**-8, T=1.0, m=16, seed=0), additive_models, U0, 2000, p=1.0)
    m = out["M_T"]
    assert abs(m["mean"]) < 3 * m["se"]
    assert out["blowups"] == 0


def test_wiener_term_mean_zero():
    out = ito_ensemble(SolverConfig(dt=2**-7, T=1.0, m=8, seed=1), diffusion_only, U0, 2000, p=1.0)
    w = out["wiener_T"]
    assert abs(w["mean"]) < 3 * w["se"]


def test_doob_surrogate_stable():
    rep = doob_surrogate(SolverConfig(dt=2**-6, T=1.0, m=8, seed=4), additive_models, U0, 300, p=1.0, q=2.0)
    assert rep["stable"], rep


# -- Taylor remainder -----------------------------------------------------------------------


def test_taylor_h_zero():
    x = np.array([0.3, -1.0, 2.0])
    r = taylor_remainder_check(x, np.zeros(3), 2.0)
    assert all(v == 0.0 for v in r.lhs.values()) and all(v == 0.0 for v in r.rhs.values())
    assert r.holds


def test_taylor_x_zero_degenerate():
    h = np.array([0.0, 2.0, 0.0])
    for p in (1.0, 1.5, 3.0):
        r = taylor_remainder_check(np.zeros(3), h, p)
        assert r.lhs["T1"] == pytest.approx(np.linalg.norm(h) ** (2 * p))
        assert r.holds


def test_taylor_unit_x_small_h():
    rng = np.random.default_rng(0)
    x = rng.standard_normal(9)
    x /= np.linalg.norm(x)
    h = rng.standard_normal(9)
    h *= 0.1 / np.linalg.norm(h)
    r = taylor_remainder_check(x, h, 2.0)
    assert r.holds and all(v > 0 for v in r.margins.values())


def test_taylor_constants_minimal():
    C = minimal_taylor_constants(2.0)
    # p = 1: the remainder is exactly |h|^2, so C1 = 1 / (1 + 1) * ... is attained at x = 0
    assert minimal_taylor_constants(1.0)["C1"] == pytest.approx(0.5, rel=1e-6)
    shrunk = {k: 0.98 * C[k] for k in ("C1", "C2", "C3")}
    # a slightly smaller constant set is violated somewhere on a fine scan
    violated = False
    for a in np.logspace(-2, 2, 200):
        for c in np.linspace(-1, 1, 41):
            x = np.array([a, 0.0])
            h = np.array([c, math.sqrt(max(0.0, 1 - c * c))])
            if not taylor_remainder_check(x, h, 2.0, shrunk).holds:
                violated = True
                break
        if violated:
            break
    assert violated


def test_taylor_printed_form_fails():
    x = np.array([1.0, 0.0])
    h = np.array([1e-3, 0.0])
    assert taylor_remainder_check(x, h, 2.0, form="corrected").holds
    assert not taylor_remainder_check(x, h, 2.0, form="printed").holds
    with pytest.raises(ValueError):
        taylor_remainder_check(x, h, 2.0, form="other")
    with pytest.raises(ValueError):
        taylor_remainder_check(x, h, 0.5)


@settings(max_examples=200, deadline=None)
@given(
    st.integers(0, 2**32 - 1),
    st.sampled_from([1.0, 1.25, 1.5, 2.0, 2.5, 3.0, 4.25]),
    st.floats(-3, 3),
    st.floats(-3, 3),
    st.booleans(),
)
def test_taylor_property(seed, p, lx, lh, parallel):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal(7)
    x *= 10**lx / np.linalg.norm(x)
    h = x.copy() * rng.choice([-1.0, 1.0]) if parallel else rng.standard_normal(7)
    h *= 10**lh / np.linalg.norm(h)
    assert taylor_remainder_check(x, h, p).holds


# -- Aldous ----------------------------------------------------------------------------------


def test_stopping_rules():
    h = np.array([1.0, 0.9, 0.8, 1.2, 0.5, 3.0])
    assert stopping_index(h, "running_median", 5) == 3
    assert stopping_index(h, "running_median", 2) == 2
    assert stopping_index(h, "fixed:0.5", 4) == 2
    assert stopping_index(h, "level:2.5", 5) == 5
    assert stopping_index(h, "level:2.5", 3) == 3
    with pytest.raises(ValueError):
        stopping_index(h, "bogus", 3)
    with pytest.raises(ValueError):
        stopping_index(h, "fixed:2", 3)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(0.01, 100), min_size=2, max_size=40), st.integers(0, 50))
def test_running_median_is_adapted(h, cap):
    # the decision at k only looks at h_0..h_k: changing later values never moves it earlier
    h = np.array(h)
    k = stopping_index(h, "running_median", cap)
    assert 0 <= k <= min(len(h) - 1, cap)
    tail = h.copy()
    tail[k + 1 :] = 1e6
    assert stopping_index(tail, "running_median", cap) == k


def test_aldous_constant_degenerate():
    cfg = SolverConfig(dt=2**-8, T=1.0, m=8)
    rep = aldous_check(cfg, None, lambda x: np.full_like(x, 0.7), 3, [2**-8, 2**-7, 2**-6, 2**-5])
    assert rep.degenerate and math.isnan(rep.fitted_b)
    assert rep.to_dict()["degenerate"] is True


def test_aldous_deterministic_slope():
    cfg = SolverConfig(dt=2**-10, T=1.0, m=64)
    thetas = [2.0**-k for k in (8, 7, 6, 5, 4)]
    rep = aldous_check(cfg, None, U0, 2, thetas, stopping_rule="fixed:0.5")
    assert rep.fitted_b >= 0.9, rep.to_dict()
    head, rows = rep.table()
    assert head == ["theta", "mean", "se"] and len(rows) == 5


def test_aldous_theta_validation():
    cfg = SolverConfig(dt=2**-8, T=1.0, m=8)
    good = [2**-8, 2**-7, 2**-6, 2**-5]
    with pytest.raises(ValueError):
        aldous_check(cfg, None, U0, 2, good[:3])
    with pytest.raises(ValueError):
        aldous_check(cfg, None, U0, 2, good[::-1])
    with pytest.raises(ValueError):
        aldous_check(cfg, None, U0, 2, good[:3] + [0.5])
    with pytest.raises(ValueError):
        aldous_check(cfg, None, U0, 2, [0.005, 0.01, 0.02, 0.04])


def test_aldous_jump_diffusion_small():
    cfg = SolverConfig(dt=2**-10, T=1.0, m=16, seed=0)
    thetas = [2.0**-k for k in (8, 7, 6, 5, 4)]
    rep = aldous_check(cfg, jd_models, U0, 200, thetas)
    assert rep.fitted_b > 0.3 and rep.b_ci[0] < rep.fitted_b < rep.b_ci[1]
    means = [rep.increments[t][0] for t in thetas]
    assert all(a < b for a, b in zip(means, means[1:]))


def test_taylor_h_is_minus_x():
    x = np.array([-2.14113052, -1.83243651, -1.39443959, -0.28843908, 1.47742839, -0.17975627, -0.82397823])
    for p in (1.0, 1.5, 2.0):
        r = taylor_remainder_check(x, -x, p)
        assert all(math.isfinite(v) for v in r.lhs.values()) and r.holds
