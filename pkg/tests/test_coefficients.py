import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from skdv.coefficients import (
    AdditiveJumps,
    BoundedMultiplicativeJumps,
    DiagonalDampedDiffusion,
    DiffusionModel,
    LevyNoiseModel,
    LinearJumps,
    ZeroDiffusion,
    ZeroJumps,
    k_lambda,
    state_sampler,
    validate_hypotheses,
)
from skdv.noise import IntensityMeasure
from skdv.spectral import SpectralGrid

G = SpectralGrid(0, 2 * math.pi, 8)
NU = IntensityMeasure([1.0, -1.0], [1.0, 1.0])


def rand_state(seed, grid=G):
    return grid.state(np.random.default_rng(seed).standard_normal(grid.dim))


def test_k_lambda_zero_is_third_derivative():
    u = rand_state(0)
    assert np.array_equal(k_lambda(G, u, 0.0).coeffs, G.deriv(u, 3).coeffs)


def test_k_lambda_constant_is_zero():
    c = np.zeros(G.dim)
    c[0] = 2.0
    assert np.max(np.abs(k_lambda(G, G.state(c), 0.7).coeffs)) < 1e-13


def test_k_lambda_range():
    with pytest.raises(ValueError):
        k_lambda(G, rand_state(0), 1.5)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(0.0, 1.0), st.floats(0.01, 3.0))
def test_k_lambda_skew(seed, lam, amp):
    u = rand_state(seed)
    u = u.scaled(amp / G.norm(u))
    scale = G.norm(u) * G.norm(k_lambda(G, u, lam))
    # direct quadrature of <K u, u> in physical space
    q = G.length / G.n_phys * math.fsum(G.to_physical(k_lambda(G, u, lam).coeffs) * G.to_physical(u.coeffs))
    assert abs(q) <= 1e-9 * max(scale, 1.0)


# -- models -------------------------------------------------------------------------


def test_additive_jump_is_profile():
    prof = G.interpolate(lambda x: np.cos(x)).coeffs
    F = AdditiveJumps(NU, prof, scale=0.5)
    u = rand_state(1).coeffs
    assert np.allclose(F.F(0.0, u, -1.0), -0.5 * prof)
    assert F.L == 0.0
    a, r0, b = F.kernel_form(NU)
    assert a == 0.0 and np.allclose(b, 0.0)


def test_bounded_multiplicative_shape():
    F = BoundedMultiplicativeJumps(NU, scale=0.3, radius=2.0)
    small = np.zeros(G.dim)
    small[1] = 1.0
    assert np.allclose(F.F(0, small, 1.0), 0.3 * small)
    big = 10 * small
    assert np.linalg.norm(F.F(0, big, 1.0)) == pytest.approx(0.3 * 2.0)
    C = np.array([small, big, 0.5 * big])
    for y in (1.0, -1.0):
        rows = np.array([F.F(0, c, y) for c in C])
        assert np.allclose(F.F_batch(0.0, C, y), rows, rtol=1e-15)


def test_default_f_batch_loops():
    base = LinearJumps(NU, 0.2)
    custom = LevyNoiseModel(lambda t, c, y: 0.2 * y * c, base.L, base.growth)
    C = np.random.default_rng(2).standard_normal((5, G.dim))
    assert np.allclose(custom.F_batch(0.0, C, 1.0), base.F_batch(0.0, C, 1.0))
    with pytest.raises(KeyError):
        custom.growth_constant(17.0)


def test_compensator_matches_kernel_form():
    for F in (LinearJumps(NU, 0.2), BoundedMultiplicativeJumps(IntensityMeasure([1.0, -0.5], [2.0, 1.0]), 0.3, 1.0)):
        u = rand_state(3).coeffs
        a, r0, _ = F.kernel_form(F._nu)
        rho = min(1.0, r0 / np.linalg.norm(u))
        assert np.allclose(F.compensator(0.0, u, F._nu), a * rho * u)


def test_diagonal_damped_ito_terms_vectorized():
    Phi = DiagonalDampedDiffusion(G, amplitude=0.3, radius=2.0)
    rng = np.random.default_rng(4)
    C = rng.standard_normal((6, G.dim))
    dW = rng.standard_normal((6, G.dim)) * 0.1
    g, hs, gu = Phi.ito_terms(0.0, C, dW)
    g0, hs0, gu0 = DiffusionModel.ito_terms(Phi, 0.0, C, dW)
    assert np.allclose(g, g0) and np.allclose(hs, hs0) and np.allclose(gu, gu0)


def test_diagonal_damped_summable():
    # sum sigma_j^2 (1 + k_j^2) stays bounded as m grows (decay = 1)
    vals = []
    for m in (16, 64, 256):
        g = SpectralGrid(0, 2 * math.pi, m)
        Phi = DiagonalDampedDiffusion(g, amplitude=1.0)
        vals.append(float(np.sum(Phi.sigma**2 * (1 + g.slot_k**2))))
    assert vals[-1] < 1.01 * vals[0] + 1.0
    assert vals[-1] - vals[1] < 0.05


# -- validator ---------------------------------------------------------------------------


def test_validate_zero_model():
    rep = validate_hypotheses(ZeroJumps(), state_sampler(G), 50, nu=NU)
    assert rep.passed
    assert all(c.statistic == 0.0 for c in rep.checks)


def test_validate_bounded_multiplicative_passes():
    F = BoundedMultiplicativeJumps(NU, scale=0.3, radius=10.0)
    rep = validate_hypotheses(F, state_sampler(G, (1e-2, 100.0)), 1000, nu=NU, seed=1)
    assert rep.passed, str(rep)
    assert rep.notes["F1_max_null_jump_mass"] == 0.0


def test_validate_misdeclared_lipschitz_fails():
    good = LinearJumps(NU, scale=0.4)
    bad = LinearJumps(NU, scale=0.4, L=good.L / 10)
    rep = validate_hypotheses(bad, state_sampler(G), 20, nu=NU)
    assert not rep.passed
    f2 = next(c for c in rep.checks if c.name == "F2")
    assert f2.statistic == pytest.approx(10.0, rel=1e-9)


def test_validate_diffusion_reports_phi2_range():
    Phi = DiagonalDampedDiffusion(G, amplitude=0.3)
    rep = validate_hypotheses(Phi, state_sampler(G, (1e-2, 10.0)), 300, grid=G)
    names = {c.name: c for c in rep.checks}
    assert names["Phi1"].passed and names["Phi3"].passed
    assert rep.notes["Phi2_holds_for_V_norm_below"] > 0


def test_validate_zero_diffusion():
    rep = validate_hypotheses(ZeroDiffusion(G.dim), state_sampler(G), 20, grid=G)
    assert rep.passed


def test_validate_errors():
    with pytest.raises(ValueError):
        validate_hypotheses(ZeroJumps(), state_sampler(G), 0, nu=NU)
    with pytest.raises(ValueError):
        validate_hypotheses(ZeroJumps(), state_sampler(G), 5)
    with pytest.raises(ValueError):
        validate_hypotheses(ZeroDiffusion(G.dim), state_sampler(G), 5)
    with pytest.raises(TypeError):
        validate_hypotheses(object(), state_sampler(G), 5)


def test_report_text_and_dict():
    rep = validate_hypotheses(LinearJumps(NU, 0.1), state_sampler(G), 10, nu=NU)
    d = rep.to_dict()
    assert d["passed"] is True and d["model"] == "linear"
    assert str(rep).splitlines()[0].startswith("model linear: PASS")


def test_state_sampler_norm_range():
    draw = state_sampler(G, (0.5, 2.0))
    rng = np.random.default_rng(0)
    norms = [np.linalg.norm(draw(rng)) for _ in range(200)]
    assert 0.5 <= min(norms) and max(norms) <= 2.0
