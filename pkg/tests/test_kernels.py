import math

import mpmath as mp
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.special import erfcx

from spurlab.kernels import (R_BREAKPOINT, SmoothedLoss, dg_dmu, g_sigma, gh_expectation,
                             kappa, kappa_constants, kappa_tilde_terms, log_kappa,
                             loss_ent, loss_ent_grad, loss_exp, loss_exp_grad, q_sigma,
                             r_branches_at_breakpoint, r_threshold)

mp.mp.dps = 50


def mp_g(mu, s):
    """High-precision E[exp(-|mu + s Z|)] split at the kink."""
    f = lambda z: mp.exp(-abs(mu + s * z)) * mp.npdf(z)
    z0 = -mp.mpf(mu) / s
    pts = sorted({z0 - 10, z0, z0 + 10, mp.mpf(-10), mp.mpf(0), mp.mpf(10)})
    return float(mp.quad(f, [-mp.inf] + pts + [mp.inf]))


def mp_entropy(t):
    p = 1 / (1 + mp.exp(-mp.mpf(t)))
    return float(-p * mp.log(p) - (1 - p) * mp.log(1 - p))


# -- surrogate losses --------------------------------------------------------

def test_loss_exp_values():
    assert loss_exp(0.0) == 1.0
    assert loss_exp(-3.0) == loss_exp(3.0)
    assert loss_exp(1.0) == pytest.approx(math.exp(-1), rel=1e-15)


def test_loss_exp_grad_subgradient_at_zero():
    assert loss_exp_grad(0.0) == 0.0
    np.testing.assert_allclose(loss_exp_grad(np.array([-2.0, 2.0])),
                               [math.exp(-2), -math.exp(-2)], rtol=1e-15)


def test_loss_ent_values():
    assert loss_ent(0.0) == pytest.approx(math.log(2), rel=1e-15)
    v = loss_ent(40.0)
    assert math.isfinite(v) and v < 1e-15
    assert loss_ent(800.0) == 0.0
    assert not np.isnan(loss_ent(np.array([-1e4, 1e4]))).any()


@pytest.mark.parametrize("t", [-25.0, -3.0, -0.1, 0.7, 5.0, 31.0])
def test_loss_ent_against_mpmath(t):
    assert loss_ent(t) == pytest.approx(mp_entropy(t), rel=1e-13)


def test_loss_ent_grad_finite_difference():
    t = np.linspace(-12, 12, 97)
    h = 1e-6
    fd = (loss_ent(t + h) - loss_ent(t - h)) / (2 * h)
    np.testing.assert_allclose(loss_ent_grad(t), fd, atol=1e-9)


@given(st.floats(-50, 50))
def test_loss_ent_symmetric_and_maximal_at_zero(t):
    assert loss_ent(t) == pytest.approx(loss_ent(-t), rel=1e-12, abs=1e-300)
    assert loss_ent(t) <= math.log(2) + 1e-15


def test_ent_exp_ratio_profile():
    # the ratio is ln 2 at 0 and grows like 1 + |t|: about 11 at |t| = 10
    t = np.linspace(-10, 10, 2001)
    ratio = loss_ent(t) / loss_exp(t)
    assert ratio.min() == pytest.approx(math.log(2), rel=1e-12)
    assert ratio.max() == pytest.approx(10.9995, abs=1e-3)


# -- scaled erfc backend -------------------------------------------------------

@pytest.mark.parametrize("x", [-5.0, -0.3, 0.0, 0.5, 3.0, 26.0, 1e3])
def test_erfcx_relative_accuracy(x):
    ref = mp.exp(mp.mpf(x) ** 2) * mp.erfc(x)
    assert float(erfcx(x)) == pytest.approx(float(ref), rel=1e-14)


# -- smoothed loss ------------------------------------------------------------

@pytest.mark.parametrize("mu,s", [(2.0, 1.0), (0.0, 1.0), (0.0, 0.05), (-7.0, 2.0),
                                  (30.0, 10.0), (12.0, 0.3), (25.0, 5.0), (1.0, 1e-3)])
def test_g_sigma_against_mpmath(mu, s):
    assert g_sigma(mu, s) == pytest.approx(mp_g(mu, s), rel=1e-12)


def test_g_sigma_zero_width():
    assert g_sigma(5.0, 0.0) == math.exp(-5.0)
    np.testing.assert_array_equal(g_sigma(np.array([-1.0, 2.0]), 0.0), np.exp([-1.0, -2.0]))


def test_g_sigma_no_overflow_far_tail():
    # |mu|/sigma up to 1e4: naive exp(mu) erfc(...) would overflow
    mu = np.array([50.0, 300.0, 700.0])
    v = g_sigma(mu, 0.03)
    assert np.all(np.isfinite(v))
    np.testing.assert_allclose(v, np.exp(0.03 ** 2 / 2 - mu), rtol=1e-12)


def test_g_sigma_rejects_negative_sigma():
    with pytest.raises(ValueError):
        g_sigma(0.0, -1.0)


@given(st.floats(-40, 40), st.floats(1e-3, 10))
@settings(max_examples=200)
def test_g_sigma_symmetric(mu, s):
    assert g_sigma(mu, s) == g_sigma(-mu, s)


@given(st.floats(-40, 40), st.floats(1e-3, 10))
@settings(max_examples=200)
def test_q_sigma_symmetric(mu, s):
    assert q_sigma(mu, s) == q_sigma(-mu, s)


def test_q_sigma_matches_printed_form():
    # (1/2) e^{s^2/2} s [e^mu erfc(s/sqrt2 + mu/(sqrt2 s)) + e^-mu erfc(s/sqrt2 - mu/(sqrt2 s))]
    #   - sqrt(2/pi) e^{-mu^2 / 2 s^2}, evaluated in high precision
    for mu, s in [(0.0, 0.5), (3.0, 0.5), (1.5, 2.0), (-4.0, 1.2)]:
        m, sg = mp.mpf(mu), mp.mpf(s)
        ref = (mp.mpf(1) / 2 * mp.exp(sg ** 2 / 2) * sg
               * (mp.exp(m) * mp.erfc(sg / mp.sqrt(2) + m / (mp.sqrt(2) * sg))
                  + mp.exp(-m) * mp.erfc(sg / mp.sqrt(2) - m / (mp.sqrt(2) * sg)))
               - mp.sqrt(2 / mp.pi) * mp.exp(-m ** 2 / (2 * sg ** 2)))
        assert q_sigma(mu, s) == pytest.approx(float(ref), rel=1e-12, abs=1e-15)


def test_q_sigma_examples():
    assert q_sigma(0.0, 0.5) < 0
    h = 1e-5
    fd = (g_sigma(3.0, 0.5 + h) - g_sigma(3.0, 0.5 - h)) / (2 * h)
    assert abs(q_sigma(3.0, 0.5) - fd) < 1e-6


def test_q_sigma_requires_positive_sigma():
    with pytest.raises(ValueError):
        q_sigma(1.0, 0.0)


def test_dg_dmu_finite_difference():
    mu = np.linspace(-15, 15, 121)
    for s in (0.1, 1.0, 4.0):
        h = 1e-6
        fd = (g_sigma(mu + h, s) - g_sigma(mu - h, s)) / (2 * h)
        np.testing.assert_allclose(dg_dmu(mu, s), fd, atol=1e-9)
    assert dg_dmu(0.0, 1.0) == 0.0


def test_smoothed_loss_backends_agree():
    quad = SmoothedLoss("quadrature")
    closed = SmoothedLoss("closed_form")
    rng = np.random.default_rng(3)
    for _ in range(200):
        s = 10 ** rng.uniform(-3, 1)
        mu = rng.uniform(-30, 30)
        assert abs(quad.g(mu, s) - closed.g(mu, s)) <= 1e-8
    for mu, s in [(0.0, 0.5), (3.0, 0.5), (2.0, 1.0), (-1.0, 3.0)]:
        assert quad.q(mu, s) == pytest.approx(closed.q(mu, s), abs=1e-10)


def test_smoothed_loss_validation():
    with pytest.raises(ValueError):
        SmoothedLoss("simpson")
    with pytest.raises(ValueError):
        SmoothedLoss("quadrature", 0)


def test_g_matches_quadrature_example():
    assert abs(g_sigma(2.0, 1.0) - SmoothedLoss("quadrature", 96).g(2.0, 1.0)) <= 1e-8


# -- Gauss-Hermite -------------------------------------------------------------

def test_gh_normalisation_and_mean():
    assert gh_expectation(lambda z: np.ones_like(z), 0.7, 2.3) == pytest.approx(1.0, rel=1e-14)
    assert gh_expectation(lambda z: z, 2.0, 3.0) == pytest.approx(2.0, rel=1e-14)
    assert gh_expectation(lambda z: z ** 2, 1.0, 2.0) == pytest.approx(5.0, rel=1e-13)


def test_gh_zero_sigma_and_validation():
    assert gh_expectation(np.exp, 1.5, 0.0) == math.exp(1.5)
    with pytest.raises(ValueError):
        gh_expectation(np.exp, 0.0, 1.0, nodes=4)


def test_gh_matches_g_when_kink_outside_bulk():
    for mu, s in [(8.0, 0.5), (20.0, 1.0), (-6.0, 0.3)]:
        assert abs(gh_expectation(loss_exp, mu, s) - g_sigma(mu, s)) <= 1e-8


def test_gh_limited_by_kink_inside_bulk():
    # plain Gauss-Hermite does not resolve the kink at 0
    err = abs(gh_expectation(loss_exp, 0.0, 1.0) - g_sigma(0.0, 1.0))
    assert 1e-4 < err < 1e-2


# -- bounds on the grid -----------------------------------------------------------

SIGMAS = np.round(np.arange(1, 101) * 0.05, 10)


def test_q_lower_bound_quarter_on_threshold_grid():
    for s in SIGMAS:
        mu = r_threshold(s) + np.arange(401) * 0.05
        assert np.all(q_sigma(mu, s) - 0.25 * s * loss_exp(mu) >= -1e-10)


def test_q_lower_bound_gaussian():
    for s in SIGMAS:
        mu = np.concatenate([np.linspace(-30, 30, 601), r_threshold(s) + np.arange(401) * 0.05])
        assert np.all(q_sigma(mu, s) + math.sqrt(2 / math.pi) * np.exp(-mu ** 2 / (2 * s * s))
                      >= -1e-10)


@given(st.floats(-40, 40), st.floats(1e-3, 1.0))
@settings(max_examples=300)
def test_g_lower_bound(mu, s):
    assert g_sigma(mu, s) >= 0.25 * loss_exp(mu) - 1e-10


@given(st.floats(-40, 40), st.floats(1e-3, 0.5))
@settings(max_examples=300)
def test_g_upper_bound(mu, s):
    assert g_sigma(mu, s) <= 2 * loss_exp(mu) + 1e-10


@pytest.mark.parametrize("s", [0.05, 0.5, 1.0, 2.0, 3.19, 3.2, 5.0])
def test_q_sign_change_below_r(s):
    r = r_threshold(s)
    assert q_sigma(0.0, s) < 0
    assert q_sigma(r + 1e-3, s) > 0
    mu = np.linspace(0, r, 4001)
    first_pos = mu[np.argmax(q_sigma(mu, s) > 0)]
    assert first_pos < r


# -- r(sigma) -------------------------------------------------------------------

def test_r_threshold_values():
    assert r_threshold(4.0) == 32.0
    s = 0.1
    assert r_threshold(s) == pytest.approx(s * s + s * math.sqrt(2 * math.log(40 * math.sqrt(2) / math.sqrt(math.pi))), rel=1e-15)


def test_r_threshold_breakpoint_jump():
    left, right = r_branches_at_breakpoint()
    assert left == pytest.approx(R_BREAKPOINT ** 2, rel=1e-15)
    assert right == pytest.approx(2 * R_BREAKPOINT ** 2, rel=1e-15)
    assert r_threshold(R_BREAKPOINT) == pytest.approx(left, rel=1e-15)
    assert right - left == pytest.approx(10.1859, abs=1e-4)


def test_r_threshold_rejects_nonpositive():
    with pytest.raises(ValueError):
        r_threshold(0.0)


# -- kappa constants ---------------------------------------------------------------

def test_kappa_constants_two_branches():
    t1, t2 = kappa_tilde_terms(1.0, 1.0)
    K = kappa_constants(1.0, 1.0)
    assert K.log_kappa_tilde == min(t1, t2)
    # direct evaluation of both branches in plain floats
    rho = nu = 1.0
    p = math.sqrt(nu) / (2 * math.sqrt(math.pi)) * min(
        1.0, math.sqrt(nu / rho) * (math.sqrt(math.pi) / (44 * math.sqrt(2 * rho))) ** (8 * rho / nu))
    b1 = (math.sqrt(math.pi) / (4 * math.sqrt(rho)) * p ** (1 - nu / (4 * rho))
          * (nu / (2 * math.sqrt(math.pi))) ** (nu / (4 * rho)))
    b2 = (math.sqrt(nu) / (8 * math.sqrt(2 * math.pi) * (math.sqrt(rho) + math.sqrt(2)))
          * math.exp(-((math.sqrt(rho) + 4) / (2 * math.sqrt(nu))) ** 2))
    assert K.p_star == pytest.approx(p, rel=1e-12)
    assert K.kappa_tilde == pytest.approx(min(b1, b2), rel=1e-12)
    assert K.kappa_tilde > 0 and K.p_star > 0


def test_kappa_constants_reject_rho_below_nu():
    with pytest.raises(ValueError):
        kappa_constants(0.5, 1.0)


@pytest.mark.parametrize("nu", [0.1, 1.0, 4.0])
def test_kappa_tilde_monotone_in_rho(nu):
    vals = [kappa_constants(rho, nu).log_kappa_tilde for rho in np.linspace(nu, 10 * nu, 200)]
    assert np.all(np.diff(vals) <= 1e-12)


@given(st.floats(0.05, 20), st.floats(1.0, 5.0))
@settings(max_examples=50, deadline=None)
def test_kappa_below_kappa_tilde(alpha, ratio):
    beta = alpha * ratio
    lk, a = log_kappa(beta, alpha)
    assert lk <= kappa_constants(beta, alpha).log_kappa_tilde + 1e-12
    assert 1.0 <= a <= 4.0


def test_kappa_grid_minimum():
    lk, _ = log_kappa(1.0, 1.0)
    grid = [kappa_constants(a, a).log_kappa_tilde for a in np.linspace(1, 4, 256)]
    assert lk <= min(grid) + 1e-12
    assert kappa(1.0, 1.0) == pytest.approx(math.exp(lk), rel=1e-12)
