"""Scalar analytic layer: surrogate losses, Gaussian-smoothed loss and its
sigma-derivative, the margin threshold r(sigma) and the kappa constants.

Everything here is a pure function of its arguments and accepts numpy
arrays where that makes sense.

Notation: ``g(mu, sigma) = E[exp(-|mu + sigma Z|)]`` for ``Z ~ N(0, 1)`` and
``q(mu, sigma) = dg/dsigma``.  Both have closed forms in terms of the scaled
complementary error function ``erfcx(x) = exp(x^2) erfc(x)``:

    g = 1/2 exp(-mu^2 / 2 sigma^2) [erfcx((sigma^2 - mu) / (sqrt2 sigma))
                                    + erfcx((sigma^2 + mu) / (sqrt2 sigma))]
    q = sigma g - sqrt(2/pi) exp(-mu^2 / 2 sigma^2)
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Literal

import numpy as np
from numpy.polynomial.hermite_e import hermegauss
from scipy.optimize import minimize_scalar
from scipy.special import erfcx

from .quadrature import integrate

SQRT2 = math.sqrt(2.0)
SQRT_PI = math.sqrt(math.pi)
SQRT_2_OVER_PI = math.sqrt(2.0 / math.pi)
# r(sigma) switches branches here
R_BREAKPOINT = 4.0 * SQRT2 / SQRT_PI


# ---------------------------------------------------------------------------
# surrogate losses


def loss_exp(t):
    """exp(-|t|)."""
    return np.exp(-np.abs(t))


def loss_exp_grad(t):
    """Derivative of exp(-|t|), using 0 at the kink."""
    return -np.sign(t) * np.exp(-np.abs(t))


def loss_ent(t):
    """Binary entropy (nats) of sigmoid(t), stable for large |t|."""
    a = np.abs(np.asarray(t, dtype=float))
    # p = sigmoid(a) >= 1/2, 1 - p = sigmoid(-a)
    log1pe = np.log1p(np.exp(-a))  # softplus(-a) = -log p
    q = np.exp(-a - log1pe)  # 1 - p
    p = 1.0 - q
    # H = p * softplus(-a) + (1-p) * softplus(a), softplus(a) = a + softplus(-a)
    out = p * log1pe + q * (a + log1pe)
    return out if out.ndim else float(out)


def loss_ent_grad(t):
    """d/dt of the entropy loss: -t sigmoid(t) sigmoid(-t)."""
    t = np.asarray(t, dtype=float)
    a = np.abs(t)
    e = np.exp(-a)
    out = -t * e / (1.0 + e) ** 2
    return out if out.ndim else float(out)


# ---------------------------------------------------------------------------
# Gaussian-smoothed loss, closed form


def _scaled_pair(mu, sigma):
    """Return (m, s, E, A, B) with m = |mu| and the pieces of the closed form.

    ``E = exp(-m^2/2s^2)``, ``A = E*erfcx(a)`` and ``B = E*erfcx(b)`` with
    ``a = (s^2 - m)/(sqrt2 s)`` and ``b = (s^2 + m)/(sqrt2 s)``.  When ``a`` is
    very negative, erfcx(a) overflows, so the reflection
    ``erfcx(a) = 2 exp(a^2) - erfcx(-a)`` is applied and the ``exp(a^2)`` factor
    combined with E analytically.
    """
    m = np.abs(np.asarray(mu, dtype=float))
    s = np.asarray(sigma, dtype=float)
    a = (s * s - m) / (SQRT2 * s)
    b = (s * s + m) / (SQRT2 * s)
    E = np.exp(-m * m / (2.0 * s * s))
    B = E * erfcx(b)
    neg = a < 0
    a_pos = np.where(neg, -a, a)
    ex = erfcx(a_pos)
    A = np.where(neg, 2.0 * np.exp(0.5 * s * s - m) - E * ex, E * ex)
    return m, s, E, A, B


def g_sigma(mu, sigma):
    """E[exp(-|mu + sigma Z|)], Z standard normal; sigma >= 0."""
    mu = np.asarray(mu, dtype=float)
    sigma = np.asarray(sigma, dtype=float)
    if np.any(sigma < 0):
        raise ValueError("sigma must be non-negative")
    shape = np.broadcast_shapes(mu.shape, sigma.shape)
    mu_b = np.broadcast_to(mu, shape).ravel()
    sig_b = np.broadcast_to(sigma, shape).ravel()
    out = np.exp(-np.abs(mu_b))
    pos = sig_b > 0
    if np.any(pos):
        _, _, _, A, B = _scaled_pair(mu_b[pos], sig_b[pos])
        out[pos] = 0.5 * (A + B)
    return out.reshape(shape) if shape else float(out[0])


def dg_dmu(mu, sigma):
    """Derivative of g_sigma(mu) with respect to mu (0 at mu = 0)."""
    mu = np.asarray(mu, dtype=float)
    sigma = np.asarray(sigma, dtype=float)
    shape = np.broadcast_shapes(mu.shape, sigma.shape)
    mu_b = np.broadcast_to(mu, shape).ravel()
    sig_b = np.broadcast_to(sigma, shape).ravel()
    out = loss_exp_grad(mu_b)
    pos = sig_b > 0
    if np.any(pos):
        _, _, _, A, B = _scaled_pair(mu_b[pos], sig_b[pos])
        # derivative at |mu|, then restore the sign (g is even, g' is odd)
        out[pos] = np.sign(mu_b[pos]) * 0.5 * (B - A)
    return out.reshape(shape) if shape else float(out[0])


def q_sigma(mu, sigma):
    """d g_sigma(mu) / d sigma for sigma > 0."""
    mu = np.asarray(mu, dtype=float)
    sigma = np.asarray(sigma, dtype=float)
    if np.any(sigma <= 0):
        raise ValueError("q_sigma requires sigma > 0")
    _, s, E, A, B = _scaled_pair(mu, sigma)
    out = s * 0.5 * (A + B) - SQRT_2_OVER_PI * E
    return out if out.ndim else float(out)


# ---------------------------------------------------------------------------
# quadrature oracles

_GH_CACHE: dict[int, tuple[np.ndarray, np.ndarray]] = {}


def _gh_rule(nodes: int) -> tuple[np.ndarray, np.ndarray]:
    if nodes not in _GH_CACHE:
        x, w = hermegauss(nodes)
        _GH_CACHE[nodes] = (x, w / math.sqrt(2.0 * math.pi))
    return _GH_CACHE[nodes]


def gh_expectation(f: Callable, mu: float, sigma: float, nodes: int = 96) -> float:
    """Gauss-Hermite estimate of E[f(X)] for X ~ N(mu, sigma^2).

    Accurate for smooth ``f``; a kink inside the Gaussian bulk limits the
    rule to a few digits.
    """
    if nodes < 8:
        raise ValueError("need at least 8 nodes")
    if sigma < 0:
        raise ValueError("sigma must be non-negative")
    if sigma == 0:
        return float(f(np.asarray(mu, dtype=float)))
    x, w = _gh_rule(nodes)
    return float(np.dot(w, f(mu + sigma * x)))


def _kinked_expectation(f: Callable, mu: float, sigma: float, nodes: int,
                        kink: float = 0.0) -> float:
    """E[f(mu + sigma Z)] for f smooth except at ``kink``.

    Falls back from Gauss-Hermite to kink-split adaptive Gauss-Kronrod when
    the kink carries non-negligible Gaussian mass.
    """
    if sigma == 0:
        return float(f(np.asarray(mu, dtype=float)))
    z0 = (kink - mu) / sigma
    # the exp-tilted integrand for exp(-|t|) is centred near -sign(mu)*sigma
    if sigma - abs(z0) < -9.0:
        return gh_expectation(f, mu, sigma, nodes)
    width = 14.0 + sigma
    phi = lambda z: np.exp(-0.5 * z * z) / math.sqrt(2.0 * math.pi)  # noqa: E731
    return integrate(lambda z: phi(z) * f(mu + sigma * z), -width, width,
                     points=(z0,), epsabs=1e-15, epsrel=1e-13)


@dataclass(frozen=True)
class SmoothedLoss:
    """The pair (g_sigma, q_sigma) with a selectable evaluation backend."""

    backend: Literal["closed_form", "quadrature"] = "closed_form"
    quadrature_nodes: int = 96

    def __post_init__(self):
        if self.backend not in ("closed_form", "quadrature"):
            raise ValueError(f"unknown backend {self.backend!r}")
        if self.quadrature_nodes < 1:
            raise ValueError("quadrature_nodes must be positive")

    def g(self, mu: float, sigma: float) -> float:
        if self.backend == "closed_form":
            return g_sigma(mu, sigma)
        return _kinked_expectation(loss_exp, float(mu), float(sigma),
                                   self.quadrature_nodes)

    def q(self, mu: float, sigma: float) -> float:
        if self.backend == "closed_form":
            return q_sigma(mu, sigma)
        if sigma <= 0:
            raise ValueError("q requires sigma > 0")
        mu, sigma = float(mu), float(sigma)
        # d/dsigma E[l(mu + sigma Z)] = E[l'(mu + sigma Z) Z]
        return _kinked_expectation(
            lambda t: loss_exp_grad(t) * (t - mu) / sigma, mu, sigma,
            self.quadrature_nodes)


# ---------------------------------------------------------------------------
# margin threshold


def r_threshold(sigma):
    """Margin beyond which q_sigma(mu) >= sigma exp(-|mu|) / 4."""
    s = np.asarray(sigma, dtype=float)
    if np.any(s <= 0):
        raise ValueError("sigma must be positive")
    left = s * s + s * np.sqrt(2.0 * np.log(np.maximum(R_BREAKPOINT / s, 1.0)))
    out = np.where(s <= R_BREAKPOINT, left, 2.0 * s * s)
    return out if out.ndim else float(out)


def r_branches_at_breakpoint() -> tuple[float, float]:
    """Both branches of r evaluated at the breakpoint (left, right)."""
    s = R_BREAKPOINT
    return s * s + s * math.sqrt(2.0 * math.log(R_BREAKPOINT / s)), 2.0 * s * s


# ---------------------------------------------------------------------------
# kappa constants (computed in log space; they underflow quickly)


@dataclass(frozen=True)
class ThresholdConstants:
    rho: float
    nu: float
    log_p_star: float
    log_kappa_tilde: float

    @property
    def p_star(self) -> float:
        return math.exp(self.log_p_star)

    @property
    def kappa_tilde(self) -> float:
        return math.exp(self.log_kappa_tilde)


def log_p_star(rho: float, nu: float) -> float:
    inner = 0.5 * math.log(nu / rho) + (8.0 * rho / nu) * math.log(
        SQRT_PI / (44.0 * math.sqrt(2.0 * rho)))
    return math.log(math.sqrt(nu) / (2.0 * SQRT_PI)) + min(0.0, inner)


def kappa_tilde_terms(rho: float, nu: float) -> tuple[float, float]:
    """Log of the two candidates whose minimum defines kappa-tilde."""
    e = nu / (4.0 * rho)
    lp = log_p_star(rho, nu)
    t1 = (math.log(SQRT_PI / (4.0 * math.sqrt(rho))) + (1.0 - e) * lp
          + e * math.log(nu / (2.0 * SQRT_PI)))
    t2 = (math.log(math.sqrt(nu) / (8.0 * math.sqrt(2.0 * math.pi)
                                    * (math.sqrt(rho) + SQRT2)))
          - ((math.sqrt(rho) + 4.0) / (2.0 * math.sqrt(nu))) ** 2)
    return t1, t2


def kappa_constants(rho: float, nu: float) -> ThresholdConstants:
    if not (nu > 0 and rho > 0):
        raise ValueError("rho and nu must be positive")
    if rho < nu:
        raise ValueError(f"rho={rho} < nu={nu}: log-smoothness must dominate "
                         "log-concavity")
    t1, t2 = kappa_tilde_terms(rho, nu)
    return ThresholdConstants(rho=rho, nu=nu, log_p_star=log_p_star(rho, nu),
                              log_kappa_tilde=min(t1, t2))


def log_kappa(beta: float, alpha: float, grid: int = 256, tol: float = 1e-10
              ) -> tuple[float, float]:
    """min over a in [1, 4] of log kappa-tilde(a beta, a alpha).

    Returns ``(log_kappa, argmin_a)``.  Grid search, then golden-section
    refinement on the bracketing grid cell.
    """
    f = lambda a: kappa_constants(a * beta, a * alpha).log_kappa_tilde  # noqa: E731
    aa = np.linspace(1.0, 4.0, grid)
    vals = np.array([f(a) for a in aa])
    i = int(np.argmin(vals))
    best_a, best = float(aa[i]), float(vals[i])
    if 0 < i < grid - 1 and vals[i] < min(vals[i - 1], vals[i + 1]):
        res = minimize_scalar(f, bracket=(aa[i - 1], aa[i], aa[i + 1]),
                              method="golden", tol=tol)
        if res.fun < best and 1.0 <= res.x <= 4.0:
            best_a, best = float(res.x), float(res.fun)
    return best, best_a


def kappa(beta: float, alpha: float) -> float:
    return math.exp(log_kappa(beta, alpha)[0])
