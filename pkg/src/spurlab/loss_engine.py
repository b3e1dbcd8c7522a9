"""Population and empirical losses for linear classifiers w = (w1, w2).

Gaussian targets reduce exactly to the smoothed loss: ``w^T x`` given ``y`` is
``N(y w1.gamma, sigma_tilde^2)`` and the surrogate is even, so
``L(w) = g(w1.gamma, sigma_tilde)`` with
``sigma_tilde^2 = sigma1^2 |w1|^2 + w2^T Sigma2 w2``.

General 1-d log-concave signals use adaptive quadrature over the signal:
``L(w) = sum_k tau_k int p_k(x) g(w1 x, sigma) dx`` with ``sigma^2 = w2^T Sigma2 w2``.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy.optimize import minimize_scalar
from scipy.special import erfcx, log_ndtr, ndtr

from .distributions import (GaussianTargetSpec, MixtureSignalSpec, SampleBatch,
                            sample_target)
from .kernels import (SQRT2, dg_dmu, g_sigma, loss_ent, loss_ent_grad, loss_exp,
                      loss_exp_grad, q_sigma)
from .quadrature import integrate

SURROGATES = {
    "exp": (loss_exp, loss_exp_grad),
    "ent": (loss_ent, loss_ent_grad),
}


@dataclass(frozen=True)
class Classifier:
    w1: np.ndarray
    w2: np.ndarray
    R: float = 1.0

    def __post_init__(self):
        w1 = np.atleast_1d(np.asarray(self.w1, dtype=float)).copy()
        w2 = np.atleast_1d(np.asarray(self.w2, dtype=float)).copy()
        if not self.R > 0:
            raise ValueError("R must be positive")
        if math.hypot(np.linalg.norm(w1), np.linalg.norm(w2)) > self.R + 1e-12:
            raise ValueError(f"|w| exceeds the projection radius {self.R}")
        w1.setflags(write=False)
        w2.setflags(write=False)
        object.__setattr__(self, "w1", w1)
        object.__setattr__(self, "w2", w2)
        object.__setattr__(self, "R", float(self.R))

    @property
    def w(self) -> np.ndarray:
        return np.concatenate([self.w1, self.w2])

    @property
    def d1(self) -> int:
        return self.w1.size

    @classmethod
    def from_vector(cls, v, d1: int, R: float = 1.0) -> "Classifier":
        v = np.asarray(v, dtype=float)
        return cls(v[:d1], v[d1:], R)


@dataclass(frozen=True)
class SigmaDecomposition:
    sigma: float
    sigma_tilde: float


def sigma_decomposition(w: Classifier, Sigma2, sigma1: float | None = None
                        ) -> SigmaDecomposition:
    """sigma = sqrt(w2' Sigma2 w2); sigma_tilde adds the signal noise sigma1 |w1|."""
    S2 = np.atleast_2d(Sigma2)
    s2 = float(w.w2 @ S2 @ w.w2)
    st2 = s2 + (0.0 if sigma1 is None else sigma1 ** 2 * float(w.w1 @ w.w1))
    return SigmaDecomposition(math.sqrt(max(s2, 0.0)), math.sqrt(max(st2, 0.0)))


def _as_vec(w) -> np.ndarray:
    return w.w if isinstance(w, Classifier) else np.asarray(w, dtype=float)


def _split(v: np.ndarray, d1: int) -> tuple[np.ndarray, np.ndarray]:
    return v[:d1], v[d1:]


# ---------------------------------------------------------------------------
# Gaussian population


def _gauss_parts(v: np.ndarray, spec: GaussianTargetSpec):
    w1, w2 = _split(v, spec.d1)
    mu = float(w1 @ spec.gamma)
    S2w2 = spec.Sigma2 @ w2
    st = math.sqrt(max(spec.sigma1 ** 2 * float(w1 @ w1) + float(w2 @ S2w2), 0.0))
    return w1, w2, mu, S2w2, st


def population_loss_gaussian(w, spec: GaussianTargetSpec) -> float:
    _, _, mu, _, st = _gauss_parts(_as_vec(w), spec)
    return g_sigma(mu, st)


def population_grad_gaussian(w, spec: GaussianTargetSpec) -> np.ndarray:
    """Analytic gradient; at sigma_tilde = 0 only the margin term is kept."""
    w1, w2, mu, S2w2, st = _gauss_parts(_as_vec(w), spec)
    dmu = dg_dmu(mu, st)
    if st == 0.0:
        return np.concatenate([dmu * spec.gamma, np.zeros_like(w2)])
    q = q_sigma(mu, st)
    return np.concatenate([dmu * spec.gamma + q * spec.sigma1 ** 2 * w1 / st,
                           q * S2w2 / st])


def target_accuracy(w, spec: GaussianTargetSpec) -> float:
    """P(sign(w^T x) = y) = Phi(w1.gamma / sigma_tilde)."""
    _, _, mu, _, st = _gauss_parts(_as_vec(w), spec)
    if st == 0.0:
        return 1.0 if mu > 0 else (0.5 if mu == 0 else 0.0)
    return float(ndtr(mu / st))


def dL_dsigma_gaussian(w, spec: GaussianTargetSpec) -> float:
    """Derivative in the spurious std sigma with w1 held fixed (d1 = 1 reduction)."""
    v = _as_vec(w)
    w1, w2, mu, S2w2, st = _gauss_parts(v, spec)
    s = math.sqrt(max(float(w2 @ S2w2), 0.0))
    if s == 0.0:
        raise ValueError("dL/dsigma needs sigma > 0")
    return q_sigma(mu, st) * s / st


# ---------------------------------------------------------------------------
# frozen-label (pseudo-label) Gaussian population objective
#
# Labels come from a fixed labeler a: k = sign(a^T x), and only |a^T x| >= tau
# is kept.  Conditioning the Gaussian x | y on u = a^T x gives w^T x | u as a
# Gaussian whose mean is affine in u, so every term is a tilted, truncated
# normal expectation E[1{Z >= h} exp(-t Z)].


def _log_tilt_tail(h: float, t: float) -> float:
    """log E[1{Z >= h} exp(-t Z)] for Z standard normal."""
    return 0.5 * t * t + float(log_ndtr(-(h + t)))


def _inv_mills(x: float) -> float:
    """phi(x) / (1 - Phi(x))."""
    if x > 0:
        return math.sqrt(2.0 / math.pi) / float(erfcx(x / SQRT2))
    return math.exp(-0.5 * x * x - 0.5 * math.log(2.0 * math.pi) - float(log_ndtr(-x)))


def _frozen_terms(v: np.ndarray, a: np.ndarray, spec: GaussianTargetSpec,
                  tau: float, want_grad: bool):
    d1 = spec.d1
    C = np.zeros((v.size, v.size))
    C[:d1, :d1] = spec.sigma1 ** 2 * np.eye(d1)
    C[d1:, d1:] = spec.Sigma2
    Ca = C @ a
    s2 = float(a @ Ca)
    if s2 <= 0:
        raise ValueError("labeler must be nonzero")
    s = math.sqrt(s2)
    Cw = C @ v
    wCa = float(v @ Ca)
    c = wCa / s2
    vw = max(float(v @ Cw) - wCa * c, 0.0)
    Cu_w = Cw - Ca * c  # conditional covariance applied to w
    t = c * s
    loss = 0.0
    grad = np.zeros_like(v)
    kept = 0.0
    for y in (1.0, -1.0):
        m = np.concatenate([y * spec.gamma, np.zeros(v.size - d1)])
        nu = float(a @ m)
        b0 = float(v @ m) - c * nu
        for k in (1.0, -1.0):
            # region k*u >= tau, written as Z' >= h with u = nu + k s Z'
            h = (tau - k * nu) / s
            kept += 0.5 * float(ndtr(-h))
            # exponent -k (b0 + c u) + vw/2 = -k b0 - k c nu - t Z' + vw/2
            logE = -k * b0 - k * c * nu + 0.5 * vw + _log_tilt_tail(h, t)
            E0 = 0.5 * math.exp(logE)
            loss += E0
            if want_grad and E0 > 0:
                ubar = nu + k * s * (_inv_mills(h + t) - t)
                grad += -k * E0 * (m + Ca * (ubar - nu) / s2 - k * Cu_w)
    return loss, grad, kept


def frozen_label_loss_gaussian(w, labeler, spec: GaussianTargetSpec, tau: float = 0.0
                               ) -> float:
    """E[exp(-k w^T x) | |a^T x| >= tau] with k = sign(a^T x)."""
    loss, _, kept = _frozen_terms(_as_vec(w), _as_vec(labeler), spec, tau, False)
    if kept <= 0:
        raise ValueError("threshold removes all mass")
    return loss / kept


def frozen_label_grad_gaussian(w, labeler, spec: GaussianTargetSpec, tau: float = 0.0
                               ) -> np.ndarray:
    _, grad, kept = _frozen_terms(_as_vec(w), _as_vec(labeler), spec, tau, True)
    if kept <= 0:
        raise ValueError("threshold removes all mass")
    return grad / kept


# ---------------------------------------------------------------------------
# general 1-d signal by quadrature


def _mixture_integral(w, signal: MixtureSignalSpec, Sigma2, kernel: Callable,
                      need_sigma: bool) -> float:
    v = _as_vec(w)
    S2 = np.atleast_2d(Sigma2)
    w1, w2 = v[:1], v[1:]
    if w2.size != S2.shape[0]:
        raise ValueError("w2 and Sigma2 dimensions differ")
    sigma = math.sqrt(max(float(w2 @ S2 @ w2), 0.0))
    if need_sigma and sigma == 0.0:
        raise ValueError("dL/dsigma needs sigma > 0")
    b = float(w1[0])
    if b == 0.0:
        return float(kernel(0.0, sigma))
    total = 0.0
    for tau_k, comp in zip(signal.weights, signal.components):
        total += tau_k * _component_integral(comp, b, sigma, kernel)
    return total


def _log_envelope(comp, b: float, sigma: float) -> Callable:
    # log of p(x) g(bx): the loss integrand, whose window also covers |q| terms
    return lambda x: comp.log_pdf(x) + np.log(np.maximum(g_sigma(b * x, sigma), 1e-300))


def _component_integral(comp, b: float, sigma: float, kernel: Callable) -> float:
    logf = _log_envelope(comp, b, sigma)
    lo, hi = comp.support
    lo, hi = min(lo, 0.0), max(hi, 0.0)
    # p(x) g(bx) is log-concave; locate its peak then walk out 60 nats
    res = minimize_scalar(lambda x: -float(logf(x)), bounds=(lo, hi), method="bounded",
                          options={"xatol": 1e-10})
    peak_x, peak = float(res.x), -float(res.fun)
    step = max(1.0, 0.01 * (hi - lo))
    left = peak_x - step
    while logf(left) > peak - 60.0:
        left -= step
        step *= 2.0
    step = max(1.0, 0.01 * (hi - lo))
    right = peak_x + step
    while logf(right) > peak - 60.0:
        right += step
        step *= 2.0
    scale = math.exp(peak) * (right - left)
    f = lambda x: comp.pdf(x) * kernel(b * x, sigma)  # noqa: E731
    return integrate(f, left, right, points=(0.0, peak_x, comp.mode),
                     epsabs=1e-13 * scale, epsrel=1e-12)


def population_loss_general(w, signal: MixtureSignalSpec, Sigma2=None) -> float:
    S2 = signal.Sigma2 if Sigma2 is None else Sigma2
    if S2 is None:
        raise ValueError("Sigma2 is required")
    return _mixture_integral(w, signal, S2, g_sigma, need_sigma=False)


def dL_dsigma(w, signal, Sigma2=None) -> float:
    """E_mu[q_sigma(mu)] for a mixture signal, or the closed form for a Gaussian spec."""
    if isinstance(signal, GaussianTargetSpec):
        return dL_dsigma_gaussian(w, signal)
    S2 = signal.Sigma2 if Sigma2 is None else Sigma2
    if S2 is None:
        raise ValueError("Sigma2 is required")
    return _mixture_integral(w, signal, S2, q_sigma, need_sigma=True)


def density_at_zero_log(w, signal: MixtureSignalSpec) -> float:
    """log of the density of mu = w1 x1 at 0."""
    b = abs(float(_as_vec(w)[0]))
    if b == 0.0:
        return math.inf
    logs = [math.log(t) + float(c.log_pdf(0.0)) for t, c in zip(signal.weights, signal.components)]
    m = max(logs)
    return m + math.log(sum(math.exp(l - m) for l in logs)) - math.log(b)


# ---------------------------------------------------------------------------
# empirical


def _margins(v: np.ndarray, batch: SampleBatch) -> np.ndarray:
    d1 = batch.x1.shape[1]
    return batch.x1 @ v[:d1] + batch.x2 @ v[d1:]


def _weighted_mean_rows(coef: np.ndarray, batch: SampleBatch) -> np.ndarray:
    # fixed-order reduction so results do not depend on BLAS threading
    g1 = (coef[:, None] * batch.x1).sum(axis=0)
    g2 = (coef[:, None] * batch.x2).sum(axis=0)
    return np.concatenate([g1, g2]) / batch.n


def empirical_loss(w, batch: SampleBatch, surrogate: str = "exp") -> float:
    f, _ = SURROGATES[surrogate]
    return float(np.mean(f(_margins(_as_vec(w), batch))))


def empirical_grad(w, batch: SampleBatch, surrogate: str = "exp") -> np.ndarray:
    _, df = SURROGATES[surrogate]
    return _weighted_mean_rows(np.asarray(df(_margins(_as_vec(w), batch))), batch)


def pseudo_labels(labeler, batch: SampleBatch, tau: float = 0.0
                  ) -> tuple[np.ndarray, np.ndarray]:
    """(labels, keep mask); labels are sign(a^T x), ties get label 0."""
    t = _margins(_as_vec(labeler), batch)
    return np.sign(t), np.abs(t) >= tau


def frozen_label_loss(w, batch: SampleBatch, labels: np.ndarray, keep=None) -> float:
    t = _margins(_as_vec(w), batch)
    keep = np.ones(batch.n, bool) if keep is None else keep
    if not keep.any():
        raise ValueError("no samples kept")
    return float(np.mean(np.exp(-labels[keep] * t[keep])))


def frozen_label_grad(w, batch: SampleBatch, labels: np.ndarray, keep=None) -> np.ndarray:
    """Gradient of the mean of exp(-y_i w^T x_i) over kept samples."""
    t = _margins(_as_vec(w), batch)
    keep = np.ones(batch.n, bool) if keep is None else keep
    m = int(keep.sum())
    if m == 0:
        raise ValueError("no samples kept")
    coef = np.where(keep, -labels * np.exp(-labels * t), 0.0)
    return _weighted_mean_rows(coef, batch) * (batch.n / m)


def empirical_accuracy(w, batch: SampleBatch) -> float:
    return float(np.mean(np.sign(_margins(_as_vec(w), batch)) == batch.y))


# ---------------------------------------------------------------------------
# objectives consumed by the trainer


class PopulationObjective:
    """Exact Gaussian population objective (exp surrogate)."""

    def __init__(self, spec: GaussianTargetSpec):
        self.spec = spec
        self.d1 = spec.d1

    def resample(self, index: int) -> "PopulationObjective":
        return self

    def loss(self, v) -> float:
        return population_loss_gaussian(v, self.spec)

    def grad(self, v) -> np.ndarray:
        return population_grad_gaussian(v, self.spec)

    def frozen_grad(self, v, labeler, tau: float = 0.0) -> np.ndarray:
        return frozen_label_grad_gaussian(v, labeler, self.spec, tau)

    def accuracy(self, v) -> float:
        return target_accuracy(v, self.spec)


class EmpiricalObjective:
    """Full-batch objective on a fixed sample."""

    def __init__(self, batch: SampleBatch, surrogate: str = "exp",
                 spec: GaussianTargetSpec | None = None):
        if surrogate not in SURROGATES:
            raise ValueError(f"unknown surrogate {surrogate!r}")
        self.batch = batch
        self.surrogate = surrogate
        self.spec = spec
        self.d1 = batch.x1.shape[1]

    def resample(self, index: int) -> "EmpiricalObjective":
        return self

    def loss(self, v) -> float:
        return empirical_loss(v, self.batch, self.surrogate)

    def grad(self, v) -> np.ndarray:
        return empirical_grad(v, self.batch, self.surrogate)

    def frozen_grad(self, v, labeler, tau: float = 0.0) -> np.ndarray:
        labels, keep = pseudo_labels(labeler, self.batch, tau)
        return frozen_label_grad(v, self.batch, labels, keep)

    def accuracy(self, v) -> float:
        if self.spec is not None:
            return target_accuracy(v, self.spec)
        return empirical_accuracy(v, self.batch)


def child_seed(seed: int, *keys: int) -> int:
    return int(np.random.SeedSequence([int(seed) & (2**63 - 1), *map(int, keys)])
               .generate_state(1, np.uint64)[0])


class StreamingObjective:
    """Draws a fresh target batch of size n for every data index."""

    def __init__(self, spec: GaussianTargetSpec, n: int, seed: int,
                 surrogate: str = "exp"):
        self.spec = spec
        self.n = n
        self.seed = seed
        self.surrogate = surrogate
        self.d1 = spec.d1

    def resample(self, index: int) -> EmpiricalObjective:
        batch = sample_target(self.spec, self.n, child_seed(self.seed, index))
        return EmpiricalObjective(batch, self.surrogate, self.spec)

    def loss(self, v) -> float:
        return population_loss_gaussian(v, self.spec)

    def grad(self, v) -> np.ndarray:
        return population_grad_gaussian(v, self.spec)

    def accuracy(self, v) -> float:
        return target_accuracy(v, self.spec)


# ---------------------------------------------------------------------------
# smoothness and Hessians


def smoothness_estimate(grad_fn: Callable, dim: int, R: float = 1.0,
                        pairs: int = 100, seed: int = 0) -> float:
    """Largest |grad(u) - grad(v)| / |u - v| over random nearby pairs on the sphere."""
    rng = np.random.Generator(np.random.Philox(seed))
    best = 0.0
    for _ in range(pairs):
        u = rng.standard_normal(dim)
        u *= R / np.linalg.norm(u)
        d = rng.standard_normal(dim)
        d *= 10.0 ** rng.uniform(-3, 0) * R / np.linalg.norm(d)
        v = u + d
        best = max(best, float(np.linalg.norm(grad_fn(u) - grad_fn(v)) / np.linalg.norm(d)))
    return best


def fd_hessian(grad_fn: Callable, v, h: float = 1e-4) -> np.ndarray:
    """Central-difference Hessian from gradients, symmetrised."""
    v = np.asarray(v, dtype=float)
    H = np.empty((v.size, v.size))
    for i in range(v.size):
        e = np.zeros_like(v)
        e[i] = h
        H[:, i] = (grad_fn(v + e) - grad_fn(v - e)) / (2.0 * h)
    return 0.5 * (H + H.T)


def fd_gradient(f: Callable, v, h: float = 1e-6) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    g = np.empty_like(v)
    for i in range(v.size):
        e = np.zeros_like(v)
        e[i] = h
        g[i] = (f(v + e) - f(v - e)) / (2.0 * h)
    return g


# ---------------------------------------------------------------------------
# gradient concentration


@dataclass(frozen=True)
class DeviationTable:
    rows: tuple  # (n, trial, sup_dev)

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("n,trial,sup_dev\n")
        for n, trial, dev in self.rows:
            buf.write(f"{n},{trial},{dev:.17g}\n")
        return buf.getvalue()

    def mean_by_n(self) -> tuple[np.ndarray, np.ndarray]:
        ns = sorted({r[0] for r in self.rows})
        means = [np.mean([r[2] for r in self.rows if r[0] == n]) for n in ns]
        return np.array(ns, dtype=float), np.array(means)


def grad_deviation(spec: GaussianTargetSpec, n_list: Sequence[int], trials: int,
                   w_grid: Iterable, seed: int) -> DeviationTable:
    """sup over w and over the (w1, 0), (0, w2) directions of |<grad_hat - grad, dir>|."""
    ws = [_as_vec(w) for w in w_grid]
    if not ws:
        raise ValueError("w_grid is empty")
    pop = [population_grad_gaussian(v, spec) for v in ws]
    d1 = spec.d1
    rows = []
    for n in n_list:
        for trial in range(trials):
            batch = sample_target(spec, int(n), child_seed(seed, int(n), trial))
            sup = 0.0
            for v, gp in zip(ws, pop):
                diff = empirical_grad(v, batch) - gp
                sup = max(sup, abs(float(diff[:d1] @ v[:d1])), abs(float(diff[d1:] @ v[d1:])))
            rows.append((int(n), trial, sup))
    return DeviationTable(tuple(rows))
