"""Source and target distributions for the spurious-feature model.

Target data: ``y`` uniform on {-1, +1}, signal ``x1`` drawn from a
class-conditional distribution, spurious ``x2 ~ N(0, Sigma2)`` independent of
``(x1, y)``.  The toy source distribution makes ``x2`` correlate with ``y``.

All randomness goes through ``numpy.random.Generator(numpy.random.Philox(seed))``,
a counter-based 64-bit generator whose streams are identical across
platforms.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.integrate import cumulative_simpson
from scipy.special import ndtr

from .quadrature import integrate


class SamplerError(RuntimeError):
    """Raised when a rejection sampler or its envelope construction fails."""


class NonConcaveError(ValueError):
    """Raised when a log-density has positive curvature somewhere."""

    def __init__(self, x: float, value: float):
        self.point = x
        self.value = value
        super().__init__(f"log-density is not concave at x={x!r} "
                         f"(second derivative {value!r})")


def make_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(int(seed) & (2**64 - 1)))


# ---------------------------------------------------------------------------
# Gaussian target


@dataclass(frozen=True)
class GaussianTargetSpec:
    """x1 | y ~ N(y gamma, sigma1^2 I),  x2 ~ N(0, Sigma2)."""

    gamma: np.ndarray
    sigma1: float
    Sigma2: np.ndarray
    chol2: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        gamma = np.atleast_1d(np.asarray(self.gamma, dtype=float))
        S2 = np.atleast_2d(np.asarray(self.Sigma2, dtype=float))
        if gamma.ndim != 1:
            raise ValueError("gamma must be a vector")
        if not self.sigma1 > 0:
            raise ValueError("sigma1 must be positive")
        if S2.shape[0] != S2.shape[1] or not np.allclose(S2, S2.T, atol=1e-12):
            raise ValueError("Sigma2 must be a symmetric square matrix")
        try:
            L = np.linalg.cholesky(S2)
        except np.linalg.LinAlgError as exc:
            raise ValueError("Sigma2 must be positive definite") from exc
        object.__setattr__(self, "gamma", gamma)
        object.__setattr__(self, "Sigma2", S2)
        object.__setattr__(self, "sigma1", float(self.sigma1))
        object.__setattr__(self, "chol2", L)

    @property
    def d1(self) -> int:
        return self.gamma.size

    @property
    def d2(self) -> int:
        return self.Sigma2.shape[0]

    def sigma_tilde_range(self) -> tuple[float, float]:
        """(sigma_tilde_min, sigma_tilde_max) of blockdiag(sigma1^2 I, Sigma2)."""
        ev = np.linalg.eigvalsh(self.Sigma2)
        lo = min(self.sigma1 ** 2, ev[0])
        hi = max(self.sigma1 ** 2, ev[-1])
        return math.sqrt(lo), math.sqrt(hi)


def bayes_accuracy(spec: GaussianTargetSpec) -> float:
    """Accuracy of the best linear classifier, Phi(|gamma| / sigma1)."""
    return float(ndtr(np.linalg.norm(spec.gamma) / spec.sigma1))


# ---------------------------------------------------------------------------
# general 1-d log-concave components


def _newton_mode(dlog, d2log, x0: float, max_iter: int = 200, tol: float = 1e-12
                 ) -> float:
    x = float(x0)
    for _ in range(max_iter):
        g, h = float(dlog(x)), float(d2log(x))
        if not (math.isfinite(g) and math.isfinite(h)) or h >= 0:
            break
        step = g / h
        x -= step
        if abs(step) <= tol * (1.0 + abs(x)):
            return x
    raise SamplerError(f"mode not found by Newton iteration from x0={x0!r} "
                       f"within {max_iter} iterations")


@dataclass(frozen=True)
class LogConcaveComponent:
    """A 1-d log-concave density given by its (unnormalised) log and derivatives.

    The normaliser, mode and an effective support are computed numerically on
    construction; ``alpha``/``beta`` are the declared curvature bounds
    ``-beta <= (log p)'' <= -alpha`` if known.
    """

    log_density: Callable
    dlog_density: Callable
    d2log_density: Callable
    class_sign: int = 1
    support_hint: tuple[float, float] = (-10.0, 10.0)
    alpha: float | None = None
    beta: float | None = None
    mode: float = field(init=False)
    log_norm: float = field(init=False)
    support: tuple[float, float] = field(init=False)

    def __post_init__(self):
        if self.class_sign not in (-1, 1):
            raise ValueError("class_sign must be +1 or -1")
        lo, hi = map(float, self.support_hint)
        if not lo < hi:
            raise ValueError("support_hint must be an increasing interval")
        mode = _newton_mode(self.dlog_density, self.d2log_density, 0.5 * (lo + hi))
        top = float(self.log_density(mode))
        # widen until the density has fallen by e^-60 relative to the mode
        half = max(hi - mode, mode - lo, 1.0)
        while True:
            a, b = mode - half, mode + half
            if (self.log_density(a) - top < -60.0
                    and self.log_density(b) - top < -60.0):
                break
            half *= 2.0
            if half > 1e8:
                raise SamplerError("density does not decay; not log-concave?")
        mass = integrate(lambda x: np.exp(self.log_density(x) - top), a, b,
                         points=(mode,), epsabs=1e-14, epsrel=1e-12)
        object.__setattr__(self, "mode", mode)
        object.__setattr__(self, "log_norm", top + math.log(mass))
        object.__setattr__(self, "support", (a, b))

    def log_pdf(self, x):
        return self.log_density(x) - self.log_norm

    def pdf(self, x):
        return np.exp(self.log_pdf(x))

    def cdf_table(self, n: int = 200001) -> tuple[np.ndarray, np.ndarray]:
        """Numerically integrated CDF on a uniform grid over the support."""
        x = np.linspace(*self.support, n)
        c = cumulative_simpson(self.pdf(x), x=x, initial=0.0)
        return x, c / c[-1]

    def cdf(self, x):
        xs, cs = self.cdf_table()
        return np.interp(x, xs, cs)

    def mass_in(self, lo: float, hi: float) -> float:
        return integrate(self.pdf, lo, hi, points=(self.mode,), epsabs=1e-13)

    def effective_support(self, tail: float = 1e-12) -> tuple[float, float]:
        """Interval outside of which each tail carries less than ``tail`` mass."""
        xs, cs = self.cdf_table(20001)
        i = max(int(np.searchsorted(cs, tail)) - 1, 0)
        j = min(int(np.searchsorted(cs, 1.0 - tail)) + 1, xs.size - 1)
        return float(xs[i]), float(xs[j])


def gaussian_component(mean: float, std: float, class_sign: int = 1
                       ) -> LogConcaveComponent:
    v = std * std
    return LogConcaveComponent(
        log_density=lambda x: -0.5 * (np.asarray(x) - mean) ** 2 / v,
        dlog_density=lambda x: -(np.asarray(x) - mean) / v,
        d2log_density=lambda x: np.full(np.shape(x), -1.0 / v),
        class_sign=class_sign,
        support_hint=(mean - 10.0 * std, mean + 10.0 * std),
        alpha=1.0 / v, beta=1.0 / v)


def cos_component(shift: float = 0.0, class_sign: int = 1) -> LogConcaveComponent:
    """Density proportional to exp(-(x-shift)^2 + cos(x-shift)); 1-concave, 3-smooth."""
    return LogConcaveComponent(
        log_density=lambda x: -(np.asarray(x) - shift) ** 2 + np.cos(np.asarray(x) - shift),
        dlog_density=lambda x: -2.0 * (np.asarray(x) - shift) - np.sin(np.asarray(x) - shift),
        d2log_density=lambda x: -2.0 - np.cos(np.asarray(x) - shift),
        class_sign=class_sign,
        support_hint=(shift - 8.0, shift + 8.0),
        alpha=1.0, beta=3.0)


def transform_component(comp: LogConcaveComponent, shift: float = 0.0,
                        scale: float = 1.0, class_sign: int | None = None
                        ) -> LogConcaveComponent:
    """Law of ``scale * X + shift`` for X drawn from ``comp``."""
    if scale == 0:
        raise ValueError("scale must be nonzero")
    c = float(scale)
    u = lambda x: (np.asarray(x) - shift) / c  # noqa: E731
    lo, hi = sorted((c * comp.support_hint[0] + shift, c * comp.support_hint[1] + shift))
    return LogConcaveComponent(
        log_density=lambda x: comp.log_density(u(x)),
        dlog_density=lambda x: comp.dlog_density(u(x)) / c,
        d2log_density=lambda x: comp.d2log_density(u(x)) / (c * c),
        class_sign=comp.class_sign if class_sign is None else class_sign,
        support_hint=(lo, hi),
        alpha=None if comp.alpha is None else comp.alpha / (c * c),
        beta=None if comp.beta is None else comp.beta / (c * c))


def estimate_concavity(comp: LogConcaveComponent, grid: tuple[float, float, float]
                       ) -> tuple[float, float]:
    """(alpha_hat, beta_hat) from the second derivative on ``(lo, hi, step)``."""
    lo, hi, step = grid
    if not (lo < hi and step > 0):
        raise ValueError("grid must be (lo, hi, step) with lo < hi, step > 0")
    mass = comp.mass_in(lo, hi)
    if mass < 0.999:
        raise ValueError(f"grid covers only {mass:.6f} of the mass (need 0.999)")
    x = np.arange(lo, hi + 0.5 * step, step)
    d2 = np.asarray(comp.d2log_density(x), dtype=float)
    bad = np.flatnonzero(d2 > 0)
    if bad.size:
        raise NonConcaveError(float(x[bad[0]]), float(d2[bad[0]]))
    return float(-d2.max()), float(np.abs(d2).max())


def _sample_logconcave(comp: LogConcaveComponent, n: int, rng: np.random.Generator,
                       max_proposals: int = 10**6) -> np.ndarray:
    alpha = comp.alpha
    if alpha is None:
        a, b = comp.support
        alpha, _ = estimate_concavity(comp, (a, b, (b - a) / 20000))
    if not alpha > 0:
        raise SamplerError("envelope needs a positive concavity constant")
    mode = comp.mode
    sd = 1.0 / math.sqrt(alpha)
    top = float(comp.log_density(mode))
    out = np.empty(n)
    filled = 0
    since_accept = 0
    while filled < n:
        m = max(2 * (n - filled), 64)
        x = mode + sd * rng.standard_normal(m)
        u = rng.random(m)
        # p(x) / (M q(x)) with the alpha-concavity bound on log p
        log_ratio = comp.log_density(x) - top + 0.5 * alpha * (x - mode) ** 2
        acc = x[np.log(u) < log_ratio]
        if acc.size == 0:
            since_accept += m
            if since_accept > max_proposals:
                raise SamplerError(f"no acceptance in {since_accept} proposals "
                                   f"(envelope at mode {mode!r}, sd {sd!r})")
            continue
        since_accept = 0
        take = min(acc.size, n - filled)
        out[filled:filled + take] = acc[:take]
        filled += take
    return out


def sample_logconcave_1d(comp: LogConcaveComponent, n: int, seed: int) -> np.ndarray:
    """Rejection sampling from the Gaussian envelope N(mode, 1/alpha)."""
    if n < 1:
        raise ValueError("n must be positive")
    return _sample_logconcave(comp, n, make_rng(seed))


@dataclass(frozen=True)
class MixtureSignalSpec:
    """Signal x1 (1-d) drawn from a mixture; the label is the component's sign."""

    components: Sequence[LogConcaveComponent]
    weights: Sequence[float]
    Sigma2: np.ndarray | None = None

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        if len(self.components) == 0 or w.shape != (len(self.components),):
            raise ValueError("need one weight per component")
        if np.any(w <= 0) or abs(w.sum() - 1.0) > 1e-12:
            raise ValueError("weights must be positive and sum to 1")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "components", tuple(self.components))
        if self.Sigma2 is not None:
            S2 = np.atleast_2d(np.asarray(self.Sigma2, dtype=float))
            np.linalg.cholesky(S2)
            object.__setattr__(self, "Sigma2", S2)

    @property
    def tau_min(self) -> float:
        return float(np.min(self.weights))


def symmetric_gaussian_mixture(gamma: float, sigma1: float) -> MixtureSignalSpec:
    """Components N(+gamma, sigma1^2) (label +1) and N(-gamma, sigma1^2) (label -1)."""
    return MixtureSignalSpec(
        [gaussian_component(gamma, sigma1, 1), gaussian_component(-gamma, sigma1, -1)],
        [0.5, 0.5])


# ---------------------------------------------------------------------------
# batches


@dataclass(frozen=True)
class SampleBatch:
    x1: np.ndarray
    x2: np.ndarray
    y: np.ndarray
    seed: int

    def __post_init__(self):
        # C order fixes the summation order of the row reductions
        x1 = np.array(self.x1, dtype=float, order="C")
        x2 = np.array(self.x2, dtype=float, order="C")
        y = np.array(self.y, dtype=float, order="C")
        if x1.ndim == 1:
            x1 = x1[:, None]
        if x2.ndim == 1:
            x2 = x2[:, None]
        if not (x1.shape[0] == x2.shape[0] == y.shape[0]):
            raise ValueError("row counts of x1, x2 and y differ")
        if not np.all(np.abs(y) == 1):
            raise ValueError("labels must be +1 or -1")
        for name, arr in (("x1", x1), ("x2", x2), ("y", y)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def n(self) -> int:
        return self.y.shape[0]

    @property
    def X(self) -> np.ndarray:
        """Full design matrix [x1, x2]."""
        return np.hstack([self.x1, self.x2])

    def to_csv(self) -> str:
        d1, d2 = self.x1.shape[1], self.x2.shape[1]
        header = ",".join(["y"] + [f"x1_{i}" for i in range(d1)]
                          + [f"x2_{i}" for i in range(d2)])
        buf = io.StringIO()
        np.savetxt(buf, np.column_stack([self.y, self.x1, self.x2]),
                   delimiter=",", fmt="%.17g", header=header, comments="")
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str, seed: int = 0) -> "SampleBatch":
        lines = text.splitlines()
        cols = lines[0].split(",")
        data = np.loadtxt(io.StringIO("\n".join(lines[1:])), delimiter=",", ndmin=2)
        d1 = sum(c.startswith("x1_") for c in cols)
        return cls(data[:, 1:1 + d1], data[:, 1 + d1:], data[:, 0], seed)


def sample_target(spec, n: int, seed: int) -> SampleBatch:
    """Draw ``n`` target examples from a Gaussian or mixture signal spec."""
    if n < 1:
        raise ValueError("n must be positive")
    rng = make_rng(seed)
    if isinstance(spec, GaussianTargetSpec):
        y = rng.choice(np.array([-1.0, 1.0]), size=n)
        x1 = y[:, None] * spec.gamma[None, :] + spec.sigma1 * rng.standard_normal((n, spec.d1))
        Sigma2_chol = spec.chol2
    elif isinstance(spec, MixtureSignalSpec):
        k = rng.choice(len(spec.components), size=n, p=spec.weights)
        y = np.array([c.class_sign for c in spec.components], dtype=float)[k]
        x1 = np.empty(n)
        for i, comp in enumerate(spec.components):
            idx = np.flatnonzero(k == i)
            if idx.size:
                x1[idx] = _sample_logconcave(comp, idx.size, rng)
        x1 = x1[:, None]
        S2 = spec.Sigma2 if spec.Sigma2 is not None else np.eye(1)
        Sigma2_chol = np.linalg.cholesky(S2)
    else:
        raise TypeError(f"unsupported spec type {type(spec).__name__}")
    x2 = rng.standard_normal((n, Sigma2_chol.shape[0])) @ Sigma2_chol.T
    return SampleBatch(x1, x2, y, seed)


@dataclass(frozen=True)
class ToySourceSpec:
    """x1 ~ N(y gamma, I); each x2_i equals y|z| with prob corr_prob, else z."""

    gamma: np.ndarray
    corr_prob: float = 0.8
    d2: int = 2

    def __post_init__(self):
        object.__setattr__(self, "gamma", np.atleast_1d(np.asarray(self.gamma, dtype=float)))
        if not 0.0 <= self.corr_prob <= 1.0:
            raise ValueError("corr_prob must lie in [0, 1]")
        if self.d2 < 1:
            raise ValueError("d2 must be positive")

    def target(self) -> GaussianTargetSpec:
        """Matching target: same signal, spurious coordinates N(0, I)."""
        return GaussianTargetSpec(self.gamma, 1.0, np.eye(self.d2))


def sample_source_toy(spec: ToySourceSpec, n: int, seed: int) -> SampleBatch:
    if n < 1:
        raise ValueError("n must be positive")
    rng = make_rng(seed)
    d1 = spec.gamma.size
    y = rng.choice(np.array([-1.0, 1.0]), size=n)
    x1 = y[:, None] * spec.gamma[None, :] + rng.standard_normal((n, d1))
    z = rng.standard_normal((n, spec.d2))
    corr = rng.random((n, spec.d2)) < spec.corr_prob
    x2 = np.where(corr, y[:, None] * np.abs(z), z)
    return SampleBatch(x1, x2, y, seed)


def random_gamma(radius: float, d1: int, seed: int) -> np.ndarray:
    """Uniform direction on the sphere of the given radius."""
    v = make_rng(seed).standard_normal(d1)
    return radius * v / np.linalg.norm(v)
