"""Self-training loops: projected GD on the unlabeled surrogate, pseudo-labeling
(per step and in thresholded rounds), noisy GD, and an approximate local
minimum certificate for the purified objective w -> L((w1, 0)).

Objectives follow a small duck-typed protocol (see ``loss_engine``):
``resample(index)`` returns the object whose ``grad``/``frozen_grad`` drives
step ``index``; ``loss``, ``grad`` and ``accuracy`` on the objective itself
are used for the recorded trajectory.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, field
from typing import Callable, Literal, Optional

import numpy as np

from .distributions import make_rng
from .loss_engine import Classifier, fd_hessian, smoothness_estimate

Variant = Literal["entropy_min", "pseudo_step", "pseudo_rounds", "noisy_gd"]
VARIANTS = ("entropy_min", "pseudo_step", "pseudo_rounds", "noisy_gd")


class NumericAbort(RuntimeError):
    def __init__(self, step: int, what: str):
        self.step = step
        super().__init__(f"non-finite {what} at step {step}")


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainerConfig:
    variant: Variant = "entropy_min"
    eta: float = 0.1
    R: float = 1.0
    max_steps: int = 1000
    conf_threshold: float = 0.1
    epochs_per_round: int = 1
    noise_scale: float = 0.0
    seed: int = 0
    gradient_source: Literal["population", "empirical"] = "population"
    stop_tol: float = 1e-6

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}")
        if not self.eta > 0:
            raise ValueError("eta must be positive")
        if not self.R > 0:
            raise ValueError("R must be positive")
        if self.conf_threshold < 0:
            raise ValueError("conf_threshold must be non-negative")
        if self.max_steps < 0 or self.epochs_per_round < 1:
            raise ValueError("max_steps >= 0 and epochs_per_round >= 1 required")
        if self.noise_scale < 0:
            raise ValueError("noise_scale must be non-negative")
        if self.gradient_source not in ("population", "empirical"):
            raise ValueError(f"unknown gradient_source {self.gradient_source!r}")


TRAJECTORY_COLUMNS = ("step", "norm_w1", "norm_w2", "loss", "accuracy",
                      "g1_dot", "g2_dot", "sigma")


@dataclass
class Trajectory:
    d1: int
    R: float
    rows: list = field(default_factory=list)  # tuples in TRAJECTORY_COLUMNS order
    weights: list = field(default_factory=list)
    pre_projection_norm_w2: list = field(default_factory=list)
    violations: list = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.rows)

    def column(self, name: str) -> np.ndarray:
        i = TRAJECTORY_COLUMNS.index(name)
        return np.array([r[i] for r in self.rows], dtype=float)

    @property
    def W(self) -> np.ndarray:
        return np.array(self.weights)

    @property
    def final(self) -> Classifier:
        return Classifier.from_vector(self.weights[-1], self.d1, self.R)

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write(",".join(TRAJECTORY_COLUMNS) + "\n")
        for r in self.rows:
            buf.write(str(int(r[0])) + "," + ",".join(f"{x:.17g}" for x in r[1:]) + "\n")
        return buf.getvalue()


def _project(v: np.ndarray, R: float) -> np.ndarray:
    n = float(np.linalg.norm(v))
    if n == 0.0:
        raise ValueError("degenerate step: w - eta*grad is the zero vector")
    return (R / n) * v


def gd_step(w: Classifier, grad, eta: float, R: float) -> Classifier:
    """One projected step, rescaled to norm R."""
    g = np.asarray(grad, dtype=float)
    if not np.all(np.isfinite(g)):
        raise ValueError("gradient is not finite")
    return Classifier.from_vector(_project(w.w - eta * g, R), w.d1, R)


def _sigma(obj, v: np.ndarray, d1: int) -> float:
    spec = getattr(obj, "spec", None)
    w2 = v[d1:]
    if spec is None:
        return float(np.linalg.norm(w2))
    return math.sqrt(max(float(w2 @ spec.Sigma2 @ w2), 0.0))


def _record(traj: Trajectory, obj, v: np.ndarray, step: int):
    d1 = traj.d1
    loss = obj.loss(v)
    g = obj.grad(v)
    if not (math.isfinite(loss) and np.all(np.isfinite(g))):
        raise NumericAbort(step, "loss or gradient")
    traj.rows.append((step, float(np.linalg.norm(v[:d1])), float(np.linalg.norm(v[d1:])),
                      float(loss), float(obj.accuracy(v)),
                      float(g[:d1] @ v[:d1]), float(g[d1:] @ v[d1:]), _sigma(obj, v, d1)))
    traj.weights.append(v.copy())


def _run(w0: Classifier, cfg: TrainerConfig, source, direction: Callable,
         precondition: Optional[Callable] = None, steps_per_index: int = 1,
         labeler_per_index: bool = False) -> Trajectory:
    if float(np.linalg.norm(w0.w)) > cfg.R + 1e-12:
        raise ValueError("w0 lies outside the projection ball")
    d1 = w0.d1
    traj = Trajectory(d1=d1, R=cfg.R)
    v = w0.w.copy()
    _record(traj, source, v, 0)
    traj.pre_projection_norm_w2.append(float(np.linalg.norm(v[d1:])))
    traj.violations.append(bool(precondition and not precondition(v)))
    step = 0
    for index in range(cfg.max_steps):
        if float(np.linalg.norm(v[d1:])) <= cfg.stop_tol:
            break
        obj = source.resample(index)
        labeler = v.copy()
        for _ in range(steps_per_index):
            try:
                g = direction(obj, v, labeler if labeler_per_index else v, step)
            except ValueError as exc:
                raise TrainingError(f"round {index}: {exc}") from exc
            if not np.all(np.isfinite(g)):
                raise NumericAbort(step + 1, "gradient")
            pre = v - cfg.eta * g
            v = _project(pre, cfg.R)
            step += 1
            _record(traj, source, v, step)
            traj.pre_projection_norm_w2.append(float(np.linalg.norm(pre[d1:])))
            traj.violations.append(bool(precondition and not precondition(v)))
    return traj


def run_entropy_min(w0: Classifier, cfg: TrainerConfig, source,
                    precondition: Optional[Callable] = None) -> Trajectory:
    """Projected GD on the unlabeled surrogate loss."""
    return _run(w0, cfg, source, lambda obj, v, a, t: obj.grad(v), precondition)


def run_pseudo_step(w0: Classifier, cfg: TrainerConfig, source,
                    precondition: Optional[Callable] = None) -> Trajectory:
    """Relabel with sign(w^T x) before every step, then step on exp(-y w^T x)."""
    return _run(w0, cfg, source, lambda obj, v, a, t: obj.frozen_grad(v, v, 0.0),
                precondition)


def run_pseudo_rounds(w0: Classifier, cfg: TrainerConfig, source,
                      precondition: Optional[Callable] = None) -> Trajectory:
    """``cfg.max_steps`` rounds; each freezes labels, drops |w^T x| < tau and
    takes ``epochs_per_round`` full-gradient steps on the frozen labels."""
    tau = cfg.conf_threshold
    return _run(w0, cfg, source,
                lambda obj, v, a, t: obj.frozen_grad(v, a, tau), precondition,
                steps_per_index=cfg.epochs_per_round, labeler_per_index=True)


def run_noisy_gd(w0: Classifier, cfg: TrainerConfig, source,
                 precondition: Optional[Callable] = None) -> Trajectory:
    """Entropy minimisation with an isotropic Gaussian perturbation of each gradient."""
    rng = make_rng(cfg.seed)
    scale = cfg.noise_scale

    def direction(obj, v, a, t):
        g = obj.grad(v)
        if scale == 0.0:
            return g
        return g + scale * rng.standard_normal(v.size)

    return _run(w0, cfg, source, direction, precondition)


RUNNERS = {
    "entropy_min": run_entropy_min,
    "pseudo_step": run_pseudo_step,
    "pseudo_rounds": run_pseudo_rounds,
    "noisy_gd": run_noisy_gd,
}


def run(w0: Classifier, cfg: TrainerConfig, source, precondition=None) -> Trajectory:
    return RUNNERS[cfg.variant](w0, cfg, source, precondition)


def default_eta(source, dim: int, R: float = 1.0, seed: int = 0) -> float:
    """0.05 / (empirical smoothness of the gradient on the sphere)."""
    return 0.05 / smoothness_estimate(source.grad, dim, R, pairs=100, seed=seed)


# ---------------------------------------------------------------------------
# approximate local minimum certificate


@dataclass(frozen=True)
class LocalMinCertificate:
    cond1: bool
    cond2: bool
    cond3: bool
    norm_w1: float
    proj_grad_norm: float
    min_tangent_eig: float

    @property
    def passed(self) -> bool:
        return self.cond1 and self.cond2 and self.cond3


def certify_local_min(w: Classifier, source, eps: float, gamma: float,
                      h: float = 1e-4) -> LocalMinCertificate:
    """Check the three (eps, gamma) conditions on the purified objective."""
    if np.any(w.w2 != 0):
        raise ValueError("certificate applies to w2 = 0")
    d1 = w.d1
    zeros = np.zeros(w.w2.size)
    grad1 = lambda u: source.grad(np.concatenate([u, zeros]))[:d1]  # noqa: E731
    w1 = w.w1.astype(float)
    n1 = float(np.linalg.norm(w1))
    g = grad1(w1)
    if n1 == 0.0:
        return LocalMinCertificate(False, False, False, 0.0, float(np.linalg.norm(g)), -math.inf)
    u = w1 / n1
    P = np.eye(d1) - np.outer(u, u)
    pg = float(np.linalg.norm(P @ g))
    if d1 == 1:
        min_eig = math.inf  # empty tangent space
    else:
        # orthonormal basis of the tangent space of the sphere at w1
        q, _ = np.linalg.qr(np.column_stack([u, np.eye(d1)]))
        B = q[:, 1:d1]
        H = fd_hessian(grad1, w1, h)
        M = B.T @ (H - float(w1 @ g) * np.eye(d1)) @ B
        min_eig = float(np.linalg.eigvalsh(0.5 * (M + M.T)).min())
    return LocalMinCertificate(n1 >= 1.0 - eps, pg <= eps, min_eig >= -gamma,
                               n1, pg, min_eig)


# ---------------------------------------------------------------------------
# supervised source classifier


def train_source_classifier(batch, R: float = 1.0, eta: float = 1.0,
                            max_steps: int = 10_000, tol: float = 1e-8) -> Classifier:
    """Full-batch projected GD on the labelled loss mean(exp(-y w^T x)).

    Stops when the component of the gradient tangent to the sphere falls
    below ``tol``.
    """
    X = batch.X
    y = batch.y
    d1 = batch.x1.shape[1]
    v = (y[:, None] * X).mean(axis=0)
    v = _project(v, R)
    for step in range(max_steps):
        t = X @ v
        coef = -y * np.exp(-y * t)
        g = (coef[:, None] * X).sum(axis=0) / batch.n
        if not np.all(np.isfinite(g)):
            raise NumericAbort(step, "source gradient")
        u = v / R
        tangential = g - float(g @ u) * u
        if float(np.linalg.norm(tangential)) < tol:
            break
        v = _project(v - eta * g, R)
    return Classifier.from_vector(v, d1, R)
