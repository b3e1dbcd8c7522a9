import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from spurlab.distributions import (GaussianTargetSpec, SampleBatch, cos_component,
                                   MixtureSignalSpec, sample_target, symmetric_gaussian_mixture)
from spurlab.kernels import g_sigma, q_sigma
from spurlab.loss_engine import (Classifier, EmpiricalObjective, PopulationObjective,
                                 StreamingObjective, child_seed, dL_dsigma, dL_dsigma_gaussian,
                                 density_at_zero_log, empirical_accuracy, empirical_grad,
                                 empirical_loss, fd_gradient, fd_hessian, frozen_label_grad,
                                 frozen_label_grad_gaussian, frozen_label_loss,
                                 frozen_label_loss_gaussian, grad_deviation,
                                 population_grad_gaussian, population_loss_gaussian,
                                 population_loss_general, pseudo_labels, sigma_decomposition,
                                 smoothness_estimate, target_accuracy)

SPEC = GaussianTargetSpec(np.array([1.5]), 1.0, np.diag([0.5, 2.0]))
SPEC2 = GaussianTargetSpec(np.array([1.0, -0.7]), 0.8, np.array([[1.0, 0.3], [0.3, 0.6]]))
W = np.array([0.6, 0.5, -0.4])
W2 = np.array([0.5, -0.3, 0.4, 0.2])


def test_classifier_validation():
    with pytest.raises(ValueError):
        Classifier([0.9], [0.5])
    with pytest.raises(ValueError):
        Classifier([0.1], [0.1], R=0.0)
    c = Classifier([0.9], [0.43])
    np.testing.assert_array_equal(c.w, [0.9, 0.43])
    assert Classifier.from_vector(c.w, 1).d1 == 1
    with pytest.raises(ValueError):
        c.w1[0] = 0.0


def test_sigma_decomposition():
    c = Classifier([0.6], [0.5, -0.4])
    d = sigma_decomposition(c, SPEC.Sigma2, SPEC.sigma1)
    assert d.sigma == pytest.approx(math.sqrt(0.5 * 0.25 + 2.0 * 0.16))
    assert d.sigma_tilde == pytest.approx(math.sqrt(0.36 + 0.125 + 0.32))
    assert sigma_decomposition(c, SPEC.Sigma2).sigma_tilde == d.sigma


# -- Gaussian population ----------------------------------------------------------

@pytest.mark.parametrize("spec,w", [(SPEC, W), (SPEC2, W2)])
def test_population_loss_monte_carlo(spec, w):
    b = sample_target(spec, 1_000_000, seed=11)
    vals = np.exp(-np.abs(b.X @ w))
    se = vals.std() / math.sqrt(b.n)
    assert abs(vals.mean() - population_loss_gaussian(w, spec)) < 5 * se


@pytest.mark.parametrize("spec,w", [(SPEC, W), (SPEC2, W2)])
def test_population_grad_finite_difference(spec, w):
    fd = fd_gradient(lambda v: population_loss_gaussian(v, spec), w)
    np.testing.assert_allclose(population_grad_gaussian(w, spec), fd, atol=1e-9)


def test_population_grad_zero_sigma_tilde():
    g = population_grad_gaussian(np.zeros(3), SPEC)
    np.testing.assert_array_equal(g, np.zeros(3))


@pytest.mark.parametrize("spec,w", [(SPEC, W), (SPEC2, W2)])
def test_target_accuracy_monte_carlo(spec, w):
    b = sample_target(spec, 400_000, seed=12)
    assert empirical_accuracy(w, b) == pytest.approx(target_accuracy(w, spec), abs=4e-3)


def test_target_accuracy_degenerate():
    assert target_accuracy(np.zeros(3), SPEC) == 0.5


def test_dL_dsigma_gaussian_finite_difference():
    # scale w2 along itself: sigma moves linearly with the scale
    w1, w2 = W[:1], W[1:]
    s0 = math.sqrt(float(w2 @ SPEC.Sigma2 @ w2))
    f = lambda t: population_loss_gaussian(np.concatenate([w1, w2 * (1 + t / s0)]), SPEC)
    h = 1e-6
    fd = (f(h) - f(-h)) / (2 * h)
    assert dL_dsigma_gaussian(W, SPEC) == pytest.approx(fd, abs=1e-9)
    with pytest.raises(ValueError):
        dL_dsigma_gaussian(np.array([1.0, 0.0, 0.0]), SPEC)


def test_population_loss_is_smoothed_loss():
    w = np.array([0.8, 0.6, 0.0])
    st_ = math.sqrt(0.64 + 0.5 * 0.36)
    assert population_loss_gaussian(w, SPEC) == g_sigma(0.8 * 1.5, st_)


# -- frozen-label population path ----------------------------------------------------

def test_frozen_grad_equals_unlabeled_grad_at_self():
    for spec, w in [(SPEC, W), (SPEC2, W2)]:
        np.testing.assert_allclose(frozen_label_grad_gaussian(w, w, spec, 0.0),
                                   population_grad_gaussian(w, spec), atol=1e-14)
        assert frozen_label_loss_gaussian(w, w, spec, 0.0) == pytest.approx(
            population_loss_gaussian(w, spec), rel=1e-13)


@pytest.mark.parametrize("tau", [0.0, 0.3])
def test_frozen_grad_finite_difference(tau):
    a = np.array([0.7, -0.2, 0.3])
    fd = fd_gradient(lambda v: frozen_label_loss_gaussian(v, a, SPEC, tau), W)
    np.testing.assert_allclose(frozen_label_grad_gaussian(W, a, SPEC, tau), fd, atol=1e-8)


@pytest.mark.parametrize("tau", [0.0, 0.5])
def test_frozen_label_monte_carlo(tau):
    a = np.array([0.3, -0.8, 0.2, 0.4])
    b = sample_target(SPEC2, 1_000_000, seed=13)
    labels, keep = pseudo_labels(a, b, tau)
    assert frozen_label_loss(W2, b, labels, keep) == pytest.approx(
        frozen_label_loss_gaussian(W2, a, SPEC2, tau), rel=5e-3)
    np.testing.assert_allclose(frozen_label_grad(W2, b, labels, keep),
                               frozen_label_grad_gaussian(W2, a, SPEC2, tau), atol=5e-3)


def test_frozen_label_threshold_removes_everything():
    with pytest.raises(ValueError):
        frozen_label_grad_gaussian(W, np.array([1e-9, 0.0, 0.0]), SPEC, 1e6)


# -- general 1-d path ----------------------------------------------------------------

@pytest.mark.parametrize("w", [np.array([0.8, 0.6]), np.array([-0.3, 0.9]), np.array([1.0, 0.0]),
                               np.array([0.0, 1.0])])
def test_general_path_matches_gaussian(w):
    gamma, s1 = 2.0, 0.7
    mix = symmetric_gaussian_mixture(gamma, s1)
    spec = GaussianTargetSpec([gamma], s1, np.eye(1))
    assert population_loss_general(w, mix, np.eye(1)) == pytest.approx(
        population_loss_gaussian(w, spec), rel=1e-10, abs=1e-300)


def test_general_dL_dsigma_matches_gaussian():
    mix = symmetric_gaussian_mixture(2.0, 0.7)
    spec = GaussianTargetSpec([2.0], 0.7, np.eye(1))
    w = np.array([0.8, 0.6])
    assert dL_dsigma(w, mix, np.eye(1)) == pytest.approx(dL_dsigma(w, spec), rel=1e-9)


def test_general_path_monte_carlo_cos():
    sig = MixtureSignalSpec([cos_component(1.5), cos_component(-1.5, -1)], [0.5, 0.5],
                            np.eye(1))
    w = np.array([0.8, 0.6])
    b = sample_target(sig, 1_000_000, seed=14)
    vals = np.exp(-np.abs(b.X @ w))
    se = vals.std() / math.sqrt(b.n)
    assert abs(vals.mean() - population_loss_general(w, sig)) < 5 * se


def test_general_path_tiny_loss_relative_accuracy():
    # component far from the origin: loss ~ exp(-0.9 * 60); check against the closed form
    mix = symmetric_gaussian_mixture(60.0, 1.0)
    spec = GaussianTargetSpec([60.0], 1.0, np.eye(1))
    w = np.array([0.9, math.sqrt(1 - 0.81)])
    assert population_loss_general(w, mix, np.eye(1)) == pytest.approx(
        population_loss_gaussian(w, spec), rel=1e-9)


def test_general_requires_sigma2():
    with pytest.raises(ValueError):
        population_loss_general(np.array([1.0, 0.0]), symmetric_gaussian_mixture(1.0, 1.0))


def test_density_at_zero_log():
    mix = symmetric_gaussian_mixture(2.0, 1.0)
    w = np.array([0.5, 0.5])
    ref = math.log(stats.norm.pdf(0, 2, 1) / 0.5)
    assert density_at_zero_log(w, mix) == pytest.approx(ref, rel=1e-12)
    assert density_at_zero_log(np.array([0.0, 1.0]), mix) == math.inf


# -- empirical ---------------------------------------------------------------------

@pytest.mark.parametrize("surrogate", ["exp", "ent"])
def test_empirical_grad_finite_difference(surrogate):
    b = sample_target(SPEC, 500, seed=3)
    fd = fd_gradient(lambda v: empirical_loss(v, b, surrogate), W)
    np.testing.assert_allclose(empirical_grad(W, b, surrogate), fd, atol=1e-8)


def test_empirical_converges_to_population():
    b = sample_target(SPEC, 1_000_000, seed=21)
    np.testing.assert_allclose(empirical_grad(W, b), population_grad_gaussian(W, SPEC),
                               atol=3e-3)


def test_antithetic_batch_has_no_spurious_gradient_bias():
    # pairing each x2 with -x2 leaves the batch gradient in w2 odd in w2
    b = sample_target(SPEC, 200, seed=5)
    anti = SampleBatch(np.vstack([b.x1, b.x1]), np.vstack([b.x2, -b.x2]),
                       np.concatenate([b.y, b.y]), 0)
    w = np.array([0.7, 0.3, 0.2])
    wneg = np.array([0.7, -0.3, -0.2])
    g, gn = empirical_grad(w, anti), empirical_grad(wneg, anti)
    np.testing.assert_allclose(g[0], gn[0], rtol=1e-13)
    np.testing.assert_allclose(g[1:], -gn[1:], rtol=1e-13)


def test_pseudo_labels_ties_and_threshold():
    b = SampleBatch(np.array([1.0, -2.0, 0.0, 0.05]), np.zeros(4), np.ones(4), 0)
    labels, keep = pseudo_labels(np.array([1.0, 0.0]), b, 0.1)
    np.testing.assert_array_equal(labels, [1, -1, 0, 1])
    np.testing.assert_array_equal(keep, [True, True, False, False])
    with pytest.raises(ValueError):
        frozen_label_grad(np.array([1.0, 0.0]), b, labels, np.zeros(4, bool))


def test_frozen_grad_matches_unlabeled_grad_empirically():
    b = sample_target(SPEC, 1000, seed=8)
    labels, keep = pseudo_labels(W, b, 0.0)
    np.testing.assert_array_equal(frozen_label_grad(W, b, labels, keep), empirical_grad(W, b))


def test_empirical_reduction_independent_of_memory_layout():
    b = sample_target(SPEC, 3000, seed=9)
    g1 = empirical_grad(W, b)
    c = SampleBatch(np.asfortranarray(b.x1), np.asfortranarray(b.x2), b.y, 0)
    np.testing.assert_array_equal(g1, empirical_grad(W, c))


# -- objectives ----------------------------------------------------------------------

def test_objectives():
    pop = PopulationObjective(SPEC)
    assert pop.resample(3) is pop
    b = sample_target(SPEC, 100, seed=1)
    emp = EmpiricalObjective(b, "ent", SPEC)
    assert emp.accuracy(W) == target_accuracy(W, SPEC)
    with pytest.raises(ValueError):
        EmpiricalObjective(b, "hinge")
    s = StreamingObjective(SPEC, 50, seed=4)
    a, c = s.resample(0), s.resample(0)
    np.testing.assert_array_equal(a.batch.X, c.batch.X)
    assert not np.array_equal(a.batch.X, s.resample(1).batch.X)
    assert s.loss(W) == pop.loss(W)


@given(st.integers(0, 2**40), st.integers(0, 10**6))
@settings(max_examples=50)
def test_child_seed_deterministic(seed, key):
    assert child_seed(seed, key) == child_seed(seed, key)
    assert child_seed(seed, key) != child_seed(seed, key + 1)


def test_fd_hessian_quadratic():
    A = np.array([[2.0, 0.5], [0.5, 1.0]])
    H = fd_hessian(lambda v: A @ v, np.array([0.3, -0.1]))
    np.testing.assert_allclose(H, A, atol=1e-10)


def test_smoothness_estimate_linear_map():
    A = np.diag([3.0, 1.0, 0.5])
    L = smoothness_estimate(lambda v: A @ v, 3, pairs=200, seed=1)
    assert 2.0 < L <= 3.0 + 1e-12


# -- gradient concentration --------------------------------------------------------

def test_grad_deviation_table_and_decay():
    grid = [np.array([0.8, 0.6, 0.0]), np.array([0.6, 0.0, 0.8])]
    t = grad_deviation(SPEC, [100, 10_000], trials=8, w_grid=grid, seed=0)
    assert len(t.rows) == 16
    assert t.to_csv().splitlines()[0] == "n,trial,sup_dev"
    ns, means = t.mean_by_n()
    np.testing.assert_array_equal(ns, [100, 10_000])
    assert means[1] < means[0] / 4
    t2 = grad_deviation(SPEC, [100, 10_000], trials=8, w_grid=grid, seed=0)
    assert t.to_csv() == t2.to_csv()
    with pytest.raises(ValueError):
        grad_deviation(SPEC, [10], 1, [], 0)
