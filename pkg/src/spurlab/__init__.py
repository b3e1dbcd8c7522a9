"""Numerical laboratory for self-training linear classifiers under
spurious-feature shift."""

from .kernels import (SmoothedLoss, ThresholdConstants, dg_dmu, g_sigma, gh_expectation,
                      kappa, kappa_constants, loss_ent, loss_exp, q_sigma, r_threshold)
from .distributions import (GaussianTargetSpec, LogConcaveComponent, MixtureSignalSpec,
                            SampleBatch, ToySourceSpec, bayes_accuracy, sample_source_toy,
                            sample_target)
from .loss_engine import Classifier, population_grad_gaussian, population_loss_gaussian
from .trainer import Trajectory, TrainerConfig, gd_step, run_entropy_min, run_pseudo_step

__version__ = "0.1.0"
