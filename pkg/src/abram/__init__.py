"""Bayesian adversarial robustness via coupled particle/parameter dynamics."""
from .attacks import (AttackConfig, AttackKind, bayes_mean_attack, bayes_sample_attack, evaluate,
                      fgsm_attack, perturb, perturbation, pgd_attack)
from .core import (AbramConfig, AbramResult, AbramState, abram_outer_step, chaos_experiment,
                   empirical_covariance, g_estimate, init_state, theta_update, longtime_experiment, minimiser_certificate,
                   run_abram, run_abram_minibatch)
from .errors import (AbramError, ConfigError, DivergenceError, InvalidInputError, ParseError,
                     PreconditionError)
from .geometry import Ball, NormKind, inner_normal, project_to_ball, sample_uniform
from .models import (MLP, Dataset, ModelParams, load_checkpoint, load_csv, load_idx, load_mnist_subset,
                     make_blobs, make_prototypes, mlp, read_idx, save_checkpoint)
from .oracle import (AdversarialDensity, EmpiricalMeasure, F, grad_F, tv_distance_1d,
                     wasserstein2_1d)
from .potentials import (LossPotential, Potential, convexity_diagnostic, coupled_quadratic_1d, grad_check,
                         linear_quadratic, loss_potential, mollified_quadratic, shifted_quadratic_1d,
                         zero_potential)
from .sampler import LangevinConfig, NoiseMode, ergodicity_diagnostic, langevin_step, run_chain, run_chains
from .stats import fit_loglog
from .training import TrainConfig, robustness_experiment, train

__version__ = "0.1.0"
