"""Mean-field Fisher-spectrum statistics for random deep networks.

Theory side: layer-wise macroscopic recurrences give closed-form
predictions for the mean, second moment and maximum of the empirical
Fisher information eigenvalues, the average Fisher-Rao norm, and the
critical learning rate of momentum gradient descent. Empirical side:
exact per-sample gradients, dual-Gram spectra, and teacher-student
training sweeps validate each prediction.
"""

from .activations import ERF, LINEAR, RELU, TANH, Activation, custom, get_activation, leaky_relu
from .data import SampleBatch, gaussian_batch, load_idx
from .meanfield import (MacroState, NetworkShape, TheoryStats, backward_recurrence,
                        eigencount_bound, fisher_rao_theory, forward_recurrence,
                        high_dim_output_bounds, kernel_I_phi, kernel_I_phi_prime,
                        macro_state, make_shape, theory_stats)
from .netsim import (ActivationRecord, GradientBatch, ParameterSet, backward, forward,
                     load_params, loss_and_gradient, sample_network, save_params)
from .spectral import (DualGram, EmpiricalStats, EnsembleResult, build_dual_gram,
                       brute_force_fim_check, dual_gram_fast, empirical_stats,
                       fisher_rao_empirical, high_dim_check, run_ensemble)
from .trainer import (SweepResult, TrainConfig, Trajectory, gd_step, quadratic_gd,
                      sgd_dataset_run, sweep, teacher_student_run)

__version__ = "0.1.0"
