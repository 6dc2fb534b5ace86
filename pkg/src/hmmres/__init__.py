"""Interval models, HMM likelihood machinery, and resilience bounds.

The package verifies, at desk scale and with seeded simulation, that a
maximum-likelihood HMM recovers the correct pair moments of data
generated by a non-stationary interval model.  All logarithms are base
2; total variation is the un-halved L1 sum (range [0, 2]).
"""

__version__ = "0.1.0"

from .estimation import (FitResult, HDeltaSpec, dstar_distance, em_step, fit,
                         is_in_h_delta)
from .hmm import (Hmm, PairMeasure, UnfoldedChain, brute_force_likelihood,
                  log_likelihood, markov_divergence, path_second_moment,
                  project_T, reference_hmm, single_path_loglik, total_log2_prob,
                  unfold)
from .intervals import (IntervalModel, IntervalMoment, LabeledSample,
                        ScheduleSpec, build_schedule)
from .moments import (ProperSystem, SecondMoment, canonical_phi,
                      column_space_residual, d_phi, empirical_moment,
                      generalized_moment, marginalize_left, marginalize_right)
from .probability import (Alphabet, Distribution, Rng, derive_seed, entropy,
                          kl_divergence, sample_categorical, tv_distance)
from .resilience import (CheckReport, DhResult, aep_check, nonergodic_sweep, dh,
                         reference_likelihood_check, moment_concentration_check, sanov_check,
                         resilience_experiment, resilience_bound)
from .segmentation import (Segmentation, SegmentationMetrics, choose_window,
                           segmentation_accuracy, sliding_window_classify)

__all__ = [name for name in dir() if not name.startswith("_")]
