"""Decentralized convolution-smoothed quantile regression for
feature-partitioned data, with differential privacy and Wald inference."""

from .datagen import (Dataset, Scenario, gen_coefficients, gen_covariates,
                      gen_errors, make_dataset, partition_features,
                      read_dataset, train_test_split, write_dataset)
from .errors import ConfigError, DivergenceError, NumericalError
from .inference import (InferenceReport, density_at_zero, estimate_residuals,
                        hr_covariance, hs_covariance, local_gram,
                        max_cross_block_correlation, node_inference,
                        powell_hessian, residual_spread, wald_intervals)
from .node import (NodeState, PrivacyParams, dp_noise, empirical_sensitivity,
                   local_update, make_nodes, private_local_update,
                   surrogate_gradient)
from .protocol import (FitConfig, FitResult, TraceRecord, consensus_deviation,
                       full_beta, run_dsg_cqr, trace_metrics, write_trace_csv)
from .smoothing import (QuantileSpec, centralized_fit, quantile_loss,
                        quantile_objective, rule_of_thumb_bandwidth,
                        score_weight, smoothed_gradient, smoothed_loss,
                        smoothed_objective)
from .topology import (Graph, MixingMatrix, decay_factor, metropolis_hastings,
                       mix, named_topology, optimal_mixing_rounds,
                       read_edge_list, spectral_alpha, step_size_limit,
                       write_edge_list)

__version__ = "0.1.0"
