"""Row-scaled spectral estimation of heterogeneous treatment effects on
panels with unknown, unit-varying assignment probabilities.

The package splits into:

  linalg       dense/randomized SVD, norms, dilation, subspace angles
  oracle       independent Jacobi-based references for validation
  model        synthetic panels: designs, signals, noise, serialization
  estimator    the row-scaled truncated-SVD effect estimator
  diagnostics  design aggregates, error reports, theoretical envelopes
  config       strict YAML experiment schema
  harness      seeded Monte Carlo sweeps, CSV round-trips, rate fits
  presets      named default experiments
  plots        figures + summary tables from sweep CSVs
  cli          the `panelhte` command
"""

from .config import ExperimentConfig, load_config, parse_config, save_config
from .diagnostics import (DesignParams, ErrorReport, Incoherence, NormSummary,
                          column_subsets, design_params, error_report,
                          gap_condition_holds, incoherence,
                          propensity_discrepancy, recovery_error_bound,
                          residual_decomposition, residual_operator_bound,
                          truncation_perturbation_bound,
                          truncation_perturbation_bound_refined)
from .errors import ConfigError, InfeasibleSignalError, ValidationError
from .estimator import (EstimateResult, EstimatorConfig, ThresholdRule,
                        empirical_row_propensity, estimate,
                        ipw_oracle_estimate, row_scaled_matrix, select_rank)
from .harness import (SweepTable, TrialRecord, cell_seed, fit_rate_slope,
                      median_errors, read_sweep_csv, run_sweep, run_trial,
                      selection_rate, serialize_table, sweep_columns,
                      write_sweep_csv)
from .linalg import (SvdResult, best_rank_s, norm, principal_angles,
                     singular_gaps, svd_dense, svd_truncated,
                     symmetric_dilation)
from .model import (NoisePair, ObservedPanel, PanelDesign, PanelInstance,
                    SignalPair, build_design, draw_assignments,
                    generate_noise, generate_signal, load_instance,
                    load_matrix_binary, load_matrix_csv, observe, realize,
                    save_instance, save_matrix_binary, save_matrix_csv)
from .oracle import OracleReport, compare_svds, oracle_best_rank_s, oracle_svd
from .presets import (PRESET_NAMES, assumption_compliant_config,
                      build_experiment, preset_config)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
