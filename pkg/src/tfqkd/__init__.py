"""Key-rate analysis and protocol simulation for twin-field QKD with
partial phase postselection."""

__version__ = "0.1.0"

from .channel import (ChannelPoint, channel_point, code_rates, decoy_rate,
                      e_mis, expected_counts, transmittance)
from .dominance import (CertReport, TruncatedOperator, TwinFockState,
                        assemble_lhs, assemble_rhs, build_twin_fock,
                        verify_dominance)
from .finite_key import (BoundSign, FBound, KeyRateResult, binary_entropy,
                         evaluate_params, f_bound, f_bound_two_stage,
                         key_length, m_bound)
from .montecarlo import (Category, Mode, RoundOutcome, SamplingModel,
                         SimTally, phase_distance, sample_round, sift,
                         simulate)
from .optimizer import (CurvePoint, CurveSpec, OptimizationProblem,
                        coarse_grid_search, optimize_point, rate_curve,
                        refine_endpoint)
from .params import (EpsilonBudget, ExperimentConfig, ObservedCounts,
                     ParameterValidationError, ProtocolParams, ValidityReport,
                     Variant, epsilon_budget, load_config, validate)
from .photon_stats import (DecoyCoefficients, SeriesConvergenceError, gamma,
                           lambda_four_phase, lambda_two_phase, p_even,
                           poisson_twin, q_s)
