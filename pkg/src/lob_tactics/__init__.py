"""Optimal limit/cancel/market tactics on a best-quotes order book model."""

__version__ = "0.1.0"

from .model import (ASK, BID, AgentState, BookState, IntensityModel, ModelConfig,
                    ModelError, PayoffSpec, RegenerationLaw, default_price_window)
from .generator import (apply_control, build_controlled_generator,
                        build_market_generator, build_queue_generator,
                        market_order_outcomes, terminal_liquidation)
from .impact import (DepletionRace, ImpactSolution, PayoffCalculator,
                     build_depletion_race, hitting_probabilities, impact_fixed_point,
                     spectral_fast_path, spectral_from_constants, terminal_payoff_g)
from .dp import (Policy, ValueSurface, baseline_policy, extract_policy,
                 solve_any_time_discrete, solve_fixed_frequency, value_of_fixed_policy)
from .simulate import (GainStats, drift_mc_estimate, race_mc, simulate_market_only,
                       simulate_one_path, simulate_paths)
from .calibrate import (EventFrame, estimate_intensities, estimate_regeneration,
                        generate_synthetic_events, imbalance_stats, read_events_csv,
                        write_events_csv)
from .ergodicity import (check_assumptions, convergence_diagnostics,
                         distribution_after_events, lyapunov_drift,
                         stationary_distribution, tv_distance)
from .config import builtin_config, build_objects, validate_config

__all__ = [name for name in dir() if not name.startswith("_")]
