"""levyavg: slow-fast Levy-driven SDE simulation and strong-averaging studies."""

__version__ = "0.1.0"

from .averaging import (AveragedCoefficient, FbarConfig, MixingConfig, MixingReport,
                        build_fbar_table, estimate_fbar, estimate_mixing)
from .errors import (BlowUp, CoefficientError, DomainExceeded, InvalidBlock,
                     InvalidExponent, InvalidGrid, InvalidHorizon, InvalidPairing,
                     InvalidTime, LevyAvgError, NoSignal, NumericError, StaleCache,
                     UnsupportedMeasure, UnsupportedModel)
from .harness import (ConvergenceTable, StudyConfig, StudyRow, averaging_window_study,
                      khasminskii_study, moment_and_regularity_study, strong_error_study)
from .levy_noise import (JumpEventList, JumpMeasure, LevyTriplet, NoiseBundle,
                         TripletComponents, characteristic_function, coarsen_bundle,
                         compensated_integral, empirical_cf, frozen_noise,
                         generate_noise, sample_brownian, sample_jump_events,
                         simulate_increments, triplet_to_components, validate_noise)
from .model import (CoefficientSet, HypothesisConstants, HypothesisReport,
                    SlowFastModel, builtin_benchmark, builtin_benchmark16,
                    eval_coefficients, load_model, verify_hypotheses)
from .simulate import (AuxiliaryPair, FrozenPath, PathPair, SlowPath, TimeGrid,
                       counters, energy_residual, simulate_auxiliary,
                       simulate_coupled, simulate_frozen, simulate_reduced)
from .spectral import (SpectralSpace, apply_semigroup, fractional_norm,
                       fractional_semigroup_bound)
