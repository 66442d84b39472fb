"""CARE: two-sample Mendelian randomization with randomized instrument
selection, invalid-instrument screening and bagged inference."""

__version__ = "0.1.0"

from .errors import (CareError, ConfigurationError, DegenerateInstrumentsError, DomainError,
                     EmptyInputError, InsufficientInstrumentsError, InsufficientOverlapError,
                     NumericalError, ParseError, ScreeningFailedError, UnstableEstimateError,
                     WeakInstrumentError)
from .gwas_io import (GwasRecord, GwasTable, LdPair, PairTable, SummaryPair, harmonize,
                      parse_gwas, read_ld, sigma_prune)
from .selection import (Instruments, SelectedInstrument, SelectionConfig, lambda_from_pvalue,
                        rb_debias, rb_variance, select, select_hard)
from .screening import (ScreeningProblem, ScreeningSolution, bcd_solve, gbic_path,
                        loss_evaluate, r_update, theta_update)
from .bagging import (CareConfig, CareEstimate, bootstrap_weights, care_estimate,
                      care_from_instruments, delta_variance, p_value, refit_theta)
from .baselines import BaselineEstimate, care_no_correction, ivw
from .simulation import (SCENARIOS, MethodSpec, RepMetrics, ScenarioConfig, run_experiment,
                         simulate_dataset)
