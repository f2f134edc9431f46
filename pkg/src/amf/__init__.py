"""Equity-corrected, non-displacing selection engine.

Ingests a scored cohort, normalizes its SES composite to percentile ranks,
applies a calibrated linear correction, selects regular and conditional
admits against a raw-score order-statistic threshold, and runs the whole
cycle inside an auditable five-stage pipeline with sealed closure. Robustness
experiments and a long-run mobility simulation sit alongside the core engine.
"""

__version__ = "0.1.0"

from .calibration import (CalibrationRow, CurvePoint, FeasibilityBounds, GradientEstimate,
                          SupportBand, calibration_table, feasible_alpha, linear_fit,
                          ses_gradient, tradeoff_curve)
from .correction import (CorrectionPolicy, CorrectionResult, EmergencyPolicy,
                         SunsetViolationError, apply_correction, apply_emergency,
                         correction_values, eligibility_boundary, emergency_from_csv)
from .dataset import (ApplicantRecord, Cohort, DataError, OutlierReport, SchemaMapping,
                      cohort_from_csv, cohort_to_csv, load_cohort, remove_ses_outliers)
from .dbn import (DbnSpec, Individual, MobilityMetrics, TrajectorySummary, build_kernel,
                  default_population, mobility_metrics, occupancy_rows, simulate_population)
from .perturbation import (PerturbationSpec, ReplicateResult, RobustnessReport,
                           WeightedReport, report_summary, ses_noise_experiment,
                           score_noise_experiment, threshold_shift_experiment,
                           variance_scale_experiment, weighted_estimates)
from .selection import (CapacityEvent, ConditionalAdmit, SelectionOutcome, ThresholdSpec,
                        VacancyLedger, initial_ranking, merit_threshold, outcome_summary,
                        outcome_to_csv, select, vacancy_fill)
from .ses_index import (IndexedRecord, ReferenceDistribution, SesIndexedCohort,
                        assign_quartile, percentile_rank, reanchor_percentiles)
from .spine import (AuditEntry, AuditTrail, ClosureSeal, ClosureVerdict, KillSwitchAbort,
                    KillswitchVerdict, OptInRegister, SpineConfig, SpineResult,
                    persist_spine, run_spine, scan_for_pii, validate_killswitch,
                    verify_closure)

__all__ = [name for name in dir() if not name.startswith("_")]
