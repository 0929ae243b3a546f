"""survclass: right-censored survival analysis as binary classification.

Expansion of censored records into labeled examples, probabilistic
classifiers (built-in and external over a line protocol), monotone survival
curve reconstruction, IPCW evaluation metrics, synthetic ground-truth
generators, and an experiment harness with Elo/rank aggregation.
"""

__version__ = "0.1.0"

from .classify import (BoostedStumpsClassifier, ExternalClassifier,
                       FrequencyClassifier, LogisticClassifier, ProtocolError,
                       TrainingConfig, bce, boosted_stumps_fit, dataset_bce,
                       external_fit_predict, frequency_fit, logistic_fit)
from .grid import (DynamicExample, DynamicRecord, FeatureOptions, Grid,
                   StaticExample, StaticRecord, compute_grid, expand_dynamic,
                   expand_static, featurize_dynamic)
from .infer import (HazardCurve, SurvivalCurve, clip_monotone, expand_hazard,
                    risk_dynamic, risk_static, survival_dynamic,
                    survival_from_hazard, survival_static)
from .metrics import (EloConfig, MetricConfig, MetricUndefined, StepFunction,
                      auc_at_time, average_rank, brier_at_time, censoring_km,
                      cindex_ipcw, conditional_censoring, dynamic_metrics,
                      elo_ratings, integrated_auc, integrated_brier,
                      kaplan_meier)
from .synth import (DiscreteTruth, DynamicTruth, WeibullTruth, gen_discrete,
                    gen_dynamic, gen_weibull, true_survival)
