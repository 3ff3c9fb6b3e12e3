"""Auditing black-box classifiers for multi-differential fairness.

The engine certifies whether a classifier treats similar individuals
differently according to a binary sensitive attribute, and extracts the
sub-population where the violation is most severe.
"""

__version__ = "0.1.0"

from .core import (
    AuditConfig,
    AuditDataset,
    AuditError,
    AuditSample,
    delta_from_gamma,
    disparate_treatment,
    gamma_from_delta,
    subgroup_profile,
)
from .data import CsvSchema, SyntheticSpec, generate_synthetic, load_csv, save_csv, split
from .kernels import FeatureMap, apply_map, make_feature_map, mmd_hat
from .rebalance import (
    WeightScheme,
    importance_weights,
    mmd_match_weights,
    uniform_weights,
)
from .certify import (
    Certificate,
    CertifierModel,
    certify,
    estimate_delta,
    estimate_gamma,
    fit_certifier,
    oracle_best_gamma,
    reduction_labels,
)
from .wva import ViolationReport, wva_alpha_hat, wva_run
from .audit import (
    AuditRunResult,
    audit_external_predictions,
    compare_weight_schemes,
    cross_validate,
    repeated_audit,
)
