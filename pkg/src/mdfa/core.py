"""Domain types and closed-form fairness metrics.

All probabilities are weighted empirical frequencies.  Weights are
normalized internally so that the absolute scale of a weight vector never
matters; only ratios do.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from typing import Callable, Sequence, Union

import numpy as np


class AuditError(Exception):
    """Base class for errors raised by the auditing engine."""


class DegenerateSubgroupError(AuditError):
    """A conditional cell needed by an estimator carries no weight."""


class UnboundedDivergenceError(AuditError):
    """The requested divergence is infinite."""


@dataclass(frozen=True)
class AuditSample:
    x: np.ndarray
    s: int
    y: int


class AuditDataset:
    """An audited population: features ``X``, sensitive attribute ``s`` and
    classifier outcome ``y`` (both coded as -1/+1).

    Arrays are copied and made read-only on construction.
    """

    def __init__(self, X, s, y, feature_names: Sequence[str] | None = None):
        X = np.array(X, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        s = np.asarray(s).astype(int).ravel()
        y = np.asarray(y).astype(int).ravel()
        if X.ndim != 2:
            raise ValueError("X must be two-dimensional")
        m = X.shape[0]
        if s.shape[0] != m or y.shape[0] != m:
            raise ValueError(
                f"length mismatch: X has {m} rows, s has {s.shape[0]}, y has {y.shape[0]}"
            )
        if not np.all(np.isfinite(X)):
            bad = int(np.argwhere(~np.isfinite(X))[0, 0])
            raise ValueError(f"non-finite feature value in sample {bad}")
        for name, v in (("s", s), ("y", y)):
            if not np.all(np.isin(v, (-1, 1))):
                raise ValueError(f"{name} must take values in {{-1, +1}}")
        if feature_names is None:
            feature_names = [f"x{j + 1}" for j in range(X.shape[1])]
        feature_names = list(feature_names)
        if len(feature_names) != X.shape[1]:
            raise ValueError("feature_names length does not match feature dimension")
        if m > 0:
            if not (np.any(s == 1) and np.any(s == -1)):
                raise ValueError("both sensitive values must be present")
            if not (np.any(y == 1) and np.any(y == -1)):
                raise ValueError("both outcome values must be present")
        for a in (X, s, y):
            a.setflags(write=False)
        self.X = X
        self.s = s
        self.y = y
        self.feature_names = feature_names

    def __len__(self) -> int:
        return self.X.shape[0]

    def __getitem__(self, i: int) -> AuditSample:
        return AuditSample(self.X[i], int(self.s[i]), int(self.y[i]))

    @property
    def samples(self) -> list[AuditSample]:
        return [self[i] for i in range(len(self))]

    @property
    def dim(self) -> int:
        return self.X.shape[1]

    def subset(self, idx) -> "AuditDataset":
        idx = np.asarray(idx)
        return AuditDataset(self.X[idx], self.s[idx], self.y[idx], self.feature_names)

    def with_outcome(self, y) -> "AuditDataset":
        return AuditDataset(self.X, self.s, y, self.feature_names)

    def with_sensitive(self, s) -> "AuditDataset":
        return AuditDataset(self.X, s, self.y, self.feature_names)

    @classmethod
    def from_samples(cls, samples: Sequence[AuditSample], feature_names=None):
        X = np.array([smp.x for smp in samples], dtype=float)
        return cls(X, [smp.s for smp in samples], [smp.y for smp in samples], feature_names)


def check_weights(u, m: int | None = None) -> np.ndarray:
    """Validate a weight vector and return it as a float array."""
    u = np.asarray(u, dtype=float).ravel()
    if m is not None and u.shape[0] != m:
        raise ValueError(f"weight vector has {u.shape[0]} entries, expected {m}")
    if not np.all(np.isfinite(u)):
        raise ValueError("weights must be finite")
    if np.any(u < 0):
        raise ValueError("weights must be nonnegative")
    if not u.sum() > 0:
        raise ValueError("weights must have positive total")
    return u


def normalize_weights(u) -> np.ndarray:
    """Rescale weights to sum to the sample count."""
    u = check_weights(u)
    return u * (u.shape[0] / u.sum())


@dataclass
class AuditConfig:
    feature_map_dim: int = 256
    kernel_bandwidth: Union[float, str] = "median-heuristic"
    lambda_reg: float = 1e-3
    xi: float = 0.05
    alpha_floor: float = 0.05
    tie_band_tau: float = 0.0
    max_iterations: int = 200
    weight_bound_B: float = 10.0
    seed: int = 0
    cv_grid: list = field(default_factory=list)
    loss: str = "logistic"

    def __post_init__(self):
        if self.feature_map_dim <= 0:
            raise ValueError("feature_map_dim must be positive")
        if isinstance(self.kernel_bandwidth, str):
            bandwidth_factor(self.kernel_bandwidth)
        elif not self.kernel_bandwidth > 0:
            raise ValueError("kernel_bandwidth must be > 0")
        if not self.lambda_reg > 0:
            raise ValueError("lambda_reg must be > 0")
        if not self.xi >= 0:
            raise ValueError("xi must be >= 0")
        if not 0 < self.alpha_floor < 1:
            raise ValueError("alpha_floor must lie in (0, 1)")
        if self.tie_band_tau < 0:
            raise ValueError("tie_band_tau must be >= 0")
        if self.max_iterations <= 0:
            raise ValueError("max_iterations must be positive")
        if not self.weight_bound_B > 1:
            raise ValueError("weight_bound_B must exceed 1")
        if not 0 <= int(self.seed) < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")
        if not self.cv_grid:
            self.cv_grid = [(self.lambda_reg, self.kernel_bandwidth)]
        self.cv_grid = [(float(lam), bw) for lam, bw in self.cv_grid]

    def to_dict(self) -> dict:
        return {
            "feature_map_dim": self.feature_map_dim,
            "kernel_bandwidth": self.kernel_bandwidth,
            "lambda_reg": self.lambda_reg,
            "xi": self.xi,
            "alpha_floor": self.alpha_floor,
            "tie_band_tau": self.tie_band_tau,
            "max_iterations": self.max_iterations,
            "weight_bound_B": self.weight_bound_B,
            "seed": int(self.seed),
            "cv_grid": [list(p) for p in self.cv_grid],
            "loss": self.loss,
        }


def bandwidth_factor(spec: str) -> float:
    """Multiplier of the median heuristic encoded by a bandwidth string:
    ``"median"``, ``"median-heuristic"`` or ``"<factor>*median"``."""
    spec = spec.strip()
    if spec in ("median", "median-heuristic"):
        return 1.0
    m = re.fullmatch(r"([0-9.eE+-]+)\s*\*\s*median(-heuristic)?", spec)
    if m:
        try:
            f = float(m.group(1))
        except ValueError:
            f = -1.0
        if f > 0:
            return f
    raise ValueError(f"kernel bandwidth must be > 0, 'median' or '<factor>*median', got {spec!r}")


def gamma_from_delta(delta: float, alpha: float) -> float:
    """Certificate strength of a ``delta`` violation on a subgroup of mass ``alpha``.

    gamma = alpha * (e^delta / (1 + e^delta) - 1/2)
    """
    if not math.isfinite(delta) or delta < 0:
        raise ValueError(f"delta must be finite and nonnegative, got {delta}")
    if not 0 < alpha <= 1:
        raise ValueError(f"alpha must lie in (0, 1], got {alpha}")
    # logistic(delta) - 1/2 == tanh(delta/2)/2, stable for large delta
    return alpha * 0.5 * math.tanh(delta / 2.0)


def delta_from_gamma(gamma: float, alpha: float) -> float:
    """Inverse of :func:`gamma_from_delta` in its first argument."""
    if not 0 < alpha <= 1:
        raise ValueError(f"alpha must lie in (0, 1], got {alpha}")
    if gamma < 0:
        raise ValueError(f"gamma must be nonnegative, got {gamma}")
    if gamma >= alpha / 2:
        raise UnboundedDivergenceError(
            f"unbounded divergence: gamma={gamma} >= alpha/2={alpha / 2}"
        )
    return 2.0 * math.atanh(2.0 * gamma / alpha)


Subgroup = Union[np.ndarray, Callable[[np.ndarray], np.ndarray]]


def subgroup_mask(dataset: AuditDataset, subgroup: Subgroup | None) -> np.ndarray:
    """Resolve a membership predicate into a boolean mask over the samples.

    ``subgroup`` may be a boolean array, a callable applied row-wise to the
    feature matrix, or None for the whole population.
    """
    if subgroup is None:
        return np.ones(len(dataset), dtype=bool)
    if callable(subgroup):
        mask = np.asarray(subgroup(dataset.X))
    else:
        mask = np.asarray(subgroup)
    mask = mask.astype(bool).ravel()
    if mask.shape[0] != len(dataset):
        raise ValueError("subgroup mask length does not match dataset")
    return mask


def disparate_treatment(
    dataset: AuditDataset,
    weights=None,
    subgroup: Subgroup | None = None,
    s: int = 1,
    outcome: int = 1,
) -> float:
    """Weighted ratio P[Y=outcome | S=s, G] / P[Y=outcome | S!=s, G].

    With the whole population and uniform weights this is the aggregate
    disparate impact.
    """
    u = np.ones(len(dataset)) if weights is None else normalize_weights(weights)
    g = subgroup_mask(dataset, subgroup)
    rates = []
    for grp, label in ((dataset.s == s, f"S={s:+d}"), (dataset.s != s, f"S={-s:+d}")):
        cell = g & grp
        tot = u[cell].sum()
        if not tot > 0:
            raise DegenerateSubgroupError(f"degenerate subgroup: empty cell {label}")
        pos = u[cell & (dataset.y == outcome)].sum()
        rates.append(pos / tot)
    if not rates[1] > 0:
        raise DegenerateSubgroupError(
            f"degenerate subgroup: empty cell S={-s:+d}, Y={outcome:+d}"
        )
    return float(rates[0] / rates[1])


@dataclass
class ProfileTable:
    """Per-variable (mean, std) split by sensitive value, for a subgroup and
    for the full population.

    ``rows[scope][s][variable] = (mean, std)`` with scope in
    {"population", "subgroup"}; the outcome is reported under "Y".
    """

    rows: dict
    subgroup_size: int

    def to_dict(self) -> dict:
        out = {"subgroup_size": self.subgroup_size}
        for scope, by_s in self.rows.items():
            out[scope] = {
                f"{s:+d}": {k: {"mean": v[0], "std": v[1]} for k, v in table.items()}
                for s, table in by_s.items()
            }
        return out


def _weighted_moments(values: np.ndarray, u: np.ndarray) -> tuple[float, float]:
    if not u.sum() > 0:
        return (float("nan"), float("nan"))
    mean = np.average(values, weights=u)
    var = np.average((values - mean) ** 2, weights=u)
    return (float(mean), float(np.sqrt(max(var, 0.0))))


def subgroup_profile(
    dataset: AuditDataset, subgroup: Subgroup | None, weights=None
) -> ProfileTable:
    """Feature and outcome moments by sensitive value, inside the subgroup
    and over the whole population.  Outcomes are reported on the 0/1 scale
    (the rate of Y=+1)."""
    g = subgroup_mask(dataset, subgroup)
    if not g.any():
        raise DegenerateSubgroupError("degenerate subgroup: empty subgroup")
    u = np.ones(len(dataset)) if weights is None else normalize_weights(weights)
    cols = {name: dataset.X[:, j] for j, name in enumerate(dataset.feature_names)}
    cols["Y"] = (dataset.y == 1).astype(float)
    rows = {}
    for scope, scope_mask in (("population", np.ones_like(g)), ("subgroup", g)):
        rows[scope] = {}
        for s in (1, -1):
            cell = scope_mask & (dataset.s == s)
            rows[scope][s] = {k: _weighted_moments(v[cell], u[cell]) for k, v in cols.items()}
    return ProfileTable(rows=rows, subgroup_size=int(g.sum()))
