"""CSV ingestion, train/test splitting and the synthetic benchmark generator."""

from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core import AuditDataset, AuditError


class SchemaError(AuditError):
    """The input file does not match its schema."""


class DegenerateSplitError(AuditError):
    """A split side lacks a sensitive or an outcome value."""


@dataclass
class CsvSchema:
    """Which columns hold the features, the sensitive attribute and the outcome.

    ``*_positive`` lists the raw values mapped to +1.  ``*_negative`` lists
    the values mapped to -1; when it is empty every other value maps to -1.
    """

    feature_columns: list
    sensitive_column: str
    outcome_column: str
    sensitive_positive: list = field(default_factory=lambda: ["1"])
    sensitive_negative: list = field(default_factory=list)
    outcome_positive: list = field(default_factory=lambda: ["1"])
    outcome_negative: list = field(default_factory=list)
    prediction_column: str | None = None
    prediction_positive: list = field(default_factory=lambda: ["1"])
    prediction_negative: list = field(default_factory=list)

    def __post_init__(self):
        named = list(self.feature_columns) + [self.sensitive_column, self.outcome_column]
        if self.prediction_column:
            named.append(self.prediction_column)
        if len(set(named)) != len(named):
            raise SchemaError("schema columns must be disjoint")
        if not self.feature_columns:
            raise SchemaError("schema needs at least one feature column")

    @classmethod
    def from_file(cls, path) -> "CsvSchema":
        """Parse a ``key=value`` per line config; list values are comma separated."""
        kv = {}
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, 1):
                line = line.strip()
                if not line or line.startswith("#"):
                    continue
                if "=" not in line:
                    raise SchemaError(f"{path}:{lineno}: expected key=value")
                key, value = line.split("=", 1)
                kv[key.strip()] = value.strip()
        return cls.from_mapping(kv)

    @classmethod
    def from_mapping(cls, kv: dict) -> "CsvSchema":
        def lst(key, default=None):
            if key not in kv:
                return default if default is not None else []
            return [v.strip() for v in kv[key].split(",") if v.strip()]

        for key in ("feature_columns", "sensitive_column", "outcome_column"):
            if key not in kv:
                raise SchemaError(f"schema is missing required key {key!r}")
        known = {f.name for f in cls.__dataclass_fields__.values()}
        unknown = set(kv) - known
        if unknown:
            raise SchemaError(f"unknown schema keys: {sorted(unknown)}")
        return cls(
            feature_columns=lst("feature_columns"),
            sensitive_column=kv["sensitive_column"],
            outcome_column=kv["outcome_column"],
            sensitive_positive=lst("sensitive_positive", ["1"]),
            sensitive_negative=lst("sensitive_negative"),
            outcome_positive=lst("outcome_positive", ["1"]),
            outcome_negative=lst("outcome_negative"),
            prediction_column=kv.get("prediction_column") or None,
            prediction_positive=lst("prediction_positive", ["1"]),
            prediction_negative=lst("prediction_negative"),
        )

    def to_text(self) -> str:
        lines = [
            f"feature_columns={','.join(self.feature_columns)}",
            f"sensitive_column={self.sensitive_column}",
            f"sensitive_positive={','.join(self.sensitive_positive)}",
            f"outcome_column={self.outcome_column}",
            f"outcome_positive={','.join(self.outcome_positive)}",
        ]
        if self.sensitive_negative:
            lines.append(f"sensitive_negative={','.join(self.sensitive_negative)}")
        if self.outcome_negative:
            lines.append(f"outcome_negative={','.join(self.outcome_negative)}")
        if self.prediction_column:
            lines.append(f"prediction_column={self.prediction_column}")
            lines.append(f"prediction_positive={','.join(self.prediction_positive)}")
            if self.prediction_negative:
                lines.append(f"prediction_negative={','.join(self.prediction_negative)}")
        return "\n".join(lines) + "\n"


def _map_binary(raw: str, positive, negative, column: str, row: int) -> int:
    if raw in positive:
        return 1
    if not negative or raw in negative:
        return -1
    raise SchemaError(f"row {row}: unmapped value {raw!r} in column {column!r}")


def load_csv(path, schema: CsvSchema, outcome: str = "outcome") -> AuditDataset:
    """Read an audit dataset.

    ``outcome="prediction"`` takes the audited outcome from the schema's
    prediction column instead of the outcome column.  Rows are numbered
    from 1 after the header.
    """
    if outcome == "prediction":
        if not schema.prediction_column:
            raise SchemaError("schema has no prediction_column")
        y_col, y_pos, y_neg = (schema.prediction_column, schema.prediction_positive,
                               schema.prediction_negative)
    else:
        y_col, y_pos, y_neg = schema.outcome_column, schema.outcome_positive, schema.outcome_negative
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaError(f"{path}: empty file, header row required") from None
        col = {name.strip(): j for j, name in enumerate(header)}
        for name in list(schema.feature_columns) + [schema.sensitive_column, y_col]:
            if name not in col:
                raise SchemaError(f"missing column {name!r}")
        fidx = [col[c] for c in schema.feature_columns]
        X, s, y = [], [], []
        for row_no, row in enumerate(reader, 1):
            if not row:
                continue
            if len(row) != len(header):
                raise SchemaError(f"row {row_no}: expected {len(header)} fields, got {len(row)}")
            feats = []
            for j, name in zip(fidx, schema.feature_columns):
                try:
                    feats.append(float(row[j]))
                except ValueError:
                    raise SchemaError(
                        f"row {row_no}: non-numeric value {row[j]!r} in feature column {name!r}"
                    ) from None
            if not all(math.isfinite(v) for v in feats):
                raise SchemaError(f"row {row_no}: non-finite feature value")
            X.append(feats)
            s.append(_map_binary(row[col[schema.sensitive_column]].strip(), schema.sensitive_positive,
                                 schema.sensitive_negative, schema.sensitive_column, row_no))
            y.append(_map_binary(row[col[y_col]].strip(), y_pos, y_neg, y_col, row_no))
    X = np.array(X, dtype=float).reshape(len(X), len(fidx))
    return AuditDataset(X, s, y, list(schema.feature_columns))


def save_csv(dataset: AuditDataset, path, extra_columns: dict | None = None) -> CsvSchema:
    """Write a dataset so that ``load_csv(path, schema)`` reproduces it exactly.

    Floats are written with ``repr`` (shortest round-tripping form).  The
    write goes through a temporary file renamed into place.
    """
    names = list(dataset.feature_names)
    s_col, y_col = "s", "y"
    while s_col in names:
        s_col = "_" + s_col
    while y_col in names or y_col == s_col:
        y_col = "_" + y_col
    extra = extra_columns or {}
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(names + [s_col, y_col] + list(extra))
        cols = [np.asarray(v) for v in extra.values()]
        for i in range(len(dataset)):
            w.writerow([repr(float(v)) for v in dataset.X[i]]
                       + [int(dataset.s[i]), int(dataset.y[i])]
                       + [_fmt(c[i]) for c in cols])
    os.replace(tmp, path)
    return CsvSchema(names, s_col, y_col, ["1"], ["-1"], ["1"], ["-1"])


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (bool, np.bool_)):
        return int(v)
    return v


def split(dataset: AuditDataset, train_fraction: float = 0.7, seed: int = 0):
    """Seeded random partition with ``floor(train_fraction * m)`` training rows."""
    if not 0 < train_fraction < 1:
        raise ValueError("train_fraction must lie in (0, 1)")
    m = len(dataset)
    if m == 0:
        raise ValueError("empty dataset")
    n_train = int(math.floor(train_fraction * m + 1e-9))
    perm = np.random.default_rng(seed).permutation(m)
    tr, te = np.sort(perm[:n_train]), np.sort(perm[n_train:])
    out = []
    for name, idx in (("train", tr), ("test", te)):
        s, y = dataset.s[idx], dataset.y[idx]
        for label, v in (("sensitive", s), ("outcome", y)):
            if not (np.any(v == 1) and np.any(v == -1)):
                raise DegenerateSplitError(f"degenerate split: {name} side lacks a {label} value")
        out.append(dataset.subset(idx))
    return out[0], out[1]


# ---------------------------------------------------------------------------
# synthetic benchmark


@dataclass(frozen=True)
class SyntheticSpec:
    m: int = 5000
    mu: float = 0.0
    nu: float = 0.0
    noise_std: float = 0.2
    seed: int = 0

    def __post_init__(self):
        if self.m < 100:
            raise ValueError("m must be at least 100")
        if not 0 <= self.nu < 1:
            raise ValueError("nu must lie in [0, 1); nu = 1 gives an infinite violation")
        if self.noise_std < 0:
            raise ValueError("noise_std must be nonnegative")

    @classmethod
    def from_delta(cls, delta_m: float, **kw) -> "SyntheticSpec":
        """Spec whose injected violation has log-ratio ``delta_m``."""
        return cls(nu=1.0 - math.exp(-delta_m), **kw)


def propensity_plus(X, mu: float) -> np.ndarray:
    """Pr[S=+1 | x] = e^{mu z^2} / (1 + e^{mu z^2}) with z = x1 + x2."""
    X = np.asarray(X, dtype=float)
    z = X[:, 0] + X[:, 1]
    t = mu * z * z
    return np.exp(-np.logaddexp(0.0, -t))


def fit_base_logistic(X, labels01, n_iter: int = 500, step: float = 0.1) -> np.ndarray:
    """Unregularized logistic regression by full-batch gradient descent on
    the mean log-loss; returns ``[w1, ..., wd, b]``."""
    Xb = np.hstack([X, np.ones((X.shape[0], 1))])
    theta = np.zeros(Xb.shape[1])
    m = Xb.shape[0]
    for _ in range(n_iter):
        p = 1.0 / (1.0 + np.exp(-(Xb @ theta)))
        theta -= step * (Xb.T @ (p - labels01)) / m
    return theta


@dataclass
class GroundTruth:
    """Analytic description of the injected violation."""

    delta_m: float
    nu: float
    mu: float
    base_theta: np.ndarray
    target_y: int = 1
    target_s: int = 1

    def base_outcome(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        h = X @ self.base_theta[:-1] + self.base_theta[-1]
        return np.where(h >= 0, 1, -1)

    def region(self, X) -> np.ndarray:
        """Unit disk intersected with the base classifier's negative side."""
        X = np.asarray(X, dtype=float)
        return (X[:, 0] ** 2 + X[:, 1] ** 2 <= 1.0) & (self.base_outcome(X) == -1)

    def propensity(self, X) -> np.ndarray:
        return propensity_plus(X, self.mu)

    def region_mass(self, n_mc: int = 400_000, seed: int = 12345) -> float:
        """Pr[x in region | S = -1], by Monte Carlo over the generating law.

        This is the region mass under the rebalanced distribution, whose
        feature marginal is that of the S = -1 group.
        """
        X = np.random.default_rng(seed).standard_normal((n_mc, 2))
        q = 1.0 - self.propensity(X)
        return float((q * self.region(X)).sum() / q.sum())

    def true_gamma(self, n_mc: int = 400_000) -> float:
        """Certificate strength of the injected region for (y=+1, s=+1)
        under the rebalanced distribution."""
        from .core import gamma_from_delta

        alpha = self.region_mass(n_mc) * (1.0 - self.nu / 2.0)
        return gamma_from_delta(self.delta_m, alpha)

    def to_dict(self) -> dict:
        return {
            "delta_m": self.delta_m,
            "nu": self.nu,
            "mu": self.mu,
            "target_y": self.target_y,
            "target_s": self.target_s,
            "base_classifier": [float(v) for v in self.base_theta],
            "region": "x1^2 + x2^2 <= 1 and base_classifier(x) == -1",
        }


def generate_synthetic(spec: SyntheticSpec):
    """Two-feature benchmark with a planted violation of known severity.

    Returns ``(dataset, ground_truth)``.  Outcomes come from a logistic
    classifier fit on sign(x1 + x2 + e); inside the unit disk, negative
    outcomes become positive for every S=+1 sample and with probability
    1 - nu for S=-1 samples.
    """
    rng = np.random.default_rng(spec.seed)
    X = rng.standard_normal((spec.m, 2))
    e = rng.normal(0.0, spec.noise_std, size=spec.m)
    s = np.where(rng.random(spec.m) < propensity_plus(X, spec.mu), 1, -1)
    label = np.sign((X[:, 0] + X[:, 1] + e) ** 3)
    theta = fit_base_logistic(X, (label > 0).astype(float))
    truth = GroundTruth(delta_m=math.log(1.0 / (1.0 - spec.nu)), nu=spec.nu, mu=spec.mu,
                        base_theta=theta)
    y = truth.base_outcome(X)
    flip_u = rng.random(spec.m)
    inside = (X[:, 0] ** 2 + X[:, 1] ** 2 <= 1.0) & (y == -1)
    flip = inside & ((s == 1) | (flip_u < 1.0 - spec.nu))
    y = np.where(flip, 1, y)
    return AuditDataset(X, s, y, ["x1", "x2"]), truth
