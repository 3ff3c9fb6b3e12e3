"""Certifying unfairness by reduction to weighted label prediction.

A classifier is unfair for outcome y and sensitive value s when, within
some region of feature space, the sensitive attribute can be predicted once
the outcome is observed.  We look for such a region by fitting a weighted,
regularized linear scorer over a feature map to the labels r * s_i * y_i
(with r = sign(y)), and read off the certificate strength gamma and the
log-ratio delta with plug-in weighted frequencies.
"""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize
from scipy.special import expit, log_expit

from .core import (
    AuditConfig,
    AuditDataset,
    AuditError,
    DegenerateSubgroupError,
    bandwidth_factor,
    check_weights,
    normalize_weights,
)
from .kernels import FeatureMap, apply_map, make_feature_map, median_heuristic

log = logging.getLogger(__name__)

LOSSES = ("logistic", "smoothed-hinge")


class EmptySupportError(AuditError):
    """The certificate covers no weighted sample with the target outcome."""


class SampleDivergenceError(AuditError):
    """A sensitive cell inside the certificate support is empty in the sample,
    so the log-ratio is unbounded on this sample."""


class DivergenceError(AuditError):
    def __init__(self, msg, trace):
        super().__init__(msg)
        self.trace = trace


def _loss_and_slope(margin: np.ndarray, kind: str) -> tuple[np.ndarray, np.ndarray]:
    """Per-sample surrogate loss of the margin z = label * h, and dloss/dz."""
    if kind == "logistic":
        return -log_expit(margin), -expit(-margin)
    if kind == "smoothed-hinge":
        loss = np.where(margin >= 1, 0.0, np.where(margin <= 0, 0.5 - margin, 0.5 * (1 - margin) ** 2))
        slope = np.where(margin >= 1, 0.0, np.where(margin <= 0, -1.0, margin - 1.0))
        return loss, slope
    raise ValueError(f"unknown loss {kind!r}")


def fit_linear_model(Z, labels, sample_weights, lambda_reg: float, loss: str = "logistic",
                     init=None, gtol: float = 1e-6, max_iter: int = 5000):
    """Minimize (1/m) sum_i v_i loss(l_i (Z_i beta + b)) + lambda |beta|^2.

    Returns ``(beta, b, objective_trace)``.  The intercept is not penalized.
    Uses L-BFGS, whose line search enforces a decrease at every accepted
    iterate.
    """
    Z = np.asarray(Z, dtype=float)
    labels = np.asarray(labels, dtype=float)
    v = np.asarray(sample_weights, dtype=float)
    m, D = Z.shape

    def fun(theta):
        beta, b = theta[:D], theta[D]
        h = Z @ beta + b
        li, dz = _loss_and_slope(labels * h, loss)
        f = (v @ li) / m + lambda_reg * (beta @ beta)
        gh = v * dz * labels / m
        g = np.empty(D + 1)
        g[:D] = Z.T @ gh + 2 * lambda_reg * beta
        g[D] = gh.sum()
        return f, g

    x0 = np.zeros(D + 1) if init is None else np.asarray(init, dtype=float).copy()
    trace = [fun(x0)[0]]

    def record(intermediate_result):
        trace.append(float(intermediate_result.fun))

    res = minimize(
        fun, x0, jac=True, method="L-BFGS-B", callback=record,
        options={"maxiter": max_iter, "gtol": gtol, "ftol": 1e-15, "maxcor": 20},
    )
    theta = res.x
    if not np.all(np.isfinite(theta)):
        raise DivergenceError("certifier fit diverged (non-finite coefficients)", trace)
    rising = 0
    for a, b in zip(trace, trace[1:]):
        rising = rising + 1 if b > a else 0
        if rising >= 50:
            raise DivergenceError("certifier objective increased for 50 consecutive steps", trace)
    return theta[:D], float(theta[D]), trace


@dataclass
class CertifierModel:
    """Linear scorer h(x) = <coef, phi(x)> + intercept and its indicator.

    The indicator is sign(h) outside the band |h| <= tau/2 and +1 with
    probability (h + tau/2)/tau inside it.  With tau = 0 ties at h = 0 go to +1.
    """

    fmap: FeatureMap
    coef: np.ndarray
    intercept: float
    loss: str = "logistic"
    lambda_reg: float = 1e-3
    tie_band_tau: float = 0.0
    objective_trace: list = field(default_factory=list, repr=False)

    def score(self, X=None, Z=None) -> np.ndarray:
        if Z is None:
            Z = apply_map(self.fmap, np.asarray(X, dtype=float))
        return Z @ self.coef + self.intercept

    def indicator(self, X=None, Z=None, rng=None) -> np.ndarray:
        h = self.score(X, Z)
        c = np.where(h >= 0, 1, -1)
        tau = self.tie_band_tau
        if tau > 0:
            band = np.abs(h) <= tau / 2
            if band.any():
                if rng is None:
                    rng = np.random.default_rng(0)
                p = (h[band] + tau / 2) / tau
                c[band] = np.where(rng.random(band.sum()) < p, 1, -1)
        return c

    @property
    def theta(self) -> np.ndarray:
        return np.append(self.coef, self.intercept)


@dataclass
class Certificate:
    model: CertifierModel
    target_y: int
    target_s: int
    gamma_hat: float
    support_mass: float


def reduction_labels(dataset: AuditDataset, target_y: int, target_s: int = 1) -> np.ndarray:
    """Labels sign(target_y) * s_i * y_i, flipped when certifying for S=-1.

    +1 marks samples that support a violation in favour of ``target_s`` for
    outcome ``target_y``.
    """
    r = 1 if target_y > 0 else -1
    return (r * target_s * dataset.s * dataset.y).astype(int)


def resolve_bandwidth(config: AuditConfig, X_train, bandwidth=None) -> float:
    bw = config.kernel_bandwidth if bandwidth is None else bandwidth
    if isinstance(bw, str):
        return bandwidth_factor(bw) * median_heuristic(X_train, seed=int(config.seed))
    return float(bw)


def build_feature_map(config: AuditConfig, train: AuditDataset, bandwidth=None) -> FeatureMap:
    """Random Fourier map fixed by the config seed; bandwidth from the train split only."""
    bw = resolve_bandwidth(config, train.X, bandwidth)
    return make_feature_map("random-fourier", train.dim, config.feature_map_dim, bw,
                            seed=int(config.seed))


def fit_certifier(dataset: AuditDataset, weights, labels, fmap: FeatureMap, lambda_reg: float,
                  per_sample_multipliers=None, loss: str = "logistic", tie_band_tau: float = 0.0,
                  Z=None, init=None) -> CertifierModel:
    """Weighted regularized ERM of the reduction labels over ``fmap``.

    ``weights`` are normalized to sum to the sample count before the
    multipliers are applied.
    """
    if loss not in LOSSES:
        raise ValueError(f"unknown loss {loss!r}")
    u = normalize_weights(check_weights(weights, len(dataset)))
    if per_sample_multipliers is not None:
        u = u * check_weights(per_sample_multipliers, len(dataset))
    if Z is None:
        Z = apply_map(fmap, dataset.X)
    coef, b, trace = fit_linear_model(Z, labels, u, lambda_reg, loss, init=init)
    return CertifierModel(fmap, coef, b, loss, lambda_reg, tie_band_tau, trace)


def _cells(dataset, weights, c, target_y, target_s):
    u = np.ones(len(dataset)) if weights is None else check_weights(weights, len(dataset))
    support = (c == 1) & (dataset.y == target_y)
    w_s = u[support & (dataset.s == target_s)].sum()
    w_ns = u[support & (dataset.s != target_s)].sum()
    return w_s, w_ns, u.sum()


def gamma_from_indicator(dataset, weights, c, target_y, target_s) -> tuple[float, float]:
    """(gamma_hat, support_mass) for a fixed indicator vector ``c``."""
    w_s, w_ns, total = _cells(dataset, weights, c, target_y, target_s)
    mass = (w_s + w_ns) / total
    if not mass > 0:
        raise EmptySupportError("empty certificate support")
    return float(mass * (w_s / (w_s + w_ns) - 0.5)), float(mass)


def delta_from_indicator(dataset, weights, c, target_y, target_s) -> float:
    """Log of the weighted count ratio between the two sensitive cells of
    the certificate support."""
    w_s, w_ns, _ = _cells(dataset, weights, c, target_y, target_s)
    if not (w_s > 0 and w_ns > 0):
        raise SampleDivergenceError(
            f"unbounded divergence in sample: weighted cells S={target_s:+d}: {w_s}, "
            f"S={-target_s:+d}: {w_ns}"
        )
    return float(np.log(w_s / w_ns))


def estimate_gamma(dataset, weights, model: CertifierModel, target_y: int, target_s: int,
                   rng=None, Z=None) -> float:
    c = model.indicator(dataset.X if Z is None else None, Z=Z, rng=rng)
    return gamma_from_indicator(dataset, weights, c, target_y, target_s)[0]


def estimate_delta(dataset, weights, model: CertifierModel, target_y: int, target_s: int,
                   rng=None, Z=None) -> float:
    c = model.indicator(dataset.X if Z is None else None, Z=Z, rng=rng)
    return delta_from_indicator(dataset, weights, c, target_y, target_s)


@dataclass
class SplitContext:
    """Everything one train/test audit needs, computed once: the feature map,
    mapped features, and rebalancing weights on both halves."""

    fmap: FeatureMap
    Z_train: np.ndarray
    Z_test: np.ndarray
    u_train: np.ndarray
    u_test: np.ndarray


def prepare_split(train, test, config: AuditConfig, target_s: int, scheme, propensity=None,
                  lambda_reg=None, bandwidth=None) -> SplitContext:
    from .rebalance import compute_weights

    lam = config.lambda_reg if lambda_reg is None else lambda_reg
    fmap = build_feature_map(config, train, bandwidth)
    Z_tr = apply_map(fmap, train.X)
    Z_te = apply_map(fmap, test.X)
    u_tr = compute_weights(train, target_s, scheme, fmap, propensity, Z=Z_tr, lambda_reg=lam)
    u_te = compute_weights(test, target_s, scheme, fmap, propensity, Z=Z_te, lambda_reg=lam)
    return SplitContext(fmap, Z_tr, Z_te, u_tr, u_te)


def certify(train: AuditDataset, test: AuditDataset, config: AuditConfig, target_y: int,
            target_s: int, scheme, propensity=None, context: SplitContext | None = None,
            lambda_reg=None, bandwidth=None) -> Certificate:
    """One-shot certification: weights and fit on train, gamma on test."""
    lam = config.lambda_reg if lambda_reg is None else lambda_reg
    ctx = context or prepare_split(train, test, config, target_s, scheme, propensity, lam, bandwidth)
    labels = reduction_labels(train, target_y, target_s)
    model = fit_certifier(train, ctx.u_train, labels, ctx.fmap, lam, loss=config.loss,
                          tie_band_tau=config.tie_band_tau, Z=ctx.Z_train)
    rng = np.random.default_rng(int(config.seed))
    c = model.indicator(Z=ctx.Z_test, rng=rng)
    gamma, mass = gamma_from_indicator(test, ctx.u_test, c, target_y, target_s)
    return Certificate(model, target_y, target_s, gamma, mass)


def oracle_best_gamma(dataset: AuditDataset, weights, target_y: int, target_s: int,
                      max_distinct: int = 12):
    """Exhaustive supremum of the certificate strength over all unions of
    distinct feature vectors.

    Returns ``(mask, gamma_star)`` where ``mask`` marks the samples of the
    best subgroup.
    """
    keys, inverse = np.unique(dataset.X, axis=0, return_inverse=True)
    inverse = inverse.ravel()
    k = keys.shape[0]
    if k > max_distinct:
        raise ValueError(f"too many distinct feature vectors for enumeration: {k} > {max_distinct}")
    u = np.ones(len(dataset)) if weights is None else check_weights(weights, len(dataset))
    total = u.sum()
    on_y = dataset.y == target_y
    a = np.bincount(inverse, weights=u * (on_y & (dataset.s == target_s)), minlength=k)
    b = np.bincount(inverse, weights=u * (on_y & (dataset.s != target_s)), minlength=k)
    best, best_subset = -np.inf, None
    for r in range(1, k + 1):
        for subset in itertools.combinations(range(k), r):
            idx = list(subset)
            ws, wn = a[idx].sum(), b[idx].sum()
            if ws + wn <= 0:
                continue
            g = (ws + wn) / total * (ws / (ws + wn) - 0.5)
            if g > best:
                best, best_subset = g, idx
    if best_subset is None:
        raise EmptySupportError("no subgroup carries the target outcome")
    return np.isin(inverse, best_subset), float(best)
