"""Weighting schemes that remove the information features leak about S.

Three schemes are provided: uniform weights, importance-sampling weights
(exact or estimated propensity) and kernel mean matching, which picks the
weights of one sensitive group to minimize the MMD to the other group.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .core import AuditDataset, AuditError
from .kernels import FeatureMap, apply_map

log = logging.getLogger(__name__)

SCHEMES = ("uniform", "importance-exact", "importance-estimated", "mmd-match")
_ALIASES = {"uw": "uniform", "is": "importance-exact", "mmd": "mmd-match"}


class CommonSupportError(AuditError):
    """A propensity is 0 or 1, so one group carries no information there."""


@dataclass(frozen=True)
class WeightScheme:
    kind: str = "mmd-match"
    bound_B: float = 10.0
    tolerance: float = 1e-3
    max_iters: int = 2000

    def __post_init__(self):
        kind = _ALIASES.get(self.kind, self.kind)
        object.__setattr__(self, "kind", kind)
        if kind not in SCHEMES:
            raise ValueError(f"unknown weight scheme {self.kind!r}")
        if not self.bound_B > 1:
            raise ValueError("bound_B must exceed 1")
        if not self.tolerance > 0 or self.max_iters <= 0:
            raise ValueError("tolerance and max_iters must be positive")


@dataclass
class MatchResult:
    weights: np.ndarray
    converged: bool
    iterations: int
    objective: float


def uniform_weights(dataset: AuditDataset) -> np.ndarray:
    m = len(dataset)
    if m == 0:
        raise ValueError("empty dataset")
    return np.full(m, 1.0 / m)


def importance_weights(dataset: AuditDataset, s: int, propensity="estimate", fmap=None,
                       lambda_reg: float = 1e-3) -> np.ndarray:
    """Odds-ratio weights Pr[S!=s|x]/Pr[S=s|x] on group S=s, 1 elsewhere.

    ``propensity`` is either a callable returning Pr[S=+1|x] for the rows of
    a feature matrix, or ``"estimate"`` to fit a regularized logistic
    regression of S on ``fmap(x)``.
    """
    if isinstance(propensity, str):
        if propensity != "estimate":
            raise ValueError("propensity must be a callable or 'estimate'")
        p_plus = estimate_propensity(dataset, fmap, lambda_reg)
    else:
        p_plus = np.asarray(propensity(dataset.X), dtype=float).ravel()
    p_s = p_plus if s == 1 else 1.0 - p_plus
    bad = np.flatnonzero(~((p_s > 0) & (p_s < 1)))
    if bad.size:
        i = int(bad[0])
        raise CommonSupportError(
            f"violated common support: Pr[S={s:+d}|x] = {p_s[i]} at sample {i}"
        )
    w = np.ones(len(dataset))
    grp = dataset.s == s
    w[grp] = (1.0 - p_s[grp]) / p_s[grp]
    return w


def estimate_propensity(dataset: AuditDataset, fmap: FeatureMap | None,
                        lambda_reg: float = 1e-3) -> np.ndarray:
    """Pr[S=+1|x] from an L2-regularized logistic regression on the feature map."""
    from .certify import fit_linear_model

    Z = dataset.X if fmap is None else apply_map(fmap, dataset.X)
    coef, intercept, _ = fit_linear_model(Z, dataset.s, np.ones(len(dataset)), lambda_reg)
    h = Z @ coef + intercept
    return 1.0 / (1.0 + np.exp(-h))


def project_box_slab(v, upper: float, target: float = 1.0, tol: float = 0.0) -> np.ndarray:
    """Euclidean projection onto {0 <= u <= upper, |sum(u) - target| <= tol}."""
    u = np.clip(v, 0.0, upper)
    total = u.sum()
    if abs(total - target) <= tol:
        return u
    goal = target + tol if total > target else target - tol
    # sum(clip(v - theta)) is nonincreasing in theta; bracket and bisect.
    lo = float(np.min(v)) - upper
    hi = float(np.max(v))
    for _ in range(100):
        mid = 0.5 * (lo + hi)
        if np.clip(v - mid, 0.0, upper).sum() > goal:
            lo = mid
        else:
            hi = mid
        if hi - lo < 1e-15 * max(1.0, abs(lo)):
            break
    return np.clip(v - 0.5 * (lo + hi), 0.0, upper)


def _power_iteration(A: np.ndarray, n_steps: int = 20) -> float:
    """Largest eigenvalue of the PSD matrix A^T A."""
    v = np.ones(A.shape[1]) / np.sqrt(A.shape[1])
    lam = 0.0
    for _ in range(n_steps):
        w = A.T @ (A @ v)
        lam = float(np.linalg.norm(w))
        if lam == 0:
            return 0.0
        v = w / lam
    return lam


def kernel_mean_match(Zs: np.ndarray, target_mean: np.ndarray, scheme: WeightScheme,
                      stop_rel: float = 1e-8) -> MatchResult:
    """Projected gradient descent for

        min_u |Zs^T u - target_mean|^2   s.t. 0 <= u <= B/n, |sum(u) - 1| <= tol

    starting from uniform weights, with constant step 1/L.  Stops when one
    step improves the objective by at most ``stop_rel`` times its starting value.
    """
    n = Zs.shape[0]
    upper = scheme.bound_B / n
    # gradient Lipschitz constant 2*lambda_max(Zs Zs^T), padded for the
    # power-iteration underestimate
    L = 2.0 * _power_iteration(Zs) * 1.05
    u = np.full(n, 1.0 / n)
    r = Zs.T @ u - target_mean
    f = f0 = float(r @ r)
    if L == 0 or f0 == 0:
        return MatchResult(u, True, 0, f0)
    step = 1.0 / L
    converged = False
    it = 0
    for it in range(1, scheme.max_iters + 1):
        u_new = project_box_slab(u - step * 2.0 * (Zs @ r), upper, 1.0, scheme.tolerance)
        r_new = Zs.T @ u_new - target_mean
        f_new = float(r_new @ r_new)
        if f_new > f:
            break
        done = f - f_new <= stop_rel * f0
        u, r, f = u_new, r_new, f_new
        if done:
            converged = True
            break
    if not converged:
        log.warning("kernel mean matching stopped after %d iterations without converging", it)
    return MatchResult(u, converged, it, f)


def mmd_match_weights(dataset: AuditDataset, s: int, fmap: FeatureMap,
                      scheme: WeightScheme | None = None, Z=None,
                      return_result: bool = False):
    """Kernel-mean-matching weights for group S=s against its complement.

    Group S=s gets the matching solution (summing to one within the
    tolerance); the complement gets uniform weights summing to one.
    """
    scheme = scheme or WeightScheme()
    grp = dataset.s == s
    if not grp.any() or grp.all():
        raise ValueError("both sensitive groups must be nonempty")
    if Z is None:
        Z = apply_map(fmap, dataset.X)
    n_other = int((~grp).sum())
    target = Z[~grp].mean(axis=0)
    res = kernel_mean_match(Z[grp], target, scheme)
    u = np.empty(len(dataset))
    u[grp] = res.weights
    u[~grp] = 1.0 / n_other
    if return_result:
        return u, res
    return u


def compute_weights(dataset: AuditDataset, s: int, scheme: WeightScheme,
                    fmap: FeatureMap | None = None, propensity=None, Z=None,
                    lambda_reg: float = 1e-3) -> np.ndarray:
    """Dispatch on ``scheme.kind``.  ``propensity`` is needed by
    ``importance-exact``."""
    if scheme.kind == "uniform":
        return uniform_weights(dataset)
    if scheme.kind == "importance-exact":
        if propensity is None:
            raise ValueError("importance-exact weights need an exact propensity function")
        return importance_weights(dataset, s, propensity)
    if scheme.kind == "importance-estimated":
        return importance_weights(dataset, s, "estimate", fmap, lambda_reg)
    return mmd_match_weights(dataset, s, fmap, scheme, Z=Z)
