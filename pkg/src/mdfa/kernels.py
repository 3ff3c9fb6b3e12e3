"""Explicit feature maps and the weighted maximum-mean-discrepancy statistic."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.stats import norm, qmc

from .core import AuditDataset, DegenerateSubgroupError, check_weights

KINDS = ("identity", "standardized", "random-fourier")


def median_heuristic(X, n_pairs: int = 1000, seed: int = 0) -> float:
    """Median Euclidean distance over ``n_pairs`` random distinct pairs of rows."""
    X = np.asarray(X, dtype=float)
    n = X.shape[0]
    if n < 2:
        raise ValueError("median heuristic needs at least two samples")
    rng = np.random.default_rng(seed)
    i = rng.integers(0, n, size=n_pairs)
    j = rng.integers(0, n - 1, size=n_pairs)
    j = j + (j >= i)
    d = np.linalg.norm(X[i] - X[j], axis=1)
    med = float(np.median(d))
    return med if med > 0 else 1.0


@dataclass(frozen=True)
class FeatureMap:
    """A fixed map phi: R^d -> R^dim.

    For ``random-fourier`` the output is ``[cos(W x), sin(W x)] / sqrt(dim/2)``
    with rows of W distributed as N(0, I / bandwidth^2), so that
    <phi(x), phi(x')> approximates exp(-|x - x'|^2 / (2 bandwidth^2)) and
    <phi(x), phi(x)> = 1 exactly.  Frequencies come from a scrambled Halton
    sequence pushed through the normal quantile (``sampler="halton"``), which
    roughly halves the kernel approximation error of plain Monte Carlo draws
    (``sampler="gaussian"``) at the same dimension.
    """

    kind: str
    input_dim: int
    dim: int
    bandwidth: float = 1.0
    frequencies: np.ndarray | None = None
    center: np.ndarray | None = None
    scale: np.ndarray | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown feature map kind {self.kind!r}")
        if not self.bandwidth > 0:
            raise ValueError("bandwidth must be positive")
        for a in (self.frequencies, self.center, self.scale):
            if a is not None:
                a.setflags(write=False)

    def __call__(self, X) -> np.ndarray:
        return apply_map(self, X)


def make_feature_map(
    kind: str,
    input_dim: int,
    dim: int | None = None,
    bandwidth: float = 1.0,
    seed: int = 0,
    X_fit=None,
    sampler: str = "halton",
) -> FeatureMap:
    """Build a feature map.  ``X_fit`` supplies the moments of the
    ``standardized`` map; it is ignored by the other kinds."""
    if kind == "identity":
        return FeatureMap("identity", input_dim, input_dim)
    if kind == "standardized":
        if X_fit is None:
            raise ValueError("standardized map needs X_fit")
        X_fit = np.asarray(X_fit, dtype=float)
        sd = X_fit.std(axis=0)
        sd[sd == 0] = 1.0
        return FeatureMap("standardized", input_dim, input_dim, center=X_fit.mean(axis=0), scale=sd)
    if kind == "random-fourier":
        if dim is None or dim < 2 or dim % 2:
            raise ValueError("random-fourier dim must be an even integer >= 2")
        W = _gaussian_frequencies(dim // 2, input_dim, seed, sampler) / bandwidth
        return FeatureMap("random-fourier", input_dim, dim, bandwidth=bandwidth, frequencies=W)
    raise ValueError(f"unknown feature map kind {kind!r}")


def _gaussian_frequencies(n: int, d: int, seed: int, sampler: str) -> np.ndarray:
    if sampler == "gaussian":
        return np.random.default_rng(seed).standard_normal((n, d))
    if sampler == "halton":
        U = qmc.Halton(d, scramble=True, seed=np.random.default_rng(seed)).random(n)
        return norm.ppf(np.clip(U, 1e-12, 1 - 1e-12))
    raise ValueError(f"unknown frequency sampler {sampler!r}")


def apply_map(fmap: FeatureMap, X) -> np.ndarray:
    """Evaluate ``fmap`` on a single vector or on the rows of a matrix."""
    X = np.asarray(X, dtype=float)
    single = X.ndim == 1
    X2 = X[None, :] if single else X
    if X2.shape[1] != fmap.input_dim:
        raise ValueError(
            f"dimension mismatch: map expects {fmap.input_dim} features, got {X2.shape[1]}"
        )
    if fmap.kind == "identity":
        Z = X2.copy()
    elif fmap.kind == "standardized":
        Z = (X2 - fmap.center) / fmap.scale
    else:
        # accumulate over input coordinates so each entry is computed the same
        # way whatever the batch size (BLAS may block rows differently)
        W = fmap.frequencies
        P = np.zeros((X2.shape[0], W.shape[0]))
        for j in range(X2.shape[1]):
            P += X2[:, j, None] * W[None, :, j]
        Z = np.hstack([np.cos(P), np.sin(P)]) / np.sqrt(fmap.dim / 2)
    return Z[0] if single else Z


def gaussian_kernel(x, x2, bandwidth: float) -> np.ndarray:
    """Exact Gaussian kernel between matching rows of ``x`` and ``x2``."""
    d = np.asarray(x, dtype=float) - np.asarray(x2, dtype=float)
    return np.exp(-np.sum(d * d, axis=-1) / (2.0 * bandwidth**2))


def group_mean_embeddings(Z, s, u, target_s: int = 1) -> tuple[np.ndarray, np.ndarray]:
    """Weighted mean feature vectors of the groups S=target_s and S!=target_s,
    each group's weights normalized to sum to one."""
    out = []
    for mask, label in ((s == target_s, "S=s"), (s != target_s, "S!=s")):
        w = u[mask]
        tot = w.sum()
        if not tot > 0:
            raise DegenerateSubgroupError(f"group {label} has zero total weight")
        out.append((w / tot) @ Z[mask])
    return out[0], out[1]


def mmd_hat(dataset: AuditDataset, weights, s: int, fmap: FeatureMap, Z=None) -> float:
    """Norm of the difference between the weighted mean embeddings of the two
    sensitive groups.  ``Z`` may carry a precomputed ``fmap(dataset.X)``."""
    u = check_weights(weights, len(dataset))
    if Z is None:
        Z = apply_map(fmap, dataset.X)
    a, b = group_mean_embeddings(Z, dataset.s, u, s)
    return float(np.linalg.norm(a - b))
