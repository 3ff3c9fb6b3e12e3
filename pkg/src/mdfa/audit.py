"""Orchestration: cross-validation, repeated splits, scheme comparison,
auditing of external predictions, and report serialization."""

from __future__ import annotations

import json
import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .certify import (
    _loss_and_slope,
    SampleDivergenceError,
    certify,
    delta_from_indicator,
    fit_certifier,
    prepare_split,
    reduction_labels,
    resolve_bandwidth,
)
from .core import AuditConfig, AuditDataset, AuditError, disparate_treatment, normalize_weights
from .core import subgroup_profile
from .data import DegenerateSplitError, SyntheticSpec, generate_synthetic, split
from .kernels import apply_map, make_feature_map, mmd_hat
from .rebalance import WeightScheme, compute_weights
from .wva import wva_run

log = logging.getLogger(__name__)

MAX_FAILURE_RATE = 0.2


def worker_count() -> int:
    """Worker threads, capped by the MDFA_THREADS environment variable."""
    env = os.environ.get("MDFA_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            log.warning("ignoring non-integer MDFA_THREADS=%r", env)
    return os.cpu_count() or 1


def _pmap(fn, items, threads=None):
    """Ordered parallel map; results come back in input order."""
    items = list(items)
    n = threads or worker_count()
    if n <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=n) as ex:
        return list(ex.map(fn, items))


def derive_seeds(seed: int, n: int) -> list[int]:
    ss = np.random.SeedSequence(int(seed))
    return [int(child.generate_state(1, dtype=np.uint64)[0]) for child in ss.spawn(n)]


# ---------------------------------------------------------------------------
# cross-validation


def _fold_ids(m: int, k: int, seed: int) -> np.ndarray:
    perm = np.random.default_rng(seed).permutation(m)
    ids = np.empty(m, dtype=int)
    ids[perm] = np.arange(m) % k
    return ids


def _has_both(v) -> bool:
    return bool(np.any(v == 1) and np.any(v == -1))


def cross_validate(train: AuditDataset, config: AuditConfig, target_y: int, target_s: int,
                   scheme: WeightScheme, propensity=None, n_folds: int = 5, threads=None):
    """Grid search over ``config.cv_grid`` for (lambda_reg, bandwidth).

    Each grid point is scored by the fold-averaged held-out surrogate risk
    plus the held-out MMD, each divided by its maximum over the grid.  Ties
    go to the larger lambda, then the larger bandwidth.
    """
    grid = list(config.cv_grid)
    if not grid:
        raise ValueError("cv_grid is empty")
    if len(grid) == 1:
        return grid[0]
    ids = _fold_ids(len(train), n_folds, int(config.seed))
    folds = []
    for k in range(n_folds):
        va_idx = np.flatnonzero(ids == k)
        if not (_has_both(train.s[va_idx]) and _has_both(train.y[va_idx])):
            log.info("skipping degenerate fold %d", k)
            continue
        try:
            tr, va = train.subset(np.flatnonzero(ids != k)), train.subset(va_idx)
        except ValueError:
            log.info("skipping degenerate fold %d", k)
            continue
        folds.append((tr, va))
    if not folds:
        raise DegenerateSplitError("all cross-validation folds are degenerate")

    def score(point):
        lam, bw = point
        bw_val = resolve_bandwidth(config, train.X, bw)
        risks, mmds = [], []
        for tr, va in folds:
            fmap = make_feature_map("random-fourier", train.dim, config.feature_map_dim, bw_val,
                                    seed=int(config.seed))
            Z_tr, Z_va = apply_map(fmap, tr.X), apply_map(fmap, va.X)
            u_tr = compute_weights(tr, target_s, scheme, fmap, propensity, Z=Z_tr, lambda_reg=lam)
            u_va = compute_weights(va, target_s, scheme, fmap, propensity, Z=Z_va, lambda_reg=lam)
            model = fit_certifier(tr, u_tr, reduction_labels(tr, target_y, target_s), fmap, lam,
                                  loss=config.loss, Z=Z_tr)
            lab = reduction_labels(va, target_y, target_s)
            loss, _ = _loss_and_slope(lab * model.score(Z=Z_va), config.loss)
            v = normalize_weights(u_va)
            risks.append(float(v @ loss) / len(va))
            mmds.append(mmd_hat(va, u_va, target_s, fmap, Z=Z_va))
        return float(np.mean(risks)), float(np.mean(mmds)), bw_val

    scores = _pmap(score, grid, threads)
    risk = np.array([sc[0] for sc in scores])
    mmd = np.array([sc[1] for sc in scores])
    total = risk / (risk.max() or 1.0) + mmd / (mmd.max() or 1.0)
    order = sorted(range(len(grid)), key=lambda i: (total[i], -grid[i][0], -scores[i][2]))
    best = order[0]
    log.info("cross-validation picked lambda=%s bandwidth=%s", *grid[best])
    return grid[best]


# ---------------------------------------------------------------------------
# repeated audits


@dataclass
class AuditRunResult:
    mode: str
    target_y: int
    target_s: int
    config: AuditConfig
    per_split: list
    aggregates: dict
    profile: dict | None = None
    trace: list | None = None
    failures: list = field(default_factory=list)

    def to_dict(self) -> dict:
        out = {
            "config_echo": self.config.to_dict(),
            "mode": self.mode,
            "target_y": self.target_y,
            "target_s": self.target_s,
            "n_splits": len(self.per_split) + len(self.failures),
            "per_split": self.per_split,
            "aggregates": self.aggregates,
            "profile": self.profile,
            "failures": self.failures,
        }
        if self.trace is not None:
            out["trace"] = self.trace
        return out


def mean_std(values) -> tuple[float, float, bool]:
    """Mean and n-1 standard deviation of the finite values; the flag is
    False when the deviation is undefined (fewer than two values) and
    reported as 0."""
    v = np.asarray([x for x in values if x is not None and math.isfinite(x)], dtype=float)
    if v.size == 0:
        return float("nan"), float("nan"), False
    if v.size == 1:
        return float(v[0]), 0.0, False
    return float(v.mean()), float(v.std(ddof=1)), True


def aggregate(records: list) -> dict:
    out = {}
    for key in ("gamma", "delta_m", "dt_g", "di", "alpha"):
        col = "gamma_hat" if key == "gamma" else key
        mean, std, ok = mean_std(r[col] for r in records)
        out[f"{key}_mean"] = mean
        out[f"{key}_std"] = std
        out[f"{key}_std_defined"] = ok
    out["count"] = len(records)
    return out


def _audit_split(dataset, seed, config, target_y, target_s, scheme, mode, propensity):
    cfg = replace(config, seed=seed)
    train, test = split(dataset, 0.7, seed)
    lam, bw = cross_validate(train, cfg, target_y, target_s, scheme, propensity, threads=1)
    ctx = prepare_split(train, test, cfg, target_s, scheme, propensity, lam, bw)
    rec = {"seed": seed, "lambda_reg": lam,
           "bandwidth": bw if isinstance(bw, str) else float(bw),
           "bandwidth_value": float(ctx.fmap.bandwidth)}
    rec["di"] = disparate_treatment(test, None, None, s=target_s, outcome=1)
    extra = {}
    if mode == "certify":
        cert = certify(train, test, cfg, target_y, target_s, scheme, propensity, ctx, lam, bw)
        c = cert.model.indicator(Z=ctx.Z_test, rng=np.random.default_rng(seed))
        try:
            rec["delta_m"] = delta_from_indicator(test, ctx.u_test, c, target_y, target_s)
        except SampleDivergenceError:
            rec["delta_m"] = float("nan")
        rec["gamma_hat"], rec["alpha"] = cert.gamma_hat, cert.support_mass
        g = c == 1
    elif mode == "wva":
        rep = wva_run(train, test, cfg, target_y, target_s, scheme, propensity, ctx, lam, bw)
        rec["delta_m"], rec["alpha"] = rep.delta_m, rep.alpha
        rec["gamma_hat"] = rep.certificate.gamma_hat
        rec["reported_iteration"] = rep.reported_iteration
        rec["floor_crossed"] = rep.floor_crossed
        g = rep.subgroup_mask
        extra["trace"] = [
            {"t": e.t, "delta_hat": e.delta_hat, "alpha_hat": e.alpha_hat,
             "delta_hat_test": e.delta_hat_test, "alpha_hat_test": e.alpha_hat_test}
            for e in rep.trace
        ]
    else:
        raise ValueError(f"unknown mode {mode!r}")
    try:
        rec["dt_g"] = disparate_treatment(test, ctx.u_test, g, s=target_s, outcome=1)
    except AuditError:
        rec["dt_g"] = float("nan")
    extra["profile"] = subgroup_profile(test, g).to_dict() if g.any() else None
    return rec, extra


def repeated_audit(dataset: AuditDataset, n_splits: int, config: AuditConfig, target_y: int,
                   target_s: int, scheme: WeightScheme, mode: str = "certify", propensity=None,
                   threads=None) -> AuditRunResult:
    """Audit ``n_splits`` seeded 70/30 splits and aggregate the test metrics.

    Failed splits are recorded and excluded; more than 20% failures abort.
    """
    if n_splits < 1:
        raise ValueError("n_splits must be >= 1")
    seeds = derive_seeds(config.seed, n_splits)

    def run(seed):
        try:
            return _audit_split(dataset, seed, config, target_y, target_s, scheme, mode, propensity)
        except AuditError as exc:
            return exc

    results = _pmap(run, seeds, threads)
    records, extras, failures = [], [], []
    for seed, res in zip(seeds, results):
        if isinstance(res, Exception):
            failures.append({"seed": seed, "error": f"{type(res).__name__}: {res}"})
        else:
            records.append(res[0])
            extras.append(res[1])
    if len(failures) > MAX_FAILURE_RATE * n_splits:
        raise AuditError(f"{len(failures)} of {n_splits} splits failed; first: {failures[0]['error']}")
    agg = aggregate(records)
    # representative split: median delta_m (lower median), ties by split order
    keyed = sorted(range(len(records)),
                   key=lambda i: (not math.isfinite(records[i]["delta_m"]), records[i]["delta_m"], i))
    n_finite = sum(math.isfinite(r["delta_m"]) for r in records)
    rep = keyed[(max(n_finite, 1) - 1) // 2] if records else None
    profile = extras[rep]["profile"] if rep is not None else None
    trace = extras[rep].get("trace") if rep is not None else None
    return AuditRunResult(mode, target_y, target_s, config, records, agg, profile, trace, failures)


# ---------------------------------------------------------------------------
# weighting-scheme comparison on the synthetic benchmark


def compare_weight_schemes(mu_grid, config: AuditConfig, nu: float = 1.0 - math.exp(-2.0),
                           m: int = 5000, n_seeds: int = 10,
                           schemes=("uniform", "importance-exact", "mmd-match"),
                           threads=None) -> list[dict]:
    """Bias of the one-shot certificate strength under each weighting scheme.

    For every mu and seed a synthetic dataset is generated and certified for
    (y=+1, s=+1); bias = gamma_hat - true gamma of the planted region.
    """
    mu_grid = list(mu_grid)
    if not mu_grid:
        raise ValueError("mu grid is empty")
    seeds = derive_seeds(config.seed, n_seeds)
    jobs = [(mu, seed) for mu in mu_grid for seed in seeds]

    def run(job):
        mu, seed = job
        ds, truth = generate_synthetic(SyntheticSpec(m=m, mu=mu, nu=nu, seed=seed))
        true_gamma = truth.true_gamma()
        train, test = split(ds, 0.7, seed)
        cfg = replace(config, seed=seed)
        out = {}
        for kind in schemes:
            sch = WeightScheme(kind, bound_B=config.weight_bound_B)
            cert = certify(train, test, cfg, 1, 1, sch, propensity=truth.propensity)
            out[kind] = cert.gamma_hat - true_gamma
        return out

    results = _pmap(run, jobs, threads)
    rows = []
    for mu in mu_grid:
        for kind in schemes:
            biases = [r[kind] for (jm, _), r in zip(jobs, results) if jm == mu]
            mean, std, _ = mean_std(biases)
            rows.append({"mu": mu, "scheme": kind, "bias_mean": mean, "bias_std": std,
                         "n": len(biases)})
    return rows


def audit_external_predictions(dataset: AuditDataset, config: AuditConfig, target_y: int = 1,
                               target_s: int = 1, n_splits: int = 100,
                               scheme: WeightScheme | None = None, threads=None) -> AuditRunResult:
    """Worst-violation audit of a prediction column (already loaded as the
    dataset's outcome), reporting DT_G on the worst subgroup and the
    aggregate DI."""
    if not np.all(np.isin(dataset.y, (-1, 1))):
        raise AuditError("predictions must be binary")
    return repeated_audit(dataset, n_splits, config, target_y, target_s,
                          scheme or WeightScheme("mmd-match", bound_B=config.weight_bound_B),
                          mode="wva", threads=threads)


# ---------------------------------------------------------------------------
# serialization


def _clean(obj):
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, (float, np.floating)):
        obj = float(obj)
        return obj if math.isfinite(obj) else None
    return obj


def atomic_write(path, text: str) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text, encoding="utf-8")
    os.replace(tmp, path)


def dumps_json(obj) -> str:
    """Deterministic JSON: sorted keys, NaN/inf written as null."""
    return json.dumps(_clean(obj), sort_keys=True, indent=2, allow_nan=False) + "\n"


def dumps_tsv(rows: list[dict], columns: list[str]) -> str:
    lines = ["\t".join(columns)]
    for r in rows:
        cells = []
        for c in columns:
            v = r.get(c)
            if isinstance(v, (float, np.floating)):
                cells.append(repr(float(v)))
            else:
                cells.append("" if v is None else str(v))
        lines.append("\t".join(cells))
    return "\n".join(lines) + "\n"
