import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mdfa.audit import (
    aggregate,
    audit_external_predictions,
    compare_weight_schemes,
    cross_validate,
    derive_seeds,
    dumps_json,
    dumps_tsv,
    mean_std,
    repeated_audit,
)
from mdfa.core import AuditConfig, AuditDataset, AuditError, disparate_treatment
from mdfa.data import SyntheticSpec, generate_synthetic, split
from mdfa.rebalance import WeightScheme


def planted_predictions(m, seed, p_hi=0.9, p_lo=0.18):
    """Predictions with positive-rate ratio p_hi/p_lo on the half-plane x1 > 0
    and no disparity elsewhere."""
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(m, 2))
    s = rng.choice([-1, 1], m)
    g = X[:, 0] > 0
    p = np.where(g, np.where(s == 1, p_hi, p_lo), 0.5)
    return AuditDataset(X, s, np.where(rng.random(m) < p, 1, -1)), g


class TestCrossValidate:
    def test_single_point(self):
        ds, _ = generate_synthetic(SyntheticSpec(m=300, seed=0))
        cfg = AuditConfig(cv_grid=[(0.5, 2.0)])
        assert cross_validate(ds, cfg, 1, 1, WeightScheme("uw")) == (0.5, 2.0)

    def test_separable_beats_constant(self):
        # the reduction label s*y equals sign(x1): separable at small lambda,
        # a constant model at huge lambda
        rng = np.random.default_rng(0)
        X = rng.normal(size=(400, 2))
        s = rng.choice([-1, 1], 400)
        y = s * np.where(X[:, 0] > 0, 1, -1)
        ds = AuditDataset(X, s, y)
        cfg = AuditConfig(feature_map_dim=64, cv_grid=[(1e-3, "median"), (1e4, "median")])
        assert cross_validate(ds, cfg, 1, 1, WeightScheme("uw"))[0] == 1e-3

    def test_deterministic(self):
        ds, _ = generate_synthetic(SyntheticSpec(m=1000, mu=0.2, seed=1))
        grid = [(lam, bw) for lam in (0.01, 0.1, 1.0) for bw in ("median", "2*median")]
        cfg = AuditConfig(seed=5, feature_map_dim=64, cv_grid=grid)
        a = cross_validate(ds, cfg, 1, 1, WeightScheme("mmd"))
        b = cross_validate(ds, cfg, 1, 1, WeightScheme("mmd"), threads=1)
        assert a == b and a in grid


class TestAggregation:
    def test_single_split(self):
        ds, _ = generate_synthetic(SyntheticSpec(m=600, mu=0.0, nu=0.5, seed=2))
        res = repeated_audit(ds, 1, AuditConfig(feature_map_dim=64), 1, 1, WeightScheme("uw"))
        agg, rec = res.aggregates, res.per_split[0]
        assert agg["count"] == 1
        assert agg["gamma_mean"] == rec["gamma_hat"] and agg["gamma_std"] == 0.0
        assert agg["gamma_std_defined"] is False
        d = res.to_dict()
        assert d["n_splits"] == 1 and d["mode"] == "certify"
        assert set(d) >= {"config_echo", "mode", "target_y", "target_s", "per_split",
                          "aggregates", "profile"}

    def test_di_equals_core(self):
        ds, _ = generate_synthetic(SyntheticSpec(m=800, mu=0.1, nu=0.4, seed=3))
        res = repeated_audit(ds, 2, AuditConfig(feature_map_dim=64, seed=9), 1, 1, WeightScheme("uw"))
        for rec in res.per_split:
            _, test = split(ds, 0.7, rec["seed"])
            assert rec["di"] == disparate_treatment(test)

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.floats(-1e3, 1e3, allow_nan=False), min_size=2, max_size=60))
    def test_streaming_pass_agrees(self, values):
        mean, std, ok = mean_std(values)
        # Welford's streaming recurrence as an independent check
        n, mu, m2 = 0, 0.0, 0.0
        for v in values:
            n += 1
            d = v - mu
            mu += d / n
            m2 += d * (v - mu)
        assert ok
        assert mean == pytest.approx(mu, abs=1e-12 * max(1.0, max(abs(v) for v in values)))
        assert std == pytest.approx(math.sqrt(m2 / (n - 1)),
                                    abs=1e-12 * max(1.0, max(abs(v) for v in values)))

    def test_aggregate_ignores_nan(self):
        recs = [{"gamma_hat": 0.1, "delta_m": float("nan"), "dt_g": 2.0, "di": 1.0, "alpha": 0.2},
                {"gamma_hat": 0.3, "delta_m": 1.0, "dt_g": 4.0, "di": 1.0, "alpha": 0.4}]
        agg = aggregate(recs)
        assert agg["gamma_mean"] == pytest.approx(0.2)
        assert agg["gamma_std"] == pytest.approx(math.sqrt(0.02))
        assert agg["delta_m_mean"] == 1.0 and not agg["delta_m_std_defined"]

    def test_seeds(self):
        assert derive_seeds(0, 4) == derive_seeds(0, 4)
        assert len(set(derive_seeds(0, 100))) == 100
        assert derive_seeds(0, 3) != derive_seeds(1, 3)


class TestRepeatedAudit:
    def test_fair_certify(self):
        ds, _ = generate_synthetic(SyntheticSpec(m=2000, mu=0.0, nu=0.0, seed=4))
        res = repeated_audit(ds, 20, AuditConfig(seed=4), 1, 1, WeightScheme("uw"))
        agg = res.aggregates
        assert agg["count"] == 20
        assert abs(agg["gamma_mean"]) <= 2 * agg["gamma_std"]

    def test_deterministic_and_thread_independent(self):
        ds, _ = generate_synthetic(SyntheticSpec(m=800, mu=0.2, nu=0.5, seed=5))
        cfg = AuditConfig(seed=3, feature_map_dim=64, alpha_floor=0.1)
        a = repeated_audit(ds, 3, cfg, 1, 1, WeightScheme("mmd"), mode="wva", threads=1)
        b = repeated_audit(ds, 3, cfg, 1, 1, WeightScheme("mmd"), mode="wva", threads=3)
        assert dumps_json(a.to_dict()) == dumps_json(b.to_dict())
        assert a.trace and {"t", "delta_hat", "alpha_hat"} <= set(a.trace[0])

    def test_too_many_failures(self):
        ds = AuditDataset(np.arange(12.0), np.resize([1, -1], 12), [1] * 11 + [-1])
        with pytest.raises(AuditError, match="splits failed"):
            repeated_audit(ds, 5, AuditConfig(feature_map_dim=16), 1, 1, WeightScheme("uw"))

    def test_bad_arguments(self):
        ds, _ = generate_synthetic(SyntheticSpec(m=300, seed=0))
        with pytest.raises(ValueError):
            repeated_audit(ds, 0, AuditConfig(), 1, 1, WeightScheme("uw"))


def test_compare_small():
    rows = compare_weight_schemes([0.0, 0.2], AuditConfig(feature_map_dim=64), m=1000, n_seeds=2)
    assert [(r["mu"], r["scheme"]) for r in rows] == [
        (mu, k) for mu in (0.0, 0.2) for k in ("uniform", "importance-exact", "mmd-match")]
    assert all(r["n"] == 2 and math.isfinite(r["bias_mean"]) for r in rows)
    tsv = dumps_tsv(rows, ["mu", "scheme", "bias_mean", "bias_std"])
    assert tsv.splitlines()[0] == "mu\tscheme\tbias_mean\tbias_std"
    assert len(tsv.splitlines()) == 7
    with pytest.raises(ValueError):
        compare_weight_schemes([], AuditConfig())


class TestExternalPredictions:
    @pytest.mark.slow
    def test_fair_predictions_within_null(self):
        cfg = AuditConfig(seed=0, alpha_floor=0.1)
        fair, null = [], []
        for seed in range(4):
            ds, _ = generate_synthetic(SyntheticSpec(m=2000, mu=0.0, nu=0.0, seed=seed))
            fair.append(audit_external_predictions(ds, cfg, n_splits=3).aggregates["dt_g_mean"])
            perm = ds.with_sensitive(np.random.default_rng(seed).permutation(ds.s))
            null.append(audit_external_predictions(perm, cfg, n_splits=3).aggregates["dt_g_mean"])
        assert abs(np.mean(fair) - np.mean(null)) <= 3 * np.std(null, ddof=1)

    def test_planted_ratio(self):
        ds, g = planted_predictions(2000, 0)
        res = audit_external_predictions(ds, AuditConfig(seed=0, alpha_floor=0.2), n_splits=5)
        assert 4.0 <= res.aggregates["dt_g_mean"] <= 6.0
        assert res.aggregates["di_mean"] < res.aggregates["dt_g_mean"]


def test_json_is_deterministic_and_nan_free():
    text = dumps_json({"b": float("nan"), "a": [np.float64(1.5), np.int64(2), np.bool_(True)]})
    assert json.loads(text) == {"a": [1.5, 2, True], "b": None}
    assert text.index('"a"') < text.index('"b"')
