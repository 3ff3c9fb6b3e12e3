import math

import numpy as np
import pytest

from mdfa.core import AuditDataset
from mdfa.data import (
    CsvSchema,
    DegenerateSplitError,
    SchemaError,
    SyntheticSpec,
    generate_synthetic,
    load_csv,
    save_csv,
    split,
)

COMPAS = """priors_count,charge_degree,age,juv_fel_count,juv_misd_count,race,high_risk,sex
0,1,69,0,0,Other,0,Male
0,1,34,0,0,African-American,0,Male
4,1,24,0,1,African-American,1,Male
1,0,23,0,1,African-American,0,Female
2,1,43,0,0,Caucasian,1,Male
"""


def write(tmp_path, name, text):
    p = tmp_path / name
    p.write_text(text, encoding="utf-8")
    return p


class TestLoadCsv:
    def test_well_formed(self, tmp_path):
        p = write(tmp_path, "d.csv", "a,b,grp,out\n1.5,2,1,1\n0,-3.25,0,0\n7,8,1,0\n")
        schema = CsvSchema(["a", "b"], "grp", "out", ["1"], ["0"], ["1"], ["0"])
        ds = load_csv(p, schema)
        assert len(ds) == 3
        assert ds.feature_names == ["a", "b"]
        assert ds.X.tolist() == [[1.5, 2.0], [0.0, -3.25], [7.0, 8.0]]
        assert ds.s.tolist() == [1, -1, 1]
        assert ds.y.tolist() == [1, -1, -1]

    def test_missing_sensitive_column(self, tmp_path):
        p = write(tmp_path, "d.csv", "a,out\n1,1\n2,0\n")
        with pytest.raises(SchemaError, match="'grp'"):
            load_csv(p, CsvSchema(["a"], "grp", "out"))

    def test_unmapped_value_names_row_and_value(self, tmp_path):
        p = write(tmp_path, "d.csv", "a,grp,out\n1,1,1\n2,0,0\n3,7,1\n")
        schema = CsvSchema(["a"], "grp", "out", ["1"], ["0"])
        with pytest.raises(SchemaError, match=r"row 3.*'7'"):
            load_csv(p, schema)

    def test_non_numeric_feature(self, tmp_path):
        p = write(tmp_path, "d.csv", "a,grp,out\n1,1,1\nabc,0,0\n")
        with pytest.raises(SchemaError, match=r"row 2.*'abc'"):
            load_csv(p, CsvSchema(["a"], "grp", "out"))

    def test_compas_extract(self, tmp_path):
        p = write(tmp_path, "compas.csv", COMPAS)
        schema = CsvSchema.from_mapping({
            "feature_columns": "priors_count,charge_degree,age,juv_fel_count,juv_misd_count",
            "sensitive_column": "race", "sensitive_positive": "African-American",
            "outcome_column": "high_risk", "outcome_positive": "1", "outcome_negative": "0",
        })
        ds = load_csv(p, schema)
        assert ds.dim == 5
        assert ds.s.tolist() == [-1, 1, 1, 1, -1]
        assert ds.y.tolist() == [-1, -1, 1, -1, 1]

    def test_schema_file(self, tmp_path):
        cfg = write(tmp_path, "s.cfg", "# comment\nfeature_columns = a, b\nsensitive_column=g\n"
                                       "outcome_column=o\nprediction_column=p\n")
        schema = CsvSchema.from_file(cfg)
        assert schema.feature_columns == ["a", "b"]
        assert schema.prediction_column == "p"
        assert CsvSchema.from_file(write(tmp_path, "t.cfg", schema.to_text())) == schema
        with pytest.raises(SchemaError, match="unknown"):
            CsvSchema.from_mapping({"feature_columns": "a", "sensitive_column": "g",
                                    "outcome_column": "o", "colour": "red"})
        with pytest.raises(SchemaError, match="disjoint"):
            CsvSchema(["a", "g"], "g", "o")

    def test_prediction_column(self, tmp_path):
        p = write(tmp_path, "d.csv", "a,g,o,p\n1,1,1,0\n2,0,0,1\n")
        schema = CsvSchema(["a"], "g", "o", prediction_column="p")
        assert load_csv(p, schema, outcome="prediction").y.tolist() == [-1, 1]

    def test_round_trip(self, tmp_path):
        ds, _ = generate_synthetic(SyntheticSpec(m=300, mu=0.3, nu=0.5, seed=4))
        schema = save_csv(ds, tmp_path / "rt.csv")
        back = load_csv(tmp_path / "rt.csv", schema)
        assert np.array_equal(back.X, ds.X)
        assert np.array_equal(back.s, ds.s) and np.array_equal(back.y, ds.y)
        assert back.feature_names == ds.feature_names


class TestSplit:
    def _ds(self, m):
        return AuditDataset(np.arange(m, dtype=float)[:, None], np.tile([1, -1], m // 2 + 1)[:m],
                            np.tile([1, 1, -1, -1], m // 4 + 1)[:m])

    def test_sizes(self):
        tr, te = split(self._ds(10), 0.7, seed=3)
        assert (len(tr), len(te)) == (7, 3)

    def test_floor_rule(self):
        tr, te = split(self._ds(7214), 0.7, seed=0)
        assert (len(tr), len(te)) == (5049, 2165)
        assert len(tr) == math.floor(0.7 * 7214)

    def test_deterministic_and_disjoint(self):
        ds = self._ds(200)
        a = split(ds, 0.7, seed=11)
        b = split(ds, 0.7, seed=11)
        assert np.array_equal(a[0].X, b[0].X) and np.array_equal(a[1].X, b[1].X)
        tr, te = a
        assert not set(tr.X[:, 0]) & set(te.X[:, 0])
        assert len(set(tr.X[:, 0]) | set(te.X[:, 0])) == 200
        assert not np.array_equal(split(ds, 0.7, seed=12)[0].X, tr.X)

    def test_degenerate(self):
        ds = AuditDataset(np.arange(4.0)[:, None], [1, -1, 1, -1], [1, 1, 1, -1])
        with pytest.raises(DegenerateSplitError, match="degenerate split"):
            for seed in range(50):
                split(ds, 0.5, seed)


class TestSynthetic:
    def test_nu_zero(self):
        _, truth = generate_synthetic(SyntheticSpec(m=500, nu=0.0, seed=1))
        assert truth.delta_m == 0.0

    def test_nu_one_rejected(self):
        with pytest.raises(ValueError):
            SyntheticSpec(nu=1.0)
        with pytest.raises(ValueError):
            SyntheticSpec(m=50)

    def test_balanced_when_mu_zero(self):
        m = 5000
        ds, _ = generate_synthetic(SyntheticSpec(m=m, mu=0.0, seed=2))
        p = np.mean(ds.s == 1)
        assert abs(p - 0.5) <= 3 * math.sqrt(0.25 / m)

    def test_construction_invariants(self):
        ds, truth = generate_synthetic(SyntheticSpec(m=5000, mu=0.2, nu=0.6, seed=3))
        region = truth.region(ds.X)
        assert np.all(ds.y[region & (ds.s == 1)] == 1)
        outside = ds.X[:, 0] ** 2 + ds.X[:, 1] ** 2 > 1
        assert np.array_equal(ds.y[outside], truth.base_outcome(ds.X[outside]))
        # the base classifier approximates sign(x1 + x2)
        w = truth.base_theta
        assert w[0] > 0 and w[1] > 0 and abs(w[0] - w[1]) < 0.2 * w[0]

    def test_planted_ratio_at_m5000(self):
        ds, truth = generate_synthetic(SyntheticSpec.from_delta(2.0, m=5000, mu=0.0, seed=5))
        assert truth.delta_m == pytest.approx(2.0)
        g = truth.region(ds.X)
        pos = g & (ds.s == 1)
        neg = g & (ds.s == -1)
        p1 = np.mean(ds.y[pos] == 1)
        p0 = np.mean(ds.y[neg] == 1)
        # delta-method standard error of ln(p0) under the binomial law
        p_true = math.exp(-2.0)
        se = math.sqrt((1 - p_true) / (p_true * neg.sum()))
        assert p1 == 1.0
        assert abs(math.log(p1 / p0) - 2.0) <= 3 * se

    def test_large_sample_ratio(self):
        ds, truth = generate_synthetic(SyntheticSpec(m=200_000, mu=0.2, nu=0.5, seed=6))
        g = truth.region(ds.X)
        ratio = np.mean(ds.y[g & (ds.s == 1)] == 1) / np.mean(ds.y[g & (ds.s == -1)] == 1)
        assert abs(math.log(ratio) - truth.delta_m) <= 0.05
        assert truth.delta_m == pytest.approx(math.log(2.0))

    def test_deterministic(self):
        a, _ = generate_synthetic(SyntheticSpec(m=400, mu=0.1, nu=0.3, seed=9))
        b, _ = generate_synthetic(SyntheticSpec(m=400, mu=0.1, nu=0.3, seed=9))
        assert np.array_equal(a.X, b.X) and np.array_equal(a.y, b.y) and np.array_equal(a.s, b.s)

    def test_propensity_shape(self):
        _, truth = generate_synthetic(SyntheticSpec(m=200, mu=0.5, seed=1))
        p = truth.propensity(np.array([[0.0, 0.0], [1.0, 1.0], [1.0, -1.0]]))
        assert p[0] == pytest.approx(0.5)
        assert p[1] == pytest.approx(math.exp(2.0) / (1 + math.exp(2.0)))
        assert p[2] == pytest.approx(0.5)
