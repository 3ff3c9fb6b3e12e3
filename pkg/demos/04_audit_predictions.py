# coding: utf-8

# # Auditing an external model's predictions
#
# A repair method may equalize positive rates across the whole population
# while leaving a subgroup badly treated.  Here we build such predictions by
# hand and audit them from a CSV file, the same way the command line does.

import tempfile
from pathlib import Path

import numpy as np

from mdfa import AuditConfig, audit_external_predictions, disparate_treatment
from mdfa.data import CsvSchema, load_csv

rng = np.random.default_rng(0)
m = 2000
X = rng.normal(size=(m, 2))
s = rng.choice([0, 1], m)

# On x1 > 0 group 1 gets positive predictions 5 times as often as group 0.
# On x1 <= 0 the disparity is reversed, so the population-level ratio is
# close to 1.

p = np.where(X[:, 0] > 0, np.where(s == 1, 0.75, 0.15), np.where(s == 1, 0.15, 0.75))
pred = (rng.random(m) < p).astype(int)

tmp = Path(tempfile.mkdtemp())
rows = ["f1,f2,group,label,pred"]
rows += [f"{a!r},{b!r},{g},{int(rng.random() < 0.5)},{q}" for (a, b), g, q in zip(X.tolist(), s, pred)]
(tmp / "preds.csv").write_text("\n".join(rows) + "\n")
schema = CsvSchema(["f1", "f2"], "group", "label", ["1"], ["0"], ["1"], ["0"],
                   prediction_column="pred")

ds = load_csv(tmp / "preds.csv", schema, outcome="prediction")
print("population DI:", round(disparate_treatment(ds), 3))

result = audit_external_predictions(ds, AuditConfig(seed=0, alpha_floor=0.1), n_splits=3)
agg = result.aggregates
print("worst-subgroup DT_G: %.2f (std %.2f)" % (agg["dt_g_mean"], agg["dt_g_std"]))
print("test-split DI      : %.2f" % agg["di_mean"])

# The profile of the representative split shows where the subgroup lives.

sub = result.profile["subgroup"]
for s_val in ("+1", "-1"):
    print(f"S={s_val}: mean f1 in subgroup = {sub[s_val]['f1']['mean']:+.2f}, "
          f"positive rate = {sub[s_val]['Y']['mean']:.2f}")
