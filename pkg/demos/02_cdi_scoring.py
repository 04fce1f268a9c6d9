"""Scoring case difficulty and putting both classes on one difficulty scale.

Run: python demos/02_cdi_scoring.py
"""
import numpy as np

from mlcap.cdi import bin_cdis, estimate_cdi, orient_cdis, score_cases
from mlcap.dataprep import apply_coding, balance_classes, builtin_spec, label_table
from mlcap.irt import fit_grm
from mlcap.synthetic import make_pulsar_like

# Pulsar-shaped table: four integrated-profile features plus a label.
table, _ = make_pulsar_like(seed=0)
spec = builtin_spec("pulsar_fixed")
table = balance_classes(label_table(table, spec), seed=0)
print(f"balanced table: {len(table)} cases")

# Quartile coding turns each feature into a four-level "item".
responses = apply_coding(table, spec)
print("first five coded cases:\n", responses.codes[:5])

bank = fit_grm(responses)
records = orient_cdis(score_cases(responses, bank))

# A case answering every item in the top category has no finite maximum;
# it is clamped to the edge of the scale.
print("all-top pattern:", estimate_cdi([3, 3, 3, 3], bank))

raw = np.array([r.raw_cdi for r in records])
print(f"raw CDI range {raw.min():.2f} .. {raw.max():.2f}, clamped cases: {sum(r.clamped for r in records)}")

# Class 1 (pulsars) flips sign so that larger always means harder.
for cls in (1, 2):
    vals = np.array([r.oriented_cdi for r in records if r.class_label == cls])
    print(f"class {cls}: oriented CDI mean {vals.mean():+.2f}, 25th percentile {np.percentile(vals, 25):+.2f}")

bins = bin_cdis(records)
print("busiest 0.25-wide bins:")
for b in sorted(bins, key=lambda b: -len(b.member_ids))[:5]:
    print(f"  [{b.lower_edge:+.2f}, {b.upper_edge:+.2f}): {len(b.member_ids)} cases")
