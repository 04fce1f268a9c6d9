"""The adaptive loop against a toy classifier, step by step.

Run: python demos/03_cat_mlc.py
"""
import numpy as np

from mlcap.cat import CatConfig, run_cat
from mlcap.cdi import CLASS1, CLASS2, CdiRecord, orient_cdis


class GetsEasyCasesRight:
    """Correct whenever a case's oriented CDI is below ``limit``."""

    def __init__(self, limit):
        self.limit = limit

    def predict(self, x):
        return (CLASS2 if x[0] < self.limit else CLASS1), 0.5


rng = np.random.default_rng(3)
pool = orient_cdis([CdiRecord(i, CLASS2, float(v)) for i, v in enumerate(rng.normal(size=1500))])
features = {r.case_id: np.array([r.oriented_cdi]) for r in pool}

config = CatConfig(seed=0)
print(f"stopping threshold se_m = {config.se_m:.4f}")
report = run_cat(GetsEasyCasesRight(0.4), pool, features, config, dataset_size=len(pool))

print(f"start at the 25th percentile: {report.initial_target:+.3f}")
print("step  case   cdi    correct  next target  running MLC")
for row in report.trajectory:
    mlc = "" if row["running_mlc"] is None else f"{row['running_mlc']:+.3f}"
    print(f"{row['step']:>4} {row['case_id']:>5} {row['cdi']:+.3f}  {str(row['correct']):>7}  "
          f"{row['target']:+.3f}       {mlc}")
print(f"stopped ({report.stop_reason}) after {report.cases_used} cases "
      f"({100 * report.fraction_of_dataset:.2f}% of the pool): MLC = {report.mlc:+.3f}, R={report.R}, W={report.W}")
print("the targets settle near the classifier's true limit (0.4); the MLC adds ln(R/W) on top of the mean difficulty")
