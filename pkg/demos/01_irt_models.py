"""Item response curves and recovering item parameters from simulated answers.

Run: python demos/01_irt_models.py
"""
import numpy as np

from mlcap.irt import DichotomousItem, GradedItem, ItemBank, category_probs_grm, fit_2pl, fit_grm, prob_correct_2pl, simulate_responses

# A dichotomous item: the curve crosses 0.5 at its difficulty and the slope
# there grows with the discrimination.
item = DichotomousItem(discrimination=1.5, difficulty=0.5)
for theta in (-2.0, 0.0, 0.5, 2.0):
    print(f"P(correct | theta={theta:+.1f}) = {prob_correct_2pl(theta, item):.3f}")

# A four-category graded item. Category probabilities are differences of
# neighbouring cumulative curves and always sum to one.
graded = GradedItem(1.0, (-1.0, 0.0, 1.0))
print("category probabilities at theta=0:", np.round(category_probs_grm(0.0, graded), 4))

# Simulate 5000 respondents on a 20-item test, then refit the bank by
# marginal maximum likelihood.
rng = np.random.default_rng(0)
truth = ItemBank("dichotomous", [DichotomousItem(float(a), float(b))
                                 for a, b in zip(rng.uniform(0.8, 2.0, 20), rng.uniform(-1.5, 1.5, 20))])
responses, _ = simulate_responses(truth, 5000, seed=1)
fit = fit_2pl(responses)
a_err = np.sqrt(np.mean((fit.discriminations - truth.discriminations) ** 2))
b_err = np.sqrt(np.mean([(f.difficulty - t.difficulty) ** 2 for f, t in zip(fit.items, truth.items)]))
print(f"2PL fit: {fit.fit_info.n_iter} EM iterations, RMSE alpha {a_err:.3f}, beta {b_err:.3f}")

# Same idea for graded items.
gtruth = ItemBank("graded", [GradedItem(float(a), tuple(np.sort(rng.uniform(-1.5, 1.5, 3)) + [0.0, 0.3, 0.6]))
                             for a in rng.uniform(0.8, 2.0, 6)], 4)
gresp, _ = simulate_responses(gtruth, 5000, seed=2)
gfit = fit_grm(gresp)
for t, f in zip(gtruth.items[:3], gfit.items[:3]):
    print(f"  alpha {t.discrimination:.2f} -> {f.discrimination:.2f}; "
          f"thresholds {np.round(t.thresholds, 2)} -> {np.round(f.thresholds, 2)}")
