"""Case-difficulty benchmarking of binary classifiers.

IRT models place each case on a difficulty scale (the CDI); an adaptive
testing loop then measures the hardest difficulty a trained classifier
handles reliably for each class (the Machine Learning Capability, MLC).
"""
from .cat import CatConfig, MlcReport, compute_mlc, run_cat
from .cdi import CLASS1, CLASS2, CdiRecord, bin_cdis, estimate_cdi, orient_cdis
from .gate import MlcCertificate, gate_case
from .irt import (DichotomousItem, FitConfig, GradedItem, ItemBank, ResponseMatrix, fit_2pl, fit_grm,
                  simulate_responses)

__version__ = "0.1.0"

__all__ = [
    "CLASS1", "CLASS2", "CatConfig", "CdiRecord", "DichotomousItem", "FitConfig", "GradedItem",
    "ItemBank", "MlcCertificate", "MlcReport", "ResponseMatrix", "bin_cdis", "compute_mlc",
    "estimate_cdi", "fit_2pl", "fit_grm", "gate_case", "orient_cdis", "run_cat", "simulate_responses",
]
