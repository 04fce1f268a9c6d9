"""Deployment gate: route a prediction to the algorithm or to human review."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np

from .cdi import CLASS1, CLASS2

CERT_FORMAT = "mlcap.certificate"
ALGORITHM = "algorithm"
HUMAN_REVIEW = "human_review"


@dataclass
class MlcCertificate:
    model_id: str
    mlc_class1: float
    mlc_class2: float
    reliability: float = 0.98
    metadata: dict = field(default_factory=dict)

    def threshold(self, predicted_class: int) -> float:
        if predicted_class == CLASS1:
            return self.mlc_class1
        if predicted_class == CLASS2:
            return self.mlc_class2
        raise ValueError(f"unknown class {predicted_class!r}")

    @classmethod
    def from_reports(cls, model_id: str, reports: Mapping, reliability: float,
                     metadata: dict | None = None) -> "MlcCertificate":
        """Build a certificate from a completed pair of per-class CAT reports."""
        missing = [c for c in (CLASS1, CLASS2) if c not in reports or reports[c].mlc is None]
        if missing:
            raise ValueError(f"no completed MLC for class(es) {missing}")
        return cls(model_id, float(reports[CLASS1].mlc), float(reports[CLASS2].mlc), reliability,
                   dict(metadata or {}))

    def to_dict(self) -> dict:
        return {"format": CERT_FORMAT, "version": 1, **asdict(self)}

    @classmethod
    def from_dict(cls, d: dict) -> "MlcCertificate":
        if d.get("format") != CERT_FORMAT:
            raise ValueError("not an MLC certificate")
        return cls(d["model_id"], float(d["mlc_class1"]), float(d["mlc_class2"]),
                   float(d.get("reliability", 0.98)), d.get("metadata", {}))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")

    @classmethod
    def load(cls, path) -> "MlcCertificate":
        return cls.from_dict(json.loads(Path(path).read_text()))


@dataclass
class GateDecision:
    case_id: object
    predicted_class: int
    oriented_cdi: float
    threshold: float
    verdict: str

    def to_dict(self) -> dict:
        return asdict(self)


def gate_case(raw_cdi: float, predicted_class: int, cert: MlcCertificate, case_id=None) -> GateDecision:
    """Trust the prediction only if the case's oriented CDI is within the class MLC.

    A class-1 prediction flips the sign of the CDI first. Equality counts as
    within capability.
    """
    oriented = -raw_cdi if predicted_class == CLASS1 else raw_cdi
    thr = cert.threshold(predicted_class)
    verdict = ALGORITHM if oriented <= thr else HUMAN_REVIEW
    return GateDecision(case_id, predicted_class, float(oriented), thr, verdict)


def gated_accuracy(raw_cdis, true_classes, predicted_classes, cert: MlcCertificate) -> dict[int, float | None]:
    """Accuracy per true class over the cases the gate leaves to the algorithm."""
    raw = np.asarray(raw_cdis, dtype=float)
    y = np.asarray(true_classes)
    pred = np.asarray(predicted_classes)
    passed = np.array([gate_case(r, p, cert).verdict == ALGORITHM for r, p in zip(raw, pred)], dtype=bool)
    out: dict[int, float | None] = {}
    for cls in (CLASS1, CLASS2):
        sel = passed & (y == cls)
        out[cls] = float(np.mean(pred[sel] == cls)) if sel.any() else None
    return out
