"""Case Difficulty Index scoring: per-case maximum likelihood, orientation, binning."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

import numpy as np
from scipy.special import expit

from .irt import ItemBank, ResponseMatrix

CLASS1 = 1
CLASS2 = 2

THETA_BOUND = 4.0
BIN_WIDTH = 0.25


class OrientationError(ValueError):
    pass


@dataclass(frozen=True)
class CdiRecord:
    case_id: object
    class_label: int
    raw_cdi: float
    oriented_cdi: float | None = None
    converged: bool = True
    clamped: bool = False

    @property
    def is_oriented(self) -> bool:
        return self.oriented_cdi is not None


@dataclass
class CdiBin:
    lower_edge: float
    upper_edge: float
    member_ids: list = field(default_factory=list)


def _response_bounds(codes: Sequence[int], bank: ItemBank):
    """Per-item (alpha, lower threshold, upper threshold) bracketing the observed category.

    The probability of category k is sig(a(t - b_k)) - sig(a(t - b_{k+1})),
    with b_0 = -inf and b_{m+1} = +inf.
    """
    codes = np.asarray(codes)
    if codes.ndim != 1 or codes.size != len(bank):
        raise ValueError(f"response vector has {codes.size} entries, bank has {len(bank)} items")
    a = bank.discriminations
    b_lo = np.empty(len(bank))
    b_hi = np.empty(len(bank))
    for i, item in enumerate(bank.items):
        k = int(codes[i])
        cmap = getattr(item, "category_map", None)
        n_raw = len(cmap) if cmap is not None else len(item.thresholds) + 1
        if not 0 <= k < n_raw:
            raise ValueError(f"response {k} out of range for item {i}")
        if cmap is not None:
            k = cmap[k]
        th = item.thresholds
        b_lo[i] = th[k - 1] if k >= 1 else -np.inf
        b_hi[i] = th[k] if k < len(th) else np.inf
    # log(1 - exp(z_hi - z_lo)) does not depend on theta
    with np.errstate(invalid="ignore", over="ignore"):
        gap = a * (b_lo - b_hi)
        const = np.where(np.isfinite(gap), np.log(-np.expm1(np.where(np.isfinite(gap), gap, -1.0))), 0.0)
    return a, b_lo, b_hi, float(const.sum())


def _derivatives(theta: float, a, b_lo, b_hi):
    z_lo = a * (theta - b_lo)
    z_hi = a * (theta - b_hi)
    s_lo = expit(z_lo)
    s_hi = expit(z_hi)
    g = float(np.sum(a * (1.0 - s_lo) - a * s_hi))
    h = float(-np.sum(a * a * (s_lo * (1.0 - s_lo) + s_hi * (1.0 - s_hi))))
    return g, h


def case_log_likelihood(theta: float, responses: Sequence[int], bank: ItemBank) -> float:
    """Log-likelihood of one case's response vector at ``theta``."""
    a, b_lo, b_hi, const = _response_bounds(responses, bank)
    z_lo = a * (theta - b_lo)
    z_hi = a * (theta - b_hi)
    return float(np.sum(-np.logaddexp(0.0, -z_lo) - np.logaddexp(0.0, z_hi)) + const)


def log_likelihood_curve(thetas: np.ndarray, responses: Sequence[int], bank: ItemBank) -> np.ndarray:
    """Vectorised ``case_log_likelihood`` over a grid of theta values."""
    a, b_lo, b_hi, const = _response_bounds(responses, bank)
    t = np.asarray(thetas, dtype=float)[:, None]
    z_lo = a * (t - b_lo)
    z_hi = a * (t - b_hi)
    return np.sum(-np.logaddexp(0.0, -z_lo) - np.logaddexp(0.0, z_hi), axis=1) + const


def estimate_cdi(responses: Sequence[int], bank: ItemBank, case_id=None, class_label: int = CLASS2,
                 bound: float = THETA_BOUND, max_iter: int = 100, tol: float = 1e-10) -> CdiRecord:
    """Maximum-likelihood CDI for one case.

    The graded and 2PL log-likelihoods are concave in theta, so the maximiser
    is the root of the score function. Newton steps are taken inside a
    shrinking bracket and replaced by bisection whenever they would leave it.
    If the score keeps its sign across [-bound, bound] the estimate is
    clamped to the bound it points at.
    """
    a, b_lo, b_hi, _ = _response_bounds(responses, bank)
    g_hi, _ = _derivatives(bound, a, b_lo, b_hi)
    if g_hi >= 0:
        return CdiRecord(case_id, class_label, bound, converged=True, clamped=True)
    g_lo, _ = _derivatives(-bound, a, b_lo, b_hi)
    if g_lo <= 0:
        return CdiRecord(case_id, class_label, -bound, converged=True, clamped=True)

    lo, hi = -bound, bound
    theta = 0.0
    converged = False
    for _ in range(max_iter):
        g, h = _derivatives(theta, a, b_lo, b_hi)
        if g > 0:
            lo = theta
        else:
            hi = theta
        if abs(g) < tol:
            converged = True
            break
        new = theta - g / h if h < 0 else math.nan
        if not lo < new < hi:
            new = 0.5 * (lo + hi)
        if abs(new - theta) < tol:
            theta = new
            converged = True
            break
        theta = new
    return CdiRecord(case_id, class_label, float(theta), converged=converged, clamped=False)


def score_cases(responses: ResponseMatrix, bank: ItemBank) -> list[CdiRecord]:
    ids = responses.case_ids.tolist()
    labels = responses.class_labels.tolist() if responses.class_labels is not None else [CLASS2] * len(ids)
    return [estimate_cdi(responses.codes[n], bank, ids[n], int(labels[n])) for n in range(len(ids))]


def orient_cdis(records: Iterable[CdiRecord]) -> list[CdiRecord]:
    """Flip the sign of class-1 CDIs so both classes share one difficulty direction."""
    out = []
    for r in records:
        if r.is_oriented:
            raise OrientationError(f"case {r.case_id!r} is already oriented")
        if r.class_label == CLASS1:
            out.append(replace(r, oriented_cdi=-r.raw_cdi))
        elif r.class_label == CLASS2:
            out.append(replace(r, oriented_cdi=r.raw_cdi))
        else:
            raise ValueError(f"case {r.case_id!r} has unknown class label {r.class_label!r}")
    return out


def bin_lower_edge(value: float, width: float = BIN_WIDTH) -> float:
    """Lower edge of the half-open bin [k*w, (k+1)*w) containing ``value``."""
    return math.floor(value / width) * width


def bin_cdis(records: Iterable[CdiRecord], width: float = BIN_WIDTH) -> list[CdiBin]:
    """Group oriented CDIs into 0.25-wide bins anchored at zero, sorted by edge."""
    bins: dict[int, CdiBin] = {}
    for r in records:
        if not r.is_oriented:
            raise OrientationError(f"case {r.case_id!r} has no oriented CDI")
        k = math.floor(r.oriented_cdi / width)
        if k not in bins:
            bins[k] = CdiBin(k * width, (k + 1) * width)
        bins[k].member_ids.append(r.case_id)
    return [bins[k] for k in sorted(bins)]


CDI_FIELDS = ["case_id", "class_label", "raw_cdi", "oriented_cdi", "bin_lower", "converged", "clamped"]


def write_cdi_csv(records: Sequence[CdiRecord], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CDI_FIELDS)
        for r in records:
            oriented = "" if r.oriented_cdi is None else repr(r.oriented_cdi)
            lower = "" if r.oriented_cdi is None else repr(bin_lower_edge(r.oriented_cdi))
            w.writerow([r.case_id, r.class_label, repr(r.raw_cdi), oriented, lower,
                        int(r.converged), int(r.clamped)])


def read_cdi_csv(path) -> list[CdiRecord]:
    out = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = set(CDI_FIELDS) - set(reader.fieldnames or [])
        if missing:
            raise ValueError(f"{path}: missing CDI columns {sorted(missing)}")
        for row in reader:
            cid = row["case_id"]
            out.append(CdiRecord(int(cid) if cid.lstrip("-").isdigit() else cid,
                                 int(row["class_label"]), float(row["raw_cdi"]),
                                 float(row["oriented_cdi"]) if row["oriented_cdi"] else None,
                                 bool(int(row["converged"])), bool(int(row["clamped"]))))
    return out
