"""Per-class computer adaptive testing of a classifier and the MLC summary.

Cases play the role of test items: the loop starts near the 25th percentile
of a class's oriented CDIs, moves the target difficulty up after a correct
classification and down after a miss (step 2/2**L plus Gaussian jitter), and
stops once recent targets settle below the standard error of measurement.
"""
from __future__ import annotations

import csv
import json
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np

from .cdi import CLASS1, CLASS2, CdiRecord

SE_THRESHOLD = "se_threshold"
POOL_EXHAUSTED = "pool_exhausted_refusal"
MAX_ITERATIONS = "max_iterations"


class CatError(Exception):
    pass


class PoolExhaustedError(CatError):
    pass


@dataclass
class CatConfig:
    reliability: float = 0.98
    sigma: float = 1.0
    jitter_sd: float = 0.1
    min_cases_for_mlc: int = 5
    stop_window: int = 5
    seed: int = 0
    max_steps: int = 1000
    step_l_offset: int = 0

    def __post_init__(self):
        if not 0.0 < self.reliability < 1.0:
            raise ValueError("reliability must lie in (0, 1)")
        if self.sigma <= 0:
            raise ValueError("sigma must be positive")
        if self.jitter_sd < 0 or self.jitter_sd >= self.se_m:
            raise ValueError(f"jitter_sd must be in [0, se_m={self.se_m:.4f})")
        if self.stop_window < 2:
            raise ValueError("stop_window must be at least 2")

    @property
    def se_m(self) -> float:
        """Standard error of measurement, sigma * sqrt(1 - r)."""
        return self.sigma * math.sqrt(1.0 - self.reliability)

    @classmethod
    def from_dict(cls, d: dict | None) -> "CatConfig":
        return cls(**(d or {}))

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class CatSession:
    class_under_test: int
    case_ids: list
    cdis: np.ndarray
    target_cdi: float
    administered: list[tuple] = field(default_factory=list)
    L: int = 0
    H: float = 0.0
    R: int = 0
    W: int = 0
    targets: list[float] = field(default_factory=list)
    trajectory: list[dict] = field(default_factory=list)
    used: np.ndarray | None = None

    def __post_init__(self):
        if self.used is None:
            self.used = np.zeros(len(self.case_ids), dtype=bool)
        if not self.targets:
            self.targets = [self.target_cdi]

    @property
    def remaining(self) -> int:
        return int((~self.used).sum())

    def record(self, case_id, correct: bool) -> None:
        """Count one administered case towards L, H, R and W."""
        pos = self.case_ids.index(case_id)
        if self.used[pos]:
            raise CatError(f"case {case_id!r} administered twice")
        self.used[pos] = True
        cdi = float(self.cdis[pos])
        self.administered.append((case_id, cdi, bool(correct)))
        self.L += 1
        self.H += cdi
        if correct:
            self.R += 1
        else:
            self.W += 1


def initialize(pool: Sequence[CdiRecord], config: CatConfig | None = None) -> CatSession:
    """Start a session at the 25th percentile (linear interpolation) of the pool's oriented CDIs."""
    if not pool:
        raise CatError("empty pool")
    classes = {r.class_label for r in pool}
    if len(classes) != 1:
        raise CatError(f"pool mixes classes {sorted(classes)}")
    if any(not r.is_oriented for r in pool):
        raise CatError("pool CDIs must be oriented")
    ids = [r.case_id for r in pool]
    if len(set(ids)) != len(ids):
        raise CatError("duplicate case ids in pool")
    cdis = np.array([r.oriented_cdi for r in pool], dtype=float)
    target = float(np.percentile(cdis, 25))
    return CatSession(classes.pop(), ids, cdis, target)


def select_next(session: CatSession) -> object:
    """Unadministered case nearest the current target; ties go to the lower case id."""
    free = np.flatnonzero(~session.used)
    if free.size == 0:
        raise PoolExhaustedError("every case in the pool has been administered")
    dist = np.abs(session.cdis[free] - session.target_cdi)
    near = free[dist <= dist.min() + 1e-12]
    return min(session.case_ids[i] for i in near)


def step_size(L: int, offset: int = 0) -> float:
    return 2.0 / 2.0 ** (L + offset)


def update_target(session: CatSession, correct: bool, rng: np.random.Generator,
                  config: CatConfig | None = None) -> float:
    """Move the target up after a correct classification, down after a miss."""
    cfg = config or CatConfig()
    if session.L < 1:
        raise CatError("update_target needs at least one administered case")
    g = float(rng.normal(0.0, cfg.jitter_sd)) if cfg.jitter_sd > 0 else 0.0
    step = step_size(session.L, cfg.step_l_offset)
    session.target_cdi = session.target_cdi + (step if correct else -step) + g
    session.targets.append(session.target_cdi)
    return session.target_cdi


def window_sd(session: CatSession, window: int) -> float:
    recent = session.targets[-window:]
    if len(recent) < 2:
        return math.inf
    return float(np.std(recent, ddof=1))


def should_stop(session: CatSession, config: CatConfig | None = None) -> bool:
    """Stop once enough cases are in and the last targets vary less than SE_M."""
    cfg = config or CatConfig()
    if session.L >= cfg.max_steps:
        return True
    if session.L < cfg.min_cases_for_mlc:
        return False
    return window_sd(session, cfg.stop_window) < cfg.se_m


def mlc_value(H: float, L: int, R: int, W: int) -> float:
    """H/L + ln(R/W), with half-count corrections when R or W is zero."""
    if L <= 0 or R + W != L:
        raise ValueError("inconsistent counts")
    if R == 0:
        return H / L + math.log((R + 0.5) / (W - 0.5))
    if W == 0:
        return H / L + math.log((R - 0.5) / (W + 0.5))
    return H / L + math.log(R / W)


def compute_mlc(session: CatSession, min_cases: int = 5) -> float:
    if session.L < min_cases:
        raise CatError(f"MLC needs at least {min_cases} cases, have {session.L}")
    return mlc_value(session.H, session.L, session.R, session.W)


@dataclass
class MlcReport:
    class_label: int
    mlc: float | None
    cases_used: int
    fraction_of_dataset: float | None
    wall_time_seconds: float
    initial_target: float
    stop_reason: str
    R: int
    W: int
    H: float
    trajectory: list[dict] = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "MlcReport":
        return cls(**d)

    def write_trajectory_csv(self, path) -> None:
        cols = ["step", "case_id", "cdi", "correct", "target", "running_mlc"]
        with open(path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=cols)
            w.writeheader()
            for row in self.trajectory:
                out = dict(row)
                out["correct"] = int(out["correct"])
                out["cdi"] = repr(out["cdi"])
                out["target"] = repr(out["target"])
                out["running_mlc"] = "" if out["running_mlc"] is None else repr(out["running_mlc"])
                w.writerow(out)


def read_trajectory_csv(path) -> list[dict]:
    rows = []
    with open(path, newline="") as fh:
        for r in csv.DictReader(fh):
            cid = r["case_id"]
            rows.append({"step": int(r["step"]),
                         "case_id": int(cid) if cid.lstrip("-").isdigit() else cid,
                         "cdi": float(r["cdi"]), "correct": bool(int(r["correct"])),
                         "target": float(r["target"]),
                         "running_mlc": float(r["running_mlc"]) if r["running_mlc"] else None})
    return rows


def run_cat(model, pool: Sequence[CdiRecord], features: Mapping | Callable,
            config: CatConfig | None = None, dataset_size: int | None = None,
            rng: np.random.Generator | None = None) -> MlcReport:
    """Administer one class's pool to ``model`` until the stopping rule fires.

    ``model`` needs a ``predict(x) -> (class, score)`` method; ``features``
    maps a case id to its feature vector (a mapping or a callable). A case
    counts as correct when the predicted class equals the pool's class.
    """
    cfg = config or CatConfig()
    lookup = features if callable(features) else features.__getitem__
    rng = rng if rng is not None else np.random.default_rng(cfg.seed)

    t0 = time.perf_counter()
    session = initialize(pool, cfg)
    initial = session.target_cdi
    reason = SE_THRESHOLD
    while True:
        if session.remaining == 0:
            reason = POOL_EXHAUSTED
            break
        cid = select_next(session)
        try:
            x = lookup(cid)
        except KeyError:
            raise CatError(f"no features for case {cid!r}") from None
        predicted, _ = model.predict(x)
        correct = predicted == session.class_under_test
        session.record(cid, correct)
        update_target(session, correct, rng, cfg)
        running = compute_mlc(session, cfg.min_cases_for_mlc) if session.L >= cfg.min_cases_for_mlc else None
        session.trajectory.append({"step": session.L, "case_id": cid,
                                   "cdi": session.administered[-1][1], "correct": bool(correct),
                                   "target": session.target_cdi, "running_mlc": running})
        if should_stop(session, cfg):
            reason = MAX_ITERATIONS if session.L >= cfg.max_steps else SE_THRESHOLD
            break
    elapsed = time.perf_counter() - t0

    mlc = compute_mlc(session, cfg.min_cases_for_mlc) if session.L >= cfg.min_cases_for_mlc else None
    frac = session.L / dataset_size if dataset_size else None
    return MlcReport(session.class_under_test, mlc, session.L, frac, elapsed, initial, reason,
                     session.R, session.W, session.H, session.trajectory)


def class_pool(records: Sequence[CdiRecord], class_label: int, ids=None) -> list[CdiRecord]:
    """Records of one class, optionally restricted to ``ids``, sorted by case id."""
    keep = None if ids is None else set(ids)
    pool = [r for r in records if r.class_label == class_label and (keep is None or r.case_id in keep)]
    return sorted(pool, key=lambda r: r.case_id)


def run_cat_pair(model, records: Sequence[CdiRecord], features, config: CatConfig | None = None,
                 dataset_size: int | None = None, ids=None) -> dict[int, MlcReport]:
    """Run independent sessions for both classes with separately seeded jitter streams."""
    cfg = config or CatConfig()
    seeds = np.random.SeedSequence(cfg.seed).spawn(2)
    out = {}
    for cls, ss in zip((CLASS1, CLASS2), seeds):
        pool = class_pool(records, cls, ids)
        out[cls] = run_cat(model, pool, features, cfg, dataset_size, np.random.default_rng(ss))
    return out


def save_reports(reports: Mapping[int, MlcReport], path) -> None:
    Path(path).write_text(json.dumps({"format": "mlcap.mlc", "version": 1,
                                      "classes": {str(k): v.to_dict() for k, v in reports.items()}},
                                     indent=1) + "\n")


def load_reports(path) -> dict[int, MlcReport]:
    d = json.loads(Path(path).read_text())
    return {int(k): MlcReport.from_dict(v) for k, v in d["classes"].items()}
