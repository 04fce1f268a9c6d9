"""End-to-end orchestration: data -> IRT -> CDI -> split -> classifier -> CAT -> report.

Every stage is a plain function so the command line can run them one at a
time against the artifacts in the output directory.
"""
from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import asdict, dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from . import cat as cat_mod
from .cat import CatConfig, MlcReport, run_cat_pair
from .cdi import CLASS1, CLASS2, CdiRecord, bin_lower_edge, orient_cdis, score_cases, write_cdi_csv
from .classifier import HyperGrid, TrainConfig, TrainedModel, grid_search_train, train_network
from .dataprep import (CodingSpec, CsvSchema, SplitAssignment, Table, apply_coding, balance_classes,
                       builtin_spec, ingest_csv, label_table, random_split, resolve_cutpoints,
                       stratified_split)
from .gate import MlcCertificate, gated_accuracy
from .irt import FitConfig, ItemBank, ResponseMatrix, fit_bank
from .metrics import MetricsReport, traditional_metrics

log = logging.getLogger(__name__)

REPORT_VERSION = 1

ARTIFACTS = {
    "itembank": "itembank.json",
    "cdi": "cdi.csv",
    "split": "split.csv",
    "model": "model.json",
    "model_traditional": "model_traditional.json",
    "metrics": "metrics.json",
    "cat_class1": "cat_class1.csv",
    "cat_class2": "cat_class2.csv",
    "mlc": "mlc.json",
    "certificate": "certificate.json",
    "comparison": "comparison.json",
    "comparison_table": "comparison.txt",
    "coding": "coding_resolved.json",
    "histogram": "cdi_histogram.csv",
    "bin_accuracy": "bin_accuracy.csv",
    "coordinates": "mlc_coordinates.csv",
}


class PipelineError(Exception):
    """A stage failed; ``stage`` names it for error reporting and exit codes."""

    def __init__(self, stage: str, cause: Exception):
        self.stage = stage
        self.cause = cause
        super().__init__(f"[{stage}] {type(cause).__name__}: {cause}")


@dataclass
class RunConfig:
    data: str
    schema: dict | str
    coding_spec: dict | str
    model_kind: str | None = None
    seed: int = 0
    balance: bool = True
    classifier_features: list[str] | None = None
    grid: dict | None = None
    folds: int = 5
    train: dict = field(default_factory=dict)
    irt: dict = field(default_factory=dict)
    cat: dict = field(default_factory=dict)
    positive_class: int = CLASS2
    out_dir: str = "out"
    name: str = "run"

    def __post_init__(self):
        # validate the sub-configs eagerly so bad input fails before any work
        self.fit_config
        self.train_config
        self.cat_config
        self.hyper_grid
        if self.model_kind not in (None, "dichotomous", "graded"):
            raise ValueError(f"unknown model_kind {self.model_kind!r}")
        if self.positive_class not in (CLASS1, CLASS2):
            raise ValueError("positive_class must be 1 or 2")
        if self.folds < 2:
            raise ValueError("folds must be at least 2")

    @classmethod
    def from_dict(cls, d: dict, base_dir=None) -> "RunConfig":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        d = dict(d)
        if base_dir is not None:
            base = Path(base_dir)
            for key in ("data", "out_dir"):
                if key in d and not Path(d[key]).is_absolute():
                    d[key] = str(base / d[key])
            for key in ("schema", "coding_spec"):
                v = d.get(key)
                if isinstance(v, str) and not v.startswith("builtin:") and not Path(v).is_absolute():
                    d[key] = str(base / v)
        return cls(**d)

    @classmethod
    def load(cls, path) -> "RunConfig":
        p = Path(path)
        return cls.from_dict(json.loads(p.read_text()), base_dir=p.parent)

    def to_dict(self) -> dict:
        return asdict(self)

    @property
    def fit_config(self) -> FitConfig:
        return FitConfig.from_dict({"seed": self.seed, **self.irt})

    @property
    def train_config(self) -> TrainConfig:
        return TrainConfig.from_dict(self.train)

    @property
    def cat_config(self) -> CatConfig:
        return CatConfig.from_dict({"seed": self.seed, **self.cat})

    @property
    def hyper_grid(self) -> HyperGrid:
        if self.grid == "full":
            return HyperGrid.full()
        return HyperGrid.from_dict(self.grid) if self.grid else HyperGrid()

    def csv_schema(self) -> CsvSchema:
        s = self.schema
        if isinstance(s, str):
            if s.startswith("builtin:"):
                text = resources.files("mlcap.data").joinpath(f"schema_{s[8:]}.json").read_text()
                return CsvSchema.from_dict(json.loads(text))
            return CsvSchema.from_dict(json.loads(Path(s).read_text()))
        return CsvSchema.from_dict(s)

    def coding(self) -> CodingSpec:
        c = self.coding_spec
        if isinstance(c, str):
            return builtin_spec(c[8:]) if c.startswith("builtin:") else CodingSpec.load(c)
        return CodingSpec.from_dict(c)


@dataclass
class Prepared:
    table: Table
    spec: CodingSpec
    responses: ResponseMatrix
    X: np.ndarray
    feature_names: list[str]
    n_raw: int

    def features_by_id(self) -> dict:
        return {cid: self.X[i] for i, cid in enumerate(self.table.case_ids.tolist())}

    def row_of(self) -> dict:
        return {cid: i for i, cid in enumerate(self.table.case_ids.tolist())}


def _stage(name):
    def wrap(fn):
        def inner(*args, **kwargs):
            try:
                return fn(*args, **kwargs)
            except PipelineError:
                raise
            except Exception as exc:
                raise PipelineError(name, exc) from exc
        inner.__name__ = fn.__name__
        inner.__doc__ = fn.__doc__
        return inner
    return wrap


@_stage("data")
def prepare(cfg: RunConfig) -> Prepared:
    """Ingest, label, balance and code the data."""
    spec = cfg.coding()
    schema = cfg.csv_schema()
    table = label_table(ingest_csv(cfg.data, schema), spec)
    n_raw = len(table)
    if cfg.balance:
        table = balance_classes(table, cfg.seed)
    spec = resolve_cutpoints(table, spec)
    responses = apply_coding(table, spec)
    names = cfg.classifier_features or spec.feature_names
    if all(table.columns[n].dtype != object for n in names):
        X = table.matrix(names)
    elif cfg.classifier_features is None:
        # text-valued features: the network sees the coded responses instead
        X = responses.codes.astype(float)
    else:
        raise ValueError("classifier features must be numeric columns")
    return Prepared(table, spec, responses, X, names, n_raw)


@_stage("irt")
def fit_irt(cfg: RunConfig, prep: Prepared) -> ItemBank:
    kind = cfg.model_kind or prep.spec.model_kind
    bank = fit_bank(prep.responses, kind, cfg.fit_config)
    if not bank.fit_info.converged:
        log.warning("IRT fit did not converge in %d iterations", bank.fit_info.n_iter)
    return bank


@_stage("cdi")
def score(prep: Prepared, bank: ItemBank) -> list[CdiRecord]:
    return orient_cdis(score_cases(prep.responses, bank))


@_stage("split")
def split(cfg: RunConfig, records: list[CdiRecord]) -> SplitAssignment:
    return stratified_split(records, cfg.seed + 1)


def traditional_indices(cfg: RunConfig, prep: Prepared) -> tuple[np.ndarray, np.ndarray]:
    return random_split(len(prep.table), cfg.seed + 2)


@_stage("train")
def train(cfg: RunConfig, prep: Prepared, assignment: SplitAssignment) -> tuple[TrainedModel, TrainedModel]:
    """Grid-search on a random 70% split, then refit the chosen cell on the CDI-stratified 70%."""
    labels = prep.responses.class_labels
    tr, _ = traditional_indices(cfg, prep)
    trad = grid_search_train(prep.X[tr], labels[tr], cfg.hyper_grid, cfg.folds, cfg.seed,
                             cfg.train_config)
    trad.feature_names = prep.feature_names
    rows = prep.row_of()
    strat = np.array(sorted(rows[c] for c in assignment.train_ids))
    model = train_network(prep.X[strat], labels[strat], trad.activation, trad.learning_rate,
                          trad.hidden_units, seed=cfg.seed, config=cfg.train_config)
    model.feature_names = prep.feature_names
    return trad, model


@_stage("evaluate")
def evaluate(cfg: RunConfig, prep: Prepared, trad: TrainedModel) -> MetricsReport:
    _, te = traditional_indices(cfg, prep)
    return traditional_metrics(trad, prep.X[te], prep.responses.class_labels[te], cfg.positive_class)


@_stage("cat")
def adaptive(cfg: RunConfig, prep: Prepared, model: TrainedModel, records: list[CdiRecord],
             assignment: SplitAssignment) -> tuple[dict[int, MlcReport], MlcCertificate]:
    reports = run_cat_pair(model, records, prep.features_by_id(), cfg.cat_config,
                           dataset_size=len(prep.table), ids=assignment.test_ids)
    cert = MlcCertificate.from_reports(cfg.name, reports, cfg.cat_config.reliability,
                                       {"seed": cfg.seed, "hidden_units": model.hidden_units,
                                        "activation": model.activation,
                                        "learning_rate": model.learning_rate})
    return reports, cert


def per_bin_accuracy(records, predicted: dict, width: float = 0.25) -> list[dict]:
    """Classification accuracy per (class, oriented-CDI bin)."""
    cells: dict[tuple, list[int]] = {}
    for r in records:
        key = (r.class_label, math.floor(r.oriented_cdi / width))
        cells.setdefault(key, []).append(int(predicted[r.case_id] == r.class_label))
    return [{"class_label": c, "bin_lower": k * width, "n": len(v), "accuracy": float(np.mean(v))}
            for (c, k), v in sorted(cells.items())]


def monotonicity_violations(rows: list[dict], min_cases: int = 20) -> list[tuple]:
    """Adjacent bin pairs (both with ``min_cases`` or more) where accuracy rises with difficulty."""
    bad = []
    for cls in (CLASS1, CLASS2):
        big = [r for r in rows if r["class_label"] == cls and r["n"] >= min_cases]
        for a, b in zip(big, big[1:]):
            if b["accuracy"] > a["accuracy"]:
                bad.append((cls, a["bin_lower"], b["bin_lower"], a["accuracy"], b["accuracy"]))
    return bad


def cdi_histogram(records, width: float = 0.25) -> list[dict]:
    rows = []
    for scale, attr in (("raw", "raw_cdi"), ("oriented", "oriented_cdi")):
        counts: dict[tuple, int] = {}
        for r in records:
            key = (r.class_label, math.floor(getattr(r, attr) / width))
            counts[key] = counts.get(key, 0) + 1
        rows += [{"scale": scale, "class_label": c, "bin_lower": k * width, "count": n}
                 for (c, k), n in sorted(counts.items())]
    return rows


def _write_rows(path, rows: list[dict]) -> None:
    with open(path, "w", newline="") as fh:
        if not rows:
            return
        w = csv.DictWriter(fh, fieldnames=list(rows[0]))
        w.writeheader()
        w.writerows(rows)


def emit_timing(report: dict) -> dict:
    """Wall-times of the traditional evaluation and of each CAT session."""
    trad = report["traditional"]["wall_time_seconds"]
    per_class = {k: v["wall_time_seconds"] for k, v in report["mlc"].items()}
    cat_total = sum(per_class.values())
    return {"traditional_seconds": trad, "cat_seconds": per_class, "cat_total_seconds": cat_total,
            "cat_to_traditional_ratio": cat_total / trad if trad > 0 else None,
            "method": "traditional: per-case prediction over the held-out set plus metric computation; "
                      "cat: selection, prediction and bookkeeping loop only"}


def comparison_table(report: dict) -> str:
    """Human-readable version of the traditional-vs-MLC comparison."""
    t = report["traditional"]
    total = report["dataset_size"]
    lines = [f"{'Metric':<18}{'Value':>10}{'Data required':>22}{'Comp. time (s)':>16}  Difficulty adjusted"]
    n_trad = t["n_cases"]
    for key in ("accuracy", "precision", "recall", "f1", "auc"):
        v = t[key]
        val = "n/a" if v is None else f"{v:.3f}"
        label = "AUC" if key == "auc" else key.capitalize()
        used = f"{100 * n_trad / total:.2f}% ({n_trad})"
        lines.append(f"{label:<18}{val:>10}{used:>22}{t['wall_time_seconds']:>16.4f}  No")
    for cls, name in (("1", "MLC (class 1)"), ("2", "MLC (class 2)")):
        m = report["mlc"][cls]
        val = "n/a" if m["mlc"] is None else f"{m['mlc']:.3f}"
        used = f"{100 * m['fraction_of_dataset']:.2f}% ({m['cases_used']})"
        lines.append(f"{name:<18}{val:>10}{used:>22}{m['wall_time_seconds']:>16.4f}  Yes")
    return "\n".join(lines) + "\n"


def _dump(path, obj) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def run_pipeline(cfg: RunConfig) -> dict:
    """Run every stage and write all artifacts under ``cfg.out_dir``; returns the comparison report."""
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    prep = prepare(cfg)
    prep.spec.save(out / ARTIFACTS["coding"])

    bank = fit_irt(cfg, prep)
    bank.save(out / ARTIFACTS["itembank"])
    records = score(prep, bank)
    write_cdi_csv(records, out / ARTIFACTS["cdi"])
    assignment = split(cfg, records)
    assignment.write_csv(out / ARTIFACTS["split"], records)

    trad, model = train(cfg, prep, assignment)
    trad.save(out / ARTIFACTS["model_traditional"])
    model.save(out / ARTIFACTS["model"])
    metrics = evaluate(cfg, prep, trad)
    _dump(out / ARTIFACTS["metrics"], metrics.to_dict())

    reports, cert = adaptive(cfg, prep, model, records, assignment)
    reports[CLASS1].write_trajectory_csv(out / ARTIFACTS["cat_class1"])
    reports[CLASS2].write_trajectory_csv(out / ARTIFACTS["cat_class2"])
    cat_mod.save_reports(reports, out / ARTIFACTS["mlc"])
    cert.save(out / ARTIFACTS["certificate"])

    pred, _ = model.predict_batch(prep.X)
    predicted = dict(zip(prep.table.case_ids.tolist(), pred.tolist()))
    test_ids = set(assignment.test_ids)
    test_recs = [r for r in records if r.case_id in test_ids]
    gated = gated_accuracy([r.raw_cdi for r in test_recs], [r.class_label for r in test_recs],
                           [predicted[r.case_id] for r in test_recs], cert)
    bins = per_bin_accuracy(records, predicted)
    _write_rows(out / ARTIFACTS["bin_accuracy"], bins)
    _write_rows(out / ARTIFACTS["histogram"], cdi_histogram(records))
    _write_rows(out / ARTIFACTS["coordinates"],
                [{"run": cfg.name, "mlc_class1": cert.mlc_class1, "mlc_class2": cert.mlc_class2}])

    report = {
        "format": "mlcap.comparison",
        "version": REPORT_VERSION,
        "config": cfg.to_dict(),
        "dataset_size": len(prep.table),
        "raw_dataset_size": prep.n_raw,
        "class_counts": {str(c): int(np.sum(prep.responses.class_labels == c)) for c in (CLASS1, CLASS2)},
        "itembank": {"model_kind": bank.model_kind, "converged": bank.fit_info.converged,
                     "n_iter": bank.fit_info.n_iter, "loglik": bank.fit_info.loglik},
        "hyperparameters": {"activation": trad.activation, "learning_rate": trad.learning_rate,
                            "hidden_units": trad.hidden_units},
        "traditional": metrics.to_dict(),
        "mlc": {str(k): {kk: vv for kk, vv in v.to_dict().items() if kk != "trajectory"}
                for k, v in reports.items()},
        "gated_accuracy": {str(k): v for k, v in gated.items()},
        "monotonicity_violations": [list(v) for v in monotonicity_violations(bins)],
    }
    report["timing"] = emit_timing(report)
    _dump(out / ARTIFACTS["comparison"], report)
    (out / ARTIFACTS["comparison_table"]).write_text(comparison_table(report))
    return report


TIMING_KEYS = ("wall_time_seconds", "timing")


def strip_timing(obj):
    """Copy of a report with every wall-time field removed (for determinism checks)."""
    if isinstance(obj, dict):
        return {k: strip_timing(v) for k, v in obj.items() if k not in TIMING_KEYS}
    if isinstance(obj, list):
        return [strip_timing(v) for v in obj]
    return obj
