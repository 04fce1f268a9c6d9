"""Tabular ingestion, declarative feature coding, class balancing and splitting."""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path
from typing import Sequence

import numpy as np

from .cdi import CLASS1, CLASS2, CdiRecord, bin_lower_edge
from .irt import ResponseMatrix

SPEC_VERSION = 1
TRAIN, TEST = "train", "test"


class DataError(Exception):
    """Problems with input data or coding rules."""


class MissingColumnError(DataError):
    pass


class CellParseError(DataError):
    def __init__(self, row: int, column: str, value: str):
        self.row, self.column, self.value = row, column, value
        super().__init__(f"row {row}, column {column!r}: cannot parse {value!r} as a number")


class MissingValueError(DataError):
    pass


class CodingError(DataError):
    pass


@dataclass
class CsvSchema:
    """Which columns to read and how.

    ``columns`` maps column name to ``"float"`` or ``"str"``. Files without
    a header row list every column, in file order, in ``names``.
    """

    columns: dict[str, str]
    id_column: str | None = None
    header: bool = True
    names: list[str] | None = None

    def __post_init__(self):
        bad = {k: v for k, v in self.columns.items() if v not in ("float", "str")}
        if bad:
            raise ValueError(f"column types must be 'float' or 'str': {bad}")
        if not self.header and not self.names:
            raise ValueError("headerless schema needs 'names'")

    @classmethod
    def from_dict(cls, d: dict) -> "CsvSchema":
        return cls(dict(d["columns"]), d.get("id_column"), d.get("header", True), d.get("names"))

    def to_dict(self) -> dict:
        return {"columns": self.columns, "id_column": self.id_column, "header": self.header,
                "names": self.names}


@dataclass
class Table:
    columns: dict[str, np.ndarray]
    case_ids: np.ndarray
    labels: np.ndarray | None = None
    missing: dict[str, int] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.case_ids)

    def take(self, idx) -> "Table":
        idx = np.asarray(idx)
        return Table({k: v[idx] for k, v in self.columns.items()}, self.case_ids[idx],
                     None if self.labels is None else self.labels[idx], dict(self.missing))

    def matrix(self, names: Sequence[str]) -> np.ndarray:
        return np.column_stack([self.columns[n].astype(float) for n in names])


def ingest_csv(path, schema: CsvSchema, allow_missing: bool = False) -> Table:
    """Read the schema's columns from a CSV file, keyed by header name.

    Empty cells are counted per column; unless ``allow_missing`` is set they
    raise :class:`MissingValueError` (no imputation is attempted).
    """
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        if schema.header:
            try:
                header = [h.strip() for h in next(reader)]
            except StopIteration:
                raise MissingColumnError(f"{path}: empty file, no header row") from None
        else:
            header = list(schema.names)
        wanted = list(schema.columns) + ([schema.id_column] if schema.id_column else [])
        absent = [c for c in wanted if c not in header]
        if absent:
            raise MissingColumnError(f"{path}: missing column(s) {absent}; header is {header}")
        pos = {c: header.index(c) for c in wanted}
        raw: dict[str, list] = {c: [] for c in wanted}
        for row in reader:
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) < len(header):
                row = row + [""] * (len(header) - len(row))
            for c in wanted:
                raw[c].append(row[pos[c]].strip())

    n = len(raw[wanted[0]]) if wanted else 0
    columns: dict[str, np.ndarray] = {}
    missing: dict[str, int] = {}
    for c, kind in schema.columns.items():
        cells = raw[c]
        missing[c] = sum(1 for v in cells if v == "")
        if kind == "float":
            arr = np.empty(n)
            for r, v in enumerate(cells):
                if v == "":
                    arr[r] = np.nan
                    continue
                try:
                    arr[r] = float(v)
                except ValueError:
                    raise CellParseError(r + 1, c, v) from None
        else:
            arr = np.array(cells, dtype=object)
        columns[c] = arr
    if not allow_missing and any(missing.values()):
        raise MissingValueError(f"{path}: missing cells {({k: v for k, v in missing.items() if v})}")
    ids = np.array(raw[schema.id_column], dtype=object) if schema.id_column else np.arange(n)
    return Table(columns, ids, None, missing)


RULES = ("range", "category", "threshold", "quartile")
DIRECTIONS = {">": np.greater, ">=": np.greater_equal, "<": np.less, "<=": np.less_equal}


@dataclass
class FeatureRule:
    name: str
    rule: str
    normal_low: float | None = None
    normal_high: float | None = None
    mapping: dict | None = None
    cut: float | None = None
    direction: str = ">"
    cutpoints: list[float] | str | None = None
    negate: bool = False

    def __post_init__(self):
        if self.rule not in RULES:
            raise CodingError(f"{self.name}: unknown rule {self.rule!r}")
        if self.rule == "range" and (self.normal_low is None or self.normal_high is None
                                     or self.normal_low > self.normal_high):
            raise CodingError(f"{self.name}: range rule needs normal_low <= normal_high")
        if self.rule == "category" and not self.mapping:
            raise CodingError(f"{self.name}: category rule needs a non-empty map")
        if self.rule == "threshold":
            if self.cut is None or self.direction not in DIRECTIONS:
                raise CodingError(f"{self.name}: threshold rule needs cut and direction in {list(DIRECTIONS)}")
        if self.rule == "quartile":
            if self.cutpoints is None:
                self.cutpoints = "auto"
            if self.cutpoints != "auto":
                cp = [float(c) for c in self.cutpoints]
                if len(cp) != 3 or np.any(np.diff(cp) <= 0):
                    raise CodingError(f"{self.name}: quartile cutpoints must be 3 strictly increasing values")
                self.cutpoints = cp

    @property
    def n_codes(self) -> int:
        if self.rule == "quartile":
            return 4
        if self.rule == "category":
            return max(int(v) for v in self.mapping.values()) + 1
        return 2

    @classmethod
    def from_dict(cls, d: dict) -> "FeatureRule":
        d = dict(d)
        if "map" in d:
            d["mapping"] = d.pop("map")
        return cls(**d)

    def to_dict(self) -> dict:
        out = {"name": self.name, "rule": self.rule}
        if self.rule == "range":
            out.update(normal_low=self.normal_low, normal_high=self.normal_high)
        elif self.rule == "category":
            out["map"] = self.mapping
        elif self.rule == "threshold":
            out.update(cut=self.cut, direction=self.direction)
        else:
            out["cutpoints"] = self.cutpoints
        if self.negate:
            out["negate"] = True
        return out


@dataclass
class LabelRule:
    column: str
    class1: list

    def assign(self, table: Table) -> np.ndarray:
        col = table.columns.get(self.column)
        if col is None:
            raise MissingColumnError(f"label column {self.column!r} not in table")
        if col.dtype == object:
            is1 = np.isin(col.astype(str), [str(v) for v in self.class1])
        else:
            is1 = np.isin(col, [float(v) for v in self.class1])
        return np.where(is1, CLASS1, CLASS2)


@dataclass
class CodingSpec:
    label: LabelRule
    features: list[FeatureRule]

    def __post_init__(self):
        names = [f.name for f in self.features]
        dupes = sorted({n for n in names if names.count(n) > 1})
        if dupes:
            raise CodingError(f"features with more than one rule: {dupes}")
        if not self.features:
            raise CodingError("coding spec has no features")

    @property
    def feature_names(self) -> list[str]:
        return [f.name for f in self.features]

    @property
    def n_categories(self) -> int:
        return max(f.n_codes for f in self.features)

    @property
    def model_kind(self) -> str:
        return "dichotomous" if self.n_categories == 2 else "graded"

    @classmethod
    def from_dict(cls, d: dict) -> "CodingSpec":
        if d.get("version", SPEC_VERSION) != SPEC_VERSION:
            raise CodingError(f"unsupported coding spec version {d.get('version')!r}")
        return cls(LabelRule(d["label"]["column"], list(d["label"]["class1"])),
                   [FeatureRule.from_dict(f) for f in d["features"]])

    def to_dict(self) -> dict:
        return {"version": SPEC_VERSION,
                "label": {"column": self.label.column, "class1": self.label.class1},
                "features": [f.to_dict() for f in self.features]}

    @classmethod
    def load(cls, path) -> "CodingSpec":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")


def builtin_spec(name: str) -> CodingSpec:
    """Bundled coding specs: ``"pulsar_fixed"`` and ``"mimic_saps2"``."""
    text = resources.files("mlcap.data").joinpath(f"coding_{name}.json").read_text()
    return CodingSpec.from_dict(json.loads(text))


def _feature_values(table: Table, rule: FeatureRule) -> np.ndarray:
    if rule.name not in table.columns:
        raise MissingColumnError(f"no column for feature {rule.name!r}")
    col = table.columns[rule.name]
    if rule.rule == "category" and col.dtype == object:
        if rule.negate:
            raise CodingError(f"{rule.name}: cannot negate a text column")
        return col
    if col.dtype == object:
        raise CodingError(f"{rule.name}: {rule.rule} rule needs a numeric column")
    return -col if rule.negate else col


def resolve_cutpoints(table: Table, spec: CodingSpec) -> CodingSpec:
    """Replace ``"auto"`` quartile cutpoints by the 25/50/75% quantiles of ``table``."""
    rules = []
    for r in spec.features:
        if r.rule == "quartile" and r.cutpoints == "auto":
            vals = _feature_values(table, r)
            cp = np.quantile(vals, [0.25, 0.5, 0.75])
            if np.any(np.diff(cp) <= 0):
                raise CodingError(f"{r.name}: quartiles are not distinct ({cp.tolist()})")
            r = replace(r, cutpoints=[float(c) for c in cp])
        rules.append(r)
    return CodingSpec(spec.label, rules)


def code_feature(values: np.ndarray, rule: FeatureRule) -> np.ndarray:
    """Code one already-negated feature column according to ``rule``."""
    if rule.rule == "range":
        return ((values < rule.normal_low) | (values > rule.normal_high)).astype(int)
    if rule.rule == "threshold":
        return DIRECTIONS[rule.direction](values, rule.cut).astype(int)
    if rule.rule == "quartile":
        if rule.cutpoints == "auto":
            raise CodingError(f"{rule.name}: resolve auto cutpoints first")
        # a value equal to a cutpoint stays in the lower quartile
        return np.searchsorted(np.asarray(rule.cutpoints), values, side="left")
    out = np.empty(len(values), dtype=int)
    if values.dtype == object:
        lookup = {str(k): int(v) for k, v in rule.mapping.items()}
        keys = [str(v) for v in values]
    else:
        lookup = {float(k): int(v) for k, v in rule.mapping.items()}
        keys = values.tolist()
    for i, k in enumerate(keys):
        if k not in lookup:
            raise CodingError(f"{rule.name}: value {k!r} (row {i + 1}) matches no category")
        out[i] = lookup[k]
    return out


def apply_coding(table: Table, spec: CodingSpec) -> ResponseMatrix:
    """Turn raw feature columns into an item response matrix."""
    spec = resolve_cutpoints(table, spec)
    codes = np.column_stack([code_feature(_feature_values(table, r), r) for r in spec.features])
    labels = table.labels if table.labels is not None else spec.label.assign(table)
    return ResponseMatrix(table.case_ids, codes, labels, spec.feature_names, spec.n_categories)


def label_table(table: Table, spec: CodingSpec) -> Table:
    return Table(table.columns, table.case_ids, spec.label.assign(table), table.missing)


def balance_classes(table: Table, seed: int) -> Table:
    """Down-sample the majority class, without replacement, to the minority size."""
    if table.labels is None:
        raise DataError("table has no class labels")
    idx1 = np.flatnonzero(table.labels == CLASS1)
    idx2 = np.flatnonzero(table.labels == CLASS2)
    if idx1.size == 0 or idx2.size == 0:
        raise DataError(f"cannot balance: class counts are {idx1.size} and {idx2.size}")
    rng = np.random.default_rng(seed)
    k = min(idx1.size, idx2.size)
    if idx1.size > k:
        idx1 = np.sort(rng.choice(idx1, size=k, replace=False))
    elif idx2.size > k:
        idx2 = np.sort(rng.choice(idx2, size=k, replace=False))
    return table.take(np.sort(np.concatenate([idx1, idx2])))


def n_train_for(n: int) -> int:
    """Train-side count for a stratum of ``n`` cases: 70% rounded half up, 1/1 for pairs."""
    if n <= 1:
        return n
    if n == 2:
        return 1
    return (7 * n + 5) // 10


@dataclass
class SplitAssignment:
    roles: dict
    bins: list[dict] = field(default_factory=list)

    @property
    def train_ids(self) -> list:
        return [k for k, v in self.roles.items() if v == TRAIN]

    @property
    def test_ids(self) -> list:
        return [k for k, v in self.roles.items() if v == TEST]

    def write_csv(self, path, records: Sequence[CdiRecord] | None = None) -> None:
        by_id = {r.case_id: r for r in records or []}
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["case_id", "class_label", "bin", "role"])
            for cid, role in self.roles.items():
                r = by_id.get(cid)
                cls = r.class_label if r else ""
                b = repr(bin_lower_edge(r.oriented_cdi)) if r and r.is_oriented else ""
                w.writerow([cid, cls, b, role])

    @classmethod
    def read_csv(cls, path) -> "SplitAssignment":
        roles = {}
        with open(path, newline="") as fh:
            for row in csv.DictReader(fh):
                cid = row["case_id"]
                roles[int(cid) if cid.lstrip("-").isdigit() else cid] = row["role"]
        return cls(roles)


def stratified_split(records: Sequence[CdiRecord], seed: int) -> SplitAssignment:
    """Random 70/30 split within each (class, 0.25-wide oriented-CDI bin) stratum."""
    if not records:
        raise DataError("no records to split")
    strata: dict[tuple, list] = {}
    for r in records:
        if not r.is_oriented:
            raise DataError(f"case {r.case_id!r} has no oriented CDI")
        key = (r.class_label, math.floor(r.oriented_cdi / 0.25))
        strata.setdefault(key, []).append(r.case_id)
    rng = np.random.default_rng(seed)
    roles: dict = {}
    book = []
    for key in sorted(strata):
        ids = strata[key]
        order = rng.permutation(len(ids))
        k = n_train_for(len(ids))
        for j, pos in enumerate(order):
            roles[ids[pos]] = TRAIN if j < k else TEST
        book.append({"class_label": key[0], "bin": key[1] * 0.25, "n_train": k, "n_test": len(ids) - k})
    ordered = {r.case_id: roles[r.case_id] for r in records}
    return SplitAssignment(ordered, book)


def random_split(n: int, seed: int, train_fraction: float = 0.7) -> tuple[np.ndarray, np.ndarray]:
    """Plain shuffled split of ``n`` row indices; returns (train, test), each sorted."""
    rng = np.random.default_rng(seed)
    order = rng.permutation(n)
    k = int(math.floor(train_fraction * n + 0.5))
    return np.sort(order[:k]), np.sort(order[k:])
