"""2PL and graded-response IRT models, marginal maximum likelihood fitting.

The dichotomous 2PL model is handled internally as a graded item with a
single threshold, so both model kinds share one likelihood kernel and one
EM fitter.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.special import expit, logsumexp

BANK_FORMAT = "mlcap.itembank"
BANK_VERSION = 1

DICHOTOMOUS = "dichotomous"
GRADED = "graded"

ALPHA_MIN, ALPHA_MAX = 0.05, 10.0


class IRTError(Exception):
    """Base class for IRT fitting errors."""


class DegenerateItemError(IRTError):
    """An item carries no information (a single observed response value)."""

    def __init__(self, item: str, detail: str = ""):
        self.item = item
        msg = f"degenerate item {item!r}"
        super().__init__(f"{msg}: {detail}" if detail else msg)


class UnseenCategoryError(IRTError):
    """A graded category is unobserved and cannot be collapsed."""

    def __init__(self, item: str, category: int):
        self.item = item
        self.category = category
        super().__init__(f"item {item!r}: category {category} unobserved and has no lower neighbour")


@dataclass(frozen=True)
class DichotomousItem:
    discrimination: float
    difficulty: float
    name: str = ""

    @property
    def thresholds(self) -> np.ndarray:
        return np.array([self.difficulty], dtype=float)


@dataclass(frozen=True)
class GradedItem:
    """Graded item with a common slope and ordered between-category thresholds.

    ``category_map`` translates raw response codes to the item's own
    categories; it differs from the identity only when unobserved categories
    were collapsed during fitting.
    """

    discrimination: float
    thresholds: tuple[float, ...]
    name: str = ""
    category_map: tuple[int, ...] | None = None

    def __post_init__(self):
        th = np.asarray(self.thresholds, dtype=float)
        if th.ndim != 1 or th.size == 0:
            raise ValueError("graded item needs at least one threshold")
        if not np.all(np.isfinite(th)):
            raise ValueError("thresholds must be finite")
        if np.any(np.diff(th) <= 0):
            raise ValueError(f"thresholds must be strictly increasing, got {tuple(th)}")
        object.__setattr__(self, "thresholds", tuple(float(t) for t in th))
        if self.category_map is not None:
            object.__setattr__(self, "category_map", tuple(int(c) for c in self.category_map))

    @property
    def n_categories(self) -> int:
        return len(self.thresholds) + 1


Item = DichotomousItem | GradedItem


@dataclass
class FitInfo:
    converged: bool
    n_iter: int
    loglik_trace: list[float] = field(default_factory=list)
    remapped_items: dict[str, list[int]] = field(default_factory=dict)

    @property
    def loglik(self) -> float:
        return self.loglik_trace[-1] if self.loglik_trace else float("nan")


@dataclass
class ItemBank:
    model_kind: str
    items: list
    n_categories: int = 2
    fit_info: FitInfo | None = None

    def __post_init__(self):
        if self.model_kind not in (DICHOTOMOUS, GRADED):
            raise ValueError(f"unknown model kind {self.model_kind!r}")
        if not self.items:
            raise ValueError("item bank is empty")
        cls = DichotomousItem if self.model_kind == DICHOTOMOUS else GradedItem
        if not all(isinstance(it, cls) for it in self.items):
            raise ValueError(f"{self.model_kind} bank must hold only {cls.__name__} items")
        if self.model_kind == DICHOTOMOUS:
            self.n_categories = 2

    def __len__(self) -> int:
        return len(self.items)

    @property
    def discriminations(self) -> np.ndarray:
        return np.array([it.discrimination for it in self.items])

    @property
    def item_names(self) -> list[str]:
        return [it.name or f"item{i}" for i, it in enumerate(self.items)]

    def to_dict(self) -> dict:
        items = []
        for it in self.items:
            if isinstance(it, DichotomousItem):
                items.append({"name": it.name, "discrimination": it.discrimination,
                              "difficulty": it.difficulty})
            else:
                d = {"name": it.name, "discrimination": it.discrimination,
                     "thresholds": list(it.thresholds)}
                if it.category_map is not None:
                    d["category_map"] = list(it.category_map)
                items.append(d)
        out = {"format": BANK_FORMAT, "version": BANK_VERSION, "model_kind": self.model_kind,
               "n_categories": self.n_categories, "items": items}
        if self.fit_info is not None:
            out["fit"] = {"converged": self.fit_info.converged, "n_iter": self.fit_info.n_iter,
                          "loglik": self.fit_info.loglik,
                          "remapped_items": self.fit_info.remapped_items}
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "ItemBank":
        if d.get("format") != BANK_FORMAT:
            raise ValueError(f"not an item bank document (format={d.get('format')!r})")
        if d.get("version") != BANK_VERSION:
            raise ValueError(f"unsupported item bank version {d.get('version')!r}")
        kind = d["model_kind"]
        if kind == DICHOTOMOUS:
            items = [DichotomousItem(float(it["discrimination"]), float(it["difficulty"]),
                                     it.get("name", "")) for it in d["items"]]
        else:
            items = [GradedItem(float(it["discrimination"]), tuple(it["thresholds"]),
                                it.get("name", ""), it.get("category_map")) for it in d["items"]]
        fit = None
        if "fit" in d:
            f = d["fit"]
            fit = FitInfo(f["converged"], f["n_iter"], [f["loglik"]], f.get("remapped_items", {}))
        return cls(kind, items, int(d.get("n_categories", 2)), fit)

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")

    @classmethod
    def load(cls, path) -> "ItemBank":
        return cls.from_dict(json.loads(Path(path).read_text()))


@dataclass
class ResponseMatrix:
    case_ids: np.ndarray
    codes: np.ndarray
    class_labels: np.ndarray | None = None
    item_names: list[str] | None = None
    n_categories: int = 2

    def __post_init__(self):
        self.codes = np.asarray(self.codes)
        if self.codes.ndim != 2:
            raise ValueError("codes must be a 2-D (cases x items) array")
        if not np.issubdtype(self.codes.dtype, np.integer):
            if not np.all(np.isfinite(self.codes)) or np.any(self.codes != np.round(self.codes)):
                raise ValueError("codes must be integers with no missing entries")
            self.codes = self.codes.astype(int)
        self.case_ids = np.asarray(self.case_ids)
        if len(self.case_ids) != self.codes.shape[0]:
            raise ValueError("one case id per row required")
        if self.codes.size and (self.codes.min() < 0 or self.codes.max() >= self.n_categories):
            raise ValueError(f"codes outside 0..{self.n_categories - 1}")
        if self.class_labels is not None:
            self.class_labels = np.asarray(self.class_labels)
            if len(self.class_labels) != len(self.case_ids):
                raise ValueError("one class label per row required")
        if self.item_names is None:
            self.item_names = [f"item{i}" for i in range(self.codes.shape[1])]
        elif len(self.item_names) != self.codes.shape[1]:
            raise ValueError("one item name per column required")

    @property
    def n_cases(self) -> int:
        return self.codes.shape[0]

    @property
    def n_items(self) -> int:
        return self.codes.shape[1]


@dataclass
class FitConfig:
    quad_points: int = 61
    quad_bound: float = 6.0
    tol: float = 1e-4
    max_iter: int = 500
    mstep_iter: int = 20
    seed: int = 0

    @classmethod
    def from_dict(cls, d: dict | None) -> "FitConfig":
        d = dict(d or {})
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown fit config keys: {sorted(unknown)}")
        return cls(**d)


def _log_sigmoid(x):
    return -np.logaddexp(0.0, -x)


def prob_correct_2pl(theta, item: DichotomousItem):
    """P(X=1 | theta) under the two-parameter logistic model."""
    p = expit(item.discrimination * (np.asarray(theta, dtype=float) - item.difficulty))
    return float(p) if np.ndim(p) == 0 else p


def _log_category_probs(theta: np.ndarray, alpha: float, thresholds: np.ndarray) -> np.ndarray:
    # P_k = sig(z_k) - sig(z_{k+1}) = sig(z_k) * sig(-z_{k+1}) * (1 - exp(z_{k+1} - z_k)),
    # with z_0 = +inf and z_{m+1} = -inf; stable in the tails.
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    z = alpha * (theta[:, None] - np.asarray(thresholds)[None, :])
    n = theta.shape[0]
    upper = np.hstack([np.full((n, 1), np.inf), z])
    lower = np.hstack([z, np.full((n, 1), -np.inf)])
    with np.errstate(divide="ignore"):
        return _log_sigmoid(upper) + _log_sigmoid(-lower) + np.log(-np.expm1(lower - upper))


def category_probs_grm(theta, item: GradedItem) -> np.ndarray:
    """Category response probabilities P(x = 0..m | theta) for a graded item.

    Returns shape ``(m+1,)`` for scalar theta, ``(len(theta), m+1)`` otherwise.
    """
    th = np.asarray(item.thresholds, dtype=float)
    if th.size > 1 and np.any(np.diff(th) <= 0):
        raise ValueError("thresholds must be strictly increasing")
    p = np.exp(_log_category_probs(theta, item.discrimination, th))
    return p[0] if np.ndim(theta) == 0 else p


def cumulative_probs_grm(theta, item: GradedItem) -> np.ndarray:
    """Boundary curves P*(x >= j | theta), j = 1..m."""
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    return expit(item.discrimination * (theta[:, None] - np.asarray(item.thresholds)[None, :]))


def item_log_probs(theta, item) -> np.ndarray:
    """Log-probabilities of every raw response code, shape (len(theta), n_raw_codes)."""
    lp = _log_category_probs(theta, item.discrimination, item.thresholds)
    cmap = getattr(item, "category_map", None)
    if cmap is not None:
        lp = lp[:, list(cmap)]
    return lp


def quadrature_grid(config: FitConfig) -> tuple[np.ndarray, np.ndarray]:
    """Fixed nodes on [-bound, bound] with renormalised standard-normal weights."""
    nodes = np.linspace(-config.quad_bound, config.quad_bound, config.quad_points)
    w = np.exp(-0.5 * nodes**2)
    return nodes, w / w.sum()


def simulate_responses(bank: ItemBank, n_cases: int, seed: int) -> tuple[ResponseMatrix, np.ndarray]:
    """Draw standard-normal abilities and model-consistent responses."""
    rng = np.random.default_rng(seed)
    theta = rng.standard_normal(n_cases)
    codes = np.empty((n_cases, len(bank)), dtype=int)
    for i, item in enumerate(bank.items):
        u = rng.random(n_cases)
        if isinstance(item, DichotomousItem):
            codes[:, i] = (u < prob_correct_2pl(theta, item)).astype(int)
        else:
            # x >= j exactly when u < P*_j; the boundary curves are nested
            codes[:, i] = (u[:, None] < cumulative_probs_grm(theta, item)).sum(axis=1)
    rm = ResponseMatrix(np.arange(n_cases), codes, None, bank.item_names, bank.n_categories)
    return rm, theta


def _logit(p):
    return math.log(p / (1.0 - p))


def _mstep_item(nodes, counts, alpha, thresholds, mstep_iter):
    """Fisher-scoring maximisation of one item's expected complete-data log-likelihood.

    ``counts`` has shape (n_nodes, m+1): expected number of cases at each node
    answering each category. Each accepted step never lowers the objective.
    """
    m = thresholds.size
    n_q = counts.sum(axis=1)

    def objective(a, b):
        return float(np.sum(counts * _log_category_probs(nodes, a, b)))

    current = objective(alpha, thresholds)
    for _ in range(mstep_iter):
        lp = _log_category_probs(nodes, alpha, thresholds)
        p = np.maximum(np.exp(lp), 1e-300)
        ps = expit(alpha * (nodes[:, None] - thresholds[None, :]))
        w = ps * (1.0 - ps)
        # derivatives of boundary curves w.r.t. (alpha, b_1..b_m), padded with P*_0, P*_{m+1}
        dstar = np.zeros((nodes.size, m + 2, m + 1))
        dstar[:, 1:m + 1, 0] = w * (nodes[:, None] - thresholds[None, :])
        idx = np.arange(m)
        dstar[:, idx + 1, idx + 1] = -alpha * w
        dp = dstar[:, :-1, :] - dstar[:, 1:, :]
        grad = np.einsum("qk,qkp->p", counts / p, dp)
        info = np.einsum("q,qk,qkp,qkr->pr", n_q, 1.0 / p, dp, dp)
        try:
            step = np.linalg.solve(info + 1e-10 * np.eye(m + 1), grad)
        except np.linalg.LinAlgError:
            break
        scale = 1.0
        accepted = False
        for _ in range(30):
            a_new = float(np.clip(alpha + scale * step[0], ALPHA_MIN, ALPHA_MAX))
            b_new = thresholds + scale * step[1:]
            if m == 1 or np.all(np.diff(b_new) > 1e-6):
                val = objective(a_new, b_new)
                if val >= current:
                    accepted = True
                    break
            scale *= 0.5
        if not accepted:
            break
        change = max(abs(a_new - alpha), float(np.max(np.abs(b_new - thresholds))))
        alpha, thresholds, current = a_new, b_new, val
        if change < 1e-10:
            break
    return alpha, thresholds


def _collapse_categories(codes: np.ndarray, n_categories: int, names: Sequence[str]):
    """Per-item raw->collapsed category maps; unobserved categories join their lower neighbour."""
    maps = []
    for i in range(codes.shape[1]):
        seen = np.bincount(codes[:, i], minlength=n_categories) > 0
        if seen.sum() < 2:
            raise DegenerateItemError(names[i], "only one response category observed")
        if not seen[0]:
            raise UnseenCategoryError(names[i], 0)
        maps.append(np.cumsum(seen) - 1)
    return maps


def _check_dichotomous(codes: np.ndarray, names: Sequence[str]):
    for i in range(codes.shape[1]):
        col = codes[:, i]
        if col.min() == col.max():
            raise DegenerateItemError(names[i], f"all responses equal {int(col[0])}")


def _initial_params(codes: np.ndarray, maps) -> tuple[np.ndarray, list[np.ndarray]]:
    n = codes.shape[0]
    alphas = np.ones(codes.shape[1])
    thresholds = []
    for i, cmap in enumerate(maps):
        c = cmap[codes[:, i]]
        m = int(cmap.max())
        # P(X >= j) with a unit slope gives b_j = -logit(P(X >= j))
        props = [(c >= j).sum() / n for j in range(1, m + 1)]
        props = np.clip(props, 0.5 / n, 1 - 0.5 / n)
        b = np.array([-_logit(p) for p in props])
        for j in range(1, m):
            b[j] = max(b[j], b[j - 1] + 1e-3)
        thresholds.append(b)
    return alphas, thresholds


def _fit(responses: ResponseMatrix, config: FitConfig, kind: str, init: ItemBank | None) -> ItemBank:
    codes = responses.codes
    names = responses.item_names
    if responses.n_items < 2:
        raise ValueError("at least two items are required")
    if kind == DICHOTOMOUS:
        if codes.max() > 1:
            raise ValueError("dichotomous fitting needs 0/1 codes")
        _check_dichotomous(codes, names)
        maps = [np.array([0, 1]) for _ in range(responses.n_items)]
    else:
        maps = _collapse_categories(codes, responses.n_categories, names)

    collapsed = np.column_stack([maps[i][codes[:, i]] for i in range(responses.n_items)])
    if init is None:
        alphas, thresholds = _initial_params(codes, maps)
    else:
        if len(init) != responses.n_items:
            raise ValueError("initial bank has the wrong number of items")
        alphas = init.discriminations.astype(float)
        thresholds = [np.array(it.thresholds, dtype=float) for it in init.items]
        for b, cmap in zip(thresholds, maps):
            if b.size != cmap.max():
                raise ValueError("initial bank thresholds do not match the observed categories")

    nodes, weights = quadrature_grid(config)
    log_w = np.log(weights)
    n_cats = [int(cmap.max()) + 1 for cmap in maps]
    onehots = [np.eye(k)[collapsed[:, i]] for i, k in enumerate(n_cats)]

    trace: list[float] = []
    converged = False
    it = 0
    for it in range(1, config.max_iter + 1):
        # E-step: per-case log-likelihood at each node, then posterior over nodes
        ll = np.zeros((responses.n_cases, nodes.size))
        for i in range(responses.n_items):
            lp = _log_category_probs(nodes, alphas[i], thresholds[i])
            ll += lp[:, collapsed[:, i]].T
        joint = ll + log_w[None, :]
        marg = logsumexp(joint, axis=1)
        trace.append(float(marg.sum()))
        post = np.exp(joint - marg[:, None])

        max_change = 0.0
        for i in range(responses.n_items):
            counts = post.T @ onehots[i]
            a_new, b_new = _mstep_item(nodes, counts, alphas[i], thresholds[i], config.mstep_iter)
            max_change = max(max_change, abs(a_new - alphas[i]),
                             float(np.max(np.abs(b_new - thresholds[i]))))
            alphas[i], thresholds[i] = a_new, b_new
        if max_change < config.tol:
            converged = True
            break

    ll = np.zeros((responses.n_cases, nodes.size))
    for i in range(responses.n_items):
        ll += _log_category_probs(nodes, alphas[i], thresholds[i])[:, collapsed[:, i]].T
    trace.append(float(logsumexp(ll + log_w[None, :], axis=1).sum()))

    remapped = {}
    if kind == DICHOTOMOUS:
        items = [DichotomousItem(float(a), float(b[0]), names[i])
                 for i, (a, b) in enumerate(zip(alphas, thresholds))]
    else:
        items = []
        for i, (a, b) in enumerate(zip(alphas, thresholds)):
            cmap = maps[i]
            identity = np.array_equal(cmap, np.arange(responses.n_categories))
            if not identity:
                remapped[names[i]] = cmap.tolist()
            items.append(GradedItem(float(a), tuple(b), names[i], None if identity else tuple(cmap)))
    info = FitInfo(converged, it, trace, remapped)
    return ItemBank(kind, items, responses.n_categories if kind == GRADED else 2, info)


def fit_2pl(responses: ResponseMatrix, config: FitConfig | None = None,
            init: ItemBank | None = None) -> ItemBank:
    """Fit a 2PL model by Bock-Aitkin EM over a fixed N(0, 1) quadrature grid.

    Non-convergence within ``config.max_iter`` is reported through
    ``bank.fit_info.converged`` rather than raised.
    """
    return _fit(responses, config or FitConfig(), DICHOTOMOUS, init)


def fit_grm(responses: ResponseMatrix, config: FitConfig | None = None,
            init: ItemBank | None = None) -> ItemBank:
    """Fit a graded response model by EM; unobserved categories are collapsed downward."""
    return _fit(responses, config or FitConfig(), GRADED, init)


def fit_bank(responses: ResponseMatrix, model_kind: str, config: FitConfig | None = None) -> ItemBank:
    if model_kind == DICHOTOMOUS:
        return fit_2pl(responses, config)
    if model_kind == GRADED:
        return fit_grm(responses, config)
    raise ValueError(f"unknown model kind {model_kind!r}")
