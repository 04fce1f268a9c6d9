"""Single-hidden-layer feed-forward classifier with grid search and k-fold CV.

Scores are class-2 probabilities from a sigmoid output unit. With
``hidden_units == 0`` the network reduces to logistic regression.
"""
from __future__ import annotations

import itertools
import json
import logging
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.special import expit, softmax

from .cdi import CLASS1, CLASS2

log = logging.getLogger(__name__)

MODEL_FORMAT = "mlcap.model"
MODEL_VERSION = 1

ACTIVATIONS = ("softmax", "softplus", "softsign", "relu", "tanh", "sigmoid", "hard_sigmoid")


class TrainingDivergedError(RuntimeError):
    def __init__(self, cell_log: list[dict]):
        self.cell_log = cell_log
        super().__init__(f"all {len(cell_log)} grid cells diverged: {cell_log}")


def _act(name: str, u: np.ndarray) -> np.ndarray:
    if name == "relu":
        return np.maximum(u, 0.0)
    if name == "tanh":
        return np.tanh(u)
    if name == "sigmoid":
        return expit(u)
    if name == "softplus":
        return np.logaddexp(0.0, u)
    if name == "softsign":
        return u / (1.0 + np.abs(u))
    if name == "hard_sigmoid":
        return np.clip(0.2 * u + 0.5, 0.0, 1.0)
    if name == "softmax":
        # normalised across the hidden units of each row
        return softmax(u, axis=-1)
    raise ValueError(f"unknown activation {name!r}")


def _act_backward(name: str, u: np.ndarray, h: np.ndarray, grad_h: np.ndarray) -> np.ndarray:
    if name == "relu":
        return grad_h * (u > 0)
    if name == "tanh":
        return grad_h * (1.0 - h * h)
    if name == "sigmoid":
        return grad_h * h * (1.0 - h)
    if name == "softplus":
        return grad_h * expit(u)
    if name == "softsign":
        return grad_h / (1.0 + np.abs(u)) ** 2
    if name == "hard_sigmoid":
        return grad_h * 0.2 * ((u > -2.5) & (u < 2.5))
    if name == "softmax":
        return h * (grad_h - np.sum(grad_h * h, axis=-1, keepdims=True))
    raise ValueError(f"unknown activation {name!r}")


@dataclass
class HyperGrid:
    activations: list[str] = field(default_factory=lambda: ["relu", "tanh", "sigmoid"])
    learning_rates: list[float] = field(default_factory=lambda: [0.01, 0.1])
    hidden_units: list[int] = field(default_factory=lambda: [6, 12])

    def __post_init__(self):
        if not (self.activations and self.learning_rates and self.hidden_units):
            raise ValueError("every hyperparameter list must be non-empty")
        bad = [a for a in self.activations if a not in ACTIVATIONS]
        if bad:
            raise ValueError(f"unknown activations {bad}")

    @classmethod
    def full(cls) -> "HyperGrid":
        """Every activation, 0.01-0.3 learning rates and 6-30 hidden units."""
        return cls(list(ACTIVATIONS), [0.01, 0.1, 0.2, 0.3], [6, 8, 12, 18, 24, 30])

    @classmethod
    def from_dict(cls, d: dict) -> "HyperGrid":
        return cls(list(d["activations"]), [float(x) for x in d["learning_rates"]],
                   [int(x) for x in d["hidden_units"]])

    def to_dict(self) -> dict:
        return {"activations": self.activations, "learning_rates": self.learning_rates,
                "hidden_units": self.hidden_units}

    def cells(self):
        return list(itertools.product(self.activations, self.learning_rates, self.hidden_units))


@dataclass
class TrainConfig:
    epochs: int = 200
    batch_size: int = 32
    patience: int = 10
    min_improvement: float = 1e-6

    @classmethod
    def from_dict(cls, d: dict | None) -> "TrainConfig":
        return cls(**(d or {}))


@dataclass
class TrainedModel:
    activation: str
    learning_rate: float
    hidden_units: int
    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: float
    x_mean: np.ndarray
    x_scale: np.ndarray
    epochs_run: int = 0
    seed: int = 0
    final_loss: float = float("nan")
    feature_names: list[str] | None = None
    cv_results: list[dict] = field(default_factory=list)

    @property
    def n_features(self) -> int:
        return self.x_mean.size

    def scores(self, X) -> np.ndarray:
        """Class-2 probabilities for a batch of raw feature rows."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[1] != self.n_features:
            raise ValueError(f"expected {self.n_features} features, got {X.shape[1]}")
        return _forward(self, (X - self.x_mean) / self.x_scale)[-1]

    def predict(self, x) -> tuple[int, float]:
        """Class and class-2 score for one case; class 2 on a tie at 0.5."""
        x = np.asarray(x, dtype=float)
        if x.ndim != 1:
            raise ValueError("predict takes a single feature vector; use predict_batch")
        s = float(self.scores(x[None, :])[0])
        return (CLASS2 if s >= 0.5 else CLASS1), s

    def predict_batch(self, X) -> tuple[np.ndarray, np.ndarray]:
        s = self.scores(X)
        return np.where(s >= 0.5, CLASS2, CLASS1), s

    def to_dict(self) -> dict:
        return {"format": MODEL_FORMAT, "version": MODEL_VERSION,
                "architecture": {"activation": self.activation, "hidden_units": self.hidden_units,
                                 "output": "sigmoid"},
                "learning_rate": self.learning_rate, "seed": self.seed,
                "epochs_run": self.epochs_run, "final_loss": self.final_loss,
                "feature_names": self.feature_names,
                "standardize": {"mean": self.x_mean.tolist(), "scale": self.x_scale.tolist()},
                "weights": {"w1": self.w1.tolist(), "b1": self.b1.tolist(),
                            "w2": self.w2.tolist(), "b2": self.b2},
                "cv_results": self.cv_results}

    @classmethod
    def from_dict(cls, d: dict) -> "TrainedModel":
        if d.get("format") != MODEL_FORMAT or d.get("version") != MODEL_VERSION:
            raise ValueError("not a version-1 mlcap model document")
        arch, w = d["architecture"], d["weights"]
        d1 = len(d["standardize"]["mean"])
        return cls(arch["activation"], d["learning_rate"], arch["hidden_units"],
                   np.array(w["w1"], dtype=float).reshape(d1, -1), np.array(w["b1"], dtype=float),
                   np.array(w["w2"], dtype=float), float(w["b2"]),
                   np.array(d["standardize"]["mean"]), np.array(d["standardize"]["scale"]),
                   d["epochs_run"], d["seed"], d["final_loss"], d.get("feature_names"),
                   d.get("cv_results", []))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1) + "\n")

    @classmethod
    def load(cls, path) -> "TrainedModel":
        return cls.from_dict(json.loads(Path(path).read_text()))


def _forward(m: TrainedModel, Z: np.ndarray):
    if m.hidden_units == 0:
        u = None
        h = Z
    else:
        u = Z @ m.w1 + m.b1
        h = _act(m.activation, u)
    out = expit(h @ m.w2 + m.b2)
    return u, h, out


def _bce(p: np.ndarray, y: np.ndarray) -> float:
    p = np.clip(p, 1e-12, 1 - 1e-12)
    return float(-np.mean(y * np.log(p) + (1 - y) * np.log(1 - p)))


def train_network(X, labels, activation: str, learning_rate: float, hidden_units: int,
                  seed: int = 0, config: TrainConfig | None = None) -> TrainedModel:
    """Mini-batch gradient descent on cross-entropy; early stop on a loss plateau."""
    cfg = config or TrainConfig()
    X = np.asarray(X, dtype=float)
    y = (np.asarray(labels) == CLASS2).astype(float)
    rng = np.random.default_rng(seed)
    mean = X.mean(axis=0)
    scale = X.std(axis=0)
    scale[scale == 0] = 1.0
    Z = (X - mean) / scale
    d = Z.shape[1]
    if hidden_units == 0:
        w1, b1 = np.zeros((d, 0)), np.zeros(0)
        w2 = np.zeros(d)
    else:
        lim1 = np.sqrt(6.0 / (d + hidden_units))
        w1 = rng.uniform(-lim1, lim1, size=(d, hidden_units))
        b1 = np.zeros(hidden_units)
        lim2 = np.sqrt(6.0 / (hidden_units + 1))
        w2 = rng.uniform(-lim2, lim2, size=hidden_units)
    m = TrainedModel(activation, learning_rate, hidden_units, w1, b1, w2, 0.0, mean, scale,
                     seed=seed)

    best = np.inf
    stale = 0
    loss = np.inf
    epoch = 0
    n = Z.shape[0]
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            u, h, p = _forward(m, Z[idx])
            delta = (p - y[idx]) / idx.size
            gw2 = h.T @ delta
            gb2 = float(delta.sum())
            if hidden_units:
                gh = np.outer(delta, m.w2)
                gu = _act_backward(activation, u, h, gh)
                m.w1 -= learning_rate * (Z[idx].T @ gu)
                m.b1 -= learning_rate * gu.sum(axis=0)
            m.w2 -= learning_rate * gw2
            m.b2 -= learning_rate * gb2
        loss = _bce(_forward(m, Z)[-1], y)
        if not np.isfinite(loss):
            break
        if best - loss < cfg.min_improvement:
            stale += 1
            if stale >= cfg.patience:
                break
        else:
            stale = 0
        best = min(best, loss)
    m.epochs_run = epoch
    m.final_loss = float(loss)
    return m


def kfold_indices(labels, folds: int, seed: int) -> list[np.ndarray]:
    """Class-stratified assignment of row indices to ``folds`` disjoint folds."""
    labels = np.asarray(labels)
    rng = np.random.default_rng(seed)
    out: list[list[int]] = [[] for _ in range(folds)]
    offset = 0
    for cls in (CLASS1, CLASS2):
        idx = rng.permutation(np.flatnonzero(labels == cls))
        for j, i in enumerate(idx):
            out[(j + offset) % folds].append(int(i))
        offset += idx.size
    return [np.sort(np.array(f, dtype=int)) for f in out]


def grid_search_train(X, labels, grid: HyperGrid | None = None, folds: int = 5, seed: int = 0,
                      config: TrainConfig | None = None) -> TrainedModel:
    """Score every grid cell by mean k-fold validation accuracy and refit the best one.

    Ties go to fewer hidden units, then the lower learning rate.
    """
    grid = grid or HyperGrid()
    X = np.asarray(X, dtype=float)
    labels = np.asarray(labels)
    if X.shape[0] < 2 * folds:
        raise ValueError(f"need at least {2 * folds} training cases for {folds}-fold CV")
    counts = [(labels == c).sum() for c in (CLASS1, CLASS2)]
    if min(counts) == 0:
        raise ValueError("training labels contain a single class")
    if abs(counts[0] - counts[1]) > 0.1 * sum(counts):
        warnings.warn(f"training classes are unbalanced ({counts[0]} vs {counts[1]})", stacklevel=2)

    fold_idx = kfold_indices(labels, folds, seed)
    results = []
    for ci, (act, lr, hu) in enumerate(grid.cells()):
        accs = []
        diverged = False
        for k in range(folds):
            val = fold_idx[k]
            tr = np.concatenate([fold_idx[j] for j in range(folds) if j != k])
            model = train_network(X[tr], labels[tr], act, lr, hu, seed=seed * 1000 + ci * 10 + k,
                                  config=config)
            if not np.isfinite(model.final_loss):
                diverged = True
                break
            pred, _ = model.predict_batch(X[val])
            accs.append(float(np.mean(pred == labels[val])))
        score = float(np.mean(accs)) if not diverged else float("nan")
        results.append({"activation": act, "learning_rate": lr, "hidden_units": hu,
                        "cv_accuracy": score, "diverged": diverged})
        log.debug("cell %s lr=%s h=%s -> %s", act, lr, hu, score)

    ok = [r for r in results if not r["diverged"]]
    if not ok:
        raise TrainingDivergedError(results)
    best = min(ok, key=lambda r: (-r["cv_accuracy"], r["hidden_units"], r["learning_rate"]))
    model = train_network(X, labels, best["activation"], best["learning_rate"], best["hidden_units"],
                          seed=seed, config=config)
    if not np.isfinite(model.final_loss):
        raise TrainingDivergedError(results)
    model.cv_results = results
    return model
