"""Downstream evaluation: metrics, k-shot splits, and a linear probe."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator

from .errors import (DegenerateInput, EmptyInput, InsufficientClassExamples,
                     ShapeMismatch, ZeroVariance)


@dataclass
class LabeledEmbeddings:
    """Frozen embeddings with labels/targets and split assignments."""

    X: np.ndarray
    y: np.ndarray | None = None
    targets: np.ndarray | None = None
    patient_id: list[str] | None = None
    splits: dict[str, np.ndarray] = field(default_factory=dict)

    def subset(self, split: str) -> "LabeledEmbeddings":
        idx = np.asarray(self.splits[split])
        return LabeledEmbeddings(
            X=self.X[idx],
            y=None if self.y is None else self.y[idx],
            targets=None if self.targets is None else self.targets[idx],
            patient_id=None if self.patient_id is None
            else [self.patient_id[i] for i in idx])


@dataclass(frozen=True)
class KShotSpec:
    k: int = 10
    runs: int = 50
    seed: int = 0

    def __post_init__(self):
        if self.k < 1 or self.runs < 1:
            raise ValueError("k and runs must be at least 1")


def balanced_accuracy(y_true, y_pred) -> float:
    """Mean per-class recall over the classes present in ``y_true``."""
    y_true = np.asarray(y_true)
    y_pred = np.asarray(y_pred)
    if y_true.size == 0:
        raise EmptyInput("no labels")
    if y_true.shape != y_pred.shape:
        raise ShapeMismatch(f"{y_true.shape} vs {y_pred.shape}")
    recalls = []
    for c in np.unique(y_true):
        members = y_true == c
        recalls.append(np.count_nonzero(y_pred[members] == c) / np.count_nonzero(members))
    return float(np.mean(recalls))


def dice_no_background(pred, truth, n_classes: int, background_label: int = 0) -> float:
    """Mean dice over non-background classes.

    Classes absent from both masks are skipped (not scored 1).
    """
    pred = np.asarray(pred)
    truth = np.asarray(truth)
    if pred.shape != truth.shape:
        raise ShapeMismatch(f"{pred.shape} vs {truth.shape}")
    scores = []
    for c in range(n_classes):
        if c == background_label:
            continue
        p = pred == c
        t = truth == c
        denom = np.count_nonzero(p) + np.count_nonzero(t)
        if denom == 0:
            continue
        scores.append(2.0 * np.count_nonzero(p & t) / denom)
    if not scores:
        raise EmptyInput("no non-background class present in either mask")
    return float(np.mean(scores))


def pearson_mean(pred, target) -> float:
    """Per-gene Pearson correlation pooled over all samples, averaged."""
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.ndim == 1:
        pred = pred[:, None]
    if target.ndim == 1:
        target = target[:, None]
    if pred.shape != target.shape:
        raise ShapeMismatch(f"{pred.shape} vs {target.shape}")
    if pred.shape[0] < 2:
        raise EmptyInput("need at least 2 samples for a correlation")
    pc = pred - pred.mean(axis=0)
    tc = target - target.mean(axis=0)
    t_ss = np.sum(tc * tc, axis=0)
    bad = np.flatnonzero(t_ss == 0)
    if bad.size:
        raise ZeroVariance(f"target gene {bad[0]} is constant", gene=int(bad[0]))
    p_ss = np.sum(pc * pc, axis=0)
    with np.errstate(invalid="ignore"):
        r = np.sum(pc * tc, axis=0) / np.sqrt(p_ss * t_ss)
    r = np.where(p_ss == 0, 0.0, r)  # constant predictions correlate at 0
    return float(np.mean(r))


def build_kshot_split(y, spec: KShotSpec, run_index: int) -> np.ndarray:
    """Exactly k training indices per class, seeded by (seed, run_index)."""
    y = np.asarray(y)
    rng = np.random.default_rng(np.random.SeedSequence([spec.seed, run_index]))
    picked = []
    for c in np.unique(y):  # classes visited in sorted order
        members = np.flatnonzero(y == c)
        if members.size < spec.k:
            raise InsufficientClassExamples(
                f"class {c} has {members.size} < k={spec.k} examples", label=c)
        picked.append(rng.choice(members, size=spec.k, replace=False))
    return np.sort(np.concatenate(picked))


class LinearProbe(BaseEstimator):
    """Multinomial logistic regression on frozen embeddings.

    Full-batch gradient descent with fixed hyperparameters (lr 0.1, at
    most 3000 epochs, l2 1e-4 on the weights, stop when the gradient
    norm drops below 1e-6). Zero-initialized, so fits are deterministic.
    """

    def __init__(self, lr: float = 0.1, epochs: int = 3000, l2: float = 1e-4,
                 tol: float = 1e-6):
        self.lr = lr
        self.epochs = epochs
        self.l2 = l2
        self.tol = tol

    def fit(self, X, y):
        X = np.asarray(X, dtype=np.float64)
        y = np.asarray(y)
        self.classes_ = np.unique(y)
        n, d = X.shape
        c = self.classes_.size
        if c < 2:
            raise DegenerateInput("training set contains a single class")
        if np.all(X.std(axis=0) == 0) and c > 1:
            raise DegenerateInput("constant features cannot separate classes")
        y_idx = np.searchsorted(self.classes_, y)
        onehot = np.zeros((n, c))
        onehot[np.arange(n), y_idx] = 1.0

        w = np.zeros((d, c))
        b = np.zeros(c)
        for _ in range(self.epochs):
            logits = X @ w + b
            logits -= logits.max(axis=1, keepdims=True)
            p = np.exp(logits)
            p /= p.sum(axis=1, keepdims=True)
            err = (p - onehot) / n
            gw = X.T @ err + self.l2 * w
            gb = err.sum(axis=0)
            gnorm = math.sqrt(float(np.sum(gw * gw) + np.sum(gb * gb)))
            if gnorm < self.tol:
                break
            w -= self.lr * gw
            b -= self.lr * gb
        self.coef_ = w
        self.intercept_ = b
        return self

    def predict(self, X):
        logits = np.asarray(X, dtype=np.float64) @ self.coef_ + self.intercept_
        return self.classes_[np.argmax(logits, axis=1)]


def train_linear_probe(train: LabeledEmbeddings, lr: float = 0.1,
                       epochs: int = 3000, l2: float = 1e-4) -> LinearProbe:
    return LinearProbe(lr=lr, epochs=epochs, l2=l2).fit(train.X, train.y)


def kshot_protocol(data: LabeledEmbeddings, spec: KShotSpec,
                   probe_factory=LinearProbe):
    """Repeated k-shot probing on a fixed test split.

    For each run: draw a fresh k-per-class training subset, fit a probe,
    and score balanced accuracy on the test split. Returns
    (mean, std of the sample mean); a single run reports 0.0 spread.
    """
    train = data.subset("train")
    test = data.subset("test")
    scores = []
    for run in range(spec.runs):
        idx = build_kshot_split(train.y, spec, run)
        probe = probe_factory().fit(train.X[idx], train.y[idx])
        scores.append(balanced_accuracy(test.y, probe.predict(test.X)))
    scores = np.asarray(scores)
    mean = float(scores.mean())
    sem = 0.0 if spec.runs == 1 else float(scores.std(ddof=1) / math.sqrt(spec.runs))
    return mean, sem
