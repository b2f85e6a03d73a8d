"""User-grouped cross-validation, F1 scoring and the personalization probe.

Folds partition users, never rows, so no subject's data spans train and
test.  Every fold gets a fresh start: the imputer, feature selection and
model are fit on the training users only.
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field

import numpy as np

from ..dataset import FeatureMatrix, KnnImputer
from ..errors import (InsufficientTargetData, LengthMismatch, TooFewGroups)
from .knn import train_knn
from .trees import select_top_features, train_boosted, train_random_forest

DEFAULT_FOLDS = 5
AUTO_SELECT_MIN = 4
AUTO_TUNE_TREES = 50


@dataclass(frozen=True)
class ModelSpec:
    """Which classifier to fit and with what hyperparameters."""

    kind: str = "rf"                 # "rf" | "knn" | "boosted"
    depth: int = 5
    k: int = 5
    n_trees: int = 100
    rounds: int = 100
    learning_rate: float = 0.3
    select_top: object = None        # None, int, or "auto"
    impute_k: int = 5
    impute_weighting: str = "inverse_distance"

    def __post_init__(self):
        if self.kind not in ("rf", "knn", "boosted"):
            raise ValueError(f"unknown model kind {self.kind!r}")

    def describe(self) -> dict:
        return {"kind": self.kind, "depth": self.depth, "k": self.k,
                "n_trees": self.n_trees, "rounds": self.rounds,
                "learning_rate": self.learning_rate,
                "select_top": self.select_top,
                "impute_k": self.impute_k,
                "impute_weighting": self.impute_weighting}


@dataclass
class FoldResult:
    fold: int
    f1: float
    test_users: list
    selected_features: list
    confusion: dict


@dataclass
class EvalReport:
    """Per-fold F1 scores plus their arithmetic mean and fold metadata."""

    spec: dict
    seed: int
    folds: list = field(default_factory=list)

    @property
    def fold_f1s(self):
        return [f.f1 for f in self.folds]

    @property
    def mean_f1(self) -> float:
        return float(np.mean(self.fold_f1s)) if self.folds else float("nan")

    def to_dict(self) -> dict:
        return {
            "model": self.spec,
            "seed": self.seed,
            "mean_f1": self.mean_f1,
            "folds": [{"fold": f.fold, "f1": f.f1, "test_users": f.test_users,
                       "selected_features": f.selected_features,
                       "confusion": f.confusion} for f in self.folds],
        }

    def write(self, json_path, csv_path=None):
        with open(json_path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")
        if csv_path is not None:
            with open(csv_path, "w", newline="", encoding="utf-8") as fh:
                writer = csv.writer(fh)
                writer.writerow(["fold", "f1", "tp", "fp", "fn", "tn", "test_users"])
                for f in self.folds:
                    c = f.confusion
                    writer.writerow([f.fold, repr(f.f1), c["tp"], c["fp"],
                                     c["fn"], c["tn"], " ".join(f.test_users)])
                writer.writerow(["mean", repr(self.mean_f1), "", "", "", "", ""])


def f1_score(y_true, y_pred) -> float:
    """2PR/(P+R) with F1 = 0 when precision + recall = 0."""
    y_true = np.asarray(y_true).astype(int)
    y_pred = np.asarray(y_pred).astype(int)
    if y_true.shape != y_pred.shape:
        raise LengthMismatch(f"{y_true.shape} vs {y_pred.shape}")
    tp = int(np.sum((y_true == 1) & (y_pred == 1)))
    fp = int(np.sum((y_true == 0) & (y_pred == 1)))
    fn = int(np.sum((y_true == 1) & (y_pred == 0)))
    if tp == 0:
        return 0.0
    precision = tp / (tp + fp)
    recall = tp / (tp + fn)
    return 2.0 * precision * recall / (precision + recall)


def _confusion(y_true, y_pred) -> dict:
    y_true = np.asarray(y_true).astype(int)
    y_pred = np.asarray(y_pred).astype(int)
    return {"tp": int(np.sum((y_true == 1) & (y_pred == 1))),
            "fp": int(np.sum((y_true == 0) & (y_pred == 1))),
            "fn": int(np.sum((y_true == 1) & (y_pred == 0))),
            "tn": int(np.sum((y_true == 0) & (y_pred == 0)))}


def fit_model(spec: ModelSpec, X, y, seed: int, feature_names=None):
    if spec.kind == "rf":
        return train_random_forest(X, y, depth=spec.depth, n_trees=spec.n_trees,
                                   seed=seed, feature_names=feature_names)
    if spec.kind == "boosted":
        return train_boosted(X, y, rounds=spec.rounds, depth=spec.depth,
                             learning_rate=spec.learning_rate, seed=seed,
                             feature_names=feature_names)
    return train_knn(X, y, k=spec.k, feature_names=feature_names)


def split_users_into_folds(users, folds: int, seed: int):
    """Seeded disjoint partition of the (sorted) user list into folds."""
    users = sorted(users)
    if len(users) < folds:
        raise TooFewGroups(f"{len(users)} users cannot fill {folds} folds")
    order = np.random.default_rng([seed, len(users)]).permutation(len(users))
    shuffled = [users[i] for i in order]
    return [list(part) for part in np.array_split(shuffled, folds)]


def _labeled_view(matrix: FeatureMatrix):
    keep = np.flatnonzero(~np.isnan(matrix.labels))
    return matrix.select_rows(keep)


def _prepare_fold(matrix, train_rows, test_rows, spec, seed):
    """Fresh-start preprocessing: impute and select on training rows only."""
    imputer = KnnImputer(k=spec.impute_k, weighting=spec.impute_weighting)
    imputer.fit(matrix.values[train_rows], matrix.missing[train_rows])
    X_train = imputer.transform(matrix.values[train_rows],
                                matrix.missing[train_rows], exclude_self=True)
    X_test = imputer.transform(matrix.values[test_rows], matrix.missing[test_rows])
    y_train = matrix.labels[train_rows].astype(int)
    y_test = matrix.labels[test_rows].astype(int)

    if spec.select_top is None:
        selected = list(range(len(matrix.columns)))
    elif spec.select_top == "auto":
        selected = _auto_select(X_train, y_train,
                                [matrix.groups[i] for i in train_rows], spec, seed)
    else:
        selected = select_top_features(X_train, y_train, int(spec.select_top),
                                       seed=seed)
    return X_train[:, selected], y_train, X_test[:, selected], y_test, selected


def _auto_select(X, y, groups, spec, seed):
    """Tune the selected-feature count on a held-out third of training users."""
    d = X.shape[1]
    ranked = select_top_features(X, y, d, seed=seed)
    users = sorted(set(groups))
    if len(users) < 3 or d <= AUTO_SELECT_MIN:
        return ranked[:min(d, AUTO_SELECT_MIN)]
    order = np.random.default_rng([seed, 7]).permutation(len(users))
    held = {users[i] for i in order[:max(1, len(users) // 3)]}
    inner_test = np.array([g in held for g in groups])
    tune_spec = ModelSpec(kind=spec.kind, depth=spec.depth, k=spec.k,
                          n_trees=min(spec.n_trees, AUTO_TUNE_TREES),
                          rounds=min(spec.rounds, AUTO_TUNE_TREES),
                          learning_rate=spec.learning_rate)
    best_m, best_f1 = AUTO_SELECT_MIN, -1.0
    for m in range(AUTO_SELECT_MIN, d + 1):
        cols = sorted(ranked[:m])
        model = fit_model(tune_spec, X[~inner_test][:, cols], y[~inner_test], seed)
        score = f1_score(y[inner_test], model.predict(X[inner_test][:, cols]))
        if score > best_f1:
            best_m, best_f1 = m, score
    return sorted(ranked[:best_m])


def grouped_cv(matrix: FeatureMatrix, spec: ModelSpec,
               folds: int = DEFAULT_FOLDS, seed: int = 0) -> EvalReport:
    """User-grouped k-fold evaluation with per-fold fresh preprocessing."""
    labeled = _labeled_view(matrix)
    fold_users = split_users_into_folds(set(labeled.groups), folds, seed)
    groups = np.array(labeled.groups, dtype=object)
    report = EvalReport(spec=spec.describe(), seed=seed)
    for f, test_users in enumerate(fold_users):
        test_set = set(test_users)
        train_set = set(labeled.groups) - test_set
        assert not (train_set & test_set), "train/test users overlap"
        test_rows = np.flatnonzero(np.isin(groups, list(test_set)))
        train_rows = np.flatnonzero(~np.isin(groups, list(test_set)))
        fold_seed = 1009 * seed + f
        X_tr, y_tr, X_te, y_te, selected = _prepare_fold(
            labeled, train_rows, test_rows, spec, fold_seed)
        model = fit_model(spec, X_tr, y_tr, fold_seed,
                          feature_names=[labeled.columns[i] for i in selected])
        y_pred = model.predict(X_te)
        report.folds.append(FoldResult(
            fold=f, f1=f1_score(y_te, y_pred), test_users=sorted(test_users),
            selected_features=[labeled.columns[i] for i in selected],
            confusion=_confusion(y_te, y_pred)))
    return report


@dataclass
class PersonalizationResult:
    user: str
    f1_before: float
    f1_after: float

    def to_dict(self) -> dict:
        return {"user": self.user, "f1_before": self.f1_before,
                "f1_after": self.f1_after}


def personalization_eval(matrix: FeatureMatrix, target_user: str,
                         spec: ModelSpec, seed: int = 0) -> PersonalizationResult:
    """F1 on the target's first (chronological) half, before and after
    adding the target's second half to the training data."""
    labeled = _labeled_view(matrix)
    groups = np.array(labeled.groups, dtype=object)
    target_rows = np.flatnonzero(groups == target_user)
    if target_rows.size < 2:
        raise InsufficientTargetData(
            f"user {target_user!r} has {target_rows.size} labeled windows")
    order = np.argsort(labeled.window_starts[target_rows], kind="stable")
    target_rows = target_rows[order]
    n_test = (target_rows.size + 1) // 2
    test_rows = target_rows[:n_test]
    extra_rows = target_rows[n_test:]
    other_rows = np.flatnonzero(groups != target_user)

    scores = []
    for train_rows in (other_rows, np.sort(np.concatenate([other_rows, extra_rows]))):
        X_tr, y_tr, X_te, y_te, selected = _prepare_fold(
            labeled, train_rows, test_rows, spec, seed)
        model = fit_model(spec, X_tr, y_tr, seed,
                          feature_names=[labeled.columns[i] for i in selected])
        scores.append(f1_score(y_te, model.predict(X_te)))
    return PersonalizationResult(user=target_user, f1_before=scores[0],
                                 f1_after=scores[1])
