"""Decision-tree ensembles: random forest and gradient-boosted trees.

Both ensembles share one node type that records the weighted impurity
decrease and sample fraction at every split, so Gini importances and JSON
serialization fall out of the same structure.  Forest trees use the Gini
criterion with ceil(sqrt(d)) feature candidates per node; boosted trees
fit squared-error regression trees to logistic-loss residuals with Newton
leaf values.  All randomness flows from per-tree generator streams keyed
by (seed, tree_index), so results are independent of evaluation order.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from ..errors import DegenerateLabels, EmptySelection

MIN_IMPURITY_DECREASE = 1e-12
DEFAULT_N_TREES = 100
DEFAULT_BOOST_ROUNDS = 100
DEFAULT_BOOST_DEPTH = 6
DEFAULT_BOOST_RATE = 0.3
BOOST_L2 = 1.0


@dataclass
class TreeNode:
    """Either a split (feature/threshold/children) or a leaf.

    Leaves carry class counts and a probability for classification trees,
    or a log-odds step in ``value`` for boosted regression trees.  Split
    nodes record the impurity decrease already weighted by the fraction of
    the tree's samples that reached them.
    """

    feature_index: int | None = None
    threshold: float = 0.0
    left: "TreeNode | None" = None
    right: "TreeNode | None" = None
    impurity_decrease: float = 0.0
    sample_fraction: float = 0.0
    class_counts: tuple | None = None
    probability: float | None = None
    value: float | None = None

    @property
    def is_leaf(self) -> bool:
        return self.feature_index is None


@dataclass
class TreeEnsembleModel:
    """A trained forest or boosted-tree model over named features."""

    kind: str                      # "random_forest" | "boosted"
    trees: list
    tree_weights: list
    feature_names: list
    hyperparameters: dict
    seed: int
    base_score: float = 0.0        # boosted log-odds offset
    degenerate: bool = False

    def predict_proba(self, X) -> np.ndarray:
        """Positive-class probability per row."""
        X = np.asarray(X, dtype=float)
        agg = np.full(X.shape[0], self.base_score)
        for tree, w in zip(self.trees, self.tree_weights):
            agg += w * _tree_leaf_outputs(tree, X)
        if self.kind == "boosted":
            return 1.0 / (1.0 + np.exp(-agg))
        return agg

    def predict(self, X) -> np.ndarray:
        """0/1 labels at the fixed 0.5 probability threshold (ties -> 0)."""
        return (self.predict_proba(X) > 0.5).astype(int)

    @property
    def n_features(self) -> int:
        return len(self.feature_names)


def _tree_leaf_outputs(root: TreeNode, X: np.ndarray) -> np.ndarray:
    out = np.empty(X.shape[0])
    stack = [(root, np.arange(X.shape[0]))]
    while stack:
        node, rows = stack.pop()
        if rows.size == 0:
            continue
        if node.is_leaf:
            out[rows] = node.probability if node.value is None else node.value
        else:
            go_left = X[rows, node.feature_index] <= node.threshold
            stack.append((node.left, rows[go_left]))
            stack.append((node.right, rows[~go_left]))
    return out


def _gini(pos: np.ndarray, n: np.ndarray):
    p = pos / n
    return 1.0 - p ** 2 - (1.0 - p) ** 2


def _best_gini_split(X, y, rows, candidates, n_root):
    """Best (decrease, feature, threshold) over candidate features, or None.

    The decrease is weighted by rows/n_root.  Ties keep the earliest
    candidate feature and the lowest threshold, so results are
    deterministic given the candidate order.
    """
    m = rows.size
    total_pos = y[rows].sum()
    parent = float(_gini(np.array(total_pos, dtype=float), np.array(float(m))))
    best = None
    for f in candidates:
        xs = X[rows, f]
        order = np.argsort(xs, kind="stable")
        xs_sorted = xs[order]
        ys_sorted = y[rows][order]
        cut = np.flatnonzero(xs_sorted[:-1] != xs_sorted[1:])
        if cut.size == 0:
            continue
        thrs = 0.5 * (xs_sorted[cut] + xs_sorted[cut + 1])
        # midpoints of near-adjacent floats can round up and leave a child empty
        separating = thrs < xs_sorted[cut + 1]
        cut, thrs = cut[separating], thrs[separating]
        if cut.size == 0:
            continue
        left_n = (cut + 1).astype(float)
        left_pos = np.cumsum(ys_sorted)[cut].astype(float)
        right_n = m - left_n
        right_pos = total_pos - left_pos
        weighted = (left_n * _gini(left_pos, left_n)
                    + right_n * _gini(right_pos, right_n)) / m
        decreases = (parent - weighted) * (m / n_root)
        i = int(np.argmax(decreases))
        if decreases[i] <= MIN_IMPURITY_DECREASE:
            continue
        if best is None or decreases[i] > best[0]:
            best = (float(decreases[i]), int(f), float(thrs[i]))
    return best


def _grow_classification_tree(X, y, rows, depth_left, rng, max_features, n_root):
    n1 = int(y[rows].sum())
    n0 = rows.size - n1
    leaf = TreeNode(class_counts=(n0, n1), probability=n1 / rows.size,
                    sample_fraction=rows.size / n_root)
    if depth_left == 0 or n0 == 0 or n1 == 0 or rows.size < 2:
        return leaf
    d = X.shape[1]
    candidates = rng.choice(d, size=min(d, max_features), replace=False)
    best = _best_gini_split(X, y, rows, candidates, n_root)
    if best is None:
        return leaf
    decrease, f, thr = best
    go_left = X[rows, f] <= thr
    node = TreeNode(feature_index=f, threshold=thr, impurity_decrease=decrease,
                    sample_fraction=rows.size / n_root, class_counts=(n0, n1))
    node.left = _grow_classification_tree(X, y, rows[go_left], depth_left - 1,
                                          rng, max_features, n_root)
    node.right = _grow_classification_tree(X, y, rows[~go_left], depth_left - 1,
                                           rng, max_features, n_root)
    return node


def _validate_training_inputs(X, y):
    X = np.asarray(X, dtype=float)
    y = np.asarray(y)
    if X.ndim != 2 or X.shape[0] != y.shape[0]:
        raise ValueError("X must be (n, d) with one label per row")
    if np.isnan(X).any():
        raise ValueError("training matrix contains missing values; impute first")
    if not np.isin(y, (0, 1)).all():
        raise ValueError("labels must be binary 0/1")
    return X, y.astype(int)


def _degenerate_model(kind, y, feature_names, hyperparameters, seed):
    warnings.warn(DegenerateLabels(
        f"all labels are {int(y[0])}; returning a constant predictor"))
    n = len(y)
    if kind == "boosted":
        leaf = TreeNode(class_counts=(n - y.sum(), y.sum()), value=0.0,
                        sample_fraction=1.0)
        base = math.log(0.99 / 0.01) * (1 if y[0] == 1 else -1)
        return TreeEnsembleModel(kind=kind, trees=[leaf], tree_weights=[1.0],
                                 feature_names=feature_names,
                                 hyperparameters=hyperparameters, seed=seed,
                                 base_score=base, degenerate=True)
    leaf = TreeNode(class_counts=(n - y.sum(), y.sum()),
                    probability=float(y[0]), sample_fraction=1.0)
    return TreeEnsembleModel(kind=kind, trees=[leaf], tree_weights=[1.0],
                             feature_names=feature_names,
                             hyperparameters=hyperparameters, seed=seed,
                             degenerate=True)


def train_random_forest(X, y, depth, n_trees: int = DEFAULT_N_TREES,
                        seed: int = 0, feature_names=None) -> TreeEnsembleModel:
    """Bootstrap-sampled, Gini-split, depth-capped forest.

    Every tree draws its bootstrap and per-node ceil(sqrt(d)) feature
    candidates from an independent stream keyed by (seed, tree index).
    """
    X, y = _validate_training_inputs(X, y)
    if depth < 1 or n_trees < 1:
        raise ValueError("depth and n_trees must be >= 1")
    n, d = X.shape
    names = list(feature_names) if feature_names is not None else [f"f{i}" for i in range(d)]
    hp = {"depth": int(depth), "n_trees": int(n_trees)}
    if len(np.unique(y)) < 2:
        return _degenerate_model("random_forest", y, names, hp, seed)
    max_features = math.ceil(math.sqrt(d))
    trees = []
    for t in range(n_trees):
        rng = np.random.default_rng([seed, t])
        rows = rng.integers(0, n, size=n)
        trees.append(_grow_classification_tree(X, y, rows, depth, rng,
                                               max_features, n_root=n))
    return TreeEnsembleModel(kind="random_forest", trees=trees,
                             tree_weights=[1.0 / n_trees] * n_trees,
                             feature_names=names, hyperparameters=hp, seed=seed)


def _best_sse_split(X, r, rows, n_root):
    """Best squared-error split over all features, weighted by rows/n_root."""
    m = rows.size
    rr = r[rows]
    sum_all = rr.sum()
    sse_parent = float((rr ** 2).sum() - sum_all ** 2 / m)
    best = None
    for f in range(X.shape[1]):
        xs = X[rows, f]
        order = np.argsort(xs, kind="stable")
        xs_sorted = xs[order]
        rs = rr[order]
        cut = np.flatnonzero(xs_sorted[:-1] != xs_sorted[1:])
        if cut.size == 0:
            continue
        thrs = 0.5 * (xs_sorted[cut] + xs_sorted[cut + 1])
        separating = thrs < xs_sorted[cut + 1]
        cut, thrs = cut[separating], thrs[separating]
        if cut.size == 0:
            continue
        csum = np.cumsum(rs)
        csq = np.cumsum(rs ** 2)
        left_n = (cut + 1).astype(float)
        left_sum = csum[cut]
        left_sq = csq[cut]
        right_n = m - left_n
        right_sum = sum_all - left_sum
        right_sq = csq[-1] - left_sq
        sse_children = (left_sq - left_sum ** 2 / left_n
                        + right_sq - right_sum ** 2 / right_n)
        decreases = (sse_parent - sse_children) / n_root
        i = int(np.argmax(decreases))
        if decreases[i] <= MIN_IMPURITY_DECREASE:
            continue
        if best is None or decreases[i] > best[0]:
            best = (float(decreases[i]), int(f), float(thrs[i]))
    return best


def _grow_regression_tree(X, r, h, rows, depth_left, n_root):
    if depth_left == 0 or rows.size < 2:
        return _newton_leaf(r, h, rows, n_root)
    best = _best_sse_split(X, r, rows, n_root)
    if best is None:
        return _newton_leaf(r, h, rows, n_root)
    decrease, f, thr = best
    go_left = X[rows, f] <= thr
    node = TreeNode(feature_index=f, threshold=thr, impurity_decrease=decrease,
                    sample_fraction=rows.size / n_root)
    node.left = _grow_regression_tree(X, r, h, rows[go_left], depth_left - 1, n_root)
    node.right = _grow_regression_tree(X, r, h, rows[~go_left], depth_left - 1, n_root)
    return node


def _newton_leaf(r, h, rows, n_root):
    value = r[rows].sum() / (h[rows].sum() + BOOST_L2)
    return TreeNode(value=float(value), sample_fraction=rows.size / n_root)


def train_boosted(X, y, rounds: int = DEFAULT_BOOST_ROUNDS,
                  depth: int = DEFAULT_BOOST_DEPTH,
                  learning_rate: float = DEFAULT_BOOST_RATE,
                  seed: int = 0, feature_names=None) -> TreeEnsembleModel:
    """Stagewise log-odds model with logistic loss.

    Each round fits a depth-capped regression tree to the residuals y - p
    and replaces leaf values with the Newton step
    sum(residuals) / (sum p(1-p) + 1.0).
    """
    X, y = _validate_training_inputs(X, y)
    if rounds < 1 or depth < 1 or learning_rate <= 0:
        raise ValueError("rounds, depth and learning_rate must be positive")
    n, d = X.shape
    names = list(feature_names) if feature_names is not None else [f"f{i}" for i in range(d)]
    hp = {"rounds": int(rounds), "depth": int(depth),
          "learning_rate": float(learning_rate)}
    if len(np.unique(y)) < 2:
        return _degenerate_model("boosted", y, names, hp, seed)
    score = np.zeros(n)
    rows = np.arange(n)
    trees = []
    for _ in range(rounds):
        p = 1.0 / (1.0 + np.exp(-score))
        residual = y - p
        hessian = p * (1.0 - p)
        tree = _grow_regression_tree(X, residual, hessian, rows, depth, n_root=n)
        trees.append(tree)
        score += learning_rate * _tree_leaf_outputs(tree, X)
    return TreeEnsembleModel(kind="boosted", trees=trees,
                             tree_weights=[learning_rate] * rounds,
                             feature_names=names, hyperparameters=hp,
                             seed=seed, base_score=0.0)


def gini_importance(model: TreeEnsembleModel):
    """Mean decrease impurity per feature, normalized to sum to one.

    Returns (feature_index, importance) pairs sorted by descending
    importance, ties broken by lower feature index.
    """
    d = model.n_features
    totals = np.zeros(d)
    for root in model.trees:
        stack = [root]
        while stack:
            node = stack.pop()
            if node.is_leaf:
                continue
            totals[node.feature_index] += node.impurity_decrease
            stack.extend((node.left, node.right))
    totals /= len(model.trees)
    if totals.sum() > 0:
        totals = totals / totals.sum()
    order = np.lexsort((np.arange(d), -totals))
    return [(int(i), float(totals[i])) for i in order]


def select_top_features(X, y, m: int, seed: int = 0,
                        depth: int = 10, n_trees: int = DEFAULT_N_TREES):
    """Indices of the m most important features per a forest fit on (X, y)."""
    if m < 1:
        raise EmptySelection("cannot select zero features")
    d = np.asarray(X).shape[1]
    if m > d:
        raise ValueError(f"m={m} exceeds {d} available features")
    forest = train_random_forest(X, y, depth=depth, n_trees=n_trees, seed=seed)
    ranked = gini_importance(forest)
    return sorted(idx for idx, _ in ranked[:m])


# -- JSON serialization --------------------------------------------------------

def _node_to_dict(node: TreeNode):
    if node.is_leaf:
        rec = {"leaf": True, "sample_fraction": node.sample_fraction}
        if node.class_counts is not None:
            rec["class_counts"] = [int(c) for c in node.class_counts]
        if node.probability is not None:
            rec["probability"] = node.probability
        if node.value is not None:
            rec["value"] = node.value
        return rec
    return {
        "feature_index": node.feature_index,
        "threshold": node.threshold,
        "impurity_decrease": node.impurity_decrease,
        "sample_fraction": node.sample_fraction,
        "left": _node_to_dict(node.left),
        "right": _node_to_dict(node.right),
    }


def _node_from_dict(rec) -> TreeNode:
    if rec.get("leaf"):
        counts = rec.get("class_counts")
        return TreeNode(class_counts=tuple(counts) if counts else None,
                        probability=rec.get("probability"),
                        value=rec.get("value"),
                        sample_fraction=rec.get("sample_fraction", 0.0))
    return TreeNode(feature_index=rec["feature_index"], threshold=rec["threshold"],
                    impurity_decrease=rec["impurity_decrease"],
                    sample_fraction=rec["sample_fraction"],
                    left=_node_from_dict(rec["left"]),
                    right=_node_from_dict(rec["right"]))


def model_to_dict(model: TreeEnsembleModel):
    return {
        "kind": model.kind,
        "hyperparameters": model.hyperparameters,
        "feature_names": model.feature_names,
        "trees": [_node_to_dict(t) for t in model.trees],
        "tree_weights": list(model.tree_weights),
        "base_score": model.base_score,
        "seed": model.seed,
        "degenerate": model.degenerate,
    }


def model_from_dict(rec) -> TreeEnsembleModel:
    return TreeEnsembleModel(
        kind=rec["kind"],
        trees=[_node_from_dict(t) for t in rec["trees"]],
        tree_weights=list(rec["tree_weights"]),
        feature_names=list(rec["feature_names"]),
        hyperparameters=dict(rec["hyperparameters"]),
        seed=rec["seed"],
        base_score=rec.get("base_score", 0.0),
        degenerate=rec.get("degenerate", False),
    )
