"""Exact Shapley attributions for tree-ensemble predictions.

Coalition values use the interventional expectation: features in the
coalition take the explained row's values, the rest come from each
background row, and the model's positive-class probability is averaged
over the background.  With at most 16 features the full 2^d enumeration
is tractable and serves as its own ground truth.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .errors import EmptyBackground, TooManyFeatures

MAX_EXACT_FEATURES = 16


@dataclass(frozen=True)
class Explanation:
    """Additive attribution: base_value + sum(shap_values) = model output."""

    base_value: float
    shap_values: np.ndarray
    feature_values: np.ndarray
    feature_names: tuple

    @property
    def prediction(self) -> float:
        return self.base_value + float(self.shap_values.sum())


def _require_tree_model(model):
    if getattr(model, "kind", None) not in ("random_forest", "boosted"):
        raise ValueError("exact Shapley explanation needs a tree-based model")


def coalition_value_table(model, row: np.ndarray, background: np.ndarray) -> np.ndarray:
    """Mean model output for every coalition bitmask (length 2^d)."""
    d = row.size
    n_bg = background.shape[0]
    values = np.empty(1 << d)
    bits = ((np.arange(1 << d)[:, None] >> np.arange(d)) & 1).astype(bool)
    synth = np.empty_like(background)
    for mask in range(1 << d):
        np.copyto(synth, background)
        synth[:, bits[mask]] = row[bits[mask]]
        values[mask] = float(model.predict_proba(synth).mean())
    return values


def shap_values(model, row, background_rows) -> Explanation:
    """Exact interventional Shapley values by coalition enumeration.

    Raises TooManyFeatures beyond 16 features and EmptyBackground when no
    reference rows are given.
    """
    _require_tree_model(model)
    row = np.asarray(row, dtype=float).ravel()
    background = np.asarray(background_rows, dtype=float)
    if background.ndim != 2 or background.shape[0] == 0:
        raise EmptyBackground("need at least one background row")
    d = row.size
    if d > MAX_EXACT_FEATURES:
        raise TooManyFeatures(f"{d} features > {MAX_EXACT_FEATURES}")
    if background.shape[1] != d:
        raise ValueError("background width does not match the explained row")

    v = coalition_value_table(model, row, background)
    # w[s] = s! (d-1-s)! / d!, the Shapley kernel over coalition sizes.
    w = np.array([math.factorial(s) * math.factorial(d - 1 - s) / math.factorial(d)
                  for s in range(d)])
    sizes = np.array([bin(m).count("1") for m in range(1 << d)])
    phi = np.zeros(d)
    for i in range(d):
        bit = 1 << i
        without = np.flatnonzero((np.arange(1 << d) & bit) == 0)
        phi[i] = float(np.sum(w[sizes[without]] * (v[without | bit] - v[without])))
    names = tuple(getattr(model, "feature_names", [f"f{i}" for i in range(d)]))
    return Explanation(base_value=float(v[0]), shap_values=phi,
                       feature_values=row, feature_names=names)


def mean_abs_shap(model, rows, background):
    """Mean |shap| per feature over the rows, ranked descending.

    Returns (feature_name, mean_abs_value) pairs; ties keep feature order.
    """
    rows = np.asarray(rows, dtype=float)
    if rows.ndim != 2 or rows.shape[0] == 0:
        raise ValueError("need at least one row to explain")
    totals = np.zeros(rows.shape[1])
    names = None
    for row in rows:
        exp = shap_values(model, row, background)
        totals += np.abs(exp.shap_values)
        names = exp.feature_names
    means = totals / rows.shape[0]
    order = np.lexsort((np.arange(len(means)), -means))
    return [(names[i], float(means[i])) for i in order]


def beeswarm_export(model, rows, background):
    """Long-format (row, feature, shap, feature_value) records.

    Features are ordered by total |shap| over all rows, descending, which
    is the usual beeswarm panel order.
    """
    rows = np.asarray(rows, dtype=float)
    if rows.size == 0:
        return []
    explanations = [shap_values(model, row, background) for row in rows]
    names = explanations[0].feature_names
    totals = np.abs(np.stack([e.shap_values for e in explanations])).sum(axis=0)
    order = np.lexsort((np.arange(len(totals)), -totals))
    records = []
    for j in order:
        for i, exp in enumerate(explanations):
            records.append({"row": i, "feature": names[j],
                            "shap": float(exp.shap_values[j]),
                            "feature_value": float(exp.feature_values[j])})
    return records


def write_beeswarm_csv(path, records):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["row", "feature", "shap", "feature_value"])
        for rec in records:
            writer.writerow([rec["row"], rec["feature"],
                             repr(rec["shap"]), repr(rec["feature_value"])])
