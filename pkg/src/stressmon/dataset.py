"""Feature-matrix assembly: featurize windows, label from EMAs, impute.

Windows are labeled by the closest subsequent self-report of the same user
(within an 8-hour horizon), the 5-point Likert answer is binarized
(1 -> 0, 2..5 -> 1), and missing contextual cells are filled with a
k-d-tree k-nearest-neighbor weighted average over standardized rows.
"""
from __future__ import annotations

import bisect
import csv
import json
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.spatial import cKDTree

from . import hrv as hrv_mod
from . import signals
from .context import CONTEXT_FEATURE_NAMES, ContextSchema, extract_context_features
from .errors import (DataFormatError, EmptyColumn, InsufficientSpan,
                     NoPlausiblePeaks, OutOfRange, TooFewIntervals, TooShort)

LABEL_HORIZON_MS = 8 * 3600 * 1000
DEFAULT_IMPUTE_K = 5
DEFAULT_IMPUTE_WEIGHTING = "inverse_distance"

#: Fixed matrix column order: the 12 HRV features then the 12 context features.
FEATURE_COLUMNS = tuple(hrv_mod.HRV_FEATURE_NAMES) + tuple(CONTEXT_FEATURE_NAMES)


@dataclass(frozen=True)
class EmaResponse:
    """A timestamped stress self-report on the 1..5 Likert scale."""

    user_id: str
    timestamp_ms: int
    stress_level: int

    def __post_init__(self):
        if self.stress_level not in (1, 2, 3, 4, 5):
            raise OutOfRange(f"stress level must be 1..5, got {self.stress_level}")


@dataclass
class FeatureWindow:
    """One 15-minute window's features plus its (optional) label."""

    user_id: str
    window_start_ms: int
    hrv: hrv_mod.HrvFeatures | None
    context: dict
    label5: int | None = None
    label2: int | None = None


@dataclass
class FeatureMatrix:
    """Rectangular feature table with a missingness mask, labels and groups."""

    columns: tuple
    values: np.ndarray          # (n, d) float64, NaN where missing
    missing: np.ndarray         # (n, d) bool
    labels: np.ndarray          # (n,) float64, NaN where unlabeled
    groups: list                # user id per row
    window_starts: np.ndarray   # (n,) int64

    def __post_init__(self):
        n, d = self.values.shape
        assert self.missing.shape == (n, d)
        assert self.labels.shape == (n,)
        assert len(self.groups) == n and self.window_starts.shape == (n,)

    @property
    def n_rows(self) -> int:
        return self.values.shape[0]

    def select_rows(self, idx) -> "FeatureMatrix":
        idx = np.asarray(idx)
        return FeatureMatrix(self.columns, self.values[idx], self.missing[idx],
                             self.labels[idx], [self.groups[i] for i in idx],
                             self.window_starts[idx])

    def select_columns(self, names) -> "FeatureMatrix":
        pos = [self.columns.index(c) for c in names]
        return FeatureMatrix(tuple(names), self.values[:, pos], self.missing[:, pos],
                             self.labels, list(self.groups), self.window_starts)


def featurize_windows(raw_windows, schema: ContextSchema,
                      design: signals.FilterDesign | None = None):
    """Band-pass + HRV + context extraction for each raw window.

    Windows whose PPG burst yields no plausible beat train keep ``hrv=None``
    rather than failing the batch.
    """
    design = design or signals.default_design()
    out = []
    for raw in raw_windows:
        features = None
        if raw.ppg is not None:
            try:
                filtered = signals.bandpass_filter(raw.ppg, design)
                features = hrv_mod.burst_hrv(filtered)
            except (TooShort, NoPlausiblePeaks, TooFewIntervals, InsufficientSpan):
                features = None
        context = extract_context_features(raw.snapshots, schema)
        out.append(FeatureWindow(user_id=raw.user_id, window_start_ms=raw.start_ms,
                                 hrv=features, context=context))
    return out


def binarize(label5: int) -> int:
    """Map the Likert answer to the binary target: 1 -> 0, 2..5 -> 1."""
    if label5 not in (1, 2, 3, 4, 5):
        raise OutOfRange(f"stress level must be 1..5, got {label5}")
    return 0 if label5 == 1 else 1


def label_windows(windows, emas, horizon_ms: int = LABEL_HORIZON_MS):
    """Attach each window the earliest same-user EMA at or after its start.

    Windows with no subsequent EMA within ``horizon_ms`` stay unlabeled.
    Returns new FeatureWindow objects; the inputs are not mutated.
    """
    by_user = {}
    for ema in emas:
        by_user.setdefault(ema.user_id, []).append(ema)
    for seq in by_user.values():
        seq.sort(key=lambda e: e.timestamp_ms)
    times = {u: [e.timestamp_ms for e in seq] for u, seq in by_user.items()}

    labeled = []
    for win in windows:
        label5 = None
        seq = by_user.get(win.user_id)
        if seq:
            i = bisect.bisect_left(times[win.user_id], win.window_start_ms)
            if i < len(seq) and seq[i].timestamp_ms - win.window_start_ms <= horizon_ms:
                label5 = seq[i].stress_level
        labeled.append(replace(win, label5=label5,
                               label2=None if label5 is None else binarize(label5)))
    return labeled


def assemble(windows) -> FeatureMatrix:
    """Stack feature windows into a matrix, rows sorted by (user, start)."""
    ordered = sorted(windows, key=lambda w: (w.user_id, w.window_start_ms))
    n, d = len(ordered), len(FEATURE_COLUMNS)
    values = np.full((n, d), np.nan)
    labels = np.full(n, np.nan)
    starts = np.zeros(n, dtype=np.int64)
    groups = []
    n_hrv = len(hrv_mod.HRV_FEATURE_NAMES)
    for i, win in enumerate(ordered):
        groups.append(win.user_id)
        starts[i] = win.window_start_ms
        if win.hrv is not None:
            for j, name in enumerate(hrv_mod.HRV_FEATURE_NAMES):
                values[i, j] = getattr(win.hrv, name)
        for j, name in enumerate(CONTEXT_FEATURE_NAMES):
            v = win.context.get(name)
            if v is not None:
                values[i, n_hrv + j] = float(v)
        if win.label2 is not None:
            labels[i] = win.label2
    return FeatureMatrix(columns=FEATURE_COLUMNS, values=values,
                         missing=np.isnan(values), labels=labels,
                         groups=groups, window_starts=starts)


def drop_rows_missing_block(matrix: FeatureMatrix, columns) -> FeatureMatrix:
    """Drop rows missing every one of the given columns (e.g. no PPG at all)."""
    pos = [matrix.columns.index(c) for c in columns]
    keep = ~matrix.missing[:, pos].all(axis=1)
    return matrix.select_rows(np.flatnonzero(keep))


class KnnImputer:
    """Mean-impute, then refine missing cells from k nearest rows.

    Fitting builds a complete working copy (column means in the holes) and
    a k-d tree over rows standardized by the observed per-column mean/std.
    Each missing cell is then replaced by the weighted average of its k
    nearest neighbors' values in that column, preferring originally
    observed donor values and falling back to the donors' mean-imputed
    values when none were observed.
    """

    def __init__(self, k: int = DEFAULT_IMPUTE_K,
                 weighting: str = DEFAULT_IMPUTE_WEIGHTING):
        if k < 1:
            raise ValueError("k must be >= 1")
        if weighting not in ("uniform", "inverse_distance"):
            raise ValueError(f"unknown weighting {weighting!r}")
        self.k = k
        self.weighting = weighting

    def fit(self, values: np.ndarray, missing: np.ndarray) -> "KnnImputer":
        observed = ~missing
        if not observed.any(axis=0).all():
            bad = int(np.flatnonzero(~observed.any(axis=0))[0])
            raise EmptyColumn(f"column {bad} has no observed values")
        counts = observed.sum(axis=0)
        filled = np.where(missing, 0.0, values)
        self.col_means_ = filled.sum(axis=0) / counts
        sq = np.where(missing, 0.0, (values - self.col_means_) ** 2)
        std = np.sqrt(sq.sum(axis=0) / counts)
        self.col_stds_ = np.where(std > 0, std, 1.0)
        self.working_ = np.where(missing, self.col_means_, values)
        self.train_missing_ = missing.copy()
        self.z_ = (self.working_ - self.col_means_) / self.col_stds_
        self.tree_ = cKDTree(self.z_)
        return self

    def transform(self, values: np.ndarray, missing: np.ndarray,
                  exclude_self: bool = False) -> np.ndarray:
        """Return a complete copy; `exclude_self` when rows are the fit rows."""
        out = np.array(values, dtype=float)
        if not missing.any():
            return out
        z = (np.where(missing, self.col_means_, values) - self.col_means_) / self.col_stds_
        for i in np.flatnonzero(missing.any(axis=1)):
            nbrs, dists = self._neighbors(z[i], i if exclude_self else None)
            for j in np.flatnonzero(missing[i]):
                donors = ~self.train_missing_[nbrs, j]
                use = np.flatnonzero(donors) if donors.any() else np.arange(len(nbrs))
                if self.weighting == "inverse_distance":
                    w = 1.0 / (dists[use] + 1e-9)
                else:
                    w = np.ones(len(use))
                vals = self.working_[nbrs[use], j]
                out[i, j] = float(np.dot(w, vals) / w.sum())
        return out

    def _neighbors(self, z_row: np.ndarray, self_index):
        """k nearest training rows; distance ties broken by lower row index."""
        n = self.z_.shape[0]
        k_eff = min(self.k, n - (1 if self_index is not None else 0))
        k_eff = max(k_eff, 1)
        k_query = min(n, k_eff + (1 if self_index is not None else 0))
        dists, _ = self.tree_.query(z_row, k=k_query)
        dists = np.atleast_1d(dists)
        radius = float(dists[-1]) * (1.0 + 1e-9) + 1e-12
        cand = np.array(self.tree_.query_ball_point(z_row, radius), dtype=int)
        if self_index is not None:
            cand = cand[cand != self_index]
        if cand.size < k_eff:  # radius fell short (exotic float edge); widen fully
            cand = np.arange(n)
            if self_index is not None:
                cand = cand[cand != self_index]
        d = np.sqrt(((self.z_[cand] - z_row) ** 2).sum(axis=1))
        order = np.lexsort((cand, d))[:k_eff]
        return cand[order], d[order]


def knn_impute(matrix: FeatureMatrix, k: int = DEFAULT_IMPUTE_K,
               weighting: str = DEFAULT_IMPUTE_WEIGHTING) -> FeatureMatrix:
    """Complete a matrix in place of its missing cells; see KnnImputer."""
    if not matrix.missing.any():
        return replace(matrix, values=matrix.values.copy(),
                       missing=matrix.missing.copy())
    imputer = KnnImputer(k=k, weighting=weighting).fit(matrix.values, matrix.missing)
    completed = imputer.transform(matrix.values, matrix.missing, exclude_self=True)
    return replace(matrix, values=completed,
                   missing=np.zeros_like(matrix.missing))


# -- file formats -------------------------------------------------------------

def write_matrix_csv(matrix: FeatureMatrix, path, imputation=None):
    """Write the matrix as CSV (missing cells empty) plus a JSON sidecar."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["user_id", "window_start_ms", "label", *matrix.columns])
        for i in range(matrix.n_rows):
            label = "" if np.isnan(matrix.labels[i]) else str(int(matrix.labels[i]))
            cells = ["" if matrix.missing[i, j] else repr(float(matrix.values[i, j]))
                     for j in range(len(matrix.columns))]
            writer.writerow([matrix.groups[i], int(matrix.window_starts[i]), label, *cells])
    meta = {
        "label_column": "label",
        "group_column": "user_id",
        "imputation": imputation or {"k": DEFAULT_IMPUTE_K,
                                     "weighting": DEFAULT_IMPUTE_WEIGHTING},
    }
    with open(sidecar_path(path), "w", encoding="utf-8") as fh:
        json.dump(meta, fh, indent=2)
        fh.write("\n")


def sidecar_path(csv_path):
    return str(csv_path) + ".meta.json"


def read_matrix_csv(path) -> FeatureMatrix:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataFormatError(f"{path}: empty file") from None
        if header[:3] != ["user_id", "window_start_ms", "label"]:
            raise DataFormatError(f"{path}: unexpected header {header[:3]}")
        columns = tuple(header[3:])
        groups, starts, labels, rows = [], [], [], []
        for lineno, row in enumerate(reader, start=2):
            try:
                groups.append(row[0])
                starts.append(int(row[1]))
                labels.append(float(row[2]) if row[2] != "" else np.nan)
                rows.append([float(c) if c != "" else np.nan for c in row[3:]])
            except (ValueError, IndexError) as err:
                raise DataFormatError(f"{path}:{lineno}: bad matrix row: {err}") from err
    values = np.array(rows, dtype=float) if rows else np.empty((0, len(columns)))
    return FeatureMatrix(columns=columns, values=values, missing=np.isnan(values),
                         labels=np.array(labels, dtype=float),
                         groups=groups, window_starts=np.array(starts, dtype=np.int64))


def read_ema_csv(path):
    emas = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        for lineno, row in enumerate(reader, start=2):
            try:
                emas.append(EmaResponse(user_id=row["user_id"],
                                        timestamp_ms=int(row["timestamp_ms"]),
                                        stress_level=int(row["stress_level"])))
            except (KeyError, TypeError, ValueError, OutOfRange) as err:
                raise DataFormatError(f"{path}:{lineno}: bad EMA record: {err}") from err
    return emas


def write_ema_csv(path, emas):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["timestamp_ms", "user_id", "stress_level"])
        for ema in emas:
            writer.writerow([ema.timestamp_ms, ema.user_id, ema.stress_level])
