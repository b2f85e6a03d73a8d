"""k-nearest-neighbor classifier over standardized training rows."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import KTooLarge


@dataclass
class KnnModel:
    """Majority vote of the k Euclidean-nearest standardized training rows.

    Standardization parameters come from the training rows, so predictions
    are invariant to per-feature affine rescaling of the raw inputs.
    Distance ties break toward the lower training-row index; vote ties
    toward class 0.
    """

    kind: str
    k: int
    z_train: np.ndarray
    y_train: np.ndarray
    mean: np.ndarray
    std: np.ndarray
    feature_names: list
    hyperparameters: dict

    def predict(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        z = (X - self.mean) / self.std
        out = np.empty(X.shape[0], dtype=int)
        for i, row in enumerate(z):
            d = np.sqrt(((self.z_train - row) ** 2).sum(axis=1))
            nbrs = np.lexsort((np.arange(len(d)), d))[:self.k]
            ones = int(self.y_train[nbrs].sum())
            out[i] = 1 if 2 * ones > self.k else 0
        return out

    def predict_proba(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        z = (X - self.mean) / self.std
        out = np.empty(X.shape[0])
        for i, row in enumerate(z):
            d = np.sqrt(((self.z_train - row) ** 2).sum(axis=1))
            nbrs = np.lexsort((np.arange(len(d)), d))[:self.k]
            out[i] = self.y_train[nbrs].mean()
        return out

    @property
    def n_features(self) -> int:
        return len(self.feature_names)


def train_knn(X, y, k: int, feature_names=None) -> KnnModel:
    """Store standardized training data for majority-vote prediction."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y).astype(int)
    if np.isnan(X).any():
        raise ValueError("training matrix contains missing values; impute first")
    if not np.isin(y, (0, 1)).all():
        raise ValueError("labels must be binary 0/1")
    if k < 1:
        raise ValueError("k must be >= 1")
    if k > X.shape[0]:
        raise KTooLarge(f"k={k} exceeds {X.shape[0]} training rows")
    names = list(feature_names) if feature_names is not None else [f"f{i}" for i in range(X.shape[1])]
    mean = X.mean(axis=0)
    std = X.std(axis=0)
    std = np.where(std > 0, std, 1.0)
    return KnnModel(kind="knn", k=k, z_train=(X - mean) / std, y_train=y,
                    mean=mean, std=std, feature_names=names,
                    hyperparameters={"k": int(k)})
