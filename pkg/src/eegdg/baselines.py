"""Classical comparison regressors: k-nearest-neighbors and ridge regression."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InsufficientDataError, ShapeError


@dataclass
class KnnModel:
    train_features: np.ndarray  # N x d
    train_labels: np.ndarray  # N
    k: int = 5
    standardize: bool = False
    _mean: np.ndarray = field(default=None, repr=False)
    _std: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        self.train_features = np.atleast_2d(np.asarray(self.train_features, float))
        self.train_labels = np.asarray(self.train_labels, float)
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if self.standardize:
            self._mean = self.train_features.mean(axis=0)
            self._std = self.train_features.std(axis=0)
            self._std = np.where(self._std > 0, self._std, 1.0)
            self.train_features = (self.train_features - self._mean) / self._std


def knn_predict(model: KnnModel, x: np.ndarray):
    """Mean label of the k nearest training points (Euclidean distance).

    Distance ties are broken by lowest training index. Accepts a single query
    vector or a batch of rows.
    """
    n = len(model.train_labels)
    if n < model.k:
        raise InsufficientDataError(f"need at least k={model.k} training points, have {n}")
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    queries = np.atleast_2d(x)
    if queries.shape[1] != model.train_features.shape[1]:
        raise ShapeError("query feature dimension mismatch")
    if model.standardize:
        queries = (queries - model._mean) / model._std
    out = np.empty(len(queries))
    for i, q in enumerate(queries):
        dist = np.linalg.norm(model.train_features - q, axis=1)
        nearest = np.argsort(dist, kind="stable")[: model.k]
        out[i] = model.train_labels[nearest].mean()
    return float(out[0]) if single else out


@dataclass
class RidgeModel:
    weights: np.ndarray  # d
    intercept: float
    alpha_l2: float = 0.1
    standardize: bool = False
    _mean: np.ndarray = field(default=None, repr=False)
    _std: np.ndarray = field(default=None, repr=False)


def ridge_fit(X: np.ndarray, y: np.ndarray, alpha_l2: float = 0.1,
              standardize: bool = False) -> RidgeModel:
    """Minimize ||y - Xw - b||^2 + alpha_l2 ||w||^2 with an unpenalized intercept.

    Solved via normal equations on mean-centered data; at alpha_l2 = 0 a
    singular system falls back to the pseudo-inverse (minimum-norm) solution.
    """
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    y = np.asarray(y, dtype=np.float64)
    if alpha_l2 < 0:
        raise ValueError("alpha_l2 must be >= 0")
    mean = std = None
    if standardize:
        mean = X.mean(axis=0)
        std = X.std(axis=0)
        std = np.where(std > 0, std, 1.0)
        X = (X - mean) / std
    x_mean = X.mean(axis=0)
    y_mean = y.mean()
    Xc = X - x_mean
    yc = y - y_mean
    gram = Xc.T @ Xc + alpha_l2 * np.eye(X.shape[1])
    rhs = Xc.T @ yc
    try:
        w = np.linalg.solve(gram, rhs)
    except np.linalg.LinAlgError:
        w = np.linalg.pinv(gram) @ rhs
    b = y_mean - float(x_mean @ w)
    return RidgeModel(weights=w, intercept=b, alpha_l2=alpha_l2,
                      standardize=standardize, _mean=mean, _std=std)


def ridge_predict(model: RidgeModel, x: np.ndarray):
    """w^T x + b, for a single vector or a batch of rows."""
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    X = np.atleast_2d(x)
    if X.shape[1] != len(model.weights):
        raise ShapeError("query feature dimension mismatch")
    if model.standardize:
        X = (X - model._mean) / model._std
    out = X @ model.weights + model.intercept
    return float(out[0]) if single else out
