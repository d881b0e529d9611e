"""Scikit-learn style wrappers around the KAN and PatchNet trainers.

Both classifiers follow the estimator contract (get_params/set_params,
fit returning self, predict/predict_proba, score via ClassifierMixin), so
they compose with sklearn pipelines, clone() and model selection helpers.
An optional validation set drives early stopping; without one, training
loss is tracked instead.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.exceptions import NotFittedError
from sklearn.utils.validation import check_array, check_X_y

from .cnn import build_patchnet
from .kan import SplineGrid, build_kan
from .trainer import TrainConfig, fit_network


def _check_fitted(estimator, attr: str = "network_"):
    if not hasattr(estimator, attr):
        raise NotFittedError(
            f"This {type(estimator).__name__} instance is not fitted yet; call fit first."
        )


class _PatchClassifierBase(BaseEstimator, ClassifierMixin):
    def _encode_labels(self, y):
        self.classes_, encoded = np.unique(y, return_inverse=True)
        return encoded

    def _train_config(self) -> TrainConfig:
        raise NotImplementedError

    def _build_network(self, n_features, n_classes, seed):
        raise NotImplementedError

    def _validate_features(self, X, reset: bool):
        raise NotImplementedError

    def fit(self, X, y, X_val=None, y_val=None):
        X, y = check_X_y(X, y, allow_nd=True, dtype="numeric")
        X = self._validate_features(X, reset=True)
        encoded = self._encode_labels(y)
        n_classes = len(self.classes_)
        if n_classes < 2:
            raise ValueError("need at least 2 classes")
        val_x = val_y = None
        if X_val is not None:
            X_val = check_array(X_val, allow_nd=True, dtype="numeric")
            val_x = self._validate_features(X_val, reset=False)
            y_val = np.asarray(y_val)
            if not np.isin(y_val, self.classes_).all():
                raise ValueError("validation labels contain classes unseen in y")
            val_y = np.searchsorted(self.classes_, y_val)
        seed = 0 if self.random_state is None else int(self.random_state)
        self.network_ = self._build_network(X.shape, n_classes, seed)
        _, self.report_ = fit_network(
            self.network_, X, encoded, val_x, val_y,
            self._train_config(), n_classes, shuffle_seed=[seed, 1],
        )
        return self

    def predict_proba(self, X):
        _check_fitted(self)
        X = check_array(X, allow_nd=True, dtype="numeric")
        X = self._validate_features(X, reset=False)
        probs = np.empty((len(X), len(self.classes_)), dtype=np.float64)
        for start in range(0, len(X), 256):
            batch = X[start:start + 256].astype(self.network_.dtype, copy=False)
            logits = self.network_.forward(batch)
            shifted = logits - logits.max(axis=1, keepdims=True)
            exp = np.exp(shifted)
            probs[start:start + 256] = exp / exp.sum(axis=1, keepdims=True)
        return probs

    def predict(self, X):
        probs = self.predict_proba(X)
        return self.classes_[probs.argmax(axis=1)]


class KanClassifier(_PatchClassifierBase):
    """Kolmogorov-Arnold network classifier on flattened patch vectors.

    Inputs are expected in the spline grid range (symmetric [-1, 1] patch
    tensors by default); values outside are clamped by the spline lookup.
    """

    def __init__(self, hidden_widths=(120, 84), grid_size=5, spline_order=3,
                 grid_range=(-1.0, 1.0), learning_rate=0.05, batch_size=64,
                 epochs=100, patience=10, random_state=0):
        self.hidden_widths = hidden_widths
        self.grid_size = grid_size
        self.spline_order = spline_order
        self.grid_range = grid_range
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.epochs = epochs
        self.patience = patience
        self.random_state = random_state

    def _validate_features(self, X, reset: bool):
        if X.ndim != 2:
            raise ValueError(f"expected 2-d input, got shape {X.shape}")
        if reset:
            self.n_features_in_ = X.shape[1]
        elif X.shape[1] != self.n_features_in_:
            raise ValueError(
                f"X has {X.shape[1]} features, expected {self.n_features_in_}"
            )
        return np.asarray(X, dtype=np.float32)

    def _train_config(self) -> TrainConfig:
        return TrainConfig(
            epochs=self.epochs, batch_size=self.batch_size, optimizer="sgd",
            learning_rate=self.learning_rate, patience=self.patience,
            seed=0 if self.random_state is None else int(self.random_state),
        )

    def _build_network(self, x_shape, n_classes, seed):
        grid = SplineGrid(grid_size=self.grid_size, order=self.spline_order,
                          lo=float(self.grid_range[0]), hi=float(self.grid_range[1]))
        widths = list(self.hidden_widths) + [n_classes]
        return build_kan(widths, input_dim=x_shape[1], grid=grid,
                         n_classes=n_classes, seed=seed)


class PatchNetClassifier(_PatchClassifierBase):
    """PatchNet CNN classifier on (N, 3, side, side) patch tensors."""

    def __init__(self, size="S0", learning_rate=1e-3, batch_size=64,
                 epochs=100, patience=10, random_state=0):
        self.size = size
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.epochs = epochs
        self.patience = patience
        self.random_state = random_state

    def _validate_features(self, X, reset: bool):
        if X.ndim != 4 or X.shape[1] != 3:
            raise ValueError(f"expected (N, 3, side, side) input, got shape {X.shape}")
        if reset:
            self.input_side_ = X.shape[2]
        elif X.shape[2:] != (self.input_side_, self.input_side_):
            raise ValueError(
                f"X has spatial shape {X.shape[2:]}, expected "
                f"({self.input_side_}, {self.input_side_})"
            )
        return np.asarray(X, dtype=np.float32)

    def _train_config(self) -> TrainConfig:
        return TrainConfig(
            epochs=self.epochs, batch_size=self.batch_size, optimizer="adam",
            learning_rate=self.learning_rate, patience=self.patience,
            seed=0 if self.random_state is None else int(self.random_state),
        )

    def _build_network(self, x_shape, n_classes, seed):
        return build_patchnet(self.size, input_side=x_shape[2],
                              n_classes=n_classes, seed=seed)
