"""scikit-learn style wrappers around the training core: a hashing text
vectorizer and fit/predict classifiers for the zeroth-order and first-order
trainers. Hyperparameters are constructor params (get_params/set_params
compatible); all validation happens in fit, per sklearn convention.
"""

from __future__ import annotations

from types import SimpleNamespace

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .data import FeatureExtractor
from .models import (
    FOConfig,
    LinearClassifier,
    attach_lora,
    predict as model_predict,
    theta_evaluator,
    train_fo,
)
from .zo import ZOConfig, train_zo

__all__ = ["HashingTextVectorizer", "ZeroOrderClassifier", "FirstOrderClassifier"]


class HashingTextVectorizer(TransformerMixin, BaseEstimator):
    """Stateless signed hashing of token bags into a fixed dimension."""

    def __init__(self, dimension: int = 64):
        self.dimension = dimension

    def fit(self, X, y=None):
        FeatureExtractor(dimension=self.dimension)  # validates the dimension
        self.n_features_in_ = 1
        return self

    def transform(self, X) -> np.ndarray:
        extractor = FeatureExtractor(dimension=self.dimension)
        return np.stack([extractor.vector(str(text)) for text in X])


def _encode_labels(y):
    classes, y_idx = np.unique(y, return_inverse=True)
    if classes.shape[0] < 2:
        raise ValueError("training data needs at least two classes")
    return classes, y_idx


class ZeroOrderClassifier(ClassifierMixin, BaseEstimator):
    """Linear softmax classifier trained with two-point zeroth-order steps.

    Only forward evaluations of the loss are used; the update direction is
    regenerated from (master_seed, step) exactly as in zo.mezo_step.
    """

    def __init__(
        self,
        learning_rate: float = 0.1,
        steps: int = 1000,
        batch_size: int = 16,
        delta: float = 1e-3,
        master_seed: int = 0,
    ):
        self.learning_rate = learning_rate
        self.steps = steps
        self.batch_size = batch_size
        self.delta = delta
        self.master_seed = master_seed

    def fit(self, X, y):
        X, y = check_X_y(X, y)
        self.classes_, y_idx = _encode_labels(y)
        self.n_features_in_ = X.shape[1]
        model = LinearClassifier.init(
            self.classes_.shape[0], X.shape[1], seed=self.master_seed
        )
        theta = model.to_theta()
        config = ZOConfig(
            learning_rate=self.learning_rate,
            steps=self.steps,
            batch_size=self.batch_size,
            delta=self.delta,
            master_seed=self.master_seed,
        )
        data = SimpleNamespace(train_x=X, train_y=y_idx)
        self.trace_ = train_zo(theta_evaluator(model), theta, data, config)
        model.load_theta(theta)
        self.model_ = model
        return self

    def predict(self, X):
        check_is_fitted(self, "model_")
        X = check_array(X)
        return self.classes_[model_predict(self.model_, X)]

    def predict_proba(self, X):
        check_is_fitted(self, "model_")
        X = check_array(X)
        logits = self.model_.logits(X)
        shifted = np.exp(logits - logits.max(axis=1, keepdims=True))
        return shifted / shifted.sum(axis=1, keepdims=True)


class FirstOrderClassifier(ClassifierMixin, BaseEstimator):
    """Linear softmax classifier trained with AdamW; mode='lora' freezes a
    seeded random base and trains rank-r adapter factors only."""

    def __init__(
        self,
        learning_rate: float = 0.01,
        steps: int = 300,
        batch_size: int = 16,
        weight_decay: float = 0.0,
        mode: str = "full",
        rank: int = 4,
        master_seed: int = 0,
    ):
        self.learning_rate = learning_rate
        self.steps = steps
        self.batch_size = batch_size
        self.weight_decay = weight_decay
        self.mode = mode
        self.rank = rank
        self.master_seed = master_seed

    def fit(self, X, y):
        if self.mode not in ("full", "lora"):
            raise ValueError(f"mode must be 'full' or 'lora', got {self.mode!r}")
        X, y = check_X_y(X, y)
        self.classes_, y_idx = _encode_labels(y)
        self.n_features_in_ = X.shape[1]
        model = LinearClassifier.init(
            self.classes_.shape[0], X.shape[1], seed=self.master_seed
        )
        if self.mode == "lora":
            model = attach_lora(model, rank=self.rank, seed=self.master_seed)
        config = FOConfig(
            learning_rate=self.learning_rate,
            steps=self.steps,
            batch_size=self.batch_size,
            weight_decay=self.weight_decay,
            master_seed=self.master_seed,
        )
        data = SimpleNamespace(train_x=X, train_y=y_idx)
        self.trace_ = train_fo(model, data, config, mode=self.mode)
        self.model_ = model
        return self

    def predict(self, X):
        check_is_fitted(self, "model_")
        X = check_array(X)
        return self.classes_[model_predict(self.model_, X)]

    def predict_proba(self, X):
        check_is_fitted(self, "model_")
        X = check_array(X)
        logits = self.model_.logits(X)
        shifted = np.exp(logits - logits.max(axis=1, keepdims=True))
        return shifted / shifted.sum(axis=1, keepdims=True)
