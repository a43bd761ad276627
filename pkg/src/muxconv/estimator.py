"""scikit-learn estimator facade over the toy trainer.

Wraps the pruned+binarized conv net as a classifier with the standard
``fit`` / ``predict`` / ``get_params`` surface so it can sit in sklearn
pipelines and grid searches. Inputs are image batches shaped
(n, height, width) or (n, height, width, channels).
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_random_state

from .training import accuracy, build_toy_network, forward, predict, train, ToyDataset


class PrunedBinaryConvClassifier(BaseEstimator, ClassifierMixin):
    """Image classifier trained with sign-binarized, rule-pruned 3x3 convs.

    Parameters
    ----------
    conv_channels : tuple of int
        Output maps of each conv+ReLU block.
    masks : str
        "default" keeps the stem dense and prunes deeper layers with the
        deterministic rule; "deterministic" prunes everything; "full"
        disables pruning.
    binarized : bool
        Use sign weights in forward/backward (latent weights still train).
    epochs, lr, batch_size : SGD settings.
    random_state : seed for init and batch shuffling.
    """

    def __init__(self, conv_channels=(8, 8), masks="default", binarized=True,
                 epochs=30, lr=0.05, batch_size=32, random_state=None):
        self.conv_channels = conv_channels
        self.masks = masks
        self.binarized = binarized
        self.epochs = epochs
        self.lr = lr
        self.batch_size = batch_size
        self.random_state = random_state

    def _as_images(self, X):
        X = check_array(X, allow_nd=True, dtype=np.float64)
        if X.ndim == 3:
            X = X[..., None]
        if X.ndim != 4:
            raise ValueError(f"expected (n, h, w[, c]) images, got shape {X.shape}")
        return X

    def fit(self, X, y):
        X = self._as_images(X)
        y = np.asarray(y)
        if y.ndim != 1 or len(y) != len(X):
            raise ValueError("y must be one label per image")
        seed = check_random_state(self.random_state).randint(2**31)
        self.classes_, y_idx = np.unique(y, return_inverse=True)
        self.network_ = build_toy_network(
            X.shape[3], tuple(self.conv_channels), classes=len(self.classes_),
            masks=self.masks, binarized=self.binarized, seed=seed)
        dataset = ToyDataset(X, y_idx, X[:0], y_idx[:0],
                             classes=len(self.classes_), seed=seed)
        self.history_ = train(self.network_, dataset, self.epochs, self.lr,
                              seed=seed, batch_size=self.batch_size)
        self.n_features_in_ = X[0].size
        return self

    def predict(self, X):
        check_is_fitted(self, "network_")
        idx = predict(self.network_, self._as_images(X))
        return self.classes_[idx]

    def predict_proba(self, X):
        check_is_fitted(self, "network_")
        logits, _, _, _ = forward(self.network_, self._as_images(X))
        shifted = logits - logits.max(axis=1, keepdims=True)
        e = np.exp(shifted)
        return e / e.sum(axis=1, keepdims=True)

    def score(self, X, y):
        check_is_fitted(self, "network_")
        y = np.asarray(y)
        idx = np.searchsorted(self.classes_, y)
        return accuracy(self.network_, self._as_images(X), idx)
