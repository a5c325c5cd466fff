"""scikit-learn style wrapper around the training loop.

``X`` is always a list of :class:`~cadnet.dataset.RecordingFeatures`; window
labels travel inside it, so ``y`` is accepted and ignored. Outputs are flat
arrays over every window of every recording, in manifest then time order.
"""

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_is_fitted

from .dataset import RecordingFeatures
from .evaluation import evaluate
from .model import load_embeddings, predict_segments, recording_inputs
from .nn import VARIANTS
from .training import TrainConfig, fit, init_model


def _check_recordings(X):
    X = list(X)
    if not X:
        raise ValueError("expected a non-empty list of RecordingFeatures")
    bad = [type(x).__name__ for x in X if not isinstance(x, RecordingFeatures)]
    if bad:
        raise TypeError(f"expected RecordingFeatures items, got {bad[0]}")
    return X


class SiameseCAD(ClassifierMixin, BaseEstimator):
    """Teacher-vs-student window classifier.

    Parameters mirror :class:`~cadnet.training.TrainConfig`. After ``fit``
    the trained :class:`~cadnet.model.CadModel` is in ``model_`` and the
    checkpoint in ``checkpoint_``.
    """

    def __init__(self, variant="gru", lr=0.05, batch_size=8, epochs=30, clip_norm=5.0,
                 seed=0, raw_dim=64, positional=True, embeddings=None):
        self.variant = variant
        self.lr = lr
        self.batch_size = batch_size
        self.epochs = epochs
        self.clip_norm = clip_norm
        self.seed = seed
        self.raw_dim = raw_dim
        self.positional = positional
        self.embeddings = embeddings

    def _config(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}; choose from {VARIANTS}")
        return TrainConfig(lr=self.lr, batch_size=self.batch_size, epochs=self.epochs,
                           clip_norm=self.clip_norm, seed=self.seed, variant=self.variant,
                           raw_dim=self.raw_dim, positional=self.positional,
                           raw_mode="external" if self.embeddings else "stats_affine",
                           embeddings=self.embeddings)

    def _embeddings(self):
        if self.embeddings is None or isinstance(self.embeddings, dict):
            return self.embeddings
        return load_embeddings(self.embeddings)

    def fit(self, X, y=None, validation=None):
        X = _check_recordings(X)
        config = self._config()
        model = init_model(config, X)
        self.checkpoint_ = fit(model, X, config, validation, self._embeddings())
        self.model_ = model
        self.history_ = self.checkpoint_.history
        self.classes_ = np.array([0, 1])
        return self

    def decision_function(self, X):
        """Raw scores ``s`` for every window."""
        check_is_fitted(self, "model_")
        X = _check_recordings(X)
        emb = self._embeddings()
        out = []
        for feats in X:
            enroll, segs = recording_inputs(feats, self.model_, emb)
            out.extend(s for s, _ in predict_segments(enroll, segs, self.model_))
        return np.concatenate(out) if out else np.zeros(0)

    def predict_proba(self, X):
        s = self.decision_function(X)
        p = 1.0 / (1.0 + np.exp(-s))
        return np.column_stack([1.0 - p, p])

    def predict(self, X, threshold=0.5):
        return (self.predict_proba(X)[:, 1] >= threshold).astype(np.int64)

    def score(self, X, y=None, sample_weight=None):
        """Pooled window ROC-AUC (not accuracy)."""
        check_is_fitted(self, "model_")
        return evaluate(self.model_, _check_recordings(X), embeddings=self._embeddings()).auc
