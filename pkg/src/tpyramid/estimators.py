"""scikit-learn wrapper around the end-to-end pyramid network."""

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.exceptions import NotFittedError
from sklearn.preprocessing import LabelEncoder

from .deep import STREAMS, TrainConfig, TwoStreamData, evaluate, train
from .metrics import mean_class_accuracy


class DeepPyramidClassifier(ClassifierMixin, BaseEstimator):
    """Two-stream temporal pyramid network with learned node and fusion weights.

    ``X`` is a sequence of videos. With ``stream="joint"`` each video is a
    ``(motion, appearance)`` pair of (T, d) arrays, or a dict with those keys;
    otherwise each video is a single (T, d) array for the chosen stream.

    The constructor parameters mirror :class:`~tpyramid.deep.TrainConfig`.
    """

    def __init__(self, depth=3, pyramids=1, variant="concat", encoder="mlp", activation="tanh",
                 d_enc=32, projection="linear", node_dim=128, reduce_dim=128, batch_size=8,
                 epochs=50, lr_motion=0.005, lr_appearance=0.001, lr_fusion=0.005,
                 decay_factor=10.0, decay_epochs_motion=(), decay_epochs_appearance=(),
                 weight_decay=1e-4, momentum=0.0, speedup_k=1, stream="joint",
                 bn_momentum=0.9, bn_eps=1e-5, shuffle=True, seed=0, threads=1):
        self.depth = depth
        self.pyramids = pyramids
        self.variant = variant
        self.encoder = encoder
        self.activation = activation
        self.d_enc = d_enc
        self.projection = projection
        self.node_dim = node_dim
        self.reduce_dim = reduce_dim
        self.batch_size = batch_size
        self.epochs = epochs
        self.lr_motion = lr_motion
        self.lr_appearance = lr_appearance
        self.lr_fusion = lr_fusion
        self.decay_factor = decay_factor
        self.decay_epochs_motion = decay_epochs_motion
        self.decay_epochs_appearance = decay_epochs_appearance
        self.weight_decay = weight_decay
        self.momentum = momentum
        self.speedup_k = speedup_k
        self.stream = stream
        self.bn_momentum = bn_momentum
        self.bn_eps = bn_eps
        self.shuffle = shuffle
        self.seed = seed
        self.threads = threads

    def _config(self):
        return TrainConfig(**self.get_params())

    def _data(self, X, labels):
        if self.stream == "joint":
            motion, appearance = [], []
            for video in X:
                if isinstance(video, dict):
                    motion.append(video["motion"])
                    appearance.append(video["appearance"])
                else:
                    m, a = video
                    motion.append(m)
                    appearance.append(a)
            return TwoStreamData(labels, motion, appearance, n_classes=len(self.classes_))
        kwargs = {s: None for s in STREAMS}
        kwargs[self.stream] = list(X)
        return TwoStreamData(labels, n_classes=len(self.classes_), **kwargs)

    def fit(self, X, y):
        cfg = self._config()
        self._encoder = LabelEncoder().fit(y)
        self.classes_ = self._encoder.classes_
        data = self._data(X, self._encoder.transform(y))
        self.model_, self.trace_ = train(data, cfg)
        self.n_features_in_ = data.dims()[cfg.streams[0]]
        return self

    def predict_proba(self, X):
        if not hasattr(self, "model_"):
            raise NotFittedError("DeepPyramidClassifier is not fitted yet")
        data = self._data(X, np.zeros(len(X), dtype=int))
        probs = []
        for start in range(0, len(data), 64):
            idx = np.arange(start, min(start + 64, len(data)))
            probs.append(self.model_.predict_proba(data.batch(idx, self.model_.config.streams))["fused"])
        return np.concatenate(probs)

    def predict(self, X):
        return self.classes_[np.argmax(self.predict_proba(X), axis=1)]

    def score(self, X, y, sample_weight=None):
        """Mean of per-class accuracies."""
        return mean_class_accuracy(self._encoder.transform(y), np.argmax(self.predict_proba(X), 1),
                                   len(self.classes_))

    def evaluate(self, X, y):
        return evaluate(self.model_, self._data(X, self._encoder.transform(y)))
