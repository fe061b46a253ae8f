import dataclasses
import logging

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_is_fitted

from ..errors import EmptyInput, ShapeError
from .model import NetConfig, build_malite_mn
from .train import TrainConfig, fit

log = logging.getLogger(__name__)


def images_to_tensor(X, dtype=np.float32):
    """uint8 images (n, h, w) or (n, h, w, c) -> NHWC floats in [0, 1]."""
    X = np.asarray(X)
    if X.ndim == 3:
        X = X[..., None]
    if X.ndim != 4:
        raise ShapeError(f"expected (n, h, w[, c]) images, got shape {X.shape}")
    if X.dtype == np.uint8:
        return X.astype(dtype) / dtype(255)
    return X.astype(dtype, copy=False)


class MaliteMNClassifier(ClassifierMixin, BaseEstimator):
    """Bottleneck-block CNN classifier for byteplot images.

    ``config`` fixes the architecture; its ``n_classes`` and
    ``input_channels`` are overridden from the training data.
    """

    def __init__(self, config=None, epochs=20, batch_size=16, lr_start=1e-4,
                 lr_end=5e-5, warmup_steps=100, random_state=0, verbose=False):
        self.config = config
        self.epochs = epochs
        self.batch_size = batch_size
        self.lr_start = lr_start
        self.lr_end = lr_end
        self.warmup_steps = warmup_steps
        self.random_state = random_state
        self.verbose = verbose

    def _net_config(self, n_classes, channels):
        cfg = self.config
        if cfg is None:
            cfg = NetConfig()
        elif isinstance(cfg, dict):
            cfg = NetConfig.from_dict(cfg)
        return dataclasses.replace(cfg, n_classes=n_classes, input_channels=channels)

    def train_config(self):
        return TrainConfig(lr_start=self.lr_start, lr_end=self.lr_end,
                           warmup_steps=self.warmup_steps, epochs=self.epochs,
                           batch_size=self.batch_size, seed=self.random_state or 0)

    def fit(self, X, y):
        X = images_to_tensor(X)
        y = np.asarray(y)
        if X.shape[0] == 0:
            raise EmptyInput("no training images")
        if y.shape != (X.shape[0],):
            raise ShapeError(f"{X.shape[0]} images but {y.size} labels")
        self.classes_, y_enc = np.unique(y, return_inverse=True)
        self.input_shape_ = tuple(X.shape[1:])
        cfg = self._net_config(len(self.classes_), X.shape[-1])
        self.model_ = build_malite_mn(cfg, seed=self.random_state or 0)

        def report(epoch, loss, lr):
            if self.verbose:
                log.info("epoch %d loss %.4f lr %.3g", epoch, loss, lr)

        self.loss_curve_ = fit(self.model_, X, y_enc.astype(np.int64),
                               self.train_config(), report)
        return self

    @classmethod
    def from_model(cls, model, classes):
        est = cls(config=model.config)
        est.model_ = model
        est.classes_ = np.asarray(classes)
        return est

    def predict_proba(self, X, batch_size=32):
        check_is_fitted(self, "model_")
        X = images_to_tensor(X)
        out = [self.model_.predict_proba(X[i:i + batch_size])
               for i in range(0, X.shape[0], batch_size)]
        return np.concatenate(out).astype(np.float64)

    def predict(self, X):
        return self.classes_[np.argmax(self.predict_proba(X), axis=1)]
