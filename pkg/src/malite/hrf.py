"""Histogram + random forest classifier over byteplot images."""

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_is_fitted

from .featurizer import PatchHistogramFeaturizer
from .forest import RandomForestClassifier


class MaliteHRFClassifier(ClassifierMixin, BaseEstimator):
    """Patch histograms feeding a bounded random forest.

    ``fit``/``predict`` take square uint8 images, ``(n, side, side)`` or
    ``(n, side, side, 3)``; ``fit_features``/``predict_features`` skip the
    featurizer for precomputed count matrices.
    """

    def __init__(self, bins=64, patch_height=32, patch_width=256, overlap=0.5,
                 n_estimators=51, max_depth=15, max_features="sqrt",
                 min_samples_leaf=1, random_state=0, image_side=256):
        self.bins = bins
        self.patch_height = patch_height
        self.patch_width = patch_width
        self.overlap = overlap
        self.n_estimators = n_estimators
        self.max_depth = max_depth
        self.max_features = max_features
        self.min_samples_leaf = min_samples_leaf
        self.random_state = random_state
        self.image_side = image_side

    def _featurizer(self):
        return PatchHistogramFeaturizer(self.bins, self.patch_height, self.patch_width,
                                        self.overlap)

    def _forest(self):
        return RandomForestClassifier(
            n_estimators=self.n_estimators, max_depth=self.max_depth,
            max_features=self.max_features, min_samples_leaf=self.min_samples_leaf,
            random_state=self.random_state,
        )

    def featurizer_for(self, shape=None):
        side = self.image_side
        shape = shape or (side, side)
        return self._featurizer().fit(np.zeros((1,) + tuple(shape), dtype=np.uint8))

    def fit(self, X, y):
        X = np.asarray(X)
        self.featurizer_ = self._featurizer().fit(X)
        return self.fit_features(self.featurizer_.transform(X), y, _keep_featurizer=True)

    def fit_features(self, F, y, _keep_featurizer=False):
        if not _keep_featurizer:
            self.featurizer_ = self.featurizer_for()
        self.forest_ = self._forest().fit(F, y)
        self.classes_ = self.forest_.classes_
        self.n_features_in_ = self.forest_.n_features_in_
        return self

    def transform(self, X):
        check_is_fitted(self, "featurizer_")
        return self.featurizer_.transform(np.asarray(X))

    def predict_features(self, F):
        check_is_fitted(self, "forest_")
        return self.forest_.predict(F)

    def predict_proba(self, X):
        check_is_fitted(self, "forest_")
        return self.forest_.predict_proba(self.transform(X))

    def predict(self, X):
        return self.forest_.predict(self.transform(X))
