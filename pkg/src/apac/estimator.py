"""Scikit-learn style front end.

ApacClassifier bundles online-augmented training and the averaged
log-softmax decision rule behind the usual fit/predict surface, so the
method composes with sklearn pipelines and model selection utilities.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_is_fitted

from apac import decision, sampler, trainer
from apac.dataio import LabeledDataset
from apac.nn_core import Dense, Network, Relu, Softmax
from apac.optim import OptimConfig


class ApacClassifier(ClassifierMixin, BaseEstimator):
    """Small fully-connected network trained on deformed virtual samples,
    predicting via the mean log-softmax over ``m`` virtual test samples.

    Parameters
    ----------
    hidden_units : tuple of int, sizes of hidden ReLU layers.
    epochs, batch_size, learning_rate, lr_decay, momentum, l2 : training recipe.
    augment : None for plain training, "mnist"/"cifar10" for the stock
        deformation distributions, or a DeformSpec.
    image_shape : (C, H, W) of each sample; required for augmentation when X
        is passed flat. Inferred when X is 4-dimensional.
    rule : "apac_log_mean", "softmax_sum", or "non_apac".
    m : virtual samples per prediction.
    random_state : seed controlling init, batch order and deformations.
    """

    def __init__(self, hidden_units=(128,), epochs=10, batch_size=100,
                 learning_rate=2 ** -5, lr_decay=1.0, momentum=0.9, l2=0.0,
                 augment=None, image_shape=None, rule="apac_log_mean", m=16,
                 random_state=0):
        self.hidden_units = hidden_units
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.lr_decay = lr_decay
        self.momentum = momentum
        self.l2 = l2
        self.augment = augment
        self.image_shape = image_shape
        self.rule = rule
        self.m = m
        self.random_state = random_state

    # -- helpers -------------------------------------------------------------

    def _shape(self, X: np.ndarray) -> tuple[int, ...]:
        if X.ndim == 4:
            return X.shape[1:]
        if self.image_shape is not None:
            return tuple(self.image_shape)
        return (1, 1, X.shape[1])       # flat features, no geometric meaning

    def _as_images(self, X: np.ndarray, shape) -> np.ndarray:
        X = np.asarray(X, dtype=np.float32)
        if X.ndim == 2:
            return X.reshape((X.shape[0],) + shape)
        if X.ndim == 4:
            return X
        raise ValueError(f"X must be 2-D or 4-D, got shape {X.shape}")

    def _deform_spec(self):
        if self.augment is None:
            return None
        if isinstance(self.augment, sampler.DeformSpec):
            return self.augment
        return sampler.default_spec(self.augment)

    # -- sklearn API ---------------------------------------------------------

    def fit(self, X, y):
        X = np.asarray(X)
        y = np.asarray(y)
        if len(X) != len(y):
            raise ValueError("X and y length mismatch")
        shape = self._shape(X)
        images = self._as_images(X, shape)
        self.classes_, encoded = np.unique(y, return_inverse=True)
        ds = LabeledDataset(images, encoded.astype(np.int64),
                            len(self.classes_), "train")
        specs = []
        for u in self.hidden_units:
            specs += [Dense(u), Relu()]
        specs += [Dense(len(self.classes_)), Softmax()]
        net = Network(specs, shape, seed=self.random_state)
        cfg = trainer.TrainConfig(
            optim=OptimConfig(initial_lr=self.learning_rate,
                              decay_per_epoch=self.lr_decay,
                              momentum=self.momentum, l2_factor=self.l2,
                              batch_size=self.batch_size),
            epochs=self.epochs, seed=self.random_state,
            deform=self._deform_spec())
        self.network_, self.report_ = trainer.train(ds, net, cfg)
        self.n_features_in_ = int(np.prod(shape))
        self._input_shape = shape
        return self

    def _decision_cfg(self) -> decision.DecisionConfig:
        spec = self._deform_spec()
        rule = self.rule if spec is not None else "non_apac"
        return decision.DecisionConfig(rule=rule, m=self.m, deform=spec,
                                       seed=self.random_state)

    def decision_scores(self, X) -> np.ndarray:
        """Per-class decision scores (mean log-softmax for the APAC rule)."""
        check_is_fitted(self, "network_")
        images = self._as_images(np.asarray(X), self._input_shape)
        cfg = self._decision_cfg()
        return np.stack([decision.predict(self.network_, img, cfg, sample_key=i).scores
                         for i, img in enumerate(images)])

    def predict(self, X) -> np.ndarray:
        scores = self.decision_scores(X)
        return self.classes_[scores.argmax(axis=1)]

    def predict_log_proba(self, X) -> np.ndarray:
        scores = self.decision_scores(X)
        # renormalize: scores are mean log-softmax, not a log-distribution
        z = scores - scores.max(axis=1, keepdims=True)
        return z - np.log(np.exp(z).sum(axis=1, keepdims=True))

    def predict_proba(self, X) -> np.ndarray:
        return np.exp(self.predict_log_proba(X))
