"""scikit-learn style wrappers around the generator and the linear layout probe."""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .layout import LayoutTransform, fit_layout_transform, layout_logits
from .losses import LossWeights
from .model import ModelConfig, build_model, checkpoint_bytes, load_checkpoint
from .softsean import DEFAULT_K
from .trainer import TrainConfig, evaluate, predict, train
from .validation import as_samples, check_resolution, split_inputs


class RoomEmptier(TransformerMixin, BaseEstimator):
    """Coarse-to-fine furnished-to-empty room generator.

    ``fit`` takes a list of :class:`~emptyroom.data_synth.SceneSample`.
    ``transform``/``predict`` accept scene samples, an ``(images, masks)``
    pair or a ``[N, 4, H, W]`` array whose last channel is the foreground
    mask, and return the refined images.
    """

    def __init__(self, height=32, width=64, style_dim=16, k_sharpen=DEFAULT_K, epochs=30, batch_size=4,
                 lr=2e-4, loss_weights=(1.0, 0.1, 0.01, 1.0), adv_warmup_epochs=5, supervise_coarse=True,
                 random_state=0):
        self.height = height
        self.width = width
        self.style_dim = style_dim
        self.k_sharpen = k_sharpen
        self.epochs = epochs
        self.batch_size = batch_size
        self.lr = lr
        self.loss_weights = loss_weights
        self.adv_warmup_epochs = adv_warmup_epochs
        self.supervise_coarse = supervise_coarse
        self.random_state = random_state

    def _model_config(self) -> ModelConfig:
        return ModelConfig(height=self.height, width=self.width, style_dim=self.style_dim,
                           k_sharpen=self.k_sharpen, seed=self.random_state)

    def fit(self, X, y=None):
        samples = as_samples(X)
        self.generator_, self.discriminator_ = build_model(self._model_config())
        cfg = TrainConfig(epochs=self.epochs, batch_size=self.batch_size, lr=self.lr,
                          adv_warmup_epochs=self.adv_warmup_epochs, supervise_coarse=self.supervise_coarse,
                          seed=self.random_state)
        result = train(samples, self.generator_, self.discriminator_, LossWeights(*self.loss_weights), cfg)
        self.log_ = result.log_rows
        return self

    def _forward(self, X):
        check_is_fitted(self, "generator_")
        images, masks = split_inputs(X)
        check_resolution(images, self.height, self.width)
        out = self.generator_(images.astype(np.float32), masks.astype(np.float32))
        return out

    def transform(self, X):
        return self._forward(X).refined.value

    predict = transform

    def predict_layout_proba(self, X):
        return self._forward(X).layout.value

    def predict_layout(self, X):
        return self.predict_layout_proba(X).argmax(axis=1)

    def evaluate(self, X):
        check_is_fitted(self, "generator_")
        return evaluate(as_samples(X), self.generator_)

    def score(self, X, y=None):
        """Negative masked-region L1 (higher is better)."""
        return -self.evaluate(X).l1_masked

    def save(self, path) -> None:
        check_is_fitted(self, "generator_")
        with open(path, "wb") as fh:
            fh.write(checkpoint_bytes(self.generator_, self.discriminator_))

    @classmethod
    def load(cls, path) -> "RoomEmptier":
        gen, disc, _ = load_checkpoint(path)
        c = gen.config
        est = cls(height=c.height, width=c.width, style_dim=c.style_dim, k_sharpen=c.k_sharpen,
                  random_state=c.seed)
        est.generator_, est.discriminator_ = gen, disc
        return est

    def iter_predictions(self, X):
        check_is_fitted(self, "generator_")
        return predict(self.generator_, as_samples(X))


class LinearLayoutProbe(ClassifierMixin, BaseEstimator):
    """Softmax linear probe from per-pixel features to layout classes.

    ``X`` is ``[n_pixels, n_features]``; the fitted ``T`` and bias are the
    same :class:`~emptyroom.layout.LayoutTransform` the coarse net uses.
    """

    def __init__(self, n_classes=3, fit_bias=True, steps=300, lr=0.05, random_state=0):
        self.n_classes = n_classes
        self.fit_bias = fit_bias
        self.steps = steps
        self.lr = lr
        self.random_state = random_state

    @staticmethod
    def _as_maps(X: np.ndarray) -> np.ndarray:
        # pixels laid out along the width of a single-row image
        return np.ascontiguousarray(X.T[None, :, None, :])

    def fit(self, X, y):
        X, y = check_X_y(X, y, dtype=np.float64)
        self.classes_ = np.arange(self.n_classes)
        y = y.astype(np.int64)
        self.transform_ = fit_layout_transform(self._as_maps(X), y[None, None, :], n_classes=self.n_classes,
                                               steps=self.steps, lr=self.lr, use_bias=self.fit_bias,
                                               seed=self.random_state)
        self.n_features_in_ = X.shape[1]
        return self

    def decision_function(self, X):
        check_is_fitted(self, "transform_")
        X = check_array(X, dtype=np.float64)
        return layout_logits(self._as_maps(X), self.transform_).value[0, :, 0, :].T

    def predict_proba(self, X):
        z = self.decision_function(X)
        e = np.exp(z - z.max(axis=1, keepdims=True))
        return e / e.sum(axis=1, keepdims=True)

    def predict(self, X):
        check_is_fitted(self, "transform_")
        return self.classes_[self.decision_function(X).argmax(axis=1)]

    @property
    def coef_(self) -> np.ndarray:
        check_is_fitted(self, "transform_")
        return self.transform_.T.value

    @property
    def intercept_(self) -> np.ndarray:
        check_is_fitted(self, "transform_")
        return self.transform_.bias.value


__all__ = ["RoomEmptier", "LinearLayoutProbe", "LayoutTransform"]
