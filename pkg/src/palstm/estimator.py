"""Scikit-learn style wrapper around training and scoring.

Windows are passed as ``X`` shaped ``(n_samples, T, D)`` together with a
per-window ``mileage`` keyword. Labels follow the 0 = normal, 1 = fault
convention rather than scikit-learn's -1/+1 outlier convention.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .model import ModelConfig, model_inputs, predict_normalized
from .persistence import load_model, save_model
from .training import TrainConfig, fit_arrays
from .validation import check_labels, check_windows


class PhysicsAwareLSTMAE(BaseEstimator):
    """Reconstruction-error fault detector with mileage-aware inputs and latent fusion.

    Parameters
    ----------
    n_selected : int
        Number of mileage-correlated channels expanded into interaction terms.
    hidden_size, n_layers : int
        LSTM width and encoder depth.
    use_physics_features, use_latent_fusion, use_attention : bool
        Ablation switches. All three off gives a plain LSTM autoencoder.
    latent_dim : int or None
        Optional linear bottleneck after fusion.
    quantile : float
        Alarm threshold is this empirical quantile of training scores.
    random_state : int
        Seed for initialization and batch shuffling.
    """

    def __init__(
        self,
        n_selected=2,
        hidden_size=64,
        n_layers=1,
        use_physics_features=True,
        use_latent_fusion=True,
        use_attention=True,
        latent_dim=None,
        epsilon=1e-6,
        learning_rate=0.001,
        batch_size=32,
        epochs=100,
        grad_clip_norm=5.0,
        quantile=0.95,
        random_state=0,
    ):
        self.n_selected = n_selected
        self.hidden_size = hidden_size
        self.n_layers = n_layers
        self.use_physics_features = use_physics_features
        self.use_latent_fusion = use_latent_fusion
        self.use_attention = use_attention
        self.latent_dim = latent_dim
        self.epsilon = epsilon
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.epochs = epochs
        self.grad_clip_norm = grad_clip_norm
        self.quantile = quantile
        self.random_state = random_state

    def _configs(self, T, D):
        model_config = ModelConfig(
            T=T,
            D=D,
            K=self.n_selected if self.use_physics_features else 0,
            hidden_size=self.hidden_size,
            layers=self.n_layers,
            use_physics_features=self.use_physics_features,
            use_latent_fusion=self.use_latent_fusion,
            use_attention=self.use_attention,
            latent_dim=self.latent_dim,
        )
        train_config = TrainConfig(
            learning_rate=self.learning_rate,
            batch_size=self.batch_size,
            epochs=self.epochs,
            grad_clip_norm=self.grad_clip_norm,
            seed=self.random_state,
            quantile=self.quantile,
        )
        return model_config, train_config

    def fit(self, X, y=None, *, mileage):
        X, m = check_windows(X, mileage, min_samples=2)
        if y is not None and check_labels(y, len(X)).any():
            raise ValueError("fit expects normal windows only; drop fault-labelled windows first")
        model_config, train_config = self._configs(X.shape[1], X.shape[2])
        self._set_fitted(fit_arrays(X, m, model_config, train_config, self.epsilon))
        return self

    def _set_fitted(self, result):
        self.fit_result_ = result
        self.threshold_ = result.threshold.lam
        self.loss_history_ = list(result.history)
        self.selected_channels_ = result.spec.selected_channels
        self.n_features_in_ = result.model_config.D

    def _check(self, X, mileage):
        check_is_fitted(self, "fit_result_")
        X, m = check_windows(X, mileage, n_channels=self.n_features_in_)
        if X.shape[1] != self.fit_result_.model_config.T:
            raise ValueError(f"expected windows of length {self.fit_result_.model_config.T}, got {X.shape[1]}")
        return X, m

    def score_samples(self, X, *, mileage):
        """Mean squared reconstruction error per window (higher is more anomalous)."""
        X, m = self._check(X, mileage)
        return self.fit_result_.score(X, m)

    def decision_function(self, X, *, mileage):
        return self.score_samples(X, mileage=mileage) - self.threshold_

    def predict(self, X, *, mileage):
        return (self.score_samples(X, mileage=mileage) > self.threshold_).astype(np.int64)

    def reconstruct(self, X, *, mileage):
        """Reconstructed windows in the original channel units."""
        X, m = self._check(X, mileage)
        r = self.fit_result_
        inputs, mn, _ = model_inputs(X, m, r.stats, r.spec, r.model_config)
        return r.stats.denormalize(predict_normalized(r.params, inputs, mn, r.model_config))

    def save(self, path):
        check_is_fitted(self, "fit_result_")
        save_model(self.fit_result_, path)

    @classmethod
    def load(cls, path):
        result = load_model(path)
        mc, tc = result.model_config, result.train_config
        est = cls(
            n_selected=mc.K,
            hidden_size=mc.hidden_size,
            n_layers=mc.layers,
            use_physics_features=mc.use_physics_features,
            use_latent_fusion=mc.use_latent_fusion,
            use_attention=mc.use_attention,
            latent_dim=mc.latent_dim,
            epsilon=result.spec.epsilon,
            learning_rate=tc.learning_rate,
            batch_size=tc.batch_size,
            epochs=tc.epochs,
            grad_clip_norm=tc.grad_clip_norm,
            quantile=tc.quantile,
            random_state=tc.seed,
        )
        est._set_fitted(result)
        return est
