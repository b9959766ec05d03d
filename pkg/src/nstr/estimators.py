"""scikit-learn style regressors wrapping NSTR and the two baselines.

Inputs are coordinate arrays in [-1, 1]^d; targets are 1D or (n, channels).

    >>> est = NstrRegressor(n_bases=8, iterations=200).fit(X, y)
    >>> est.predict(X).shape
"""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .baselines import FourierMlp, FourierMlpConfig, Siren, SirenConfig
from .data import SignalDataset
from .model import NstrConfig, NstrModel, check_domain
from .optim import TrainConfig, train
from .transport import LossWeights


class _InrRegressor(RegressorMixin, BaseEstimator):
    """Shared fit/predict plumbing; subclasses provide ``_build``."""

    def _train_config(self) -> TrainConfig:
        return TrainConfig(
            iterations=self.iterations,
            batch_size=self.batch_size,
            seed=self.random_state,
            lr=self.lr,
            weights=LossWeights(getattr(self, "lambda_pde", 0.0), getattr(self, "lambda_smooth", 0.0)),
            grad_mode=getattr(self, "grad_mode", "fd"),
            log_every=max(self.iterations // 20, 1),
        )

    def fit(self, X, y):
        X, y = check_X_y(X, y, multi_output=True, y_numeric=True, dtype=np.float64)
        X = check_domain(X, X.shape[1])
        y2 = y[:, None] if y.ndim == 1 else y
        self._y_1d = y.ndim == 1
        self.n_features_in_ = X.shape[1]
        self.model_ = self._build(X.shape[1], y2.shape[1], len(X))
        self.report_ = train(self.model_, SignalDataset(X, y2), self._train_config())
        return self

    def _coords(self, X) -> np.ndarray:
        check_is_fitted(self, "model_")
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"X has {X.shape[1]} features, expected {self.n_features_in_}")
        return check_domain(X, self.n_features_in_)

    def predict(self, X):
        xs = self._coords(X)
        out = self.model_.predict(xs)
        return out[:, 0] if self._y_1d else out


class NstrRegressor(TransformerMixin, _InrRegressor):
    """Spectral transport regressor; ``transform`` returns the spectrum field S(x)."""

    def __init__(
        self,
        n_bases=16,
        grid_resolution=None,
        latent_dim=16,
        hyper_hidden=(64,),
        flow_hidden=(64, 64),
        decoder_hidden=(64, 64),
        scalar_bottleneck=False,
        train_basis=True,
        omega_max=None,
        sample_resolution=None,
        lambda_pde=0.1,
        lambda_smooth=0.0,
        grad_mode="fd",
        iterations=8000,
        batch_size=1024,
        lr=1e-4,
        random_state=0,
    ):
        self.n_bases = n_bases
        self.grid_resolution = grid_resolution
        self.latent_dim = latent_dim
        self.hyper_hidden = hyper_hidden
        self.flow_hidden = flow_hidden
        self.decoder_hidden = decoder_hidden
        self.scalar_bottleneck = scalar_bottleneck
        self.train_basis = train_basis
        self.omega_max = omega_max
        self.sample_resolution = sample_resolution
        self.lambda_pde = lambda_pde
        self.lambda_smooth = lambda_smooth
        self.grad_mode = grad_mode
        self.iterations = iterations
        self.batch_size = batch_size
        self.lr = lr
        self.random_state = random_state

    def _build(self, dim, channels, n):
        # without an explicit resolution, assume the samples form a square grid
        res = self.sample_resolution or max(2, int(round(n ** (1.0 / dim))))
        cfg = NstrConfig(
            dim=dim,
            channels=channels,
            n_bases=self.n_bases,
            grid_resolution=self.grid_resolution,
            latent_dim=self.latent_dim,
            hyper_hidden=list(self.hyper_hidden),
            flow_hidden=list(self.flow_hidden),
            decoder_hidden=list(self.decoder_hidden),
            scalar_bottleneck=self.scalar_bottleneck,
            train_basis=self.train_basis,
            sample_resolution=res,
            omega_max=self.omega_max,
        )
        return NstrModel(cfg, seed=self.random_state)

    def transform(self, X):
        xs = self._coords(X)
        return self.model_.spectrum_values(xs)


class FourierMlpRegressor(_InrRegressor):
    def __init__(self, n_features=64, sigma=10.0, hidden=(256, 256, 256, 256), iterations=8000, batch_size=1024, lr=1e-4, random_state=0):
        self.n_features = n_features
        self.sigma = sigma
        self.hidden = hidden
        self.iterations = iterations
        self.batch_size = batch_size
        self.lr = lr
        self.random_state = random_state

    def _build(self, dim, channels, n):
        cfg = FourierMlpConfig(dim, channels, self.n_features, self.sigma, list(self.hidden))
        return FourierMlp(cfg, seed=self.random_state)


class SirenRegressor(_InrRegressor):
    def __init__(self, hidden=(256, 256, 256), omega0=30.0, iterations=8000, batch_size=1024, lr=1e-4, random_state=0):
        self.hidden = hidden
        self.omega0 = omega0
        self.iterations = iterations
        self.batch_size = batch_size
        self.lr = lr
        self.random_state = random_state

    def _build(self, dim, channels, n):
        return Siren(SirenConfig(dim, channels, list(self.hidden), self.omega0), seed=self.random_state)
