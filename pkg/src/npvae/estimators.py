"""Scikit-learn style estimators wrapping the trainers.

Both estimators follow the usual contract: constructors only store
hyperparameters, `fit` validates inputs and trains, fitted state lives
in trailing-underscore attributes, and `transform` maps observations to
the model's embedding space. `NonparametricVAE.transform` returns the
low-dimensional X locations; `GaussianVAE.transform` returns posterior
means in Z.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.exceptions import NotFittedError
from sklearn.utils.validation import check_array

from .config import MODEL_NPVAE, MODEL_VAE, RunConfig
from .coupling import ancestral_sample, encode_x, interpolate
from .data import DataSplit
from .errors import ValidationError
from .train import Trainer
from .vae import decode, encode


class _VaeEstimatorBase(BaseEstimator, TransformerMixin):
    _model_kind = MODEL_VAE

    def _validate(self, X, fitted: bool) -> np.ndarray:
        X = check_array(X, dtype=np.float64)
        if X.min() < 0.0 or X.max() > 1.0:
            raise ValueError("observations must lie in [0, 1]")
        if fitted:
            self._check_fitted()
            if X.shape[1] != self.n_features_in_:
                raise ValueError(
                    f"X has {X.shape[1]} features, fit saw {self.n_features_in_}"
                )
        return X

    def _check_fitted(self):
        if not hasattr(self, "trainer_"):
            raise NotFittedError(
                f"this {type(self).__name__} instance is not fitted yet; "
                "call fit first"
            )

    def _run_config(self, obs_dim: int) -> RunConfig:
        raise NotImplementedError

    def fit(self, X, y=None):
        """Train on observations in [0,1]; y, if given, supplies labels."""
        X = self._validate(X, fitted=False)
        labels = np.zeros(X.shape[0], dtype=np.int64) if y is None else np.asarray(y)
        split = DataSplit(X, labels, "train")
        config = self._run_config(X.shape[1])
        if config.binarize:
            split = split.binarized()
        trainer = Trainer.from_config(config)
        trainer.train(split, config.epochs)
        if config.model == MODEL_NPVAE:
            trainer.build_reference(split)
        self.trainer_ = trainer
        self.n_features_in_ = X.shape[1]
        self.losses_ = trainer.losses
        self.n_epochs_ = trainer.epoch
        return self

    def score(self, X, y=None) -> float:
        """Mean evidence lower bound (higher is better), frozen noise."""
        X = self._validate(X, fitted=True)
        split = DataSplit(X, np.zeros(X.shape[0], dtype=np.int64), "score")
        losses = self.trainer_.evaluate(split)
        return losses.elbo


class GaussianVAE(_VaeEstimatorBase):
    """Plain VAE; transform returns the posterior means in Z."""

    def __init__(self, z_dim=2, hidden=(500, 500), batch_size=128, lr=1e-3,
                 epochs=50, seed=0, keep_prob=0.9, binarize=False):
        self.z_dim = z_dim
        self.hidden = hidden
        self.batch_size = batch_size
        self.lr = lr
        self.epochs = epochs
        self.seed = seed
        self.keep_prob = keep_prob
        self.binarize = binarize

    def _run_config(self, obs_dim: int) -> RunConfig:
        return RunConfig(
            model=MODEL_VAE, obs_dim=obs_dim, z_dim=self.z_dim,
            hidden=tuple(self.hidden), batch_size=self.batch_size, lr=self.lr,
            epochs=self.epochs, seed=self.seed, keep_prob=self.keep_prob,
            binarize=self.binarize,
        )

    def transform(self, X) -> np.ndarray:
        X = self._validate(X, fitted=True)
        mu, _ = encode(self.trainer_.z_mlp, X)
        return mu

    def sample_z(self, Z) -> np.ndarray:
        """Decode latent points directly."""
        self._check_fitted()
        Z = check_array(Z, dtype=np.float64)
        return decode(self.trainer_.dec_mlp, Z)


class NonparametricVAE(_VaeEstimatorBase):
    """Kernel-coupled VAE; transform returns the low-dimensional X locations."""

    _model_kind = MODEL_NPVAE

    def __init__(self, z_dim=2, x_dim=2, hidden=(500, 500), batch_size=128,
                 lr=1e-3, epochs=50, seed=0, keep_prob=0.9, penalty_weight=1.0,
                 binarize=False, reference_size=1024):
        self.z_dim = z_dim
        self.x_dim = x_dim
        self.hidden = hidden
        self.batch_size = batch_size
        self.lr = lr
        self.epochs = epochs
        self.seed = seed
        self.keep_prob = keep_prob
        self.penalty_weight = penalty_weight
        self.binarize = binarize
        self.reference_size = reference_size

    def _run_config(self, obs_dim: int) -> RunConfig:
        return RunConfig(
            model=MODEL_NPVAE, obs_dim=obs_dim, z_dim=self.z_dim,
            x_dim=self.x_dim, hidden=tuple(self.hidden),
            batch_size=self.batch_size, lr=self.lr, epochs=self.epochs,
            seed=self.seed, keep_prob=self.keep_prob,
            penalty_weight=self.penalty_weight, binarize=self.binarize,
            reference_size=self.reference_size,
        )

    def transform(self, X) -> np.ndarray:
        X = self._validate(X, fitted=True)
        return encode_x(self.trainer_.x_mlp, X)

    def sample_x(self, x_query) -> np.ndarray:
        """Generate observations from locations in the X space."""
        self._check_fitted()
        x_query = check_array(np.asarray(x_query, dtype=np.float64))
        t = self.trainer_
        if t.reference is None:
            raise ValidationError("no reference set; fit builds one")
        return ancestral_sample(t.reference, t.dec_mlp, t.kp, x_query)

    def interpolate(self, y_a, y_b, steps=11, space="x") -> np.ndarray:
        """Decode a straight latent-space line between two observations."""
        self._check_fitted()
        y_a = self._validate(np.atleast_2d(y_a), fitted=True)
        y_b = self._validate(np.atleast_2d(y_b), fitted=True)
        t = self.trainer_
        return interpolate(
            t.z_mlp, t.dec_mlp, y_a, y_b, steps, space,
            x_mlp=t.x_mlp, kp=t.kp, ref=t.reference,
        )
