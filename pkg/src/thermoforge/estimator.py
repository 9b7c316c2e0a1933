"""scikit-learn style wrappers around training and inference."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .fem.solver import NeuralMaterial, forward_solve, reaction_vectors
from .training import LossWeights, MaterialPointSamples, RegularizationSpec, TrainConfig, train
from .training.losses import predict_P11


class _Base(BaseEstimator):
    def _config(self, mode):
        reg = RegularizationSpec() if self.l1 is None else RegularizationSpec(
            {k: (float(self.l1), 0.0) for k in RegularizationSpec().coefficients}
        )
        return TrainConfig(
            mode=mode,
            epochs=self.epochs,
            lr=self.learning_rate,
            seed=self.random_state,
            energy_scale=self.energy_scale,
            weights=LossWeights(A=self.lambda_A),
            regularization=reg,
            T0=self.T0,
        )


class MaterialPointRegressor(_Base, RegressorMixin):
    """Fits ``P11`` of uniaxial incompressible samples.

    ``X`` has columns ``(T, F11)``; ``y`` is ``P11``.
    """

    def __init__(self, epochs=500, learning_rate=1e-3, random_state=0, energy_scale="auto", l1=None, lambda_A=1.0, T0=293.15):
        self.epochs = epochs
        self.learning_rate = learning_rate
        self.random_state = random_state
        self.energy_scale = energy_scale
        self.l1 = l1
        self.lambda_A = lambda_A
        self.T0 = T0

    def fit(self, X, y):
        X, y = check_X_y(X, y, dtype=np.float64)
        if X.shape[1] != 2:
            raise ValueError("X must have two columns (T, F11)")
        result = train(self._config("material-point"), samples=MaterialPointSamples(X[:, 0], X[:, 1], y))
        self.model_ = result.best_model
        self.history_ = result.history
        self.n_features_in_ = 2
        return self

    def predict(self, X):
        check_is_fitted(self, "model_")
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != self.n_features_in_:
            raise ValueError("X must have two columns (T, F11)")
        return predict_P11(self.model_, MaterialPointSamples(X[:, 0], X[:, 1], np.zeros(len(X))))


class FieldDiscovery(_Base):
    """Discovers a model from full-field scenarios; ``predict`` replays a
    problem and returns its per-dof reactions ``(S, ndof)``."""

    def __init__(self, epochs=3000, learning_rate=1e-3, random_state=0, energy_scale="auto", l1=None, lambda_A=1e3,
                 T0=293.15, entropy_mode="newton", balances="coupled"):
        self.epochs = epochs
        self.learning_rate = learning_rate
        self.random_state = random_state
        self.energy_scale = energy_scale
        self.l1 = l1
        self.lambda_A = lambda_A
        self.T0 = T0
        self.entropy_mode = entropy_mode
        self.balances = balances

    def fit(self, scenarios, y=None):
        if not scenarios:
            raise ValueError("at least one scenario is required")
        cfg = self._config("fem")
        cfg.balances = self.balances
        result = train(cfg, scenarios=list(scenarios))
        self.model_ = result.best_model
        self.history_ = result.history
        self.normalization_ = result.normalization
        return self

    def predict(self, problem):
        check_is_fitted(self, "model_")
        mat = NeuralMaterial(self.model_, self.entropy_mode)
        return reaction_vectors(problem, forward_solve(problem, mat), mat)

    def evaluate_states(self, F, T):
        """Stress and heat-flux-free state response ``(P, T_state, s)`` at
        deformation ``F`` and temperature ``T``."""
        check_is_fitted(self, "model_")
        s = self.model_.solve_entropy(F, T)
        P, T_state = self.model_.stress_and_temperature(F, s)
        return P, T_state, s
