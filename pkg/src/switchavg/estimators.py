"""Estimator-style wrappers following scikit-learn conventions.

Hyperparameters are set in ``__init__`` and exposed through
``get_params``/``set_params``; everything derived from the generator
is computed in ``fit`` and stored in trailing-underscore attributes.
"""

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .chain import (
    MAX_STATES,
    GeneratorMatrix,
    analyze_chain,
    generator_from_matrix,
    simulate_chain,
    transition_semigroup,
)
from .system import DEFAULT_H_MAX, averaged_drift, integrate_averaged, integrate_switched


def _as_generator(X, max_states):
    if isinstance(X, GeneratorMatrix):
        return X
    return generator_from_matrix(X, max_states=max_states)


class ChainAnalyzer(BaseEstimator):
    """Stationary law, projector and potential of a generator matrix.

    Parameters
    ----------
    max_states : int, default=64
        Largest accepted state space.

    Attributes
    ----------
    generator_ : GeneratorMatrix
    stationary_distribution_ : ndarray of shape (n_states,)
    projector_ : ndarray of shape (n_states, n_states)
    potential_ : ndarray of shape (n_states, n_states)
    """

    def __init__(self, max_states=MAX_STATES):
        self.max_states = max_states

    def fit(self, X, y=None):
        self.generator_ = _as_generator(X, self.max_states)
        analysis = analyze_chain(self.generator_)
        self.analysis_ = analysis
        self.stationary_distribution_ = analysis.pi
        self.projector_ = analysis.Pi
        self.potential_ = analysis.R0
        self.n_states_ = self.generator_.n_states
        return self

    def transform(self, X):
        """Apply the potential to functions of the state (rows of ``X``)."""
        check_is_fitted(self, "potential_")
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[1] != self.n_states_:
            raise ValueError(f"X has {X.shape[1]} columns, expected {self.n_states_}")
        return X @ self.potential_.T

    def transition_matrix(self, t):
        check_is_fitted(self, "generator_")
        return transition_semigroup(self.generator_, t)


class AveragedSystem(BaseEstimator):
    """Averaged limit of a switched system, fitted to a switching generator.

    Parameters
    ----------
    field : VelocityField
        Per-state velocity field ``b(u; x)``.
    u0 : float or array-like
        Common initial condition.
    horizon : float
    h_max : float
        Integrator step bound.

    Examples
    --------
    >>> from switchavg import AveragedSystem, CatalogField
    >>> model = AveragedSystem(CatalogField("linear", a=[3.0, -3.0]), u0=1.0)
    >>> model.fit([[-1.0, 1.0], [2.0, -2.0]]).predict([1.0]).round(6)
    array([[2.718282]])
    """

    def __init__(self, field, u0=1.0, horizon=1.0, h_max=DEFAULT_H_MAX):
        self.field = field
        self.u0 = u0
        self.horizon = horizon
        self.h_max = h_max

    def fit(self, X, y=None):
        self.generator_ = _as_generator(X, MAX_STATES)
        self.analysis_ = analyze_chain(self.generator_)
        self.averaged_field_ = averaged_drift(self.field, self.analysis_.pi)
        self.path_ = integrate_averaged(self.field, self.analysis_.pi, np.atleast_1d(self.u0),
                                        self.horizon, self.h_max)
        return self

    def predict(self, t):
        """Averaged trajectory at times ``t``, shape ``(len(t), d)``."""
        check_is_fitted(self, "path_")
        return self.path_.at(np.atleast_1d(t))

    def sample(self, epsilon, random_state=None, initial_state=0):
        """One switched trajectory at time scale ``epsilon``."""
        check_is_fitted(self, "generator_")
        rng = np.random.default_rng(random_state)
        jp = simulate_chain(self.generator_, self.horizon, epsilon, rng, initial_state)
        return integrate_switched(self.field, jp, np.atleast_1d(self.u0), self.h_max)

    def deviation(self, epsilon, random_state=None):
        """``max_t |u_eps(t) - u_hat(t)|`` for one sampled path."""
        sp = self.sample(epsilon, random_state)
        return float(np.max(np.linalg.norm(sp.u - self.path_.at(sp.t), axis=1)))
