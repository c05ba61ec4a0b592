"""Operator calculus for the coupled generator ``eps^-1 Q + B(x)``.

Everything here is scalar (``d = 1``). Functions of ``u`` are vectorised
over a 1-d grid; functions of ``(u, x)`` return arrays of shape
``(n_states, len(u))``.

With ``B(x) phi = b(u;x) phi'`` and ``B_hat phi = b_hat(u) phi'``, the
corrector ``phi1 = R0 (B - B_hat) phi`` makes the perturbed test function
``phi + eps phi1`` satisfy

    L_eps (phi + eps phi1) = B_hat phi + eps theta(x) phi,
    theta(x) = B(x) R0 (B(x) - B_hat),

exactly, because ``Q R0 = Pi - I`` and ``Pi (B - B_hat) phi = 0``.
"""

from dataclasses import dataclass

import numpy as np
from numpy.polynomial import Polynomial

from ._validation import ValidationError, check_positive, check_vector
from .system import averaged_drift

CONVENTIONS = ("standard", "flipped")


class ScalarFunction:
    """Scalar function of ``u`` with optional first and second derivatives."""

    def __init__(self, f, df=None, d2f=None, descriptor=""):
        self._f, self._df, self._d2f = f, df, d2f
        self.descriptor = descriptor

    def __call__(self, u):
        return self._f(np.asarray(u, dtype=float))

    def deriv(self, u):
        if self._df is None:
            raise ValidationError(f"{self.descriptor or 'function'} has no first derivative")
        return self._df(np.asarray(u, dtype=float))

    def deriv2(self, u):
        if self._d2f is None:
            raise ValidationError(f"{self.descriptor or 'function'} has no second derivative")
        return self._d2f(np.asarray(u, dtype=float))

    @property
    def has_deriv2(self):
        return self._d2f is not None

    def __repr__(self):
        return f"{type(self).__name__}({self.descriptor!r})"


class TestFunction(ScalarFunction):
    """Twice differentiable test function with explicit derivatives."""

    __test__ = False  # keep pytest from collecting this class

    def check_derivatives(self, u, rel=1e-6, step=1e-4):
        """Compare derivatives against central differences; returns max relative error."""
        u = np.asarray(u, dtype=float)
        fd1 = (self(u + step) - self(u - step)) / (2 * step)
        fd2 = (self.deriv(u + step) - self.deriv(u - step)) / (2 * step)
        err1 = np.abs(fd1 - self.deriv(u)) / np.maximum(1.0, np.abs(fd1))
        err2 = np.abs(fd2 - self.deriv2(u)) / np.maximum(1.0, np.abs(fd2))
        worst = float(max(err1.max(), err2.max()))
        return worst, worst <= rel


def polynomial(coefficients):
    """Polynomial test function, coefficients in increasing degree."""
    coefficients = check_vector(coefficients, "coefficients")
    p = Polynomial(coefficients)
    dp = p.deriv(1)
    d2p = p.deriv(2)
    return TestFunction(p, dp, d2p, descriptor=f"polynomial{tuple(coefficients.tolist())}")


def bump(center=0.0, radius=1.0):
    """Smooth compactly supported bump ``exp(-1 / (1 - s^2))``, ``s = (u - center) / radius``."""
    radius = check_positive(radius, "radius")

    def parts(u):
        s = (np.asarray(u, dtype=float) - center) / radius
        inside = np.abs(s) < 1
        w = np.where(inside, 1.0 - s * s, 1.0)
        phi = np.where(inside, np.exp(-1.0 / w), 0.0)
        g1 = -2.0 * s / w**2
        g2 = -2.0 / w**2 - 8.0 * s * s / w**3
        return phi, g1, g2

    def f(u):
        return parts(u)[0]

    def df(u):
        phi, g1, _ = parts(u)
        return phi * g1 / radius

    def d2f(u):
        phi, g1, g2 = parts(u)
        return phi * (g1 * g1 + g2) / radius**2

    return TestFunction(f, df, d2f, descriptor=f"bump(center={center}, radius={radius})")


def constant(value=1.0):
    return polynomial([value])


class CoupledFunction:
    """Family ``g(u; x)`` over the chain states.

    ``value(u)`` and ``deriv(u)`` return arrays of shape
    ``(n_states, len(u))``.
    """

    def __init__(self, n_states, value, deriv=None, descriptor=""):
        self.n_states = n_states
        self._value = value
        self._deriv = deriv
        self.descriptor = descriptor

    def __call__(self, u):
        return self._value(np.atleast_1d(np.asarray(u, dtype=float)))

    def deriv(self, u):
        if self._deriv is None:
            raise ValidationError(f"{self.descriptor or 'coupled function'} has no u-derivative")
        return self._deriv(np.atleast_1d(np.asarray(u, dtype=float)))

    @classmethod
    def lift(cls, phi, n_states):
        """A function of ``u`` alone viewed as a coupled function."""
        def value(u):
            return np.broadcast_to(phi(u), (n_states, len(u))).copy()

        def deriv(u):
            return np.broadcast_to(phi.deriv(u), (n_states, len(u))).copy()

        return cls(n_states, value, deriv, descriptor=f"lift({phi.descriptor})")


def _require_scalar(field):
    if field.dim != 1:
        raise ValidationError(f"operator calculus requires d = 1, field has d = {field.dim}")


def _b(field, u, x):
    u = np.asarray(u, dtype=float)
    return field._eval(u[:, None], np.full(len(u), x, dtype=np.intp))[:, 0]


def _db(field, u, x):
    u = np.asarray(u, dtype=float)
    return field._jacobian(u[:, None], np.full(len(u), x, dtype=np.intp))[:, 0, 0]


def _all_states(fn, field, u):
    return np.stack([fn(field, u, x) for x in range(field.n_states)])


def apply_B(field, x, phi):
    """``u -> b(u;x) phi'(u)`` with derivative ``b' phi' + b phi''``."""
    _require_scalar(field)
    if not 0 <= x < field.n_states:
        raise ValidationError(f"state {x} out of range")
    u_ = np.atleast_1d

    def f(u):
        u = u_(u)
        return _b(field, u, x) * phi.deriv(u)

    def df(u):
        u = u_(u)
        return _db(field, u, x) * phi.deriv(u) + _b(field, u, x) * phi.deriv2(u)

    return ScalarFunction(f, df, descriptor=f"B({x}){phi.descriptor}")


def apply_Bhat(field, pi, phi):
    """``u -> b_hat(u) phi'(u)`` for the pi-averaged field."""
    _require_scalar(field)
    return apply_B(averaged_drift(field, pi), 0, phi)


def _signed_potential(analysis, convention):
    if convention not in CONVENTIONS:
        raise ValidationError(f"convention must be one of {CONVENTIONS}, got {convention!r}")
    # "flipped" solves Q R0 = I - Pi, which pairs with B_tilde = B_hat - B.
    return analysis.R0 if convention == "standard" else -analysis.R0


def centered_drift(field, pi, u, convention="standard"):
    """Per-state ``b(u;x) - b_hat(u)`` (sign reversed for the flipped convention)."""
    b = _all_states(_b, field, u)
    bhat = _b(averaged_drift(field, pi), u, 0)
    out = b - bhat[None, :]
    return out if convention == "standard" else -out


def build_corrector(phi, field, analysis, convention="standard", check_tol=1e-12):
    """Corrector ``phi1(u;x) = sum_y R0[x,y] (b(u;y) - b_hat(u)) phi'(u)``.

    Every evaluation is cross-checked against the equivalent form
    ``phi'(u) sum_y R0[x,y] b(u;y)`` (rows of ``R0`` sum to zero); the
    two must agree to ``check_tol`` relative to the size of the terms.

    Returns
    -------
    CoupledFunction
        With ``value`` and ``deriv`` (the latter needs ``phi''`` and the
        field Jacobian).
    """
    _require_scalar(field)
    n = analysis.generator.n_states
    if field.n_states != n:
        raise ValidationError(f"state-count mismatch: field has {field.n_states}, chain has {n}")
    R = _signed_potential(analysis, convention)
    pi = analysis.pi
    sign = 1.0 if convention == "standard" else -1.0

    def value(u):
        dphi = phi.deriv(u)
        centered = centered_drift(field, pi, u, convention)
        main = (R @ centered) * dphi[None, :]
        b = _all_states(_b, field, u)
        alt = sign * (R @ b) * dphi[None, :]
        scale = (np.abs(R) @ np.abs(b)) * np.abs(dphi)[None, :]
        if np.any(np.abs(main - alt) > check_tol * np.maximum(1.0, scale)):
            raise ArithmeticError("corrector forms disagree beyond round-off")
        return main

    def deriv(u):
        dphi, d2phi = phi.deriv(u), phi.deriv2(u)
        centered = centered_drift(field, pi, u, convention)
        db = _all_states(_db, field, u)
        dbhat = pi @ db
        dcentered = sign * (db - dbhat[None, :])
        return (R @ dcentered) * dphi[None, :] + (R @ centered) * d2phi[None, :]

    return CoupledFunction(n, value, deriv, descriptor=f"corrector[{phi.descriptor}]")


def apply_coupled_generator(epsilon, G, field, g):
    """``(u;x) -> eps^-1 sum_y Q[x,y] g(u;y) + b(u;x) d/du g(u;x)``.

    The chain acts through ``sum_y Q[x,y] (g(y) - g(x))`` so functions
    that do not depend on the state are annihilated exactly.
    """
    epsilon = check_positive(epsilon, "epsilon")
    _require_scalar(field)
    n = G.n_states
    if g.n_states != n or field.n_states != n:
        raise ValidationError("state-count mismatch between chain, field and function")

    def value(u):
        b = _all_states(_b, field, u)
        return G.apply(g(u)) / epsilon + b * g.deriv(u)

    return CoupledFunction(n, value, descriptor=f"L[{g.descriptor}]")


def theta(field, analysis, x, phi, convention="standard"):
    """``u -> b(u;x) d/du phi1(u;x)``: the first-order remainder (no epsilon dependence)."""
    if not phi.has_deriv2:
        raise ValidationError("theta needs the second derivative of the test function")
    corrector = build_corrector(phi, field, analysis, convention)

    def f(u):
        u = np.atleast_1d(np.asarray(u, dtype=float))
        return _b(field, u, x) * corrector.deriv(u)[x]

    return ScalarFunction(f, descriptor=f"theta({x}){phi.descriptor}")


@dataclass(frozen=True)
class PerturbationReport:
    """Pointwise comparison of ``L_eps phi_eps`` against ``B_hat phi + eps theta phi``.

    ``lhs``, ``rhs`` and ``fast_term`` have shape ``(n_states, len(u))``.
    """

    u: np.ndarray
    epsilon: float
    labels: tuple
    lhs: np.ndarray
    rhs: np.ndarray
    fast_term: np.ndarray
    theta_values: np.ndarray

    @property
    def residual(self):
        return np.abs(self.lhs - self.rhs)

    @property
    def residual_by_state(self):
        return self.residual.max(axis=1)

    @property
    def max_residual(self):
        return float(self.residual.max())

    @property
    def theta_sup(self):
        return float(np.abs(self.theta_values).max())

    def rows(self):
        """``(u, state, lhs, rhs, residual)`` tuples, state-major."""
        res = self.residual
        for x, label in enumerate(self.labels):
            for j, u in enumerate(self.u):
                yield float(u), label, float(self.lhs[x, j]), float(self.rhs[x, j]), float(res[x, j])


def residual_check(phi, epsilon, G, field, analysis, u_grid, convention="standard"):
    """Evaluate both sides of the singular perturbation identity on a grid.

    The left side is assembled by linearity,
    ``L_eps(phi + eps phi1) = L_eps phi + eps L_eps phi1``, so that the
    ``1/eps`` contribution of ``phi`` is kept separately (it is exactly
    zero) and no cancellation between ``phi`` and ``eps phi1`` occurs.
    """
    epsilon = check_positive(epsilon, "epsilon")
    u = check_vector(u_grid, "u_grid")
    n = G.n_states
    if analysis.generator is not G and not np.array_equal(analysis.generator.Q, G.Q):
        raise ValidationError("analysis was computed for a different generator")
    lifted = CoupledFunction.lift(phi, n)
    phi1 = build_corrector(phi, field, analysis, convention)

    fast_term = G.apply(lifted(u)) / epsilon
    slow_part = apply_coupled_generator(epsilon, G, field, lifted)(u)
    lhs = slow_part + epsilon * apply_coupled_generator(epsilon, G, field, phi1)(u)

    bhat_phi = apply_Bhat(field, analysis.pi, phi)(u)
    dphi1 = phi1.deriv(u)
    theta_vals = _all_states(_b, field, u) * dphi1
    rhs = bhat_phi[None, :] + epsilon * theta_vals
    return PerturbationReport(u, epsilon, G.labels, lhs, rhs, fast_term, theta_vals)
