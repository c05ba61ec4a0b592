"""Velocity fields and integration of switched and averaged systems.

The switched system follows ``du/dt = b(u; x)`` with ``x`` the current
chain state; the averaged system follows ``du/dt = sum_x pi[x] b(u; x)``.
Both are integrated with the classical fixed-step fourth-order
Runge-Kutta scheme on a uniform lattice, with every jump time inserted
as an additional breakpoint so that regimes switch exactly at jumps.
"""

from dataclasses import dataclass

import numpy as np
from scipy.interpolate import CubicHermiteSpline

from ._validation import (
    ValidationError,
    check_int,
    check_matrix,
    check_positive,
    check_probability_vector,
    check_vector,
    frozen,
)
from .chain import NumericalError

DEFAULT_H_MAX = 0.01


class VelocityField:
    """Family ``b(u; x)`` of vector fields indexed by chain state.

    Subclasses implement :meth:`_eval` and :meth:`_jacobian` for
    batches: ``u`` has shape ``(..., d)`` and ``x`` is an integer array
    broadcastable to ``u.shape[:-1]``.

    Attributes
    ----------
    name : str
    n_states : int
    dim : int
    growth_constant : float or None
        Declared ``L`` with ``|b(u;x)| <= L (1 + |u|)``.
    lipschitz_constant : float or None
        Declared ``C`` with ``|b(u;x) - b(u';x)| <= C |u - u'|``.
    admissibility : {"global", "domain", "none"}
        Whether the growth and Lipschitz conditions hold on all of
        ``R^d``, only on :attr:`domain`, or not at all.
    domain : tuple of ndarray or None
        Invariant box ``(lo, hi)`` for on-domain fields.
    """

    name = "field"
    admissibility = "global"
    domain = None

    def __init__(self, n_states, dim, growth_constant=None, lipschitz_constant=None):
        self.n_states = check_int(n_states, "n_states", minimum=1)
        self.dim = check_int(dim, "dim", minimum=1)
        self.growth_constant = None if growth_constant is None else check_positive(
            growth_constant, "growth_constant", allow_zero=True)
        self.lipschitz_constant = None if lipschitz_constant is None else check_positive(
            lipschitz_constant, "lipschitz_constant", allow_zero=True)

    @property
    def speed_bound(self):
        """``sup_{u,x} |b(u;x)|``, or ``inf`` when unbounded."""
        return np.inf

    def _prepare(self, u, x):
        u = np.asarray(u, dtype=float)
        if u.shape[-1:] != (self.dim,):
            raise ValidationError(f"u must have trailing dimension {self.dim}, got shape {u.shape}")
        x = np.asarray(x, dtype=np.intp)
        if np.any((x < 0) | (x >= self.n_states)):
            raise ValidationError(f"state index out of range [0, {self.n_states})")
        return u, x

    def eval(self, u, x):
        u, x = self._prepare(u, x)
        return self._eval(u, x)

    def jacobian(self, u, x):
        """Matrix ``db/du`` with shape ``u.shape + (d,)``."""
        u, x = self._prepare(u, x)
        return self._jacobian(u, x)

    def __call__(self, u, x):
        return self.eval(u, x)

    def _eval(self, u, x):
        raise NotImplementedError

    def _jacobian(self, u, x):
        raise NotImplementedError

    def __repr__(self):
        return f"{type(self).__name__}(name={self.name!r}, n_states={self.n_states}, dim={self.dim})"


def _per_state(values, name, n_states=None, dim=None):
    """Coerce per-state parameters to shape ``(n_states, dim)``."""
    arr = np.array(values, dtype=float)
    if arr.ndim == 1:
        arr = arr[:, None]
    arr = check_matrix(arr, name)
    if n_states is not None and arr.shape[0] != n_states:
        raise ValidationError(f"{name} has {arr.shape[0]} states, expected {n_states}")
    if dim is not None and arr.shape[1] != dim:
        raise ValidationError(f"{name} has dimension {arr.shape[1]}, expected {dim}")
    return frozen(arr)


class CatalogField(VelocityField):
    """Componentwise catalog field with per-state parameters.

    ========== ============================ ==============
    kind       b(u; x)                      admissibility
    ========== ============================ ==============
    constant   c_x                          global
    linear     a_x u + c_x                  global
    bounded-trig a_x sin(u) + c_x           global
    logistic   r_x u (1 - u / K_x)          on [0, max K]
    quadratic  a_x u**2 + c_x               none
    ========== ============================ ==============

    Parameters are arrays of shape ``(n_states,)`` for scalar fields or
    ``(n_states, d)``; operations act componentwise. Unless given
    explicitly, growth and Lipschitz constants are derived from the
    parameters for the globally admissible kinds.
    """

    KINDS = {
        "constant": ("c",),
        "linear": ("a", "c"),
        "bounded-trig": ("a", "c"),
        "logistic": ("r", "K"),
        "quadratic": ("a", "c"),
    }

    def __init__(self, kind, growth_constant=None, lipschitz_constant=None, **params):
        if kind not in self.KINDS:
            raise ValidationError(f"unknown field kind {kind!r}; choose from {sorted(self.KINDS)}")
        allowed = self.KINDS[kind]
        unknown = set(params) - set(allowed)
        if unknown:
            raise ValidationError(f"unknown parameters {sorted(unknown)} for field {kind!r}")
        required = {"constant": ("c",), "logistic": ("r", "K")}.get(kind, ("a",))
        for key in required:
            if key not in params:
                raise ValidationError(f"field {kind!r} requires parameter {key!r}")
        first = _per_state(params[required[0]], required[0])
        n, d = first.shape
        arrays = {}
        for key in allowed:
            if key in params:
                arrays[key] = _per_state(params[key], key, n, d)
            else:
                arrays[key] = frozen(np.zeros((n, d)))
        if kind == "logistic" and np.any(arrays["K"] <= 0):
            raise ValidationError("logistic carrying capacities K must be > 0")

        self.kind = kind
        self.name = kind
        self.params = arrays
        if kind == "logistic":
            self.admissibility = "domain"
            self.domain = (frozen(np.zeros(d)), frozen(arrays["K"].max(axis=0)))
        elif kind == "quadratic":
            self.admissibility = "none"

        if growth_constant is None:
            growth_constant = self._default_growth()
        if lipschitz_constant is None:
            lipschitz_constant = self._default_lipschitz()
        super().__init__(n, d, growth_constant, lipschitz_constant)

    def _default_growth(self):
        p = self.params
        if self.kind == "constant":
            return float(np.max(np.linalg.norm(p["c"], axis=1)))
        if self.kind in ("linear", "bounded-trig"):
            # |a u + c| <= max|a| |u| + |c| <= max(max|a|, |c|) (1 + |u|)
            a = np.max(np.abs(p["a"]), axis=1)
            c = np.linalg.norm(p["c"], axis=1)
            return float(np.max(np.maximum(a, c)))
        return None

    def _default_lipschitz(self):
        p = self.params
        if self.kind == "constant":
            return 0.0
        if self.kind in ("linear", "bounded-trig"):
            return float(np.max(np.abs(p["a"])))
        return None

    @property
    def speed_bound(self):
        p = self.params
        if self.kind == "constant":
            return float(np.max(np.linalg.norm(p["c"], axis=1)))
        if self.kind == "bounded-trig":
            return float(np.max(np.linalg.norm(np.abs(p["a"]) + np.abs(p["c"]), axis=1)))
        if self.kind == "linear" and not np.any(p["a"]):
            return float(np.max(np.linalg.norm(p["c"], axis=1)))
        return np.inf

    def _eval(self, u, x):
        p = self.params
        if self.kind == "constant":
            return np.broadcast_to(p["c"][x], u.shape).copy()
        if self.kind == "linear":
            return p["a"][x] * u + p["c"][x]
        if self.kind == "bounded-trig":
            return p["a"][x] * np.sin(u) + p["c"][x]
        if self.kind == "logistic":
            return p["r"][x] * u * (1.0 - u / p["K"][x])
        return p["a"][x] * u * u + p["c"][x]

    def _jacobian(self, u, x):
        p = self.params
        if self.kind == "constant":
            diag = np.zeros_like(u)
        elif self.kind == "linear":
            diag = np.broadcast_to(p["a"][x], u.shape)
        elif self.kind == "bounded-trig":
            diag = p["a"][x] * np.cos(u)
        elif self.kind == "logistic":
            diag = p["r"][x] * (1.0 - 2.0 * u / p["K"][x])
        else:
            diag = 2.0 * p["a"][x] * u
        out = np.zeros(u.shape + (self.dim,))
        idx = np.arange(self.dim)
        out[..., idx, idx] = diag
        return out

    def describe(self):
        """Plain-data description (kind, parameters, declared constants)."""
        out = {"kind": self.kind}
        for key, val in self.params.items():
            out[key] = val[:, 0].tolist() if self.dim == 1 else val.tolist()
        return out


class AveragedField(VelocityField):
    """Single-regime field ``b_hat(u) = sum_x pi[x] b(u; x)``."""

    def __init__(self, base, pi):
        pi = check_probability_vector(pi, "pi")
        if pi.shape[0] != base.n_states:
            raise ValidationError(
                f"dimension mismatch: pi has length {pi.shape[0]}, field has {base.n_states} states")
        self.base = base
        self.pi = frozen(pi)
        self.name = f"averaged({base.name})"
        self.admissibility = base.admissibility
        self.domain = base.domain
        super().__init__(1, base.dim, base.growth_constant, base.lipschitz_constant)

    @property
    def speed_bound(self):
        return self.base.speed_bound

    def _eval(self, u, x):
        out = np.zeros(u.shape)
        for k in range(self.base.n_states):
            out = out + self.pi[k] * self.base._eval(u, np.full(u.shape[:-1], k, dtype=np.intp))
        return out

    def _jacobian(self, u, x):
        out = np.zeros(u.shape + (self.dim,))
        for k in range(self.base.n_states):
            out = out + self.pi[k] * self.base._jacobian(u, np.full(u.shape[:-1], k, dtype=np.intp))
        return out


def averaged_drift(field, pi):
    """The pi-averaged field, itself a single-regime :class:`VelocityField`."""
    return AveragedField(field, pi)


def _as_state(u0, dim):
    u0 = check_vector(u0, "u0")
    if u0.shape[0] != dim:
        raise ValidationError(f"u0 has dimension {u0.shape[0]}, field has dimension {dim}")
    return u0


def uniform_lattice(T, h_max):
    """Uniform grid on ``[0, T]`` with spacing at most ``h_max``."""
    n = max(1, int(np.ceil(T / h_max - 1e-9)))
    return np.linspace(0.0, T, n + 1)


def rk4_batch(field, u0, times, regimes):
    """Classical RK4 over a batch of step sequences.

    Parameters
    ----------
    field : VelocityField
    u0 : ndarray, shape (m, d)
    times : ndarray, shape (m, S + 1)
        Non-decreasing step nodes per trajectory; zero-length steps are
        allowed as padding and leave the state unchanged.
    regimes : ndarray, shape (m, S)
        State index held during each step.

    Returns
    -------
    U : ndarray, shape (m, S + 1, d)
        States at the nodes. Trajectories that overflow are filled with
        ``nan`` from the failing step on.
    fail_time : ndarray, shape (m,)
        Start time of the first non-finite step, ``nan`` if none.
    """
    m, S1 = times.shape
    U = np.empty((m, S1, field.dim))
    u = np.array(u0, dtype=float)
    U[:, 0] = u
    fail_time = np.full(m, np.nan)
    f = field._eval
    with np.errstate(over="ignore", invalid="ignore"):
        for s in range(S1 - 1):
            h = (times[:, s + 1] - times[:, s])[:, None]
            x = regimes[:, s]
            k1 = f(u, x)
            k2 = f(u + 0.5 * h * k1, x)
            k3 = f(u + 0.5 * h * k2, x)
            k4 = f(u + h * k3, x)
            u = u + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
            bad = ~np.all(np.isfinite(u), axis=1)
            if bad.any():
                new = bad & np.isnan(fail_time)
                fail_time[new] = times[new, s]
                u[bad] = np.nan
            U[:, s + 1] = u
    return U, fail_time


def switched_schedule(jump_path, h_max):
    """Step nodes and per-step regimes for one jump path.

    Nodes are the uniform lattice on ``[0, T]`` merged with the jump
    times, so no step crosses a jump.
    """
    lattice = uniform_lattice(jump_path.horizon, h_max)
    nodes = np.union1d(lattice, jump_path.jump_times)
    regimes = jump_path.state_at(nodes[:-1])
    return nodes, regimes


def pad_schedules(schedules):
    """Stack ragged schedules; padding repeats the final node (zero steps)."""
    S = max(len(r) for _, r in schedules)
    m = len(schedules)
    times = np.empty((m, S + 1))
    regimes = np.zeros((m, S), dtype=np.intp)
    for i, (nodes, reg) in enumerate(schedules):
        k = len(reg)
        times[i, : k + 1] = nodes
        times[i, k + 1:] = nodes[-1]
        regimes[i, :k] = reg
        if k < S:
            regimes[i, k:] = reg[-1] if k else 0
    return times, regimes


@dataclass(frozen=True)
class SwitchedPath:
    """Trajectory of the switched system along one jump path.

    ``regimes[k]`` is the state index held on ``[t[k], t[k+1])``.
    """

    t: np.ndarray
    u: np.ndarray
    regimes: np.ndarray
    jump_path: object
    epsilon: float
    h_max: float

    @property
    def labels(self):
        return self.jump_path.labels

    def regime_labels(self):
        """Label of the regime at each node (the last node keeps the final regime)."""
        idx = np.append(self.regimes, self.regimes[-1]) if len(self.regimes) else np.array([0])
        return [self.labels[i] for i in idx]


@dataclass(frozen=True)
class AveragedPath:
    """Trajectory of the averaged system with cubic Hermite dense output."""

    t: np.ndarray
    u: np.ndarray
    du: np.ndarray
    h_max: float

    def at(self, times):
        """Dense output at arbitrary ``times`` in ``[0, T]``, shape ``(len(times), d)``."""
        spline = CubicHermiteSpline(self.t, self.u, self.du, axis=0, extrapolate=False)
        return spline(np.asarray(times, dtype=float))


def integrate_switched(field, jump_path, u0, h_max=DEFAULT_H_MAX):
    """Integrate ``du/dt = b(u; x_t)`` along a sampled jump path.

    Uses fixed-step RK4 on the uniform lattice of spacing ``h_max``
    refined by the jump times; the state is carried unchanged across
    each jump.

    Raises
    ------
    NumericalError
        If the state becomes non-finite; the message gives the time.
    """
    h_max = check_positive(h_max, "h_max")
    u0 = _as_state(u0, field.dim)
    if np.max(jump_path.states) >= field.n_states:
        raise ValidationError(f"jump path visits states outside the field's {field.n_states} regimes")
    nodes, regimes = switched_schedule(jump_path, h_max)
    U, fail = rk4_batch(field, u0[None, :], nodes[None, :], regimes[None, :])
    if np.isfinite(fail[0]):
        raise NumericalError(f"switched trajectory became non-finite at t={fail[0]!r}")
    return SwitchedPath(frozen(nodes), frozen(U[0]), regimes, jump_path, jump_path.epsilon, h_max)


def integrate_averaged(field, pi, u0, T, h_max=DEFAULT_H_MAX, query_times=()):
    """Integrate the averaged system ``du/dt = b_hat(u)`` on ``[0, T]``.

    The step nodes are the uniform lattice of spacing ``h_max`` merged
    with ``query_times``; :meth:`AveragedPath.at` interpolates between
    them.

    ``field`` may already be averaged (``n_states == 1``) in which case
    ``pi`` should be ``[1]``.
    """
    T = check_positive(T, "T")
    h_max = check_positive(h_max, "h_max")
    avg = field if isinstance(field, AveragedField) and pi is None else averaged_drift(field, pi)
    u0 = _as_state(u0, avg.dim)
    q = np.asarray(query_times, dtype=float).ravel()
    if q.size and (q.min() < 0 or q.max() > T):
        raise ValidationError("query times must lie in [0, T]")
    nodes = np.union1d(uniform_lattice(T, h_max), q)
    regimes = np.zeros((1, len(nodes) - 1), dtype=np.intp)
    U, fail = rk4_batch(avg, u0[None, :], nodes[None, :], regimes)
    if np.isfinite(fail[0]):
        raise NumericalError(f"averaged trajectory became non-finite at t={fail[0]!r}")
    u = U[0]
    du = avg._eval(u, np.zeros(len(u), dtype=np.intp))
    return AveragedPath(frozen(nodes), frozen(u), frozen(du), h_max)


@dataclass(frozen=True)
class ConditionReport:
    """Sampled growth and Lipschitz estimates for a field."""

    L_est: float
    C_est: float
    I_holds: bool
    II_holds: bool
    n_points: int
    note: str = ""


def _box_grid(box, grid):
    lo, hi = (np.atleast_1d(np.asarray(b, dtype=float)) for b in box)
    if lo.shape != hi.shape or np.any(hi < lo) or not np.all(np.isfinite(np.r_[lo, hi])):
        raise ValidationError("box must be a bounded pair (lo, hi) with lo <= hi")
    axes = [np.linspace(a, b, grid) for a, b in zip(lo, hi)]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=-1)


def check_conditions(field, box, grid=201, rtol=1e-9):
    """Estimate growth and Lipschitz constants of ``field`` on a box.

    ``L_est = max |b(u;x)| / (1 + |u|)`` over the sampled points and
    ``C_est`` the largest difference quotient over sampled pairs. When
    a constant is declared on the field, the matching flag says whether
    the samples respect it; otherwise the flag reflects the field's
    admissibility class.

    Parameters
    ----------
    box : (lo, hi)
        Sampling region, scalars or length-``d`` arrays.
    grid : int
        Points per axis (at least 2).
    """
    if isinstance(grid, bool) or not isinstance(grid, (int, np.integer)) or grid < 2:
        raise ValidationError(f"grid must be an integer >= 2, got {grid!r}")
    pts = _box_grid(box, grid)
    if pts.shape[1] != field.dim:
        raise ValidationError(f"box has dimension {pts.shape[1]}, field has {field.dim}")
    norm_u = np.linalg.norm(pts, axis=1)
    L_est = 0.0
    C_est = 0.0
    for x in range(field.n_states):
        b = field._eval(pts, np.full(len(pts), x, dtype=np.intp))
        L_est = max(L_est, float(np.max(np.linalg.norm(b, axis=1) / (1.0 + norm_u))))
        C_est = max(C_est, _max_difference_quotient(pts, b))

    note = ""
    if field.admissibility == "domain":
        lo, hi = field.domain
        note = f"conditions hold only on the invariant box [{lo.tolist()}, {hi.tolist()}]"
    elif field.admissibility == "none":
        note = "field does not satisfy linear growth / Lipschitz continuity globally"
    default = field.admissibility != "none"
    I_holds = default if field.growth_constant is None else L_est <= field.growth_constant * (1 + rtol) + rtol
    II_holds = default if field.lipschitz_constant is None else C_est <= field.lipschitz_constant * (1 + rtol) + rtol
    return ConditionReport(L_est, C_est, bool(I_holds), bool(II_holds), len(pts), note)


def _max_difference_quotient(pts, b, chunk=512):
    best = 0.0
    m = len(pts)
    for start in range(0, m, chunk):
        du = np.linalg.norm(pts[start:start + chunk, None, :] - pts[None, :, :], axis=-1)
        db = np.linalg.norm(b[start:start + chunk, None, :] - b[None, :, :], axis=-1)
        mask = du > 0
        if mask.any():
            best = max(best, float(np.max(db[mask] / du[mask])))
    return best
