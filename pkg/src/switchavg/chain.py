"""Finite-state continuous-time Markov chains.

Generator algebra (stationary law, projector, potential, semigroup) and
exact path sampling of the fast switching process ``kappa(t / epsilon)``.
"""

from bisect import bisect_right
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from ._validation import (
    ValidationError,
    check_matrix,
    check_positive,
    check_vector,
    frozen,
)

MAX_STATES = 64
ROW_SUM_TOL = 1e-12
IDENTITY_TOL = 1e-8


class NumericalError(RuntimeError):
    """A linear-algebra step failed or produced an uncertifiable result."""


@dataclass(frozen=True)
class GeneratorMatrix:
    """Generator ``Q = q(x) P(x, y)`` of an irreducible finite chain.

    Attributes
    ----------
    labels : tuple of str
        State identifiers, in matrix order.
    q : ndarray, shape (n,)
        Exit rates (1 / time).
    P : ndarray, shape (n, n)
        Row-stochastic jump kernel with zero diagonal.
    Q : ndarray, shape (n, n)
        Dense generator with rows summing to zero.
    """

    labels: tuple
    q: np.ndarray
    P: np.ndarray
    Q: np.ndarray

    @property
    def n_states(self):
        return len(self.labels)

    def index(self, label):
        try:
            return self.labels.index(label)
        except ValueError:
            raise KeyError(f"unknown state {label!r}") from None

    def apply(self, g):
        """Act on functions of the state: ``(Qg)(x) = sum_y Q[x,y] (g(y) - g(x))``.

        ``g`` has the state on its leading axis. The difference form makes
        the result exactly zero when ``g`` does not depend on the state.
        """
        g = np.asarray(g, dtype=float)
        n = self.n_states
        if g.shape[0] != n:
            raise ValidationError(f"state axis has length {g.shape[0]}, expected {n}")
        out = np.zeros_like(g)
        for x in range(n):
            acc = np.zeros_like(g[x])
            for y in range(n):
                if y != x and self.Q[x, y] != 0.0:
                    acc = acc + self.Q[x, y] * (g[y] - g[x])
            out[x] = acc
        return out


def _strongly_connected(support):
    n = support.shape[0]

    def reach(adj):
        seen = {0}
        stack = [0]
        while stack:
            x = stack.pop()
            for y in np.flatnonzero(adj[x]):
                if y not in seen:
                    seen.add(int(y))
                    stack.append(int(y))
        return seen

    fwd = reach(support)
    bwd = reach(support.T)
    missing = sorted(set(range(n)) - (fwd & bwd))
    return missing


def build_generator(q, P, labels=None, max_states=MAX_STATES):
    """Assemble and validate a generator from exit rates and a jump kernel.

    Parameters
    ----------
    q : array_like, shape (n,)
        Exit rates, strictly positive unless ``n == 1`` (then ``q = 0``).
    P : array_like, shape (n, n)
        Jump kernel: non-negative, zero diagonal, rows summing to one.
    labels : sequence, optional
        State names; defaults to ``"0", "1", ...``.
    max_states : int
        Upper bound on the number of states.

    Returns
    -------
    GeneratorMatrix

    Raises
    ------
    ValidationError
        On dimension mismatch, negative rate, invalid kernel row or a
        reducible chain. The message names the offending state.
    """
    q = check_vector(q, "q")
    n = q.shape[0]
    if n > max_states:
        raise ValidationError(f"chain has {n} states, limit is {max_states}")
    P = check_matrix(P, "P")
    if P.shape != (n, n):
        raise ValidationError(f"dimension mismatch: q has length {n} but P has shape {P.shape}")
    labels = tuple(str(i) for i in range(n)) if labels is None else tuple(str(s) for s in labels)
    if len(labels) != n:
        raise ValidationError(f"dimension mismatch: {len(labels)} labels for {n} states")
    if len(set(labels)) != n:
        raise ValidationError("state labels must be unique")

    for x in range(n):
        if q[x] < 0:
            raise ValidationError(f"negative rate q={q[x]!r} at state {labels[x]!r} (index {x})")
    if n == 1:
        if q[0] != 0 or P[0, 0] not in (0.0, 1.0):
            raise ValidationError(f"single-state chain must have q=0, got {q[0]!r} at state {labels[0]!r}")
        return GeneratorMatrix(labels, frozen(np.zeros(1)), frozen(np.zeros((1, 1))), frozen(np.zeros((1, 1))))

    for x in range(n):
        if q[x] == 0:
            raise ValidationError(f"zero rate at state {labels[x]!r} (index {x}); absorbing states are not ergodic")
        if np.any(P[x] < 0):
            raise ValidationError(f"jump kernel row {x} (state {labels[x]!r}) has negative entries")
        if P[x, x] != 0:
            raise ValidationError(f"jump kernel row {x} (state {labels[x]!r}) has nonzero diagonal P[x,x]={P[x, x]!r}")
        if abs(P[x].sum() - 1.0) > ROW_SUM_TOL:
            raise ValidationError(f"jump kernel row {x} (state {labels[x]!r}) is not stochastic: sums to {P[x].sum()!r}")

    missing = _strongly_connected(P > 0)
    if missing:
        names = [labels[i] for i in missing]
        raise ValidationError(f"reducible chain: states {names} are not mutually reachable with state {labels[0]!r}")

    Q = q[:, None] * P
    Q[np.diag_indices(n)] = 0.0
    # Diagonal is the negated off-diagonal row sum so rows cancel to round-off.
    Q[np.diag_indices(n)] = -Q.sum(axis=1)
    return GeneratorMatrix(labels, frozen(q), frozen(P), frozen(Q))


def generator_from_matrix(Q, labels=None, max_states=MAX_STATES):
    """Split a dense generator into rates and kernel and validate it."""
    Q = check_matrix(Q, "Q")
    n = Q.shape[0]
    if Q.shape != (n, n):
        raise ValidationError(f"Q must be square, got {Q.shape}")
    q = -np.diag(Q).copy()
    if n == 1:
        return build_generator(q, np.zeros((1, 1)), labels, max_states)
    off = Q.copy()
    off[np.diag_indices(n)] = 0.0
    if np.any(off < 0):
        x, y = np.argwhere(off < 0)[0]
        raise ValidationError(f"negative off-diagonal Q[{x},{y}]={Q[x, y]!r}")
    if np.any(np.abs(Q.sum(axis=1)) > 1e-10 * np.maximum(1.0, q)):
        x = int(np.argmax(np.abs(Q.sum(axis=1))))
        raise ValidationError(f"row {x} of Q does not sum to zero")
    with np.errstate(divide="ignore", invalid="ignore"):
        P = off / off.sum(axis=1, keepdims=True)
    P = np.nan_to_num(P)
    return build_generator(off.sum(axis=1), P, labels, max_states)


def stationary_distribution(G):
    """Stationary probability vector of an irreducible generator.

    Solves ``pi Q = 0`` with ``sum(pi) = 1`` by replacing one balance
    equation with the normalisation.

    Raises
    ------
    NumericalError
        If the system is singular or ill conditioned, or the solution
        fails the balance check.
    """
    n = G.n_states
    if n == 1:
        return frozen(np.ones(1))
    A = G.Q.T.copy()
    A[-1, :] = 1.0
    rhs = np.zeros(n)
    rhs[-1] = 1.0
    cond = np.linalg.cond(A)
    if not np.isfinite(cond) or cond > 1e12:
        raise NumericalError(f"stationary system is ill conditioned (cond={cond:.3e})")
    pi = np.linalg.solve(A, rhs)
    if np.any(pi <= 0):
        raise NumericalError(f"stationary solve produced non-positive mass {pi.min():.3e}")
    residual = np.max(np.abs(pi @ G.Q))
    if residual > 1e-10 * max(1.0, np.max(G.q)):
        raise NumericalError(f"stationary balance residual {residual:.3e} too large")
    return frozen(pi)


def projector(pi):
    """Rank-one matrix whose rows all equal ``pi``."""
    pi = np.asarray(pi, dtype=float)
    return frozen(np.tile(pi, (pi.shape[0], 1)))


def potential_matrix(G, pi):
    """Potential (deviation) matrix ``R0 = int_0^inf (P_t - Pi) dt``.

    Computed as ``(Pi - Q)^{-1} - Pi``, the unique solution of
    ``Q R0 = R0 Q = Pi - I`` with ``Pi R0 = 0``.
    """
    n = G.n_states
    Pi = projector(pi)
    try:
        Z = np.linalg.solve(Pi - G.Q, np.eye(n))
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"potential solve failed: {exc}") from None
    R0 = Z - Pi
    target = Pi - np.eye(n)
    scale = max(1.0, np.max(np.abs(G.Q)))
    err = max(np.max(np.abs(G.Q @ R0 - target)), np.max(np.abs(R0 @ G.Q - target)))
    if err > IDENTITY_TOL * scale:
        raise NumericalError(f"potential identity residual {err:.3e} exceeds tolerance")
    return frozen(R0)


def transition_semigroup(G, t):
    """Transition matrix ``P_t = exp(Q t)``."""
    t = check_positive(t, "t", allow_zero=True)
    Pt = scipy.linalg.expm(G.Q * t)
    return Pt


@dataclass(frozen=True)
class ChainAnalysis:
    """Stationary law, projector and potential of a generator."""

    generator: GeneratorMatrix
    pi: np.ndarray
    Pi: np.ndarray
    R0: np.ndarray

    def residuals(self):
        """Max-norm residuals of the defining identities."""
        Q, Pi, R0 = self.generator.Q, self.Pi, self.R0
        n = Q.shape[0]
        target = Pi - np.eye(n)
        return {
            "pi_Q": float(np.max(np.abs(self.pi @ Q))),
            "pi_sum": float(abs(self.pi.sum() - 1.0)),
            "Q_R0": float(np.max(np.abs(Q @ R0 - target))),
            "R0_Q": float(np.max(np.abs(R0 @ Q - target))),
            "Pi_R0": float(np.max(np.abs(Pi @ R0))),
            "R0_Pi": float(np.max(np.abs(R0 @ Pi))),
            "R0_rowsum": float(np.max(np.abs(R0.sum(axis=1)))),
        }


def analyze_chain(G):
    pi = stationary_distribution(G)
    return ChainAnalysis(G, pi, projector(pi), potential_matrix(G, pi))


def random_generator(rng, n, rate_range=(0.5, 2.0), density=1.0):
    """Draw a random irreducible generator (used by tests and demos).

    A cyclic backbone guarantees irreducibility; other edges are kept
    with probability ``density``.
    """
    if n == 1:
        return build_generator([0.0], [[0.0]])
    W = rng.uniform(0.1, 1.0, size=(n, n)) * (rng.uniform(size=(n, n)) < density)
    for x in range(n):
        W[x, (x + 1) % n] = max(W[x, (x + 1) % n], 0.1)
    W[np.diag_indices(n)] = 0.0
    P = W / W.sum(axis=1, keepdims=True)
    q = rng.uniform(*rate_range, size=n)
    return build_generator(q, P)


def make_stream(seed, *key):
    """Independent generator keyed by ``(seed, *key)``.

    Substreams depend only on the key, never on the order in which they
    are requested, so parallel runs reproduce serial ones.
    """
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.PCG64(ss))


def _as_stream(stream):
    if isinstance(stream, np.random.Generator):
        return stream
    if isinstance(stream, np.random.SeedSequence):
        return np.random.Generator(np.random.PCG64(stream))
    return make_stream(stream)


@dataclass(frozen=True)
class JumpPath:
    """One realisation of ``kappa(t / epsilon)`` on ``[0, T]``.

    ``states`` holds state indices; ``states[k]`` is occupied on
    ``[jump_times[k-1], jump_times[k])`` with ``jump_times[-1] = 0``.
    """

    horizon: float
    epsilon: float
    jump_times: np.ndarray
    states: np.ndarray
    labels: tuple
    stream_id: tuple = field(default=())

    @property
    def n_jumps(self):
        return len(self.jump_times)

    def state_at(self, t):
        """State index occupied at time(s) ``t`` (right-continuous)."""
        idx = np.searchsorted(self.jump_times, t, side="right")
        return self.states[idx]

    def occupation(self, n_states):
        """Time spent in each state over ``[0, T]``."""
        edges = np.concatenate([[0.0], self.jump_times, [self.horizon]])
        return np.bincount(self.states, weights=np.diff(edges), minlength=n_states)


def simulate_chain(G, T, epsilon, stream, initial_state=0, block=256):
    """Exact sample of the chain run at speed ``1 / epsilon`` on ``[0, T]``.

    Holding time in ``x`` is exponential with rate ``q[x] / epsilon``; the
    next state is drawn from row ``x`` of ``P``. Randomness is drawn in
    fixed-size blocks so the output is a deterministic function of the
    stream.

    Parameters
    ----------
    G : GeneratorMatrix
    T : float
        Horizon.
    epsilon : float
        Time-scale parameter.
    stream : numpy.random.Generator, SeedSequence or int
    initial_state : int or str
        Index or label of the starting state.
    """
    T = check_positive(T, "T")
    epsilon = check_positive(epsilon, "epsilon")
    rng = _as_stream(stream)
    x0 = G.index(initial_state) if isinstance(initial_state, str) else int(initial_state)
    if not 0 <= x0 < G.n_states:
        raise ValidationError(f"initial state {initial_state!r} out of range")
    stream_id = tuple(getattr(getattr(rng.bit_generator, "seed_seq", None), "spawn_key", ()))

    if G.n_states == 1:
        return JumpPath(T, epsilon, frozen(np.empty(0)), _frozen_int([x0]), G.labels, stream_id)

    cum = [list(np.cumsum(row)) for row in G.P]
    n = G.n_states
    speed = G.q / epsilon
    states = [x0]
    times = []
    t = 0.0
    x = x0
    while True:
        holds = rng.standard_exponential(block)
        picks = rng.random(block)
        done = False
        for k in range(block):
            t += holds[k] / speed[x]
            if t >= T:
                done = True
                break
            x = min(bisect_right(cum[x], picks[k] * cum[x][-1]), n - 1)
            times.append(t)
            states.append(x)
        if done:
            break
    return JumpPath(T, epsilon, frozen(np.array(times)), _frozen_int(states), G.labels, stream_id)


def _frozen_int(values):
    arr = np.array(values, dtype=np.intp)
    arr.setflags(write=False)
    return arr
