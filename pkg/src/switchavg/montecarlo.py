"""Monte Carlo studies of the switched system against its averaged limit.

Each path ``i`` at epsilon index ``j`` draws from its own substream keyed
by ``(seed, j, i)``. Paths are integrated in fixed-size chunks, so the
results are bit-identical whatever the number of worker threads.
"""

import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from ._validation import ValidationError, check_int, check_positive, check_vector
from .chain import GeneratorMatrix, analyze_chain, make_stream, simulate_chain
from .system import (
    DEFAULT_H_MAX,
    VelocityField,
    check_conditions,
    integrate_averaged,
    pad_schedules,
    rk4_batch,
    switched_schedule,
)

DEFAULT_EPSILONS = (0.1, 0.01, 0.001)
DEFAULT_DELTAS = (0.05, 0.1, 0.2)
CONTAINMENT_FACTORS = (2.0, 5.0, 10.0)
QUANTILE_LEVELS = (0.5, 0.9, 0.99)
CHUNK_SIZE = 250


class CertificationError(RuntimeError):
    """The field is not admissible for the requested study."""


@dataclass(frozen=True)
class ExperimentSpec:
    """Configuration of a Monte Carlo study."""

    generator: GeneratorMatrix
    field: VelocityField
    u0: np.ndarray
    horizon: float = 1.0
    epsilons: tuple = DEFAULT_EPSILONS
    n_paths: int = 2000
    deviation_thresholds: tuple = DEFAULT_DELTAS
    containment_levels: tuple = None
    seed: int = 0
    h_max: float = DEFAULT_H_MAX
    initial_state: int = 0
    allow_uncertified: bool = False

    def __post_init__(self):
        u0 = check_vector(self.u0, "u0")
        if u0.shape[0] != self.field.dim:
            raise ValidationError(f"u0 has dimension {u0.shape[0]}, field has {self.field.dim}")
        if self.field.n_states != self.generator.n_states:
            raise ValidationError(
                f"field has {self.field.n_states} regimes but the chain has {self.generator.n_states} states")
        object.__setattr__(self, "u0", u0)
        object.__setattr__(self, "horizon", check_positive(self.horizon, "horizon"))
        object.__setattr__(self, "n_paths", check_int(self.n_paths, "n_paths", minimum=1))
        object.__setattr__(self, "h_max", check_positive(self.h_max, "h_max"))
        object.__setattr__(self, "seed", check_int(self.seed, "seed", minimum=0))
        eps = tuple(check_positive(e, "epsilon") for e in self.epsilons)
        if not eps:
            raise ValidationError("epsilon list is empty")
        object.__setattr__(self, "epsilons", eps)
        deltas = tuple(check_positive(d, "deviation threshold") for d in self.deviation_thresholds)
        object.__setattr__(self, "deviation_thresholds", deltas)
        levels = self.containment_levels
        if levels is None:
            scale = float(np.linalg.norm(u0)) + 1.0
            levels = tuple(k * scale for k in CONTAINMENT_FACTORS)
        object.__setattr__(self, "containment_levels", tuple(check_positive(c, "containment level") for c in levels))
        x0 = check_int(self.initial_state, "initial_state", minimum=0)
        if x0 >= self.generator.n_states:
            raise ValidationError(f"initial_state {x0} out of range")


@dataclass(frozen=True)
class PathStats:
    """Per-path summaries: running sup of ``|u|`` and sup deviation from the averaged path."""

    sup_u: float
    sup_u_sq: float
    sup_dev: float
    stream_key: tuple
    n_jumps: int


@dataclass
class PathSample:
    """Per-path summaries for one epsilon, in path order."""

    epsilon: float
    sup_u: np.ndarray
    sup_dev: np.ndarray
    n_jumps: np.ndarray
    failed: np.ndarray
    fail_time: np.ndarray
    eps_index: int = 0

    @property
    def n_excluded(self):
        return int(self.failed.sum())

    def ok(self, values):
        return values[~self.failed]

    def path_stats(self):
        for i in range(len(self.sup_u)):
            if not self.failed[i]:
                s = float(self.sup_u[i])
                yield PathStats(s, s * s, float(self.sup_dev[i]), (self.eps_index, i), int(self.n_jumps[i]))


def _run_chunk(spec, eps_index, start, stop, avg_path):
    eps = spec.epsilons[eps_index]
    jump_paths = [
        simulate_chain(spec.generator, spec.horizon, eps, make_stream(spec.seed, eps_index, i), spec.initial_state)
        for i in range(start, stop)
    ]
    schedules = [switched_schedule(p, spec.h_max) for p in jump_paths]
    times, regimes = pad_schedules(schedules)
    m = stop - start
    U, fail_time = rk4_batch(spec.field, np.tile(spec.u0, (m, 1)), times, regimes)
    uhat = avg_path.at(times.ravel()).reshape(U.shape)
    with np.errstate(invalid="ignore", over="ignore"):
        sup_u = np.max(np.linalg.norm(U, axis=2), axis=1)
        sup_dev = np.max(np.linalg.norm(U - uhat, axis=2), axis=1)
    n_jumps = np.array([p.n_jumps for p in jump_paths])
    return sup_u, sup_dev, n_jumps, fail_time


def sample_paths(spec, eps_index, n_jobs=1, chunk_size=CHUNK_SIZE, avg_path=None):
    """Simulate ``spec.n_paths`` switched paths at one epsilon and summarise each.

    The averaged trajectory is shared by all paths; its dense output is
    evaluated on every node of each switched path (lattice plus jump
    times), which is the union of both grids.
    """
    if avg_path is None:
        pi = analyze_chain(spec.generator).pi
        avg_path = integrate_averaged(spec.field, pi, spec.u0, spec.horizon, spec.h_max)
    bounds = [(s, min(s + chunk_size, spec.n_paths)) for s in range(0, spec.n_paths, chunk_size)]
    if n_jobs > 1 and len(bounds) > 1:
        with ThreadPoolExecutor(max_workers=n_jobs) as pool:
            parts = list(pool.map(lambda b: _run_chunk(spec, eps_index, b[0], b[1], avg_path), bounds))
    else:
        parts = [_run_chunk(spec, eps_index, a, b, avg_path) for a, b in bounds]
    sup_u, sup_dev, n_jumps, fail_time = (np.concatenate(p) for p in zip(*parts))
    failed = np.isfinite(fail_time) | ~np.isfinite(sup_u) | ~np.isfinite(sup_dev)
    return PathSample(spec.epsilons[eps_index], sup_u, sup_dev, n_jumps, failed, fail_time, eps_index)


@dataclass(frozen=True)
class Estimate:
    epsilon: object
    statistic: str
    value: float
    stderr: float
    n_used: int
    n_excluded: int
    certified: bool


@dataclass
class EstimateTable:
    """Statistics of a study, one entry per ``(epsilon, statistic)``.

    ``epsilon`` is ``"all"`` for cross-epsilon summaries. Wall-clock
    time is kept out of :meth:`to_csv` so that CSV output is
    reproducible byte for byte.
    """

    study: str
    rows: list = field(default_factory=list)
    certified: bool = True
    notes: list = field(default_factory=list)
    wall_clock: float = 0.0
    samples: dict = field(default_factory=dict)

    COLUMNS = ("epsilon", "statistic", "value", "stderr", "n_used", "n_excluded", "certified")

    def add(self, epsilon, statistic, value, stderr=float("nan"), n_used=0, n_excluded=0, certified=True):
        self.rows.append(Estimate(epsilon, statistic, float(value), float(stderr), int(n_used),
                                  int(n_excluded), bool(certified)))

    def get(self, epsilon, statistic):
        for r in self.rows:
            if r.epsilon == epsilon and r.statistic == statistic:
                return r
        raise KeyError((epsilon, statistic))

    def value(self, epsilon, statistic):
        return self.get(epsilon, statistic).value

    def to_csv(self):
        lines = [",".join(self.COLUMNS)]
        for r in self.rows:
            eps = r.epsilon if isinstance(r.epsilon, str) else repr(float(r.epsilon))
            lines.append(",".join([eps, r.statistic, repr(r.value), repr(r.stderr), str(r.n_used),
                                   str(r.n_excluded), "true" if r.certified else "false"]))
        return "\n".join(lines) + "\n"


def certify(spec, box_radius=None, grid=401):
    """Check growth and Lipschitz conditions for the study's field.

    Returns ``(certified, reasons, report)``.
    """
    f = spec.field
    reasons = []
    if f.admissibility == "domain":
        lo, hi = f.domain
        if np.any(spec.u0 < lo) or np.any(spec.u0 > hi):
            reasons.append(f"u0={spec.u0.tolist()} lies outside the invariant box [{lo.tolist()}, {hi.tolist()}]")
        box = (lo, hi)
    else:
        r = box_radius if box_radius is not None else max(10.0, 2.0 * (float(np.max(np.abs(spec.u0))) + 1.0))
        box = (spec.u0 - r, spec.u0 + r)
    per_axis = grid if f.dim == 1 else max(2, int(round(grid ** (1.0 / f.dim))))
    report = check_conditions(f, box, per_axis)
    if f.admissibility == "none":
        reasons.append(f"field {f.name!r} violates linear growth / Lipschitz continuity")
    if not report.I_holds and f.growth_constant is not None:
        reasons.append(f"linear growth fails: estimated L={report.L_est:.6g} exceeds declared {f.growth_constant}")
    if not report.II_holds and f.lipschitz_constant is not None:
        reasons.append(f"Lipschitz condition fails: estimated C={report.C_est:.6g} exceeds declared {f.lipschitz_constant}")
    return not reasons, reasons, report


def _prepare(spec, study):
    ok, reasons, report = certify(spec)
    if not ok and not spec.allow_uncertified:
        raise CertificationError("; ".join(reasons))
    table = EstimateTable(study, certified=ok)
    table.notes.extend(reasons)
    if report.note:
        table.notes.append(report.note)
    return table, report


def _collect(spec, n_jobs):
    pi = analyze_chain(spec.generator).pi
    avg = integrate_averaged(spec.field, pi, spec.u0, spec.horizon, spec.h_max)
    return [sample_paths(spec, j, n_jobs, avg_path=avg) for j in range(len(spec.epsilons))]


def _proportion(mask):
    n = len(mask)
    p = float(np.mean(mask)) if n else float("nan")
    return p, math.sqrt(p * (1 - p) / n) if n else float("nan")


def _mean(x):
    n = len(x)
    if n == 0:
        return float("nan"), float("nan")
    se = float(np.std(x, ddof=1) / math.sqrt(n)) if n > 1 else float("nan")
    return float(np.mean(x)), se


def _common_rows(table, spec, sample):
    """Deviation, moment and containment statistics for one epsilon."""
    eps = sample.epsilon
    cert = table.certified and sample.n_excluded == 0
    kw = dict(n_used=len(sample.sup_u) - sample.n_excluded, n_excluded=sample.n_excluded, certified=cert)
    D = np.sort(sample.ok(sample.sup_dev))
    S = sample.ok(sample.sup_u)
    m, se = _mean(D)
    table.add(eps, "D_mean", m, se, **kw)
    table.add(eps, "D_median", np.median(D) if len(D) else np.nan, **kw)
    for q in QUANTILE_LEVELS:
        table.add(eps, f"D_q{q:g}", np.quantile(D, q) if len(D) else np.nan, **kw)
    for d in spec.deviation_thresholds:
        p, se = _proportion(D > d)
        table.add(eps, f"P(D>{d:g})", p, se, **kw)
    m, se = _mean(S * S)
    table.add(eps, "E_sup_sq", m, se, **kw)
    for c in spec.containment_levels:
        p, se = _proportion(S > c)
        table.add(eps, f"P(sup>{c:g})", p, se, **kw)
    table.add(eps, "mean_jumps", float(np.mean(sample.n_jumps)), **kw)


def _finish(table, spec, samples, t0):
    table.samples = {s.epsilon: s for s in samples}
    excluded = sum(s.n_excluded for s in samples)
    if excluded:
        table.certified = False
        table.notes.append(f"{excluded} path(s) overflowed and were excluded")
    table.wall_clock = time.perf_counter() - t0
    return table


def run_deviation_study(spec, n_jobs=1):
    """Distribution of ``D = max_t |u_eps(t) - u_hat(t)|`` for each epsilon.

    Raises
    ------
    CertificationError
        If the field fails the growth/Lipschitz checks and
        ``spec.allow_uncertified`` is false.
    """
    t0 = time.perf_counter()
    table, _ = _prepare(spec, "deviation")
    samples = _collect(spec, n_jobs)
    for s in samples:
        _common_rows(table, spec, s)
    medians = [table.value(e, "D_median") for e in spec.epsilons]
    order = np.argsort(spec.epsilons)[::-1]
    decreasing = all(medians[order[k + 1]] < medians[order[k]] for k in range(len(order) - 1))
    table.add("all", "median_strictly_decreasing", float(decreasing), certified=table.certified)
    return _finish(table, spec, samples, t0)


def gronwall_constants(u0, L, T):
    """Constants ``(k1, k2)`` of the envelope ``E sup_{t<=T} |u_t|^2 <= k1 exp(k2 T)``.

    From ``|u|* <= |u0| + A*``, ``A*_t <= L int_0^t (1 + u*_s) ds``:
    ``(u*_t)^2 <= 2 u0^2 + 2 (A*_t)^2`` and, by Cauchy-Schwarz and
    ``(1 + a)^2 <= 2 + 2 a^2``,
    ``(A*_t)^2 <= 2 L^2 t^2 + 2 L^2 t int_0^t (u*_s)^2 ds``. So with
    ``k1 = 2 u0^2 + 4 L^2 T^2`` and ``k2 = 4 L^2 T`` Gronwall gives
    ``E (u*_t)^2 <= k1 exp(k2 t)``.
    """
    u0_sq = float(np.sum(np.square(u0)))
    return 2.0 * u0_sq + 4.0 * L * L * T * T, 4.0 * L * L * T


def trend_slope(epsilons, means, stderrs):
    """Weighted least-squares slope of ``means`` against ``log(1/epsilon)``.

    Returns ``(slope, stderr)``. A positive slope means growth as
    epsilon decreases.
    """
    x = -np.log(np.asarray(epsilons, dtype=float))
    y = np.asarray(means, dtype=float)
    se = np.asarray(stderrs, dtype=float)
    if len(x) < 2:
        return 0.0, float("inf")
    if np.all(se > 0):
        w = 1.0 / se**2
    else:
        w = np.ones_like(x)
    xm = np.sum(w * x) / np.sum(w)
    sxx = np.sum(w * (x - xm) ** 2)
    slope = float(np.sum(w * (x - xm) * (y - np.sum(w * y) / np.sum(w))) / sxx)
    slope_se = float(math.sqrt(1.0 / sxx)) if np.all(se > 0) else 0.0
    return slope, slope_se


def run_moment_bound_study(spec, n_jobs=1):
    """Empirical ``E sup |u|^2`` per epsilon against the Gronwall envelope."""
    t0 = time.perf_counter()
    table, report = _prepare(spec, "moment")
    L = spec.field.growth_constant if spec.field.growth_constant is not None else report.L_est
    k1, k2 = gronwall_constants(spec.u0, L, spec.horizon)
    envelope = k1 * math.exp(k2 * spec.horizon)
    samples = _collect(spec, n_jobs)
    means, ses = [], []
    for s in samples:
        _common_rows(table, spec, s)
        row = table.get(s.epsilon, "E_sup_sq")
        means.append(row.value)
        ses.append(row.stderr)
        table.add(s.epsilon, "envelope_holds", float(row.value <= envelope), certified=row.certified)
    table.add("all", "growth_constant", L, certified=table.certified)
    table.add("all", "gronwall_k1", k1, certified=table.certified)
    table.add("all", "gronwall_k2", k2, certified=table.certified)
    table.add("all", "gronwall_envelope", envelope, certified=table.certified)
    slope, slope_se = trend_slope(spec.epsilons, means, ses)
    table.add("all", "trend_slope_log_inv_eps", slope, slope_se, certified=table.certified)
    table.add("all", "no_growth_as_eps_decreases", float(slope <= 2.0 * slope_se), certified=table.certified)
    return _finish(table, spec, samples, t0)


def run_ccc_study(spec, n_jobs=1):
    """Empirical ``P(sup |u| > c)`` per ``(epsilon, c)`` with Chebyshev bounds."""
    t0 = time.perf_counter()
    table, _ = _prepare(spec, "ccc")
    samples = _collect(spec, n_jobs)
    reach = float(np.linalg.norm(spec.u0)) + spec.field.speed_bound * spec.horizon + 1.0
    for s in samples:
        _common_rows(table, spec, s)
        S = s.ok(s.sup_u)
        cert = table.certified and s.n_excluded == 0
        m2, m2_se = _mean(S * S)
        for c in spec.containment_levels:
            p = table.get(s.epsilon, f"P(sup>{c:g})")
            bound = m2 / (c * c)
            combined = math.sqrt(p.stderr**2 + (m2_se / (c * c)) ** 2) if np.isfinite(m2_se) else p.stderr
            table.add(s.epsilon, f"chebyshev_bound(c={c:g})", bound, m2_se / (c * c), certified=cert)
            table.add(s.epsilon, f"chebyshev_consistent(c={c:g})", float(p.value <= bound + 3 * combined), certified=cert)
        levels = sorted(spec.containment_levels)
        probs = [float(np.mean(S > c)) for c in levels]
        table.add(s.epsilon, "monotone_in_c", float(all(a >= b for a, b in zip(probs, probs[1:]))), certified=cert)
        if math.isfinite(reach):
            p, se = _proportion(S > reach)
            table.add(s.epsilon, f"P(sup>{reach:g})", p, se, len(S), s.n_excluded, cert)
    if math.isfinite(reach):
        table.add("all", "reachability_level", reach, certified=table.certified)
    return _finish(table, spec, samples, t0)


STUDIES = {
    "deviation-study": run_deviation_study,
    "moment-study": run_moment_bound_study,
    "ccc-study": run_ccc_study,
}
