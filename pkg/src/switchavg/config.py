"""Scenario files and run configuration.

A scenario is a TOML document with the sections below. Every key is
optional unless marked required; unknown keys are rejected.

.. code-block:: toml

    [chain]
    labels = ["fast", "slow"]        # default "0", "1", ...
    rates = [1.0, 2.0]               # required, exit rates
    kernel = [[0, 1], [1, 0]]        # required, jump kernel rows
    initial_state = "fast"           # label or index, default first state

    [field]
    kind = "linear"                  # constant | linear | bounded-trig | logistic | quadratic
    a = [3.0, -3.0]                  # per-state parameters (kind dependent)
    c = [0.0, 0.0]
    growth_constant = 3.0            # optional declared L
    lipschitz_constant = 3.0         # optional declared C

    [system]
    u0 = 1.0                         # required; scalar or list
    horizon = 1.0
    h_max = 0.01

    [study]
    epsilons = [0.1, 0.01, 0.001]
    n_paths = 2000
    seed = 0
    deviation_thresholds = [0.05, 0.1, 0.2]
    containment_levels = [4.0, 10.0, 20.0]   # default (2, 5, 10) * (|u0| + 1)
    allow_uncertified = false
    n_jobs = 1

    [residual]
    phi = [0.0, 1.0]                 # polynomial coefficients, increasing degree
    u_min = -10.0
    u_max = 10.0
    n_grid = 201
    convention = "standard"          # or "flipped"

    [simulate]
    n_paths = 1

A run manifest (JSON) written by a previous run is accepted in place of a
scenario; its fully materialised ``scenario`` section is used.
"""

import json
import numbers
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from ._validation import ValidationError
from .chain import build_generator
from .montecarlo import CONTAINMENT_FACTORS, DEFAULT_DELTAS, DEFAULT_EPSILONS, ExperimentSpec
from .system import DEFAULT_H_MAX, CatalogField

SUBCOMMANDS = ("chain-analyze", "residual-check", "simulate", "deviation-study", "moment-study", "ccc-study")


class ConfigError(ValueError):
    """Invalid scenario or flags; the message carries the field path."""


def _real(path, v):
    if isinstance(v, bool) or not isinstance(v, numbers.Real):
        raise ConfigError(f"{path}: expected a number, got {v!r}")
    v = float(v)
    if not np.isfinite(v):
        raise ConfigError(f"{path}: must be finite")
    return v


def _positive(path, v):
    v = _real(path, v)
    if v <= 0:
        raise ConfigError(f"{path}: must be > 0, got {v!r}")
    return v


def _int(path, v, minimum=None):
    if isinstance(v, bool) or not isinstance(v, numbers.Integral):
        raise ConfigError(f"{path}: expected an integer, got {v!r}")
    if minimum is not None and v < minimum:
        raise ConfigError(f"{path}: must be >= {minimum}, got {v}")
    return int(v)


def _bool(path, v):
    if not isinstance(v, bool):
        raise ConfigError(f"{path}: expected true or false, got {v!r}")
    return v


def _list(path, v, item):
    if not isinstance(v, (list, tuple)):
        v = [v]
    return [item(f"{path}[{i}]", x) for i, x in enumerate(v)]


def _nested(path, v):
    """Scalar, list of numbers, or list of lists of numbers."""
    if isinstance(v, (list, tuple)):
        return [_nested(f"{path}[{i}]", x) for i, x in enumerate(v)]
    return _real(path, v)


SCHEMA = {
    "chain": {
        "labels": (lambda p, v: _list(p, v, lambda q, s: str(s)), None),
        "rates": (lambda p, v: _list(p, v, _real), "required"),
        "kernel": (lambda p, v: _list(p, v, lambda q, row: _list(q, row, _real)), "required"),
        "initial_state": (lambda p, v: v if isinstance(v, str) else _int(p, v, 0), None),
    },
    "field": {
        "kind": (lambda p, v: str(v), "required"),
        "a": (_nested, None),
        "c": (_nested, None),
        "r": (_nested, None),
        "K": (_nested, None),
        "growth_constant": (_real, None),
        "lipschitz_constant": (_real, None),
    },
    "system": {
        "u0": (lambda p, v: _list(p, v, _real), "required"),
        "horizon": (_positive, 1.0),
        "h_max": (_positive, DEFAULT_H_MAX),
    },
    "study": {
        "epsilons": (lambda p, v: _list(p, v, _positive), list(DEFAULT_EPSILONS)),
        "n_paths": (lambda p, v: _int(p, v, 1), 2000),
        "seed": (lambda p, v: _int(p, v, 0), 0),
        "deviation_thresholds": (lambda p, v: _list(p, v, _positive), list(DEFAULT_DELTAS)),
        "containment_levels": (lambda p, v: _list(p, v, _positive), None),
        "allow_uncertified": (_bool, False),
        "n_jobs": (lambda p, v: _int(p, v, 1), 1),
    },
    "residual": {
        "phi": (lambda p, v: _list(p, v, _real), [0.0, 1.0]),
        "u_min": (_real, -10.0),
        "u_max": (_real, 10.0),
        "n_grid": (lambda p, v: _int(p, v, 2), 201),
        "convention": (lambda p, v: str(v), "standard"),
    },
    "simulate": {
        "n_paths": (lambda p, v: _int(p, v, 1), 1),
    },
}
REQUIRED_SECTIONS = ("chain", "field", "system")


def _materialize(raw):
    if not isinstance(raw, dict):
        raise ConfigError("scenario must be a table of sections")
    unknown = sorted(set(raw) - set(SCHEMA))
    if unknown:
        raise ConfigError(f"unknown section(s): {', '.join(unknown)}")
    out = {}
    for section, keys in SCHEMA.items():
        body = raw.get(section)
        if body is None:
            if section in REQUIRED_SECTIONS:
                raise ConfigError(f"missing required section [{section}]")
            body = {}
        if not isinstance(body, dict):
            raise ConfigError(f"{section}: expected a table")
        unknown = sorted(set(body) - set(keys))
        if unknown:
            raise ConfigError(f"unknown field(s): {', '.join(f'{section}.{k}' for k in unknown)}")
        sec = {}
        for key, (coerce, default) in keys.items():
            path = f"{section}.{key}"
            if key in body:
                sec[key] = coerce(path, body[key])
            elif default == "required":
                raise ConfigError(f"missing required field {path}")
            elif default is not None:
                sec[key] = default
        out[section] = sec
    return out


def _fill_derived(sc):
    """Materialise defaults that depend on other fields."""
    chain = sc["chain"]
    n = len(chain["rates"])
    chain.setdefault("labels", [str(i) for i in range(n)])
    chain.setdefault("initial_state", chain["labels"][0] if chain["labels"] else 0)
    if "containment_levels" not in sc["study"]:
        scale = float(np.linalg.norm(sc["system"]["u0"])) + 1.0
        sc["study"]["containment_levels"] = [k * scale for k in CONTAINMENT_FACTORS]
    return sc


@dataclass
class RunConfig:
    """Validated run request with every default materialised."""

    subcommand: str
    scenario_path: str
    outdir: str
    scenario: dict
    dump_paths: bool = False
    generator: object = field(default=None, repr=False)
    field: object = field(default=None, repr=False)

    def experiment_spec(self):
        st, sy = self.scenario["study"], self.scenario["system"]
        return ExperimentSpec(
            generator=self.generator,
            field=self.field,
            u0=np.array(sy["u0"]),
            horizon=sy["horizon"],
            epsilons=tuple(st["epsilons"]),
            n_paths=st["n_paths"],
            deviation_thresholds=tuple(st["deviation_thresholds"]),
            containment_levels=tuple(st["containment_levels"]),
            seed=st["seed"],
            h_max=sy["h_max"],
            initial_state=self.initial_state_index,
            allow_uncertified=st["allow_uncertified"],
        )

    @property
    def initial_state_index(self):
        s = self.scenario["chain"]["initial_state"]
        return self.generator.index(s) if isinstance(s, str) else int(s)


def load_scenario(path):
    """Read a TOML scenario or a JSON manifest into a raw dict."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"scenario file not found: {path}")
    text = path.read_text()
    stripped = text.lstrip()
    if stripped.startswith("{"):
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: line {exc.lineno}, column {exc.colno}: {exc.msg}") from None
        if "scenario" not in doc:
            raise ConfigError(f"{path}: JSON input must be a run manifest with a 'scenario' section")
        return doc["scenario"]
    try:
        return tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None


def _build_objects(sc):
    ch = sc["chain"]
    try:
        G = build_generator(ch["rates"], ch["kernel"], ch["labels"])
    except ValidationError as exc:
        raise ConfigError(f"chain: {exc}") from None
    s = ch["initial_state"]
    if isinstance(s, str) and s not in G.labels:
        raise ConfigError(f"chain.initial_state: unknown state {s!r}")
    if not isinstance(s, str) and s >= G.n_states:
        raise ConfigError(f"chain.initial_state: index {s} out of range")
    fd = dict(sc["field"])
    kind = fd.pop("kind")
    try:
        f = CatalogField(kind, **fd)
    except ValidationError as exc:
        raise ConfigError(f"field: {exc}") from None
    if f.n_states != G.n_states:
        raise ConfigError(f"field: parameters cover {f.n_states} states but the chain has {G.n_states}")
    if len(sc["system"]["u0"]) != f.dim:
        raise ConfigError(f"system.u0: dimension {len(sc['system']['u0'])} does not match field dimension {f.dim}")
    if sc["residual"]["convention"] not in ("standard", "flipped"):
        raise ConfigError("residual.convention: must be 'standard' or 'flipped'")
    if sc["residual"]["u_max"] <= sc["residual"]["u_min"]:
        raise ConfigError("residual.u_max must exceed residual.u_min")
    return G, f


def parse_config(subcommand, scenario_path, outdir="out", epsilon=None, n_paths=None, seed=None,
                 h_max=None, n_jobs=None, allow_uncertified=None, dump_paths=False):
    """Validate a scenario file plus command-line overrides.

    Raises
    ------
    ConfigError
        With the offending field path (or parse position) in the message.
    """
    if subcommand not in SUBCOMMANDS:
        raise ConfigError(f"unknown subcommand {subcommand!r}; choose from {', '.join(SUBCOMMANDS)}")
    raw = load_scenario(scenario_path)
    sc = _materialize(raw)
    if epsilon is not None:
        sc["study"]["epsilons"] = _list("--epsilon", list(epsilon), _positive)
    if n_paths is not None:
        sc["study"]["n_paths"] = _int("--n-paths", n_paths, 1)
        sc["simulate"]["n_paths"] = _int("--n-paths", n_paths, 1)
    if seed is not None:
        sc["study"]["seed"] = _int("--seed", seed, 0)
    if h_max is not None:
        sc["system"]["h_max"] = _positive("--h-max", h_max)
    if n_jobs is not None:
        sc["study"]["n_jobs"] = _int("--n-jobs", n_jobs, 1)
    if allow_uncertified:
        sc["study"]["allow_uncertified"] = True
    sc = _fill_derived(sc)
    G, f = _build_objects(sc)
    return RunConfig(subcommand, str(scenario_path), str(outdir), sc, dump_paths, G, f)
