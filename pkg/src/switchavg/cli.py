"""Command-line entry point.

Exit status: 0 success, 2 configuration error, 3 certification failure,
4 numerical failure.
"""

import argparse
import io
import json
import logging
import platform
import sys
import time
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from ._validation import ValidationError
from .chain import NumericalError, analyze_chain, make_stream, simulate_chain
from .config import SUBCOMMANDS, ConfigError, parse_config
from .montecarlo import STUDIES, CertificationError
from .perturbation import polynomial, residual_check
from .system import integrate_averaged, integrate_switched

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_CERTIFICATION = 3
EXIT_NUMERICAL = 4

log = logging.getLogger("switchavg")


def _fmt(x):
    return repr(float(x))


def _csv(header, rows):
    buf = io.StringIO()
    buf.write(",".join(header) + "\n")
    for row in rows:
        buf.write(",".join(v if isinstance(v, str) else _fmt(v) if isinstance(v, float) else str(v) for v in row))
        buf.write("\n")
    return buf.getvalue()


def _chain_analyze(cfg):
    A = analyze_chain(cfg.generator)
    labels = cfg.generator.labels
    rows = []
    for x, lab in enumerate(labels):
        rows.append(("pi", lab, "", float(A.pi[x])))
    for name, M in (("Q", cfg.generator.Q), ("Pi", A.Pi), ("R0", A.R0)):
        for x, lx in enumerate(labels):
            for y, ly in enumerate(labels):
                rows.append((name, lx, ly, float(M[x, y])))
    for key, val in A.residuals().items():
        rows.append(("residual", key, "", float(val)))
    return {"results.csv": _csv(("quantity", "row", "col", "value"), rows)}, {}


def _residual_check(cfg):
    r = cfg.scenario["residual"]
    if cfg.field.dim != 1:
        raise ConfigError("residual-check requires a scalar field (system.u0 of length 1)")
    A = analyze_chain(cfg.generator)
    phi = polynomial(r["phi"])
    u = np.linspace(r["u_min"], r["u_max"], r["n_grid"])
    rows = []
    worst = 0.0
    for eps in cfg.scenario["study"]["epsilons"]:
        rep = residual_check(phi, eps, cfg.generator, cfg.field, A, u, r["convention"])
        worst = max(worst, rep.max_residual)
        rows.extend((float(eps),) + row for row in rep.rows())
    csv = _csv(("epsilon", "u", "state", "lhs", "rhs", "residual"), rows)
    return {"results.csv": csv}, {"max_residual": worst}


def _trajectory_rows(cfg, eps_list, n_paths):
    """Switched paths (and the averaged path) as CSV rows plus per-path summaries."""
    sc = cfg.scenario
    seed = sc["study"]["seed"]
    T, h = sc["system"]["horizon"], sc["system"]["h_max"]
    u0 = np.array(sc["system"]["u0"])
    A = analyze_chain(cfg.generator)
    avg = integrate_averaged(cfg.field, A.pi, u0, T, h)
    d = cfg.field.dim
    traj, summary = [], []
    for t, u in zip(avg.t, avg.u):
        traj.append(("", "averaged", float(t), "averaged") + tuple(float(v) for v in u))
    for j, eps in enumerate(eps_list):
        for i in range(n_paths):
            jp = simulate_chain(cfg.generator, T, eps, make_stream(seed, j, i), cfg.initial_state_index)
            sp = integrate_switched(cfg.field, jp, u0, h)
            for t, lab, u in zip(sp.t, sp.regime_labels(), sp.u):
                traj.append((float(eps), str(i), float(t), lab) + tuple(float(v) for v in u))
            dev = np.max(np.linalg.norm(sp.u - avg.at(sp.t), axis=1))
            summary.append((float(eps), str(i), str(jp.n_jumps))
                           + tuple(float(v) for v in sp.u[-1])
                           + (float(np.max(np.linalg.norm(sp.u, axis=1))), float(dev)))
    ucols = tuple(f"u_{k + 1}" for k in range(d))
    traj_csv = _csv(("epsilon", "path", "t", "regime") + ucols, traj)
    sum_csv = _csv(("epsilon", "path", "n_jumps") + tuple(f"uT_{k + 1}" for k in range(d)) + ("sup_u", "sup_dev"),
                   summary)
    return traj_csv, sum_csv


def _simulate(cfg):
    eps = cfg.scenario["study"]["epsilons"]
    traj, summary = _trajectory_rows(cfg, eps, cfg.scenario["simulate"]["n_paths"])
    out = {"results.csv": summary}
    if cfg.dump_paths:
        out["trajectories.csv"] = traj
    return out, {}


def _study(cfg):
    spec = cfg.experiment_spec()
    table = STUDIES[cfg.subcommand](spec, n_jobs=cfg.scenario["study"]["n_jobs"])
    out = {"results.csv": table.to_csv()}
    if cfg.dump_paths:
        out["trajectories.csv"] = _trajectory_rows(cfg, cfg.scenario["study"]["epsilons"], 1)[0]
    info = {"certified": table.certified, "notes": table.notes, "wall_clock_seconds": table.wall_clock}
    return out, info


HANDLERS = {
    "chain-analyze": _chain_analyze,
    "residual-check": _residual_check,
    "simulate": _simulate,
    "deviation-study": _study,
    "moment-study": _study,
    "ccc-study": _study,
}


def manifest(cfg, outputs, info, elapsed):
    return {
        "tool": "switchavg",
        "version": __version__,
        "subcommand": cfg.subcommand,
        "scenario_source": cfg.scenario_path,
        "seed": cfg.scenario["study"]["seed"],
        "scenario": cfg.scenario,
        "outputs": sorted(outputs),
        "result": info,
        "elapsed_seconds": elapsed,
        "versions": {
            "python": platform.python_version(),
            "numpy": np.__version__,
            "scipy": scipy.__version__,
        },
    }


def run(cfg):
    """Execute a validated :class:`~switchavg.config.RunConfig` and write its artifacts.

    Returns the process exit status.
    """
    t0 = time.perf_counter()
    try:
        outputs, info = HANDLERS[cfg.subcommand](cfg)
    except ConfigError as exc:
        log.error("configuration error: %s", exc)
        return EXIT_CONFIG
    except CertificationError as exc:
        log.error("certification failure: %s (pass --allow-uncertified to run anyway)", exc)
        return EXIT_CERTIFICATION
    except (NumericalError, ArithmeticError, FloatingPointError) as exc:
        log.error("numerical failure: %s", exc)
        return EXIT_NUMERICAL
    except ValidationError as exc:
        log.error("configuration error: %s", exc)
        return EXIT_CONFIG
    outdir = Path(cfg.outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    for name, text in outputs.items():
        (outdir / name).write_text(text)
    doc = manifest(cfg, outputs, info, time.perf_counter() - t0)
    (outdir / "manifest").write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    if info.get("certified") is False:
        log.warning("results are uncertified: %s", "; ".join(info.get("notes", [])))
    return EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(
        prog="switchavg",
        description="Simulate fast Markov-switched ODEs and check them against the averaged system.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="subcommand", required=True)
    for name in SUBCOMMANDS:
        p = sub.add_parser(name)
        p.add_argument("scenario", help="scenario TOML file or a previous run's manifest")
        p.add_argument("-o", "--out", default="out", help="output directory (default: out)")
        p.add_argument("--epsilon", type=float, action="append", help="time-scale value; repeat for a list")
        p.add_argument("--n-paths", type=int)
        p.add_argument("--seed", type=int)
        p.add_argument("--h-max", type=float, help="integrator step bound")
        p.add_argument("--n-jobs", type=int, help="worker threads for Monte Carlo studies")
        p.add_argument("--allow-uncertified", action="store_true",
                       help="run studies on fields that fail the growth/Lipschitz checks")
        p.add_argument("--dump-paths", action="store_true", help="also write trajectories.csv")
    return parser


def main(argv=None):
    logging.basicConfig(level=logging.INFO, format="%(levelname)s: %(message)s", stream=sys.stderr)
    args = build_parser().parse_args(argv)
    try:
        cfg = parse_config(args.subcommand, args.scenario, args.out, epsilon=args.epsilon, n_paths=args.n_paths,
                           seed=args.seed, h_max=args.h_max, n_jobs=args.n_jobs,
                           allow_uncertified=args.allow_uncertified, dump_paths=args.dump_paths)
    except ConfigError as exc:
        log.error("configuration error: %s", exc)
        return EXIT_CONFIG
    return run(cfg)


if __name__ == "__main__":
    sys.exit(main())
