"""Command-line entry point ``smoattack``.

Exit codes: 0 success, 1 other library error (for example an unwritable
trace path), 2 configuration error, 3 numeric blowup, 4 acceptance-threshold
failure (``reproduce-paper``; ``check-transforms`` on a residual above tol).
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from importlib.resources import files
from pathlib import Path

import numpy as np

from ..errors import ConfigError, NumericBlowup, SmoAttackError
from .config import load_config

EXIT_OK, EXIT_CONFIG, EXIT_BLOWUP, EXIT_ACCEPT = 0, 2, 3, 4

log = logging.getLogger("smoattack")

# figure analogues run by reproduce-paper, in order; the reference run only feeds compare_runs
PAPER_SCENARIOS = ("wecc", "wecc_reference", "smo_fixed", "smo_adaptive", "motivation")
NO_PLOTS = ("wecc_reference",)


def scenario_path(name):
    """Path of a bundled scenario file."""
    return Path(str(files("smoattack") / "scenarios" / f"{name}.cfg"))


def _run_one(cfg_path, out_dir=None, trace_path=None, plots=None, overrides=None):
    """Run one scenario file; returns ``(name, metrics dict, trace path or None)``.

    Top-level so that it can be shipped to worker processes.
    """
    from .io import write_trace
    from .plots import emit_plots
    from .runner import run_scenario

    cfg = load_config(cfg_path)
    if overrides:
        cfg = cfg.with_overrides(**overrides)
    trace, metrics = run_scenario(cfg)
    out = cfg["outputs"]
    target = trace_path
    if target is None and out_dir is not None:
        target = Path(out_dir) / f"{cfg.name}.csv"
    if target is None and out["trace"]:
        target = Path(out["trace"])
    if target is not None:
        write_trace(trace, target)
    want_plots = out["plots"] if plots is None else plots
    if want_plots:
        pdir = out["plot_dir"] or (Path(out_dir) / "plots" / cfg.name if out_dir else Path("plots") / cfg.name)
        emit_plots(trace, pdir)
    m = metrics.as_dict()
    m["runtime_s"] = metrics.runtime_s
    return cfg.name, m, (str(target) if target is not None else None)


def _print_json(obj):
    json.dump(obj, sys.stdout, indent=2, sort_keys=True)
    sys.stdout.write("\n")


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_simulate(args):
    overrides = {}
    if args.horizon is not None:
        overrides["integration"] = {"horizon": args.horizon}
    if args.decimation is not None:
        overrides["outputs"] = {"decimation": args.decimation}
    name, m, path = _run_one(args.config, trace_path=args.trace, plots=True if args.plots else None,
                             overrides=overrides or None)
    if args.metrics:
        from .io import write_metrics
        write_metrics(m, args.metrics)
    _print_json({"scenario": name, "trace": path, "metrics": m})
    return EXIT_OK


def cmd_batch(args):
    cfg_dir = Path(args.cfg_dir)
    paths = sorted(cfg_dir.glob("*.cfg"))
    if not paths:
        raise ConfigError(f"no .cfg files in {cfg_dir}")
    # parse everything first so a bad file fails before any run starts
    names = [load_config(p).name for p in paths]
    if len(set(names)) != len(names):
        raise ConfigError("scenario names in a batch must be distinct (traces share a directory)")
    out = Path(args.out)
    jobs = args.jobs or min(len(paths), os.cpu_count() or 1)
    results = {}
    if jobs == 1:
        for p in paths:
            name, m, path = _run_one(p, out_dir=out)
            results[name] = {"metrics": m, "trace": path}
    else:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            futs = [pool.submit(_run_one, p, out) for p in paths]
            for f in futs:
                name, m, path = f.result()
                results[name] = {"metrics": m, "trace": path}
    from .io import write_metrics
    write_metrics(results, out / "metrics.json")
    _print_json({k: v["trace"] for k, v in results.items()})
    return EXIT_OK


def cmd_check_transforms(args):
    from ..transforms import build_chain, chain_residuals, relative_degrees
    from .runner import build_plant

    cfg = load_config(args.config)
    _, plant = build_plant(cfg)
    if plant is None:
        raise ConfigError("check-transforms needs a linear plant", key="plant.type")
    report = {"n": plant.n, "p": plant.p, "m1": plant.m1, "m2": plant.D1.shape[1],
              "protected_rows": (plant.protected_rows + 1).tolist()}
    try:
        chain = build_chain(plant)
        res = chain_residuals(chain, plant)
        report["chain"] = res
        ok = all(v <= args.tol for k, v in res.items() if k != "hurwitz_margin") and res["hurwitz_margin"] > 0
        report["chain_ok"] = bool(ok)
    except (SmoAttackError, ValueError) as exc:
        report["chain"] = None
        report["chain_error"] = f"{type(exc).__name__}: {exc}"
        ok = True
    if plant.m1:
        try:
            prof = relative_degrees(plant.A, plant.B1, plant.C1)
            report["relative_degrees"] = list(prof.r)
            report["C_a"] = prof.C_a.tolist()
        except SmoAttackError as exc:
            report["relative_degree_error"] = f"{type(exc).__name__}: {exc}"
    _print_json(report)
    return EXIT_OK if ok else EXIT_ACCEPT


def cmd_differentiate(args):
    from ..hosm_diff import differentiate_series

    try:
        samples = np.loadtxt(args.samples, delimiter=",", ndmin=1)
    except (OSError, ValueError) as exc:
        raise ConfigError(f"cannot read samples: {exc}") from exc
    if samples.ndim > 1:
        samples = samples[:, -1]
    z = differentiate_series(samples, args.dt, order=args.order, L_lip=args.lipschitz)
    t = np.arange(samples.size) * args.dt
    header = "t," + ",".join(f"z{k}" for k in range(args.order + 1))
    out = open(args.out, "w") if args.out else sys.stdout
    try:
        out.write(header + "\n")
        np.savetxt(out, np.column_stack([t, z]), fmt="%.17g", delimiter=",")
    finally:
        if args.out:
            out.close()
    return EXIT_OK


def cmd_sparse_recover(args):
    from ..sparse import sr_solve

    try:
        Phi = np.loadtxt(args.phi, delimiter=",", ndmin=2)
        xi = np.loadtxt(args.xi, delimiter=",", ndmin=1).ravel()
    except (OSError, ValueError) as exc:
        raise ConfigError(f"cannot read inputs: {exc}") from exc
    if Phi.shape[0] != xi.size:
        raise ConfigError(f"phi has {Phi.shape[0]} rows but xi has {xi.size} entries")
    res = sr_solve(Phi, xi, lam=args.lam, mu=args.mu, beta=args.beta, dt=args.dt,
                   tol=args.tol, max_steps=args.max_steps, normalize=not args.raw)
    _print_json(res.as_dict())
    return EXIT_OK


def cmd_reproduce(args):
    from .acceptance import differentiator_accuracy, run_gates
    from .io import read_trace, write_metrics
    from .runner import compare_runs

    out = Path(args.out)
    paths = [scenario_path(n) for n in PAPER_SCENARIOS]
    jobs = args.jobs or 1
    results = {}
    if jobs == 1:
        for p in paths:
            log.info("running %s", p.stem)
            plots = not args.no_plots and p.stem not in NO_PLOTS
            name, m, path = _run_one(p, out_dir=out, plots=plots)
            results[name] = (m, path)
    else:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            futs = [pool.submit(_run_one, p, out, None, not args.no_plots and p.stem not in NO_PLOTS)
                    for p in paths]
            for f in futs:
                name, m, path = f.result()
                results[name] = (m, path)
    metrics = {k: v[0] for k, v in results.items()}
    comparison = compare_runs(read_trace(results["wecc"][1]), read_trace(results["wecc_reference"][1]),
                              window=tuple(metrics["wecc"]["window"]))
    diff = (differentiator_accuracy(2e-4), differentiator_accuracy(1e-4))
    gates = run_gates(metrics, comparison, diff)
    for g in gates:
        print(g.line())
    report = {"scenarios": metrics, "comparison": comparison,
              "differentiator_error": {"dt=2e-4": diff[0], "dt=1e-4": diff[1]},
              "gates": [{"criterion": g.criterion, "label": g.label, "passed": g.passed,
                         "detail": g.detail} for g in gates]}
    write_metrics(report, out / "metrics.json")
    return EXIT_OK if all(g.passed for g in gates) else EXIT_ACCEPT


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def build_parser():
    ap = argparse.ArgumentParser(prog="smoattack", description="Attack reconstruction observers for CPS models.")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="run one scenario file")
    p.add_argument("config")
    p.add_argument("--trace", help="CSV output path (overrides [outputs] trace)")
    p.add_argument("--metrics", help="write metrics JSON here")
    p.add_argument("--plots", action="store_true", help="write SVG figures")
    p.add_argument("--horizon", type=float)
    p.add_argument("--decimation", type=int)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("batch", help="run every .cfg in a directory")
    p.add_argument("cfg_dir")
    p.add_argument("--out", default="batch_out")
    p.add_argument("--jobs", type=int, default=0, help="worker processes (default: CPU count)")
    p.set_defaults(func=cmd_batch)

    p = sub.add_parser("check-transforms", help="report structural residuals of the coordinate chain")
    p.add_argument("config")
    p.add_argument("--tol", type=float, default=1e-12)
    p.set_defaults(func=cmd_check_transforms)

    p = sub.add_parser("differentiate", help="differentiate a sampled signal (CSV, last column)")
    p.add_argument("samples")
    p.add_argument("--dt", type=float, required=True)
    p.add_argument("--order", type=int, default=2)
    p.add_argument("--lipschitz", type=float, default=1.0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_differentiate)

    p = sub.add_parser("sparse-recover", help="solve a static sparse recovery problem")
    p.add_argument("phi")
    p.add_argument("xi")
    p.add_argument("--lam", type=float)
    p.add_argument("--mu", type=float, default=0.01)
    p.add_argument("--beta", type=float, default=0.5)
    p.add_argument("--dt", type=float, default=1e-4)
    p.add_argument("--tol", type=float, default=1e-8)
    p.add_argument("--max-steps", type=int, default=10 ** 6)
    p.add_argument("--raw", action="store_true", help="do not normalize dictionary columns")
    p.set_defaults(func=cmd_sparse_recover)

    p = sub.add_parser("reproduce-paper", help="run the figure analogues and check the acceptance gates")
    p.add_argument("--out", default="reproduction")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--no-plots", action="store_true")
    p.set_defaults(func=cmd_reproduce)
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericBlowup as exc:
        print(f"numeric blowup: {exc}", file=sys.stderr)
        return EXIT_BLOWUP
    except SmoAttackError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
