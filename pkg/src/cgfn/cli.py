"""Command-line entry point: ``cgfn {train,eval,oracle,export-grid,presets}``."""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import evaluation as ev
from . import oracle
from .config import PRESETS, load_config, preset
from .train import export_density_grid, load_checkpoint, run_experiment

EXIT_OK, EXIT_USAGE, EXIT_ABORTED, EXIT_CHECK_FAILED = 0, 2, 3, 4


def _load_any_config(spec):
    if os.path.exists(spec):
        return load_config(spec)
    if spec in PRESETS:
        return preset(spec)
    raise FileNotFoundError(f"{spec!r} is neither a config file nor a preset name")


def cmd_train(args):
    config = _load_any_config(args.config)
    changes = {}
    if args.seed is not None:
        changes["seed"] = args.seed
    if args.out is not None:
        changes["out_dir"] = args.out
    if args.iterations is not None:
        changes["iterations"] = args.iterations
    if changes:
        config = config.replace(**changes)
    result = run_experiment(config, log=lambda m: print(m, file=sys.stderr))
    print(json.dumps({"status": result.status, "iterations": result.iterations, **result.final}))
    return EXIT_OK if result.status == "complete" else EXIT_ABORTED


def cmd_eval(args):
    config, env, model, _ = load_checkpoint(args.checkpoint)
    rng = np.random.default_rng(args.seed)
    if args.metric == "logz":
        if env.name != "euclid":
            print("error: logz bounds are defined for the euclid env", file=sys.stderr)
            return EXIT_USAGE
        rep = ev.logz_bounds(env, model, args.n or config.final_eval_samples, rng)
        out = rep.to_dict()
    else:
        if env.name == "euclid":
            print("error: jsd needs a bounded 2-D reward; use --metric logz for euclid", file=sys.stderr)
            return EXIT_USAGE
        rep = ev.model_jsd(env, model, args.n or config.final_eval_samples, rng, res=args.res)
        out = rep.to_dict()
    print(json.dumps(out))
    return EXIT_OK


def cmd_oracle(args):
    dag = oracle.load_dag(args.dag)
    rng = np.random.default_rng(args.seed)
    pb = oracle.random_backward(dag, rng) if args.backward == "random" else _uniform_backward(dag)
    flow = oracle.flow_from_backward(dag, pb)
    checks = {"fm": ("fm",), "db": ("db",), "tb": ("tb",), "all": oracle.CHECKS}[args.check]
    report = oracle.check_conditions(dag, flow, checks)
    if args.check == "all":
        pt = oracle.exact_terminating_distribution(dag, flow.pf)
        report["terminating_vs_reward"] = float(np.abs(pt - dag.reward / dag.total_reward).max())
    ok = all(v <= args.tol for v in report.values())
    print(json.dumps({"z": flow.z, "residuals": report, "ok": ok}))
    return EXIT_OK if ok else EXIT_CHECK_FAILED


def _uniform_backward(dag):
    pb = np.zeros((dag.n, dag.n))
    for v in range(1, dag.n):
        par = dag.parents(v)
        pb[v, par] = 1.0 / len(par)
    return pb


def cmd_export(args):
    config, env, model, _ = load_checkpoint(args.checkpoint)
    out = args.out or os.path.join(os.path.dirname(os.path.abspath(args.checkpoint)), "density_grid.csv")
    export_density_grid(env, model, out, res=args.res, n=args.n, rng=np.random.default_rng(args.seed))
    print(out)
    return EXIT_OK


def cmd_presets(args):
    if args.name:
        print(preset(args.name).to_json())
    else:
        print("\n".join(sorted(PRESETS)))
    return EXIT_OK


def build_parser():
    p = argparse.ArgumentParser(prog="cgfn", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train from a JSON config or preset name")
    t.add_argument("--config", required=True, help="config JSON path or preset name")
    t.add_argument("--seed", type=int)
    t.add_argument("--out", help="output directory")
    t.add_argument("--iterations", type=int, help="override the iteration count")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--metric", choices=("jsd", "logz"), required=True)
    e.add_argument("--n", type=int, help="samples (JSD) or trajectories (log Z)")
    e.add_argument("--res", type=int, default=ev.DEFAULT_RES)
    e.add_argument("--seed", type=int, default=0)
    e.set_defaults(func=cmd_eval)

    o = sub.add_parser("oracle", help="exact condition checks on a DAG file")
    o.add_argument("--dag", required=True)
    o.add_argument("--check", choices=("fm", "db", "tb", "all"), default="all")
    o.add_argument("--backward", choices=("uniform", "random"), default="uniform")
    o.add_argument("--tol", type=float, default=1e-12)
    o.add_argument("--seed", type=int, default=0)
    o.set_defaults(func=cmd_oracle)

    x = sub.add_parser("export-grid", help="write the KDE density grid of a checkpoint as CSV")
    x.add_argument("--checkpoint", required=True)
    x.add_argument("--res", type=int, default=ev.DEFAULT_RES)
    x.add_argument("--n", type=int, default=100_000)
    x.add_argument("--out")
    x.add_argument("--seed", type=int, default=0)
    x.set_defaults(func=cmd_export)

    ps = sub.add_parser("presets", help="list presets or print one as JSON")
    ps.add_argument("name", nargs="?")
    ps.set_defaults(func=cmd_presets)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, FileNotFoundError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
