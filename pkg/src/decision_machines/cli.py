"""decision-machines: compile, predict, analyze, soften, bench.

Exit codes: 0 success, 1 internal invariant tripwire, 2 user input error.
"""
from __future__ import annotations

import argparse
import json
import os
import sys

from . import pipeline
from .compiler import depth_stats, dump_machine, load_machine
from .soft import KERNELS, SoftConfig, load_sp_model, soften, sp_model_to_dict
from .tree import TreeError, load_tree


def _write(text: str, path: str | None) -> None:
    if path is None or path == "-":
        sys.stdout.write(text)
    else:
        with open(path, "w", newline="") as fh:
            fh.write(text)


def _soft_config(args) -> SoftConfig:
    return SoftConfig(args.activation, args.epsilon, args.tau)


def cmd_compile(args) -> int:
    tree = load_tree(args.tree)
    machine = pipeline.compile_document(tree, args.categorical_mode)
    if machine.L == 1:
        print("warning: single-leaf tree compiles to a degenerate machine (L = 1, no tests)", file=sys.stderr)
    _write(dump_machine(machine) + "\n", args.out)
    stats = depth_stats(machine)
    print(f"L={stats['L']} n={stats['n']} max_depth={stats['max_depth']} mean_depth={stats['mean_depth']:.3f}",
          file=sys.stderr)
    return 0


def _is_sp_model(path: str) -> bool:
    with open(path) as fh:
        return "kernel" in json.load(fh)


def cmd_predict(args) -> int:
    with open(args.data) as fh:
        text = fh.read()
    if _is_sp_model(args.model):
        model = load_sp_model(args.model)
        fm = model.feature_map
        n = fm.machine.input_count if fm is not None else model.keys.shape[1]
        names = fm.machine.feature_names if fm is not None else None
        X = pipeline.read_feature_csv(text, n, names)
        rows = pipeline.predict_rows_sp(model, X)
    else:
        machine = load_machine(args.model)
        X = pipeline.read_feature_csv(text, machine.input_count, machine.feature_names)
        rows = pipeline.predict_rows(machine, X, args.mode, _soft_config(args))
    _write(pipeline.write_predictions(rows), args.out)
    return 0


def cmd_analyze(args) -> int:
    machine = load_machine(args.machine)
    doc = pipeline.analyze_machine(machine)
    if args.tree_out and doc["reconstruction"].get("tree") is not None:
        with open(args.tree_out, "w") as fh:
            json.dump(doc["reconstruction"]["tree"], fh, indent=1)
    _write(json.dumps(doc, indent=1) + "\n", args.out)
    return 0


def cmd_soften(args) -> int:
    machine = load_machine(args.machine)
    out_dir = os.path.dirname(os.path.abspath(args.out)) if args.out != "-" else os.getcwd()
    rel = os.path.relpath(os.path.abspath(args.machine), out_dir)
    model = soften(machine, _soft_config(args), args.kernel, rel)
    _write(json.dumps(sp_model_to_dict(model), indent=1) + "\n", args.out)
    return 0


def cmd_bench(args) -> int:
    machine = load_machine(args.machine)
    tree = load_tree(args.tree) if args.tree else None
    try:
        report = pipeline.bench(machine, tree, args.rows, args.reps, args.seed)
    except pipeline.Tripwire as exc:
        print(f"tripwire: {exc}", file=sys.stderr)
        print(json.dumps(exc.detail), file=sys.stderr)
        if args.out:
            with open(args.out, "w") as fh:
                json.dump({"agree": False, "failure": exc.detail}, fh, indent=1)
        return 1
    leaves = report.pop("leaves")
    summary = json.dumps(report, indent=1)
    print(summary)
    if args.out:
        with open(args.out, "w") as fh:
            json.dump({**report, "leaves": leaves}, fh, indent=1)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="decision-machines", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    c = sub.add_parser("compile", help="tree JSON -> machine JSON")
    c.add_argument("tree")
    c.add_argument("--out", default="-")
    c.add_argument("--categorical-mode", choices=("lagrange", "dummy"), default="lagrange")
    c.set_defaults(func=cmd_compile)

    soft_flags = argparse.ArgumentParser(add_help=False)
    soft_flags.add_argument("--activation", choices=("sign", "satlin", "tanh"), default="satlin")
    soft_flags.add_argument("--epsilon", type=float, default=1.0)
    soft_flags.add_argument("--tau", type=float, default=1.0)

    pr = sub.add_parser("predict", parents=[soft_flags], help="evaluate a machine (or soft model) on a CSV")
    pr.add_argument("model", help="machine JSON or selection-prediction model JSON")
    pr.add_argument("data", help="CSV with a header row")
    pr.add_argument("--mode", choices=("exact", "delta", "soft"), default="exact")
    pr.add_argument("--out", default="-")
    pr.set_defaults(func=cmd_predict)

    a = sub.add_parser("analyze", help="structure report and reconstruction of B")
    a.add_argument("machine")
    a.add_argument("--out", default="-")
    a.add_argument("--tree-out", default=None, help="also write the reconstructed tree JSON here")
    a.set_defaults(func=cmd_analyze)

    s = sub.add_parser("soften", parents=[soft_flags], help="machine -> selection-prediction model JSON")
    s.add_argument("machine")
    s.add_argument("--kernel", choices=[k for k in KERNELS if k in ("softmax-logical", "hard-delta")],
                   default="softmax-logical")
    s.add_argument("--out", default="-")
    s.set_defaults(func=cmd_soften)

    b = sub.add_parser("bench", help="traverse vs decide vs batched decode, with agreement check")
    b.add_argument("machine")
    b.add_argument("--tree", default=None, help="source tree JSON for the traversal path")
    b.add_argument("--rows", type=int, default=10_000)
    b.add_argument("--reps", type=int, default=3)
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--out", default=None)
    b.set_defaults(func=cmd_bench)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except pipeline.Tripwire as exc:
        print(f"tripwire: {exc}", file=sys.stderr)
        return 1
    except (TreeError, pipeline.InputError, ValueError, KeyError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
