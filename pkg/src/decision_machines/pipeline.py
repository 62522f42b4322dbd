"""Command-level workflows: CSV in/out, batch prediction modes, analysis reports, benchmarks.

The CLI is a thin argument parser over these functions.
"""
from __future__ import annotations

import csv
import io
import math
import time
from typing import Any, Sequence

import numpy as np

from .analysis import (
    ReconstructionError,
    audit,
    reconstruct,
    skeleton_to_dict,
    skeleton_to_tree,
)
from .compiler import DecisionMachine, compile_tree, expand_categorical, depth_stats
from .inference import decide, decide_batch, delta_index, predict_delta
from .soft import (
    SelectionPredictionModel,
    SoftConfig,
    soft_decide,
    soft_predict,
    sp_predict,
    sp_weights,
)
from .tree import DecisionTree, traverse, tree_to_dict


class InputError(ValueError):
    """User-supplied data is unusable (maps to exit code 2)."""


class Tripwire(RuntimeError):
    """Two evaluation paths disagreed (maps to exit code 1)."""

    def __init__(self, msg: str, detail: dict):
        self.detail = detail
        super().__init__(msg)


def format_value(value: Any) -> str:
    """Shortest round-trip text for reals; labels verbatim."""
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    if isinstance(value, (int, np.integer)) and not isinstance(value, bool):
        return str(int(value))
    return str(value)


def compile_document(tree: DecisionTree, mode: str = "lagrange") -> DecisionMachine:
    """parse -> expand_categorical (when needed) -> compile."""
    if tree.has_categorical:
        expanded, transform = expand_categorical(tree, mode)
        return compile_tree(expanded, transform, tree.feature_names)
    return compile_tree(tree)


# -- CSV --------------------------------------------------------------------

def read_feature_csv(text: str, feature_count: int, feature_names: Sequence[str] | None = None) -> np.ndarray:
    """Parse a CSV with a header row into an ``(m, feature_count)`` float array."""
    reader = csv.reader(io.StringIO(text))
    try:
        header = next(reader)
    except StopIteration:
        raise InputError("CSV is empty (a header row is required)") from None
    header = [h.strip() for h in header]
    if len(header) != feature_count:
        raise InputError(f"CSV has {len(header)} columns, machine expects {feature_count}")
    if feature_names is not None and list(feature_names) != header:
        raise InputError(f"CSV header {header} does not match feature names {list(feature_names)}")
    rows = []
    for i, raw in enumerate(reader):
        if not raw or all(not c.strip() for c in raw):
            continue
        if len(raw) != feature_count:
            raise InputError(f"row {len(rows)}: expected {feature_count} cells, got {len(raw)}")
        try:
            vals = [float(c) for c in raw]
        except ValueError as exc:
            raise InputError(f"row {len(rows)}: {exc}") from None
        for j, v in enumerate(vals):
            if math.isnan(v):
                raise InputError(f"row {len(rows)}: NaN in column {j}")
        rows.append(vals)
    return np.asarray(rows, dtype=float).reshape(len(rows), feature_count)


def write_predictions(rows: Sequence[tuple[int, Any]]) -> str:
    """``index,leaf,value`` with 1-based leaf numbers."""
    out = io.StringIO()
    out.write("index,leaf,value\n")
    for i, (leaf, value) in enumerate(rows):
        out.write(f"{i},{leaf + 1},{format_value(value)}\n")
    return out.getvalue()


# -- prediction modes -------------------------------------------------------

def check_domains(machine: DecisionMachine, X: np.ndarray) -> None:
    if not machine.feature_transform:
        return
    for i, row in enumerate(X):
        try:
            machine.feature_transform.check_domain(row)
        except ValueError as exc:
            raise InputError(f"row {i}: {exc}") from None


def predict_rows(machine: DecisionMachine, X: np.ndarray, mode: str = "exact",
                 config: SoftConfig | None = None) -> list[tuple[int, Any]]:
    """(leaf index, value) per row of ``X`` under the exact, delta or soft evaluation."""
    check_domains(machine, X)
    if mode == "exact":
        idx = decide_batch(machine, X)
        return [(int(i), machine.v[i]) for i in idx]
    if mode == "delta":
        out = []
        for x in X:
            i = delta_index(machine, x)
            if i is None:
                raise Tripwire("no leaf reached similarity 1", {"row": [float(a) for a in x]})
            out.append((i, predict_delta(machine, x) if machine.numeric else machine.v[i]))
        return out
    if mode == "soft":
        if not machine.numeric:
            raise InputError("soft mode needs numeric leaf values")
        if machine.feature_transform:
            raise InputError("soft mode does not support categorical features")
        config = config or SoftConfig()
        return [(soft_decide(machine, x, config), soft_predict(machine, x, config)) for x in X]
    raise InputError(f"unknown mode {mode!r}")


def predict_rows_sp(model: SelectionPredictionModel, X: np.ndarray) -> list[tuple[int, float]]:
    return [(int(np.argmax(sp_weights(model, x))), sp_predict(model, x)) for x in X]


# -- analysis ---------------------------------------------------------------

def analyze_machine(machine: DecisionMachine) -> dict:
    """Structure report plus reconstruction, all indices 1-based."""
    if machine.L < 2:
        return {"L": 1, "degenerate": True, "report": None, "reconstruction": {"ok": True, "tree": None}}
    report = audit(machine.B)
    doc = {
        "L": machine.L,
        "tests": machine.B.shape[1],
        "report": report.to_dict(one_based=True),
        "rank_conjecture_holds": report.full_column_rank,
    }
    try:
        skel = reconstruct(machine.B)
    except ReconstructionError as exc:
        doc["reconstruction"] = {"ok": False, "error": str(exc)}
        return doc
    rec = {"ok": True, "skeleton": skeleton_to_dict(skel)}
    try:
        rec["tree"] = tree_to_dict(skeleton_to_tree(skel, machine))
    except ValueError as exc:
        rec["tree"] = None
        rec["tree_error"] = str(exc)
    doc["reconstruction"] = rec
    return doc


# -- benchmark --------------------------------------------------------------

def generate_rows(machine: DecisionMachine, m: int, seed: int) -> np.ndarray:
    """Seeded raw input rows that exercise every test, boundary ties included.

    Numeric features are, with equal odds, a threshold used on that feature
    (an exact tie), or a quarter-grid value spanning the thresholds +- 2.
    Categorical features draw from their declared domain.
    """
    rng = np.random.default_rng(seed)
    n0 = machine.input_count
    domains = machine.feature_transform.domains if machine.feature_transform else {}
    per_feature: dict[int, list[float]] = {f: [] for f in range(n0)}
    for j in range(machine.S.shape[0]):
        nz = np.flatnonzero(machine.S[j])
        if nz.size == 1 and nz[0] < n0:
            per_feature[int(nz[0])].append(float(machine.t[j]))
    X = np.empty((m, n0))
    for f in range(n0):
        if f in domains:
            X[:, f] = rng.choice(np.asarray(domains[f]), size=m)
            continue
        ts = per_feature[f] or [0.0]
        lo, hi = min(ts) - 2.0, max(ts) + 2.0
        grid = np.round(rng.uniform(lo, hi, size=m) * 4) / 4
        ties = rng.choice(np.asarray(ts), size=m)
        X[:, f] = np.where(rng.random(m) < 0.5, ties, grid)
    return X


def bench(machine: DecisionMachine, tree: DecisionTree | None = None, rows: int = 10_000,
          reps: int = 3, seed: int = 0) -> dict:
    """Time traversal, per-row decide and batched decode; abort if their leaves differ.

    Without a source tree, traversal runs on the tree reconstructed from ``B``
    (with ``S`` and ``t`` supplying the tests) over the machine's feature space.
    """
    if rows < 1:
        raise InputError("rows must be >= 1")
    if reps < 1:
        raise InputError("reps must be >= 1")
    X = generate_rows(machine, rows, seed)
    if machine.L < 2:
        trav_tree, raw = tree, True
    elif tree is not None:
        trav_tree, raw = tree, True
    else:
        trav_tree, raw = skeleton_to_tree(reconstruct(machine.B), machine), False
    if trav_tree is not None:
        if raw:
            leaf_row = {lid: i for i, lid in enumerate(machine.leaf_order)}
        else:
            leaf_row = {f"row{i + 1}": i for i in range(machine.L)}
        Xt = X if raw or not machine.feature_transform else machine.feature_transform.apply_batch(X)

    def run_traverse():
        if trav_tree is None:
            return np.zeros(rows, dtype=np.int64)
        return np.array([leaf_row[traverse(trav_tree, list(x))[0]] for x in Xt], dtype=np.int64)

    def run_decide():
        return np.array([decide(machine, x) for x in X], dtype=np.int64)

    def run_batch():
        return decide_batch(machine, X)

    results, timings = {}, {}
    for name, fn in (("traverse", run_traverse), ("decide", run_decide), ("batch", run_batch)):
        best = math.inf
        for _ in range(reps):
            t0 = time.perf_counter()
            out = fn()
            best = min(best, time.perf_counter() - t0)
        results[name] = out
        timings[name] = best
    for name in ("decide", "batch"):
        diff = np.flatnonzero(results[name] != results["traverse"])
        if diff.size:
            k = int(diff[0])
            raise Tripwire(
                f"{name} disagrees with traverse at row {k}",
                {"row_index": k, "row": [float(a) for a in X[k]],
                 "traverse": int(results["traverse"][k]) + 1, name: int(results[name][k]) + 1},
            )
    return {
        "rows": rows,
        "reps": reps,
        "seed": seed,
        "traversal_tree": "source" if tree is not None else "reconstructed",
        "agree": True,
        "leaf_checksum": int(np.sum((results["batch"] + 1) * (np.arange(rows) % 9973 + 1))),
        "machine": depth_stats(machine) if machine.L > 1 else {"L": 1, "n": machine.n},
        "rows_per_sec": {k: (rows / v if v > 0 else math.inf) for k, v in timings.items()},
        "seconds": timings,
        "leaves": (results["batch"] + 1).tolist(),
    }
