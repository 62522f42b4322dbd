"""Compile decision trees into logical decision machines.

A machine is the tuple ``(S, t, B, v)``: row ``j`` of the selection matrix ``S``
picks the feature tested at internal node ``j`` and ``t[j]`` is its threshold,
so ``S @ x - t`` gives every test margin at once. Row ``i`` of the ternary
template matrix ``B`` encodes the path to leaf ``i``: ``-1`` where the path
passes test ``j`` (goes left), ``+1`` where it fails (goes right), ``0`` where
test ``j`` is not on the path.

Columns follow level order over internal nodes (root first), rows follow the
leaves from left to right.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from fractions import Fraction
from typing import Any, Sequence

import numpy as np

from .tree import DecisionTree, Node, NodeId, Test

LAGRANGE_MAX_DOMAIN = 16

_SYMBOL = {-1: "-", 0: "0", 1: "+"}
_VALUE = {"-": -1, "0": 0, "+": 1}


class CompileError(ValueError):
    pass


# -- ternary matrices -------------------------------------------------------

def ternary(entries, cols: int | None = None) -> np.ndarray:
    """Validate and return an ``int8`` matrix with entries in {-1, 0, +1}."""
    arr = np.asarray(entries)
    if arr.ndim == 1 and arr.size == 0 and cols is not None:
        arr = arr.reshape(0, cols)
    if arr.ndim != 2:
        raise ValueError("ternary matrix must be two-dimensional")
    if arr.size and not np.isin(arr, (-1, 0, 1)).all():
        raise ValueError("ternary matrix entries must be -1, 0 or +1")
    return arr.astype(np.int8)


def ternary_to_strings(B: np.ndarray) -> list[str]:
    return ["".join(_SYMBOL[int(e)] for e in row) for row in B]


def ternary_from_strings(rows: Sequence[str]) -> np.ndarray:
    if not rows:
        return np.zeros((0, 0), dtype=np.int8)
    width = len(rows[0])
    if any(len(r) != width for r in rows):
        raise ValueError("template row strings differ in length")
    try:
        return np.array([[_VALUE[c] for c in r] for r in rows], dtype=np.int8).reshape(len(rows), width)
    except KeyError as exc:
        raise ValueError(f"bad template symbol {exc.args[0]!r}; expected one of '-', '0', '+'") from None


# -- categorical expansion --------------------------------------------------

def lagrange_basis(x: float, target: float, domain: Sequence[float]) -> float:
    """``L(x; target) = prod_{e != target} (x - e) / (target - e)`` in product form."""
    out = 1.0
    for e in domain:
        if e != target:
            out *= (x - e) / (target - e)
    return out


def lagrange_indicator(x: float, target: float, domain: Sequence[float]) -> float:
    """0 at ``target``, 1 at every other element of ``domain``."""
    return 1.0 - lagrange_basis(x, target, domain)


@dataclass(frozen=True)
class Indicator:
    """One synthesized pseudo-feature: an equality test on ``source`` turned numeric."""

    source: int
    category: float
    domain: tuple[float, ...]
    mode: str = "lagrange"  # "lagrange" | "dummy"

    def __call__(self, value: float) -> float:
        if self.mode == "dummy":
            return 0.0 if value == self.category else 1.0
        return lagrange_indicator(value, self.category, self.domain)


@dataclass(frozen=True)
class FeatureTransform:
    """Appends one indicator column per distinct categorical (feature, category) pair."""

    input_count: int
    indicators: tuple[Indicator, ...] = ()

    @property
    def output_count(self) -> int:
        return self.input_count + len(self.indicators)

    @property
    def domains(self) -> dict[int, tuple[float, ...]]:
        return {ind.source: ind.domain for ind in self.indicators}

    def __bool__(self) -> bool:
        return bool(self.indicators)

    def check_domain(self, x: Sequence[float]) -> None:
        for f, domain in self.domains.items():
            if x[f] not in domain:
                raise ValueError(f"categorical feature {f} value {x[f]!r} outside declared domain {list(domain)}")

    def apply(self, x: Sequence[float]) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.shape != (self.input_count,):
            raise ValueError(f"expected {self.input_count} features, got {x.shape[0] if x.ndim == 1 else x.shape}")
        extra = [ind(float(x[ind.source])) for ind in self.indicators]
        return np.concatenate([x, np.asarray(extra, dtype=float)])

    def apply_batch(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if not self.indicators:
            return X
        cols = [np.array([ind(float(a)) for a in X[:, ind.source]]) for ind in self.indicators]
        return np.column_stack([X, *cols]) if len(X) else np.zeros((0, self.output_count))

    def to_dict(self) -> dict:
        return {
            "input_count": self.input_count,
            "indicators": [
                {"source": i.source, "category": i.category, "domain": list(i.domain), "mode": i.mode}
                for i in self.indicators
            ],
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "FeatureTransform":
        return cls(doc["input_count"], tuple(
            Indicator(d["source"], float(d["category"]), tuple(float(e) for e in d["domain"]), d.get("mode", "lagrange"))
            for d in doc.get("indicators", ())
        ))


def expand_categorical(tree: DecisionTree, mode: str = "lagrange") -> tuple[DecisionTree, FeatureTransform]:
    """Replace every categorical equality test with ``indicator <= 0`` on a new feature.

    The indicator is ``1 - L(x_f; e)`` built from the feature's declared domain
    (``mode="lagrange"``) or a plain 0/1 dummy (``mode="dummy"``). Both are exactly
    0 at ``e`` and exactly 1 elsewhere on the domain, so the test passes iff
    ``x_f == e``. Returns the rewritten tree and the transform inputs must go
    through at predict time.
    """
    if mode not in ("lagrange", "dummy"):
        raise ValueError(f"unknown expansion mode {mode!r}")
    n0 = tree.feature_count
    if not tree.has_categorical:
        return tree, FeatureTransform(n0)

    slots: dict[tuple[int, float], int] = {}
    indicators = []
    nodes: dict[NodeId, Node] = {}
    for node in tree.preorder():
        if node.is_leaf or node.test.kind == "le":
            nodes[node.id] = node
            continue
        f, e = node.test.feature, node.test.category
        domain = tree.categorical_domains.get(f)
        if domain is None:
            raise CompileError(f"node {node.id!r}: categorical feature {f} has no declared domain")
        if len(domain) < 2:
            raise CompileError(f"categorical feature {f}: domain needs at least 2 values")
        if len(set(domain)) != len(domain):
            raise CompileError(f"categorical feature {f}: duplicate values in domain")
        if e not in domain:
            raise CompileError(f"node {node.id!r}: category {e!r} not in domain of feature {f}")
        if mode == "lagrange" and len(domain) > LAGRANGE_MAX_DOMAIN:
            raise CompileError(
                f"categorical feature {f}: domain of size {len(domain)} exceeds {LAGRANGE_MAX_DOMAIN}; "
                "use mode='dummy' (one indicator variable per category)"
            )
        key = (f, e)
        if key not in slots:
            slots[key] = n0 + len(indicators)
            indicators.append(Indicator(f, e, tuple(domain), mode))
        nodes[node.id] = Node(node.id, "internal", test=Test("le", slots[key], threshold=0.0),
                              left=node.left, right=node.right)
    expanded = DecisionTree(n0 + len(indicators), nodes, tree.root, tree.value_tag)
    return expanded, FeatureTransform(n0, tuple(indicators))


# -- machines ---------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class DecisionMachine:
    S: np.ndarray            # (L-1, n) float
    t: np.ndarray            # (L-1,) float
    B: np.ndarray            # (L, L-1) int8, ternary
    row_norms: np.ndarray    # (L,) int64
    v: tuple                 # (L,) leaf values
    value_tag: str = "real"
    test_order: tuple = ()
    leaf_order: tuple = ()
    feature_transform: FeatureTransform | None = None
    feature_names: tuple[str, ...] | None = None  # names of the raw input columns

    @property
    def n(self) -> int:
        return self.S.shape[1]

    @property
    def L(self) -> int:
        return self.B.shape[0]

    @property
    def input_count(self) -> int:
        return self.feature_transform.input_count if self.feature_transform else self.n

    @property
    def numeric(self) -> bool:
        return self.value_tag == "real"

    @property
    def values(self) -> np.ndarray:
        if not self.numeric:
            raise ValueError("machine carries non-numeric leaf values")
        return np.asarray(self.v, dtype=float)

    def prepare(self, x: Sequence[float]) -> np.ndarray:
        """Raw input -> machine feature vector (runs the categorical transform if any)."""
        if self.feature_transform:
            return self.feature_transform.apply(x)
        x = np.asarray(x, dtype=float)
        if x.shape != (self.n,):
            raise ValueError(f"expected {self.n} features, got {len(x)}")
        return x

    def with_values(self, v: Sequence, value_tag: str = "real") -> "DecisionMachine":
        if len(v) != self.L:
            raise ValueError(f"need {self.L} leaf values, got {len(v)}")
        return DecisionMachine(self.S, self.t, self.B, self.row_norms, tuple(v), value_tag,
                               self.test_order, self.leaf_order, self.feature_transform, self.feature_names)


def make_machine(S, t, B, v, value_tag: str = "real", test_order=(), leaf_order=(),
                 feature_transform: FeatureTransform | None = None, feature_names=None) -> DecisionMachine:
    """Assemble a machine from raw matrices, checking shapes. No tree invariants are enforced."""
    t = np.asarray(t, dtype=float).reshape(-1)
    B = ternary(B, cols=t.shape[0])
    S = np.asarray(S, dtype=float)
    if S.ndim != 2 or S.shape[0] != t.shape[0]:
        raise ValueError(f"S must have {t.shape[0]} rows")
    if B.shape[1] != t.shape[0]:
        raise ValueError(f"B has {B.shape[1]} columns, expected {t.shape[0]}")
    if len(v) != B.shape[0]:
        raise ValueError(f"need {B.shape[0]} leaf values, got {len(v)}")
    norms = np.abs(B.astype(np.int64)).sum(axis=1)
    return DecisionMachine(S, t, B, norms, tuple(v), value_tag, tuple(test_order), tuple(leaf_order),
                           feature_transform, tuple(feature_names) if feature_names else None)


def compile_tree(tree: DecisionTree, transform: FeatureTransform | None = None,
                 feature_names: Sequence[str] | None = None) -> DecisionMachine:
    """Compile a numeric-test tree to ``(S, t, B, v)``.

    A single-leaf tree compiles to the degenerate machine with ``L = 1`` and
    empty ``S``, ``t`` and ``B``; it predicts its sole value for every input.
    """
    if tree.has_categorical:
        raise CompileError("tree has categorical tests; run expand_categorical first")
    tests = [n for n in tree.level_order() if not n.is_leaf]
    leaves = tree.leaves()
    col = {node.id: j for j, node in enumerate(tests)}
    S = np.zeros((len(tests), tree.feature_count))
    t = np.zeros(len(tests))
    for j, node in enumerate(tests):
        S[j, node.test.feature] = 1.0
        t[j] = node.test.threshold
    B = np.zeros((len(leaves), len(tests)), dtype=np.int8)
    row = {leaf.id: i for i, leaf in enumerate(leaves)}

    stack = [(tree.root, {})]
    while stack:
        nid, signs = stack.pop()
        node = tree.nodes[nid]
        if node.is_leaf:
            for j, s in signs.items():
                B[row[nid], j] = s
            continue
        j = col[nid]
        stack.append((node.left, {**signs, j: -1}))
        stack.append((node.right, {**signs, j: 1}))

    norms = np.abs(B.astype(np.int64)).sum(axis=1)
    return DecisionMachine(
        S=S, t=t, B=B, row_norms=norms,
        v=tuple(leaf.value for leaf in leaves),
        value_tag=tree.value_tag,
        test_order=tuple(n.id for n in tests),
        leaf_order=tuple(leaf.id for leaf in leaves),
        feature_transform=transform if transform else None,
        feature_names=tuple(feature_names) if feature_names else tree.feature_names,
    )


def compile_with_categorical(tree: DecisionTree, mode: str = "lagrange") -> DecisionMachine:
    expanded, transform = expand_categorical(tree, mode)
    return compile_tree(expanded, transform, tree.feature_names)


@dataclass(frozen=True, eq=False)
class NormalizedTemplate:
    """``diag(|B_i|_1)^-1 B`` kept as integer rows over integer denominators."""

    numerators: np.ndarray
    denominators: np.ndarray

    def row(self, i: int) -> list[Fraction]:
        d = int(self.denominators[i])
        return [Fraction(int(b), d) for b in self.numerators[i]]

    def score(self, i: int, h: Sequence[int]) -> Fraction:
        return Fraction(int(np.dot(self.numerators[i].astype(np.int64), h)), int(self.denominators[i]))


def normalized_row_similarity_basis(machine: DecisionMachine) -> NormalizedTemplate:
    if machine.L < 2:
        raise ValueError("degenerate single-leaf machine has no template rows")
    return NormalizedTemplate(machine.B.copy(), machine.row_norms.copy())


def augment(machine: DecisionMachine, x: Sequence[float]) -> tuple[np.ndarray, np.ndarray]:
    """``([S | t], (x, -1))`` so that their product is ``S x - t``."""
    x = np.asarray(x, dtype=float)
    if x.shape != (machine.n,):
        raise ValueError(f"expected {machine.n} features, got {x.shape}")
    return np.column_stack([machine.S, machine.t]), np.append(x, -1.0)


# -- serialization ----------------------------------------------------------

def _jsonable(value: Any) -> Any:
    if isinstance(value, (np.floating,)):
        return float(value)
    if isinstance(value, (np.integer,)):
        return int(value)
    return value


def machine_to_dict(machine: DecisionMachine) -> dict:
    rows, cols = np.nonzero(machine.S)
    doc = {
        "n": machine.n,
        "L": machine.L,
        "S": [[int(r), int(c), float(machine.S[r, c])] for r, c in zip(rows, cols)],
        "t": [float(x) for x in machine.t],
        "B": ternary_to_strings(machine.B),
        "row_norms": [int(x) for x in machine.row_norms],
        "v": [_jsonable(x) for x in machine.v],
        "value_tag": machine.value_tag,
        "test_order": list(machine.test_order),
        "leaf_order": list(machine.leaf_order),
        "feature_transform": machine.feature_transform.to_dict() if machine.feature_transform else {},
    }
    if machine.feature_names:
        doc["feature_names"] = list(machine.feature_names)
    return doc


def machine_from_dict(doc: dict) -> DecisionMachine:
    try:
        n, L = int(doc["n"]), int(doc["L"])
        t = np.asarray(doc["t"], dtype=float)
        S = np.zeros((t.shape[0], n))
        for r, c, val in doc["S"]:
            S[r, c] = val
        B = ternary_from_strings(doc["B"]) if L > 1 else np.zeros((L, 0), dtype=np.int8)
        if B.shape[0] == 0 and L == 1:
            B = np.zeros((1, 0), dtype=np.int8)
    except (KeyError, TypeError, IndexError) as exc:
        raise ValueError(f"malformed machine document: {exc}") from None
    if B.shape != (L, t.shape[0]):
        raise ValueError(f"B has shape {B.shape}, expected ({L}, {t.shape[0]})")
    ft = doc.get("feature_transform") or None
    transform = FeatureTransform.from_dict(ft) if ft else None
    machine = make_machine(S, t, B, doc["v"], doc.get("value_tag", "real"),
                           doc.get("test_order", ()), doc.get("leaf_order", ()), transform,
                           doc.get("feature_names"))
    if "row_norms" in doc and list(machine.row_norms) != list(doc["row_norms"]):
        raise ValueError("row_norms disagree with B")
    return machine


def dump_machine(machine: DecisionMachine) -> str:
    return json.dumps(machine_to_dict(machine), indent=1)


def load_machine(path) -> DecisionMachine:
    with open(path) as fh:
        return machine_from_dict(json.load(fh))


def depth_stats(machine: DecisionMachine) -> dict:
    norms = [int(x) for x in machine.row_norms]
    return {
        "L": machine.L,
        "n": machine.n,
        "max_depth": max(norms),
        "mean_depth": sum(norms) / len(norms),
    }
