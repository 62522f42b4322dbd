"""Binary decision trees: data model, JSON parsing, traversal and a seeded generator.

A tree is an arena of nodes keyed by explicit ids. Internal nodes hold a single
test; passing the test routes LEFT, failing routes RIGHT. Numeric tests pass
when ``x[feature] <= threshold`` (ties go left), categorical tests pass when
``x[feature] == category``.
"""
from __future__ import annotations

import json
import math
import random
from dataclasses import dataclass, field
from typing import Any, Hashable, Iterator, Mapping, Sequence

NodeId = Hashable

VALUE_TAGS = ("real", "label", "expert")


class TreeError(ValueError):
    """Raised for malformed tree documents. Carries the offending node id."""

    def __init__(self, reason: str, node_id: NodeId | None = None):
        self.reason = reason
        self.node_id = node_id
        where = "" if node_id is None else f"node {node_id!r}: "
        super().__init__(where + reason)


@dataclass(frozen=True)
class Test:
    __test__ = False  # not a pytest class

    kind: str  # "le" | "eq"
    feature: int
    threshold: float | None = None
    category: float | None = None

    def passes(self, x: Sequence[float]) -> bool:
        if self.kind == "le":
            return x[self.feature] <= self.threshold
        return x[self.feature] == self.category


@dataclass(frozen=True)
class Node:
    id: NodeId
    kind: str  # "internal" | "leaf"
    test: Test | None = None
    left: NodeId | None = None
    right: NodeId | None = None
    value: Any = None

    @property
    def is_leaf(self) -> bool:
        return self.kind == "leaf"


@dataclass(frozen=True)
class DecisionTree:
    feature_count: int
    nodes: Mapping[NodeId, Node]
    root: NodeId
    value_tag: str = "real"
    categorical_domains: Mapping[int, tuple[float, ...]] = field(default_factory=dict)
    feature_names: tuple[str, ...] | None = None

    def __post_init__(self):
        _validate(self)

    def node(self, node_id: NodeId) -> Node:
        return self.nodes[node_id]

    def preorder(self) -> Iterator[Node]:
        stack = [self.root]
        while stack:
            node = self.nodes[stack.pop()]
            yield node
            if not node.is_leaf:
                stack.append(node.right)
                stack.append(node.left)

    def level_order(self) -> Iterator[Node]:
        """Breadth-first, left child before right child at each level."""
        queue = [self.root]
        i = 0
        while i < len(queue):
            node = self.nodes[queue[i]]
            i += 1
            yield node
            if not node.is_leaf:
                queue.append(node.left)
                queue.append(node.right)

    def leaves(self) -> list[Node]:
        """Leaves from left to right."""
        return [n for n in self.preorder() if n.is_leaf]

    def internal_nodes(self) -> list[Node]:
        return [n for n in self.preorder() if not n.is_leaf]

    @property
    def leaf_count(self) -> int:
        return sum(1 for n in self.nodes.values() if n.is_leaf)

    def parents(self) -> dict[NodeId, NodeId]:
        out = {}
        for n in self.nodes.values():
            if not n.is_leaf:
                out[n.left] = n.id
                out[n.right] = n.id
        return out

    def leaf_depths(self) -> dict[NodeId, int]:
        """Edge depth of every leaf, i.e. the number of tests on its root path."""
        depths = {}
        stack = [(self.root, 0)]
        while stack:
            nid, d = stack.pop()
            node = self.nodes[nid]
            if node.is_leaf:
                depths[nid] = d
            else:
                stack.append((node.left, d + 1))
                stack.append((node.right, d + 1))
        return depths

    def subtree(self, node_id: NodeId) -> "DecisionTree":
        keep = {}
        stack = [node_id]
        while stack:
            node = self.nodes[stack.pop()]
            keep[node.id] = node
            if not node.is_leaf:
                stack.extend((node.left, node.right))
        return DecisionTree(self.feature_count, keep, node_id, self.value_tag,
                            self.categorical_domains, self.feature_names)

    @property
    def has_categorical(self) -> bool:
        return any(n.test.kind == "eq" for n in self.nodes.values() if not n.is_leaf)


def _validate(tree: DecisionTree) -> None:
    if not isinstance(tree.feature_count, int) or tree.feature_count < 1:
        raise TreeError(f"feature_count must be a positive integer, got {tree.feature_count!r}")
    if tree.value_tag not in VALUE_TAGS:
        raise TreeError(f"unknown leaf value tag {tree.value_tag!r}")
    if tree.root not in tree.nodes:
        raise TreeError("root id does not name a node", tree.root)
    if tree.feature_names is not None and len(tree.feature_names) != tree.feature_count:
        raise TreeError("feature_names length differs from feature_count")
    for f, domain in tree.categorical_domains.items():
        if not 0 <= f < tree.feature_count:
            raise TreeError(f"categorical domain declared for feature {f} outside [0, {tree.feature_count})")
        if len(set(domain)) != len(domain):
            raise TreeError(f"categorical domain of feature {f} has duplicate values")

    seen = set()
    stack = [tree.root]
    while stack:
        nid = stack.pop()
        if nid in seen:
            raise TreeError("node reached twice (cycle or shared child)", nid)
        seen.add(nid)
        node = tree.nodes[nid]
        if node.is_leaf:
            continue
        if node.kind != "internal":
            raise TreeError(f"unknown node kind {node.kind!r}", nid)
        if node.test is None:
            raise TreeError("internal node without a test", nid)
        test = node.test
        if not 0 <= test.feature < tree.feature_count:
            raise TreeError(f"feature index {test.feature} out of range [0, {tree.feature_count})", nid)
        if test.kind == "le":
            if test.threshold is None or math.isnan(test.threshold):
                raise TreeError("numeric test needs a threshold", nid)
        elif test.kind == "eq":
            if test.category is None:
                raise TreeError("categorical test needs a category", nid)
            domain = tree.categorical_domains.get(test.feature)
            if domain is not None and test.category not in domain:
                raise TreeError(f"category {test.category!r} not in declared domain of feature {test.feature}", nid)
        else:
            raise TreeError(f"unknown test kind {test.kind!r}", nid)
        if node.left is None or node.right is None:
            raise TreeError("non-binary node: internal node needs two children", nid)
        if node.left == node.right:
            raise TreeError("non-binary/duplicate child: left and right are the same node", nid)
        for child in (node.left, node.right):
            if child not in tree.nodes:
                raise TreeError(f"child {child!r} does not exist", nid)
            stack.append(child)
    orphans = set(tree.nodes) - seen
    if orphans:
        raise TreeError("node not reachable from root", sorted(map(str, orphans))[0])


# -- JSON -----------------------------------------------------------------

def _parse_value(raw: Any, nid: NodeId) -> tuple[str, Any]:
    if not isinstance(raw, Mapping) or "tag" not in raw or "v" not in raw:
        raise TreeError("leaf value must be an object with 'tag' and 'v'", nid)
    tag = raw["tag"]
    if tag not in VALUE_TAGS:
        raise TreeError(f"unknown leaf value tag {tag!r}", nid)
    v = raw["v"]
    if tag == "real":
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            raise TreeError("real leaf value must be a number", nid)
        v = float(v)
    elif tag == "expert" and (isinstance(v, bool) or not isinstance(v, int)):
        raise TreeError("expert leaf value must be an integer id", nid)
    return tag, v


def tree_from_dict(doc: Mapping[str, Any]) -> DecisionTree:
    if not isinstance(doc, Mapping):
        raise TreeError("tree document must be a JSON object")
    for key in ("feature_count", "root", "nodes"):
        if key not in doc:
            raise TreeError(f"missing top-level key {key!r}")
    nodes: dict[NodeId, Node] = {}
    tags = set()
    for raw in doc["nodes"]:
        if not isinstance(raw, Mapping) or "id" not in raw:
            raise TreeError("every node needs an 'id'")
        nid = raw["id"]
        if isinstance(nid, list):
            raise TreeError("node id must be a string or integer")
        if nid in nodes:
            raise TreeError("duplicate node id", nid)
        kind = raw.get("kind")
        if kind == "leaf":
            if "test" in raw or "left" in raw or "right" in raw:
                raise TreeError("leaf carries a test or children", nid)
            tag, v = _parse_value(raw.get("value"), nid)
            tags.add(tag)
            nodes[nid] = Node(nid, "leaf", value=v)
        elif kind == "internal":
            rt = raw.get("test")
            if not isinstance(rt, Mapping):
                raise TreeError("internal node needs a test object", nid)
            feature = rt.get("feature")
            if isinstance(feature, bool) or not isinstance(feature, int):
                raise TreeError("test feature must be an integer", nid)
            if rt.get("kind") == "le":
                if "threshold" not in rt:
                    raise TreeError("numeric test needs a threshold", nid)
                test = Test("le", feature, threshold=float(rt["threshold"]))
            elif rt.get("kind") == "eq":
                if "category" not in rt:
                    raise TreeError("categorical test needs a category", nid)
                test = Test("eq", feature, category=float(rt["category"]))
            else:
                raise TreeError(f"unknown test kind {rt.get('kind')!r}", nid)
            if raw.get("value") is not None:
                raise TreeError("internal node carries a leaf value", nid)
            nodes[nid] = Node(nid, "internal", test=test, left=raw.get("left"), right=raw.get("right"))
        else:
            raise TreeError(f"unknown node kind {kind!r}", nid)
    if len(tags) > 1:
        raise TreeError(f"mixed leaf value tags {sorted(tags)}")
    domains = {}
    for key, values in (doc.get("categorical_domains") or {}).items():
        try:
            f = int(key)
        except (TypeError, ValueError):
            raise TreeError(f"categorical domain key {key!r} is not a feature index") from None
        domains[f] = tuple(float(e) for e in values)
    names = doc.get("feature_names")
    return DecisionTree(
        feature_count=doc["feature_count"],
        nodes=nodes,
        root=doc["root"],
        value_tag=tags.pop() if tags else "real",
        categorical_domains=domains,
        feature_names=tuple(names) if names is not None else None,
    )


def parse_tree(text: str) -> DecisionTree:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise TreeError(f"malformed JSON: {exc}") from None
    return tree_from_dict(doc)


def load_tree(path) -> DecisionTree:
    with open(path) as fh:
        return parse_tree(fh.read())


def tree_to_dict(tree: DecisionTree) -> dict:
    nodes = []
    for node in tree.preorder():
        if node.is_leaf:
            nodes.append({"id": node.id, "kind": "leaf", "value": {"tag": tree.value_tag, "v": node.value}})
        else:
            t = node.test
            test = {"kind": t.kind, "feature": t.feature}
            if t.kind == "le":
                test["threshold"] = t.threshold
            else:
                test["category"] = t.category
            nodes.append({"id": node.id, "kind": "internal", "test": test,
                          "left": node.left, "right": node.right})
    doc = {"feature_count": tree.feature_count, "root": tree.root, "nodes": nodes}
    if tree.categorical_domains:
        doc["categorical_domains"] = {str(f): list(e) for f, e in sorted(tree.categorical_domains.items())}
    if tree.feature_names is not None:
        doc["feature_names"] = list(tree.feature_names)
    return doc


def dump_tree(tree: DecisionTree) -> str:
    return json.dumps(tree_to_dict(tree), indent=1)


# -- evaluation -------------------------------------------------------------

def check_features(x: Sequence[float], feature_count: int) -> None:
    if len(x) != feature_count:
        raise ValueError(f"expected {feature_count} features, got {len(x)}")
    for i, xi in enumerate(x):
        if math.isnan(xi):
            raise ValueError(f"feature {i} is NaN")


def traverse_path(tree: DecisionTree, x: Sequence[float]) -> list[tuple[NodeId, bool]]:
    """(internal node id, passed) for every test on the path taken by x."""
    path = []
    node = tree.nodes[tree.root]
    while not node.is_leaf:
        ok = node.test.passes(x)
        path.append((node.id, ok))
        node = tree.nodes[node.left if ok else node.right]
    return path


def traverse(tree: DecisionTree, x: Sequence[float]) -> tuple[NodeId, Any]:
    """Follow the tests from the root and return ``(leaf id, leaf value)``."""
    check_features(x, tree.feature_count)
    node = tree.nodes[tree.root]
    while not node.is_leaf:
        node = tree.nodes[node.left if node.test.passes(x) else node.right]
    return node.id, node.value


# -- generator --------------------------------------------------------------

@dataclass(frozen=True)
class RandomTreeConfig:
    """Knobs for :func:`random_tree`.

    Thresholds are drawn from a quarter grid on ``[-threshold_range, threshold_range]``
    so that inputs drawn from the same grid hit boundary ties regularly.
    """

    max_depth: int = 4
    feature_count: int = 4
    leaf_tag: str = "real"
    split_prob: float = 0.7
    threshold_range: int = 8
    n_labels: int = 3


def random_tree(seed: int, config: RandomTreeConfig = RandomTreeConfig()) -> DecisionTree:
    """Deterministic random tree.

    Scheme: the root always splits. Every other node at depth ``d < max_depth``
    splits with probability ``split_prob``; nodes at ``max_depth`` are leaves.
    A split picks a feature uniformly and a threshold ``k / 4`` with ``k`` uniform
    in ``[-4 r, 4 r]``. Leaf values are ``k / 8`` with ``k`` uniform in ``[-800, 800]``
    (real), a label ``"c<j>"`` (label), or the leaf's left-to-right rank (expert).
    Node ids are consecutive integers in creation (pre-)order.
    """
    if config.max_depth < 1:
        raise ValueError("max_depth must be >= 1")
    if config.feature_count < 1:
        raise ValueError("feature_count must be >= 1")
    if config.leaf_tag not in VALUE_TAGS:
        raise ValueError(f"unknown leaf tag {config.leaf_tag!r}")
    if not 0.0 <= config.split_prob <= 1.0:
        raise ValueError("split_prob must lie in [0, 1]")
    rng = random.Random(seed)
    r4 = 4 * config.threshold_range
    nodes: dict[int, Node] = {}
    counter = [0]
    leaf_rank = [0]

    def grow(depth: int) -> int:
        nid = counter[0]
        counter[0] += 1
        split = depth == 0 or (depth < config.max_depth and rng.random() < config.split_prob)
        if split:
            test = Test("le", rng.randrange(config.feature_count), threshold=rng.randint(-r4, r4) / 4)
            left = grow(depth + 1)
            right = grow(depth + 1)
            nodes[nid] = Node(nid, "internal", test=test, left=left, right=right)
        else:
            if config.leaf_tag == "real":
                value = rng.randint(-800, 800) / 8
            elif config.leaf_tag == "label":
                value = f"c{rng.randrange(config.n_labels)}"
            else:
                value = leaf_rank[0]
            leaf_rank[0] += 1
            nodes[nid] = Node(nid, "leaf", value=value)
        return nid

    grow(0)
    return DecisionTree(config.feature_count, nodes, 0, config.leaf_tag)
