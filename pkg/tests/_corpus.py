"""Seeded trees and inputs shared by the test modules."""
from __future__ import annotations

import itertools
import random

import numpy as np

from decision_machines.compiler import DecisionMachine
from decision_machines.tree import DecisionTree, Node, RandomTreeConfig, Test, random_tree

TREE1_X = (2.0, 1.0, 2.0, 2.0)
TREE1_VALUES = (1.5, -2.0, 3.25, 4.0, 5.5, -6.75)  # numeric stand-ins for v1..v6


def corpus_config(seed: int) -> RandomTreeConfig:
    return RandomTreeConfig(
        max_depth=1 + seed % 8,
        feature_count=1 + (seed * 7) % 16,
        split_prob=(0.6, 0.8, 0.95)[seed % 3],
    )


def corpus_tree(seed: int) -> DecisionTree:
    return random_tree(seed, corpus_config(seed))


def thresholds_by_feature(tree: DecisionTree) -> dict[int, list[float]]:
    out: dict[int, list[float]] = {}
    for node in tree.internal_nodes():
        if node.test.kind == "le":
            out.setdefault(node.test.feature, []).append(node.test.threshold)
    return out


def random_inputs(tree: DecisionTree, rng: np.random.Generator, count: int) -> np.ndarray:
    """Mix of exact threshold hits, quarter-grid values and continuous values."""
    th = thresholds_by_feature(tree)
    X = rng.uniform(-10, 10, size=(count, tree.feature_count))
    kind = rng.integers(0, 3, size=(count, tree.feature_count))
    for f in range(tree.feature_count):
        ts = th.get(f)
        if ts:
            hits = rng.choice(np.asarray(ts), size=count)
            X[:, f] = np.where(kind[:, f] == 0, hits, X[:, f])
        grid = np.round(X[:, f] * 4) / 4
        X[:, f] = np.where(kind[:, f] == 1, grid, X[:, f])
    return X


def margin_input(machine: DecisionMachine, rng: np.random.Generator, margin: float) -> np.ndarray:
    """Input whose every test margin satisfies ``|S x - t| >= margin``."""
    x = rng.uniform(-10, 10, size=machine.n)
    for f in range(machine.n):
        ts = sorted(set(machine.t[machine.S[:, f] != 0]))
        if not ts:
            continue
        options = [(ts[0] - margin - 3.0, ts[0] - margin), (ts[-1] + margin, ts[-1] + margin + 3.0)]
        for a, b in zip(ts, ts[1:]):
            if b - a >= 2 * margin:
                options.append((a + margin, b - margin))
        lo, hi = options[rng.integers(len(options))]
        x[f] = rng.uniform(lo, hi)
    return x


def all_shapes(leaves: int):
    """Every ordered binary tree shape with the given leaf count, as nested tuples."""
    if leaves == 1:
        yield "L"
        return
    for k in range(1, leaves):
        for left in all_shapes(k):
            for right in all_shapes(leaves - k):
                yield ("N", left, right)


def tree_from_shape(shape, feature_count: int = 3, seed: int = 0) -> DecisionTree:
    rng = random.Random(seed)
    nodes = {}
    counter = itertools.count()

    def build(s):
        nid = next(counter)
        if s == "L":
            nodes[nid] = Node(nid, "leaf", value=float(nid))
        else:
            test = Test("le", rng.randrange(feature_count), threshold=rng.randint(-8, 8) / 2)
            left, right = build(s[1]), build(s[2])
            nodes[nid] = Node(nid, "internal", test=test, left=left, right=right)
        return nid

    build(shape)
    return DecisionTree(feature_count, nodes, 0, "real")


def random_categorical_tree(seed: int) -> DecisionTree:
    """Tree mixing numeric tests and equality tests on up to 3 categorical features (|E| <= 8)."""
    rng = random.Random(seed)
    n_cat = rng.randint(1, 3)
    n_num = rng.randint(0, 2)
    feature_count = n_cat + n_num
    domains = {}
    for f in range(n_cat):
        size = rng.randint(2, 8)
        domains[f] = tuple(sorted(rng.sample(range(-20, 21), size)))
        domains[f] = tuple(v / 2 for v in domains[f])
    nodes = {}
    counter = itertools.count()

    def grow(depth):
        nid = next(counter)
        if depth == 0 or (depth < 6 and rng.random() < 0.75):
            f = rng.randrange(feature_count)
            if f in domains:
                test = Test("eq", f, category=rng.choice(domains[f]))
            else:
                test = Test("le", f, threshold=rng.randint(-8, 8) / 2)
            left, right = grow(depth + 1), grow(depth + 1)
            nodes[nid] = Node(nid, "internal", test=test, left=left, right=right)
        else:
            nodes[nid] = Node(nid, "leaf", value=rng.randint(-100, 100) / 4)
        return nid

    grow(0)
    return DecisionTree(feature_count, nodes, 0, "real", domains)
