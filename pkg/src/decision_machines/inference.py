"""Exact evaluation of logical decision machines.

Test margins ``S x - t`` are computed in double precision; everything after the
modified signum is integer arithmetic. Similarity scores ``(B_i . h) / |B_i|_1``
are kept as integer pairs and compared by cross-multiplication, so decoding
never depends on floating point division.
"""
from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from functools import total_ordering
from typing import Any, Sequence

import numpy as np

from .compiler import DecisionMachine


class UndefinedTestResult(ValueError):
    """A test margin was NaN. ``row`` is set for batch evaluation."""

    def __init__(self, msg: str, row: int | None = None):
        self.row = row
        super().__init__(msg if row is None else f"row {row}: {msg}")


@total_ordering
@dataclass(frozen=True)
class SimilarityScore:
    numerator: int
    denominator: int

    def __post_init__(self):
        if self.denominator <= 0:
            raise ValueError("similarity denominator must be positive")

    @property
    def value(self) -> Fraction:
        return Fraction(self.numerator, self.denominator)

    @property
    def is_unit(self) -> bool:
        return self.numerator == self.denominator

    def __eq__(self, other):
        if not isinstance(other, SimilarityScore):
            return NotImplemented
        return self.numerator * other.denominator == other.numerator * self.denominator

    def __lt__(self, other):
        if not isinstance(other, SimilarityScore):
            return NotImplemented
        return self.numerator * other.denominator < other.numerator * self.denominator

    def __hash__(self):
        return hash(self.value)

    def __float__(self):
        return self.numerator / self.denominator


def sgn_modified(z) -> np.ndarray:
    """Entrywise ``-1`` for ``z <= 0`` and ``+1`` for ``z > 0`` (so 0 and -0.0 map to -1)."""
    z = np.asarray(z, dtype=float)
    if np.isnan(z).any():
        raise UndefinedTestResult("undefined test result (NaN margin)")
    return np.where(z > 0, 1, -1).astype(np.int8)


def margins(machine: DecisionMachine, x: np.ndarray) -> np.ndarray:
    return machine.S @ x - machine.t


def result_vector(machine: DecisionMachine, x: np.ndarray) -> np.ndarray:
    return sgn_modified(margins(machine, x))


def logical_similarity(b: Sequence[int], norm: int, h: Sequence[int]) -> SimilarityScore:
    if len(b) != len(h):
        raise ValueError("template row and test results differ in length")
    if norm < 1:
        raise ValueError("zero template row has no logical similarity")
    return SimilarityScore(int(np.dot(np.asarray(b, dtype=np.int64), np.asarray(h, dtype=np.int64))), int(norm))


def similarity_scores(machine: DecisionMachine, h: np.ndarray) -> list[SimilarityScore]:
    nums = machine.B.astype(np.int64) @ np.asarray(h, dtype=np.int64)
    return [SimilarityScore(int(a), int(d)) for a, d in zip(nums, machine.row_norms)]


def first_argmax(scores: Sequence[SimilarityScore]) -> int:
    best = 0
    for i in range(1, len(scores)):
        if scores[i] > scores[best]:
            best = i
    return best


def decide(machine: DecisionMachine, x: Sequence[float]) -> int:
    """0-based index of the first leaf row with maximal logical similarity."""
    x = machine.prepare(x)
    if machine.L == 1:
        return 0
    return first_argmax(similarity_scores(machine, result_vector(machine, x)))


def predict(machine: DecisionMachine, x: Sequence[float]) -> Any:
    return machine.v[decide(machine, x)]


def predict_delta(machine: DecisionMachine, x: Sequence[float]) -> float:
    """``sum_i delta(1 - score_i) v[i]`` with the delta taken on exact scores."""
    values = machine.values
    x = machine.prepare(x)
    if machine.L == 1:
        return float(values[0])
    scores = similarity_scores(machine, result_vector(machine, x))
    selected = [values[i] for i, s in enumerate(scores) if s.is_unit]
    if not selected:
        return 0.0
    total = selected[0]
    for v in selected[1:]:
        total += v
    return float(total)


def delta_index(machine: DecisionMachine, x: Sequence[float]) -> int | None:
    """Index of the leaf whose score is exactly 1 (first one if several, None if none)."""
    x = machine.prepare(x)
    if machine.L == 1:
        return 0
    scores = similarity_scores(machine, result_vector(machine, x))
    return next((i for i, s in enumerate(scores) if s.is_unit), None)


def decide_batch(machine: DecisionMachine, X, batch_size: int = 65536) -> np.ndarray:
    """Vectorized :func:`decide` over the rows of ``X``.

    Computes ``H = sgn(S X^T - t)`` and the integer score matrix ``B H``, then a
    running first-argmax with cross-multiplied comparisons across leaves.
    """
    X = np.asarray(X, dtype=float)
    if X.ndim != 2:
        X = X.reshape(0 if X.size == 0 else -1, machine.input_count)
    m = X.shape[0]
    out = np.zeros(m, dtype=np.int64)
    if m == 0 or machine.L == 1:
        if m and X.shape[1] != machine.input_count:
            raise ValueError(f"expected {machine.input_count} features, got {X.shape[1]}")
        return out
    if X.shape[1] != machine.input_count:
        raise ValueError(f"expected {machine.input_count} features, got {X.shape[1]}")
    if machine.feature_transform:
        X = machine.feature_transform.apply_batch(X)
    B = machine.B.astype(np.int64)
    norms = machine.row_norms
    for start in range(0, m, batch_size):
        chunk = X[start:start + batch_size]
        Z = chunk @ machine.S.T - machine.t
        bad = np.isnan(Z).any(axis=1)
        if bad.any():
            raise UndefinedTestResult("undefined test result (NaN margin)", int(start + np.argmax(bad)))
        H = np.where(Z > 0, 1, -1).astype(np.int64)
        scores = H @ B.T  # (rows, L)
        best = np.zeros(len(chunk), dtype=np.int64)
        best_num = scores[:, 0].copy()
        best_den = np.full(len(chunk), norms[0], dtype=np.int64)
        for i in range(1, machine.L):
            better = scores[:, i] * best_den > best_num * norms[i]
            best[better] = i
            best_num[better] = scores[better, i]
            best_den[better] = norms[i]
        out[start:start + batch_size] = best
    return out


def predict_batch(machine: DecisionMachine, X, batch_size: int = 65536) -> list:
    idx = decide_batch(machine, X, batch_size)
    return [machine.v[i] for i in idx]


# -- additive models --------------------------------------------------------

@dataclass(frozen=True)
class Forest:
    trees: tuple[DecisionMachine, ...]
    weights: tuple[float, ...]

    def __post_init__(self):
        if len(self.trees) != len(self.weights):
            raise ValueError("forest needs one weight per tree")
        if any(not m.numeric for m in self.trees):
            raise ValueError("forest members must carry numeric leaf values")


def forest_predict(forest: Forest, x: Sequence[float]) -> float:
    if not forest.trees:
        raise ValueError("empty forest")
    total = forest.weights[0] * predict(forest.trees[0], x)
    for w, m in zip(forest.weights[1:], forest.trees[1:]):
        total += w * predict(m, x)
    return total


@dataclass(frozen=True, eq=False)
class CombinedMachine:
    """Two machines side by side: stacked selection rows, block-diagonal templates."""

    S: np.ndarray
    t: np.ndarray
    B: np.ndarray
    row_norms: np.ndarray
    v: np.ndarray
    split: int          # rows [0, split) belong to the first machine
    w1: float
    w2: float

    def evaluate(self, x: Sequence[float]) -> float:
        x = np.asarray(x, dtype=float)
        h = sgn_modified(self.S @ x - self.t).astype(np.int64)
        unit = (self.B.astype(np.int64) @ h) == self.row_norms
        first = _delta_sum(self.v[:self.split], unit[:self.split])
        second = _delta_sum(self.v[self.split:], unit[self.split:])
        return self.w1 * first + self.w2 * second


def _delta_sum(values: np.ndarray, unit: np.ndarray) -> float:
    picked = values[unit]
    if picked.size == 0:
        return 0.0
    total = picked[0]
    for v in picked[1:]:
        total += v
    return float(total)


def combine_block(m1: DecisionMachine, m2: DecisionMachine, w1: float, w2: float) -> CombinedMachine:
    if m1.n != m2.n:
        raise ValueError(f"feature-count mismatch: {m1.n} vs {m2.n}")
    if m1.feature_transform or m2.feature_transform:
        raise ValueError("combine_block expects machines without categorical transforms")
    v = np.concatenate([m1.values, m2.values])
    B = np.zeros((m1.L + m2.L, m1.B.shape[1] + m2.B.shape[1]), dtype=np.int8)
    B[:m1.L, :m1.B.shape[1]] = m1.B
    B[m1.L:, m1.B.shape[1]:] = m2.B
    norms = np.concatenate([m1.row_norms, m2.row_norms])
    return CombinedMachine(
        S=np.vstack([m1.S, m2.S]), t=np.concatenate([m1.t, m2.t]), B=B,
        row_norms=norms, v=v, split=m1.L, w1=float(w1), w2=float(w2),
    )
