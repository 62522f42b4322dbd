"""Structure of template matrices: audits, exact rank, and tree reconstruction.

Everything here reads only ``B``. A template matrix built from a tree has
distinct rows, a ``+1`` and a ``-1`` in every column, and exactly one column
without zeros (the root). Splitting the rows on the root column's sign and
recursing recovers the whole tree.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Union

import numpy as np

from .compiler import DecisionMachine, ternary
from .tree import DecisionTree, Node, Test

MODULUS = 2_147_483_647  # 2**31 - 1; products of residues fit in int64


class ReconstructionError(ValueError):
    pass


# -- rank -------------------------------------------------------------------

def bareiss_rank(M) -> int:
    """Rank by fraction-free (Bareiss) elimination over Python integers."""
    A = [[int(v) for v in row] for row in np.asarray(M)]
    rows = len(A)
    cols = len(A[0]) if rows else 0
    rank, prev = 0, 1
    for c in range(cols):
        piv = next((r for r in range(rank, rows) if A[r][c] != 0), None)
        if piv is None:
            continue
        A[rank], A[piv] = A[piv], A[rank]
        p = A[rank][c]
        prow = A[rank]
        for r in range(rank + 1, rows):
            row = A[r]
            a = row[c]
            for k in range(c + 1, cols):
                row[k] = (row[k] * p - a * prow[k]) // prev
            row[c] = 0
        prev = p
        rank += 1
        if rank == rows:
            break
    return rank


def modular_rank(M, p: int = MODULUS) -> int:
    """Rank of ``M`` reduced modulo the prime ``p``. Never exceeds the rational rank."""
    A = np.mod(np.asarray(M, dtype=np.int64), p)
    rows, cols = A.shape
    rank = 0
    for c in range(cols):
        nz = np.flatnonzero(A[rank:, c])
        if nz.size == 0:
            continue
        piv = rank + nz[0]
        if piv != rank:
            A[[rank, piv]] = A[[piv, rank]]
        inv = pow(int(A[rank, c]), p - 2, p)
        A[rank] = (A[rank] * inv) % p
        below = A[rank + 1:, c].copy()
        if below.any():
            A[rank + 1:] = (A[rank + 1:] - np.outer(below, A[rank]) % p) % p
        rank += 1
        if rank == rows:
            break
    return rank


def exact_rank(B, method: str = "auto") -> int:
    """Exact rank of an integer matrix.

    ``method="bareiss"`` always eliminates over the integers. ``"auto"`` first
    ranks modulo a large prime: a modular rank equal to the smaller dimension
    certifies that rank exactly (the rational rank can only be larger); any
    smaller result falls back to Bareiss.
    """
    M = np.asarray(B)
    if M.size == 0:
        return 0
    if method == "bareiss":
        return bareiss_rank(M)
    if method != "auto":
        raise ValueError(f"unknown rank method {method!r}")
    r = modular_rank(M)
    if r == min(M.shape):
        return r
    return bareiss_rank(M)


# -- audit ------------------------------------------------------------------

@dataclass
class StructureReport:
    rows_distinct: bool
    column_polarity_ok: bool
    root_column: int | None
    root_column_candidates: list[int]
    per_leaf_depth: list[int]
    trace_BBt: int
    max_row_nonzeros: int
    rank: int
    full_column_rank: bool
    sibling_pairs: list[tuple[int, int, int]] = field(default_factory=list)

    def to_dict(self, one_based: bool = False) -> dict:
        d = asdict(self)
        if one_based:
            d["root_column"] = None if self.root_column is None else self.root_column + 1
            d["root_column_candidates"] = [c + 1 for c in self.root_column_candidates]
            d["sibling_pairs"] = [[i + 1, j + 1, c + 1] for i, j, c in self.sibling_pairs]
        else:
            d["sibling_pairs"] = [list(p) for p in self.sibling_pairs]
        return d


def audit(B) -> StructureReport:
    B = ternary(B)
    if B.size == 0:
        raise ValueError("audit needs a nonempty template matrix")
    nonzero = B != 0
    depth = nonzero.sum(axis=1)
    zero_free = [int(c) for c in np.flatnonzero(nonzero.all(axis=0))]
    rank = exact_rank(B)
    return StructureReport(
        rows_distinct=len({row.tobytes() for row in B}) == B.shape[0],
        column_polarity_ok=bool(((B == 1).any(axis=0) & (B == -1).any(axis=0)).all()),
        root_column=zero_free[0] if len(zero_free) == 1 else None,
        root_column_candidates=zero_free,
        per_leaf_depth=[int(d) for d in depth],
        trace_BBt=int((B.astype(np.int64) ** 2).sum()),
        max_row_nonzeros=int(depth.max()),
        rank=rank,
        full_column_rank=rank == B.shape[1],
        sibling_pairs=sibling_pairs(B),
    )


def sibling_pairs(B) -> list[tuple[int, int, int]]:
    """Row pairs with identical support that differ in exactly one entry; that entry's column is the parent."""
    B = np.asarray(B)
    groups: dict[bytes, list[int]] = {}
    for i, row in enumerate(B):
        groups.setdefault((row != 0).tobytes(), []).append(i)
    pairs = []
    for members in groups.values():
        for a in range(len(members)):
            for b in range(a + 1, len(members)):
                i, j = members[a], members[b]
                diff = np.flatnonzero(B[i] != B[j])
                if diff.size == 1:
                    pairs.append((i, j, int(diff[0])))
    return sorted(pairs)


# -- subtrees ---------------------------------------------------------------

def subtree_template(B, column: int, side: str = "left") -> tuple[np.ndarray, list[int], list[int]]:
    """Template matrix of the left (``-1``) or right (``+1``) subtree under ``column``.

    Rows are the leaves on that side; columns are the tests below ``column``
    that touch those rows (the splitting column and its ancestors, which are
    constant over the side, are dropped). A side that is a single leaf gives a
    ``1 x 0`` matrix. Returns ``(matrix, row indices, column indices)``.
    """
    B = ternary(B)
    if not 0 <= column < B.shape[1]:
        raise IndexError(f"column {column} out of range")
    if side not in ("left", "right"):
        raise ValueError("side must be 'left' or 'right'")
    sign = -1 if side == "left" else 1
    rows = [int(r) for r in np.flatnonzero(B[:, column] == sign)]
    if not rows:
        raise ValueError(f"column {column} has no {side} rows")
    under = B[:, column] != 0
    cols = [
        k for k in range(B.shape[1])
        if k != column and (B[rows, k] != 0).any() and not (B[under, k] != 0).all()
    ]
    return B[np.ix_(rows, cols)], rows, cols


# -- reconstruction ---------------------------------------------------------

@dataclass(frozen=True)
class SkeletonLeaf:
    row: int


@dataclass(frozen=True)
class SkeletonNode:
    column: int
    left: "Skeleton"
    right: "Skeleton"


Skeleton = Union[SkeletonLeaf, SkeletonNode]


def reconstruct(B) -> Skeleton:
    """Recover the tree shape from a template matrix alone.

    The zero-free column among the not-yet-used columns is the subtree root;
    rows with ``-1`` there form the left subtree and rows with ``+1`` the right.
    Raises :class:`ReconstructionError` when ``B`` is not a tree template.
    """
    B = ternary(B)
    L, m = B.shape
    if L == 0:
        raise ReconstructionError("not a tree template matrix: no rows")
    used: set[int] = set()

    def build(rows: list[int], cols: list[int]) -> Skeleton:
        if len(rows) == 1:
            if cols:
                raise ReconstructionError(f"not a tree template matrix: row {rows[0]} has unexplained tests {cols}")
            return SkeletonLeaf(rows[0])
        sub = B[np.ix_(rows, cols)] if cols else np.zeros((len(rows), 0), dtype=np.int8)
        zero_free = [cols[k] for k in np.flatnonzero((sub != 0).all(axis=0))]
        if len(zero_free) != 1:
            raise ReconstructionError(
                f"not a tree template matrix: rows {rows} have {len(zero_free)} zero-free columns")
        c = zero_free[0]
        used.add(c)
        left = [r for r in rows if B[r, c] == -1]
        right = [r for r in rows if B[r, c] == 1]
        if not left or not right:
            raise ReconstructionError(f"not a tree template matrix: column {c} lacks both signs")
        rest = [k for k in cols if k != c]
        on_left = [k for k in rest if (B[left, k] != 0).any()]
        on_right = [k for k in rest if (B[right, k] != 0).any()]
        if set(on_left) & set(on_right):
            raise ReconstructionError(
                f"not a tree template matrix: ambiguous split at column {c}, "
                f"columns {sorted(set(on_left) & set(on_right))} used on both sides")
        return SkeletonNode(c, build(left, on_left), build(right, on_right))

    all_cols = [k for k in range(m) if (B[:, k] != 0).any()]
    skel = build(list(range(L)), all_cols)
    if len(used) != m:
        raise ReconstructionError(f"not a tree template matrix: columns {sorted(set(range(m)) - used)} unused")
    return skel


def skeleton_shape(obj) -> tuple | str:
    """Canonical ordered shape of a skeleton or a :class:`DecisionTree`, ignoring labels."""
    if isinstance(obj, DecisionTree):
        def walk(nid):
            node = obj.nodes[nid]
            return "L" if node.is_leaf else ("N", walk(node.left), walk(node.right))
        return walk(obj.root)
    if isinstance(obj, SkeletonLeaf):
        return "L"
    return ("N", skeleton_shape(obj.left), skeleton_shape(obj.right))


def isomorphic(a, b) -> bool:
    return skeleton_shape(a) == skeleton_shape(b)


def matches_source(skel: Skeleton, tree: DecisionTree, machine: DecisionMachine) -> bool:
    """Skeleton equals ``tree`` node for node, via the machine's column/row orders."""
    def walk(s, nid) -> bool:
        node = tree.nodes[nid]
        if isinstance(s, SkeletonLeaf):
            return node.is_leaf and machine.leaf_order[s.row] == nid
        if node.is_leaf or machine.test_order[s.column] != nid:
            return False
        return walk(s.left, node.left) and walk(s.right, node.right)
    return walk(skel, tree.root)


def skeleton_to_dict(skel: Skeleton) -> dict:
    if isinstance(skel, SkeletonLeaf):
        return {"row": skel.row}
    return {"column": skel.column, "left": skeleton_to_dict(skel.left), "right": skeleton_to_dict(skel.right)}


def skeleton_to_tree(skel: Skeleton, machine: DecisionMachine, values: str = "labels") -> DecisionTree:
    """Materialize a skeleton as a tree using the machine's ``S`` and ``t`` for the tests.

    Node ids are ``col<k>`` and ``row<i>`` (1-based). Leaf values are the labels
    ``row<i>`` or, with ``values="machine"``, the machine's own leaf values.
    """
    nodes = {}

    def walk(s) -> str:
        if isinstance(s, SkeletonLeaf):
            nid = f"row{s.row + 1}"
            nodes[nid] = Node(nid, "leaf", value=nid if values == "labels" else machine.v[s.row])
            return nid
        nid = f"col{s.column + 1}"
        sel = np.flatnonzero(machine.S[s.column])
        if sel.size != 1 or machine.S[s.column, sel[0]] != 1.0:
            raise ValueError(f"column {s.column} is not an axis-aligned test")
        test = Test("le", int(sel[0]), threshold=float(machine.t[s.column]))
        left, right = walk(s.left), walk(s.right)
        nodes[nid] = Node(nid, "internal", test=test, left=left, right=right)
        return nid

    root = walk(skel)
    tag = "label" if values == "labels" else machine.value_tag
    return DecisionTree(machine.n, nodes, root, tag)
