"""Positive-definite approximation of a sparse symmetric matrix via LDL^T.

The matrix is reordered with a minimum-degree heuristic and factorized
left-looking, column by column. When a pivot ``d_j`` would drop below the
floor, the off-diagonal entries coupling point ``j`` to earlier points
(row ``j`` of the permuted lower triangle) are shrunk by one common factor
``t`` in [0, 1) chosen so that ``d_j`` equals the floor exactly. Because row
``j`` of ``L`` is linear in those entries, the repair is a closed-form
rescaling of the already computed row; no other column is touched.

Pushing each deficient pivot exactly onto the floor bounds ``D`` but not
``L^{-1}``: chains of floored pivots compound and can leave ``A'``
numerically singular. By default a repaired row is therefore also capped at
``sum_k |L_jk| <= 1``, which keeps the triangular solves well conditioned.
Both limits only shrink ``t``, so the repair stays shrink-only.
"""
from __future__ import annotations

import heapq
import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .covariance import SparseSymmetric


class NotPositiveDefiniteError(ValueError):
    """A diagonal entry is below the floor and may not be changed."""


def minimum_degree_order(n: int, rows: np.ndarray, cols: np.ndarray) -> np.ndarray:
    """Fill-reducing elimination order by greedy minimum degree.

    Works on the explicit elimination graph; ties go to the smallest index.
    Returns ``perm`` with ``perm[k]`` the original index eliminated k-th.
    """
    adj: list[set[int]] = [set() for _ in range(n)]
    for r, c in zip(rows.tolist(), cols.tolist()):
        if r != c:
            adj[r].add(c)
            adj[c].add(r)
    heap = [(len(adj[i]), i) for i in range(n)]
    heapq.heapify(heap)
    done = np.zeros(n, dtype=bool)
    order = []
    while heap:
        deg, v = heapq.heappop(heap)
        if done[v] or deg != len(adj[v]):
            continue
        done[v] = True
        order.append(v)
        nb = adj[v]
        for u in nb:
            au = adj[u]
            au.discard(v)
            before = len(au) + 1
            au |= nb
            au.discard(u)
            if len(au) != before:
                heapq.heappush(heap, (len(au), u))
        adj[v] = set()
    return np.array(order, dtype=np.int64)


@dataclass
class LdlFactors:
    """``P A' P^T = L D L^T`` with ``L`` unit lower triangular.

    ``perm[k]`` is the original index placed at position ``k``; ``L`` holds
    only the strictly lower part (CSC), the unit diagonal is implicit.
    """

    perm: np.ndarray
    L: sp.csc_matrix
    d: np.ndarray

    @property
    def n(self) -> int:
        return self.d.size

    @property
    def inverse_perm(self) -> np.ndarray:
        inv = np.empty_like(self.perm)
        inv[self.perm] = np.arange(self.perm.size)
        return inv

    def unit_lower(self) -> sp.csc_matrix:
        return (self.L + sp.identity(self.n, format="csc")).tocsc()

    def reconstruct(self) -> np.ndarray:
        """Dense ``A'`` in the original ordering (for checks on small problems)."""
        lu = self.unit_lower().toarray()
        b = (lu * self.d) @ lu.T
        inv = self.inverse_perm
        return b[np.ix_(inv, inv)]

    def solve(self, rhs) -> np.ndarray:
        return solve(self, rhs)


def solve(factors: LdlFactors, rhs) -> np.ndarray:
    """Solve ``A' x = rhs`` with the stored factors."""
    b = np.asarray(rhs, dtype=float)
    if b.shape[0] != factors.n:
        raise ValueError(f"rhs has {b.shape[0]} rows, factors have {factors.n}")
    L = factors.L
    indptr, indices, data = L.indptr, L.indices, L.data
    y = b[factors.perm].copy()
    n = factors.n
    vec = y.ndim == 1
    for k in range(n):
        lo, hi = indptr[k], indptr[k + 1]
        if hi > lo:
            if vec:
                y[indices[lo:hi]] -= data[lo:hi] * y[k]
            else:
                y[indices[lo:hi]] -= np.outer(data[lo:hi], y[k])
    y /= factors.d if vec else factors.d[:, None]
    for k in range(n - 1, -1, -1):
        lo, hi = indptr[k], indptr[k + 1]
        if hi > lo:
            y[k] -= data[lo:hi] @ y[indices[lo:hi]]
    x = np.empty_like(y)
    x[factors.perm] = y
    return x


@dataclass
class ConditioningReport:
    n: int
    off_diagonal_entries: int
    modified_entries: int
    mean_abs_reduction: float
    max_abs_reduction: float
    repaired_pivots: int
    raised_diagonals: int
    matrix_nnz: int
    factor_nnz: int

    @property
    def fraction_modified(self) -> float:
        return self.modified_entries / self.off_diagonal_entries if self.off_diagonal_entries else 0.0

    def to_dict(self) -> dict:
        return {
            "dimension": self.n,
            "off_diagonal_entries": self.off_diagonal_entries,
            "modified_entries": self.modified_entries,
            "fraction_modified": self.fraction_modified,
            "mean_abs_reduction": self.mean_abs_reduction,
            "max_abs_reduction": self.max_abs_reduction,
            "repaired_pivots": self.repaired_pivots,
            "raised_diagonals": self.raised_diagonals,
            "matrix_nnz_upper": self.matrix_nnz,
            "factor_nnz": self.factor_nnz,
        }


def _permuted_lower_columns(matrix: SparseSymmetric, perm: np.ndarray, inv: np.ndarray):
    """Columns of the permuted lower triangle (rows > col), plus the diagonal."""
    r, c, v = matrix.off_diagonal()
    pr, pc = inv[r], inv[c]
    lo_row = np.maximum(pr, pc)
    lo_col = np.minimum(pr, pc)
    csc = sp.csc_matrix((v, (lo_row, lo_col)), shape=(matrix.n, matrix.n))
    csc.sort_indices()
    diag = matrix.diagonal()[perm]
    return csc, diag


def _factorize(n, B: sp.csc_matrix, diag: np.ndarray, floor: float, preserve_diagonal: bool,
               growth_cap: float | None):
    d = np.zeros(n)
    diag = diag.copy()
    scale = np.ones(n)
    col_rows: list[np.ndarray] = [None] * n
    col_vals: list[np.ndarray] = [None] * n
    row_refs: list[list[tuple[int, int]]] = [[] for _ in range(n)]
    w = np.zeros(n)
    repaired = raised = 0
    empty = np.empty(0, dtype=np.int64)
    for j in range(n):
        refs = row_refs[j]
        if refs:
            ks = np.fromiter((k for k, _ in refs), dtype=np.int64, count=len(refs))
            ljk = np.fromiter((col_vals[k][p] for k, p in refs), dtype=float, count=len(refs))
            dk = d[ks]
            s = float(np.sum(ljk * ljk * dk))
        else:
            ks, ljk, dk, s = empty, np.empty(0), np.empty(0), 0.0
        dj = diag[j] - s
        if dj < floor:
            if preserve_diagonal:
                if diag[j] < floor:
                    raise NotPositiveDefiniteError(
                        f"diagonal entry {diag[j]} below floor {floor} at permuted position {j}")
                if math.isfinite(s):
                    t = math.sqrt((diag[j] - floor) / s)
                    if growth_cap is not None:
                        t = min(t, growth_cap / float(np.sum(np.abs(ljk))))
                else:
                    t = 0.0
                ljk = ljk * t if t > 0 else np.zeros_like(ljk)
                for (k, p), val in zip(refs, ljk.tolist()):
                    col_vals[k][p] = val
                scale[j] = t
                dj = max(diag[j] - float(np.sum(ljk * ljk * dk)), floor)
                repaired += 1
            else:
                diag[j] += floor - dj
                dj = floor
                raised += 1
        d[j] = dj

        lo, hi = B.indptr[j], B.indptr[j + 1]
        brows = B.indices[lo:hi]
        w[brows] = B.data[lo:hi]
        pieces = [brows]
        for (k, p), l_jk, d_k in zip(refs, ljk.tolist(), dk.tolist()):
            rk = col_rows[k][p + 1:]
            if rk.size:
                w[rk] -= (l_jk * d_k) * col_vals[k][p + 1:]
                pieces.append(rk)
        rows = np.unique(np.concatenate(pieces)) if len(pieces) > 1 else brows.astype(np.int64)
        col_rows[j] = rows
        col_vals[j] = w[rows] / dj
        w[rows] = 0.0
        for pos, r in enumerate(rows.tolist()):
            row_refs[r].append((j, pos))

    counts = np.array([r.size for r in col_rows], dtype=np.int64)
    indptr = np.concatenate([[0], np.cumsum(counts)])
    indices = np.concatenate(col_rows) if n else empty
    data = np.concatenate(col_vals) if n else np.empty(0)
    L = sp.csc_matrix((data, indices, indptr), shape=(n, n))
    return L, d, diag, scale, repaired, raised


def condition_pd(matrix: SparseSymmetric, delta_floor: float = 0.01,
                 preserve_diagonal: bool = True, ordering: str = "minimum_degree",
                 growth_cap: float | None = 1.0):
    """Approximate ``matrix`` by a well-conditioned positive definite one.

    Parameters
    ----------
    matrix
        Symmetric input, typically a correlation matrix with unit diagonal.
    delta_floor
        Lower bound for every entry of ``D``; in (0, 1].
    preserve_diagonal
        Keep the diagonal and shrink off-diagonal entries (default). If
        false, a deficient pivot is repaired by raising the diagonal entry
        instead, leaving off-diagonal entries untouched.
    ordering
        ``"minimum_degree"`` or ``"natural"``.
    growth_cap
        Upper bound on ``sum_k |L_jk|`` for rows whose pivot is repaired;
        ``None`` restores the pivot exactly to the floor and nothing more.

    Returns
    -------
    approximated : SparseSymmetric
        ``A'`` with the same sparsity pattern as the input.
    factors : LdlFactors
        Exact factors of ``A'`` up to round-off, every ``d >= delta_floor``.
    report : ConditioningReport
    """
    if not isinstance(matrix, SparseSymmetric):
        raise TypeError("condition_pd expects a SparseSymmetric (use from_dense/from_scipy)")
    if not 0 < delta_floor <= 1:
        raise ValueError("delta_floor must lie in (0, 1]")
    n = matrix.n
    if ordering == "minimum_degree":
        perm = minimum_degree_order(n, matrix.rows, matrix.cols)
    elif ordering == "natural":
        perm = np.arange(n, dtype=np.int64)
    else:
        raise ValueError(f"unknown ordering {ordering!r}")
    inv = np.empty_like(perm)
    inv[perm] = np.arange(n)

    B, diag = _permuted_lower_columns(matrix, perm, inv)
    L, d, new_diag, scale, repaired, raised = _factorize(n, B, diag, delta_floor, preserve_diagonal,
                                                      growth_cap)

    r, c, v = matrix.off_diagonal()
    later = np.maximum(inv[r], inv[c])
    v_new = v * scale[later]
    on = matrix.rows == matrix.cols
    rows = np.concatenate([matrix.rows[on], r])
    cols = np.concatenate([matrix.cols[on], c])
    diag_vals = new_diag[inv[matrix.rows[on]]]
    approx = SparseSymmetric(n, rows, cols, np.concatenate([diag_vals, v_new]),
                             index=matrix.index, kind=matrix.kind)
    reduction = np.abs(v) - np.abs(v_new)
    report = ConditioningReport(
        n=n,
        off_diagonal_entries=int(v.size),
        modified_entries=int(np.count_nonzero(scale[later] < 1.0)),
        mean_abs_reduction=float(reduction.mean()) if v.size else 0.0,
        max_abs_reduction=float(reduction.max()) if v.size else 0.0,
        repaired_pivots=repaired,
        raised_diagonals=raised,
        matrix_nnz=approx.nnz,
        factor_nnz=int(L.nnz) + n,
    )
    return approx, LdlFactors(perm, L, d), report
