"""MatrixMarket coordinate text I/O for symmetric matrices and LDL factors."""
from __future__ import annotations

from pathlib import Path
from typing import Iterable

import numpy as np
import scipy.sparse as sp

from .covariance import SparseSymmetric
from .ldl import LdlFactors


def _fmt(x: float) -> str:
    return repr(float(x))


def write_symmetric(path, matrix: SparseSymmetric, comments: Iterable[str] = ()) -> None:
    """Write the lower triangle, 1-based, in ``real symmetric`` coordinate format."""
    lines = ["%%MatrixMarket matrix coordinate real symmetric"]
    lines += [f"% {c}" for c in comments]
    lines.append(f"{matrix.n} {matrix.n} {matrix.nnz}")
    # stored upper (r <= c) -> lower (c, r); order column-major by the lower triangle
    order = np.lexsort((matrix.cols, matrix.rows))
    for r, c, v in zip(matrix.rows[order].tolist(), matrix.cols[order].tolist(),
                       matrix.vals[order].tolist()):
        lines.append(f"{c + 1} {r + 1} {_fmt(v)}")
    Path(path).write_text("\n".join(lines) + "\n")


def read_symmetric(path, kind: str = "correlation") -> SparseSymmetric:
    with open(path) as fh:
        header = fh.readline().split()
        if len(header) < 5 or header[0] != "%%MatrixMarket" or header[2] != "coordinate":
            raise ValueError("not a MatrixMarket coordinate file")
        symmetry = header[4].lower()
        body = [ln.split() for ln in fh if ln.strip() and not ln.lstrip().startswith("%")]
    nr, nc, nnz = (int(x) for x in body[0])
    if nr != nc:
        raise ValueError("matrix must be square")
    entries = body[1:]
    if len(entries) != nnz:
        raise ValueError(f"expected {nnz} entries, found {len(entries)}")
    i = np.array([int(e[0]) - 1 for e in entries], dtype=np.int64)
    j = np.array([int(e[1]) - 1 for e in entries], dtype=np.int64)
    v = np.array([float(e[2]) for e in entries])
    if symmetry == "symmetric":
        return SparseSymmetric(nr, np.minimum(i, j), np.maximum(i, j), v, kind=kind)
    if symmetry == "general":
        return SparseSymmetric.from_scipy(sp.coo_matrix((v, (i, j)), shape=(nr, nc)), kind=kind)
    raise ValueError(f"unsupported symmetry {symmetry!r}")


def write_factors(prefix, factors: LdlFactors, comments: Iterable[str] = ()) -> list[Path]:
    """Write ``<prefix>.perm.txt``, ``<prefix>.L.mtx`` and ``<prefix>.D.txt``."""
    prefix = str(prefix)
    head = [f"# {c}" for c in comments]
    perm_path = Path(prefix + ".perm.txt")
    perm_path.write_text("\n".join(head + [str(int(p)) for p in factors.perm]) + "\n")
    d_path = Path(prefix + ".D.txt")
    d_path.write_text("\n".join(head + [_fmt(x) for x in factors.d]) + "\n")
    L = factors.L.tocoo()
    order = np.lexsort((L.row, L.col))
    lines = ["%%MatrixMarket matrix coordinate real general"]
    lines += [f"% {c}" for c in comments]
    lines.append("% strictly lower part of the unit lower triangular factor")
    lines.append(f"{factors.n} {factors.n} {L.nnz}")
    for r, c, v in zip(L.row[order].tolist(), L.col[order].tolist(), L.data[order].tolist()):
        lines.append(f"{r + 1} {c + 1} {_fmt(v)}")
    l_path = Path(prefix + ".L.mtx")
    l_path.write_text("\n".join(lines) + "\n")
    return [perm_path, l_path, d_path]


def read_factors(prefix) -> LdlFactors:
    prefix = str(prefix)

    def numbers(path, cast):
        return [cast(s) for s in Path(path).read_text().split("\n")
                if s.strip() and not s.startswith("#")]

    perm = np.array(numbers(prefix + ".perm.txt", int), dtype=np.int64)
    d = np.array(numbers(prefix + ".D.txt", float))
    with open(prefix + ".L.mtx") as fh:
        fh.readline()
        body = [ln.split() for ln in fh if ln.strip() and not ln.lstrip().startswith("%")]
    n = int(body[0][0])
    ent = body[1:]
    L = sp.csc_matrix(
        ([float(e[2]) for e in ent], ([int(e[0]) - 1 for e in ent], [int(e[1]) - 1 for e in ent])),
        shape=(n, n),
    )
    L.sort_indices()
    return LdlFactors(perm, L, d)
