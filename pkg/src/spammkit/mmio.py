"""Matrix Market coordinate files (real, general or symmetric)."""

from __future__ import annotations

import numpy as np

from .errors import ParseError, UnsupportedFormatError
from .quadtree import HierMatrix, build_from_coo

HEADER = "%%MatrixMarket matrix coordinate real general"


def read_matrix_market(path, task_size: int = 256, bs: int = 32) -> HierMatrix:
    """Read a square coordinate file into a :class:`HierMatrix`.

    Symmetric storage is expanded, duplicate entries are summed and the
    matrix is built from blocks without a dense ``n x n`` intermediate.
    """
    with open(path, "r") as fh:
        first = fh.readline()
        lineno = 1
        tokens = first.strip().split()
        if len(tokens) != 5 or tokens[0].lower() != "%%matrixmarket":
            raise ParseError("missing %%MatrixMarket banner", lineno)
        obj, fmt, field, symmetry = (t.lower() for t in tokens[1:])
        if obj != "matrix":
            raise ParseError(f"unknown object {obj!r}", lineno)
        if fmt != "coordinate":
            raise UnsupportedFormatError(f"only coordinate format is read, got {fmt!r}")
        if field == "pattern":
            raise UnsupportedFormatError("pattern-only files carry no values")
        if field not in ("real", "double", "integer"):
            raise UnsupportedFormatError(f"unsupported field {field!r}")
        if symmetry not in ("general", "symmetric"):
            raise UnsupportedFormatError(f"unsupported symmetry {symmetry!r}")

        size_line = None
        for line in fh:
            lineno += 1
            stripped = line.strip()
            if not stripped or stripped.startswith("%"):
                continue
            size_line = stripped
            break
        if size_line is None:
            raise ParseError("missing size line", lineno)
        try:
            nrows, ncols, nnz = (int(t) for t in size_line.split())
        except ValueError:
            raise ParseError(f"bad size line {size_line!r}", lineno) from None
        if nrows != ncols:
            raise UnsupportedFormatError(f"matrix must be square, got {nrows}x{ncols}")
        if nrows < 1 or nnz < 0:
            raise ParseError("nonpositive dimension or negative entry count", lineno)

        rows = np.empty(nnz, dtype=np.int64)
        cols = np.empty(nnz, dtype=np.int64)
        vals = np.empty(nnz, dtype=np.float64)
        k = 0
        for line in fh:
            lineno += 1
            stripped = line.strip()
            if not stripped or stripped.startswith("%"):
                continue
            if k >= nnz:
                raise ParseError("more entries than declared", lineno)
            parts = stripped.split()
            if len(parts) != 3:
                raise ParseError(f"expected 'row col value', got {stripped!r}", lineno)
            try:
                i, j, v = int(parts[0]), int(parts[1]), float(parts[2])
            except ValueError:
                raise ParseError(f"cannot parse entry {stripped!r}", lineno) from None
            if not (1 <= i <= nrows and 1 <= j <= ncols):
                raise ParseError(f"index ({i}, {j}) out of range", lineno)
            if not np.isfinite(v):
                raise ParseError("non-finite value", lineno)
            rows[k], cols[k], vals[k] = i - 1, j - 1, v
            k += 1
        if k != nnz:
            raise ParseError(f"declared {nnz} entries, found {k}", lineno)

    if symmetry == "symmetric":
        off = rows != cols
        rows, cols, vals = (np.concatenate([rows, cols[off]]),
                            np.concatenate([cols, rows[off]]),
                            np.concatenate([vals, vals[off]]))
    return build_from_coo(nrows, rows, cols, vals, task_size, bs)


def write_matrix_market(path, m: HierMatrix) -> int:
    """Write every stored nonzero with 17 significant digits; returns the entry count."""
    n, ts = m.n_logical, m.task_size
    entries = []
    for ti, tj, leaf in m.iter_leaves():
        bs = leaf.bs
        for bi, bj, blk in leaf.iter_blocks():
            r, c = np.nonzero(blk)
            gr = ti * ts + bi * bs + r
            gc = tj * ts + bj * bs + c
            keep = (gr < n) & (gc < n)
            entries.append((gr[keep], gc[keep], blk[r[keep], c[keep]]))
    if entries:
        gr = np.concatenate([e[0] for e in entries])
        gc = np.concatenate([e[1] for e in entries])
        gv = np.concatenate([e[2] for e in entries])
        order = np.lexsort((gr, gc))
        gr, gc, gv = gr[order], gc[order], gv[order]
    else:
        gr = gc = np.empty(0, dtype=np.int64)
        gv = np.empty(0)
    with open(path, "w") as fh:
        fh.write(HEADER + "\n")
        fh.write(f"{n} {n} {gv.size}\n")
        for i, j, v in zip(gr.tolist(), gc.tolist(), gv.tolist()):
            fh.write(f"{i + 1} {j + 1} {v:.17g}\n")
    return int(gv.size)
