"""SDP problem representation, SDPA file ingestion and DIMACS error measures.

One canonical in-memory form serves both solvers:

    dual view   : max  b'y   s.t.  sum_j y_j A_j^(i) + S_i = C_i  (S_i psd),
                                   D y + s_lin = d                (s_lin >= 0)
    primal view : min  sum_i C_i . X_i + d'x_lin
                  s.t. sum_i A_j^(i) . X_i + (D' x_lin)_j = b_j,  X psd, x_lin >= 0

The augmented Lagrangian solver works on the dual view through the residual
map A0(y) - C <= 0; the interior-point solver works on the primal/dual pair.
Linear constraints are always kept explicit in (D, d), never folded into an
LMI block.

Per-block constraint data is stored as the stacked operator ``A[i]``, a
scipy CSR matrix of shape (m_i^2, n) whose column j is vec(A_j^(i)).  This
gives O(nnz) operator applications without any n x m^2 dense intermediate.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
import scipy.sparse as sp

from .linalg import SparseSym, sym, vec


@dataclass
class BlockSymMatrix:
    """Block-diagonal symmetric matrix: dense LMI blocks plus a diagonal
    linear block stored as a vector (may be None when no linear part)."""

    blocks: list[np.ndarray]
    lin: np.ndarray | None = None

    def copy(self) -> "BlockSymMatrix":
        return BlockSymMatrix(
            [b.copy() for b in self.blocks],
            None if self.lin is None else self.lin.copy(),
        )

    def _lin_op(self, other: "BlockSymMatrix", op) -> np.ndarray | None:
        if self.lin is None and other.lin is None:
            return None
        a = self.lin if self.lin is not None else 0.0
        b = other.lin if other.lin is not None else 0.0
        return op(a, b)

    def __add__(self, other: "BlockSymMatrix") -> "BlockSymMatrix":
        return BlockSymMatrix(
            [a + b for a, b in zip(self.blocks, other.blocks)],
            self._lin_op(other, lambda a, b: a + b),
        )

    def __sub__(self, other: "BlockSymMatrix") -> "BlockSymMatrix":
        return BlockSymMatrix(
            [a - b for a, b in zip(self.blocks, other.blocks)],
            self._lin_op(other, lambda a, b: a - b),
        )

    def __mul__(self, alpha: float) -> "BlockSymMatrix":
        return BlockSymMatrix(
            [alpha * b for b in self.blocks],
            None if self.lin is None else alpha * self.lin,
        )

    __rmul__ = __mul__

    def dot(self, other: "BlockSymMatrix") -> float:
        """Frobenius inner product across all blocks including the linear one."""
        s = sum(float(np.tensordot(a, b)) for a, b in zip(self.blocks, other.blocks))
        if self.lin is not None and other.lin is not None:
            s += float(self.lin @ other.lin)
        return s

    def norm(self) -> float:
        return float(np.sqrt(self.dot(self)))

    @staticmethod
    def zeros(dims: Sequence[int], nu: int | None = None) -> "BlockSymMatrix":
        return BlockSymMatrix(
            [np.zeros((m, m)) for m in dims],
            None if nu is None else np.zeros(nu),
        )

    @staticmethod
    def identity(dims: Sequence[int], nu: int | None = None, scale: float = 1.0,
                 lin_scale: float | None = None) -> "BlockSymMatrix":
        return BlockSymMatrix(
            [scale * np.eye(m) for m in dims],
            None if nu is None else (lin_scale if lin_scale is not None else scale)
            * np.ones(nu),
        )


@dataclass
class PrimalDualPoint:
    """Iterate (y, X, S): y the dual vector, X the primal block matrix with
    x_lin in ``X.lin``, S the dual slack with s_lin in ``S.lin``."""

    y: np.ndarray
    X: BlockSymMatrix
    S: BlockSymMatrix


@dataclass
class DimacsErrors:
    """The six standard normalized error measures; stopping means
    max(err1..err6) <= eps."""

    err1: float
    err2: float
    err3: float
    err4: float
    err5: float
    err6: float

    def max(self) -> float:
        return max(self.err1, self.err2, self.err3, self.err4, self.err5, self.err6)

    def as_dict(self) -> dict:
        return {f"err{i}": getattr(self, f"err{i}") for i in range(1, 7)}


class SdpaParseError(ValueError):
    def __init__(self, message: str, lineno: int | None = None):
        if lineno is not None:
            message = f"line {lineno}: {message}"
        super().__init__(message)
        self.lineno = lineno


@dataclass
class SdpProblem:
    """Multi-block SDP data in the canonical form described in the module
    docstring.

    block_dims : LMI block sizes m_i
    A          : per block, CSR of shape (m_i^2, n); column j is vec(A_j^(i))
    C          : per block, SparseSym objective/offset matrix
    b          : length-n right-hand side of the primal / dual objective
    D, d       : explicit linear constraints D y + s_lin = d, s_lin >= 0
    """

    block_dims: list[int]
    A: list[sp.csr_matrix]
    C: list[SparseSym]
    b: np.ndarray
    D: sp.csr_matrix
    d: np.ndarray
    _c_dense: list[np.ndarray] | None = field(default=None, repr=False)
    _d_csc: sp.csc_matrix | None = field(default=None, repr=False)

    @property
    def n(self) -> int:
        return int(self.b.size)

    @property
    def p(self) -> int:
        return len(self.block_dims)

    @property
    def nu(self) -> int:
        return int(self.d.size)

    @property
    def m_total(self) -> int:
        return int(sum(self.block_dims))

    def c_dense(self, i: int) -> np.ndarray:
        if self._c_dense is None:
            self._c_dense = [c.to_dense() for c in self.C]
        return self._c_dense[i]

    def d_csc(self) -> sp.csc_matrix:
        if self._d_csc is None:
            self._d_csc = self.D.tocsc()
        return self._d_csc

    def validate(self) -> list[str]:
        """Consistency checks; returns a list of warnings (empty when clean)."""
        warnings = []
        for i, (m, a) in enumerate(zip(self.block_dims, self.A)):
            if a.shape != (m * m, n := self.n):
                raise ValueError(f"block {i}: operator shape {a.shape} != ({m * m}, {n})")
            if a.nnz == 0:
                raise ValueError(f"block {i}: no structurally nonzero constraint matrix")
            if self.C[i].dim != m:
                raise ValueError(f"block {i}: objective dim {self.C[i].dim} != {m}")
        if self.D.shape != (self.nu, self.n):
            raise ValueError(f"linear block shape {self.D.shape} != ({self.nu}, {self.n})")
        if self.n <= max(self.block_dims):
            warnings.append(
                "n <= max block size: matrix-free solves lose their advantage here"
            )
        return warnings


def block_matrix(prob: SdpProblem, maker) -> BlockSymMatrix:
    return BlockSymMatrix([maker(m) for m in prob.block_dims], np.zeros(prob.nu))


def apply_A_adjoint(prob: SdpProblem, y: np.ndarray) -> BlockSymMatrix:
    """Adjoint map: block i is sum_j y_j A_j^(i); linear part is D y."""
    blocks = [
        np.asarray((a @ y)).reshape(m, m)
        for a, m in zip(prob.A, prob.block_dims)
    ]
    return BlockSymMatrix(blocks, prob.D @ y)


def apply_A(prob: SdpProblem, m: BlockSymMatrix) -> np.ndarray:
    """Forward map: component j is sum_i A_j^(i) . M_i (+ (D' m.lin)_j)."""
    out = np.zeros(prob.n)
    for a, blk in zip(prob.A, m.blocks):
        out += a.T @ vec(sym(blk))
    if m.lin is not None:
        out += prob.D.T @ m.lin
    return out


def dual_slack(prob: SdpProblem, y: np.ndarray) -> BlockSymMatrix:
    """S(y) = C - A0(y) blockwise, with linear slack d - D y."""
    ay = apply_A_adjoint(prob, y)
    blocks = [prob.c_dense(i) - ay.blocks[i] for i in range(prob.p)]
    return BlockSymMatrix(blocks, prob.d - ay.lin)


def data_inf_norms(prob: SdpProblem) -> tuple[float, float]:
    """(max |b|, max |entry of C and d|) used in the DIMACS normalizations."""
    bnorm = float(np.abs(prob.b).max()) if prob.b.size else 0.0
    cnorm = max(
        [float(np.abs(c.val).max()) if c.nnz else 0.0 for c in prob.C]
        + [float(np.abs(prob.d).max()) if prob.d.size else 0.0]
    )
    return bnorm, cnorm


def objective_values(prob: SdpProblem, pt: PrimalDualPoint) -> tuple[float, float]:
    """(primal C.X + d'x_lin, dual b'y)."""
    pobj = sum(c.dot(x) for c, x in zip(prob.C, pt.X.blocks))
    if pt.X.lin is not None:
        pobj += float(prob.d @ pt.X.lin)
    return float(pobj), float(prob.b @ pt.y)


def dimacs(prob: SdpProblem, pt: PrimalDualPoint) -> DimacsErrors:
    """Six standard DIMACS measures for the point (X, y, S).

    err1/err2 are primal feasibility and cone violation, err3/err4 the dual
    counterparts, err5 the (absolute) normalized duality gap and err6 the
    normalized complementarity X.S.
    """
    bnorm, cnorm = data_inf_norms(prob)
    pobj, dobj = objective_values(prob, pt)

    rp = prob.b - apply_A(prob, pt.X)
    err1 = float(np.linalg.norm(rp)) / (1.0 + bnorm)

    min_eig_x = min(
        [float(np.linalg.eigvalsh(sym(x))[0]) for x in pt.X.blocks]
        + ([float(pt.X.lin.min())] if pt.X.lin is not None and pt.X.lin.size else [])
    )
    err2 = max(0.0, -min_eig_x) / (1.0 + bnorm)

    ay = apply_A_adjoint(prob, pt.y)
    rd2 = 0.0
    for i in range(prob.p):
        rd2 += float(np.sum((prob.c_dense(i) - pt.S.blocks[i] - ay.blocks[i]) ** 2))
    if pt.S.lin is not None:
        rd2 += float(np.sum((prob.d - ay.lin - pt.S.lin) ** 2))
    err3 = float(np.sqrt(rd2)) / (1.0 + cnorm)

    min_eig_s = min(
        [float(np.linalg.eigvalsh(sym(s))[0]) for s in pt.S.blocks]
        + ([float(pt.S.lin.min())] if pt.S.lin is not None and pt.S.lin.size else [])
    )
    err4 = max(0.0, -min_eig_s) / (1.0 + cnorm)

    scale = 1.0 + abs(pobj) + abs(dobj)
    err5 = abs(pobj - dobj) / scale
    err6 = abs(pt.X.dot(pt.S)) / scale
    return DimacsErrors(err1, err2, err3, err4, err5, err6)


# ---------------------------------------------------------------------------
# SDPA sparse format (.dat-s)
# ---------------------------------------------------------------------------
#
# File semantics:  min c'x  s.t.  sum_j x_j F_j - F0 >= 0 (blockwise),
# negative block sizes denoting diagonal blocks.  The canonical in-memory
# problem is the dual view  max b'y, C - A0(y) >= 0, D y <= d  obtained by
#
#     A_j = -F_j,  C = -F0,  b = -c,
#     D[k, j] = -(F_j)_kk,  d[k] = -(F0)_kk   for diagonal-block rows k,
#
# so that y equals the file's variable x and the file's optimal value equals
# -b'y.


def _sdpa_tokens(text: str) -> Iterable[tuple[int, list[str]]]:
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("*") or line.startswith('"'):
            continue
        for ch in ",(){}":
            line = line.replace(ch, " ")
        yield lineno, line.split()


def load_sdpa(path_or_text) -> SdpProblem:
    """Read an SDPA sparse file into the canonical problem form.

    Accepts a filesystem path or a file-like object.  Raises
    :class:`SdpaParseError` with a line number on malformed input, including
    duplicate entries within one matrix.
    """
    if hasattr(path_or_text, "read"):
        text = path_or_text.read()
    else:
        with open(path_or_text, "r") as fh:
            text = fh.read()

    stream = _sdpa_tokens(text)
    header: list[float] = []
    header_lines: list[int] = []

    def take(count: int, what: str) -> list[float]:
        vals: list[float] = []
        while len(vals) < count:
            try:
                lineno, toks = next(stream)
            except StopIteration:
                raise SdpaParseError(f"unexpected end of file while reading {what}")
            header_lines.append(lineno)
            for t in toks:
                try:
                    vals.append(float(t))
                except ValueError:
                    raise SdpaParseError(f"bad token {t!r} in {what}", lineno)
        if len(vals) > count:
            raise SdpaParseError(f"too many values for {what}", header_lines[-1])
        return vals

    nvar = int(take(1, "variable count")[0])
    if nvar < 1:
        raise SdpaParseError("variable count must be >= 1")
    nblocks = int(take(1, "block count")[0])
    if nblocks < 1:
        raise SdpaParseError("block count must be >= 1")
    sizes = [int(v) for v in take(nblocks, "block structure")]
    cvec = np.array(take(nvar, "objective vector"))

    mat_blocks = [(k, s) for k, s in enumerate(sizes) if s > 0]
    diag_blocks = [(k, -s) for k, s in enumerate(sizes) if s < 0]
    if any(s == 0 for s in sizes):
        raise SdpaParseError("zero block size in block structure")

    diag_offset = {}
    nu = 0
    for k, s in diag_blocks:
        diag_offset[k] = nu
        nu += s
    block_index = {k: i for i, (k, _) in enumerate(mat_blocks)}
    dims = [s for _, s in mat_blocks]

    # per matrix block: dict (j, r, c) -> value with j = -1 for F0
    entries: list[dict] = [dict() for _ in mat_blocks]
    d_vec = np.zeros(nu)
    d_rows: list[int] = []
    d_cols: list[int] = []
    d_vals: list[float] = []
    seen_diag: set = set()

    for lineno, toks in stream:
        if len(toks) != 5:
            raise SdpaParseError(f"expected 5 fields, got {len(toks)}", lineno)
        try:
            matno = int(toks[0])
            blkno = int(toks[1])
            ii = int(toks[2])
            jj = int(toks[3])
            val = float(toks[4])
        except ValueError:
            raise SdpaParseError("malformed entry", lineno)
        if not (0 <= matno <= nvar):
            raise SdpaParseError(f"matrix number {matno} out of range", lineno)
        if not (1 <= blkno <= nblocks):
            raise SdpaParseError(f"block number {blkno} out of range", lineno)
        k = blkno - 1
        size = abs(sizes[k])
        if not (1 <= ii <= size and 1 <= jj <= size):
            raise SdpaParseError(f"index ({ii},{jj}) out of range for block {blkno}", lineno)
        if sizes[k] < 0:
            if ii != jj:
                raise SdpaParseError("off-diagonal entry in diagonal block", lineno)
            key = (matno, k, ii)
            if key in seen_diag:
                raise SdpaParseError(f"duplicate entry for block {blkno} ({ii},{jj})", lineno)
            seen_diag.add(key)
            pos = diag_offset[k] + ii - 1
            if matno == 0:
                d_vec[pos] = -val
            else:
                d_rows.append(pos)
                d_cols.append(matno - 1)
                d_vals.append(-val)
        else:
            r, c = max(ii, jj) - 1, min(ii, jj) - 1
            store = entries[block_index[k]]
            key = (matno - 1, r, c)
            if key in store:
                raise SdpaParseError(f"duplicate entry for block {blkno} ({ii},{jj})", lineno)
            store[key] = -val  # A_j = -F_j, C = -F0

    a_ops = []
    c_mats = []
    for bi, m in enumerate(dims):
        rows, cols, vals = [], [], []
        c_r, c_c, c_v = [], [], []
        for (j, r, c), v in entries[bi].items():
            if j < 0:
                c_r.append(r)
                c_c.append(c)
                c_v.append(v)
            else:
                rows.append(r * m + c)
                cols.append(j)
                vals.append(v)
                if r != c:
                    rows.append(c * m + r)
                    cols.append(j)
                    vals.append(v)
        a_ops.append(
            sp.csr_matrix(
                (np.array(vals), (np.array(rows, dtype=np.int64), np.array(cols, dtype=np.int64))),
                shape=(m * m, nvar),
            )
        )
        c_mats.append(SparseSym.from_triplets(m, c_r, c_c, c_v))

    d_mat = sp.csr_matrix(
        (np.array(d_vals), (np.array(d_rows, dtype=np.int64), np.array(d_cols, dtype=np.int64))),
        shape=(nu, nvar),
    )
    prob = SdpProblem(dims, a_ops, c_mats, -cvec, d_mat, d_vec)
    prob.validate()
    return prob


def _block_triplets(a: sp.csr_matrix, m: int):
    """Recover lower-triangle (j, r, c, v) lists for one stacked operator."""
    coo = a.tocoo()
    r = coo.row // m
    c = coo.row % m
    keep = r >= c
    return coo.col[keep], r[keep], c[keep], coo.data[keep]


def write_sdpa(prob: SdpProblem, path_or_buf, comment: str | None = None) -> None:
    """Write the problem in SDPA sparse format; inverse of :func:`load_sdpa`.

    Values are printed with 17 significant digits so a round-trip reproduces
    the coordinate data bit-exactly.
    """
    buf = io.StringIO()
    if comment:
        for line in comment.splitlines():
            buf.write(f"* {line}\n")
    nvar = prob.n
    sizes = [int(m) for m in prob.block_dims]
    if prob.nu:
        sizes.append(-int(prob.nu))
    buf.write(f"{nvar}\n{len(sizes)}\n")
    buf.write(" ".join(str(s) for s in sizes) + "\n")
    buf.write(" ".join(_fmt(-v) for v in prob.b) + "\n")

    def emit(matno: int, blkno: int, r: int, c: int, v: float):
        if v != 0.0:
            buf.write(f"{matno} {blkno} {c + 1} {r + 1} {_fmt(v)}\n")

    for bi, m in enumerate(prob.block_dims):
        cm = prob.C[bi]
        for r, c, v in zip(cm.row, cm.col, cm.val):
            emit(0, bi + 1, int(r), int(c), -v)
        js, rs, cs, vs = _block_triplets(prob.A[bi], m)
        order = np.lexsort((cs, rs, js))
        for j, r, c, v in zip(js[order], rs[order], cs[order], vs[order]):
            emit(int(j) + 1, bi + 1, int(r), int(c), -v)

    if prob.nu:
        blkno = prob.p + 1
        for k, v in enumerate(prob.d):
            emit(0, blkno, k, k, -v)
        dcoo = prob.D.tocoo()
        order = np.lexsort((dcoo.row, dcoo.col))
        for k, j, v in zip(dcoo.row[order], dcoo.col[order], dcoo.data[order]):
            emit(int(j) + 1, blkno, int(k), int(k), -v)

    text = buf.getvalue()
    if hasattr(path_or_buf, "write"):
        path_or_buf.write(text)
    else:
        with open(path_or_buf, "w") as fh:
            fh.write(text)


def _fmt(v: float) -> str:
    return f"{v:.17g}"


def stack_block_operator(n: int, m: int, mats: Sequence[tuple[int, SparseSym]]) -> sp.csr_matrix:
    """Stack per-variable symmetric matrices into the (m^2, n) operator whose
    column j is vec(A_j); variables without a matrix get a zero column."""
    rows: list[np.ndarray] = []
    cols: list[np.ndarray] = []
    vals: list[np.ndarray] = []
    for j, a in mats:
        if a.dim != m:
            raise ValueError(f"matrix for variable {j} has dim {a.dim} != {m}")
        off = a.row != a.col
        rows.append(a.row * m + a.col)
        rows.append(a.col[off] * m + a.row[off])
        cols.append(np.full(a.nnz + int(off.sum()), j, dtype=np.int64))
        vals.append(a.val)
        vals.append(a.val[off])
    if rows:
        r = np.concatenate(rows)
        c = np.concatenate(cols)
        v = np.concatenate(vals)
    else:
        r = np.zeros(0, dtype=np.int64)
        c = np.zeros(0, dtype=np.int64)
        v = np.zeros(0)
    return sp.csr_matrix((v, (r, c)), shape=(m * m, n))


def build_problem(
    block_dims: Sequence[int],
    block_mats: Sequence[Sequence[tuple[int, SparseSym]]],
    c_blocks: Sequence[SparseSym],
    b: np.ndarray,
    D: sp.spmatrix,
    d: np.ndarray,
) -> SdpProblem:
    b = np.asarray(b, dtype=float)
    d = np.asarray(d, dtype=float)
    a_ops = [
        stack_block_operator(b.size, m, mats)
        for m, mats in zip(block_dims, block_mats)
    ]
    prob = SdpProblem(list(block_dims), a_ops, list(c_blocks), b, sp.csr_matrix(D), d)
    prob.validate()
    return prob


def dense_operator(prob: SdpProblem, i: int) -> np.ndarray:
    """Dense (m_i^2, n) stacked operator; diagnostic sizes only."""
    return prob.A[i].toarray()
