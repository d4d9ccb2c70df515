"""Group-partitioned block encodings consumed by the PE grid.

An A block covers ``g_na`` row groups of ``m_t`` rows by one ``k_t``-wide
column strip.  Its encoding holds, per group, the value / group-local row /
per-column length streams, plus shared streams over the block's non-empty
columns: the block-local column index and a bitmap of which groups touch that
column.  B is encoded the same way mirrored over rows, with ``g_nb`` column
groups of ``n_t``.

Edge blocks may be ragged: streams simply contain fewer entries; the geometry
carries the full dimensions so global coordinates can be reconstructed.
Lengths are recorded only for columns where a group participates — the bitmap
is the sole membership record (no zero-length entries).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import BoundsError, DegenerateInputError, MalformedBlockError
from .matrices import CscMatrix, CsrMatrix, TripletMatrix, canonicalize


@dataclass(frozen=True)
class TilingGeometry:
    """Block/group hierarchy: tile counts, tile dims, group counts, full dims.

    Row strips of A are ``g_na * m_t`` tall (one ``m_t`` slice per group);
    column strips of B are ``g_nb * n_t`` wide.  Tile counts are ceiling
    divisions, so ``t_m * g_na * m_t >= m`` etc., with ragged last tiles.
    """

    m: int
    k: int
    n: int
    m_t: int
    k_t: int
    n_t: int
    t_m: int
    t_k: int
    t_n: int
    g_na: int
    g_nb: int

    def row_span(self, block_row: int, group: int) -> tuple[int, int]:
        """Global row range [lo, hi) of one A group tile; empty if off the edge."""
        lo = block_row * self.g_na * self.m_t + group * self.m_t
        return min(lo, self.m), min(lo + self.m_t, self.m)

    def col_span(self, block_col: int, group: int) -> tuple[int, int]:
        """Global column range [lo, hi) of one B group tile."""
        lo = block_col * self.g_nb * self.n_t + group * self.n_t
        return min(lo, self.n), min(lo + self.n_t, self.n)

    def k_span(self, block_k: int) -> tuple[int, int]:
        lo = block_k * self.k_t
        return min(lo, self.k), min(lo + self.k_t, self.k)

    def block_rows(self, block_row: int) -> tuple[int, int]:
        """Global row range of a whole A row strip (all groups)."""
        lo = block_row * self.g_na * self.m_t
        return min(lo, self.m), min(lo + self.g_na * self.m_t, self.m)

    def block_cols(self, block_col: int) -> tuple[int, int]:
        lo = block_col * self.g_nb * self.n_t
        return min(lo, self.n), min(lo + self.g_nb * self.n_t, self.n)


def make_geometry(plan, dims: tuple[int, int, int],
                  groups: tuple[int, int]) -> TilingGeometry:
    """Build the geometry for a partition plan over concrete dimensions.

    Tile counts are recomputed by ceiling division so ragged edges are always
    covered, whatever counts the plan carries.
    """
    m, k, n = dims
    g_na, g_nb = groups
    if m <= 0 or k <= 0 or n <= 0:
        raise DegenerateInputError(f"matrix dimensions must be positive, got {dims}")
    if g_na <= 0 or g_nb <= 0:
        raise DegenerateInputError(f"group counts must be positive, got {groups}")
    if plan.m_t <= 0 or plan.k_t <= 0 or plan.n_t <= 0:
        raise DegenerateInputError("tile dimensions must be positive")
    t_m = math.ceil(m / (g_na * plan.m_t))
    t_k = math.ceil(k / plan.k_t)
    t_n = math.ceil(n / (g_nb * plan.n_t))
    return TilingGeometry(m=m, k=k, n=n, m_t=plan.m_t, k_t=plan.k_t,
                          n_t=plan.n_t, t_m=t_m, t_k=t_k, t_n=t_n,
                          g_na=g_na, g_nb=g_nb)


@dataclass(frozen=True)
class RpCscBlock:
    """Row-partitioned CSC encoding of one A block.

    value[g] / row_idx[g] / col_len[g] are per-group streams in column-major
    order; col_idx and group_bitmap have one entry per non-empty block column.
    Row indices are group-local (0..m_t-1).
    """

    g_na: int
    m_t: int
    block_row: int
    block_k: int
    value: list[np.ndarray]
    row_idx: list[np.ndarray]
    col_len: list[np.ndarray]
    col_idx: np.ndarray
    group_bitmap: np.ndarray
    col_all_len: int

    @property
    def nnz(self) -> int:
        return sum(len(v) for v in self.value)


@dataclass(frozen=True)
class CpCsrBlock:
    """Column-partitioned CSR encoding of one B block (mirror over rows).

    col_idx[g] holds group-local column indices (0..n_t-1); row_idx and
    group_bitmap have one entry per non-empty block row.
    """

    g_nb: int
    n_t: int
    block_k: int
    block_col: int
    value: list[np.ndarray]
    col_idx: list[np.ndarray]
    row_len: list[np.ndarray]
    row_idx: np.ndarray
    group_bitmap: np.ndarray
    row_all_len: int

    @property
    def nnz(self) -> int:
        return sum(len(v) for v in self.value)


def _group_runs(gids: np.ndarray) -> list[tuple[int, int, int]]:
    """(group, start, stop) runs of a non-decreasing group-id array."""
    runs = []
    start = 0
    for i in range(1, len(gids) + 1):
        if i == len(gids) or gids[i] != gids[start]:
            runs.append((int(gids[start]), start, i))
            start = i
    return runs


def encode_rp_csc(a: CscMatrix, geom: TilingGeometry,
                  block_row: int, block_k: int) -> RpCscBlock:
    """Encode the (block_row, block_k) tile of A.

    Walks the strip's columns in order; each entry lands in the group
    ``(row - strip_base) // m_t`` with its row stored group-locally.  Columns
    with no entries anywhere in the strip are omitted from the shared streams.
    """
    if not (0 <= block_row < geom.t_m and 0 <= block_k < geom.t_k):
        raise BoundsError(
            f"block ({block_row},{block_k}) outside {geom.t_m}x{geom.t_k} grid")
    base, row_hi = geom.block_rows(block_row)
    k_lo, k_hi = geom.k_span(block_k)

    vals = [[] for _ in range(geom.g_na)]
    rows = [[] for _ in range(geom.g_na)]
    lens = [[] for _ in range(geom.g_na)]
    col_idx = []
    bitmaps = []
    for c in range(k_lo, k_hi):
        col_rows, col_vals = a.column(c)
        lo = np.searchsorted(col_rows, base, side="left")
        hi = np.searchsorted(col_rows, row_hi, side="left")
        if lo == hi:
            continue
        in_rows = col_rows[lo:hi] - base
        in_vals = col_vals[lo:hi]
        gids = in_rows // geom.m_t
        bitmap = 0
        for g, s, e in _group_runs(gids):
            vals[g].append(in_vals[s:e])
            rows[g].append(in_rows[s:e] - g * geom.m_t)
            lens[g].append(e - s)
            bitmap |= 1 << g
        col_idx.append(c - k_lo)
        bitmaps.append(bitmap)

    return RpCscBlock(
        g_na=geom.g_na, m_t=geom.m_t, block_row=block_row, block_k=block_k,
        value=[_cat_f(v) for v in vals],
        row_idx=[_cat_i(r) for r in rows],
        col_len=[np.asarray(l, dtype=np.int64) for l in lens],
        col_idx=np.asarray(col_idx, dtype=np.int64),
        group_bitmap=np.asarray(bitmaps, dtype=np.uint64),
        col_all_len=len(col_idx),
    )


def encode_cp_csr(b: CsrMatrix, geom: TilingGeometry,
                  block_k: int, block_col: int) -> CpCsrBlock:
    """Encode the (block_k, block_col) tile of B, grouped over columns."""
    if not (0 <= block_k < geom.t_k and 0 <= block_col < geom.t_n):
        raise BoundsError(
            f"block ({block_k},{block_col}) outside {geom.t_k}x{geom.t_n} grid")
    k_lo, k_hi = geom.k_span(block_k)
    base, col_hi = geom.block_cols(block_col)

    vals = [[] for _ in range(geom.g_nb)]
    cols = [[] for _ in range(geom.g_nb)]
    lens = [[] for _ in range(geom.g_nb)]
    row_idx = []
    bitmaps = []
    for r in range(k_lo, k_hi):
        row_cols, row_vals = b.row(r)
        lo = np.searchsorted(row_cols, base, side="left")
        hi = np.searchsorted(row_cols, col_hi, side="left")
        if lo == hi:
            continue
        in_cols = row_cols[lo:hi] - base
        in_vals = row_vals[lo:hi]
        gids = in_cols // geom.n_t
        bitmap = 0
        for g, s, e in _group_runs(gids):
            vals[g].append(in_vals[s:e])
            cols[g].append(in_cols[s:e] - g * geom.n_t)
            lens[g].append(e - s)
            bitmap |= 1 << g
        row_idx.append(r - k_lo)
        bitmaps.append(bitmap)

    return CpCsrBlock(
        g_nb=geom.g_nb, n_t=geom.n_t, block_k=block_k, block_col=block_col,
        value=[_cat_f(v) for v in vals],
        col_idx=[_cat_i(c) for c in cols],
        row_len=[np.asarray(l, dtype=np.int64) for l in lens],
        row_idx=np.asarray(row_idx, dtype=np.int64),
        group_bitmap=np.asarray(bitmaps, dtype=np.uint64),
        row_all_len=len(row_idx),
    )


def _cat_f(chunks) -> np.ndarray:
    return np.concatenate(chunks) if chunks else np.empty(0, dtype=np.float64)


def _cat_i(chunks) -> np.ndarray:
    return (np.concatenate(chunks).astype(np.int64)
            if chunks else np.empty(0, dtype=np.int64))


def validate_rp_csc(blk: RpCscBlock) -> None:
    """Raise MalformedBlockError on any structural invariant violation."""
    if len(blk.col_idx) != len(blk.group_bitmap) or len(blk.col_idx) != blk.col_all_len:
        raise MalformedBlockError("shared stream lengths disagree with col_all_len")
    if blk.col_all_len and np.any(np.diff(blk.col_idx) <= 0):
        raise MalformedBlockError("col_idx not strictly increasing")
    for g in range(blk.g_na):
        if int(np.sum(blk.col_len[g])) != len(blk.value[g]):
            raise MalformedBlockError(f"group {g}: col_len sum != stream length")
        if len(blk.value[g]) != len(blk.row_idx[g]):
            raise MalformedBlockError(f"group {g}: value/row_idx length mismatch")
        member_cols = sum(1 for b in blk.group_bitmap if int(b) >> g & 1)
        if member_cols != len(blk.col_len[g]):
            raise MalformedBlockError(f"group {g}: bitmap/col_len count mismatch")
        if len(blk.row_idx[g]) and int(blk.row_idx[g].max()) >= blk.m_t:
            raise MalformedBlockError(f"group {g}: row index >= m_t")


def validate_cp_csr(blk: CpCsrBlock) -> None:
    if len(blk.row_idx) != len(blk.group_bitmap) or len(blk.row_idx) != blk.row_all_len:
        raise MalformedBlockError("shared stream lengths disagree with row_all_len")
    if blk.row_all_len and np.any(np.diff(blk.row_idx) <= 0):
        raise MalformedBlockError("row_idx not strictly increasing")
    for g in range(blk.g_nb):
        if int(np.sum(blk.row_len[g])) != len(blk.value[g]):
            raise MalformedBlockError(f"group {g}: row_len sum != stream length")
        if len(blk.value[g]) != len(blk.col_idx[g]):
            raise MalformedBlockError(f"group {g}: value/col_idx length mismatch")
        member_rows = sum(1 for b in blk.group_bitmap if int(b) >> g & 1)
        if member_rows != len(blk.row_len[g]):
            raise MalformedBlockError(f"group {g}: bitmap/row_len count mismatch")
        if len(blk.col_idx[g]) and int(blk.col_idx[g].max()) >= blk.n_t:
            raise MalformedBlockError(f"group {g}: col index >= n_t")


def decode_rp_csc(blk: RpCscBlock, geom: TilingGeometry,
                  coords: tuple[int, int] | None = None) -> TripletMatrix:
    """Reconstruct the global-coordinate triplets of an A block."""
    validate_rp_csc(blk)
    block_row, block_k = coords if coords is not None else (blk.block_row, blk.block_k)
    k_lo, _ = geom.k_span(block_k)
    cursor = [0] * blk.g_na
    len_cursor = [0] * blk.g_na
    entries = []
    for p in range(blk.col_all_len):
        c = k_lo + int(blk.col_idx[p])
        bitmap = int(blk.group_bitmap[p])
        for g in range(blk.g_na):
            if not bitmap >> g & 1:
                continue
            length = int(blk.col_len[g][len_cursor[g]])
            s = cursor[g]
            row_lo, _ = geom.row_span(block_row, g)
            for j in range(s, s + length):
                entries.append((row_lo + int(blk.row_idx[g][j]), c,
                                float(blk.value[g][j])))
            cursor[g] += length
            len_cursor[g] += 1
    return canonicalize(geom.m, geom.k, entries)


def decode_cp_csr(blk: CpCsrBlock, geom: TilingGeometry,
                  coords: tuple[int, int] | None = None) -> TripletMatrix:
    """Reconstruct the global-coordinate triplets of a B block."""
    validate_cp_csr(blk)
    block_k, block_col = coords if coords is not None else (blk.block_k, blk.block_col)
    k_lo, _ = geom.k_span(block_k)
    cursor = [0] * blk.g_nb
    len_cursor = [0] * blk.g_nb
    entries = []
    for p in range(blk.row_all_len):
        r = k_lo + int(blk.row_idx[p])
        bitmap = int(blk.group_bitmap[p])
        for g in range(blk.g_nb):
            if not bitmap >> g & 1:
                continue
            length = int(blk.row_len[g][len_cursor[g]])
            s = cursor[g]
            col_lo, _ = geom.col_span(block_col, g)
            for j in range(s, s + length):
                entries.append((r, col_lo + int(blk.col_idx[g][j]),
                                float(blk.value[g][j])))
            cursor[g] += length
            len_cursor[g] += 1
    return canonicalize(geom.k, geom.n, entries)


def dump_rp_csc(blk: RpCscBlock) -> str:
    """Structured one-line-per-stream text dump for golden-file tests."""
    lines = [
        "kind=rp_csc",
        f"block=({blk.block_row},{blk.block_k})",
        f"col_all_len={blk.col_all_len}",
        "col_idx=" + _ints(blk.col_idx),
        "group_bitmap=" + _ints(blk.group_bitmap),
    ]
    for g in range(blk.g_na):
        lines.append(
            f"group={g} col_len=" + _ints(blk.col_len[g])
            + " row_idx=" + _ints(blk.row_idx[g])
            + " value=" + _floats(blk.value[g]))
    return "\n".join(lines) + "\n"


def dump_cp_csr(blk: CpCsrBlock) -> str:
    lines = [
        "kind=cp_csr",
        f"block=({blk.block_k},{blk.block_col})",
        f"row_all_len={blk.row_all_len}",
        "row_idx=" + _ints(blk.row_idx),
        "group_bitmap=" + _ints(blk.group_bitmap),
    ]
    for g in range(blk.g_nb):
        lines.append(
            f"group={g} row_len=" + _ints(blk.row_len[g])
            + " col_idx=" + _ints(blk.col_idx[g])
            + " value=" + _floats(blk.value[g]))
    return "\n".join(lines) + "\n"


def _ints(arr) -> str:
    return ",".join(str(int(x)) for x in arr)


def _floats(arr) -> str:
    return ",".join(repr(float(x)) for x in arr)
