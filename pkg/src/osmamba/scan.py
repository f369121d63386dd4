"""Scan trajectories over the half-spectrum grid and the scan/merge gathers.

A trajectory is a bijective visit order over an ``H x W_h`` grid, stored as
``forward[k] = flat grid index visited at step k`` plus its inverse.

OS-Scan kinds (all continuous: consecutive cells are neighbours):

* ``row``      serpentine over rows: row 0 left to right, row 1 right to left, ...
* ``column``   serpentine over columns
* ``diag_pos`` anti-diagonal bands u+v = s, s increasing, alternating direction
               as in the JPEG zig-zag; starts at the DC bin (0, 0)
* ``diag_neg`` main-diagonal bands v-u = d from W_h-1 down to -(H-1),
               alternating direction; starts at (0, W_h-1)

Cross-Scan baseline kinds (plain raster, not continuous):
``cross_1`` row-major, ``cross_2`` column-major, ``cross_3``/``cross_4`` their reverses.

Spectra are unshifted, so row 0 / column 0 hold the lowest vertical /
horizontal frequencies and the last column of the half grid holds the
horizontal Nyquist frequency.
"""

from __future__ import annotations

import functools
from dataclasses import dataclass, field

import numpy as np

from .tensor.core import ShapeError, Tensor, as_tensor, make_node
from .tensor import ops

OS_KINDS = ("row", "column", "diag_pos", "diag_neg")
CROSS_KINDS = ("cross_1", "cross_2", "cross_3", "cross_4")
ALL_KINDS = OS_KINDS + CROSS_KINDS

SCAN_MODES = {
    "os": OS_KINDS,
    "cross": CROSS_KINDS,
    "cross12": CROSS_KINDS[:2],
}


@dataclass(frozen=True)
class ScanTrajectory:
    kind: str
    rows: int
    cols: int
    forward: np.ndarray = field(repr=False)
    inverse: np.ndarray = field(repr=False)

    @property
    def length(self) -> int:
        return self.rows * self.cols

    def cells(self) -> list[tuple[int, int]]:
        return [(int(i) // self.cols, int(i) % self.cols) for i in self.forward]


def _row_order(h: int, w: int) -> list[tuple[int, int]]:
    out = []
    for u in range(h):
        cols = range(w) if u % 2 == 0 else range(w - 1, -1, -1)
        out.extend((u, v) for v in cols)
    return out


def _column_order(h: int, w: int) -> list[tuple[int, int]]:
    out = []
    for v in range(w):
        rows = range(h) if v % 2 == 0 else range(h - 1, -1, -1)
        out.extend((u, v) for u in rows)
    return out


def _zigzag_order(h: int, w: int) -> list[tuple[int, int]]:
    out = []
    for s in range(h + w - 1):
        u_lo, u_hi = max(0, s - (w - 1)), min(h - 1, s)
        # even bands climb (u decreasing), odd bands descend
        us = range(u_hi, u_lo - 1, -1) if s % 2 == 0 else range(u_lo, u_hi + 1)
        out.extend((u, s - u) for u in us)
    return out


def _enumerate(kind: str, h: int, w: int) -> list[tuple[int, int]]:
    if kind == "row":
        return _row_order(h, w)
    if kind == "column":
        return _column_order(h, w)
    if kind == "diag_pos":
        return _zigzag_order(h, w)
    if kind == "diag_neg":
        # mirror the columns: band index k = (w-1) - (v-u)
        return [(u, w - 1 - v) for u, v in _zigzag_order(h, w)]
    if kind == "cross_1":
        return [(u, v) for u in range(h) for v in range(w)]
    if kind == "cross_2":
        return [(u, v) for v in range(w) for u in range(h)]
    if kind == "cross_3":
        return _enumerate("cross_1", h, w)[::-1]
    if kind == "cross_4":
        return _enumerate("cross_2", h, w)[::-1]
    raise ValueError(f"unknown scan kind {kind!r}; expected one of {ALL_KINDS}")


@functools.lru_cache(maxsize=None)
def make_trajectory(kind: str, rows: int, cols: int) -> ScanTrajectory:
    """Build (and cache) the trajectory of ``kind`` over a ``rows x cols`` grid."""
    if rows < 1 or cols < 1:
        raise ValueError(f"grid must be at least 1x1, got {rows}x{cols}")
    cells = _enumerate(kind, rows, cols)
    fwd = np.array([u * cols + v for u, v in cells], dtype=np.intp)
    inv = np.empty_like(fwd)
    inv[fwd] = np.arange(fwd.size, dtype=np.intp)
    fwd.setflags(write=False)
    inv.setflags(write=False)
    return ScanTrajectory(kind, rows, cols, fwd, inv)


def trajectories(mode: str, rows: int, cols: int) -> tuple[ScanTrajectory, ...]:
    try:
        kinds = SCAN_MODES[mode]
    except KeyError:
        raise ValueError(f"unknown scan mode {mode!r}; expected one of {tuple(SCAN_MODES)}") from None
    return tuple(make_trajectory(k, rows, cols) for k in kinds)


def _check_grid(x: Tensor, t: ScanTrajectory) -> None:
    if x.ndim < 3 or x.shape[-3] != t.rows or x.shape[-2] != t.cols:
        raise ShapeError(f"grid {x.shape} does not match a {t.rows}x{t.cols} trajectory")


def scan(x, t: ScanTrajectory) -> Tensor:
    """[..., H, W_h, D] -> [..., L, D] in visit order."""
    x = as_tensor(x)
    _check_grid(x, t)
    flat = ops.reshape(x, x.shape[:-3] + (t.length, x.shape[-1]))
    return ops.permute_axis(flat, t.forward, t.inverse, axis=-2)


def merge(seq, t: ScanTrajectory) -> Tensor:
    """[..., L, D] -> [..., H, W_h, D]; exact inverse of :func:`scan`."""
    seq = as_tensor(seq)
    if seq.ndim < 2 or seq.shape[-2] != t.length:
        raise ShapeError(f"sequence {seq.shape} does not have length {t.length}")
    grid = ops.permute_axis(seq, t.inverse, t.forward, axis=-2)
    return ops.reshape(grid, seq.shape[:-2] + (t.rows, t.cols, seq.shape[-1]))


def scan_many(x, trajs: tuple[ScanTrajectory, ...]) -> Tensor:
    """Scan one grid along several trajectories: [..., H, W_h, D] -> [..., K, L, D]."""
    x = as_tensor(x)
    for t in trajs:
        _check_grid(x, t)
    n = trajs[0].length
    fwd = np.stack([t.forward for t in trajs])
    inv = np.stack([t.inverse for t in trajs])
    flat = x.data.reshape(x.shape[:-3] + (n, x.shape[-1]))
    out = np.take(flat, fwd, axis=-2)  # [..., K, L, D]
    shape = x.shape

    def backward(g):
        acc = np.take(g[..., 0, :, :], inv[0], axis=-2)
        for k in range(1, len(trajs)):
            acc = acc + np.take(g[..., k, :, :], inv[k], axis=-2)
        return (acc.reshape(shape),)

    return make_node(out, (x,), backward, "scan_many")


def merge_many(seq, trajs: tuple[ScanTrajectory, ...]) -> Tensor:
    """[..., K, L, D] -> [..., K, H, W_h, D], each sequence put back on the grid."""
    seq = as_tensor(seq)
    t0 = trajs[0]
    if seq.shape[-3] != len(trajs) or seq.shape[-2] != t0.length:
        raise ShapeError(f"sequences {seq.shape} do not match {len(trajs)} trajectories of length {t0.length}")
    lead = seq.shape[:-3]
    d = seq.shape[-1]
    grids = np.empty(seq.shape)
    for k, t in enumerate(trajs):
        grids[..., k, :, :] = np.take(seq.data[..., k, :, :], t.inverse, axis=-2)

    def backward(g):
        out = np.empty(g.shape)
        for k, t in enumerate(trajs):
            out[..., k, :, :] = np.take(g[..., k, :, :], t.forward, axis=-2)
        return (out,)

    node = make_node(grids, (seq,), backward, "merge_many")
    return ops.reshape(node, lead + (len(trajs), t0.rows, t0.cols, d))
