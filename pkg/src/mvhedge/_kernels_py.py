"""Pure NumPy versions of the compiled kernels (same signatures, same rounding)."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor

import numpy as np


def _row_chunks(m: int, nthreads: int) -> list[slice]:
    n = max(1, min(nthreads, m))
    edges = np.linspace(0, m, n + 1).astype(int)
    return [slice(a, b) for a, b in zip(edges[:-1], edges[1:]) if b > a]


def _run(fn, m: int, nthreads: int) -> None:
    chunks = _row_chunks(m, nthreads)
    if len(chunks) == 1:
        fn(chunks[0])
        return
    with ThreadPoolExecutor(len(chunks)) as ex:
        list(ex.map(fn, chunks))


def cell_sums(cells, fc, dc, y, ncell):
    y = np.asarray(y)
    nt = y.shape[1]
    out = np.zeros((ncell, nt, 3))
    for t in range(nt):
        v = np.ascontiguousarray(y[:, t])
        out[:, t, 0] = np.bincount(cells, weights=v, minlength=ncell)
        out[:, t, 1] = np.bincount(cells, weights=v * fc, minlength=ncell)
        out[:, t, 2] = np.bincount(cells, weights=v * dc, minlength=ncell)
    return out


def predict_grid(cells, fc, dc, coef, out, nthreads=1):
    def work(sl):
        c = coef[cells[sl]]
        out[sl] = (c[:, :, 0] + c[:, :, 1] * fc[sl, None]) + c[:, :, 2] * dc[sl, None]

    _run(work, out.shape[0], nthreads)


def _tie_rank(cols: np.ndarray, center) -> np.ndarray:
    # rank encodes (|c - center|, c): smaller is preferred
    dist = np.abs(cols - center)
    return dist * 2 + (cols > center)


def _masked_argmin(vals: np.ndarray, rank: np.ndarray) -> np.ndarray:
    best = vals.min(axis=1, keepdims=True)
    big = np.iinfo(np.int64).max
    return np.where(vals == best, rank, big).argmin(axis=1)


def window_argmin(p, lo, hi, center, out, nthreads=1):
    def work(sl):
        for k in range(len(lo)):
            cols = np.arange(lo[k], hi[k])
            rank = _tie_rank(cols, center[k])[None, :]
            pick = _masked_argmin(p[sl, lo[k]:hi[k]], rank)
            out[sl, k] = cols[pick]

    _run(work, p.shape[0], nthreads)


def rowwise_window_argmin(p, lo, hi, center, out, nthreads=1):
    m, ncol = p.shape
    cols = np.arange(ncol)[None, :]

    def work(sl):
        inside = (cols >= lo[sl, None]) & (cols < hi[sl, None])
        vals = np.where(inside, p[sl], np.inf)
        best = vals.min(axis=1, keepdims=True)
        rank = _tie_rank(cols, center[sl, None])
        big = np.iinfo(np.int64).max
        out[sl] = np.where(inside & (vals == best), rank, big).argmin(axis=1)

    _run(work, m, nthreads)


def gather_shift(a, choice, pos_next, pos_cur, s, lam, out, nthreads=1):
    def work(sl):
        c = choice[sl]
        picked = np.take_along_axis(a[sl], c.astype(np.intp), axis=1)
        out[sl] = picked + (lam * np.abs(pos_next[c] - pos_cur[None, :])) * s[sl, None]

    _run(work, out.shape[0], nthreads)
