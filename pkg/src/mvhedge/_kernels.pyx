# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled inner loops of the regression DP.

Every routine mirrors a function of the same name in ``_kernels_py`` and
performs the floating-point operations in the same order, so both backends
return bit-identical results.
"""

from cython.parallel cimport prange, threadid
from libc.math cimport fabs

import numpy as np

cimport numpy as cnp

cnp.import_array()


def cell_sums(const cnp.intp_t[::1] cells, const double[::1] fc,
              const double[::1] dc, const double[:, :] y, Py_ssize_t ncell):
    """Per-cell sums of y, y*fc and y*dc, accumulated in path order."""
    cdef Py_ssize_t m = y.shape[0], nt = y.shape[1]
    cdef Py_ssize_t j, t, q
    cdef double v
    out_arr = np.zeros((ncell, nt, 3), dtype=np.float64)
    cdef double[:, :, ::1] out = out_arr
    for t in range(nt):
        for j in range(m):
            q = cells[j]
            v = y[j, t]
            out[q, t, 0] += v
            out[q, t, 1] += v * fc[j]
            out[q, t, 2] += v * dc[j]
    return out_arr


def predict_grid(const cnp.intp_t[::1] cells, const double[::1] fc,
                 const double[::1] dc, const double[:, :, ::1] coef,
                 double[:, ::1] out, int nthreads=1):
    cdef Py_ssize_t m = out.shape[0], nt = out.shape[1]
    cdef Py_ssize_t j, t, q
    for j in prange(m, nogil=True, num_threads=nthreads, schedule="static"):
        q = cells[j]
        for t in range(nt):
            out[j, t] = (coef[q, t, 0] + coef[q, t, 1] * fc[j]) + coef[q, t, 2] * dc[j]


cdef inline bint _better(double v, Py_ssize_t c, Py_ssize_t center,
                         double best, Py_ssize_t bc) noexcept nogil:
    cdef Py_ssize_t a, b
    if v < best:
        return True
    if v > best:
        return False
    a = c - center
    b = bc - center
    if a < 0:
        a = -a
    if b < 0:
        b = -b
    if a != b:
        return a < b
    return c < bc


def _sliding_ok(const cnp.intp_t[::1] lo, const cnp.intp_t[::1] hi,
                const cnp.intp_t[::1] center):
    cdef Py_ssize_t k
    for k in range(lo.shape[0]):
        if not (lo[k] <= center[k] < hi[k]):
            return False
        if k > 0 and (lo[k] < lo[k - 1] or hi[k] < hi[k - 1] or center[k] <= center[k - 1]):
            return False
    return True


def window_argmin(const double[:, ::1] p, const cnp.intp_t[::1] lo,
                  const cnp.intp_t[::1] hi, const cnp.intp_t[::1] center,
                  cnp.int32_t[:, ::1] out, int nthreads=1):
    """Arg-min of each row of ``p`` over column windows ``[lo[k], hi[k])``.

    Ties go to the column closest to ``center[k]``, then to the lower column.
    When the windows slide monotonically with ``k`` (the solver's case) each
    row is handled in linear time: a monotone queue over ``[lo, center]``
    keeps the rightmost minimum, one over ``(center, hi)`` the leftmost.
    """
    cdef Py_ssize_t m = p.shape[0], nk = lo.shape[0], ncol = p.shape[1]
    cdef Py_ssize_t j, k, c, bc, tid, lh, lt, rh, rt, nxt_l, nxt_r, il, ir
    cdef double best, v
    if nk == 0:
        return
    if not _sliding_ok(lo, hi, center):
        for j in prange(m, nogil=True, num_threads=nthreads, schedule="static"):
            for k in range(nk):
                bc = lo[k]
                best = p[j, bc]
                for c in range(lo[k] + 1, hi[k]):
                    v = p[j, c]
                    if _better(v, c, center[k], best, bc):
                        best = v
                        bc = c
                out[j, k] = <cnp.int32_t>bc
        return
    nthreads = max(1, nthreads)
    scratch_arr = np.empty((nthreads, 2 * ncol), dtype=np.intp)
    cdef cnp.intp_t[:, ::1] scratch = scratch_arr
    for j in prange(m, nogil=True, num_threads=nthreads, schedule="static"):
        tid = threadid()
        lh = 0
        lt = 0
        rh = ncol
        rt = ncol
        nxt_l = lo[0]
        nxt_r = center[0] + 1
        for k in range(nk):
            # left queue: values strictly increasing, rightmost of equal kept
            while nxt_l <= center[k]:
                v = p[j, nxt_l]
                while lt > lh and p[j, scratch[tid, lt - 1]] >= v:
                    lt = lt - 1
                scratch[tid, lt] = nxt_l
                lt = lt + 1
                nxt_l = nxt_l + 1
            while scratch[tid, lh] < lo[k]:
                lh = lh + 1
            # right queue: values non-decreasing, leftmost of equal kept
            if nxt_r < center[k] + 1:
                nxt_r = center[k] + 1
            while nxt_r < hi[k]:
                v = p[j, nxt_r]
                while rt > rh and p[j, scratch[tid, rt - 1]] > v:
                    rt = rt - 1
                scratch[tid, rt] = nxt_r
                rt = rt + 1
                nxt_r = nxt_r + 1
            while rt > rh and scratch[tid, rh] <= center[k]:
                rh = rh + 1
            il = scratch[tid, lh]
            bc = il
            if rt > rh:
                ir = scratch[tid, rh]
                if p[j, ir] < p[j, il] or (p[j, ir] == p[j, il] and ir - center[k] < center[k] - il):
                    bc = ir
            out[j, k] = <cnp.int32_t>bc


def rowwise_window_argmin(const double[:, ::1] p, const cnp.intp_t[::1] lo,
                          const cnp.intp_t[::1] hi, const cnp.intp_t[::1] center,
                          cnp.intp_t[::1] out, int nthreads=1):
    cdef Py_ssize_t m = p.shape[0]
    cdef Py_ssize_t j, c, bc
    cdef double best, v
    for j in prange(m, nogil=True, num_threads=nthreads, schedule="static"):
        bc = lo[j]
        best = p[j, bc]
        for c in range(lo[j] + 1, hi[j]):
            v = p[j, c]
            if _better(v, c, center[j], best, bc):
                best = v
                bc = c
        out[j] = bc


def gather_shift(const double[:, ::1] a, const cnp.int32_t[:, ::1] choice,
                 const double[::1] pos_next, const double[::1] pos_cur,
                 const double[::1] s, double lam, double[:, ::1] out,
                 int nthreads=1):
    """out[j, k] = a[j, c] + lam * |pos_next[c] - pos_cur[k]| * s[j], c = choice[j, k]."""
    cdef Py_ssize_t m = out.shape[0], nk = out.shape[1]
    cdef Py_ssize_t j, k, c
    for j in prange(m, nogil=True, num_threads=nthreads, schedule="static"):
        for k in range(nk):
            c = choice[j, k]
            out[j, k] = a[j, c] + (lam * fabs(pos_next[c] - pos_cur[k])) * s[j]
