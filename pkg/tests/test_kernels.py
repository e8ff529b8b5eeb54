import numpy as np
import pytest
from hypothesis import given, strategies as st

from mvhedge import kernels

BACKENDS = ["python"]
try:
    kernels.get("cell_sums", "cython")
    BACKENDS.append("cython")
except ImportError:
    pass

needs_ext = pytest.mark.skipif("cython" not in BACKENDS, reason="compiled extension not built")


def windows(rng, ncol, nk=None):
    s, b = int(rng.integers(0, ncol + 1)), int(rng.integers(0, ncol + 1))
    q0 = int(rng.integers(0, ncol))
    nk = nk or int(rng.integers(1, ncol - q0 + 1))
    prev = np.arange(q0, q0 + nk)
    lo = np.maximum(prev - s, 0).astype(np.intp)
    hi = (np.minimum(prev + b, ncol - 1) + 1).astype(np.intp)
    return lo, hi, prev.astype(np.intp)


def brute_argmin(row, lo, hi, center):
    cols = range(lo, hi)
    return min(cols, key=lambda c: (row[c], abs(c - center), c))


def test_backend_reported():
    assert kernels.BACKEND in ("python", "cython")


@pytest.mark.parametrize("backend", BACKENDS)
@given(seed=st.integers(0, 2**32 - 1), ncol=st.integers(1, 25))
def test_window_argmin_matches_definition(backend, seed, ncol):
    rng = np.random.default_rng(seed)
    m = 20
    p = rng.integers(0, 3, (m, ncol)).astype(float)  # plenty of ties
    lo, hi, c = windows(rng, ncol)
    out = np.empty((m, len(lo)), np.int32)
    kernels.get("window_argmin", backend)(p, lo, hi, c, out, 2)
    for j in range(m):
        for k in range(len(lo)):
            assert out[j, k] == brute_argmin(p[j], lo[k], hi[k], c[k])


@pytest.mark.parametrize("backend", BACKENDS)
def test_window_argmin_unordered_windows(backend):
    rng = np.random.default_rng(1)
    p = rng.integers(0, 3, (30, 12)).astype(float)
    lo, hi, c = windows(rng, 12, nk=8)
    perm = rng.permutation(len(lo))
    lo, hi, c = lo[perm].copy(), hi[perm].copy(), c[perm].copy()
    out = np.empty((30, len(lo)), np.int32)
    kernels.get("window_argmin", backend)(p, lo, hi, c, out, 1)
    for j in range(30):
        for k in range(len(lo)):
            assert out[j, k] == brute_argmin(p[j], lo[k], hi[k], c[k])


@pytest.mark.parametrize("backend", BACKENDS)
def test_rowwise_argmin(backend):
    rng = np.random.default_rng(2)
    m, ncol = 200, 15
    p = rng.integers(0, 4, (m, ncol)).astype(float)
    center = rng.integers(0, ncol, m).astype(np.intp)
    lo = np.maximum(center - rng.integers(0, 5, m), 0).astype(np.intp)
    hi = np.minimum(center + rng.integers(1, 6, m), ncol).astype(np.intp)
    out = np.empty(m, np.intp)
    kernels.get("rowwise_window_argmin", backend)(p, lo, hi, center, out, 3)
    for j in range(m):
        assert out[j] == brute_argmin(p[j], lo[j], hi[j], center[j])


def random_kernel_inputs(seed, m=500, ncell=7, nt=5):
    rng = np.random.default_rng(seed)
    cells = rng.integers(0, ncell, m).astype(np.intp)
    fc, dc = rng.normal(size=m), rng.normal(size=m)
    y = rng.normal(size=(m, nt))
    coef = rng.normal(size=(ncell, nt, 3))
    return cells, fc, dc, y, coef


@needs_ext
@pytest.mark.parametrize("seed", range(5))
def test_backends_bit_identical(seed):
    cells, fc, dc, y, coef = random_kernel_inputs(seed)
    py, cy = (lambda n: kernels.get(n, "python")), (lambda n: kernels.get(n, "cython"))
    np.testing.assert_array_equal(py("cell_sums")(cells, fc, dc, y, 7), cy("cell_sums")(cells, fc, dc, y, 7))
    a, b = np.empty((500, 5)), np.empty((500, 5))
    py("predict_grid")(cells, fc, dc, coef, a, 1)
    cy("predict_grid")(cells, fc, dc, coef, b, 3)
    np.testing.assert_array_equal(a, b)
    rng = np.random.default_rng(seed)
    choice = rng.integers(0, 5, (500, 4)).astype(np.int32)
    pn, pc = np.arange(5) * 100.0, np.arange(4) * 100.0
    s = rng.uniform(20, 40, 500)
    a, b = np.empty((500, 4)), np.empty((500, 4))
    py("gather_shift")(y, choice, pn, pc, s, 0.01, a, 2)
    cy("gather_shift")(y, choice, pn, pc, s, 0.01, b, 2)
    np.testing.assert_array_equal(a, b)


@pytest.mark.parametrize("backend", BACKENDS)
def test_thread_count_invariance(backend):
    cells, fc, dc, y, coef = random_kernel_inputs(9, m=3000)
    outs = []
    for t in (1, 2, 4):
        o = np.empty((3000, 5))
        kernels.get("predict_grid", backend)(cells, fc, dc, coef, o, t)
        outs.append(o)
    np.testing.assert_array_equal(outs[0], outs[1])
    np.testing.assert_array_equal(outs[0], outs[2])


def test_cell_sums_definition():
    cells, fc, dc, y, _ = random_kernel_inputs(3)
    got = kernels.cell_sums(cells, fc, dc, y, 7)
    for q in range(7):
        m = cells == q
        np.testing.assert_allclose(got[q, :, 0], y[m].sum(0), rtol=1e-12)
        np.testing.assert_allclose(got[q, :, 1], (y[m] * fc[m, None]).sum(0), rtol=1e-12, atol=1e-12)


def test_default_threads(monkeypatch):
    monkeypatch.setenv("MVHEDGE_THREADS", "3")
    assert kernels.default_threads() == 3
    monkeypatch.setenv("MVHEDGE_THREADS", "bogus")
    assert kernels.default_threads() == 1
