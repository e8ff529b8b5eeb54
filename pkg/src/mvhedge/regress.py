"""Conditional expectations by local affine regression, plus an exact tree operator.

The state (F, D) at a date is split into ``n_f`` equal-count strata on F and
each stratum into ``n_d`` equal-count sub-strata on D. Inside every cell the
target is regressed on (1, F, D). Regressors are centred on the cell means
before the normal equations are formed; the model exposes the equivalent raw
coefficients ``a + b_f F + b_d D``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import kernels

COND_MAX = 1e12


@dataclass(frozen=True)
class CellPartition:
    n_f: int
    n_d: int
    f_breaks: np.ndarray  # (n_f - 1,), +inf where a stratum is unused
    d_breaks: np.ndarray  # (n_f, n_d - 1)
    degenerate: bool = False
    labels: np.ndarray | None = field(default=None, repr=False, compare=False)

    @property
    def n_cells(self) -> int:
        return self.n_f * self.n_d

    def locate(self, f, d) -> np.ndarray:
        """Cell index of each state; states outside the training range clamp
        to the outermost cells."""
        f = np.atleast_1d(np.asarray(f, dtype=float))
        d = np.atleast_1d(np.asarray(d, dtype=float))
        strat = np.searchsorted(self.f_breaks, f, side="right")
        out = np.empty(f.shape, dtype=np.intp)
        for s in np.unique(strat):
            m = strat == s
            out[m] = s * self.n_d + np.searchsorted(self.d_breaks[s], d[m], side="right")
        return out


def _split_points(sorted_vals: np.ndarray, groups: list[np.ndarray]) -> np.ndarray:
    pts = []
    for g in groups[:-1]:
        lo, hi = sorted_vals[g[-1]], sorted_vals[g[-1] + 1]
        mid = 0.5 * (lo + hi)
        # midpoint may round onto the lower neighbour for adjacent floats
        pts.append(hi if mid <= lo else mid)
    return np.array(pts, dtype=float)


def fit_partition(states: np.ndarray, n_f: int, n_d: int) -> CellPartition:
    """Equal-count nested partition of ``states`` (M x 2 array of (F, D)).

    Ties are broken by sample index. A coordinate that is constant (over all
    samples for F, over a stratum for D) is not split and the partition is
    flagged ``degenerate``.
    """
    states = np.asarray(states, dtype=float)
    m = states.shape[0]
    if n_f < 1 or n_d < 1:
        raise ValueError("cell counts must be positive")
    if m < n_f * n_d:
        raise ValueError(f"{m} samples cannot fill {n_f * n_d} cells")
    f, d = states[:, 0], states[:, 1]
    labels = np.empty(m, dtype=np.intp)
    degenerate = False

    order = np.argsort(f, kind="stable")
    if f[order[0]] == f[order[-1]] and n_f > 1:
        degenerate = True
        f_groups = [order]
        f_breaks = np.full(n_f - 1, np.inf)
    else:
        f_groups = np.array_split(np.arange(m), n_f)
        f_breaks = _split_points(f[order], f_groups)
        f_groups = [order[g] for g in f_groups]

    d_breaks = np.full((n_f, max(n_d - 1, 0)), np.inf)
    for s, idx in enumerate(f_groups):
        idx = np.sort(idx)
        dord = idx[np.argsort(d[idx], kind="stable")]
        if n_d > 1 and d[dord[0]] == d[dord[-1]]:
            degenerate = True
            labels[idx] = s * n_d
            continue
        parts = np.array_split(np.arange(len(dord)), n_d)
        if n_d > 1:
            d_breaks[s] = _split_points(d[dord], parts)
        for b, p in enumerate(parts):
            labels[dord[p]] = s * n_d + b
    return CellPartition(n_f, n_d, f_breaks, d_breaks, degenerate, labels)


class CellBasis:
    """Per-cell centred Gram matrices for one set of states, factored once.

    ``solve(rhs)`` turns per-cell moment sums into coefficients; the same
    factorisation serves every target regressed at this date.
    """

    def __init__(self, cells: np.ndarray, f: np.ndarray, d: np.ndarray, n_cells: int):
        self.cells = np.ascontiguousarray(cells, dtype=np.intp)
        self.n_cells = n_cells
        cnt = np.bincount(self.cells, minlength=n_cells).astype(float)
        safe = np.where(cnt > 0, cnt, 1.0)
        centers = np.column_stack([
            np.bincount(self.cells, weights=f, minlength=n_cells) / safe,
            np.bincount(self.cells, weights=d, minlength=n_cells) / safe,
        ])
        self.centers = centers
        self.fc = np.ascontiguousarray(f - centers[self.cells, 0])
        self.dc = np.ascontiguousarray(d - centers[self.cells, 1])
        ones = np.ones((len(f), 1))
        sums = kernels.cell_sums(self.cells, self.fc, self.dc, ones, n_cells)[:, 0, :]
        fsq = kernels.cell_sums(self.cells, self.fc, self.dc, self.fc[:, None], n_cells)[:, 0, :]
        dsq = kernels.cell_sums(self.cells, self.fc, self.dc, self.dc[:, None], n_cells)[:, 0, :]
        gram = np.empty((n_cells, 3, 3))
        gram[:, 0, :] = sums
        gram[:, 1, :] = fsq
        gram[:, 2, :] = dsq
        self.gram = 0.5 * (gram + gram.transpose(0, 2, 1))
        f2 = np.bincount(self.cells, weights=f * f, minlength=n_cells)
        d2 = np.bincount(self.cells, weights=d * d, minlength=n_cells)
        self.solver = np.zeros((n_cells, 3, 3))
        self.active = np.zeros((n_cells, 3), dtype=bool)
        for q in range(n_cells):
            if cnt[q] == 0:
                continue
            act = [0]
            if self.gram[q, 1, 1] > 1e-24 * f2[q]:
                act.append(1)
            if self.gram[q, 2, 2] > 1e-24 * d2[q]:
                act.append(2)
            while len(act) > 1 and _scaled_cond(self.gram[q][np.ix_(act, act)]) > COND_MAX:
                act.pop()
            g = self.gram[q][np.ix_(act, act)]
            chol = np.linalg.cholesky(g)
            inv = np.linalg.solve(chol.T, np.linalg.solve(chol, np.eye(len(act))))
            self.solver[q][np.ix_(act, act)] = inv
            self.active[q, act] = True

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        """(n_cells, K, 3) moment sums -> (n_cells, K, 3) centred coefficients."""
        return np.einsum("qab,qkb->qka", self.solver, rhs)

    def fit(self, y: np.ndarray) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        if y.ndim == 1:
            y = y[:, None]
        return self.solve(kernels.cell_sums(self.cells, self.fc, self.dc, y, self.n_cells))


def _scaled_cond(g: np.ndarray) -> float:
    s = np.sqrt(np.diag(g))
    c = g / np.outer(s, s)
    w = np.linalg.eigvalsh(c)
    return math.inf if w[0] <= 0 else float(w[-1] / w[0])


@dataclass(frozen=True)
class AffineModel:
    """Piecewise-affine fit of K targets: per cell, ``coef[q, k]`` applies to
    the regressors centred on ``centers[q]``."""

    partition: CellPartition
    centers: np.ndarray  # (n_cells, 2)
    coef: np.ndarray  # (n_cells, K, 3)

    @property
    def coefficients(self) -> np.ndarray:
        """Raw (a, b_f, b_d) per cell and target."""
        c = self.coef.copy()
        c[:, :, 0] -= c[:, :, 1] * self.centers[:, None, 0] + c[:, :, 2] * self.centers[:, None, 1]
        return c

    def predict_many(self, f, d) -> np.ndarray:
        f = np.atleast_1d(np.asarray(f, dtype=float))
        d = np.atleast_1d(np.asarray(d, dtype=float))
        cells = self.partition.locate(f, d)
        return predict_cells(cells, f, d, self.centers, self.coef)


def cell_bounds(cells, f, d, n_cells: int) -> np.ndarray:
    """Per-cell (f_min, f_max, d_min, d_max) of the training states; empty cells are unbounded."""
    out = np.tile(np.array([np.inf, -np.inf, np.inf, -np.inf]), (n_cells, 1))
    order = np.argsort(cells, kind="stable")
    sc = cells[order]
    starts = np.flatnonzero(np.r_[True, sc[1:] != sc[:-1]])
    q = sc[starts]
    fo, do = f[order], d[order]
    out[q, 0] = np.minimum.reduceat(fo, starts)
    out[q, 1] = np.maximum.reduceat(fo, starts)
    out[q, 2] = np.minimum.reduceat(do, starts)
    out[q, 3] = np.maximum.reduceat(do, starts)
    empty = np.isinf(out[:, 0])
    out[empty] = [-np.inf, np.inf, -np.inf, np.inf]
    return out


def predict_cells(cells, f, d, centers, coef, threads: int = 1) -> np.ndarray:
    """Evaluate centred per-cell coefficients at each state: (M, K)."""
    cells = np.ascontiguousarray(cells, dtype=np.intp)
    fc = np.ascontiguousarray(f - centers[cells, 0])
    dc = np.ascontiguousarray(d - centers[cells, 1])
    out = np.empty((len(cells), coef.shape[1]))
    kernels.predict_grid(cells, fc, dc, np.ascontiguousarray(coef), out, threads)
    return out


def fit_affine(partition: CellPartition, states: np.ndarray, targets: np.ndarray) -> AffineModel:
    """Per-cell least squares of ``targets`` (M or M x K) on (1, F, D).

    ``states`` must be the array ``partition`` was fitted on. Cells whose
    regressors are constant or collinear fall back to fewer regressors.
    """
    if partition.labels is None:
        raise ValueError("partition carries no training labels")
    states = np.asarray(states, dtype=float)
    basis = CellBasis(partition.labels, states[:, 0], states[:, 1], partition.n_cells)
    return AffineModel(partition, basis.centers, basis.fit(targets))


def predict(model: AffineModel, state) -> float | np.ndarray:
    """Value of the fitted model at a single (F, D) state (one value per target)."""
    out = model.predict_many([state[0]], [state[1]])[0]
    return float(out[0]) if out.shape[0] == 1 else out


# --- exact finite trees -------------------------------------------------------


@dataclass
class TreeScenario:
    """Finite scenario tree. Node 0 is the root; ``prob`` is the probability
    of a node given its parent."""

    parent: np.ndarray
    date: np.ndarray
    f: np.ndarray
    d: np.ndarray
    prob: np.ndarray
    children: list[list[int]] = field(init=False, repr=False)

    def __post_init__(self):
        self.parent = np.asarray(self.parent, dtype=int)
        self.date = np.asarray(self.date, dtype=int)
        self.f = np.asarray(self.f, dtype=float)
        self.d = np.asarray(self.d, dtype=float)
        self.prob = np.asarray(self.prob, dtype=float)
        n = len(self.parent)
        if self.parent[0] != -1 or self.prob[0] != 1.0 or self.date[0] != 0:
            raise ValueError("node 0 must be a root at date 0 with probability 1")
        self.children = [[] for _ in range(n)]
        for v in range(1, n):
            p = self.parent[v]
            if not 0 <= p < v or self.date[v] != self.date[p] + 1:
                raise ValueError(f"node {v} has an invalid parent")
            self.children[p].append(v)
        last = self.date.max()
        for v in range(n):
            kids = self.children[v]
            if kids:
                if not math.isclose(self.prob[kids].sum(), 1.0, abs_tol=1e-12):
                    raise ValueError(f"children of node {v} do not sum to 1")
            elif self.date[v] != last:
                raise ValueError(f"leaf {v} ends before the final date")
        self.n_dates = int(last) + 1
        self.leaves = [v for v in range(n) if not self.children[v]]
        self._leaf_pos = {v: i for i, v in enumerate(self.leaves)}
        # absolute probability and ancestor at each date for every leaf
        self.leaf_prob = np.array([self.path_prob(v) for v in self.leaves])
        self.ancestor = np.empty((len(self.leaves), self.n_dates), dtype=int)
        for i, v in enumerate(self.leaves):
            u = v
            while u >= 0:
                self.ancestor[i, self.date[u]] = u
                u = self.parent[u]

    def path_prob(self, v: int) -> float:
        p = 1.0
        while v >= 0:
            p *= self.prob[v]
            v = self.parent[v]
        return p

    def nodes_at(self, i: int) -> list[int]:
        return [v for v in range(len(self.parent)) if self.date[v] == i]

    def descendants(self, node: int) -> np.ndarray:
        """Leaf positions below ``node``."""
        if not 0 <= node < len(self.parent):
            raise KeyError(f"unknown node {node}")
        return np.flatnonzero(self.ancestor[:, self.date[node]] == node)

    def to_json(self) -> dict:
        return {"parent": self.parent.tolist(), "date": self.date.tolist(), "F": self.f.tolist(),
                "D": self.d.tolist(), "prob": self.prob.tolist()}

    @classmethod
    def from_json(cls, obj: dict) -> "TreeScenario":
        return cls(obj["parent"], obj["date"], obj["F"], obj["D"], obj["prob"])

    @classmethod
    def load(cls, path: str | Path) -> "TreeScenario":
        return cls.from_json(json.loads(Path(path).read_text()))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=1))


def tree_condexp(tree: TreeScenario, node: int, leaf_values) -> float:
    """E[value | node], values given per leaf (in ``tree.leaves`` order)."""
    idx = tree.descendants(node)
    v = np.asarray(leaf_values, dtype=float)
    w = tree.leaf_prob[idx]
    return float(np.dot(w, v[idx]) / w.sum())


def random_tree(rng: np.random.Generator, n_dates: int = 3, max_branches: int = 4,
                f0: float = 40.0, d0: float = 9.0, f_scale: float = 4.0, d_scale: float = 1.0) -> TreeScenario:
    """Random tree on which F is a martingale (children average to the parent)."""
    parent, date, fs, ds, prob = [-1], [0], [f0], [d0], [1.0]
    frontier = [0]
    for i in range(1, n_dates):
        nxt = []
        for v in frontier:
            nb = int(rng.integers(2, max_branches + 1))
            p = rng.dirichlet(np.ones(nb))
            dev = rng.normal(0.0, f_scale, nb)
            dev -= p @ dev
            fk = np.maximum(fs[v] + dev, 1e-3 * f0)
            fk += fs[v] - p @ fk
            for b in range(nb):
                parent.append(v)
                date.append(i)
                fs.append(float(fk[b]))
                ds.append(float(ds[v] + rng.normal(0.0, d_scale)))
                prob.append(float(p[b]))
                nxt.append(len(parent) - 1)
        frontier = nxt
    prob = np.array(prob)
    # exact normalisation of each sibling group
    for v in range(len(parent)):
        kids = [u for u in range(len(parent)) if parent[u] == v]
        if kids:
            prob[kids[-1]] = 1.0 - prob[kids[:-1]].sum()
    return TreeScenario(parent, date, fs, ds, prob)
