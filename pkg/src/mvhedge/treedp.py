"""The hedging recursions on a finite scenario tree with exact conditional
expectations, and a brute-force search over every adapted grid policy.

Prices on the tree are ``hours * F`` per node and the claim pays
``hours * D * F`` at the leaves.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from .hedgedp import HedgeConstraints, PositionGrid, build_position_grids
from .regress import TreeScenario
from .regress import random_tree as regress_random_tree


@dataclass
class TreeSolution:
    objective: float
    nu0: float
    x: float
    positions: dict[int, dict[int, float]] = field(default_factory=dict)  # node -> {stock k: position}


def _admissible(grid: PositionGrid, i: int, k: int, cons: HedgeConstraints) -> np.ndarray:
    lo, hi, _ = grid.windows(i, np.array([k]), cons.sell_steps, cons.buy_steps)
    return np.arange(lo[0], hi[0])


def _pick(values: np.ndarray, cols: np.ndarray, center: int) -> int:
    """Arg-min column with the solver's tie rule."""
    keys = sorted(zip(values.tolist(), np.abs(cols - center).tolist(), (cols > center).tolist(), cols.tolist()))
    return keys[0][3]


def tree_backward(tree: TreeScenario, constraints: HedgeConstraints, x: float, algo: str = "cashflow",
                  optimize_x: bool = False, hours: float = 1.0) -> TreeSolution:
    """Backward recursion of ``algo`` with exact conditional expectations.

    ``cashflow`` tracks per-leaf residuals; ``valuefn`` and ``localrisk`` carry
    node values and accumulated risk.
    """
    n = tree.n_dates - 1
    if n < 1:
        raise ValueError("a tree needs at least two dates")
    grid = build_position_grids(constraints, n)
    s = hours * tree.f
    lam = constraints.lam
    anc = tree.ancestor
    leaves = np.array(tree.leaves)
    payoff = hours * tree.d[leaves] * tree.f[leaves]
    sol = TreeSolution(0.0, 0.0, x)

    if algo == "cashflow":
        r = np.repeat(payoff[:, None], len(grid.levels[n - 1]), axis=1)
        for i in range(n - 1, 0, -1):
            pos = grid.positions(i)
            z = r - pos[None, :] * (s[anc[:, i + 1]] - s[anc[:, i]])[:, None]
            prev = grid.levels[i - 1]
            new = np.empty((len(leaves), len(prev)))
            for v in tree.nodes_at(i):
                idx = tree.descendants(v)
                w = tree.leaf_prob[idx] / tree.leaf_prob[idx].sum()
                mean = w @ z[idx]
                var = w @ (z[idx] - mean) ** 2
                sol.positions[v] = {}
                for kc, k in enumerate(prev):
                    cols = _admissible(grid, i, int(k), constraints)
                    c = _pick(var[cols], cols, int(k - grid.levels[i][0]))
                    new[idx, kc] = z[idx, c] + lam * abs(pos[c] - grid.xi * k) * s[v]
                    sol.positions[v][int(k)] = float(pos[c])
            r = new
        values, risk = r, np.zeros_like(r)
        weights = tree.leaf_prob
        step = s[anc[:, 1]] - s[0]
    elif algo in ("valuefn", "localrisk"):
        val = {v: np.full(len(grid.levels[n - 1]), payoff[j], dtype=float) for j, v in enumerate(leaves)}
        rsk = {v: np.zeros(len(grid.levels[n - 1])) for v in leaves}
        for i in range(n - 1, 0, -1):
            pos = grid.positions(i)
            prev = grid.levels[i - 1]
            nval, nrsk = {}, {}
            for v in tree.nodes_at(i):
                kids = tree.children[v]
                p = tree.prob[kids]
                y = np.array([val[u] - pos * (s[u] - s[v]) for u in kids])
                mean = p @ y
                cvar = p @ (y - mean) ** 2
                rhat = p @ np.array([rsk[u] for u in kids])
                crit = cvar + rhat if algo == "valuefn" else cvar
                nval[v] = np.empty(len(prev))
                nrsk[v] = np.empty(len(prev))
                sol.positions[v] = {}
                for kc, k in enumerate(prev):
                    cols = _admissible(grid, i, int(k), constraints)
                    c = _pick(crit[cols], cols, int(k - grid.levels[i][0]))
                    nval[v][kc] = mean[c] + lam * abs(pos[c] - grid.xi * k) * s[v]
                    nrsk[v][kc] = cvar[c] + rhat[c]
                    sol.positions[v][int(k)] = float(pos[c])
            val, rsk = nval, nrsk
        kids = tree.children[0]
        values = np.array([val[u] for u in kids])
        risk = np.array([rsk[u] for u in kids])
        weights = tree.prob[kids]
        step = s[kids] - s[0]
    else:
        raise ValueError(f"unknown algorithm {algo!r}")

    pos0 = grid.positions(0)
    cols = _admissible(grid, 0, 0, constraints)
    best = None
    for c in cols:
        y = values[:, c] - pos0[c] * step + lam * abs(pos0[c]) * s[0]
        xc = float(weights @ y) if optimize_x else x
        obj = float(weights @ (y - xc) ** 2 + weights @ risk[:, c])
        key = (obj, abs(c - (0 - grid.levels[0][0])), c > -grid.levels[0][0])
        if best is None or key < best[0]:
            best = (key, c, xc, obj)
    sol.objective, sol.nu0, sol.x = best[3], float(pos0[best[1]]), best[2]
    sol.positions[0] = {0: sol.nu0}
    return sol


def tree_exhaustive(tree: TreeScenario, constraints: HedgeConstraints, x: float, optimize_x: bool = False,
                    hours: float = 1.0, max_policies: int = 2_000_000) -> tuple[float, dict[int, float]]:
    """Minimum of the quadratic objective over every adapted grid policy.

    Returns the minimum and one minimising node -> position map.
    """
    n = tree.n_dates - 1
    grid = build_position_grids(constraints, n)
    c = constraints
    dec = [v for v in range(len(tree.parent)) if tree.date[v] < n]
    options = [grid.positions(tree.date[v]) for v in dec]
    count = int(np.prod([len(o) for o in options], dtype=float))
    if count > max_policies:
        raise ValueError(f"{count} policies exceed the enumeration limit")
    choice = np.array(list(itertools.product(*options)), dtype=float).reshape(-1, len(dec))
    col = {v: j for j, v in enumerate(dec)}

    ok = np.ones(len(choice), bool)
    for v in dec:
        prev = choice[:, col[tree.parent[v]]] if v != 0 else 0.0
        move = choice[:, col[v]] - prev
        ok &= (move >= -c.sell_steps * c.xi - 1e-9) & (move <= c.buy_steps * c.xi + 1e-9)
    choice = choice[ok]

    s = hours * tree.f
    anc = tree.ancestor
    leaves = tree.leaves
    res = np.tile(hours * tree.d[leaves] * tree.f[leaves], (len(choice), 1))
    for i in range(n - 1, -1, -1):
        nu = choice[:, [col[v] for v in anc[:, i]]]
        prev = choice[:, [col[v] for v in anc[:, i - 1]]] if i > 0 else np.zeros_like(nu)
        res = (res - nu * (s[anc[:, i + 1]] - s[anc[:, i]])) + (c.lam * np.abs(nu - prev)) * s[anc[:, i]]
    w = tree.leaf_prob
    if optimize_x:
        res = res - (res @ w)[:, None]
    else:
        res = res - x
    obj = (res * res) @ w
    b = int(np.argmin(obj))
    return float(obj[b]), {v: float(choice[b, col[v]]) for v in dec}


def tree_policy_objective(tree: TreeScenario, constraints: HedgeConstraints, sol: TreeSolution,
                          hours: float = 1.0) -> float:
    """Exact objective of the policy stored in ``sol`` (replayed along every leaf path)."""
    n = tree.n_dates - 1
    s = hours * tree.f
    lam = constraints.lam
    total = 0.0
    for j, leaf in enumerate(tree.leaves):
        path = tree.ancestor[j]
        r = hours * tree.d[leaf] * tree.f[leaf]
        nu_prev, held = 0.0, []
        for i in range(n):
            v = path[i]
            nu = sol.positions[v][int(round(nu_prev / constraints.xi))] if i > 0 else sol.nu0
            held.append((nu, nu_prev, v, path[i + 1]))
            nu_prev = nu
        for nu, prev, v, u in reversed(held):
            r = (r - nu * (s[u] - s[v])) + (lam * abs(nu - prev)) * s[v]
        total += tree.leaf_prob[j] * (r - sol.x) ** 2
    return total


def check_oracle(tree: TreeScenario, constraints: HedgeConstraints, x: float, rtol: float = 1e-12,
                 optimize_x: bool = False) -> dict:
    """Compare every recursion with the exhaustive minimum on one tree."""
    best, _ = tree_exhaustive(tree, constraints, x, optimize_x)
    out = {"exhaustive": best}
    for algo in ("cashflow", "valuefn"):
        out[algo] = tree_backward(tree, constraints, x, algo, optimize_x).objective
    scale = max(abs(best), 1e-300)
    out["ok"] = all(abs(out[a] - best) <= rtol * scale for a in ("cashflow", "valuefn"))
    return out


def random_case(rng: np.random.Generator, lam: float = 0.0, n_dates: int = 3, max_branches: int = 4,
                max_points: int = 7):
    """Random tree, constraints with at most ``max_points`` grid positions, and
    initial capital near the claim's mean."""
    tree = regress_random_tree(rng, n_dates=n_dates, max_branches=max_branches)
    xi = float(rng.choice([1.0, 2.0]))
    npts = int(rng.integers(2, max_points + 1))
    lo = float(rng.integers(-(npts - 1), 1)) * xi  # keeps 0 on the grid
    cons = HedgeConstraints(lam=lam, xi=xi, pos_min=lo, pos_max=lo + (npts - 1) * xi,
                            m_bar=float(rng.integers(1, npts)) * xi, l_bar=float(rng.integers(1, npts)) * xi)
    mean = float(tree.leaf_prob @ (tree.d[tree.leaves] * tree.f[tree.leaves]))
    return tree, cons, mean * (1.0 + 0.05 * rng.standard_normal())
