"""Exact transportation LP over ``{C >= 0 : C 1 = row, C^T 1 = col}``.

The adaptation step uses unit row marginals and column marginals ``n/o``.
Multiplying every marginal by ``o`` makes them integers (row supply ``o``,
column demand ``n``), which the network simplex solves exactly; the plan
is divided by ``o`` on return.  Other rational marginals are scaled by
their common denominator the same way.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache

import numpy as np

from . import _backend
from .errors import NumericalError


@dataclass(frozen=True)
class Marginals:
    row: np.ndarray
    col: np.ndarray

    def __post_init__(self):
        row = np.asarray(self.row, dtype=np.float64)
        col = np.asarray(self.col, dtype=np.float64)
        if np.any(row <= 0) or np.any(col <= 0):
            raise ValueError("marginals must be strictly positive")
        if not np.isclose(row.sum(), col.sum(), rtol=1e-12, atol=1e-12):
            raise ValueError(f"unbalanced marginals: {row.sum()} vs {col.sum()}")
        object.__setattr__(self, "row", row)
        object.__setattr__(self, "col", col)

    @classmethod
    def correspondence(cls, n_rows, n_cols):
        """Unit row sums and ``n_rows / n_cols`` column sums."""
        return cls(np.ones(n_rows), np.full(n_cols, n_rows / n_cols))

    @property
    def shape(self):
        return self.row.size, self.col.size

    def integer_scaled(self):
        """Integer (supply, demand, divisor) equivalent to these marginals.

        Correspondence marginals scale to supply ``o`` and demand ``n``.
        Otherwise every entry must be a rational with denominator at most
        ``1e6``; both sides are multiplied by the common denominator.
        """
        n, o = self.shape
        if np.all(self.row == 1.0) and np.allclose(self.col, n / o, rtol=1e-15, atol=0):
            return np.full(n, o, dtype=np.int64), np.full(o, n, dtype=np.int64), o
        fracs = [Fraction(float(v)).limit_denominator(10 ** 6) for v in (*self.row, *self.col)]
        if any(abs(float(f) - v) > 4e-16 * max(1.0, abs(v))
               for f, v in zip(fracs, (*self.row, *self.col))):
            raise ValueError("marginals must be rationals with denominators <= 1e6")
        div = math.lcm(*(f.denominator for f in fracs))
        ints = np.array([f.numerator * (div // f.denominator) for f in fracs], dtype=np.int64)
        if ints[:n].sum() != ints[n:].sum():
            raise ValueError("marginals do not balance exactly")
        return ints[:n], ints[n:], div


@dataclass(frozen=True)
class TransportPlan:
    values: np.ndarray
    objective: float
    basis: np.ndarray = None
    iterations: int = 0

    @property
    def support_size(self):
        return int(np.count_nonzero(self.values))


def _check_cost(cost, m):
    cost = np.asarray(cost, dtype=np.float64)
    if cost.shape != m.shape:
        raise ValueError(f"cost shape {cost.shape} does not match marginals {m.shape}")
    if not np.all(np.isfinite(cost)):
        r, c = np.argwhere(~np.isfinite(cost))[0]
        raise NumericalError(f"non-finite cost entry at ({r}, {c})")
    return cost


def solve_transportation(cost, m: Marginals, max_iter=1_000_000) -> TransportPlan:
    """Optimal vertex of the transportation polytope for ``cost``."""
    cost = _check_cost(cost, m)
    supply, demand, div = m.integer_scaled()
    flow, basis, iters = _backend.network_simplex(cost, supply, demand, max_iter)
    if iters < 0:
        raise NumericalError(f"network simplex hit the pivot cap ({max_iter})")
    plan = flow / div
    return TransportPlan(plan, float(np.sum(cost * plan)), basis, iters)


def reduced_costs(cost, basis):
    """Reduced costs of ``cost`` relative to a spanning-tree ``basis``.

    Basic cells come out exactly zero; all entries ``>= 0`` (up to rounding)
    certifies optimality of the basis.
    """
    cost = np.asarray(cost, dtype=np.float64)
    n, m = cost.shape
    cells = np.argwhere(basis)
    # solve u_i + v_j = c_ij on the tree with u_0 = 0
    mat = np.zeros((n + m, n + m))
    rhs = np.zeros(n + m)
    for r, (i, j) in enumerate(cells):
        mat[r, i] = 1.0
        mat[r, n + j] = 1.0
        rhs[r] = cost[i, j]
    mat[-1, 0] = 1.0
    pot = np.linalg.solve(mat, rhs)
    red = cost - pot[:n, None] - pot[None, n:]
    red[basis] = 0.0
    return red


MAX_BRUTE_FORCE_CELLS = 20


@lru_cache(maxsize=32)
def _spanning_trees(n, m):
    """All spanning trees of the complete bipartite graph K_{n,m}.

    Returned as an ``(T, n+m-1)`` array of flat cell indices.  A set of
    ``n+m-1`` cells is a tree iff its reduced incidence matrix is
    nonsingular.
    """
    k = n + m - 1
    combos = np.array(list(itertools.combinations(range(n * m), k)), dtype=np.intp)
    keep = []
    for chunk in np.array_split(combos, max(1, len(combos) // 20000)):
        inc = _incidence(chunk, n, m)
        det = np.linalg.det(inc)
        keep.append(chunk[np.abs(det) > 0.5])
    out = np.concatenate(keep)
    out.setflags(write=False)
    return out


def _incidence(trees, n, m):
    # rows: constraints for rows 0..n-1 and columns 0..m-2 (last column dropped)
    t, k = trees.shape
    inc = np.zeros((t, n + m - 1, k))
    ii, jj = np.divmod(trees, m)
    edge = np.broadcast_to(np.arange(k), trees.shape)
    tix = np.broadcast_to(np.arange(t)[:, None], trees.shape)
    inc[tix, ii, edge] = 1.0
    cm = jj < m - 1
    inc[tix[cm], n + jj[cm], edge[cm]] = 1.0
    return inc


def brute_force_transportation(cost, m: Marginals) -> TransportPlan:
    """Exact optimum by enumerating every basic solution.

    Each spanning tree of the bipartite row/column graph determines a
    unique flow; the feasible (nonnegative) ones are the polytope vertices.
    For test use on tiny instances only.
    """
    cost = _check_cost(cost, m)
    n, o = m.shape
    if n * o > MAX_BRUTE_FORCE_CELLS:
        raise ValueError(f"brute force limited to {MAX_BRUTE_FORCE_CELLS} cells, got {n * o}")
    trees = _spanning_trees(n, o)
    rhs = np.concatenate([m.row, m.col[:-1]])
    best_val, best_plan = np.inf, None
    for chunk in np.array_split(trees, max(1, len(trees) // 20000)):
        rhs_b = np.broadcast_to(rhs, (len(chunk), rhs.size))[..., None]
        flows = np.linalg.solve(_incidence(chunk, n, o), rhs_b)[..., 0]
        ok = np.all(flows >= -1e-12, axis=1)
        if not ok.any():
            continue
        vals = np.sum(cost.ravel()[chunk[ok]] * flows[ok], axis=1)
        k = int(np.argmin(vals))
        if vals[k] < best_val:
            best_val = float(vals[k])
            plan = np.zeros(n * o)
            plan[chunk[ok][k]] = np.clip(flows[ok][k], 0.0, None)
            best_plan = plan.reshape(n, o)
    return TransportPlan(best_plan, float(np.sum(cost * best_plan)))
