"""Dense two-phase tableau simplex with Bland's anti-cycling rule.

Solves

    minimize    c @ x
    subject to  A_ub @ x <= b_ub,  A_eq @ x == b_eq,
                x[j] >= 0 for j not in ``free``; x[j] unrestricted otherwise.

Meant for the small exact reference problems built by :mod:`oracle`; the
tableau is held densely.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

PIVOT_TOL = 1e-11
FEAS_TOL = 1e-9


class LpError(RuntimeError):
    """The problem could not be solved to optimality."""


class Infeasible(LpError):
    pass


class Unbounded(LpError):
    pass


@dataclass
class LpProblem:
    c: np.ndarray
    a_ub: Optional[np.ndarray] = None
    b_ub: Optional[np.ndarray] = None
    a_eq: Optional[np.ndarray] = None
    b_eq: Optional[np.ndarray] = None
    free: Sequence[int] = ()

    @property
    def n_vars(self) -> int:
        return len(self.c)

    def check(self) -> None:
        n = self.n_vars
        for a, b, name in ((self.a_ub, self.b_ub, "ub"), (self.a_eq, self.b_eq, "eq")):
            if a is None:
                continue
            if a.ndim != 2 or a.shape[1] != n or b is None or b.shape != (a.shape[0],):
                raise ValueError(f"inconsistent {name} constraint dimensions")
            if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
                raise ValueError(f"non-finite {name} constraint data")
        if not np.all(np.isfinite(self.c)):
            raise ValueError("non-finite objective")


@dataclass
class LpResult:
    x: np.ndarray
    objective: float
    iterations: int


REFACTOR_EVERY = 40


def _pivot(tab: np.ndarray, row: int, col: int) -> None:
    tab[row] /= tab[row, col]
    column = tab[:, col].copy()
    column[row] = 0.0
    tab -= np.outer(column, tab[row])


def _refactor(tab: np.ndarray, basis: list, base: np.ndarray, cost: np.ndarray) -> None:
    """Rebuild the tableau from the original data, discarding pivot drift."""
    m = base.shape[0]
    B = base[:, basis]
    tab[:m] = np.linalg.solve(B, base)
    tab[-1, :-1] = cost
    tab[-1, -1] = 0.0
    cb = cost[basis]
    tab[-1] -= cb @ tab[:m]


def _run(tab, basis, allowed, max_iter, base, cost, twins=None) -> int:
    """Iterate on a tableau whose last row holds reduced costs (minimization).

    Entering column by Bland's rule (lowest improving index).  The leaving
    row comes from a two-pass Harris ratio test, which prefers large pivot
    elements among near-ties; remaining exact ties go to the lowest basis
    index.
    ``twins[j]`` is the mirror column of a split free variable (or -1); a
    column may not enter while its mirror is basic.
    """
    m = tab.shape[0] - 1
    for it in range(max_iter):
        if it and it % REFACTOR_EVERY == 0:
            _refactor(tab, basis, base, cost)
        costs = tab[-1, :-1]
        scale = max(1.0, float(np.max(np.abs(costs))))
        eligible = allowed.copy()
        if twins is not None:
            in_basis = np.zeros(len(eligible), dtype=bool)
            in_basis[basis] = True
            paired = twins >= 0
            eligible[paired] &= ~in_basis[twins[paired]]
        candidates = np.nonzero((costs < -PIVOT_TOL * scale) & eligible)[0]
        chosen = None
        for col in candidates:
            column = tab[:m, col]
            positive = column > PIVOT_TOL * max(1.0, float(np.max(np.abs(column))))
            if np.any(positive):
                chosen = int(col), positive
                break
            if costs[col] < -1e-7 * scale:
                raise Unbounded("objective unbounded below")
        if chosen is None:
            return it
        col, positive = chosen
        column = tab[:m, col]
        # basic values a hair below zero are rounding; shift them onto the bound
        np.maximum(tab[:m, -1], 0.0, out=tab[:m, -1])
        rhs = tab[:m, -1]
        # Harris pass 1: longest step keeping every row within FEAS_TOL
        relaxed = np.full(m, np.inf)
        relaxed[positive] = (rhs[positive] + FEAS_TOL) / column[positive]
        limit = relaxed.min()
        # pass 2: among rows blocking within that step, the largest pivot element
        ratios = np.full(m, np.inf)
        ratios[positive] = rhs[positive] / column[positive]
        ties = np.nonzero(ratios <= limit)[0]
        best = column[ties].max()
        ties = ties[column[ties] >= best * (1.0 - 1e-12)]
        row = int(min(ties, key=lambda r: basis[r]))
        _pivot(tab, row, col)
        basis[row] = col
    raise LpError(f"no convergence within {max_iter} pivots")


def solve(problem: LpProblem, max_iter: int = 200_000) -> LpResult:
    problem.check()
    n = problem.n_vars
    free = sorted(set(problem.free))
    # x = y[:n] - y[n:] on free columns
    split = np.zeros((n, len(free)))
    for k, j in enumerate(free):
        split[j, k] = -1.0

    rows, rhs, slack_sign = [], [], []
    if problem.a_ub is not None:
        for a, b in zip(problem.a_ub, problem.b_ub):
            rows.append(np.concatenate([a, a @ split]))
            rhs.append(b)
            slack_sign.append(1.0)
    if problem.a_eq is not None:
        for a, b in zip(problem.a_eq, problem.b_eq):
            rows.append(np.concatenate([a, a @ split]))
            rhs.append(b)
            slack_sign.append(0.0)
    if not rows:
        raise LpError("no constraints")
    A = np.array(rows, dtype=float)
    b = np.array(rhs, dtype=float)
    # equilibrate rows; the feasible set is unchanged
    norms = np.maximum(np.max(np.abs(A), axis=1), np.abs(b))
    norms[norms == 0] = 1.0
    A /= norms[:, None]
    b = b / norms
    m, n_struct = A.shape
    ub_rows = [i for i, s in enumerate(slack_sign) if s]
    n_slack = len(ub_rows)
    S = np.zeros((m, n_slack))
    for k, i in enumerate(ub_rows):
        S[i, k] = 1.0
    full = np.hstack([A, S])
    negative = b < 0
    full[negative] *= -1.0
    b = np.where(negative, -b, b)

    # slack columns that stayed +1 start in the basis; the rest need artificials
    basis = [-1] * m
    for k, i in enumerate(ub_rows):
        if not negative[i]:
            basis[i] = n_struct + k
    needs_art = [i for i in range(m) if basis[i] < 0]
    n_cols = n_struct + n_slack + len(needs_art)
    base = np.zeros((m, n_cols + 1))
    base[:, : n_struct + n_slack] = full
    base[:, -1] = b
    for k, i in enumerate(needs_art):
        col = n_struct + n_slack + k
        base[i, col] = 1.0
        basis[i] = col
    tab = np.zeros((m + 1, n_cols + 1))

    twins = np.full(n_cols, -1, dtype=np.int64)
    for k, j in enumerate(free):
        twins[j] = n + k
        twins[n + k] = j

    iterations = 0
    art_start = n_struct + n_slack
    if needs_art:
        cost1 = np.zeros(n_cols)
        cost1[art_start:] = 1.0
        _refactor(tab, basis, base, cost1)
        allowed = np.ones(n_cols, dtype=bool)
        iterations += _run(tab, basis, allowed, max_iter, base, cost1, twins)
        _refactor(tab, basis, base, cost1)
        if -tab[-1, -1] > 1e-9:
            raise Infeasible(f"phase one residual {-tab[-1, -1]:.3e}")
        # drive remaining artificials out of the basis where possible
        for i in range(m):
            if basis[i] >= art_start:
                row = tab[i, :art_start]
                big = np.max(np.abs(row)) if art_start else 0.0
                nz = np.nonzero(np.abs(row) > max(PIVOT_TOL, 1e-7 * big))[0]
                if len(nz):
                    pick = int(nz[np.argmax(np.abs(row[nz]))])
                    _pivot(tab, i, pick)
                    basis[i] = pick

    cost = np.zeros(n_cols)
    cost[:n_struct] = np.concatenate([problem.c, problem.c @ split])
    _refactor(tab, basis, base, cost)
    allowed = np.zeros(n_cols, dtype=bool)
    allowed[:art_start] = True
    iterations += _run(tab, basis, allowed, max_iter - iterations, base, cost, twins)
    _refactor(tab, basis, base, cost)

    y = np.zeros(n_cols)
    for i in range(m):
        y[basis[i]] = tab[i, -1]
    if np.any(y[art_start:] > 1e-9):
        raise LpError("artificial variable left positive; degenerate problem")
    x = y[:n] + split @ y[n:n_struct]
    _check_residual(problem, x)
    return LpResult(x=x, objective=float(problem.c @ x), iterations=iterations)


def _check_residual(problem: LpProblem, x: np.ndarray, tol: float = 1e-7) -> None:
    if problem.a_ub is not None and len(problem.b_ub):
        scale = np.maximum(1.0, np.abs(problem.a_ub) @ np.abs(x))
        worst = float(np.max((problem.a_ub @ x - problem.b_ub) / scale))
        if worst > tol:
            raise LpError(f"solution violates an inequality by {worst:.3e}; degenerate problem")
    if problem.a_eq is not None and len(problem.b_eq):
        scale = np.maximum(1.0, np.abs(problem.a_eq) @ np.abs(x))
        worst = float(np.max(np.abs(problem.a_eq @ x - problem.b_eq) / scale))
        if worst > tol:
            raise LpError(f"solution violates an equality by {worst:.3e}; degenerate problem")
