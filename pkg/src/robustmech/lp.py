"""Dense two-phase simplex for the small LPs used by synthesis and max-min.

The problem is always stated as a maximization::

    max c.x  s.t.  A_ub x <= b_ub,  A_eq x = b_eq,  lb <= x <= ub

Inequality right-hand sides are relaxed by tiny deterministic amounts so that
degenerate vertices split apart; pivoting uses Dantzig's rule and switches to
Bland's rule inside any remaining run of degenerate pivots, which rules out
cycling.  A dual-simplex pass then restores feasibility for the exact data,
and the basic solution is recomputed from the original rows, so the returned
point does not carry the accumulated tableau round-off.
"""
from __future__ import annotations

import io
from dataclasses import dataclass

import numpy as np
from scipy.linalg import blas

PIVOT_TOL = 1e-9
FEAS_TOL = 1e-7
DEGENERATE_STREAK = 20

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
UNBOUNDED = "unbounded"
NUMERICAL = "numerical_failure"
ITERATION_LIMIT = "iteration_limit"


@dataclass
class LPInstance:
    c: np.ndarray
    A_ub: np.ndarray | None = None
    b_ub: np.ndarray | None = None
    A_eq: np.ndarray | None = None
    b_eq: np.ndarray | None = None
    lb: np.ndarray | None = None
    ub: np.ndarray | None = None

    def __post_init__(self):
        self.c = np.asarray(self.c, dtype=float).reshape(-1)
        n = len(self.c)

        def rows(A, b, name):
            if A is None:
                return np.zeros((0, n)), np.zeros(0)
            A = np.asarray(A, dtype=float).reshape(-1, n) if np.size(A) else np.zeros((0, n))
            b = np.asarray(b, dtype=float).reshape(-1)
            if A.shape[0] != len(b):
                raise ValueError(f"{name}: {A.shape[0]} rows but {len(b)} right-hand sides")
            return A, b

        self.A_ub, self.b_ub = rows(self.A_ub, self.b_ub, "A_ub")
        self.A_eq, self.b_eq = rows(self.A_eq, self.b_eq, "A_eq")
        self.lb = np.zeros(n) if self.lb is None else np.asarray(self.lb, dtype=float).reshape(-1)
        self.ub = np.full(n, np.inf) if self.ub is None else np.asarray(self.ub, dtype=float).reshape(-1)
        if len(self.lb) != n or len(self.ub) != n:
            raise ValueError("bounds must have one entry per variable")
        for arr in (self.c, self.A_ub, self.b_ub, self.A_eq, self.b_eq):
            if not np.all(np.isfinite(arr)):
                raise ValueError("coefficients must be finite")
        if np.any(self.lb > self.ub) or np.any(np.isnan(self.lb)) or np.any(np.isnan(self.ub)):
            raise ValueError("inconsistent variable bounds")
        if np.any(self.lb == np.inf) or np.any(self.ub == -np.inf):
            raise ValueError("inconsistent variable bounds")

    @property
    def num_vars(self) -> int:
        return len(self.c)

    def violation(self, x: np.ndarray) -> float:
        v = 0.0
        if len(self.b_ub):
            v = max(v, float(np.max(self.A_ub @ x - self.b_ub, initial=0.0)))
        if len(self.b_eq):
            v = max(v, float(np.max(np.abs(self.A_eq @ x - self.b_eq))))
        v = max(v, float(np.max(self.lb - x, initial=0.0)), float(np.max(x - self.ub, initial=0.0)))
        return v


@dataclass
class LPSolution:
    status: str
    value: float = float("nan")
    x: np.ndarray | None = None
    max_violation: float = float("nan")
    iterations: int = 0

    @property
    def ok(self) -> bool:
        return self.status == OPTIMAL


class _Standard:
    """max c.y, A_ub y <= b_ub, A_eq y = b_eq, y >= 0 with x = x0 + T y."""

    def __init__(self, inst: LPInstance):
        n = inst.num_vars
        cols = []  # (original var, sign)
        x0 = np.zeros(n)
        extra_rows, extra_b = [], []
        for j in range(n):
            lo, hi = inst.lb[j], inst.ub[j]
            if np.isfinite(lo) and lo == hi:
                x0[j] = lo
            elif np.isfinite(lo):
                x0[j] = lo
                cols.append((j, 1.0))
                if np.isfinite(hi):
                    extra_rows.append(len(cols) - 1)
                    extra_b.append(hi - lo)
            elif np.isfinite(hi):
                x0[j] = hi
                cols.append((j, -1.0))
            else:
                cols.append((j, 1.0))
                cols.append((j, -1.0))
        T = np.zeros((n, len(cols)))
        for k, (j, s) in enumerate(cols):
            T[j, k] = s
        self.T, self.x0 = T, x0
        self.c = inst.c @ T
        self.offset = float(inst.c @ x0)
        A_ub = inst.A_ub @ T
        b_ub = inst.b_ub - inst.A_ub @ x0
        if extra_rows:
            E = np.zeros((len(extra_rows), len(cols)))
            E[np.arange(len(extra_rows)), extra_rows] = 1.0
            A_ub = np.vstack([A_ub, E])
            b_ub = np.concatenate([b_ub, extra_b])
        self.A_ub, self.b_ub = A_ub, b_ub
        self.A_eq = inst.A_eq @ T
        self.b_eq = inst.b_eq - inst.A_eq @ x0

    def to_x(self, y: np.ndarray) -> np.ndarray:
        return self.x0 + self.T @ y


def dump_tableau(tab: np.ndarray, basis: np.ndarray, stream=None) -> str:
    """Plain-text rendering of a tableau (objective row last)."""
    buf = io.StringIO()
    for r, row in enumerate(tab):
        name = f"x{basis[r]:<4d}" if r < len(basis) else "obj  "
        buf.write(name + " | " + " ".join(f"{v:9.4g}" for v in row) + "\n")
    text = buf.getvalue()
    if stream is not None:
        stream.write(text)
    return text


def _pivot(tab: np.ndarray, r: int, j: int) -> None:
    """Gauss-Jordan step in place; ``tab`` is Fortran-ordered float64."""
    piv = tab[r] / tab[r, j]
    col = tab[:, j].copy()
    col[r] = 0.0
    rows = np.flatnonzero(col)
    if len(rows) * 4 < len(col):
        tab[rows] -= np.outer(col[rows], piv)
    else:
        out = blas.dger(-1.0, col, piv, a=tab, overwrite_a=1)
        if out is not tab:
            tab[...] = out
    tab[r] = piv


def _run(tab, basis, n_cols, max_iter, bland_only, debug):
    """Pivot until optimal.  ``tab`` has the objective row last, stored as
    reduced costs (negative entry = improving column)."""
    m = tab.shape[0] - 1
    streak = 0
    it = 0
    if n_cols == 0:
        return OPTIMAL, it
    while True:
        obj = tab[-1, :n_cols]
        if bland_only or streak >= DEGENERATE_STREAK:
            cand = np.flatnonzero(obj < -PIVOT_TOL)
            if len(cand) == 0:
                return OPTIMAL, it
            j = int(cand[0])
        else:
            j = int(np.argmin(obj))
            if obj[j] >= -PIVOT_TOL:
                return OPTIMAL, it
        col = tab[:m, j]
        pos = col > PIVOT_TOL
        if not pos.any():
            return UNBOUNDED, it
        ratios = np.full(m, np.inf)
        ratios[pos] = tab[:m, -1][pos] / col[pos]
        best = ratios.min()
        ties = np.flatnonzero(ratios <= best + 1e-12 * max(1.0, abs(best)))
        r = int(ties[np.argmin(basis[ties])])
        if best <= 1e-12:
            streak += 1
        else:
            streak = 0
        _pivot(tab, r, j)
        basis[r] = j
        it += 1
        if debug is not None:
            debug.write(f"-- pivot {it}: column {j} enters at row {r}\n")
            dump_tableau(tab, basis, debug)
        if it >= max_iter:
            return ITERATION_LIMIT, it


def _dual_cleanup(tab, basis, n_cols, max_iter):
    """Dual simplex on the unperturbed right-hand side (column ``n_cols``).

    The perturbed optimum leaves a dual-feasible basis; this restores primal
    feasibility for the original data.  Returns a status and pivot count.
    """
    m = tab.shape[0] - 1
    it = 0
    if m == 0:
        return OPTIMAL, it
    while it < max_iter:
        rhs = tab[:m, n_cols]
        r = int(np.argmin(rhs))
        if rhs[r] >= -PIVOT_TOL * max(1.0, float(np.abs(rhs).max(initial=0.0))):
            return OPTIMAL, it
        row = tab[r, :n_cols]
        cand = np.flatnonzero(row < -PIVOT_TOL)
        if len(cand) == 0:
            return INFEASIBLE, it
        d = np.maximum(tab[-1, cand], 0.0)
        ratio = d / -row[cand]
        j = int(cand[np.argmin(ratio)])
        _pivot(tab, r, j)
        basis[r] = j
        it += 1
    return ITERATION_LIMIT, it


def solve_lp(inst: LPInstance, max_iter: int = 200_000, bland_only: bool = False,
             debug=None, perturb: float = 1e-7) -> LPSolution:
    """Two-phase simplex on a right-hand side whose inequality rows are relaxed
    by tiny deterministic amounts (so degenerate vertices split apart),
    followed by a dual-simplex cleanup on the exact data and a final
    re-solve of the basic system."""
    s = _Standard(inst)
    n = len(s.c)
    m_ub, m_eq = len(s.b_ub), len(s.b_eq)
    m = m_ub + m_eq
    A = np.zeros((m, n + m_ub))
    A[:m_ub, :n] = s.A_ub
    A[:m_ub, n:] = np.eye(m_ub)
    A[m_ub:, :n] = s.A_eq
    b = np.concatenate([s.b_ub, s.b_eq])
    xi = np.zeros(m)
    if perturb > 0 and m_ub:
        rng = np.random.default_rng(12345)
        xi[:m_ub] = perturb * (0.5 + 0.5 * rng.random(m_ub)) * (1.0 + np.abs(s.b_ub))
    bp = b + xi
    # sign-normalize rows so the perturbed rhs is >= 0
    neg = bp < 0
    A[neg] *= -1
    b = np.where(neg, -b, b)
    bp = np.where(neg, -bp, bp)
    need_art = np.ones(m, dtype=bool)
    need_art[:m_ub] = neg[:m_ub]
    art_rows = np.flatnonzero(need_art)
    n_real = n + m_ub
    n_cols = n_real + len(art_rows)
    # columns: variables, slacks, artificials, exact rhs, perturbed rhs
    tab = np.zeros((m + 1, n_cols + 2), order="F")
    tab[:m, :n_real] = A
    tab[art_rows, n_real + np.arange(len(art_rows))] = 1.0
    tab[:m, -2] = b
    tab[:m, -1] = bp
    basis = np.empty(m, dtype=int)
    basis[:m_ub] = n + np.arange(m_ub)
    basis[art_rows] = n_real + np.arange(len(art_rows))

    total_it = 0
    keep = np.ones(m, dtype=bool)
    if len(art_rows):
        # phase 1: maximize -sum(artificials)
        tab[-1, :] = -tab[art_rows].sum(axis=0)
        tab[-1, n_real:n_cols] = 0.0
        status, it = _run(tab, basis, n_cols, max_iter, bland_only, debug)
        total_it += it
        if status == ITERATION_LIMIT:
            return LPSolution(ITERATION_LIMIT, iterations=total_it)
        if -tab[-1, -1] > FEAS_TOL * max(1.0, float(np.abs(bp).max(initial=0.0))):
            return LPSolution(INFEASIBLE, iterations=total_it)
        # drive zero-level artificials out of the basis, dropping redundant rows
        for r in range(m):
            if basis[r] >= n_real:
                cand = np.flatnonzero(np.abs(tab[r, :n_real]) > PIVOT_TOL)
                if len(cand):
                    j = int(cand[np.argmax(np.abs(tab[r, cand]))])
                    _pivot(tab, r, j)
                    basis[r] = j
                else:
                    keep[r] = False
        basis = basis[keep]
        tab = np.asfortranarray(np.delete(tab[np.append(keep, True)], np.arange(n_real, n_cols), axis=1))
        n_cols = n_real
    # phase 2 objective row in reduced-cost form
    c_full = np.zeros(n_cols)
    c_full[:n] = s.c
    tab[-1, :] = 0.0
    tab[-1, :n_cols] = -c_full
    tab[-1, :] += c_full[basis] @ tab[:-1, :]
    status, it = _run(tab, basis, n_cols, max_iter, bland_only, debug)
    total_it += it
    if status != OPTIMAL:
        return LPSolution(status, iterations=total_it)
    status, it = _dual_cleanup(tab, basis, n_cols, max_iter)
    total_it += it
    if status != OPTIMAL:
        return LPSolution(status, iterations=total_it)

    rows_kept = np.flatnonzero(keep)
    y_full = np.zeros(n_cols)
    y_full[basis] = tab[:-1, n_cols]
    try:
        yb = np.linalg.solve(A[rows_kept][:, basis], b[rows_kept])
        if np.all(np.isfinite(yb)):
            y_full[:] = 0.0
            y_full[basis] = yb
    except np.linalg.LinAlgError:
        pass
    y = np.maximum(y_full[:n], 0.0)
    x = s.to_x(y)
    x = np.minimum(np.maximum(x, inst.lb), inst.ub)
    viol = inst.violation(x)
    value = float(inst.c @ x)
    scale = max(1.0, float(np.abs(inst.b_ub).max(initial=0.0)), float(np.abs(inst.b_eq).max(initial=0.0)))
    if viol > FEAS_TOL * scale:
        return LPSolution(NUMERICAL, value, x, viol, total_it)
    return LPSolution(OPTIMAL, value, x, viol, total_it)
