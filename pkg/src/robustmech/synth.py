"""Optimal mechanisms by linear programming, item/bundle pricing, posted prices
and the single-threshold prophet policy."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Sequence

import numpy as np

from .dist import JointDist, SpaceMismatchError, TypeSpace
from .lp import LPInstance, LPSolution, solve_lp
from .mechanism import Mechanism, Objective, Valuations, bundle_items, objective_eval

MAX_LP_VARS = 20_000


class LPFailure(RuntimeError):
    def __init__(self, solution: LPSolution):
        super().__init__(f"LP solve ended with status {solution.status}")
        self.solution = solution


@dataclass
class SynthesizedMechanism:
    mechanism: Mechanism
    value: float
    certificate: Any


class MechanismLP:
    """Variable layout and constraint rows shared by the synthesis LPs.

    Variables are ``x[t, a]`` (lottery entries) followed by ``p[t, i]``
    (payments), with profiles in flat lexicographic order.
    """

    def __init__(self, V: Valuations, nonneg_payments: bool = True, extra_vars: int = 0):
        self.V = V
        self.space = V.space
        self.sizes = V.space.sizes
        self.n = V.space.n
        self.A = V.num_allocations
        self.P = V.space.num_profiles
        self.nx = self.P * self.A
        self.nvars = self.nx + self.P * self.n + extra_vars
        if self.nvars > MAX_LP_VARS:
            raise ValueError(f"LP would need {self.nvars} variables; the limit is {MAX_LP_VARS}")
        self.lb = np.zeros(self.nvars)
        self.ub = np.full(self.nvars, np.inf)
        pay = self.nx + np.arange(self.P * self.n)
        self.lb[pay] = 0.0 if nonneg_payments else -V.H
        self.nonneg = nonneg_payments
        prof = np.array(list(V.space.profiles())).reshape(self.P, self.n)
        self.profiles = prof
        for i in range(self.n):
            rows = np.flatnonzero(prof[:, i] == 0)
            self.lb[self.pidx(rows, i)] = 0.0
            self.ub[self.pidx(rows, i)] = 0.0
        # all-bottom profile is profile 0: null allocation, no payments
        self.lb[self.xidx(0, np.arange(self.A))] = 0.0
        self.ub[self.xidx(0, np.arange(self.A))] = 0.0
        self.lb[self.xidx(0, 0)] = self.ub[self.xidx(0, 0)] = 1.0
        self.ub_rows: list[np.ndarray] = []
        self.eq_rows: list[np.ndarray] = []
        self.eq_rhs: list[float] = []
        self.ub_rhs: list[float] = []
        self.strides = np.array([int(np.prod(self.sizes[i + 1:])) for i in range(self.n)])

    def xidx(self, t, a):
        return np.asarray(t) * self.A + np.asarray(a)

    def pidx(self, t, i):
        return self.nx + np.asarray(t) * self.n + i

    def flat(self, i: int, s: int, o: int) -> int:
        """Flat profile with agent ``i`` at type ``s`` and others at flat index ``o``."""
        others = [k for j, k in enumerate(self.sizes) if j != i]
        rest = np.unravel_index(o, others) if others else ()
        prof = list(int(v) for v in rest)
        prof.insert(i, s)
        return int(np.ravel_multi_index(prof, self.sizes))

    def _flat_table(self, i: int) -> np.ndarray:
        k = self.sizes[i]
        R = self.P // k
        return np.array([[self.flat(i, s, o) for o in range(R)] for s in range(k)])

    def utility_row(self, i: int, s: int, t_flat: int) -> np.ndarray:
        """Coefficients of agent i's utility (true type s) at flat profile t."""
        row = np.zeros(self.nvars)
        row[self.xidx(t_flat, np.arange(self.A))] = self.V.table[i][s]
        row[self.pidx(t_flat, i)] = -1.0
        return row

    def add_lottery_rows(self):
        for t in range(1, self.P):
            row = np.zeros(self.nvars)
            row[self.xidx(t, np.arange(self.A))] = 1.0
            self.eq_rows.append(row)
            self.eq_rhs.append(1.0)

    def add_ir_rows(self):
        for i in range(self.n):
            for t in np.flatnonzero(self.profiles[:, i] != 0):
                self.ub_rows.append(-self.utility_row(i, self.profiles[t, i], t))
                self.ub_rhs.append(0.0)

    def add_dsic_rows(self, agents: Sequence[int] | None = None):
        for i in agents if agents is not None else range(self.n):
            tab = self._flat_table(i)
            k, R = tab.shape
            for s in range(k):
                if s == 0 and self.nonneg:
                    continue
                for r in range(k):
                    if r == s:
                        continue
                    for o in range(R):
                        # u(s <- r) - u(s <- s) <= 0
                        self.ub_rows.append(self.utility_row(i, s, tab[r, o]) - self.utility_row(i, s, tab[s, o]))
                        self.ub_rhs.append(0.0)

    def add_bic_rows(self, D: JointDist, agents: Sequence[int] | None = None):
        for i in agents if agents is not None else range(self.n):
            tab = self._flat_table(i)
            k, R = tab.shape
            rows = np.moveaxis(D.mass, i, 0).reshape(k, -1)
            for s in range(k):
                tm = rows[s].sum()
                if tm <= 0 or (s == 0 and self.nonneg):
                    continue
                cond = rows[s] / tm
                for r in range(k):
                    if r == s:
                        continue
                    row = np.zeros(self.nvars)
                    for o in np.flatnonzero(cond > 0):
                        row += cond[o] * (self.utility_row(i, s, tab[r, o]) - self.utility_row(i, s, tab[s, o]))
                    self.ub_rows.append(row)
                    self.ub_rhs.append(0.0)

    def objective_coeffs(self, weights: np.ndarray, O: Objective) -> np.ndarray:
        """Linear objective ``sum_t weights[t] * O(t, M(t))`` in the LP variables."""
        c = np.zeros(self.nvars)
        w = np.asarray(weights, dtype=float).reshape(self.P)
        c[: self.nx] = (w[:, None] * O.table.reshape(self.P, self.A)).reshape(-1)
        if O.payment_weight:
            c[self.nx: self.nx + self.P * self.n] = np.repeat(w * O.payment_weight, self.n)
        return c

    def instance(self, c: np.ndarray) -> LPInstance:
        A_ub = np.array(self.ub_rows) if self.ub_rows else None
        A_eq = np.array(self.eq_rows) if self.eq_rows else None
        return LPInstance(c, A_ub, np.array(self.ub_rhs) if self.ub_rows else None,
                          A_eq, np.array(self.eq_rhs) if self.eq_rows else None, self.lb, self.ub)

    def mechanism(self, x: np.ndarray) -> Mechanism:
        lot = x[: self.nx].reshape(self.sizes + (self.A,))
        pay = x[self.nx: self.nx + self.P * self.n].reshape(self.sizes + (self.n,))
        return Mechanism.clean(self.space, lot, pay, self.V.H)


def optimal_mechanism(D: JointDist, V: Valuations, ic: str, O: Objective,
                      nonneg_payments: bool = True, ic_agents: Sequence[int] | None = None
                      ) -> SynthesizedMechanism:
    """Objective-maximizing ex-post IR mechanism under DSIC or BIC (w.r.t. D).

    ``ic_agents`` restricts which agents' incentive constraints are imposed
    (all agents by default).
    """
    if D.space.sizes != V.space.sizes:
        raise SpaceMismatchError("prior and valuations must share a type space")
    if ic not in ("DSIC", "BIC"):
        raise ValueError("ic must be 'DSIC' or 'BIC'")
    lp = MechanismLP(V, nonneg_payments)
    lp.add_lottery_rows()
    lp.add_ir_rows()
    if ic == "DSIC":
        lp.add_dsic_rows(ic_agents)
    else:
        lp.add_bic_rows(D, ic_agents)
    sol = solve_lp(lp.instance(lp.objective_coeffs(D.mass, O)))
    if not sol.ok:
        raise LPFailure(sol)
    M = lp.mechanism(sol.x)
    return SynthesizedMechanism(M, objective_eval(M, V, D, O), sol)


# -- simple mechanisms for a single additive agent ----------------------------

def _best_price(values: np.ndarray, probs: np.ndarray) -> tuple[float, float]:
    """Best revenue ``p * Pr[value >= p]`` over positive support points (ties: lowest price)."""
    best, best_p = 0.0, None
    for p in np.unique(values[(probs > 0) & (values > 0)]):
        rev = p * probs[values >= p].sum()
        if rev > best + 1e-15:
            best, best_p = float(rev), float(p)
    return best, best_p


def srev(D: JointDist) -> tuple[float, list[float | None]]:
    """Selling items separately; ``D`` is over item values (one axis per item)."""
    total, prices = 0.0, []
    for j in range(D.space.n):
        rev, p = _best_price(D.space.values(j), D.marginal_array(j))
        total += rev
        prices.append(p)
    return total, prices


def bundle_values(D: JointDist) -> np.ndarray:
    out = np.zeros(D.space.sizes)
    for j in range(D.space.n):
        shape = [1] * D.space.n
        shape[j] = D.space.sizes[j]
        out = out + D.space.values(j).reshape(shape)
    return out


def brev(D: JointDist) -> tuple[float, float | None]:
    """Selling the grand bundle at its best price."""
    return _best_price(bundle_values(D).reshape(-1), D.flat)


def item_pricing_mechanism(items: TypeSpace, V: Valuations, prices: Sequence[float | None]) -> Mechanism:
    """Agent buys every item whose value is at least its price (None = not offered)."""
    bundles = bundle_items(V)
    mask = {b: a for a, b in enumerate(bundles)}
    def rule(t):
        prof = V.space.types[0][t[0]]
        if t[0] == 0:
            vals = [0.0] * items.n
        else:
            vals = [items.value(j, prof[j]) for j in range(items.n)]
        bought = tuple(j for j in range(items.n) if prices[j] is not None and vals[j] > 0 and vals[j] >= prices[j])
        lot = np.zeros(V.num_allocations)
        lot[mask[bought]] = 1.0
        return lot, [sum(prices[j] for j in bought)]
    return Mechanism.from_rule(V.space, V.num_allocations, V.H, rule)


def bundle_pricing_mechanism(items: TypeSpace, V: Valuations, price: float | None) -> Mechanism:
    grand = V.num_allocations - 1
    def rule(t):
        total = float(V.table[0][t[0], grand])
        lot = np.zeros(V.num_allocations)
        if price is not None and t[0] != 0 and total > 0 and total >= price:
            lot[grand] = 1.0
            return lot, [price]
        lot[0] = 1.0
        return lot, [0.0]
    return Mechanism.from_rule(V.space, V.num_allocations, V.H, rule)


# -- posted prices and prophets -----------------------------------------------

def posted_prices(V: Valuations, prices: Sequence[float], order: Sequence[int] | None = None) -> Mechanism:
    """Single item offered to agents in ``order``; the first whose value is at
    least its price takes it and pays the price.  ``BOTTOM`` never accepts."""
    space = V.space
    order = list(range(space.n)) if order is None else list(order)
    if sorted(order) != list(range(space.n)):
        raise ValueError("order must be a permutation of the agents")
    def rule(t):
        lot = np.zeros(V.num_allocations)
        pay = np.zeros(space.n)
        for i in order:
            if t[i] != 0 and V.table[i][t[i], i + 1] >= prices[i]:
                lot[i + 1] = 1.0
                pay[i] = prices[i]
                return lot, pay
        lot[0] = 1.0
        return lot, pay
    return Mechanism.from_rule(space, V.num_allocations, V.H, rule)


def prophet_benchmark(D: JointDist) -> float:
    """E[max_i t_i] with types read as values."""
    best = np.zeros(D.space.sizes)
    for i in range(D.space.n):
        shape = [1] * D.space.n
        shape[i] = D.space.sizes[i]
        best = np.maximum(best, D.space.values(i).reshape(shape))
    return float(np.sum(D.mass * best))


def prophet_threshold(space: TypeSpace, marginals: Sequence[Sequence[float]]) -> float:
    """Half the expected maximum under independent draws from ``marginals``."""
    return prophet_benchmark(JointDist.product(space, marginals)) / 2.0


def threshold_policy(V: Valuations, tau: float, order: Sequence[int] | None = None) -> Mechanism:
    return posted_prices(V, [tau] * V.n, order)
