"""Mechanisms, valuations, objectives and incentive checks on finite type spaces.

A mechanism stores a lottery over allocations and a payment vector for
every reported profile.  Allocation 0 is always the null allocation, which
every type values at 0.  Deviations are enumerated exhaustively; interim
quantities are exact sums over the conditional distribution of the others.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .dist import BOTTOM, CONSERVATION_TOL, JointDist, SpaceMismatchError, TypeSpace

IC_TOL = 1e-9
BOUND_TOL = 1e-9
NULL = "null"


@dataclass(frozen=True, eq=False)
class Valuations:
    """``table[i][k, a]`` is agent ``i``'s value for allocation ``a`` at type ``k``.

    ``projection[i][a]``, when given, is the allocation that keeps agent
    ``i``'s share of ``a`` and gives everyone else nothing.
    """

    space: TypeSpace
    allocations: tuple[str, ...]
    table: tuple[np.ndarray, ...]
    H: float
    projection: np.ndarray | None = None

    def __post_init__(self):
        allocs = tuple(self.allocations)
        object.__setattr__(self, "allocations", allocs)
        if not allocs:
            raise ValueError("need at least the null allocation")
        if self.H <= 0:
            raise ValueError("H must be positive")
        tabs = []
        for i, k in enumerate(self.space.sizes):
            t = np.array(self.table[i], dtype=float)
            if t.shape != (k, len(allocs)):
                raise ValueError(f"agent {i}: table shape {t.shape}, expected {(k, len(allocs))}")
            if np.any(t < -BOUND_TOL) or np.any(t > self.H + BOUND_TOL):
                raise ValueError(f"agent {i}: values must lie in [0, H={self.H}]")
            if np.any(t[:, 0] != 0):
                raise ValueError(f"agent {i}: the null allocation must be worth 0")
            if np.any(t[0] != 0):
                raise ValueError(f"agent {i}: the {BOTTOM} type must value everything at 0")
            t = np.clip(t, 0.0, self.H)
            t.setflags(write=False)
            tabs.append(t)
        if len(tabs) != self.space.n:
            raise ValueError("one table per agent required")
        object.__setattr__(self, "table", tuple(tabs))
        if self.projection is not None:
            proj = np.array(self.projection, dtype=int)
            if proj.shape != (self.space.n, len(allocs)) or proj.min() < 0 or proj.max() >= len(allocs):
                raise ValueError("projection must map each (agent, allocation) to an allocation")
            for i in range(self.space.n):
                if not np.array_equal(tabs[i][:, proj[i]], tabs[i]):
                    raise ValueError(f"projection for agent {i} changes that agent's values")
                for j in range(self.space.n):
                    if j != i and np.any(tabs[j][:, proj[i]] != 0):
                        raise ValueError(f"projection for agent {i} leaves agent {j} something")
            proj.setflags(write=False)
            object.__setattr__(self, "projection", proj)

    def restrict(self, keep: Sequence[Sequence[int]]) -> "Valuations":
        """Keep only the listed type indices of each agent."""
        return Valuations(self.space.restrict(keep), self.allocations,
                          tuple(t[list(ks)] for t, ks in zip(self.table, keep)), self.H, self.projection)

    @property
    def n(self) -> int:
        return self.space.n

    @property
    def num_allocations(self) -> int:
        return len(self.allocations)

    @classmethod
    def single_item(cls, space: TypeSpace, H: float | None = None) -> "Valuations":
        """Allocation ``j + 1`` gives the item to agent ``j``; types read as values."""
        n = space.n
        allocs = (NULL,) + tuple(f"agent{j}" for j in range(n))
        tables = []
        for i in range(n):
            t = np.zeros((space.sizes[i], n + 1))
            t[:, i + 1] = space.values(i)
            tables.append(t)
        H = H if H is not None else max(1e-300, max(float(t.max()) for t in tables))
        proj = np.zeros((n, n + 1), dtype=int)
        for i in range(n):
            proj[i, i + 1] = i + 1
        return cls(space, allocs, tuple(tables), H, proj)

    @classmethod
    def additive(cls, items: TypeSpace, H: float | None = None) -> "Valuations":
        """One agent whose type is a profile of item values over ``items``.

        The agent's type ``k`` is the ``k``-th item profile in lexicographic
        order (so type 0 is the all-``BOTTOM`` profile) and allocations are
        all item bundles, encoded as bitmasks.
        """
        m = items.n
        profiles = list(items.profiles())
        agent = TypeSpace(((BOTTOM,) + tuple(profiles[1:]),))
        vals = np.array([[items.value(j, p[j]) for j in range(m)] for p in profiles])
        bundles = [tuple(j for j in range(m) if mask >> j & 1) for mask in range(2 ** m)]
        allocs = tuple(NULL if not b else "{" + ",".join(str(j) for j in b) + "}" for b in bundles)
        t = np.zeros((len(profiles), len(bundles)))
        for a, b in enumerate(bundles):
            if b:
                t[:, a] = vals[:, list(b)].sum(axis=1)
        H = H if H is not None else max(1e-300, float(t.max()))
        return cls(agent, allocs, (t,), H, np.arange(len(bundles))[None, :])


def bundle_items(valuations: Valuations) -> list[tuple[int, ...]]:
    """Decode the bitmask allocations of :meth:`Valuations.additive`."""
    m = int(np.log2(valuations.num_allocations))
    return [tuple(j for j in range(m) if a >> j & 1) for a in range(valuations.num_allocations)]


@dataclass(frozen=True, eq=False)
class Mechanism:
    """``lottery[t + (a,)]`` is Pr[allocation a | report t]; ``payments[t + (i,)]`` is p_i(t)."""

    space: TypeSpace
    lottery: np.ndarray
    payments: np.ndarray
    H: float

    def __post_init__(self):
        sizes = self.space.sizes
        lot = np.array(self.lottery, dtype=float)
        pay = np.array(self.payments, dtype=float)
        if lot.shape[:-1] != sizes or lot.ndim != len(sizes) + 1:
            raise SpaceMismatchError(f"lottery shape {lot.shape} does not fit sizes {sizes}")
        if pay.shape != sizes + (self.space.n,):
            raise SpaceMismatchError(f"payment shape {pay.shape} does not fit sizes {sizes}")
        if np.any(lot < -CONSERVATION_TOL) or np.max(np.abs(lot.sum(axis=-1) - 1.0)) > CONSERVATION_TOL:
            raise ValueError("each lottery must be nonnegative and sum to 1")
        if np.any(np.abs(pay) > self.H + BOUND_TOL):
            raise ValueError(f"payments must lie in [-H, H] with H={self.H}")
        bottom = (0,) * self.space.n
        if lot[bottom][0] < 1 - CONSERVATION_TOL or np.any(pay[bottom] != 0):
            raise ValueError("the all-bottom profile must give the null allocation and no payments")
        lot = np.maximum(lot, 0.0)
        lot.setflags(write=False)
        pay.setflags(write=False)
        object.__setattr__(self, "lottery", lot)
        object.__setattr__(self, "payments", pay)

    @property
    def num_allocations(self) -> int:
        return self.lottery.shape[-1]

    @classmethod
    def null(cls, space: TypeSpace, num_allocations: int, H: float) -> "Mechanism":
        lot = np.zeros(space.sizes + (num_allocations,))
        lot[..., 0] = 1.0
        return cls(space, lot, np.zeros(space.sizes + (space.n,)), H)

    @classmethod
    def from_rule(cls, space: TypeSpace, num_allocations: int, H: float,
                  rule: Callable[[tuple[int, ...]], tuple[Sequence[float], Sequence[float]]]) -> "Mechanism":
        """Build from ``rule(profile) -> (lottery, payments)``."""
        lot = np.zeros(space.sizes + (num_allocations,))
        pay = np.zeros(space.sizes + (space.n,))
        for t in space.profiles():
            x, p = rule(t)
            lot[t] = x
            pay[t] = p
        return cls(space, lot, pay, H)

    @classmethod
    def clean(cls, space: TypeSpace, lottery: np.ndarray, payments: np.ndarray, H: float) -> "Mechanism":
        """Accept solver output: clip tiny negatives, renormalize lotteries,
        clamp payments into [-H, H]."""
        lot = np.maximum(np.asarray(lottery, dtype=float), 0.0)
        lot = lot / lot.sum(axis=-1, keepdims=True)
        pay = np.clip(np.asarray(payments, dtype=float), -H, H)
        pay = np.where(np.abs(pay) < 1e-13, 0.0, pay)
        return cls(space, lot, pay, H)


# -- objectives ---------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class Objective:
    """O(t, outcome) = lottery(t) . table[t] + payment_weight * sum_i p_i(t), valued in [lo, hi]."""

    kind: str
    table: np.ndarray
    payment_weight: float
    lo: float
    hi: float

    def __post_init__(self):
        if self.kind not in ("revenue", "welfare", "custom"):
            raise ValueError(f"unknown objective kind {self.kind!r}")
        if not self.lo < self.hi:
            raise ValueError("objective bounds need lo < hi")
        t = np.array(self.table, dtype=float)
        if self.kind == "custom" and self.payment_weight == 0:
            if np.any(t < self.lo - BOUND_TOL) or np.any(t > self.hi + BOUND_TOL):
                raise ValueError(f"custom objective values must lie in [{self.lo}, {self.hi}]")
        t.setflags(write=False)
        object.__setattr__(self, "table", t)

    @property
    def V(self) -> float:
        return self.hi - self.lo

    @classmethod
    def revenue(cls, valuations: Valuations) -> "Objective":
        n, H = valuations.n, valuations.H
        table = np.zeros(valuations.space.sizes + (valuations.num_allocations,))
        return cls("revenue", table, 1.0, -n * H, n * H)

    @classmethod
    def welfare(cls, valuations: Valuations) -> "Objective":
        return cls("welfare", welfare_table(valuations), 0.0, 0.0, valuations.n * valuations.H)

    @classmethod
    def custom(cls, table: np.ndarray, lo: float, hi: float, payment_weight: float = 0.0) -> "Objective":
        return cls("custom", table, payment_weight, lo, hi)

    def per_profile(self, M: Mechanism) -> np.ndarray:
        vals = np.einsum("...a,...a->...", M.lottery, self.table)
        if self.payment_weight:
            vals = vals + self.payment_weight * M.payments.sum(axis=-1)
        return vals


def welfare_table(valuations: Valuations) -> np.ndarray:
    sizes = valuations.space.sizes
    out = np.zeros(sizes + (valuations.num_allocations,))
    for i, tab in enumerate(valuations.table):
        shape = [1] * len(sizes) + [valuations.num_allocations]
        shape[i] = sizes[i]
        out = out + tab.reshape(shape)
    return out


def objective_eval(M: Mechanism, V: Valuations, D: JointDist, O: Objective) -> float:
    """Expected objective over D and the allocation lotteries."""
    if not (M.space.sizes == D.space.sizes == V.space.sizes):
        raise SpaceMismatchError("mechanism, valuations and prior must share a type space")
    vals = O.per_profile(M)
    bad = (vals < O.lo - BOUND_TOL) | (vals > O.hi + BOUND_TOL)
    if np.any(bad & (D.mass > 0)):
        raise ValueError(f"objective leaves [{O.lo}, {O.hi}] on a supported profile")
    return float(np.sum(D.mass * vals))


# -- utilities ----------------------------------------------------------------

def utility(M: Mechanism, V: Valuations, i: int, t_true: int, t_report: int,
            t_others: Sequence[int]) -> float:
    """Quasi-linear utility of agent ``i`` of type ``t_true`` reporting ``t_report``."""
    prof = list(t_others)
    prof.insert(i, t_report)
    prof = tuple(prof)
    return float(M.lottery[prof] @ V.table[i][t_true] - M.payments[prof + (i,)])


def agent_utilities(M: Mechanism, V: Valuations, i: int) -> np.ndarray:
    """``U[s, r, o]``: utility of agent ``i`` with true type ``s`` reporting ``r``
    while the others' flat profile is ``o``."""
    k = M.space.sizes[i]
    lot = np.moveaxis(M.lottery, i, 0).reshape(k, -1, M.num_allocations)
    pay = np.moveaxis(M.payments[..., i], i, 0).reshape(k, -1)
    W = np.einsum("sa,roa->sro", V.table[i], lot)
    return W - pay[None]


@dataclass
class CheckReport:
    ok: bool
    worst: float
    violations: list = field(default_factory=list)


def expost_ir_check(M: Mechanism, V: Valuations, tol: float = IC_TOL) -> CheckReport:
    """Truthful utility at least ``-tol`` everywhere, and a bottom report never pays."""
    worst = np.inf
    viol = []
    for i in range(M.space.n):
        U = agent_utilities(M, V, i)
        truth = np.einsum("sso->so", U)
        worst = min(worst, float(truth.min()))
        for s, o in zip(*np.nonzero(truth < -tol)):
            viol.append(("ir", i, int(s), int(o), float(truth[s, o])))
        bottom_pay = np.take(M.payments[..., i], 0, axis=i)
        for o in np.flatnonzero(np.abs(bottom_pay.reshape(-1)) > tol):
            viol.append(("bottom_pays", i, 0, int(o), float(bottom_pay.reshape(-1)[o])))
    return CheckReport(not viol, worst, viol)


def utility_bounds_check(M: Mechanism, V: Valuations, tol: float = BOUND_TOL) -> CheckReport:
    """Every deviation gain u(truth) - u(report) lies in [-H, 3H]."""
    H = V.H
    lo, hi = np.inf, -np.inf
    viol = []
    for i in range(M.space.n):
        U = agent_utilities(M, V, i)
        truth = np.einsum("sso->so", U)
        diff = truth[:, None, :] - U
        lo, hi = min(lo, float(diff.min())), max(hi, float(diff.max()))
        for s, r, o in zip(*np.nonzero((diff < -H - tol) | (diff > 3 * H + tol))):
            viol.append((i, int(s), int(r), int(o), float(diff[s, r, o])))
    return CheckReport(not viol, min(lo + H, 3 * H - hi), viol)


def dsic_regret(M: Mechanism, V: Valuations) -> float:
    """Largest ex-post gain from misreporting, over all agents and profiles."""
    worst = 0.0
    for i in range(M.space.n):
        U = agent_utilities(M, V, i)
        truth = np.einsum("sso->so", U)
        worst = max(worst, float((U - truth[:, None, :]).max()))
    return worst


# -- interim incentives -------------------------------------------------------

@dataclass
class ICReport:
    """Interim regrets ``regrets[i][s, r]`` (gain of type s from reporting r;
    NaN for zero-probability s) and the type masses used for (eps, q)."""

    regrets: list[np.ndarray]
    type_mass: list[np.ndarray]
    dsic: float | None = None

    def worst_by_type(self, i: int) -> np.ndarray:
        r = self.regrets[i]
        w = np.where(np.isnan(r), -np.inf, r).max(axis=1)
        return np.where(self.type_mass[i] > 0, np.maximum(w, 0.0), 0.0)

    @property
    def eps_star(self) -> float:
        return max(float(self.worst_by_type(i).max()) for i in range(len(self.regrets)))

    def q_at(self, eps: float) -> float:
        """Smallest q such that the mechanism is (eps, q)-BIC."""
        return min(1.0, max(float(self.type_mass[i][self.worst_by_type(i) > eps].sum())
                            for i in range(len(self.regrets))))

    def eps_at(self, q: float) -> float:
        """Smallest eps such that the mechanism is (eps, q)-BIC."""
        cands = sorted({0.0} | {float(v) for i in range(len(self.regrets)) for v in self.worst_by_type(i)})
        for e in cands:
            if self.q_at(e) <= q + CONSERVATION_TOL:
                return e
        return cands[-1]

    def frontier(self) -> list[tuple[float, float]]:
        """Breakpoints ``(eps, q(eps))``; q is a right-continuous step function."""
        cands = sorted({0.0} | {float(v) for i in range(len(self.regrets)) for v in self.worst_by_type(i)})
        return [(e, self.q_at(e)) for e in cands]


def _zero_small(r: np.ndarray) -> np.ndarray:
    return np.where(np.abs(r) <= IC_TOL, 0.0, r)


def interim_regrets(U: np.ndarray, others: np.ndarray) -> np.ndarray:
    """``others[s, o]`` is the distribution of the others' profile seen by type s."""
    interim = np.einsum("so,sro->sr", others, U)
    return interim - np.diag(interim)[:, None]


def bic_report(M: Mechanism, V: Valuations, D: JointDist, with_dsic: bool = False) -> ICReport:
    if not (M.space.sizes == D.space.sizes == V.space.sizes):
        raise SpaceMismatchError("mechanism, valuations and prior must share a type space")
    regrets, masses = [], []
    for i in range(M.space.n):
        k = D.space.sizes[i]
        rows = np.moveaxis(D.mass, i, 0).reshape(k, -1)
        tm = rows.sum(axis=1)
        cond = np.divide(rows, tm[:, None], out=np.zeros_like(rows), where=tm[:, None] > 0)
        reg = _zero_small(interim_regrets(agent_utilities(M, V, i), cond))
        reg[tm <= 0] = np.nan
        regrets.append(reg)
        masses.append(tm)
    return ICReport(regrets, masses, dsic_regret(M, V) if with_dsic else None)


def product_interim_regrets(M: Mechanism, V: Valuations, marginals: Sequence[np.ndarray], i: int) -> np.ndarray:
    """Interim regrets of agent ``i`` when the others are independent with the
    given marginals; defined for every type, including zero-probability ones."""
    others = np.ones(())
    for j, m in enumerate(marginals):
        if j != i:
            others = np.multiply.outer(others, np.asarray(m, dtype=float))
    k = M.space.sizes[i]
    U = agent_utilities(M, V, i)
    return interim_regrets(U, np.broadcast_to(others.reshape(1, -1), (k, others.size)))


def product_interim_values(M: Mechanism, V: Valuations, marginals: Sequence[np.ndarray], i: int
                           ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """For independent others: ``util[s, z]`` interim utility of type s reporting z,
    ``value[s, z]`` its interim value and ``pay[z]`` the interim payment."""
    others = np.ones(())
    for j, m in enumerate(marginals):
        if j != i:
            others = np.multiply.outer(others, np.asarray(m, dtype=float))
    w = others.reshape(-1)
    k = M.space.sizes[i]
    lot = np.moveaxis(M.lottery, i, 0).reshape(k, -1, M.num_allocations)
    pay = np.moveaxis(M.payments[..., i], i, 0).reshape(k, -1)
    exp_lot = np.einsum("o,zoa->za", w, lot)
    value = V.table[i] @ exp_lot.T
    epay = pay @ w
    return value - epay[None, :], value, epay


# -- text formats -------------------------------------------------------------

def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def dumps_mechanism(M: Mechanism, header: Sequence[str] = ()) -> str:
    lines = [f"# {h}" for h in header]
    lines.append("sizes " + " ".join(str(k) for k in M.space.sizes) + f" allocations {M.num_allocations} H {_fmt(M.H)}")
    for t in M.space.profiles():
        lines.append(" ".join(map(str, t)) + " : " + " ".join(_fmt(v) for v in M.lottery[t])
                     + " ; " + " ".join(_fmt(v) for v in M.payments[t]))
    return "\n".join(lines) + "\n"


def loads_mechanism(text: str, space: TypeSpace | None = None) -> Mechanism:
    head = None
    recs = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        try:
            if head is None:
                tok = line.split()
                ia = tok.index("allocations")
                sizes = tuple(int(k) for k in tok[1:ia])
                head = (sizes, int(tok[ia + 1]), float(tok[tok.index("H") + 1]))
                continue
            prof, rest = line.split(":")
            lot, pay = rest.split(";")
            recs[tuple(int(k) for k in prof.split())] = ([float(v) for v in lot.split()],
                                                         [float(v) for v in pay.split()])
        except (ValueError, IndexError) as exc:
            raise ValueError(f"line {lineno}: malformed record {raw!r}") from exc
    if head is None:
        raise ValueError("missing header")
    sizes, na, H = head
    space = space or TypeSpace.from_sizes(sizes)
    missing = [t for t in space.profiles() if t not in recs]
    if missing:
        raise ValueError(f"no record for profile {missing[0]}")
    return Mechanism.from_rule(space, na, H, lambda t: recs[t])


def dumps_valuations(V: Valuations) -> str:
    lines = [f"allocations {len(V.allocations)} H {_fmt(V.H)}"]
    for i, tab in enumerate(V.table):
        for k, a in itertools.product(range(tab.shape[0]), range(tab.shape[1])):
            lines.append(f"{i} {k} {a} {_fmt(tab[k, a])}")
    return "\n".join(lines) + "\n"


def loads_valuations(text: str, space: TypeSpace, allocations: Sequence[str] | None = None) -> Valuations:
    na = H = None
    tabs = None
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        tok = line.split()
        try:
            if na is None:
                na, H = int(tok[1]), float(tok[3])
                tabs = [np.zeros((k, na)) for k in space.sizes]
                continue
            i, k, a, v = int(tok[0]), int(tok[1]), int(tok[2]), float(tok[3])
            tabs[i][k, a] = v
        except (ValueError, IndexError) as exc:
            raise ValueError(f"line {lineno}: malformed record {raw!r}") from exc
    if na is None:
        raise ValueError("missing header")
    allocations = tuple(allocations) if allocations else (NULL,) + tuple(f"a{j}" for j in range(1, na))
    return Valuations(space, allocations, tuple(tabs), H)
