"""Mechanism and distribution transformations: extending a mechanism from a
subset of types to the full space (dominant-strategy and Bayesian
versions), the (eps, q)-BIC clean-up, and marginal transport by moving mass."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .dist import CONSERVATION_TOL, JointDist, NotProductError, TypeSpace
from .mechanism import (IC_TOL, Mechanism, Valuations, bic_report, dsic_regret,
                        expost_ir_check, product_interim_regrets, product_interim_values)

TIE_TOL = 1e-12


class PreconditionError(ValueError):
    """An input does not satisfy the hypothesis a transformation relies on."""


@dataclass(frozen=True)
class TypeRestriction:
    """Per-agent kept type indices; the bottom type (index 0) is always kept."""

    plus: tuple[tuple[int, ...], ...]

    def __post_init__(self):
        plus = tuple(tuple(sorted(set(int(k) for k in ks))) for ks in self.plus)
        for i, ks in enumerate(plus):
            if not ks or ks[0] != 0:
                raise ValueError(f"agent {i}: the bottom type (index 0) must be kept")
        object.__setattr__(self, "plus", plus)

    @classmethod
    def full(cls, space: TypeSpace) -> "TypeRestriction":
        return cls(tuple(tuple(range(k)) for k in space.sizes))

    def minus(self, space: TypeSpace) -> tuple[tuple[int, ...], ...]:
        return tuple(tuple(k for k in range(space.sizes[i]) if k not in set(ks))
                     for i, ks in enumerate(self.plus))

    def contains(self, i: int, k: int) -> bool:
        return k in self.plus[i]

    def beta(self, D: JointDist) -> float:
        """Largest probability, over agents, of a type outside the kept set."""
        return max(1.0 - float(D.marginal_array(i)[list(ks)].sum()) for i, ks in enumerate(self.plus))

    def dumps(self) -> str:
        return "".join(f"{i}: " + " ".join(map(str, ks)) + "\n" for i, ks in enumerate(self.plus))

    @classmethod
    def loads(cls, text: str) -> "TypeRestriction":
        rows = {}
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            try:
                agent, rest = line.split(":")
                rows[int(agent)] = tuple(int(k) for k in rest.split())
            except ValueError as exc:
                raise ValueError(f"line {lineno}: malformed record {raw!r}") from exc
        if sorted(rows) != list(range(len(rows))):
            raise ValueError("agents must be numbered 0..n-1")
        return cls(tuple(rows[i] for i in range(len(rows))))


def _argmax_lowest(values: np.ndarray) -> int:
    return int(np.flatnonzero(values >= values.max() - TIE_TOL)[0])


def dsic_extend(M_plus: Mechanism, V: Valuations, R: TypeRestriction) -> Mechanism:
    """Extend a DSIC, ex-post IR mechanism on the kept types to all of ``V.space``.

    A profile with one agent outside the kept set gives that agent its
    favourite kept-type outcome (others get nothing); two or more outside
    agents get the null outcome.
    """
    space = V.space
    V_plus = V.restrict(R.plus)
    if M_plus.space.sizes != V_plus.space.sizes:
        raise ValueError("mechanism does not live on the restricted space")
    if dsic_regret(M_plus, V_plus) > IC_TOL or not expost_ir_check(M_plus, V_plus).ok:
        raise PreconditionError("mechanism on the kept types must be DSIC and ex-post IR")
    if V.projection is None and space.n > 1:
        raise ValueError("valuations need an allocation projection to zero out other agents")
    pos = [{k: r for r, k in enumerate(ks)} for ks in R.plus]
    n, A = space.n, M_plus.num_allocations
    lot = np.zeros(space.sizes + (A,))
    pay = np.zeros(space.sizes + (n,))
    for t in space.profiles():
        outside = [i for i in range(n) if t[i] not in pos[i]]
        if not outside:
            tp = tuple(pos[i][t[i]] for i in range(n))
            lot[t] = M_plus.lottery[tp]
            pay[t] = M_plus.payments[tp]
        elif len(outside) == 1:
            i = outside[0]
            base = [pos[j][t[j]] if j != i else 0 for j in range(n)]
            utils = []
            for z in range(len(R.plus[i])):
                base[i] = z
                tp = tuple(base)
                utils.append(M_plus.lottery[tp] @ V.table[i][t[i]] - M_plus.payments[tp + (i,)])
            base[i] = _argmax_lowest(np.array(utils))
            tp = tuple(base)
            proj = V.projection[i] if V.projection is not None else np.arange(A)
            np.add.at(lot[t], proj, M_plus.lottery[tp])
            pay[t + (i,)] = M_plus.payments[tp + (i,)]
        else:
            lot[t + (0,)] = 1.0
    return Mechanism(space, lot, pay, M_plus.H)


@dataclass
class BICExtension:
    mechanism: Mechanism
    tau: list[np.ndarray]
    ratio: list[np.ndarray]
    undefined_ratio: list[tuple[int, int]] = field(default_factory=list)
    beta: float = 0.0


def bic_extend(M: Mechanism, V: Valuations, R: TypeRestriction, D: JointDist) -> BICExtension:
    """Re-map types outside the kept set to their best kept report and rescale
    their payments by interim payment / interim value.

    ``M`` is given on the full space; only its outcomes at kept-type reports
    are used for the output.  Interim quantities are taken over the other
    agents' marginals of the product prior ``D``.
    """
    if not D.is_product():
        raise NotProductError("the prior must be a product distribution")
    if not expost_ir_check(M, V).ok:
        raise PreconditionError("mechanism must be ex-post IR")
    space = V.space
    n = space.n
    marg = [D.marginal_array(i) for i in range(n)]
    tau, ratio, undefined = [], [], []
    for i in range(n):
        k = space.sizes[i]
        util, value, epay = product_interim_values(M, V, marg, i)
        plus = np.array(R.plus[i])
        ti = np.arange(k)
        ri = np.ones(k)
        for s in range(k):
            if s in R.plus[i]:
                continue
            z = int(plus[_argmax_lowest(util[s, plus])])
            ti[s] = z
            if value[s, z] > 0:
                ri[s] = epay[z] / value[s, z]
            else:
                ri[s] = 0.0
                if abs(epay[z]) > 0:
                    undefined.append((i, s))
        tau.append(ti)
        ratio.append(ri)
    A = M.num_allocations
    lot = np.zeros(space.sizes + (A,))
    pay = np.zeros(space.sizes + (n,))
    for t in space.profiles():
        tt = tuple(int(tau[i][t[i]]) for i in range(n))
        lot[t] = M.lottery[tt]
        for i in range(n):
            if t[i] in R.plus[i]:
                pay[t + (i,)] = M.payments[tt + (i,)]
            else:
                pay[t + (i,)] = float(lot[t] @ V.table[i][t[i]]) * ratio[i][t[i]]
    pay = np.clip(pay, -M.H, M.H)
    out = Mechanism(space, lot, pay, M.H)
    return BICExtension(out, tau, ratio, undefined, R.beta(D))


@dataclass
class EpsQReduction:
    mechanism: Mechanism
    restriction: TypeRestriction
    beta: float
    extension: BICExtension


def good_types(M: Mechanism, V: Valuations, D: JointDist, eps: float) -> TypeRestriction:
    """Types whose interim loss from any report is at most ``eps`` (plus bottom)."""
    marg = [D.marginal_array(i) for i in range(V.n)]
    plus = []
    for i in range(V.n):
        reg = product_interim_regrets(M, V, marg, i)
        worst = reg.max(axis=1)
        plus.append(tuple(sorted({0} | {int(s) for s in np.flatnonzero(worst <= eps + IC_TOL)})))
    return TypeRestriction(tuple(plus))


def reduce_epsq_bic(M: Mechanism, V: Valuations, D: JointDist, eps: float, q: float) -> EpsQReduction:
    """Extend ``M`` from its eps-good types, turning (eps, q)-BIC into
    approximately BIC at a revenue cost of at most ``n q V``."""
    if not D.is_product():
        raise NotProductError("the prior must be a product distribution")
    if bic_report(M, V, D).q_at(eps) > q + CONSERVATION_TOL:
        raise PreconditionError(f"mechanism is not ({eps}, {q})-BIC")
    R = good_types(M, V, D, eps)
    if R == TypeRestriction.full(V.space):
        ext = BICExtension(M, [np.arange(k) for k in V.space.sizes], [np.ones(k) for k in V.space.sizes], [], 0.0)
        return EpsQReduction(M, R, 0.0, ext)
    ext = bic_extend(M, V, R, D)
    return EpsQReduction(ext.mechanism, R, ext.beta, ext)


# -- moving mass --------------------------------------------------------------

def move_agent_mass(D: JointDist, i: int, target: np.ndarray) -> JointDist:
    """Re-weight agent ``i``'s coordinate to the target marginal, moving each
    surplus type's mass to deficit types proportionally across the others'
    profiles; the other agents' marginals are untouched."""
    k = D.space.sizes[i]
    m = np.moveaxis(D.mass.copy(), i, 0).reshape(k, -1)
    cur = m.sum(axis=1)
    diff = cur - target
    donors = [v for v in range(k) if diff[v] > 0]
    receivers = [v for v in range(k) if diff[v] < 0]
    need = {v: -diff[v] for v in receivers}
    out = m.copy()
    for v in donors:
        excess = diff[v]
        for w in receivers:
            if excess <= 0:
                break
            g = min(excess, need[w])
            if g <= 0:
                continue
            chunk = m[v] * (g / cur[v])
            out[v] -= chunk
            out[w] += chunk
            excess -= g
            need[w] -= g
    out = np.maximum(out, 0.0)
    shape = (k,) + tuple(s for j, s in enumerate(D.space.sizes) if j != i)
    mass = np.moveaxis(out.reshape(shape), 0, i)
    return JointDist(D.space, mass / mass.sum())


def moving_mass(D: JointDist, targets: Sequence[Sequence[float]]) -> JointDist:
    """A distribution with the target marginals within TV ``sum_i TV(D_i, D'_i)`` of D."""
    if len(targets) != D.space.n:
        raise ValueError("one target marginal per agent required")
    ts = []
    for i, t in enumerate(targets):
        t = np.asarray(t, dtype=float)
        if t.shape != (D.space.sizes[i],) or np.any(t < 0) or abs(t.sum() - 1.0) > CONSERVATION_TOL:
            raise ValueError(f"target marginal {i} is not a normalized distribution on agent {i}'s types")
        ts.append(t)
    out = D
    for i, t in enumerate(ts):
        out = move_agent_mass(out, i, t)
    return out
