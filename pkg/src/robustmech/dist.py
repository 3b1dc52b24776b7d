"""Finite type spaces, joint distributions and total-variation machinery.

Every agent's type list starts with the non-participation type ``BOTTOM``
(index 0).  A :class:`JointDist` stores its mass as an ndarray whose shape is
the tuple of type-list sizes, so profile ``(k_1, ..., k_n)`` is simply
``mass[k_1, ..., k_n]`` and C-order flattening gives lexicographic order.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Hashable, Iterable, Sequence

import numpy as np

BOTTOM = "⊥"

CONSERVATION_TOL = 1e-12
CROSS_TOL = 1e-10


class SpaceMismatchError(ValueError):
    """Two objects were expected to live on the same type space."""


class ZeroMassError(ValueError):
    """Conditioning on an event of probability zero."""


class NotProductError(ValueError):
    """A distribution required to be a product distribution is not one."""


@dataclass(frozen=True)
class TypeSpace:
    """Per-agent ordered type lists; ``types[i][0]`` is always ``BOTTOM``."""

    types: tuple[tuple[Hashable, ...], ...]

    def __post_init__(self):
        types = tuple(tuple(ts) for ts in self.types)
        object.__setattr__(self, "types", types)
        if len(types) < 1:
            raise ValueError("a type space needs at least one agent")
        for i, ts in enumerate(types):
            if not ts:
                raise ValueError(f"agent {i} has an empty type list")
            if ts[0] != BOTTOM or sum(1 for t in ts if t == BOTTOM) != 1:
                raise ValueError(f"agent {i}: the first type must be {BOTTOM} and it must appear once")
            if len(set(ts)) != len(ts):
                raise ValueError(f"agent {i}: type labels must be distinct")

    @classmethod
    def from_sizes(cls, sizes: Sequence[int]) -> "TypeSpace":
        return cls(tuple((BOTTOM,) + tuple(range(1, k)) for k in sizes))

    @classmethod
    def from_values(cls, values: Sequence[Sequence[float]]) -> "TypeSpace":
        """One agent per entry; the listed values follow ``BOTTOM``."""
        return cls(tuple((BOTTOM,) + tuple(float(v) for v in vs) for vs in values))

    @property
    def n(self) -> int:
        return len(self.types)

    @property
    def sizes(self) -> tuple[int, ...]:
        return tuple(len(ts) for ts in self.types)

    @property
    def num_profiles(self) -> int:
        return math.prod(self.sizes)

    def profiles(self) -> Iterable[tuple[int, ...]]:
        return itertools.product(*(range(k) for k in self.sizes))

    def value(self, i: int, k: int) -> float:
        """Numeric reading of a type label; ``BOTTOM`` reads as 0."""
        label = self.types[i][k]
        if label == BOTTOM:
            return 0.0
        if isinstance(label, tuple):
            raise TypeError("vector-valued label has no scalar value")
        return float(label)

    def values(self, i: int) -> np.ndarray:
        return np.array([self.value(i, k) for k in range(self.sizes[i])])

    def drop(self, i: int) -> "TypeSpace":
        if self.n < 2:
            raise ValueError("cannot drop the only agent")
        return TypeSpace(self.types[:i] + self.types[i + 1:])

    def agent(self, i: int) -> "TypeSpace":
        return TypeSpace((self.types[i],))

    def restrict(self, keep: Sequence[Sequence[int]]) -> "TypeSpace":
        return TypeSpace(tuple(tuple(self.types[i][k] for k in ks) for i, ks in enumerate(keep)))


def _check_same(P: "JointDist", Q: "JointDist") -> None:
    if P.space.sizes != Q.space.sizes:
        raise SpaceMismatchError(f"type spaces differ: {P.space.sizes} vs {Q.space.sizes}")


@dataclass(frozen=True, eq=False)
class JointDist:
    space: TypeSpace
    mass: np.ndarray

    def __post_init__(self):
        m = np.array(self.mass, dtype=float)
        if m.size != self.space.num_profiles:
            raise SpaceMismatchError(f"{m.size} masses for {self.space.num_profiles} profiles")
        m = m.reshape(self.space.sizes)
        if not np.all(np.isfinite(m)) or np.any(m < 0):
            raise ValueError("masses must be finite and nonnegative")
        total = m.sum()
        if abs(total - 1.0) > CONSERVATION_TOL:
            raise ValueError(f"masses sum to {total!r}, not 1")
        m.setflags(write=False)
        object.__setattr__(self, "mass", m)

    @classmethod
    def normalized(cls, space: TypeSpace, weights) -> "JointDist":
        w = np.asarray(weights, dtype=float).reshape(space.sizes)
        return cls(space, w / w.sum())

    @classmethod
    def point(cls, space: TypeSpace, profile: Sequence[int]) -> "JointDist":
        m = np.zeros(space.sizes)
        m[tuple(profile)] = 1.0
        return cls(space, m)

    @classmethod
    def product(cls, space: TypeSpace, marginals: Sequence[Sequence[float]]) -> "JointDist":
        m = np.ones(())
        for p in marginals:
            m = np.multiply.outer(m, np.asarray(p, dtype=float))
        return cls(space, m)

    @property
    def flat(self) -> np.ndarray:
        return self.mass.reshape(-1)

    @property
    def support(self) -> np.ndarray:
        return self.mass > 0

    def marginal_array(self, i: int) -> np.ndarray:
        axes = tuple(j for j in range(self.space.n) if j != i)
        return self.mass.sum(axis=axes) if axes else self.mass.copy()

    def is_product(self, tol: float = CONSERVATION_TOL) -> bool:
        prod = np.ones(())
        for i in range(self.space.n):
            prod = np.multiply.outer(prod, self.marginal_array(i))
        return bool(np.max(np.abs(prod - self.mass)) <= tol)

    def same_support(self, other: "JointDist") -> bool:
        _check_same(self, other)
        return bool(np.array_equal(self.support, other.support))

    def expect(self, f: np.ndarray) -> float:
        return float(np.sum(self.mass * np.asarray(f).reshape(self.space.sizes)))


def tv_distance(P: JointDist, Q: JointDist) -> float:
    """Half the L1 distance between the mass vectors."""
    _check_same(P, Q)
    return 0.5 * float(np.abs(P.flat - Q.flat).sum())


@dataclass(frozen=True, eq=False)
class Coupling:
    """Joint law of (X, Y) over pairs of flat profile indices."""

    mass: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.mass, dtype=float)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise ValueError("coupling mass must be a square matrix")
        if np.any(m < 0) or abs(m.sum() - 1.0) > CONSERVATION_TOL:
            raise ValueError("coupling mass must be nonnegative and sum to 1")

    @property
    def first(self) -> np.ndarray:
        return self.mass.sum(axis=1)

    @property
    def second(self) -> np.ndarray:
        return self.mass.sum(axis=0)

    @property
    def disagreement(self) -> float:
        return float(self.mass.sum() - np.trace(self.mass))


def optimal_coupling(P: JointDist, Q: JointDist) -> Coupling:
    """Maximal coupling: shared mass on the diagonal, residuals matched
    proportionally off the diagonal."""
    _check_same(P, Q)
    p, q = P.flat, Q.flat
    common = np.minimum(p, q)
    rp, rq = p - common, q - common
    gamma = np.diag(common)
    total = rp.sum()
    if total > 0:
        # rp and rq have disjoint supports, so the outer product has a zero diagonal
        gamma = gamma + np.outer(rp, rq) / total
    return Coupling(gamma)


@dataclass(frozen=True, eq=False)
class DualWitness:
    values: np.ndarray

    def __post_init__(self):
        if np.any(np.abs(self.values) > 0.5):
            raise ValueError("witness values must lie in [-1/2, 1/2]")

    def gap(self, P: JointDist, Q: JointDist) -> float:
        return float(np.dot(P.flat, self.values) - np.dot(Q.flat, self.values))


def dual_witness(P: JointDist, Q: JointDist) -> DualWitness:
    _check_same(P, Q)
    return DualWitness(np.where(P.flat >= Q.flat, 0.5, -0.5))


def marginal(D: JointDist, i: int) -> JointDist:
    return JointDist(D.space.agent(i), D.marginal_array(i))


def conditional(D: JointDist, i: int, t_i: int) -> JointDist:
    """Distribution of the other agents' types given agent ``i`` has type ``t_i``."""
    row = np.take(D.mass, t_i, axis=i)
    total = row.sum()
    if total <= 0:
        raise ZeroMassError(f"agent {i} type {t_i} has zero probability")
    return JointDist(D.space.drop(i), row / total)


def product_of_marginals(D: JointDist) -> JointDist:
    return JointDist.product(D.space, [D.marginal_array(i) for i in range(D.space.n)])


@dataclass(frozen=True)
class ConditionalTVReport:
    q: float
    joint_tv: float
    threshold: float
    exceedance: float

    @property
    def ok(self) -> bool:
        return self.exceedance <= self.q + CONSERVATION_TOL


def verify_conditional_tv(P: JointDist, Q: JointDist, q: float, x_agent: int = 0) -> ConditionalTVReport:
    """Mass under Q's X-marginal of the x whose conditional laws of Y differ
    by more than ``2 * TV(P, Q) / q``.

    X is agent ``x_agent``; Y is everyone else.  When P gives x no mass its
    conditional is undefined and the distance is taken as 1.
    """
    _check_same(P, Q)
    if not 0 < q <= 1:
        raise ValueError("q must lie in (0, 1]")
    d = tv_distance(P, Q)
    threshold = 2 * d / q
    pa = np.moveaxis(P.mass, x_agent, 0).reshape(P.space.sizes[x_agent], -1)
    qa = np.moveaxis(Q.mass, x_agent, 0).reshape(Q.space.sizes[x_agent], -1)
    qx, px = qa.sum(axis=1), pa.sum(axis=1)
    exceed = 0.0
    for x in range(len(qx)):
        if qx[x] <= 0:
            continue
        cond_tv = 1.0 if px[x] <= 0 else 0.5 * float(np.abs(pa[x] / px[x] - qa[x] / qx[x]).sum())
        if cond_tv > threshold:
            exceed += qx[x]
    return ConditionalTVReport(q, d, threshold, float(exceed))


def _waterfill(total: float, weights: np.ndarray, caps: np.ndarray) -> np.ndarray:
    """Split ``total`` in proportion to ``weights`` without exceeding ``caps``."""
    out = np.zeros_like(caps)
    free = np.ones(len(caps), dtype=bool)
    remaining = min(total, float(caps.sum()))
    for _ in range(len(caps) + 1):
        if remaining <= 0 or not free.any():
            break
        share = np.where(free, weights, 0.0)
        share = share / share.sum() * remaining
        room = caps - out
        over = free & (share >= room)
        if not over.any():
            out += share
            break
        out[over] = caps[over]
        free &= ~over
        remaining = min(total, float(caps.sum())) - out.sum()
    return out


def perturb_within_tv(D: JointDist, delta: float, mode: str = "same_support",
                      seed: int | None = None, target: Sequence[int] | None = None) -> JointDist:
    """Random distribution within TV distance ``delta`` of ``D``.

    Mass moves from a random donor set to a disjoint receiver set, so the
    distance equals the moved mass (exactly ``delta`` whenever the donors can
    supply it).  ``same_support`` keeps every donor strictly positive and
    only feeds existing support points.  With ``target`` the result is the
    deterministic mixture ``(1 - delta) D + delta * point(target)``.
    """
    if not 0 <= delta <= 1:
        raise ValueError("delta must lie in [0, 1]")
    if mode not in ("same_support", "free"):
        raise ValueError(f"unknown mode {mode!r}")
    if delta == 0:
        return D
    if target is not None:
        m = (1 - delta) * D.mass.copy()
        m[tuple(target)] += delta
        return JointDist.normalized(D.space, m)
    p = D.flat
    supp = np.flatnonzero(p > 0)
    if mode == "same_support" and len(supp) < 2:
        raise ValueError("same_support perturbation needs at least two support points")
    rng = np.random.default_rng(seed)
    if mode == "same_support":
        order = rng.permutation(supp)
        k = int(rng.integers(1, len(supp)))
        donors, receivers = order[:k], order[k:]
        caps = 0.9 * p[donors]
    else:
        order = rng.permutation(supp)
        k = int(rng.integers(1, len(supp) + 1))
        donors = order[:k]
        rest = np.setdiff1d(np.arange(len(p)), donors)
        if len(rest) == 0:
            return D
        receivers = rng.choice(rest, size=int(rng.integers(1, len(rest) + 1)), replace=False)
        caps = p[donors].copy()
    out_amounts = _waterfill(delta, rng.random(len(donors)) + 1e-3, caps)
    moved = out_amounts.sum()
    m = p.copy()
    m[donors] -= out_amounts
    m[receivers] += moved * rng.dirichlet(np.ones(len(receivers)))
    m = np.maximum(m, 0.0)
    return JointDist.normalized(D.space, m)


@dataclass(frozen=True)
class WeakDependenceReport:
    n: int
    eps: float
    tv_to_marginal_product: float

    @property
    def bound(self) -> float:
        return (self.n + 1) * self.eps

    @property
    def ok(self) -> bool:
        return self.tv_to_marginal_product <= self.bound + CONSERVATION_TOL


def verify_weak_dependence(D_hat: JointDist, D_p: JointDist) -> WeakDependenceReport:
    """Distance from ``D_hat`` to the product of its own marginals, against
    ``(n + 1)`` times its distance to the product distribution ``D_p``."""
    _check_same(D_hat, D_p)
    if not D_p.is_product():
        raise NotProductError("reference distribution is not a product distribution")
    eps = tv_distance(D_hat, D_p)
    return WeakDependenceReport(D_hat.space.n, eps, tv_distance(product_of_marginals(D_hat), D_hat))


# -- text format --------------------------------------------------------------

def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def dumps(D: JointDist) -> str:
    lines = ["sizes " + " ".join(str(k) for k in D.space.sizes)]
    for prof, w in zip(D.space.profiles(), D.flat):
        lines.append(" ".join(str(k) for k in prof) + " : " + _fmt(w))
    return "\n".join(lines) + "\n"


def loads(text: str, space: TypeSpace | None = None) -> JointDist:
    """Parse :func:`dumps` output.  Without ``space`` the labels default to
    ``BOTTOM, 1, 2, ...``."""
    rows = []
    sizes = None
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if sizes is None:
            head = line.split()
            if head[0] != "sizes":
                raise ValueError(f"line {lineno}: expected 'sizes' header")
            sizes = tuple(int(k) for k in head[1:])
            continue
        try:
            lhs, rhs = line.split(":")
            prof = tuple(int(k) for k in lhs.split())
            rows.append((lineno, prof, float(rhs)))
        except ValueError as exc:
            raise ValueError(f"line {lineno}: malformed record {raw!r}") from exc
    if sizes is None:
        raise ValueError("missing 'sizes' header")
    space = space or TypeSpace.from_sizes(sizes)
    if space.sizes != sizes:
        raise SpaceMismatchError(f"header sizes {sizes} do not match {space.sizes}")
    expected = list(space.profiles())
    if len(rows) != len(expected):
        raise ValueError(f"expected {len(expected)} profile lines, found {len(rows)}")
    for (lineno, prof, _), want in zip(rows, expected):
        if prof != want:
            raise ValueError(f"line {lineno}: profile {prof} out of lexicographic order (expected {want})")
    return JointDist(space, [w for _, _, w in rows])
