"""Markov random field priors over item values: exact joints, the maximum
weighted degree, the ratio sandwich, KL/TV bounds and the gap instance."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from itertools import product as iproduct
from typing import Sequence

import numpy as np

from .dist import JointDist, TypeSpace, product_of_marginals, tv_distance
from .robustness import RobustnessReport

MAX_STATES = 10**6


@dataclass(frozen=True)
class Edge:
    nodes: tuple[int, ...]
    potential: np.ndarray


@dataclass
class PairwiseMRF:
    """Nodes with alphabets ``0..sizes[v]-1``; ``values[v][c]`` is the item
    value of symbol ``c`` (default ``c + 1``)."""

    sizes: tuple[int, ...]
    node_potentials: list[np.ndarray]
    edges: list[Edge] = field(default_factory=list)
    values: list[tuple[float, ...]] | None = None

    def __post_init__(self):
        self.sizes = tuple(int(k) for k in self.sizes)
        if not self.sizes or any(k < 1 for k in self.sizes):
            raise ValueError("every node needs a nonempty alphabet")
        if len(self.node_potentials) != len(self.sizes):
            raise ValueError("one node potential per node required")
        self.node_potentials = [np.asarray(p, dtype=float) for p in self.node_potentials]
        for v, p in enumerate(self.node_potentials):
            if p.shape != (self.sizes[v],) or not np.all(np.isfinite(p)):
                raise ValueError(f"node {v}: potential must be {self.sizes[v]} finite numbers")
        edges = []
        for e in self.edges:
            nodes = tuple(int(u) for u in e.nodes)
            pot = np.asarray(e.potential, dtype=float)
            if len(set(nodes)) != len(nodes) or any(not 0 <= u < len(self.sizes) for u in nodes):
                raise ValueError(f"edge {nodes}: endpoints must be distinct existing nodes")
            if pot.shape != tuple(self.sizes[u] for u in nodes) or not np.all(np.isfinite(pot)):
                raise ValueError(f"edge {nodes}: potential must be a finite table over the endpoint alphabets")
            edges.append(Edge(nodes, pot))
        self.edges = edges
        if self.values is None:
            self.values = [tuple(float(c + 1) for c in range(k)) for k in self.sizes]
        self.values = [tuple(float(x) for x in vs) for vs in self.values]
        for v, vs in enumerate(self.values):
            if len(vs) != self.sizes[v] or len(set(vs)) != len(vs) or min(vs) <= 0:
                raise ValueError(f"node {v}: values must be {self.sizes[v]} distinct positive numbers")

    @property
    def m(self) -> int:
        return len(self.sizes)

    @property
    def num_states(self) -> int:
        return math.prod(self.sizes)

    @property
    def pairwise(self) -> bool:
        return all(len(e.nodes) <= 2 for e in self.edges)

    def _broadcast(self, nodes: Sequence[int], table: np.ndarray) -> np.ndarray:
        """Lay ``table`` (axes = ``nodes``) out over the full configuration grid."""
        order = np.argsort(nodes)
        t = np.transpose(table, order)
        shape = [1] * self.m
        for u in sorted(nodes):
            shape[u] = self.sizes[u]
        return t.reshape(shape)

    def log_weights(self, with_edges: bool = True) -> np.ndarray:
        if self.num_states > MAX_STATES:
            raise OverflowError(f"{self.num_states} states exceed the enumeration limit {MAX_STATES}")
        out = np.zeros(self.sizes)
        for v, p in enumerate(self.node_potentials):
            out = out + self._broadcast([v], p)
        if with_edges:
            for e in self.edges:
                out = out + self._broadcast(e.nodes, e.potential)
        return out

    def type_space(self) -> TypeSpace:
        return TypeSpace.from_values(self.values)

    def dumps(self) -> str:
        lines = [f"node {k} " + " ".join(repr(float(x)) for x in p)
                 for k, p in zip(self.sizes, self.node_potentials)]
        for e in self.edges:
            lines.append("edge " + " ".join(map(str, e.nodes)) + " "
                         + " ".join(repr(float(x)) for x in e.potential.reshape(-1)))
        return "\n".join(lines) + "\n"

    @classmethod
    def loads(cls, text: str) -> "PairwiseMRF":
        """``node <size> <psi...>`` lines in node order, then
        ``edge <u> <v> <psi matrix, row-major>`` lines."""
        sizes, pots, raw_edges = [], [], []
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].split()
            if not line:
                continue
            try:
                if line[0] == "node":
                    k = int(line[1])
                    psi = [float(x) for x in line[2:]]
                    if len(psi) != k:
                        raise ValueError(f"expected {k} potentials, got {len(psi)}")
                    sizes.append(k)
                    pots.append(np.array(psi))
                elif line[0] == "edge":
                    raw_edges.append((lineno, int(line[1]), int(line[2]), [float(x) for x in line[3:]]))
                else:
                    raise ValueError(f"unknown record {line[0]!r}")
            except (ValueError, IndexError) as exc:
                raise ValueError(f"line {lineno}: {exc}") from exc
        edges = []
        for lineno, u, v, psi in raw_edges:
            if not (0 <= u < len(sizes) and 0 <= v < len(sizes)):
                raise ValueError(f"line {lineno}: edge endpoint out of range")
            if len(psi) != sizes[u] * sizes[v]:
                raise ValueError(f"line {lineno}: expected {sizes[u] * sizes[v]} edge potentials, got {len(psi)}")
            edges.append(Edge((u, v), np.array(psi).reshape(sizes[u], sizes[v])))
        return cls(tuple(sizes), pots, edges)


def _normalize_log(logw: np.ndarray) -> tuple[np.ndarray, float]:
    """Probabilities and log partition function from log weights."""
    top = logw.max()
    w = np.exp(logw - top)
    Z = w.sum()
    return w / Z, float(top + math.log(Z))


def joint_table(mrf: PairwiseMRF, with_edges: bool = True) -> np.ndarray:
    return _normalize_log(mrf.log_weights(with_edges))[0]


def log_partition(mrf: PairwiseMRF, with_edges: bool = True) -> float:
    return _normalize_log(mrf.log_weights(with_edges))[1]


def _pad(mrf: PairwiseMRF, table: np.ndarray) -> JointDist:
    """Place a table over symbols on the value space, the bottom type getting no mass."""
    mass = np.zeros(tuple(k + 1 for k in mrf.sizes))
    mass[tuple(slice(1, None) for _ in mrf.sizes)] = table
    return JointDist(mrf.type_space(), mass)


def mrf_to_joint(mrf: PairwiseMRF) -> JointDist:
    return _pad(mrf, joint_table(mrf))


def node_product(mrf: PairwiseMRF) -> JointDist:
    """The product prior proportional to the node potentials alone."""
    return _pad(mrf, joint_table(mrf, with_edges=False))


@dataclass
class DeltaReport:
    degrees: np.ndarray

    @property
    def delta(self) -> float:
        return float(self.degrees.max()) if self.degrees.size else 0.0


def weighted_degree(mrf: PairwiseMRF) -> DeltaReport:
    """d_i = max over configurations of |sum of potentials of edges at i|."""
    deg = np.zeros(mrf.m)
    for i in range(mrf.m):
        inc = [e for e in mrf.edges if i in e.nodes]
        if not inc:
            continue
        nbrs = sorted({u for e in inc for u in e.nodes})
        pos = {u: r for r, u in enumerate(nbrs)}
        best = 0.0
        for x in iproduct(*(range(mrf.sizes[u]) for u in nbrs)):
            s = sum(e.potential[tuple(x[pos[u]] for u in e.nodes)] for e in inc)
            best = max(best, abs(float(s)))
        deg[i] = best
    return DeltaReport(deg)


@dataclass
class RatioReport:
    checked: int
    skipped: int
    min_ratio: float
    max_ratio: float
    lo: float
    hi: float

    @property
    def ok(self) -> bool:
        return self.min_ratio >= self.lo * (1 - 1e-9) and self.max_ratio <= self.hi * (1 + 1e-9)


def _event_ratio(table: np.ndarray, i: int, E: np.ndarray, E2: np.ndarray) -> float | None:
    """Pr[t_i in E, t_-i in E2] / (Pr[t_i in E] Pr[t_-i in E2]); masks over
    agent i's symbols and the flattened others."""
    rows = np.moveaxis(table, i, 0).reshape(table.shape[i], -1)
    pe = rows[E].sum()
    pe2 = rows[:, E2].sum()
    if pe <= 0 or pe2 <= 0:
        return None
    return float(rows[np.ix_(E, E2)].sum() / (pe * pe2))


def ratio_sweep(table: np.ndarray, delta: float, n_random: int = 1000, seed: int = 0) -> RatioReport:
    """Evaluate the dependence ratio on every singleton event pair and on
    ``n_random`` random event pairs."""
    rng = np.random.default_rng(seed)
    m = table.ndim
    ratios, skipped = [], 0
    for i in range(m):
        k = table.shape[i]
        R = table.size // k
        for a in range(k):
            for o in range(R):
                E = np.zeros(k, bool)
                E[a] = True
                E2 = np.zeros(R, bool)
                E2[o] = True
                r = _event_ratio(table, i, E, E2)
                if r is None:
                    skipped += 1
                else:
                    ratios.append(r)
    for _ in range(n_random):
        i = int(rng.integers(m))
        k = table.shape[i]
        R = table.size // k
        E = rng.random(k) < 0.5
        E2 = rng.random(R) < 0.5
        E[rng.integers(k)] = True
        E2[rng.integers(R)] = True
        r = _event_ratio(table, i, E, E2)
        if r is None:
            skipped += 1
        else:
            ratios.append(r)
    return RatioReport(len(ratios), skipped, min(ratios, default=1.0), max(ratios, default=1.0),
                       math.exp(-4 * delta), math.exp(4 * delta))


def check_ratio_bound(mrf: PairwiseMRF, n_random: int = 1000, seed: int = 0) -> list[RobustnessReport]:
    delta = weighted_degree(mrf).delta
    rep = ratio_sweep(joint_table(mrf), delta, n_random, seed)
    meta = {"seed": seed, "Delta": delta, "checked": rep.checked, "skipped": rep.skipped}
    return [RobustnessReport("mrf_ratio.lower", rep.min_ratio, rep.lo, ">=", 1e-9 * rep.lo, meta=meta),
            RobustnessReport("mrf_ratio.upper", rep.max_ratio, rep.hi, "<=", 1e-9 * rep.hi, meta=meta)]


def kl_divergence(p: np.ndarray, q: np.ndarray) -> float:
    """KL(p || q) with 0 log(0 / .) = 0 and +inf when p puts mass where q has none."""
    p, q = np.asarray(p, float).reshape(-1), np.asarray(q, float).reshape(-1)
    s = p > 0
    if np.any(q[s] <= 0):
        return math.inf
    return float(np.sum(p[s] * np.log(p[s] / q[s])))


def kl_tv_bound(m: int, delta: float) -> float:
    return min(math.sqrt(m * delta / 4), math.sqrt(1 - math.exp(-m * delta / 2)))


def check_kl_tv_bound(mrf: PairwiseMRF, seed: int | None = None) -> list[RobustnessReport]:
    """TV to the node-potential product is at most
    min(sqrt(m Delta / 4), sqrt(1 - exp(-m Delta / 2))), and the smaller KL
    direction is at most m Delta / 2."""
    if not mrf.pairwise:
        raise ValueError("the KL/TV bound is only available for pairwise edges")
    delta = weighted_degree(mrf).delta
    D, Dp = joint_table(mrf), joint_table(mrf, with_edges=False)
    kf, kr = kl_divergence(D, Dp), kl_divergence(Dp, D)
    finite = [k for k in (kf, kr) if math.isfinite(k)]
    kmin = min(finite) if finite else math.inf
    tv = 0.5 * float(np.abs(D - Dp).sum())
    meta = {"seed": seed, "Delta": delta, "m": mrf.m, "kl_forward": kf, "kl_reverse": kr}
    return [RobustnessReport("mrf_kl_tv.tv", tv, kl_tv_bound(mrf.m, delta), "<=", 1e-9, meta={**meta, "delta": tv}),
            RobustnessReport("mrf_kl_tv.kl", kmin, mrf.m * delta / 2, "<=", 1e-9, meta=meta)]


# -- the gap instance ---------------------------------------------------------

@dataclass
class MRFGap:
    k: float
    joint: JointDist
    expected_tv: float
    measured_tv: float
    delta_lower: float
    bb_ratio: float
    realization: PairwiseMRF

    @property
    def realization_delta(self) -> float:
        return weighted_degree(self.realization).delta


def mrfgap_masses(k: float) -> np.ndarray:
    """Masses on (A, A), (A, B), (B, A), (B, B) as a 2x2 table."""
    return np.array([[1 - 2 * k + k**3, k - k**3], [k - k**3, k**3]])


def mrfgap_instance(k: float, values: tuple[float, float] = (1.0, 2.0)) -> MRFGap:
    """Two items with values A < B, close to its product of marginals while
    any field representation needs a large weighted degree."""
    if not 0 < k < 0.5:
        raise ValueError("k must lie in (0, 1/2)")
    table = mrfgap_masses(k)
    real = PairwiseMRF((2, 2), [np.zeros(2), np.zeros(2)], [Edge((0, 1), np.log(table))], [values, values])
    joint = _pad(real, table)
    marg = table.sum(axis=1)
    bb = float(table[1, 1] / (marg[1] * table.sum(axis=0)[1]))
    return MRFGap(k, joint, 2 * (k**2 - k**3), tv_distance(joint, product_of_marginals(joint)),
                  0.25 * math.log(1 / k), bb, real)


def check_mrfgap(k: float) -> list[RobustnessReport]:
    g = mrfgap_instance(k)
    meta = {"delta": g.measured_tv, "k": k, "Delta_lower": g.delta_lower}
    out = [RobustnessReport("mrfgap.tv_formula.upper", g.measured_tv, g.expected_tv, "<=", 1e-12, meta=meta),
           RobustnessReport("mrfgap.tv_formula.lower", g.measured_tv, g.expected_tv, ">=", 1e-12, meta=meta),
           RobustnessReport("mrfgap.tv_bound", g.measured_tv, 2 * k**2, "<=", 1e-12, meta=meta),
           RobustnessReport("mrfgap.ratio_bound", -0.25 * math.log(g.bb_ratio), g.delta_lower, ">=", 1e-12, meta=meta),
           RobustnessReport("mrfgap.realization", g.realization_delta, g.delta_lower, ">=", 1e-12, meta=meta)]
    return out


def random_pairwise_mrf(rng: np.random.Generator, max_nodes: int = 4, max_alphabet: int = 4,
                        scale: float = 1.0, edge_prob: float = 0.5) -> PairwiseMRF:
    m = int(rng.integers(2, max_nodes + 1))
    sizes = tuple(int(rng.integers(2, max_alphabet + 1)) for _ in range(m))
    pots = [rng.normal(0, 1, k) for k in sizes]
    edges = [Edge((u, v), rng.uniform(-scale, scale, (sizes[u], sizes[v])))
             for u in range(m) for v in range(u + 1, m) if rng.random() < edge_prob]
    return PairwiseMRF(sizes, pots, edges)


__all__ = ["Edge", "PairwiseMRF", "DeltaReport", "RatioReport", "MRFGap", "MAX_STATES",
           "joint_table", "log_partition", "mrf_to_joint", "node_product", "weighted_degree",
           "ratio_sweep", "check_ratio_bound", "kl_divergence", "kl_tv_bound", "check_kl_tv_bound",
           "mrfgap_masses", "mrfgap_instance", "check_mrfgap", "random_pairwise_mrf"]
