"""Experiment registry: each experiment maps (parameters, trial seed) to a
list of robustness reports.  Randomness only selects instances; every
quantity inside a trial is computed exactly."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from itertools import product as iproduct
from typing import Any, Callable

import numpy as np

from .dist import (JointDist, TypeSpace, dual_witness, optimal_coupling, perturb_within_tv,
                   product_of_marginals, tv_distance, verify_conditional_tv, verify_weak_dependence)
from .mechanism import Mechanism, Objective, Valuations, bic_report, dsic_regret, objective_eval
from .mrf import (check_kl_tv_bound, check_mrfgap, check_ratio_bound, mrfgap_instance,
                  random_pairwise_mrf)
from .robustness import (Q_GRID, RobustnessReport, check_bic_extension, check_bic_robustness,
                         check_brustle_extension, check_dsic_extension, check_dsic_robustness,
                         check_epsq_reduction, check_lipschitz, check_marginal_robustness,
                         check_prophet_robustness, check_simple_vs_optimal, gap_certificate, ir_margin,
                         maxmin_mechanism, simple_vs_optimal_quantities, witness_objective)
from .synth import optimal_mechanism, posted_prices
from .transforms import TypeRestriction, moving_mass


# -- parameters ---------------------------------------------------------------

@dataclass(frozen=True)
class Param:
    default: Any
    kind: str = "float"
    lo: float | None = None
    hi: float | None = None
    lo_open: bool = False
    hi_open: bool = False
    doc: str = ""
    choices: tuple = ()

    def range_text(self) -> str:
        left = "(" if self.lo_open else "["
        right = ")" if self.hi_open else "]"
        lo = "-inf" if self.lo is None else f"{self.lo:g}"
        hi = "inf" if self.hi is None else f"{self.hi:g}"
        return f"{left}{lo}, {hi}{right}"

    def _check_scalar(self, name: str, x: float) -> None:
        bad = ((self.lo is not None and (x < self.lo or (self.lo_open and x == self.lo)))
               or (self.hi is not None and (x > self.hi or (self.hi_open and x == self.hi))))
        if bad:
            raise ValueError(f"{name} must lie in {self.range_text()}, got {x:g}")

    def coerce(self, name: str, value: Any) -> Any:
        if value is None:
            return None
        if self.kind == "str":
            if not isinstance(value, str) or (self.choices and value not in self.choices):
                raise ValueError(f"{name} must be one of {', '.join(self.choices)}")
            return value
        if self.kind == "floats":
            if not isinstance(value, (list, tuple)) or not value:
                raise ValueError(f"{name} must be a nonempty list of numbers")
            out = tuple(float(v) for v in value)
            for v in out:
                self._check_scalar(name, v)
            return out
        if isinstance(value, bool) or not isinstance(value, (int, float)) and not hasattr(value, "as_tuple"):
            raise ValueError(f"{name} must be a number")
        if self.kind == "int":
            if float(value) != int(value):
                raise ValueError(f"{name} must be an integer")
            out = int(value)
        else:
            out = float(value)
        self._check_scalar(name, out)
        return out


ALPHA = Param(None, lo=0, hi=1, doc="approximation factor; random in [0.25, 1] when unset")
DELTA = Param(None, lo=0, hi=1, doc="TV perturbation size; random when unset")
EPS = Param(None, lo=0, hi=1, doc="per-agent marginal perturbation; random when unset")
AGENTS = Param(3, "int", 1, 4, doc="maximum number of agents")
TYPES = Param(4, "int", 2, 6, doc="maximum types per agent including the bottom type")
ALLOCS = Param(3, "int", 2, 5, doc="maximum number of allocations including null")
QGRID = Param(Q_GRID, "floats", 0, 1, lo_open=True, doc="q values for the (eps, q) frontier")


@dataclass(frozen=True)
class Experiment:
    name: str
    doc: str
    run: Callable[[dict, int], list[RobustnessReport]]
    params: dict[str, Param] = field(default_factory=dict)
    trials: int = 1
    uses_instance: bool = False

    def resolve(self, given: dict) -> dict:
        unknown = sorted(set(given) - set(self.params) - {"instance"})
        if unknown:
            raise ValueError(f"unknown parameter(s) for {self.name}: {', '.join(unknown)}")
        out = {name: p.coerce(name, given.get(name, p.default)) for name, p in self.params.items()}
        if "instance" in given:
            if not self.uses_instance:
                raise ValueError(f"experiment {self.name} does not take an explicit instance")
            out["instance"] = given["instance"]
        return out


REGISTRY: dict[str, Experiment] = {}


def experiment(name: str, trials: int = 1, uses_instance: bool = False, **params: Param):
    def wrap(fn):
        REGISTRY[name] = Experiment(name, (fn.__doc__ or "").strip().splitlines()[0], fn, params,
                                    trials, uses_instance)
        return fn
    return wrap


# -- random instances ---------------------------------------------------------

def random_space(rng: np.random.Generator, max_agents: int, max_types: int, min_agents: int = 1,
                 max_profiles: int | None = None) -> TypeSpace:
    while True:
        n = int(rng.integers(min_agents, max_agents + 1))
        sizes = [int(rng.integers(2, max_types + 1)) for _ in range(n)]
        if max_profiles is None or math.prod(sizes) <= max_profiles:
            return TypeSpace.from_sizes(sizes)


def random_valuations(rng: np.random.Generator, space: TypeSpace, max_allocations: int) -> Valuations:
    A = int(rng.integers(2, max_allocations + 1))
    H = float(rng.choice([1.0, 2.0, 5.0]))
    tables = []
    for k in space.sizes:
        t = np.round(rng.uniform(0, H, (k, A)), 3)
        t[0] = 0.0
        t[:, 0] = 0.0
        tables.append(t)
    return Valuations(space, ("null",) + tuple(f"a{j}" for j in range(1, A)), tuple(tables), H)


def random_single_item(rng: np.random.Generator, n: int, max_types: int, max_value: int = 5) -> Valuations:
    vals = []
    for _ in range(n):
        k = int(rng.integers(2, max_types + 1))
        vals.append(sorted(rng.choice(np.arange(1, max_value + 1), k - 1, replace=False).tolist()))
    return Valuations.single_item(TypeSpace.from_values(vals))


def random_joint(rng: np.random.Generator, space: TypeSpace, zero_frac: float = 0.3) -> JointDist:
    w = rng.dirichlet(np.full(space.num_profiles, 0.7))
    if space.num_profiles > 2:
        zero = rng.random(space.num_profiles) < zero_frac
        keep = rng.choice(space.num_profiles, 2, replace=False)
        zero[keep] = False
        w[zero] = 0.0
    return JointDist.normalized(space, w)


def random_marginals(rng: np.random.Generator, space: TypeSpace, concentration: float = 1.0) -> list[np.ndarray]:
    return [rng.dirichlet(np.full(k, concentration)) for k in space.sizes]


def random_objective(rng: np.random.Generator, V: Valuations) -> Objective:
    """Revenue, welfare, or a nonnegative custom table optionally plus revenue."""
    kind = rng.integers(3)
    if kind == 0:
        return Objective.revenue(V)
    if kind == 1:
        return Objective.welfare(V)
    c = float(rng.choice([1.0, 3.0]))
    table = np.round(rng.uniform(0, c, V.space.sizes + (V.num_allocations,)), 3)
    if rng.random() < 0.5:
        return Objective.custom(table, 0.0, c)
    nH = V.n * V.H
    return Objective.custom(table, -nH, c + nH, payment_weight=1.0)


def random_mechanism(rng: np.random.Generator, V: Valuations) -> Mechanism:
    sizes, A = V.space.sizes, V.num_allocations
    lot = rng.dirichlet(np.ones(A), size=sizes)
    pay = rng.uniform(-V.H, V.H, sizes + (V.n,))
    bottom = (0,) * V.n
    lot[bottom] = np.eye(A)[0]
    pay[bottom] = 0.0
    return Mechanism(V.space, lot, pay, V.H)


def mix_with_null(M: Mechanism, lam: float) -> Mechanism:
    """Run M with probability lam and the null outcome otherwise."""
    null = np.zeros_like(M.lottery)
    null[..., 0] = 1.0
    return Mechanism(M.space, lam * M.lottery + (1 - lam) * null, lam * M.payments, M.H)


def random_restriction(rng: np.random.Generator, space: TypeSpace) -> TypeRestriction:
    plus = []
    for k in space.sizes:
        keep = rng.random(k) < 0.6
        keep[0] = True
        plus.append(tuple(int(j) for j in np.flatnonzero(keep)))
    return TypeRestriction(tuple(plus))


def shift_marginals(rng: np.random.Generator, marginals, eps: float) -> list[np.ndarray]:
    """Per-agent mixtures ``(1 - eps) m + eps r``, each within TV ``eps``."""
    return [(1 - eps) * np.asarray(m) + eps * rng.dirichlet(np.ones(len(m))) for m in marginals]


def _alpha(p: dict, rng: np.random.Generator) -> float:
    return p["alpha"] if p.get("alpha") is not None else float(np.round(rng.uniform(0.25, 1.0), 3))


def _delta(p: dict, rng: np.random.Generator, hi: float = 0.3) -> float:
    return p["delta"] if p.get("delta") is not None else float(np.round(rng.uniform(0.001, hi), 4))


def _eps(p: dict, rng: np.random.Generator, hi: float = 0.1) -> float:
    return p["eps"] if p.get("eps") is not None else float(np.round(rng.uniform(0.001, hi), 4))


def _stamp(reports: list[RobustnessReport], seed: int, **meta) -> list[RobustnessReport]:
    for r in reports:
        r.meta.setdefault("seed", seed)
        for k, v in meta.items():
            r.meta.setdefault(k, v)
    return reports


# -- distances ----------------------------------------------------------------

def _event_sup(P: JointDist, Q: JointDist) -> float:
    diff = P.flat - Q.flat
    N = diff.size
    masks = ((np.arange(2**N)[:, None] >> np.arange(N)) & 1).astype(float)
    return float((masks @ diff).max())


@experiment("tv_coherence", trials=1000, max_points=Param(64, "int", 2, 4096, doc="largest space size"))
def tv_coherence(p: dict, seed: int) -> list[RobustnessReport]:
    """Half-L1, optimal-coupling disagreement, dual-witness gap and event supremum agree."""
    rng = np.random.default_rng(seed)
    space = random_space(rng, 3, 6, max_profiles=p["max_points"])
    P, Q = random_joint(rng, space), random_joint(rng, space)
    d = tv_distance(P, Q)
    meta = {"delta": d, "points": space.num_profiles}
    out = [RobustnessReport("tv.coupling", optimal_coupling(P, Q).disagreement, d, "==", 1e-10, meta=meta),
           RobustnessReport("tv.witness", dual_witness(P, Q).gap(P, Q), d, "==", 1e-10, meta=meta)]
    if space.num_profiles <= 10:
        out.append(RobustnessReport("tv.events", _event_sup(P, Q), d, "==", 1e-10, meta=meta))
    return _stamp(out, seed)


@experiment("conditional_tv", trials=200, q_grid=Param(tuple(round(0.1 * j, 1) for j in range(1, 10)),
                                                       "floats", 0, 1, lo_open=True))
def conditional_tv(p: dict, seed: int) -> list[RobustnessReport]:
    """Mass of types whose conditional laws differ by more than 2 TV / q is at most q."""
    rng = np.random.default_rng(seed)
    space = random_space(rng, 3, 4, min_agents=2)
    P = random_joint(rng, space)
    Q = random_joint(rng, space) if rng.random() < 0.5 else perturb_within_tv(P, _delta(p, rng), "free", seed)
    out = []
    for q in p["q_grid"]:
        rep = verify_conditional_tv(P, Q, q)
        out.append(RobustnessReport(f"conditional_tv.q={q:g}", rep.exceedance, q, "<=", 1e-12,
                                    meta={"delta": rep.joint_tv, "q": q}))
    return _stamp(out, seed)


@experiment("weak_dependence", trials=200, delta=DELTA)
def weak_dependence(p: dict, seed: int) -> list[RobustnessReport]:
    """Distance to the product of own marginals is at most (n + 1) times the distance to any product."""
    rng = np.random.default_rng(seed)
    space = random_space(rng, 3, 4)
    Dp = JointDist.product(space, random_marginals(rng, space))
    D_hat = perturb_within_tv(Dp, _delta(p, rng), "free", seed)
    rep = verify_weak_dependence(D_hat, Dp)
    return _stamp([RobustnessReport("weak_dependence", rep.tv_to_marginal_product, rep.bound, "<=", 1e-12,
                                    meta={"delta": rep.eps, "n": rep.n})], seed)


@experiment("moving_mass", trials=200, eps=EPS)
def moving_mass_exp(p: dict, seed: int) -> list[RobustnessReport]:
    """Moving mass hits target marginals exactly within TV sum_i TV(D_i, D'_i) <= n eps."""
    rng = np.random.default_rng(seed)
    space = random_space(rng, 3, 4)
    D = random_joint(rng, space)
    eps = _eps(p, rng)
    targets = shift_marginals(rng, [D.marginal_array(i) for i in range(space.n)], eps)
    out = moving_mass(D, targets)
    err = max(float(np.abs(out.marginal_array(i) - targets[i]).max()) for i in range(space.n))
    per_agent = sum(0.5 * float(np.abs(D.marginal_array(i) - targets[i]).sum()) for i in range(space.n))
    d = tv_distance(D, out)
    meta = {"delta": d, "eps": eps, "n": space.n}
    return _stamp([RobustnessReport("moving_mass.marginals", err, 0.0, "<=", 1e-12, meta=meta),
                   RobustnessReport("moving_mass.tv", d, per_agent, "<=", 1e-12, meta=meta),
                   RobustnessReport("moving_mass.tv_n_eps", d, space.n * eps, "<=", 1e-12, meta=meta)], seed)


# -- Lipschitz and DSIC robustness --------------------------------------------

@experiment("lipschitz", trials=1000, delta=DELTA, max_agents=AGENTS, max_types=TYPES, max_allocations=ALLOCS)
def lipschitz(p: dict, seed: int) -> list[RobustnessReport]:
    """Expected objective moves by at most V TV; the dual-witness objective attains it."""
    rng = np.random.default_rng(seed)
    space = random_space(rng, p["max_agents"], p["max_types"])
    V = random_valuations(rng, space, p["max_allocations"])
    O = random_objective(rng, V)
    M = random_mechanism(rng, V)
    P = random_joint(rng, space)
    Q = random_joint(rng, space) if rng.random() < 0.5 else perturb_within_tv(P, _delta(p, rng), "free", seed)
    out = check_lipschitz(M, V, P, Q, O)
    scale = float(rng.choice([1.0, 2.5]))
    Ow, Mw = witness_objective(P, Q, V, scale)
    d = tv_distance(P, Q)
    gap = objective_eval(Mw, V, P, Ow) - objective_eval(Mw, V, Q, Ow)
    out.append(RobustnessReport("lipschitz.witness", gap, Ow.V * d, "==", 1e-9, meta={"delta": d, "V": Ow.V}))
    return _stamp(out, seed)


@experiment("dsic_robustness", trials=200, alpha=ALPHA, delta=DELTA, max_agents=AGENTS, max_types=TYPES,
            max_allocations=ALLOCS)
def dsic_robustness(p: dict, seed: int) -> list[RobustnessReport]:
    """An alpha-approximate DSIC mechanism for D stays good on any D_hat within TV delta."""
    rng = np.random.default_rng(seed)
    space = random_space(rng, p["max_agents"], p["max_types"])
    V = random_valuations(rng, space, p["max_allocations"])
    O = random_objective(rng, V)
    D = random_joint(rng, space)
    D_hat = perturb_within_tv(D, _delta(p, rng), "free", seed)
    alpha = _alpha(p, rng)
    opt = optimal_mechanism(D, V, "DSIC", O)
    M = mix_with_null(opt.mechanism, alpha)
    return _stamp(check_dsic_robustness(D, D_hat, V, O, M, alpha, opt.value, seed=seed), seed, objective=O.kind)


@experiment("prophet_robustness", trials=200, delta=DELTA, max_agents=AGENTS, max_types=TYPES)
def prophet_robustness(p: dict, seed: int) -> list[RobustnessReport]:
    """Welfare of a sequential posted-price mechanism moves by at most V TV."""
    rng = np.random.default_rng(seed)
    V = random_single_item(rng, int(rng.integers(1, p["max_agents"] + 1)), p["max_types"])
    prices = [float(rng.choice(np.arange(0.5, V.H + 0.5, 0.5))) for _ in range(V.n)]
    order = rng.permutation(V.n).tolist()
    M = posted_prices(V, prices, order)
    D = random_joint(rng, V.space)
    D_hat = perturb_within_tv(D, _delta(p, rng), "free", seed)
    return _stamp(check_prophet_robustness(M, V, D, D_hat, seed=seed), seed)


@experiment("prophet_product", trials=200, eps=EPS, max_agents=AGENTS, max_types=TYPES)
def prophet_product(p: dict, seed: int) -> list[RobustnessReport]:
    """Per-marginal perturbations of size eps move posted-price welfare by at most V n eps."""
    rng = np.random.default_rng(seed)
    V = random_single_item(rng, int(rng.integers(1, p["max_agents"] + 1)), p["max_types"])
    prices = [float(rng.choice(np.arange(0.5, V.H + 0.5, 0.5))) for _ in range(V.n)]
    M = posted_prices(V, prices, rng.permutation(V.n).tolist())
    marg = random_marginals(rng, V.space)
    eps = _eps(p, rng)
    D = JointDist.product(V.space, marg)
    D_hat = JointDist.product(V.space, shift_marginals(rng, marg, eps))
    O = Objective.welfare(V)
    d = tv_distance(D, D_hat)
    gap = abs(objective_eval(M, V, D, O) - objective_eval(M, V, D_hat, O))
    meta = {"delta": d, "eps": eps, "V": O.V, "n": V.n}
    return _stamp([RobustnessReport("prophet_product.tv", d, V.n * eps, "<=", 1e-12, meta=meta),
                   RobustnessReport("prophet_product.gap", gap, O.V * V.n * eps, "<=", 1e-9, meta=meta)], seed)


# -- Bayesian robustness ------------------------------------------------------

@experiment("bic_robustness", trials=200, delta=DELTA, q_grid=QGRID, max_agents=AGENTS, max_types=TYPES,
            max_allocations=ALLOCS)
def bic_robustness(p: dict, seed: int) -> list[RobustnessReport]:
    """A BIC mechanism for D is (8 H delta / q, q)-BIC on a same-support D_hat."""
    rng = np.random.default_rng(seed)
    space = random_space(rng, p["max_agents"], p["max_types"])
    V = random_valuations(rng, space, p["max_allocations"])
    O = random_objective(rng, V)
    D = random_joint(rng, space)
    D_hat = perturb_within_tv(D, _delta(p, rng), "same_support", seed)
    M = optimal_mechanism(D, V, "BIC", O).mechanism
    return _stamp(check_bic_robustness(D, D_hat, V, O, M, p["q_grid"], seed=seed), seed, objective=O.kind)


@experiment("brustle_extension", trials=100, delta=Param(0.01, lo=0, hi=1), q_grid=QGRID,
            max_agents=Param(2, "int", 1, 3), max_types=Param(3, "int", 2, 4))
def brustle_extension(p: dict, seed: int) -> list[RobustnessReport]:
    """Revenue-optimal BIC mechanism for a product prior, run on a nearby correlated prior."""
    rng = np.random.default_rng(seed)
    V = random_single_item(rng, int(rng.integers(1, p["max_agents"] + 1)), p["max_types"])
    Dp = JointDist.product(V.space, random_marginals(rng, V.space))
    D = perturb_within_tv(Dp, p["delta"], "same_support", seed)
    opt = optimal_mechanism(Dp, V, "BIC", Objective.revenue(V))
    return _stamp(check_brustle_extension(D, Dp, V, opt.mechanism, 1.0, opt.value, p["q_grid"], seed=seed), seed)


# -- transformations ----------------------------------------------------------

@experiment("dsic_extension", trials=100, max_agents=AGENTS, max_types=TYPES)
def dsic_extension(p: dict, seed: int) -> list[RobustnessReport]:
    """Extending a DSIC mechanism from kept types keeps it DSIC and ex-post IR."""
    rng = np.random.default_rng(seed)
    V = random_single_item(rng, int(rng.integers(1, p["max_agents"] + 1)), p["max_types"])
    R = random_restriction(rng, V.space)
    Vp = V.restrict(R.plus)
    Dp = random_joint(rng, Vp.space)
    O = Objective.revenue(Vp) if rng.random() < 0.5 else Objective.welfare(Vp)
    M_plus = optimal_mechanism(Dp, Vp, "DSIC", O).mechanism
    return _stamp(check_dsic_extension(M_plus, V, R, seed=seed), seed)


@experiment("bic_extension", trials=100, delta=Param(None, lo=0, hi=1), max_agents=AGENTS, max_types=TYPES,
            max_allocations=ALLOCS)
def bic_extension(p: dict, seed: int) -> list[RobustnessReport]:
    """Extending a BIC mechanism from kept types: IR, interim-regret chain, revenue bound."""
    rng = np.random.default_rng(seed)
    space = random_space(rng, p["max_agents"], p["max_types"])
    V = random_valuations(rng, space, p["max_allocations"])
    marg = random_marginals(rng, space)
    D = JointDist.product(space, marg)
    mix = _delta(p, rng, 0.2)
    D_hat = JointDist.product(space, shift_marginals(rng, marg, mix))
    M = optimal_mechanism(D, V, "BIC", Objective.revenue(V)).mechanism
    R = random_restriction(rng, space)
    return _stamp(check_bic_extension(M, V, R, D, D_hat, seed=seed), seed)


@experiment("epsq_reduction", trials=100, max_agents=AGENTS, max_types=TYPES, max_allocations=ALLOCS)
def epsq_reduction(p: dict, seed: int) -> list[RobustnessReport]:
    """Cleaning an (eps, q)-BIC mechanism costs at most n q V revenue."""
    rng = np.random.default_rng(seed)
    space = random_space(rng, p["max_agents"], p["max_types"])
    V = random_valuations(rng, space, p["max_allocations"])
    marg = random_marginals(rng, space)
    D = JointDist.product(space, marg)
    D_design = JointDist.product(space, shift_marginals(rng, marg, float(rng.uniform(0.1, 0.5))))
    M = optimal_mechanism(D_design, V, "BIC", Objective.revenue(V)).mechanism
    rep = bic_report(M, V, D)
    eps = float(rng.uniform(0, 1)) * rep.eps_star
    q = rep.q_at(eps)
    return _stamp(check_epsq_reduction(M, V, D, eps, q, seed=seed), seed)


# -- marginals ----------------------------------------------------------------

@experiment("marginal_robustness", trials=100, eps=EPS, alpha=Param(1.0, lo=0, hi=1),
            max_types=Param(4, "int", 2, 4))
def marginal_robustness(p: dict, seed: int) -> list[RobustnessReport]:
    """Max-min optimal DSIC mechanism for given marginals, evaluated on shifted marginals."""
    rng = np.random.default_rng(seed)
    V = random_single_item(rng, 2, p["max_types"])
    O = Objective.revenue(V) if rng.random() < 0.5 else Objective.welfare(V)
    marg = random_marginals(rng, V.space)
    eps = _eps(p, rng)
    marg_hat = shift_marginals(rng, marg, eps)
    mm = maxmin_mechanism(marg, V, O)
    alpha = p["alpha"]
    M = mm.mechanism if alpha == 1.0 else mix_with_null(mm.mechanism, alpha)
    return _stamp(check_marginal_robustness(marg, marg_hat, V, O, M, alpha, mm.value, seed=seed), seed,
                  objective=O.kind)


# -- simple versus optimal ----------------------------------------------------

def _near_product_items(rng: np.random.Generator, max_values: int) -> JointDist:
    vals = [sorted(rng.choice(np.arange(1, 6), int(rng.integers(1, max_values)), replace=False).tolist())
            for _ in range(2)]
    items = TypeSpace.from_values(vals)
    prod = JointDist.product(items, random_marginals(rng, items))
    w = float(rng.uniform(0, 0.2))
    return JointDist.normalized(items, (1 - w) * prod.mass + w * random_joint(rng, items).mass)


@experiment("simple_vs_optimal", trials=100, max_values=Param(4, "int", 2, 5))
def simple_vs_optimal(p: dict, seed: int) -> list[RobustnessReport]:
    """Better of separate and bundle pricing versus optimal revenue near a product prior."""
    rng = np.random.default_rng(seed)
    items = _near_product_items(rng, p["max_values"])
    return _stamp(check_simple_vs_optimal(items, seed=seed), seed)


@experiment("gap_certificate", trials=100, max_values=Param(4, "int", 2, 5))
def gap_certificate_exp(p: dict, seed: int) -> list[RobustnessReport]:
    """Distance from product distributions implied by a large optimal-to-bundle revenue ratio."""
    rng = np.random.default_rng(seed)
    items = _near_product_items(rng, p["max_values"])
    return _stamp(gap_certificate(items, seed=seed), seed)


# -- fields -------------------------------------------------------------------

@experiment("kl_tv_bound", trials=100, max_nodes=Param(4, "int", 2, 6), max_alphabet=Param(4, "int", 2, 6))
def kl_tv_bound(p: dict, seed: int) -> list[RobustnessReport]:
    """TV from a pairwise field to its node-potential product versus the max weighted degree."""
    rng = np.random.default_rng(seed)
    mrf = random_pairwise_mrf(rng, p["max_nodes"], p["max_alphabet"], scale=float(rng.choice([0.05, 0.3, 1.0])))
    return _stamp(check_kl_tv_bound(mrf, seed=seed), seed)


@experiment("ratio_bound", trials=100, max_nodes=Param(4, "int", 2, 6), max_alphabet=Param(4, "int", 2, 6),
            events=Param(1000, "int", 0, 10**6))
def ratio_bound(p: dict, seed: int) -> list[RobustnessReport]:
    """Dependence ratio of singleton and random events within exp(+-4 Delta)."""
    rng = np.random.default_rng(seed)
    mrf = random_pairwise_mrf(rng, p["max_nodes"], p["max_alphabet"], scale=float(rng.choice([0.05, 0.3, 1.0])))
    return _stamp(check_ratio_bound(mrf, p["events"], seed), seed)


@experiment("mrfgap", k=Param(0.1, lo=0, hi=0.5, lo_open=True, hi_open=True))
def mrfgap(p: dict, seed: int) -> list[RobustnessReport]:
    """Two-item gap instance: small distance to product, large weighted degree."""
    k = p["k"]
    out = check_mrfgap(k)
    g = mrfgap_instance(k)
    out += check_simple_vs_optimal(g.joint, seed=seed)
    return _stamp(out, seed, k=k)


# -- worked examples ----------------------------------------------------------

@experiment("pointmass", value=Param(1.0, lo=0, lo_open=True),
            deltas=Param((0.05, 0.1, 0.3), "floats", 0, 1))
def pointmass(p: dict, seed: int) -> list[RobustnessReport]:
    """Posting price V0 to one agent: revenue V0 on a point mass and (1 - delta) V0 after losing delta mass."""
    v0 = p["value"]
    V = Valuations.single_item(TypeSpace.from_values([[v0]]))
    M = posted_prices(V, [v0])
    P = JointDist.point(V.space, (1,))
    out = []
    for d in p["deltas"]:
        Q = JointDist(V.space, np.array([d, 1 - d]))
        meta = {"delta": d, "alpha": 1.0}
        for O in (Objective.revenue(V), Objective.welfare(V)):
            out.append(RobustnessReport(f"pointmass.{O.kind}.P", objective_eval(M, V, P, O), v0, "==", 1e-12,
                                        meta={**meta, "V": O.V}))
            out.append(RobustnessReport(f"pointmass.{O.kind}.Q", objective_eval(M, V, Q, O), (1 - d) * v0, "==",
                                        1e-12, meta={**meta, "V": O.V}))
            out += check_lipschitz(M, V, P, Q, O)
            out += check_dsic_robustness(P, Q, V, O, M, 1.0, seed=seed)
    return _stamp(out, seed)


def two_bidder_instance(shift: float) -> tuple[Valuations, Mechanism, JointDist, JointDist]:
    """Two bidders with values {1, 2}; bidder 0 wins at 1.5 on a high bid, at 1
    when both bid low, and bidder 1 wins at 2 when only it bids high."""
    V = Valuations.single_item(TypeSpace.from_values([[1.0, 2.0], [1.0, 2.0]]))

    def rule(t):
        lot, pay = np.zeros(3), np.zeros(2)
        if t[0] == 2:
            lot[1], pay[0] = 1.0, 1.5
        elif t[0] == 1 and t[1] == 2:
            lot[2], pay[1] = 1.0, 2.0
        elif t[0] == 1:
            lot[1], pay[0] = 1.0, 1.0
        else:
            lot[0] = 1.0
        return lot, pay

    M = Mechanism.from_rule(V.space, 3, V.H, rule)
    D = JointDist.product(V.space, [[0, 0.5, 0.5], [0, 0.5, 0.5]])
    D_hat = JointDist.product(V.space, [[0, 0.5, 0.5], [0, 0.5 + shift, 0.5 - shift]])
    return V, M, D, D_hat


@experiment("two_bidder", shifts=Param((0.05, 0.1), "floats", 0, 0.5), q_grid=QGRID)
def two_bidder(p: dict, seed: int) -> list[RobustnessReport]:
    """A BIC mechanism that becomes exactly eps-BIC when one marginal shifts by eps."""
    out = []
    for s in p["shifts"]:
        V, M, D, D_hat = two_bidder_instance(s)
        meta = {"delta": s, "H": V.H}
        out.append(RobustnessReport("two_bidder.tv", tv_distance(D, D_hat), s, "==", 1e-12, meta=meta))
        out.append(RobustnessReport("two_bidder.eps_uniform", bic_report(M, V, D).eps_star, 0.0, "==", 1e-12,
                                    meta=meta))
        out.append(RobustnessReport("two_bidder.eps_shifted", bic_report(M, V, D_hat).eps_star, s, "==", 1e-12,
                                    meta=meta))
        out += check_bic_robustness(D, D_hat, V, Objective.revenue(V), M, p["q_grid"], seed=seed)
    return _stamp(out, seed)


# -- synthesis ----------------------------------------------------------------

@experiment("synthesize", uses_instance=True, ic=Param("DSIC", "str", choices=("DSIC", "BIC")),
            max_agents=AGENTS, max_types=TYPES, max_allocations=ALLOCS)
def synthesize(p: dict, seed: int) -> list[RobustnessReport]:
    """Solve the mechanism LP and certify incentives, participation and the objective value."""
    inst = p.get("instance")
    rng = np.random.default_rng(seed)
    if inst is not None:
        V, D, O = inst.valuations, inst.prior, inst.objective
    else:
        space = random_space(rng, p["max_agents"], p["max_types"])
        V = random_valuations(rng, space, p["max_allocations"])
        O = random_objective(rng, V)
        D = random_joint(rng, space)
    sol = optimal_mechanism(D, V, p["ic"], O)
    M = sol.mechanism
    regret = dsic_regret(M, V) if p["ic"] == "DSIC" else bic_report(M, V, D).eps_star
    meta = {"V": O.V, "H": V.H, "n": V.n, "value": sol.value}
    return _stamp([RobustnessReport("synthesize.ir", ir_margin(M, V), 0.0, ">=", 1e-9, meta=meta),
                   RobustnessReport("synthesize.regret", regret, 0.0, "<=", 1e-9, meta=meta),
                   RobustnessReport("synthesize.value", objective_eval(M, V, D, O), sol.certificate.value, "==",
                                    1e-7, meta=meta)], seed)


def run_trial(name: str, params: dict, seed: int) -> list[RobustnessReport]:
    return REGISTRY[name].run(params, seed)


def list_experiments() -> list[tuple[str, str]]:
    return [(name, REGISTRY[name].doc) for name in sorted(REGISTRY)]
