import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from robustmech.dist import JointDist, NotProductError, TypeSpace, perturb_within_tv, tv_distance
from robustmech.experiments import mix_with_null, random_joint, random_valuations, run_trial, two_bidder_instance
from robustmech.mechanism import Mechanism, Objective, Valuations, objective_eval
from robustmech.mrf import mrfgap_instance
from robustmech.robustness import (
    FAIL, FLAG, PASS, VACUOUS, RobustnessReport, SupportMismatchError, check_bic_robustness,
    check_brustle_extension, check_dsic_robustness, check_lipschitz, check_marginal_robustness,
    check_prophet_robustness, check_simple_vs_optimal, gap_certificate, inner_min_distribution,
    maxmin_mechanism, simple_vs_optimal_quantities, witness_objective,
)
from robustmech.synth import brev, optimal_mechanism, posted_prices, srev, threshold_policy


def single(values):
    return Valuations.single_item(TypeSpace.from_values(values))


def second_price(V):
    def rule(t):
        vals = [V.space.value(i, t[i]) for i in range(V.n)]
        lot, pay = np.zeros(V.n + 1), np.zeros(V.n)
        if max(vals) <= 0:
            lot[0] = 1.0
            return lot, pay
        w = vals.index(max(vals))
        lot[w + 1] = 1.0
        pay[w] = max(vals[:w] + vals[w + 1:] + [0.0])
        return lot, pay
    return Mechanism.from_rule(V.space, V.n + 1, V.H, rule)


def test_report_orientation():
    assert RobustnessReport("a", 1.0, 0.5).slack == 0.5
    assert RobustnessReport("a", 1.0, 0.5, "<=").status == FAIL
    eq = RobustnessReport("a", 1.0, 1.0 + 1e-12, "==", 1e-9)
    assert eq.passed and eq.slack <= 0
    assert RobustnessReport("a", 0.0, 1e-8).passed
    assert not RobustnessReport("a", 0.0, 1e-6).passed
    v = RobustnessReport.vacuous("a", "why")
    assert v.status == VACUOUS and math.isnan(v.slack)
    with pytest.raises(ValueError):
        RobustnessReport("a", 0.0, 0.0, "<")


def test_lipschitz_identical():
    V = single([[1, 2]])
    D = JointDist.normalized(V.space, [1, 2, 3])
    reps = check_lipschitz(posted_prices(V, [1.0]), V, D, D, Objective.revenue(V))
    assert all(r.passed and r.slack == 0 for r in reps)


def test_lipschitz_pointmass():
    V0, delta = 2.0, 0.1
    V = single([[V0]])
    P = JointDist.point(V.space, (1,))
    Q = perturb_within_tv(P, delta, mode="free", target=(0,))
    O = Objective.revenue(V)
    reps = check_lipschitz(posted_prices(V, [V0]), V, P, Q, O)
    assert reps[0].measured == pytest.approx((1 - delta) * V0)
    assert all(r.passed for r in reps)
    # the objective range here is 2 V0, so the bound is twice the realized gap
    assert reps[0].slack == pytest.approx(delta * O.V - delta * V0)


@given(st.integers(0, 2**31), st.floats(0.1, 10))
def test_lipschitz_equality_with_witness(seed, scale):
    rng = np.random.default_rng(seed)
    V = random_valuations(rng, TypeSpace.from_sizes([3, 2]), 3)
    P, Q = random_joint(rng, V.space), random_joint(rng, V.space)
    O, M = witness_objective(P, Q, V, scale)
    gap = objective_eval(M, V, P, O) - objective_eval(M, V, Q, O)
    assert abs(gap - O.V * tv_distance(P, Q)) <= 1e-9


def test_dsic_robustness_identical_prior():
    V = single([[1, 2], [1, 3]])
    D = JointDist.normalized(V.space, np.arange(1, 10))
    O = Objective.revenue(V)
    opt = optimal_mechanism(D, V, "DSIC", O)
    M = mix_with_null(opt.mechanism, 0.5)
    (r,) = check_dsic_robustness(D, D, V, O, M, 0.5, opt_D=opt.value)
    assert r.passed
    assert r.measured == pytest.approx(0.5 * opt.value, abs=1e-7)
    assert r.bound == pytest.approx(0.5 * opt.value, abs=1e-7)


def test_dsic_robustness_pointmass():
    V0, delta = 1.0, 0.2
    V = single([[V0]])
    D = JointDist.point(V.space, (1,))
    D_hat = perturb_within_tv(D, delta, mode="free", target=(0,))
    O = Objective.revenue(V)
    (r,) = check_dsic_robustness(D, D_hat, V, O, posted_prices(V, [V0]), 1.0)
    assert r.passed
    assert r.measured == pytest.approx((1 - delta) * V0)


def test_dsic_robustness_vacuous_preconditions():
    V, M, D, _ = two_bidder_instance(0.0)
    O = Objective.revenue(V)
    (r,) = check_dsic_robustness(D, D, V, O, M, 1.0)
    assert r.status == VACUOUS
    (r,) = check_dsic_robustness(D, D, V, O, posted_prices(V, [0.5, 0.5]), 1.0)
    assert r.status == VACUOUS


def test_dsic_robustness_random_trials():
    for seed in range(60):
        for r in run_trial("dsic_robustness", {"alpha": None, "delta": None, "max_agents": 2,
                                                "max_types": 3, "max_allocations": 3}, seed):
            assert r.status in (PASS, VACUOUS), (seed, r)


def test_bic_robustness_identical_and_two_bidder():
    V, M, D, D_hat = two_bidder_instance(0.1)
    O = Objective.revenue(V)
    same = check_bic_robustness(D, D, V, O, M)
    assert all(r.passed for r in same)
    assert all(r.measured == 0.0 for r in same if ".eps." in r.tag)
    reps = check_bic_robustness(D, D_hat, V, O, M)
    assert all(r.passed for r in reps)
    assert all(r.measured == pytest.approx(0.1) for r in reps if r.tag == "bic_robustness.eps.q=0.1")


def test_bic_robustness_support_mismatch():
    V, M, D, _ = two_bidder_instance(0.0)
    other = JointDist.product(V.space, [[0.1, 0.45, 0.45], [0, 0.5, 0.5]])
    with pytest.raises(SupportMismatchError):
        check_bic_robustness(D, other, V, Objective.revenue(V), M)


def test_bic_robustness_random_trials():
    for seed in range(60):
        for r in run_trial("bic_robustness", {"delta": None, "q_grid": (0.1, 0.25, 0.5, 0.9), "max_agents": 2,
                                               "max_types": 3, "max_allocations": 3}, seed):
            assert r.status in (PASS, VACUOUS), (seed, r)


def test_brustle_zero_distance():
    V = single([[1, 2], [1, 2]])
    Dp = JointDist.product(V.space, [[0.2, 0.4, 0.4], [0.3, 0.3, 0.4]])
    opt = optimal_mechanism(Dp, V, "BIC", Objective.revenue(V))
    reps = check_brustle_extension(Dp, Dp, V, opt.mechanism, 1.0, opt_p=opt.value)
    assert all(r.passed for r in reps)
    rev = [r for r in reps if r.tag == "brustle.revenue.C=1"][0]
    assert rev.measured == pytest.approx(opt.value, abs=1e-7)
    assert rev.bound == pytest.approx(opt.value, abs=1e-7)


def test_brustle_two_agent_perturbed():
    rng = np.random.default_rng(4)
    V = single([[1, 2], [1, 3]])
    Dp = JointDist.product(V.space, [rng.dirichlet(np.ones(3)) for _ in range(2)])
    D = perturb_within_tv(Dp, 0.01, seed=4)
    opt = optimal_mechanism(Dp, V, "BIC", Objective.revenue(V))
    reps = check_brustle_extension(D, Dp, V, opt.mechanism, 1.0, opt_p=opt.value)
    assert all(r.passed for r in reps if ".eps." in r.tag)
    assert [r.status for r in reps if r.tag == "brustle.revenue.C=10"] == [PASS]
    assert all(r.status in (PASS, FLAG) for r in reps)


def test_brustle_single_agent():
    V = single([[1, 2, 3]])
    Dp = JointDist.product(V.space, [[0.1, 0.3, 0.3, 0.3]])
    D = perturb_within_tv(Dp, 0.02, seed=1)
    opt = optimal_mechanism(Dp, V, "BIC", Objective.revenue(V))
    reps = check_brustle_extension(D, Dp, V, opt.mechanism, 1.0, opt_p=opt.value)
    rev = [r for r in reps if r.tag == "brustle.revenue.C=1"][0]
    d = tv_distance(D, Dp)
    assert rev.bound == pytest.approx(rev.meta["opt_D"] - 2 * Objective.revenue(V).V * d ** 0.25)
    assert all(r.status in (PASS, FLAG) for r in reps)


def test_brustle_needs_product():
    V = single([[1], [1]])
    D = JointDist.normalized(V.space, [1, 2, 3, 4])
    with pytest.raises(NotProductError):
        check_brustle_extension(D, D, V, second_price(V), 1.0)


def transport_vertices(marginals):
    """Vertices of the 2-agent transportation polytope by basis enumeration."""
    a, b = (np.asarray(m) for m in marginals)
    ka, kb = len(a), len(b)
    A = np.zeros((ka + kb, ka * kb))
    for i in range(ka):
        A[i, i * kb:(i + 1) * kb] = 1
    for j in range(kb):
        A[ka + j, j::kb] = 1
    rhs = np.concatenate([a, b])
    rank = np.linalg.matrix_rank(A)
    out = []
    for cols in itertools.combinations(range(ka * kb), rank):
        sub = A[:, cols]
        if np.linalg.matrix_rank(sub) < rank:
            continue
        x_sub, *_ = np.linalg.lstsq(sub, rhs, rcond=None)
        if np.allclose(sub @ x_sub, rhs, atol=1e-12) and np.all(x_sub >= -1e-12):
            x = np.zeros(ka * kb)
            x[list(cols)] = x_sub
            out.append(x)
    return out


def test_inner_min_matches_vertex_enumeration():
    V = single([[1, 2], [1, 2]])
    M = second_price(V)
    O = Objective.revenue(V)
    marg = [np.array([0, 0.5, 0.5])] * 2
    f = O.per_profile(M).reshape(-1)
    best = min(f @ x for x in transport_vertices(marg))
    D, val = inner_min_distribution(M, V, O, marg)
    assert best == pytest.approx(1.0)
    assert val == pytest.approx(best, abs=1e-9)
    np.testing.assert_allclose(D.marginal_array(0), marg[0], atol=1e-9)


@settings(max_examples=25)
@given(st.integers(0, 2**31))
def test_inner_min_random_vertices(seed):
    rng = np.random.default_rng(seed)
    V = random_valuations(rng, TypeSpace.from_sizes([3, 3]), 3)
    M = mix_with_null(optimal_mechanism(random_joint(rng, V.space), V, "DSIC", Objective.welfare(V)).mechanism, 1.0)
    O = Objective.welfare(V)
    marg = [rng.dirichlet(np.ones(3)) for _ in range(2)]
    f = O.per_profile(M).reshape(-1)
    D, val = inner_min_distribution(M, V, O, marg)
    assert val == pytest.approx(min(f @ x for x in transport_vertices(marg)), abs=1e-9)
    assert val <= objective_eval(M, V, JointDist.product(V.space, marg), O) + 1e-9


def test_inner_min_point_marginals():
    V = single([[1, 2], [1, 2]])
    M = second_price(V)
    O = Objective.revenue(V)
    D, val = inner_min_distribution(M, V, O, [[0, 0, 1], [0, 1, 0]])
    assert val == pytest.approx(objective_eval(M, V, JointDist.point(V.space, (2, 1)), O))


def test_maxmin_beats_posted_prices():
    V = single([[1, 2], [1, 2]])
    O = Objective.revenue(V)
    marg = [np.array([0, 0.5, 0.5])] * 2
    mm = maxmin_mechanism(marg, V, O)
    best_posted = max(inner_min_distribution(posted_prices(V, list(p)), V, O, marg)[1]
                      for p in itertools.product([1.0, 2.0], repeat=2))
    assert mm.value >= best_posted - 1e-9
    _, achieved = inner_min_distribution(mm.mechanism, V, O, marg)
    assert achieved == pytest.approx(mm.value, abs=1e-7)


def test_maxmin_permutation_invariance():
    V = single([[1, 3], [1, 3], [2]])
    O = Objective.revenue(V)
    m, m3 = np.array([0.2, 0.5, 0.3]), np.array([0.4, 0.6])
    a = maxmin_mechanism([m, m, m3], V, O).value
    V2 = single([[1, 3], [2], [1, 3]])
    b = maxmin_mechanism([m, m3, m], V2, Objective.revenue(V2)).value
    assert a == pytest.approx(b, abs=1e-7)


def test_marginal_robustness_identical_and_shifted():
    V = single([[1, 2], [1, 2]])
    O = Objective.revenue(V)
    marg = [np.array([0, 0.5, 0.5])] * 2
    mm = maxmin_mechanism(marg, V, O)
    reps = check_marginal_robustness(marg, marg, V, O, mm.mechanism, 1.0, maxmin_value=mm.value)
    assert all(r.passed for r in reps)
    assert reps[0].measured == pytest.approx(mm.value, abs=1e-7)
    shifted = [np.array([0, 0.52, 0.48]), np.array([0.02, 0.48, 0.5])]
    reps = check_marginal_robustness(marg, shifted, V, O, mm.mechanism, 1.0, maxmin_value=mm.value)
    assert reps[0].meta["delta"] == pytest.approx(0.02)
    assert all(r.passed for r in reps)


def test_marginal_robustness_random_trials():
    for seed in range(30):
        for r in run_trial("marginal_robustness", {"eps": None, "alpha": 1.0, "max_types": 3}, seed):
            assert r.status in (PASS, VACUOUS), (seed, r)


def test_prophet_identical_and_product_shift():
    V = single([[1, 4], [2, 3]])
    margs = [np.array([0.2, 0.5, 0.3]), np.array([0.3, 0.3, 0.4])]
    D = JointDist.product(V.space, margs)
    M = threshold_policy(V, 1.5)
    assert [r.slack for r in check_prophet_robustness(M, V, D, D)] == [0.0, 0.0]
    eps = 0.05
    shifted = [(1 - eps) * m + eps * np.eye(len(m))[0] for m in margs]
    D_hat = JointDist.product(V.space, shifted)
    W = Objective.welfare(V)
    gap = abs(objective_eval(M, V, D, W) - objective_eval(M, V, D_hat, W))
    assert gap <= W.V * 2 * eps + 1e-12
    assert all(r.passed for r in check_prophet_robustness(M, V, D, D_hat))


def test_prophet_random_trials():
    for seed in range(100):
        for r in run_trial("prophet_robustness", {"delta": None, "max_agents": 3, "max_types": 4}, seed):
            assert r.passed, (seed, r)


def test_simple_vs_optimal_pointmass():
    items = JointDist.point(TypeSpace.from_values([[1.0, 2.0], [3.0]]), (2, 1))
    s = simple_vs_optimal_quantities(items)
    assert s.srev == pytest.approx(5.0) and s.brev == pytest.approx(5.0)
    assert s.rev == pytest.approx(5.0, abs=1e-7)


def test_simple_vs_optimal_product_priors():
    rng = np.random.default_rng(11)
    for _ in range(15):
        space = TypeSpace.from_values([[1.0, 2.0], [1.0, 3.0]])
        items = JointDist.product(space, [rng.dirichlet(np.ones(3)) for _ in range(2)])
        (r,) = check_simple_vs_optimal(items)
        assert r.meta["delta"] == pytest.approx(0.0, abs=1e-15)
        assert r.passed
        assert max(srev(items)[0], brev(items)[0]) >= r.meta["rev"] / 6 - 1e-6


def test_simple_vs_optimal_gap_instance():
    g = mrfgap_instance(0.1)
    items = JointDist(TypeSpace.from_values([[1.0, 2.0], [1.0, 2.0]]), g.joint.flat)
    (r,) = check_simple_vs_optimal(items)
    assert r.meta["delta"] == pytest.approx(0.018, abs=1e-12)
    assert r.passed


def test_gap_certificate_vacuous_at_small_ratio():
    items = JointDist.point(TypeSpace.from_values([[1.0], [1.0]]), (1, 1))
    reps = gap_certificate(items)
    assert [r.status for r in reps] == [VACUOUS, VACUOUS]
