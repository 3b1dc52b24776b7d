import itertools

import numpy as np
import pytest
from hypothesis import given, strategies as st

from robustmech.dist import JointDist, TypeSpace, perturb_within_tv
from robustmech.experiments import random_mechanism, random_valuations, two_bidder_instance
from robustmech.mechanism import (
    Mechanism, Objective, Valuations, bic_report, dsic_regret, dumps_mechanism,
    dumps_valuations, expost_ir_check, loads_mechanism, loads_valuations, objective_eval,
    utility, utility_bounds_check,
)
from robustmech.synth import optimal_mechanism, posted_prices


def second_price(V):
    n = V.n

    def rule(t):
        vals = [V.space.value(i, t[i]) for i in range(n)]
        lot, pay = np.zeros(n + 1), np.zeros(n)
        top = max(vals)
        if top <= 0:
            lot[0] = 1.0
            return lot, pay
        w = vals.index(top)
        lot[w + 1] = 1.0
        pay[w] = max(vals[:w] + vals[w + 1:] + [0.0])
        return lot, pay

    return Mechanism.from_rule(V.space, n + 1, V.H, rule)


def first_price(V):
    n = V.n

    def rule(t):
        vals = [V.space.value(i, t[i]) for i in range(n)]
        lot, pay = np.zeros(n + 1), np.zeros(n)
        if max(vals) <= 0:
            lot[0] = 1.0
            return lot, pay
        w = vals.index(max(vals))
        lot[w + 1], pay[w] = 1.0, vals[w]
        return lot, pay

    return Mechanism.from_rule(V.space, n + 1, V.H, rule)


def ir_random_mechanism(rng, V, subsidy=False):
    """Random lotteries; payments a random fraction of the truthful value,
    or a random transfer in [-H, 0] when ``subsidy``."""
    M = random_mechanism(rng, V)
    pay = np.zeros_like(M.payments)
    for t in V.space.profiles():
        for i in range(V.n):
            if t[i] == 0:
                continue
            pay[t + (i,)] = (-rng.uniform(0, V.H) if subsidy
                             else rng.uniform(0, 1) * (M.lottery[t] @ V.table[i][t[i]]))
    return Mechanism(V.space, M.lottery, pay, V.H)


def brute_regret(M, V):
    worst = 0.0
    for i in range(V.n):
        for t in V.space.profiles():
            others = t[:i] + t[i + 1:]
            for r in range(V.space.sizes[i]):
                worst = max(worst, utility(M, V, i, t[i], r, others) - utility(M, V, i, t[i], t[i], others))
    return worst


def test_null_mechanism_utility_zero():
    V = Valuations.single_item(TypeSpace.from_values([[1, 2], [3]]))
    M = Mechanism.null(V.space, 3, V.H)
    for t in V.space.profiles():
        for r in range(3):
            assert utility(M, V, 0, t[0], r, t[1:]) == 0.0
    rep = expost_ir_check(M, V)
    assert rep.ok and rep.worst == 0.0


def test_posted_price_utility():
    V = Valuations.single_item(TypeSpace.from_values([[1, 3]]))
    M = posted_prices(V, [2.0])
    assert utility(M, V, 0, 2, 2, ()) == pytest.approx(1.0)
    assert expost_ir_check(M, V).ok
    assert utility_bounds_check(M, V).ok
    assert dsic_regret(M, V) <= 1e-9


def test_utility_matches_lottery_sum(rng):
    V = random_valuations(rng, TypeSpace.from_sizes([3, 2]), 4)
    M = random_mechanism(rng, V)
    for t in V.space.profiles():
        for i in range(2):
            for s in range(V.space.sizes[i]):
                prof = list(t)
                direct = sum(M.lottery[t][a] * V.table[i][s, a] for a in range(V.num_allocations))
                others = tuple(prof[:i] + prof[i + 1:])
                assert utility(M, V, i, s, t[i], others) == pytest.approx(direct - M.payments[t][i], abs=1e-12)


def test_ir_flags_negative_utility_and_bottom_payment():
    V = Valuations.single_item(TypeSpace.from_values([[1]]))
    lot = np.array([[1.0, 0.0], [0.0, 1.0]])
    M = Mechanism(V.space, lot, np.array([[0.0], [1.5]]), 2.0)
    rep = expost_ir_check(M, V)
    assert not rep.ok
    assert rep.worst == pytest.approx(-0.5)
    V2 = Valuations.single_item(TypeSpace.from_values([[1], [1]]))
    lot2 = np.zeros((2, 2, 3))
    lot2[..., 0] = 1.0
    pay2 = np.zeros((2, 2, 2))
    pay2[0, 1, 0] = 0.5
    rep2 = expost_ir_check(Mechanism(V2.space, lot2, pay2, 1.0), V2)
    assert ("bottom_pays", 0, 0, 1, 0.5) in rep2.violations


def test_utility_bounds_on_random_ir_mechanisms():
    rng = np.random.default_rng(1)
    for _ in range(500):
        space = TypeSpace.from_sizes([int(rng.integers(2, 4)) for _ in range(int(rng.integers(1, 3)))])
        V = random_valuations(rng, space, 3)
        M = ir_random_mechanism(rng, V)
        assert expost_ir_check(M, V).ok
        assert utility_bounds_check(M, V).ok


def test_utility_lower_bound_needs_nonnegative_payments():
    # a subsidy of H on a misreport drops the gain below -H while IR still holds
    space = TypeSpace.from_sizes([3])
    V = Valuations(space, ("null", "item"), (np.array([[0, 0], [0, 1], [0, 1]]),), 1.0)
    lot = np.array([[1.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    M = Mechanism(space, lot, np.array([[0.0], [0.0], [-1.0]]), 1.0)
    assert expost_ir_check(M, V).ok
    rep = utility_bounds_check(M, V)
    assert not rep.ok
    assert rep.violations == [(0, 1, 2, 0, -2.0)]


def test_second_price_is_dsic():
    V = Valuations.single_item(TypeSpace.from_values([[1, 2, 4], [1, 3]]))
    assert dsic_regret(second_price(V), V) <= 1e-9


def test_pay_your_bid_regret():
    V = Valuations.single_item(TypeSpace.from_values([[1, 2], [1, 2]]))
    M = first_price(V)
    # the value-2 bidder gains 1 by shading to 1 against a silent or low rival
    assert dsic_regret(M, V) == pytest.approx(1.0)
    assert dsic_regret(M, V) == pytest.approx(brute_regret(M, V))


@given(st.integers(0, 2**31))
def test_dsic_regret_matches_enumeration(seed):
    rng = np.random.default_rng(seed)
    V = random_valuations(rng, TypeSpace.from_sizes([3, 2]), 3)
    M = random_mechanism(rng, V)
    assert dsic_regret(M, V) == pytest.approx(brute_regret(M, V), abs=1e-12)


def test_two_bidder_bic_and_shift():
    V, M, D, D_hat = two_bidder_instance(0.1)
    assert bic_report(M, V, D).eps_star == 0.0
    rep = bic_report(M, V, D_hat)
    assert rep.eps_star == pytest.approx(0.1, abs=1e-12)
    assert rep.regrets[0][2].max() == pytest.approx(0.1, abs=1e-12)


def test_synthesized_bic_has_zero_eps(rng):
    V = Valuations.single_item(TypeSpace.from_values([[1, 2], [1, 3]]))
    D = JointDist.normalized(V.space, rng.random(9))
    M = optimal_mechanism(D, V, "BIC", Objective.revenue(V)).mechanism
    assert bic_report(M, V, D).eps_star <= 1e-9


@given(st.integers(0, 2**31))
def test_dsic_implies_bic_and_frontier(seed):
    rng = np.random.default_rng(seed)
    V = Valuations.single_item(TypeSpace.from_values([[1, 2], [1, 3]]))
    D = JointDist.normalized(V.space, rng.random(9) * (rng.random(9) < 0.7) + 1e-3)
    assert bic_report(second_price(V), V, D).eps_star <= 1e-9
    rep = bic_report(random_mechanism(rng, V), V, D)
    assert rep.eps_star >= 0
    assert rep.q_at(rep.eps_star) == 0.0
    pos = max(float(rep.type_mass[i][rep.worst_by_type(i) > 0].sum()) for i in range(2))
    assert rep.q_at(0.0) == pytest.approx(pos)
    qs = [q for _, q in rep.frontier()]
    assert all(0 <= q <= 1 for q in qs)
    assert all(a >= b for a, b in zip(qs, qs[1:]))


def test_bic_report_ignores_zero_mass_types():
    V = Valuations.single_item(TypeSpace.from_values([[1, 2], [1, 2]]))
    M = first_price(V)
    D = JointDist.product(V.space, [[0, 1, 0], [0, 0.5, 0.5]])
    rep = bic_report(M, V, D)
    assert np.all(np.isnan(rep.regrets[0][2]))
    assert rep.worst_by_type(0)[2] == 0.0


def test_pointmass_revenue_and_perturbation():
    V0, delta = 3.0, 0.2
    V = Valuations.single_item(TypeSpace.from_values([[V0]]))
    M = posted_prices(V, [V0])
    D = JointDist.point(V.space, (1,))
    O = Objective.revenue(V)
    assert objective_eval(M, V, D, O) == pytest.approx(V0)
    Q = perturb_within_tv(D, delta, mode="free", target=(0,))
    assert objective_eval(M, V, Q, O) == pytest.approx((1 - delta) * V0)


def test_objective_matches_double_sum(rng):
    V = random_valuations(rng, TypeSpace.from_sizes([2, 3]), 3)
    M = random_mechanism(rng, V)
    D = JointDist.normalized(V.space, rng.random(6))
    rev = sum(D.mass[t] * M.payments[t].sum() for t in V.space.profiles())
    wel = sum(D.mass[t] * sum(M.lottery[t][a] * (V.table[0][t[0], a] + V.table[1][t[1], a])
                              for a in range(V.num_allocations)) for t in V.space.profiles())
    assert objective_eval(M, V, D, Objective.revenue(V)) == pytest.approx(rev, abs=1e-12)
    assert objective_eval(M, V, D, Objective.welfare(V)) == pytest.approx(wel, abs=1e-12)


def test_objective_is_linear_in_entries(rng):
    V = random_valuations(rng, TypeSpace.from_sizes([2, 2]), 3)
    D = JointDist.normalized(V.space, rng.random(4))
    O = Objective.custom(rng.uniform(0, 1, (2, 2, V.num_allocations)), -3 * V.H, 3 * V.H, payment_weight=0.5)
    M1, M2 = random_mechanism(rng, V), random_mechanism(rng, V)
    lam = 0.3
    mix = Mechanism(V.space, lam * M1.lottery + (1 - lam) * M2.lottery,
                    lam * M1.payments + (1 - lam) * M2.payments, V.H)
    expect = lam * objective_eval(M1, V, D, O) + (1 - lam) * objective_eval(M2, V, D, O)
    assert objective_eval(mix, V, D, O) == pytest.approx(expect, abs=1e-12)


def test_objective_bounds():
    V = Valuations.single_item(TypeSpace.from_values([[1], [2]]))
    O = Objective.revenue(V)
    assert (O.lo, O.hi, O.V) == (-4.0, 4.0, 8.0)
    W = Objective.welfare(V)
    assert (W.lo, W.hi) == (0.0, 4.0)
    with pytest.raises(ValueError):
        Objective.custom(np.full((2, 2, 3), 2.0), 0.0, 1.0)


def test_valuation_invariants():
    space = TypeSpace.from_sizes([2])
    with pytest.raises(ValueError):
        Valuations(space, ("null", "a"), (np.array([[0, 0], [1, 1]]),), 1.0)
    with pytest.raises(ValueError):
        Valuations(space, ("null", "a"), (np.array([[0, 1], [0, 1]]),), 1.0)
    with pytest.raises(ValueError):
        Valuations(space, ("null", "a"), (np.array([[0, 0], [0, 2]]),), 1.0)


def test_mechanism_invariants():
    space = TypeSpace.from_sizes([2])
    with pytest.raises(ValueError):
        Mechanism(space, np.array([[1.0, 0.0], [0.5, 0.4]]), np.zeros((2, 1)), 1.0)
    with pytest.raises(ValueError):
        Mechanism(space, np.array([[1.0, 0.0], [0.0, 1.0]]), np.array([[0.0], [2.0]]), 1.0)
    with pytest.raises(ValueError):
        Mechanism(space, np.array([[0.0, 1.0], [0.0, 1.0]]), np.zeros((2, 1)), 1.0)


def test_text_round_trips(rng):
    V = random_valuations(rng, TypeSpace.from_sizes([3, 2]), 3)
    M = random_mechanism(rng, V)
    M2 = loads_mechanism(dumps_mechanism(M, ["note"]), V.space)
    np.testing.assert_array_equal(M2.lottery, M.lottery)
    np.testing.assert_array_equal(M2.payments, M.payments)
    V2 = loads_valuations(dumps_valuations(V), V.space, V.allocations)
    for a, b in zip(V.table, V2.table):
        np.testing.assert_array_equal(a, b)
    with pytest.raises(ValueError, match="line 2"):
        loads_mechanism("sizes 2 allocations 2 H 1\n0 : 1 0 ; x\n")
