import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from robustmech.dist import JointDist, NotProductError, TypeSpace, marginal, tv_distance
from robustmech.experiments import (
    random_joint, random_marginals, random_restriction, random_single_item, random_valuations,
    run_trial, shift_marginals, two_bidder_instance,
)
from robustmech.mechanism import (
    Mechanism, Objective, Valuations, bic_report, dsic_regret, expost_ir_check, objective_eval,
)
from robustmech.robustness import PASS, check_bic_extension
from robustmech.synth import optimal_mechanism
from robustmech.transforms import (
    PreconditionError, TypeRestriction, bic_extend, dsic_extend, good_types, move_agent_mass,
    moving_mass, reduce_epsq_bic,
)


def test_restriction_invariants():
    with pytest.raises(ValueError):
        TypeRestriction(((1, 2),))
    R = TypeRestriction(((0, 2), (1, 0)))
    assert R.plus == ((0, 2), (0, 1))
    assert R.minus(TypeSpace.from_sizes([3, 3])) == ((1,), (2,))
    assert TypeRestriction.loads(R.dumps()) == R
    D = JointDist.product(TypeSpace.from_sizes([3, 3]), [[0.2, 0.3, 0.5], [0.1, 0.1, 0.8]])
    assert R.beta(D) == pytest.approx(0.8)


def test_dsic_extend_full_is_identity():
    V = Valuations.single_item(TypeSpace.from_values([[1, 2], [1, 3]]))
    D = JointDist.normalized(V.space, np.arange(1, 10))
    M = optimal_mechanism(D, V, "DSIC", Objective.revenue(V)).mechanism
    ext = dsic_extend(M, V, TypeRestriction.full(V.space))
    np.testing.assert_array_equal(ext.lottery, M.lottery)
    np.testing.assert_array_equal(ext.payments, M.payments)


def test_dsic_extend_cases():
    V = Valuations.single_item(TypeSpace.from_values([[1, 2], [1, 2]]))
    R = TypeRestriction(((0, 1), (0, 1)))
    Vp = V.restrict(R.plus)
    M_plus = optimal_mechanism(JointDist.normalized(Vp.space, np.ones(4)), Vp, "DSIC", Objective.welfare(Vp)).mechanism
    ext = dsic_extend(M_plus, V, R)
    # both outside: nothing happens
    np.testing.assert_array_equal(ext.lottery[2, 2], [1, 0, 0])
    np.testing.assert_array_equal(ext.payments[2, 2], [0, 0])
    # kept profiles are untouched
    np.testing.assert_array_equal(ext.lottery[:2, :2], M_plus.lottery)
    np.testing.assert_array_equal(ext.payments[:2, :2], M_plus.payments)
    # one outsider keeps only its own share of its favourite kept outcome
    assert ext.lottery[2, 1, 2] == 0.0
    assert dsic_regret(ext, V) <= 1e-9 and expost_ir_check(ext, V).ok


def test_dsic_extend_rejects_non_dsic():
    V = Valuations.single_item(TypeSpace.from_values([[1, 2]]))
    lot = np.array([[1.0, 0.0], [0.0, 1.0], [0.0, 1.0]])
    M = Mechanism(V.space, lot, np.array([[0.0], [1.0], [2.0]]), V.H)
    with pytest.raises(PreconditionError):
        dsic_extend(M, V, TypeRestriction.full(V.space))


def test_dsic_extend_random_trials():
    for seed in range(100):
        reps = run_trial("dsic_extension", {"max_agents": 3, "max_types": 4}, seed)
        assert all(r.status == PASS for r in reps), [(r.tag, r.slack) for r in reps]


def test_dsic_extend_restricted_view_is_identical():
    rng = np.random.default_rng(3)
    for _ in range(20):
        V = random_single_item(rng, 2, 4)
        R = random_restriction(rng, V.space)
        Vp = V.restrict(R.plus)
        M_plus = optimal_mechanism(random_joint(rng, Vp.space), Vp, "DSIC", Objective.revenue(Vp)).mechanism
        ext = dsic_extend(M_plus, V, R)
        idx = np.ix_(*R.plus)
        np.testing.assert_array_equal(ext.lottery[idx], M_plus.lottery)
        np.testing.assert_array_equal(ext.payments[idx], M_plus.payments)


def bic_setup(seed, max_types=4):
    rng = np.random.default_rng(seed)
    space = TypeSpace.from_sizes([int(rng.integers(2, max_types + 1)) for _ in range(int(rng.integers(1, 3)))])
    V = random_valuations(rng, space, 3)
    marg = random_marginals(rng, space)
    D = JointDist.product(space, marg)
    M = optimal_mechanism(D, V, "BIC", Objective.revenue(V)).mechanism
    return rng, V, marg, D, M


def test_bic_extend_full_is_identity():
    _, V, _, D, M = bic_setup(0)
    ext = bic_extend(M, V, TypeRestriction.full(V.space), D)
    np.testing.assert_array_equal(ext.mechanism.lottery, M.lottery)
    np.testing.assert_array_equal(ext.mechanism.payments, M.payments)
    O = Objective.revenue(V)
    assert objective_eval(ext.mechanism, V, D, O) == objective_eval(M, V, D, O)


def test_bic_extend_zero_value_gets_zero_payment():
    # the dropped type values nothing, so its payment must vanish
    space = TypeSpace.from_sizes([3])
    V = Valuations(space, ("null", "item"), (np.array([[0, 0], [0, 1.0], [0, 0]]),), 1.0)
    lot = np.array([[1.0, 0.0], [0.0, 1.0], [1.0, 0.0]])
    M = Mechanism(space, lot, np.array([[0.0], [0.5], [0.0]]), 1.0)
    D = JointDist.product(space, [[0.2, 0.5, 0.3]])
    ext = bic_extend(M, V, TypeRestriction(((0, 1),)), D)
    assert ext.tau[0][2] in (0, 1)
    assert ext.mechanism.payments[2, 0] == 0.0


def test_bic_extend_needs_product():
    _, V, _, D, M = bic_setup(1)
    corr = JointDist.normalized(V.space, np.arange(1, V.space.num_profiles + 1) ** 2)
    if not corr.is_product():
        with pytest.raises(NotProductError):
            bic_extend(M, V, TypeRestriction.full(V.space), corr)


@settings(max_examples=40)
@given(st.integers(0, 2**31))
def test_bic_extend_ratio_in_unit_interval(seed):
    rng, V, _, D, M = bic_setup(seed)
    ext = bic_extend(M, V, random_restriction(rng, V.space), D)
    for r in ext.ratio:
        assert np.all(r >= -1e-12) and np.all(r <= 1 + 1e-9)
    assert expost_ir_check(ext.mechanism, V).ok


def test_bic_extend_small_beta_bounds():
    done = 0
    for seed in range(3000):
        rng, V, marg, D, M = bic_setup(seed)
        R = random_restriction(rng, V.space)
        if R.beta(D) > 0.1 or R == TypeRestriction.full(V.space):
            continue
        reps = check_bic_extension(M, V, R, D, seed=seed)
        assert all(r.status == PASS for r in reps), [(r.tag, r.measured, r.bound) for r in reps]
        done += 1
        if done == 100:
            break
    assert done == 100


def test_epsq_q_zero_is_identity():
    _, V, _, D, M = bic_setup(5)
    red = reduce_epsq_bic(M, V, D, 0.0, 0.0)
    assert red.mechanism is M
    V, M, _, D_hat = two_bidder_instance(0.1)
    red = reduce_epsq_bic(M, V, D_hat, 0.1, 0.0)
    assert red.mechanism is M
    O = Objective.revenue(V)
    assert objective_eval(red.mechanism, V, D_hat, O) == objective_eval(M, V, D_hat, O)


def test_epsq_rejects_wrong_q():
    V, M, _, D_hat = two_bidder_instance(0.1)
    with pytest.raises(PreconditionError):
        reduce_epsq_bic(M, V, D_hat, 0.0, 0.1)


def test_epsq_random_trials():
    for seed in range(100):
        reps = run_trial("epsq_reduction", {"max_agents": 3, "max_types": 4, "max_allocations": 3}, seed)
        assert all(r.status in (PASS, "vacuous") for r in reps if r.tag == "epsq_reduction.revenue")
        assert all(r.status != "fail" for r in reps), [(r.tag, r.measured, r.bound) for r in reps]


def test_good_types_threshold():
    V, M, _, D_hat = two_bidder_instance(0.1)
    assert good_types(M, V, D_hat, 0.1) == TypeRestriction.full(V.space)
    assert 2 not in good_types(M, V, D_hat, 0.05).plus[0]


def test_moving_mass_examples():
    rng = np.random.default_rng(0)
    space = TypeSpace.from_sizes([3, 2, 2])
    D = random_joint(rng, space)
    same = moving_mass(D, [D.marginal_array(i) for i in range(3)])
    np.testing.assert_allclose(same.mass, D.mass, atol=1e-15)
    one = JointDist.normalized(TypeSpace.from_sizes([4]), rng.random(4))
    target = rng.dirichlet(np.ones(4))
    out = moving_mass(one, [target])
    np.testing.assert_allclose(out.flat, target, atol=1e-12)
    with pytest.raises(ValueError):
        moving_mass(one, [target * 2])


@given(st.integers(0, 2**31))
def test_moving_mass_bounds(seed):
    rng = np.random.default_rng(seed)
    space = TypeSpace.from_sizes([3, 3, 2])
    D = random_joint(rng, space)
    marg = [D.marginal_array(i) for i in range(3)]
    targets = shift_marginals(rng, marg, 0.03)
    out = moving_mass(D, targets)
    for i in range(3):
        np.testing.assert_allclose(out.marginal_array(i), targets[i], atol=1e-12)
    assert tv_distance(D, out) <= 0.09 + 1e-12
    step = D
    for i in range(3):
        nxt = move_agent_mass(step, i, targets[i])
        assert tv_distance(step, nxt) <= tv_distance(marginal(step, i), marginal(nxt, i)) + 1e-12
        step = nxt
