"""Exact, desk-scale certification of total-variation robustness for
mechanism design: distributions, mechanisms, LP synthesis, transformations,
robustness checks and Markov random field priors."""
from .dist import (BOTTOM, JointDist, NotProductError, SpaceMismatchError, TypeSpace, ZeroMassError,
                   conditional, dual_witness, marginal, optimal_coupling, perturb_within_tv,
                   product_of_marginals, tv_distance, verify_conditional_tv, verify_weak_dependence)
from .lp import LPInstance, LPSolution, solve_lp
from .mechanism import (Mechanism, Objective, Valuations, bic_report, dsic_regret, expost_ir_check,
                        objective_eval)
from .mrf import (PairwiseMRF, check_kl_tv_bound, check_ratio_bound, mrf_to_joint, mrfgap_instance,
                  weighted_degree)
from .robustness import (RobustnessReport, check_bic_robustness, check_brustle_extension,
                         check_dsic_robustness, check_lipschitz, check_marginal_robustness,
                         check_prophet_robustness, check_simple_vs_optimal, gap_certificate,
                         inner_min_distribution, maxmin_mechanism)
from .synth import brev, optimal_mechanism, posted_prices, srev
from .transforms import TypeRestriction, bic_extend, dsic_extend, moving_mass, reduce_epsq_bic

__version__ = "0.1.0"
