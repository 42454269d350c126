"""Frozen expected values for the brute-force verifiers.

These numbers are computed by hand or by elementary reasoning on the base
instance (uniform weights on {0, 1, 2, 3} with identity cost) and pinned
here before any reformulation code gets to vote:

  mean            1.5
  cvar beta=0.5   2.5   (top-half mean of {2, 3})
  cvar beta=0.75  3.0   (top quarter is the single atom at 3)
  tv eps=0.5      2.25  (0.25 probability moved from 0 to 3)
  tv eps=1.0      2.75  (0.5 probability moved, drained from 0 then 1)
  w1 eps=0.5      2.0   (mean + eps * slope of the identity cost)
  chi2 eps=0.4    1.9472135954999579 = 1.5 + 0.4 * sqrt(1.25)
"""

import numpy as np
import pytest

from gaugekit.gauge import CvarGauge, Hemimetric, L2Ball, Scale
from gaugekit.oracle import (
    chi2_closed_form,
    cvar_sorted,
    frank_wolfe_primal,
    reference_lp,
    tv_greedy,
    w1_distance,
    w1_flow_gauge,
    w1_transport,
)
from gaugekit.reformulate import ReweightingProblem
from gaugekit.space import DiscreteSpace, uniform_space

BASE = uniform_space([0.0, 1.0, 2.0, 3.0])
F = np.array([0.0, 1.0, 2.0, 3.0])
ABS = Hemimetric.pnorm(2)
CHI2_04 = 1.5 + 0.4 * np.sqrt(1.25)


def random_instance(rng, n=None):
    n = n or rng.integers(3, 9)
    pts = np.sort(rng.uniform(0.0, 3.0, n))
    w = rng.dirichlet(np.ones(n))
    return DiscreteSpace(pts, w), rng.uniform(-1.0, 3.0, n)


class TestCvarSorted:
    def test_base_instance_half(self):
        assert cvar_sorted(BASE, F, 0.5) == pytest.approx(2.5, abs=1e-12)

    def test_base_instance_quarter(self):
        assert cvar_sorted(BASE, F, 0.75) == pytest.approx(3.0, abs=1e-12)

    def test_beta_to_zero_is_mean(self):
        assert cvar_sorted(BASE, F, 1e-9) == pytest.approx(1.5, abs=1e-6)

    def test_fractional_atom_split(self):
        # beta=0.6 keeps 0.4 tail: atom 3 (0.25) plus 0.15 of atom 2
        want = (0.25 * 3.0 + 0.15 * 2.0) / 0.4
        assert cvar_sorted(BASE, F, 0.6) == pytest.approx(want, abs=1e-12)

    def test_monotone_in_beta(self):
        rng = np.random.default_rng(7)
        for _ in range(20):
            sp, f = random_instance(rng)
            betas = np.sort(rng.uniform(0.05, 0.95, 4))
            vals = [cvar_sorted(sp, f, b) for b in betas]
            assert all(a <= b + 1e-10 for a, b in zip(vals, vals[1:]))

    def test_bounded_by_max(self):
        rng = np.random.default_rng(8)
        for _ in range(20):
            sp, f = random_instance(rng)
            v = cvar_sorted(sp, f, rng.uniform(0.05, 0.95))
            assert sp.weights @ f - 1e-10 <= v <= np.max(f) + 1e-10


class TestTvGreedy:
    def test_base_instance(self):
        assert tv_greedy(BASE, F, 0.5) == pytest.approx(2.25, abs=1e-12)

    def test_budget_one(self):
        assert tv_greedy(BASE, F, 1.0) == pytest.approx(2.75, abs=1e-12)

    def test_zero_budget(self):
        assert tv_greedy(BASE, F, 0.0) == pytest.approx(1.5, abs=1e-12)

    def test_saturates_at_max(self):
        assert tv_greedy(BASE, F, 2.0) == pytest.approx(3.0, abs=1e-12)
        assert tv_greedy(BASE, F, 17.0) == pytest.approx(3.0, abs=1e-12)

    def test_monotone_in_budget(self):
        rng = np.random.default_rng(9)
        for _ in range(20):
            sp, f = random_instance(rng)
            eps = np.sort(rng.uniform(0.0, 2.5, 4))
            vals = [tv_greedy(sp, f, e) for e in eps]
            assert all(a <= b + 1e-10 for a, b in zip(vals, vals[1:]))


class TestW1Transport:
    def test_base_instance(self):
        assert w1_transport(BASE, F, 0.5, ABS) == pytest.approx(2.0, abs=1e-7)

    def test_zero_budget(self):
        assert w1_transport(BASE, F, 0.0, ABS) == pytest.approx(1.5, abs=1e-9)

    def test_huge_budget_hits_max(self):
        assert w1_transport(BASE, F, 50.0, ABS) == pytest.approx(3.0, abs=1e-7)

    def test_upper_bound_mean_plus_lipschitz(self):
        # identity cost is 1-Lipschitz for |.|, so value <= mean + eps
        rng = np.random.default_rng(10)
        for _ in range(10):
            eps = rng.uniform(0.0, 2.0)
            val = w1_transport(BASE, F, eps, ABS)
            assert val <= 1.5 + eps + 1e-7


class TestChi2ClosedForm:
    def test_base_instance(self):
        assert chi2_closed_form(BASE, F, 0.4) == pytest.approx(CHI2_04, abs=1e-12)

    def test_zero_radius(self):
        assert chi2_closed_form(BASE, F, 0.0) == pytest.approx(1.5, abs=1e-12)

    def test_not_applicable_when_density_negative(self):
        assert chi2_closed_form(BASE, F, 2.0) is None

    def test_constant_cost_zero_sigma(self):
        assert chi2_closed_form(BASE, np.full(4, 2.0), 0.7) == pytest.approx(2.0)


class TestW1FlowGauge:
    def test_unbalanced_is_infinite(self):
        assert w1_flow_gauge(BASE, np.array([1.0, 0, 0, 0]), ABS) == np.inf

    def test_swap_cost(self):
        # moving 0.25 of probability across distance 1
        u = np.array([0.0, 0.0, -1.0, 1.0])
        assert w1_flow_gauge(BASE, u, ABS) == pytest.approx(0.25, abs=1e-9)

    def test_zero_deviation(self):
        assert w1_flow_gauge(BASE, np.zeros(4), ABS) == pytest.approx(0.0, abs=1e-12)


class TestW1Distance:
    def test_point_mass_vs_uniform(self):
        d = w1_distance([0.0, 1.0, 2.0, 3.0], [0.25] * 4, [3.0], [1.0], ABS)
        assert d == pytest.approx(1.5, abs=1e-9)

    def test_identity(self):
        d = w1_distance([0.0, 1.0], [0.5, 0.5], [0.0, 1.0], [0.5, 0.5], ABS)
        assert d == pytest.approx(0.0, abs=1e-12)

    def test_symmetry_for_metric_cost(self):
        rng = np.random.default_rng(11)
        for _ in range(10):
            a = rng.uniform(0, 3, 4)
            b = rng.uniform(0, 3, 5)
            wa = rng.dirichlet(np.ones(4))
            wb = rng.dirichlet(np.ones(5))
            d1 = w1_distance(a, wa, b, wb, ABS)
            d2 = w1_distance(b, wb, a, wa, ABS)
            assert d1 == pytest.approx(d2, abs=1e-8)

    def test_quantile_merge_matches_plan_lp(self):
        # the 1-d fast path and the dense LP must agree
        rng = np.random.default_rng(12)
        for _ in range(10):
            a = rng.uniform(0, 3, 5)
            b = rng.uniform(0, 3, 4)
            wa = rng.dirichlet(np.ones(5))
            wb = rng.dirichlet(np.ones(4))
            table = Hemimetric.from_table(
                np.concatenate([a, b]).reshape(-1, 1),
                np.abs(np.subtract.outer(np.concatenate([a, b]),
                                         np.concatenate([a, b]))),
            )
            fast = w1_distance(a, wa, b, wb, ABS)
            slow = w1_distance(a, wa, b, wb, table)
            assert fast == pytest.approx(slow, abs=1e-7)


class TestReferenceLp:
    def test_simple_bounded(self):
        # min -x - y st x + y <= 1, x,y >= 0
        status, val, x = reference_lp(
            np.array([-1.0, -1.0]),
            a_ub=np.array([[1.0, 1.0]]), b_ub=np.array([1.0]))
        assert status == "optimal"
        assert val == pytest.approx(-1.0, abs=1e-9)

    def test_infeasible(self):
        status, _, _ = reference_lp(
            np.array([1.0]),
            a_ub=np.array([[1.0], [-1.0]]), b_ub=np.array([-2.0, 1.0]))
        assert status == "infeasible"


class TestFrankWolfe:
    def test_zero_radius_keeps_mean(self):
        prob = ReweightingProblem(BASE, F, L2Ball(), 0.0)
        res = frank_wolfe_primal(prob, tol=1e-4)
        assert res.value == pytest.approx(1.5, abs=1e-6)

    def test_chi2_ball(self):
        prob = ReweightingProblem(BASE, F, Scale(0.4, L2Ball()), 1.0)
        res = frank_wolfe_primal(prob, tol=1e-4)
        assert res.value == pytest.approx(CHI2_04, abs=1e-3)
        # membership carries a 1e-8 relative closure slack, hence the allowance
        assert res.value <= CHI2_04 + res.gap + 1e-7 * (1 + CHI2_04)

    def test_cvar_ball(self):
        prob = ReweightingProblem(BASE, F, CvarGauge(0.5), 1.0)
        res = frank_wolfe_primal(prob, tol=1e-4)
        assert res.value == pytest.approx(2.5, abs=1e-3)
        assert res.value <= 2.5 + res.gap + 1e-9

    def test_iterates_stay_feasible(self):
        prob = ReweightingProblem(BASE, F, CvarGauge(0.5), 1.0)
        res = frank_wolfe_primal(prob, tol=1e-3)
        nu = res.nu
        assert np.min(nu) >= -1e-9
        assert BASE.weights @ nu == pytest.approx(1.0, abs=1e-9)

    def test_gap_reported_when_capped(self):
        prob = ReweightingProblem(BASE, F, CvarGauge(0.5), 1.0)
        res = frank_wolfe_primal(prob, tol=1e-12, max_iter=5)
        assert not res.converged
        assert res.gap > 0
