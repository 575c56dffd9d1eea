import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from unrolled.fusion import (
    FusionProblem,
    FusionWeights,
    IndistinguishableEstimators,
    fused_variance,
    gate_bias_to_mix,
    grid_search_q1,
    mix_to_gate_bias,
    monte_carlo_fusion_check,
    optimal_weights,
)
from unrolled.numerics import sigmoid


@st.composite
def feasible_problems(draw):
    va = draw(st.floats(0.05, 10.0))
    vb = draw(st.floats(0.05, 10.0))
    rho = draw(st.floats(-0.95, 0.95))
    return FusionProblem(va, vb, rho * math.sqrt(va * vb))


class TestOptimalWeights:
    def test_symmetric(self):
        w = optimal_weights(FusionProblem(1, 1, 0))
        assert (w.q1, w.q2) == (0.5, 0.5)

    @pytest.mark.parametrize(
        "problem, q1",
        [
            # Expected values located by grid search over q1 in [-1, 2], step 1e-4.
            (FusionProblem(1, 3, 0), 0.75),
            (FusionProblem(2, 2, 1), 0.5),
        ],
    )
    def test_against_grid_oracle(self, problem, q1):
        assert grid_search_q1(problem) == pytest.approx(q1, abs=1e-4)
        w = optimal_weights(problem)
        assert w.q1 == pytest.approx(q1, abs=1e-15)
        assert w.q1 + w.q2 == 1.0

    def test_alphas(self):
        w = optimal_weights(FusionProblem(1.0, 4.0, 0.5))
        assert (w.alpha1, w.alpha2) == (3.5, 0.5)
        assert w.q1 == pytest.approx(w.alpha1 / (w.alpha1 + w.alpha2))

    def test_degenerate(self):
        with pytest.raises(IndistinguishableEstimators, match="indistinguishable"):
            optimal_weights(FusionProblem(1.0, 1.0, 1.0))

    @settings(max_examples=300)
    @given(feasible_problems())
    def test_grid_oracle_agrees(self, p):
        q1 = optimal_weights(p).q1
        if -1.0 <= q1 <= 2.0:
            assert abs(grid_search_q1(p) - q1) <= 1e-4

    @settings(max_examples=300)
    @given(feasible_problems())
    def test_weights_sum_to_one(self, p):
        w = optimal_weights(p)
        assert Fraction(w.q1) + Fraction(w.q2) == 1

    @settings(max_examples=300)
    @given(feasible_problems())
    def test_never_worse_than_inputs_with_same_sign_alphas(self, p):
        w = optimal_weights(p)
        if w.alpha1 >= 0 and w.alpha2 >= 0:
            best = fused_variance(p, w)
            assert best <= p.var_a + 1e-12
            assert best <= p.var_b + 1e-12


class TestFusedVariance:
    def test_independent_unit(self):
        p = FusionProblem(1, 1, 0)
        assert fused_variance(p, optimal_weights(p)) == 0.5

    def test_keep_a(self):
        p = FusionProblem(2.5, 7.0, 1.1)
        assert fused_variance(p, FusionWeights(1.0, 0.0, 0, 0)) == 2.5

    def test_unequal(self):
        p = FusionProblem(1, 3, 0)
        v = fused_variance(p, optimal_weights(p))
        assert v == pytest.approx(0.75, abs=1e-15)
        assert v < 1.0
        q = grid_search_q1(p)
        assert fused_variance(p, FusionWeights(q, 1 - q, 0, 0)) == pytest.approx(0.75, abs=1e-8)


class TestMonteCarlo:
    def test_independent_unit(self):
        r = monte_carlo_fusion_check(FusionProblem(1, 1, 0), 1_000_000, seed=1)
        assert abs(r["empirical_bias"]) < 4 * math.sqrt(0.5 / 1e6)
        assert abs(r["empirical_variance"] - 0.5) < 0.01

    def test_unequal(self):
        r = monte_carlo_fusion_check(FusionProblem(1, 3, 0), 1_000_000, seed=2)
        assert abs(r["empirical_variance"] - 0.75) < 0.02 * 0.75

    def test_correlated(self):
        p = FusionProblem(1.0, 4.0, 1.5)
        r = monte_carlo_fusion_check(p, 200_000, seed=3)
        assert abs(r["empirical_variance"] - r["closed_form_variance"]) < 0.02 * r["closed_form_variance"]

    def test_perfect_second_estimator(self):
        r = monte_carlo_fusion_check(FusionProblem(1.0, 0.0, 0.0), 10_000, seed=4)
        assert r["q2"] == 1.0
        assert r["empirical_variance"] < 1e-6

    def test_infeasible(self):
        with pytest.raises(ValueError, match="infeasible"):
            monte_carlo_fusion_check(FusionProblem(1.0, 1.0, 2.0), 1000)

    def test_too_few_samples(self):
        with pytest.raises(ValueError):
            monte_carlo_fusion_check(FusionProblem(1.0, 1.0, 0.0), 10)

    def test_deterministic(self):
        p = FusionProblem(1.0, 2.0, 0.3)
        assert monte_carlo_fusion_check(p, 5000, 9) == monte_carlo_fusion_check(p, 5000, 9)


class TestGateBias:
    def test_values(self):
        assert gate_bias_to_mix(0.0) == 0.5
        # alpha1 = 1, alpha2 = 3: 1 / (1 + exp(log 3)) = 0.25 is the sigmoid of -log 3.
        assert 1 / (1 + math.exp(math.log(3.0))) == pytest.approx(0.25, abs=1e-15)
        assert gate_bias_to_mix(-math.log(3.0)) == pytest.approx(0.25, abs=1e-15)
        assert gate_bias_to_mix(math.log(3.0)) == pytest.approx(0.75, abs=1e-15)
        expected = float(sigmoid(np.array([-1.0]))[0])
        assert gate_bias_to_mix(-1.0) == expected
        assert round(expected, 4) == 0.2689

    def test_log_ratio_identity(self):
        a1, a2 = 2.0, 5.0
        assert gate_bias_to_mix(mix_to_gate_bias(a1, a2)) == pytest.approx(a1 / (a1 + a2), abs=1e-15)

    @given(st.floats(-30, 30))
    def test_complement(self, b):
        assert abs(gate_bias_to_mix(b) + gate_bias_to_mix(-b) - 1.0) <= 1e-12
