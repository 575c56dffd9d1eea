"""Minimum-variance unbiased combination of two noisy estimates of one quantity.

Given estimates ``A`` and ``B`` of ``C`` with error variances ``var_a``,
``var_b`` and error covariance ``cov_ab``, the unbiased linear estimator with
least variance is ``q1*A + q2*B`` where ``q1 + q2 = 1`` and

    q1 = (var_b - cov_ab) / (var_a - 2*cov_ab + var_b).

Writing ``alpha1 = var_b - cov_ab`` and ``alpha2 = var_a - cov_ab`` gives
``q1 = alpha1 / (alpha1 + alpha2) = 1 / (1 + exp(log(alpha2 / alpha1)))``.
That is the logistic sigmoid of ``log(alpha1 / alpha2)``, so a transform gate
putting weight ``q1`` on its new estimate has pre-activation
``log(alpha1 / alpha2)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .numerics import Rng, sigmoid

__all__ = [
    "FusionProblem",
    "FusionWeights",
    "IndistinguishableEstimators",
    "optimal_weights",
    "fused_variance",
    "grid_search_q1",
    "monte_carlo_fusion_check",
    "gate_bias_to_mix",
    "mix_to_gate_bias",
]

DEGENERACY_TOL = 1e-12


class IndistinguishableEstimators(ValueError):
    pass


@dataclass(frozen=True)
class FusionProblem:
    var_a: float
    var_b: float
    cov_ab: float = 0.0

    def __post_init__(self):
        if self.var_a < 0 or self.var_b < 0:
            raise ValueError("variances must be non-negative")

    @property
    def denominator(self) -> float:
        return self.var_a - 2.0 * self.cov_ab + self.var_b

    def is_feasible(self, strict: bool = False) -> bool:
        bound = math.sqrt(self.var_a * self.var_b)
        c = abs(self.cov_ab)
        return c < bound if strict else c <= bound * (1 + 1e-12)


@dataclass(frozen=True)
class FusionWeights:
    q1: float
    q2: float
    alpha1: float
    alpha2: float


def optimal_weights(p: FusionProblem) -> FusionWeights:
    denom = p.denominator
    if denom <= DEGENERACY_TOL:
        raise IndistinguishableEstimators(
            f"estimators indistinguishable: var_a - 2*cov_ab + var_b = {denom!r}"
        )
    alpha1 = p.var_b - p.cov_ab
    alpha2 = p.var_a - p.cov_ab
    q2 = 1.0 - alpha1 / denom
    # 1 - q2 is exact once q2 is a rounded complement, so q1 + q2 == 1 exactly.
    q1 = 1.0 - q2
    return FusionWeights(q1, q2, alpha1, alpha2)


def fused_variance(p: FusionProblem, w: FusionWeights) -> float:
    q1, q2 = w.q1, w.q2
    return q1 * q1 * p.var_a + 2.0 * q1 * q2 * p.cov_ab + q2 * q2 * p.var_b


def grid_search_q1(p: FusionProblem, lo: float = -1.0, hi: float = 2.0, step: float = 1e-4) -> float:
    """Brute-force minimiser of the fused variance over a q1 grid (q2 = 1 - q1)."""
    q1 = np.linspace(lo, hi, int(round((hi - lo) / step)) + 1)
    q2 = 1.0 - q1
    v = q1 * q1 * p.var_a + 2.0 * q1 * q2 * p.cov_ab + q2 * q2 * p.var_b
    return float(q1[np.argmin(v)])


def monte_carlo_fusion_check(p: FusionProblem, n: int = 1_000_000, seed: int = 0) -> dict:
    """Simulate Gaussian estimation errors and measure the fused estimator.

    ``C ~ N(0, 1)``; the errors ``(A - C, B - C)`` are bivariate normal with the
    problem's covariance, drawn through its Cholesky factor.
    """
    if n < 1000:
        raise ValueError("need at least 1000 samples")
    if not p.is_feasible():
        raise ValueError(
            f"infeasible covariance: |{p.cov_ab}| > sqrt({p.var_a} * {p.var_b})"
        )
    w = optimal_weights(p)
    rng = Rng(seed)
    c = rng.normal(n)
    z1 = rng.normal(n)
    z2 = rng.normal(n)
    sa = math.sqrt(p.var_a)
    err_a = sa * z1
    if sa > 0:
        rho_part = p.cov_ab / sa
        rest = max(p.var_b - rho_part * rho_part, 0.0)
        err_b = rho_part * z1 + math.sqrt(rest) * z2
    else:
        err_b = math.sqrt(p.var_b) * z2
    a = c + err_a
    b = c + err_b
    resid = w.q1 * a + w.q2 * b - c
    return {
        "q1": w.q1,
        "q2": w.q2,
        "empirical_bias": float(resid.mean()),
        "empirical_variance": float(resid.var()),
        "closed_form_variance": fused_variance(p, w),
        "n": n,
    }


def gate_bias_to_mix(bias: float) -> float:
    """Weight a sigmoid gate with this pre-activation puts on the new estimate.

    Equals ``alpha1 / (alpha1 + alpha2)`` when ``bias = log(alpha1 / alpha2)``;
    the default transform-gate bias of -1 gives about 0.269.
    """
    return float(sigmoid(np.array([float(bias)]))[0])


def mix_to_gate_bias(alpha1: float, alpha2: float) -> float:
    """Pre-activation whose sigmoid is ``alpha1 / (alpha1 + alpha2)``."""
    if alpha1 <= 0 or alpha2 <= 0:
        raise ValueError("log-ratio form needs positive mixing coefficients")
    return math.log(alpha1 / alpha2)
