"""Sublevel-set membership and sequential Beta-Bernoulli probability estimation.

The threshold function is ``g(theta) = a * loss(x0, theta)^b``.  The
probability that a hyperparameter reaches the sublevel set is estimated
sequentially: starting from the noninformative Beta(1, 1) prior, Bernoulli
outcomes update the posterior until the (q_l, q_u) quantile interval is
narrower than ``width_tol`` or the draw budget is exhausted.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import betaincinv

__all__ = [
    "SublevelSpec",
    "BetaPosterior",
    "EstimateResult",
    "sublevel_threshold",
    "sublevel_indicator",
    "beta_quantile",
    "estimate_probability",
    "estimate_sublevel_probability",
]


@dataclass(frozen=True)
class SublevelSpec:
    """Threshold shape, constraint band, and estimation accuracy knobs."""

    g_scale: float = 1.0
    g_exponent: float = 1.0
    p_l: float = 0.95
    p_u: float = 1.0
    q_l: float = 0.01
    q_u: float = 0.99
    width_tol: float = 0.075
    max_draws: int = 10_000

    def __post_init__(self):
        if not (0 <= self.p_l < self.p_u <= 1):
            raise ValueError("need 0 <= p_l < p_u <= 1")
        if not (0 < self.q_l < self.q_u < 1):
            raise ValueError("need 0 < q_l < q_u < 1")
        if self.width_tol <= 0:
            raise ValueError("width_tol must be positive")
        if self.g_scale <= 0 or self.g_exponent < 0:
            raise ValueError("need g_scale > 0 and g_exponent >= 0")


@dataclass
class BetaPosterior:
    """Beta(a, b) posterior counts, starting at the noninformative (1, 1)."""

    count_a: float = 1.0
    count_b: float = 1.0

    def update(self, outcome: int) -> None:
        self.count_a += outcome
        self.count_b += 1 - outcome

    @property
    def mean(self) -> float:
        return self.count_a / (self.count_a + self.count_b)


@dataclass(frozen=True)
class EstimateResult:
    point_estimate: float
    posterior: BetaPosterior
    draws_used: int
    conclusive: bool


def sublevel_threshold(spec: SublevelSpec, initial_loss: float) -> float:
    """Threshold g = a * loss(x0)^b for one instance's loss at the start point."""
    return spec.g_scale * float(initial_loss) ** spec.g_exponent


def sublevel_indicator(algo, inst, x0: np.ndarray, k: int, spec: SublevelSpec) -> bool:
    """Run k update steps and test whether the final loss is within the threshold."""
    g = sublevel_threshold(spec, algo.loss(np.asarray(x0, dtype=float), inst))
    state = algo.init_state(x0)
    with np.errstate(over="ignore", invalid="ignore"):
        for _ in range(k):
            state = algo.step(state, inst)
            if not np.all(np.isfinite(state.x_curr)):
                return False
        final = algo.loss(state.x_curr, inst)
    return bool(np.isfinite(final) and final <= g)


def beta_quantile(post: BetaPosterior, q: float) -> float:
    """Inverse CDF of Beta(count_a, count_b)."""
    return float(betaincinv(post.count_a, post.count_b, q))


def _interval_width(post: BetaPosterior, spec: SublevelSpec) -> float:
    return beta_quantile(post, spec.q_u) - beta_quantile(post, spec.q_l)


def estimate_probability(bernoulli_stream, spec: SublevelSpec) -> EstimateResult:
    """Sequentially estimate a Bernoulli parameter from the stream.

    Draws while the posterior quantile interval has width >= ``width_tol``;
    the point estimate is the posterior mean. If ``max_draws`` outcomes do
    not suffice, the result is flagged inconclusive.
    """
    post = BetaPosterior()
    stream = iter(bernoulli_stream)
    draws = 0
    while _interval_width(post, spec) >= spec.width_tol:
        if draws >= spec.max_draws:
            return EstimateResult(post.mean, post, draws, conclusive=False)
        post.update(int(next(stream)))
        draws += 1
    return EstimateResult(post.mean, post, draws, conclusive=True)


def estimate_sublevel_probability(
    algo, instances, x0: np.ndarray, k: int, spec: SublevelSpec, rng: np.random.Generator
) -> EstimateResult:
    """Estimate p(alpha) by running the algorithm on instances drawn with
    replacement from the validation set."""

    def stream():
        while True:
            inst = instances[rng.integers(len(instances))]
            yield 1 if sublevel_indicator(algo, inst, x0, k, spec) else 0

    return estimate_probability(stream(), spec)
