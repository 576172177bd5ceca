"""Constrained Langevin sampling of the discrete prior support.

Proposals follow stochastic gradient Langevin dynamics on the loss-ratio
objective; a proposal is kept only when the estimated sublevel probability
lies inside the feasible band.  Every ``thinning``-th accepted point is
collected, and the prior puts softmax weights on the collected points
according to their (negated) penalized risk.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .algorithms import ratio_step
from .prior_training import TrajectoryScheduler
from .sublevel import SublevelSpec, estimate_sublevel_probability

__all__ = [
    "SgldConfig",
    "SampleSet",
    "NoFeasiblePointError",
    "sgld_step",
    "constrained_sample",
]


@dataclass
class SgldConfig:
    step0: float = 1e-6
    decay: float = 1.0  # multiplicative step decay per proposal
    n_samples: int = 20
    thinning: int = 10
    segment_len: int = 1
    target_len: int = 50
    run_length: int = 50
    patience: int = 200  # abort if no acceptance over this many proposals


@dataclass(frozen=True)
class SampleSet:
    """Collected hyperparameter vectors with their estimated probabilities."""

    points: list  # list of 1-d arrays
    estimates: list  # matching sublevel probability estimates

    def __len__(self) -> int:
        return len(self.points)

    def to_json(self) -> str:
        return json.dumps(
            {
                "points": [p.tolist() for p in self.points],
                "estimates": list(map(float, self.estimates)),
            }
        )

    @classmethod
    def from_json(cls, text: str) -> "SampleSet":
        obj = json.loads(text)
        return cls(
            points=[np.asarray(p, dtype=float) for p in obj["points"]],
            estimates=list(obj["estimates"]),
        )


def sgld_step(alpha: np.ndarray, grad: np.ndarray, step: float, rng: np.random.Generator) -> np.ndarray:
    """alpha - (step/2) * grad + N(0, step * I)."""
    noise = rng.standard_normal(alpha.shape) * np.sqrt(step)
    return alpha - 0.5 * step * grad + noise


class NoFeasiblePointError(RuntimeError):
    """No proposal satisfied the constraint within the patience window."""


def constrained_sample(
    algo,
    prior_data,
    val_data,
    x0,
    spec: SublevelSpec,
    cfg: SgldConfig,
    rng: np.random.Generator,
) -> SampleSet:
    """Sample the prior support by constraint-filtered Langevin proposals.

    The starting hyperparameters of ``algo`` are assumed feasible and form
    the first collected point.
    """
    x0 = np.asarray(x0, dtype=float)
    sched = TrajectoryScheduler(cfg.segment_len, cfg.target_len)
    first = estimate_sublevel_probability(algo, val_data, x0, cfg.run_length, spec, rng)
    points = [algo.get_flat().copy()]
    estimates = [first.point_estimate]
    current = algo.get_flat().copy()
    inst = prior_data[rng.integers(len(prior_data))]
    state = algo.init_state(x0)
    step = cfg.step0
    accepted_since_collect = 0
    rejected_streak = 0
    while len(points) < cfg.n_samples:
        grad = np.zeros(algo.num_params)
        for _ in range(cfg.segment_len):
            state, _, g = ratio_step(algo, state, inst)
            if g is not None:
                grad += g
        if not (np.all(np.isfinite(grad)) and np.all(np.isfinite(state.x_curr))):
            state = algo.init_state(x0)
            inst = prior_data[rng.integers(len(prior_data))]
            continue
        proposal = sgld_step(current, grad, step, rng)
        step *= cfg.decay
        algo.set_flat(proposal)
        res = estimate_sublevel_probability(algo, val_data, x0, cfg.run_length, spec, rng)
        inside = res.conclusive and spec.p_l <= res.point_estimate <= spec.p_u
        if inside:
            current = proposal
            rejected_streak = 0
            accepted_since_collect += 1
            if accepted_since_collect >= cfg.thinning:
                points.append(proposal.copy())
                estimates.append(res.point_estimate)
                accepted_since_collect = 0
        else:
            algo.set_flat(current.copy())
            rejected_streak += 1
            if rejected_streak >= cfg.patience:
                raise NoFeasiblePointError(
                    f"no accepted proposal in {cfg.patience} attempts"
                )
        carried, restarted = sched.next(state, rng)
        if restarted:
            state = algo.init_state(x0)
            inst = prior_data[rng.integers(len(prior_data))]
        else:
            state = carried
    algo.set_flat(current.copy())
    return SampleSet(points=points, estimates=estimates)
