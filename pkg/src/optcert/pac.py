"""Discrete prior/posterior construction and the certified risk bound.

Given a finite support of hyperparameter vectors, the prior puts softmax
weights on the negated penalized empirical risk; for each temperature
lambda on a finite grid, the normalized log-moment

    kappa(lambda) = log E_P[exp(lambda * t1 - lambda^2/2 * t2)]

yields the objective

    F(lambda) = -(1/lambda) * (kappa(lambda) - log(K / eps))

whose grid minimizer gives the high-probability upper bound on the
sublevel-conditioned risk of the Gibbs posterior at that temperature.  The
certificate is verified against the equivalent change-of-measure form

    Q[-t1] + (1/lambda)(KL(Q||P) + log(K/eps) + lambda^2/2 * Q[t2]).
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .sublevel import SublevelSpec, estimate_sublevel_probability, sublevel_threshold

__all__ = [
    "DiscreteMeasure",
    "SufficientStats",
    "PacConfig",
    "PacCertificate",
    "BoundedStatsSpec",
    "empirical_sublevel_risk",
    "phi_prior",
    "build_prior",
    "build_stats",
    "build_stats_bounded",
    "kappa_tilde",
    "pac_objective",
    "optimize_lambda",
    "build_posterior",
    "kl_divergence",
    "certify",
    "point_estimate",
]


@dataclass(frozen=True)
class DiscreteMeasure:
    """Probability weights over an indexed finite support."""

    weights: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        if w.ndim != 1 or len(w) == 0:
            raise ValueError("weights must be a nonempty vector")
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12:
            raise ValueError("weights must be a probability vector")
        object.__setattr__(self, "weights", w)

    def __len__(self) -> int:
        return len(self.weights)


@dataclass(frozen=True)
class SufficientStats:
    """Per-support-point statistics entering the exponential family.

    t1 is the negated empirical sublevel risk on the training split; t2 is
    the plug-in second-moment term (1 / (p_hat^2 * N)) * mean(g^2 * 1_sub).
    """

    t1: np.ndarray
    t2: np.ndarray

    def __post_init__(self):
        t1 = np.asarray(self.t1, dtype=float)
        t2 = np.asarray(self.t2, dtype=float)
        if t1.shape != t2.shape or t1.ndim != 1:
            raise ValueError("t1/t2 must be matching vectors")
        if np.any(t2 < 0):
            raise ValueError("t2 must be nonnegative")
        object.__setattr__(self, "t1", t1)
        object.__setattr__(self, "t2", t2)


@dataclass(frozen=True)
class PacConfig:
    lambda_min: float = 1e-4
    lambda_max: float = 1e4
    grid_size: int = 2_000
    eps_pac: float = 0.05

    def lambda_grid(self) -> np.ndarray:
        return np.logspace(
            np.log10(self.lambda_min), np.log10(self.lambda_max), self.grid_size
        )


@dataclass(frozen=True)
class PacCertificate:
    lambda_star: float
    bound: float
    kl: float
    posterior: DiscreteMeasure
    point_index: int
    emp_risk: float  # posterior mean of the empirical sublevel risk
    emp_second: float  # posterior mean of the second-moment statistic

    def to_json(self, **extra) -> str:
        obj = {
            "lambda_star": self.lambda_star,
            "bound": self.bound,
            "kl": self.kl,
            "weights": self.posterior.weights.tolist(),
            "point_estimate": self.point_index,
            "emp_risk": self.emp_risk,
            "emp_second": self.emp_second,
        }
        obj.update(extra)
        return json.dumps(obj, indent=2)


def empirical_sublevel_risk(
    algo, instances, x0, k: int, spec: SublevelSpec, p_hat: float
) -> tuple[float, float]:
    """Plug-in conditional risk and second-moment term over a data split.

    Returns (risk, second_moment) where
      risk = (1 / p_hat) * mean(loss_k * 1_sublevel)
      second_moment = (1 / (p_hat^2 * N)) * mean(g^2 * 1_sublevel).
    """
    x0 = np.asarray(x0, dtype=float)
    n = len(instances)
    risk_sum = 0.0
    sq_sum = 0.0
    for inst in instances:
        state = algo.init_state(x0)
        for _ in range(k):
            state = algo.step(state, inst)
        final_loss = algo.loss(state.x_curr, inst)
        g = sublevel_threshold(spec, algo.loss(x0, inst))
        if np.isfinite(final_loss) and final_loss <= g:
            risk_sum += final_loss
            sq_sum += g * g
    risk = risk_sum / (p_hat * n)
    second = sq_sum / (p_hat**2 * n * n)
    return risk, second


def phi_prior(risk: float, p_hat: float, spec: SublevelSpec) -> float:
    """Penalized prior score: negated risk inside the band, -inf outside."""
    if spec.p_l <= p_hat <= spec.p_u:
        return -risk
    return -np.inf


@dataclass(frozen=True)
class BoundedStatsSpec:
    """Statistics for the almost-sure bound ``loss <= C * rho * initial_loss``."""

    rho: np.ndarray  # per support point
    bound_const: float
    second_moment: float  # empirical estimate of E[initial_loss^2]

    def __post_init__(self):
        rho = np.asarray(self.rho, dtype=float)
        if np.any(rho < 0) or self.bound_const < 0 or self.second_moment < 0:
            raise ValueError("all bounded-stats inputs must be nonnegative")
        object.__setattr__(self, "rho", rho)


def build_stats_bounded(
    emp_risks: np.ndarray, bspec: BoundedStatsSpec, n_train: int
) -> SufficientStats:
    """Alternative statistics path: plain (unconditioned) empirical risk.

    t1 = -emp_risk, t2 = rho^2 * C^2 * second_moment / N.
    """
    emp_risks = np.asarray(emp_risks, dtype=float)
    t2 = bspec.rho**2 * bspec.bound_const**2 * bspec.second_moment / n_train
    return SufficientStats(t1=-emp_risks, t2=t2)


def build_prior(phi: np.ndarray) -> tuple[DiscreteMeasure, np.ndarray]:
    """Softmax prior over the sample set; -inf entries are dropped.

    Returns the measure over the kept points and the indices kept.
    """
    phi = np.asarray(phi, dtype=float)
    keep = np.flatnonzero(np.isfinite(phi))
    if len(keep) == 0:
        raise ValueError("no feasible support point")
    kept = phi[keep]
    shifted = kept - kept.max()
    w = np.exp(shifted)
    return DiscreteMeasure(w / w.sum()), keep


def build_stats(
    algo,
    points,
    train_data,
    val_data,
    x0,
    k: int,
    spec: SublevelSpec,
    rng: np.random.Generator,
) -> tuple[SufficientStats, np.ndarray, np.ndarray]:
    """Evaluate t1, t2 and the penalized prior score for each support point.

    The sublevel probability is estimated on the validation split; points
    whose estimate leaves [p_l, p_u] get phi = -inf and are later dropped.
    Returns (stats, phi_prior, p_hat) over the full point list.
    """
    x0 = np.asarray(x0, dtype=float)
    m = len(points)
    t1 = np.empty(m)
    t2 = np.empty(m)
    phi = np.empty(m)
    p_hats = np.empty(m)
    saved = algo.get_flat().copy()
    try:
        for j, alpha in enumerate(points):
            algo.set_flat(np.asarray(alpha, dtype=float).copy())
            res = estimate_sublevel_probability(algo, val_data, x0, k, spec, rng)
            p_hats[j] = res.point_estimate
            inside = res.conclusive and spec.p_l <= res.point_estimate <= spec.p_u
            if not inside:
                t1[j] = 0.0
                t2[j] = 0.0
                phi[j] = -np.inf
                continue
            risk, second = empirical_sublevel_risk(
                algo, train_data, x0, k, spec, res.point_estimate
            )
            risk_prior, _ = empirical_sublevel_risk(
                algo, val_data, x0, k, spec, res.point_estimate
            )
            t1[j] = -risk
            t2[j] = second
            phi[j] = -risk_prior
    finally:
        algo.set_flat(saved)
    return SufficientStats(t1=t1, t2=t2), phi, p_hats


def kappa_tilde(lam: float, prior: DiscreteMeasure, stats: SufficientStats) -> float:
    """log sum_j P_j exp(lam * t1_j - lam^2/2 * t2_j), computed stably."""
    exponent = lam * stats.t1 - 0.5 * lam * lam * stats.t2
    shift = exponent.max()
    return float(shift + np.log(np.sum(prior.weights * np.exp(exponent - shift))))


def pac_objective(
    lam: float, prior: DiscreteMeasure, stats: SufficientStats, grid_size: int, eps: float
) -> float:
    return -(kappa_tilde(lam, prior, stats) - np.log(grid_size / eps)) / lam


def optimize_lambda(
    prior: DiscreteMeasure, stats: SufficientStats, cfg: PacConfig
) -> tuple[float, float]:
    """Grid argmin of the objective; ties resolve to the smaller lambda."""
    grid = cfg.lambda_grid()
    values = np.array(
        [pac_objective(l, prior, stats, len(grid), cfg.eps_pac) for l in grid]
    )
    idx = int(np.argmin(values))  # argmin takes the first (smallest) on ties
    return float(grid[idx]), float(values[idx])


def build_posterior(
    lam: float, prior: DiscreteMeasure, stats: SufficientStats
) -> DiscreteMeasure:
    """Gibbs measure: weights proportional to P_j exp(lam t1_j - lam^2/2 t2_j)."""
    exponent = lam * stats.t1 - 0.5 * lam * lam * stats.t2 + np.log(prior.weights)
    shifted = exponent - exponent.max()
    w = np.exp(shifted)
    return DiscreteMeasure(w / w.sum())


def kl_divergence(q: DiscreteMeasure, p: DiscreteMeasure) -> float:
    if len(q) != len(p):
        raise ValueError("measures must share a support")
    mask = q.weights > 0
    if np.any(p.weights[mask] == 0):
        return np.inf
    return float(np.sum(q.weights[mask] * np.log(q.weights[mask] / p.weights[mask])))


def point_estimate(posterior: DiscreteMeasure) -> int:
    """Index of the largest posterior weight; ties resolve to the smallest index."""
    return int(np.argmax(posterior.weights))


def certify(
    prior: DiscreteMeasure, stats: SufficientStats, cfg: PacConfig
) -> PacCertificate:
    """Optimize the temperature and emit the certificate.

    The bound is cross-checked against its change-of-measure form, which
    must agree to high relative accuracy for the Gibbs posterior.
    """
    lam, bound = optimize_lambda(prior, stats, cfg)
    posterior = build_posterior(lam, prior, stats)
    kl = kl_divergence(posterior, prior)
    q_t1 = float(posterior.weights @ stats.t1)
    q_t2 = float(posterior.weights @ stats.t2)
    explicit = -q_t1 + (kl + np.log(cfg.grid_size / cfg.eps_pac) + 0.5 * lam * lam * q_t2) / lam
    scale = max(abs(bound), abs(explicit), 1.0)
    if abs(explicit - bound) > 1e-8 * scale:
        raise AssertionError(
            f"certificate mismatch: grid objective {bound!r} vs explicit {explicit!r}"
        )
    return PacCertificate(
        lambda_star=lam,
        bound=bound,
        kl=kl,
        posterior=posterior,
        point_index=point_estimate(posterior),
        emp_risk=-q_t1,
        emp_second=q_t2,
    )
