"""End-to-end experiment pipeline with per-stage persistence.

Stages: data generation, imitation initialization, constrained prior
location, Langevin prior sampling, posterior certification, and test-set
evaluation.  Each stage writes a JSON artifact into the output directory
and is skipped on re-runs when its artifact already exists, so interrupted
experiments resume where they stopped.
"""

from __future__ import annotations

import csv
import hashlib
import json
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .algorithms import (
    FistaAlgo,
    HbfAlgo,
    LassoLearnedAlgo,
    LearnedLassoArch,
    LearnedQuadArch,
    QuadLearnedAlgo,
    hbf_params,
    ratio_step,
)
from .pac import PacConfig, build_prior, build_stats, certify
from .prior_training import (
    LocateConfig,
    StageConfig,
    find_initialization,
    locate_prior,
)
from .problems import (
    context_from_json,
    context_to_json,
    gen_lasso,
    gen_quadratics,
    instance_from_json,
    instance_to_json,
    split_dataset,
)
from .sampler import NoFeasiblePointError, SampleSet, SgldConfig, constrained_sample
from .sublevel import SublevelSpec, estimate_sublevel_probability

__all__ = [
    "ExperimentConfig",
    "ConstraintNotFoundError",
    "StageError",
    "EvaluationReport",
    "run_pipeline",
    "run_stage",
    "evaluate",
    "emit_plot_data",
]


class ConstraintNotFoundError(RuntimeError):
    """No feasible hyperparameter region was located."""


class StageError(RuntimeError):
    """A pipeline stage failed for a reason other than infeasibility."""


@dataclass
class ExperimentConfig:
    problem: str = "quadratic"
    dim: int = 20
    design_rows: int = 15
    m_range: tuple = (1.0, 2.0)
    L_range: tuple = (500.0, 1000.0)
    reg_range: tuple = (0.1, 1.0)
    sizes: tuple = (50, 50, 50, 50)
    n_train: int = 50
    seed: int = 0
    sublevel: dict = field(default_factory=dict)
    init: dict = field(default_factory=dict)
    locate: dict = field(default_factory=dict)
    sgld: dict = field(default_factory=dict)
    pac: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.problem not in ("quadratic", "lasso"):
            raise ValueError(f"unknown problem kind: {self.problem!r}")
        self.m_range = tuple(self.m_range)
        self.L_range = tuple(self.L_range)
        self.reg_range = tuple(self.reg_range)
        self.sizes = tuple(self.sizes)

    @classmethod
    def from_json(cls, source) -> "ExperimentConfig":
        if isinstance(source, (str, Path)):
            obj = json.loads(Path(source).read_text())
        else:
            obj = dict(source)
        return cls(**obj)

    def sublevel_spec(self) -> SublevelSpec:
        return SublevelSpec(**self.sublevel)

    def stage_config(self) -> StageConfig:
        return StageConfig(**self.init)

    def locate_config(self) -> LocateConfig:
        return LocateConfig(**self.locate)

    def sgld_config(self) -> SgldConfig:
        return SgldConfig(**self.sgld)

    def pac_config(self) -> PacConfig:
        return PacConfig(**self.pac)

    def hash(self) -> str:
        payload = json.dumps(asdict(self), sort_keys=True, default=list)
        return hashlib.sha256(payload.encode()).hexdigest()[:16]


def _probe_arch(algo, instances, x0, rng, tries: int = 20):
    """Re-initialize the architecture until the hypergradient is nonzero.

    A freshly drawn step network can be entirely dead (every hidden unit
    off), which makes the one-step hypergradient identically zero and
    training impossible; redraw the weights in that case.
    """
    x0 = np.asarray(x0, dtype=float)
    for _ in range(tries):
        state = algo.init_state(x0)
        inst = instances[rng.integers(len(instances))]
        _, _, g = ratio_step(algo, state, inst)
        if g is not None and np.any(g != 0.0) and np.all(np.isfinite(g)):
            return algo
        algo.reinit(rng)
    raise StageError("could not draw a trainable initialization")


def _make_algos(cfg: ExperimentConfig, ctx, rng):
    """Returns (learned algorithm, baseline algorithm)."""
    if cfg.problem == "quadratic":
        learned = QuadLearnedAlgo(LearnedQuadArch.init(rng))
        baseline = HbfAlgo(hbf_params(cfg.m_range[0], cfg.L_range[1]))
    else:
        learned = LassoLearnedAlgo(
            LearnedLassoArch.init(rng, prox_tau=1.0 / ctx.lipschitz), ctx
        )
        baseline = FistaAlgo(ctx)
    return learned, baseline


def _gen_data(cfg: ExperimentConfig):
    total = sum(cfg.sizes)
    if cfg.problem == "quadratic":
        instances = gen_quadratics(total, cfg.dim, cfg.m_range, cfg.L_range, cfg.seed)
        ctx = None
    else:
        ctx, instances = gen_lasso(
            total, cfg.dim, cfg.design_rows, cfg.reg_range, cfg.seed
        )
    return ctx, instances


def _load_json(path: Path):
    return json.loads(path.read_text())


def _dump_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj))


def run_stage(name: str, out_dir: Path, compute):
    """Run ``compute`` unless ``<name>.json`` already exists; persist the result."""
    path = out_dir / f"{name}.json"
    if path.exists():
        return _load_json(path)
    result = compute()
    _dump_json(path, result)
    return result


@dataclass(frozen=True)
class EvaluationReport:
    learned_losses: np.ndarray  # (n_test, k+1)
    baseline_losses: np.ndarray
    learned_cumtime: np.ndarray  # cumulative seconds per iteration
    baseline_cumtime: np.ndarray
    bound: float
    sublevel_counts: tuple  # Beta posterior (a, b) on the test split
    sublevel_point: float

    def percentiles(self, which: str = "learned") -> dict:
        losses = self.learned_losses if which == "learned" else self.baseline_losses
        finite = np.where(np.isfinite(losses), losses, np.nan)
        return {
            "p10": np.nanpercentile(finite, 10, axis=0),
            "p50": np.nanpercentile(finite, 50, axis=0),
            "p90": np.nanpercentile(finite, 90, axis=0),
            "mean": np.nanmean(finite, axis=0),
        }


def _run_losses(algo, instances, x0, k: int, repeats: int = 3):
    """Loss trajectories plus cumulative per-iteration wall time.

    Timing is the median over ``repeats`` repetitions of the run.
    """
    x0 = np.asarray(x0, dtype=float)
    losses = np.empty((len(instances), k + 1))
    all_times = np.zeros((repeats, k))
    for r in range(repeats):
        for i, inst in enumerate(instances):
            state = algo.init_state(x0)
            losses[i, 0] = algo.loss(state.x_curr, inst)
            for j in range(k):
                t0 = time.perf_counter()
                state = algo.step(state, inst)
                all_times[r, j] += time.perf_counter() - t0
                with np.errstate(over="ignore", invalid="ignore"):
                    losses[i, j + 1] = algo.loss(state.x_curr, inst)
    return losses, np.cumsum(np.median(all_times, axis=0))


def evaluate(
    learned,
    baseline,
    test_data,
    x0,
    k: int,
    bound: float,
    spec: SublevelSpec,
    rng: np.random.Generator,
) -> EvaluationReport:
    learned_losses, learned_ct = _run_losses(learned, test_data, x0, k)
    baseline_losses, baseline_ct = _run_losses(baseline, test_data, x0, k)
    res = estimate_sublevel_probability(learned, test_data, x0, k, spec, rng)
    return EvaluationReport(
        learned_losses=learned_losses,
        baseline_losses=baseline_losses,
        learned_cumtime=learned_ct,
        baseline_cumtime=baseline_ct,
        bound=bound,
        sublevel_counts=(res.posterior.count_a, res.posterior.count_b),
        sublevel_point=res.point_estimate,
    )


def emit_plot_data(report: EvaluationReport, out_dir: Path) -> None:
    out_dir = Path(out_dir)
    k = report.learned_losses.shape[1] - 1
    lp = report.percentiles("learned")
    bp = report.percentiles("baseline")
    with open(out_dir / "loss_curves.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(
            ["iteration"]
            + [f"learned_{s}" for s in ("p10", "p50", "p90", "mean")]
            + [f"baseline_{s}" for s in ("p10", "p50", "p90", "mean")]
        )
        for i in range(k + 1):
            w.writerow(
                [i]
                + [lp[s][i] for s in ("p10", "p50", "p90", "mean")]
                + [bp[s][i] for s in ("p10", "p50", "p90", "mean")]
            )
    with open(out_dir / "histogram.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["bound", report.bound])
        w.writerow(["learned_final", "baseline_final"])
        for a, b in zip(report.learned_losses[:, -1], report.baseline_losses[:, -1]):
            w.writerow([a, b])
    with open(out_dir / "cumtime.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["iteration", "learned_cumtime", "baseline_cumtime"])
        for i in range(k):
            w.writerow([i + 1, report.learned_cumtime[i], report.baseline_cumtime[i]])
    with open(out_dir / "sublevel_posterior.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["count_a", "count_b", "point_estimate"])
        w.writerow([*report.sublevel_counts, report.sublevel_point])


STAGE_ORDER = ("data", "init", "prior_location", "samples", "certificate", "report")


def run_pipeline(cfg: ExperimentConfig, out_dir, until: str | None = None) -> dict:
    """Run the stages in order, stopping after ``until`` when given.

    Returns the record of the last completed stage.  Raises
    ConstraintNotFoundError when no feasible region exists and StageError
    for other failures.
    """
    if until is not None and until not in STAGE_ORDER:
        raise ValueError(f"unknown stage: {until!r}")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(cfg.seed)
    spec = cfg.sublevel_spec()
    x0 = np.zeros(cfg.dim)

    ctx, instances = _gen_data(cfg)
    data_record = run_stage(
        "data",
        out_dir,
        lambda: {
            "context": context_to_json(ctx) if ctx is not None else None,
            "instances": [instance_to_json(i) for i in instances],
        },
    )
    if ctx is None and data_record["context"] is not None:
        ctx = context_from_json(data_record["context"])
    instances = [instance_from_json(o) for o in data_record["instances"]]
    splits = split_dataset(instances, cfg.sizes)
    if until == "data":
        return data_record

    learned, baseline = _make_algos(cfg, ctx, rng)
    learned = _probe_arch(learned, splits.prior, x0, rng)

    try:
        init_record = run_stage(
            "init",
            out_dir,
            lambda: _stage_init(learned, baseline, splits, x0, cfg, rng),
        )
        learned.set_flat(np.asarray(init_record["alpha"], dtype=float))
        if until == "init":
            return init_record

        loc_record = run_stage(
            "prior_location",
            out_dir,
            lambda: _stage_locate(learned, splits, x0, cfg, spec, rng),
        )
        if not loc_record["found"]:
            raise ConstraintNotFoundError("prior location left the feasible band")
        learned.set_flat(np.asarray(loc_record["alpha"], dtype=float))
        if until == "prior_location":
            return loc_record

        try:
            sample_record = run_stage(
                "samples",
                out_dir,
                lambda: json.loads(
                    constrained_sample(
                        learned, splits.prior, splits.val, x0, spec, cfg.sgld_config(), rng
                    ).to_json()
                ),
            )
        except NoFeasiblePointError as exc:
            raise ConstraintNotFoundError(str(exc)) from exc
        samples = SampleSet(
            points=[np.asarray(p, dtype=float) for p in sample_record["points"]],
            estimates=list(sample_record["estimates"]),
        )
        if until == "samples":
            return sample_record

        cert_record = run_stage(
            "certificate",
            out_dir,
            lambda: _stage_certify(learned, samples, splits, x0, cfg, spec, rng),
        )
        learned.set_flat(np.asarray(cert_record["point_alpha"], dtype=float))
        if until == "certificate":
            return cert_record

        report_record = run_stage(
            "report",
            out_dir,
            lambda: _stage_report(
                learned, baseline, splits, x0, cfg, spec, cert_record["bound"], rng, out_dir
            ),
        )
    except ConstraintNotFoundError:
        raise
    except Exception as exc:
        raise StageError(str(exc)) from exc
    if until == "report":
        return report_record
    return cert_record


def _stage_init(learned, baseline, splits, x0, cfg, rng):
    res = find_initialization(learned, baseline, splits.prior, x0, cfg.stage_config(), rng)
    return {"alpha": res.alpha.tolist(), "converged": bool(res.converged)}


def _stage_locate(learned, splits, x0, cfg, spec, rng):
    loc = locate_prior(
        learned, splits.prior, splits.val, x0, spec, cfg.locate_config(), rng
    )
    return {
        "alpha": loc.alpha.tolist(),
        "found": bool(loc.constraint_found),
        "estimate": loc.estimate,
    }


def _stage_certify(learned, samples, splits, x0, cfg, spec, rng):
    pac_cfg = cfg.pac_config()
    stats, phi, p_hats = build_stats(
        learned, samples.points, splits.train, splits.val, x0, cfg.n_train, spec, rng
    )
    prior, kept = build_prior(phi)
    if len(kept) == 0:
        raise ConstraintNotFoundError("every sampled point left the feasible band")
    from .pac import SufficientStats

    kept_stats = SufficientStats(t1=stats.t1[kept], t2=stats.t2[kept])
    cert = certify(prior, kept_stats, pac_cfg)
    point_alpha = samples.points[kept[cert.point_index]]
    record = json.loads(
        cert.to_json(
            config_hash=cfg.hash(),
            kept_indices=kept.tolist(),
            p_hats=p_hats.tolist(),
            point_alpha=np.asarray(point_alpha, dtype=float).tolist(),
        )
    )
    return record


def _stage_report(learned, baseline, splits, x0, cfg, spec, bound, rng, out_dir):
    report = evaluate(
        learned, baseline, splits.test, x0, cfg.n_train, bound, spec, rng
    )
    emit_plot_data(report, out_dir)
    lp = report.percentiles("learned")
    bp = report.percentiles("baseline")
    return {
        "learned_median_final": float(lp["p50"][-1]),
        "baseline_median_final": float(bp["p50"][-1]),
        "bound": bound,
        "sublevel_point": report.sublevel_point,
    }
