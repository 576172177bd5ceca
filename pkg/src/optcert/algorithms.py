"""Update rules: learned parametric steppers, baselines, and hypergradients.

The learned steppers follow the two-block (quadratics) and three-block
(LASSO) designs: a per-coordinate direction net over unit-vector channels,
a scalar step-size net over log-transformed norms, and, for LASSO, a
sparsity net whose output gates the iterate before soft-thresholding with
a learned prox parameter. Hypergradients through one update step are exact
reverse-mode; the preprocessed inputs are treated as constants since they
depend only on the previous iterates.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .nets import DenseNet
from .problems import (
    LassoClassContext,
    LassoInstance,
    QuadraticInstance,
    grad_quadratic,
    loss_lasso,
    loss_quadratic,
    smooth_grad_lasso,
    subgrad_lasso,
)

__all__ = [
    "AlgoState",
    "FistaState",
    "HbfParams",
    "LearnedQuadArch",
    "LearnedLassoArch",
    "ZeroLossError",
    "preprocess",
    "soft_threshold",
    "hbf_params",
    "hbf_step",
    "fista_step",
    "ista_step",
    "run_algorithm",
    "QuadLearnedAlgo",
    "LassoLearnedAlgo",
    "HbfAlgo",
    "GdAlgo",
    "FistaAlgo",
    "IstaAlgo",
]


class ZeroLossError(ValueError):
    """Raised when a loss ratio would divide by a zero loss."""


@dataclass(frozen=True)
class AlgoState:
    """Current and previous iterate; momentum is their difference."""

    x_curr: np.ndarray
    x_prev: np.ndarray


@dataclass(frozen=True)
class FistaState:
    x_curr: np.ndarray
    x_prev: np.ndarray
    t_k: float = 1.0


@dataclass(frozen=True)
class HbfParams:
    tau: float
    beta: float


def preprocess(v: np.ndarray) -> tuple[np.ndarray, float]:
    """Split a vector into its unit direction and log-transformed norm.

    The zero vector maps to (0, 0).
    """
    v = np.asarray(v, dtype=float)
    norm = float(np.linalg.norm(v))
    if norm == 0.0:
        return np.zeros_like(v), 0.0
    return v / norm, float(np.log1p(norm))


def soft_threshold(v: np.ndarray, t: float) -> np.ndarray:
    """Coordinate-wise shrinkage sign(v) * max(|v| - t, 0)."""
    v = np.asarray(v, dtype=float)
    return np.sign(v) * np.maximum(np.abs(v) - t, 0.0)


# ---------------------------------------------------------------------------
# learned architecture for quadratics
# ---------------------------------------------------------------------------

_QUAD_DIR_DIMS = [3, 16, 16, 16, 16, 16, 1]
_QUAD_STEP_DIMS = [2, 8, 8, 8, 8, 8, 1]
# rectifiers after layers 1, 3, 5 keep the paired linear layers intact
_QUAD_MASK = [True, False, True, False, True, False]


@dataclass
class LearnedQuadArch:
    direction_net: DenseNet
    step_net: DenseNet

    @classmethod
    def init(cls, rng: np.random.Generator) -> "LearnedQuadArch":
        return cls(
            direction_net=DenseNet.init(_QUAD_DIR_DIMS, _QUAD_MASK, rng),
            step_net=DenseNet.init(_QUAD_STEP_DIMS, _QUAD_MASK, rng),
        )

    @property
    def num_params(self) -> int:
        return self.direction_net.num_params + self.step_net.num_params

    def get_flat(self) -> np.ndarray:
        return np.concatenate([self.direction_net.get_flat(), self.step_net.get_flat()])

    def set_flat(self, flat: np.ndarray) -> None:
        nd = self.direction_net.num_params
        self.direction_net.set_flat(flat[:nd])
        self.step_net.set_flat(flat[nd:])


@dataclass
class _QuadStepTape:
    dir_tape: object
    step_tape: object
    direction: np.ndarray
    step_size: float


def quad_step_forward(
    arch: LearnedQuadArch, state: AlgoState, inst: QuadraticInstance
) -> tuple[AlgoState, _QuadStepTape]:
    x = state.x_curr
    d1, n1 = preprocess(grad_quadratic(x, inst))
    d2, n2 = preprocess(x - state.x_prev)
    channels = np.stack([d1, d2, d1 * d2], axis=1)
    d_out, dir_tape = arch.direction_net.forward(channels)
    direction = d_out[:, 0]
    s_out, step_tape = arch.step_net.forward(np.array([n1, n2]))
    step_size = float(s_out[0])
    x_next = x + step_size * direction
    tape = _QuadStepTape(dir_tape, step_tape, direction, step_size)
    return AlgoState(x_curr=x_next, x_prev=x), tape


def quad_step_backward(arch: LearnedQuadArch, tape: _QuadStepTape, out_grad: np.ndarray) -> np.ndarray:
    """Gradient of <out_grad, x_next> w.r.t. the flat hyperparameters."""
    g_s = float(tape.direction @ out_grad)
    g_d = tape.step_size * out_grad
    _, dir_wg = arch.direction_net.backward(tape.dir_tape, g_d[:, None])
    _, step_wg = arch.step_net.backward(tape.step_tape, np.array([g_s]))
    return np.concatenate([w.ravel() for w in dir_wg] + [w.ravel() for w in step_wg])


# ---------------------------------------------------------------------------
# learned architecture for LASSO
# ---------------------------------------------------------------------------

_LASSO_DIR_DIMS = [4, 64, 64, 64, 1]
_LASSO_STEP_DIMS = [3, 64, 64, 64, 1]
_LASSO_SPARSE_DIMS = [3, 64, 64, 64, 1]
_LASSO_MASK = [True, True, True, False]


def _sigmoid(a: np.ndarray) -> np.ndarray:
    out = np.empty_like(a)
    pos = a >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-a[pos]))
    e = np.exp(a[~pos])
    out[~pos] = e / (1.0 + e)
    return out


@dataclass
class LearnedLassoArch:
    direction_net: DenseNet
    step_net: DenseNet
    sparsity_net: DenseNet
    prox_tau: float

    @classmethod
    def init(cls, rng: np.random.Generator, prox_tau: float) -> "LearnedLassoArch":
        return cls(
            direction_net=DenseNet.init(_LASSO_DIR_DIMS, _LASSO_MASK, rng),
            step_net=DenseNet.init(_LASSO_STEP_DIMS, _LASSO_MASK, rng),
            sparsity_net=DenseNet.init(_LASSO_SPARSE_DIMS, _LASSO_MASK, rng),
            prox_tau=prox_tau,
        )

    @property
    def num_params(self) -> int:
        return (
            self.direction_net.num_params
            + self.step_net.num_params
            + self.sparsity_net.num_params
            + 1
        )

    def get_flat(self) -> np.ndarray:
        return np.concatenate(
            [
                self.direction_net.get_flat(),
                self.step_net.get_flat(),
                self.sparsity_net.get_flat(),
                [self.prox_tau],
            ]
        )

    def set_flat(self, flat: np.ndarray) -> None:
        nd = self.direction_net.num_params
        ns = self.step_net.num_params
        nz = self.sparsity_net.num_params
        self.direction_net.set_flat(flat[:nd])
        self.step_net.set_flat(flat[nd: nd + ns])
        self.sparsity_net.set_flat(flat[nd + ns: nd + ns + nz])
        self.prox_tau = float(flat[-1])


@dataclass
class _LassoStepTape:
    dir_tape: object
    step_tape: object
    sparse_tape: object
    direction: np.ndarray
    step_size: float
    x_tilde: np.ndarray
    z: np.ndarray
    gated: np.ndarray  # z * x_tilde, input of the soft threshold
    thresh: float
    y: np.ndarray
    reg: float


def lasso_step_forward(
    arch: LearnedLassoArch, state: AlgoState, inst: LassoInstance, ctx: LassoClassContext
) -> tuple[AlgoState, _LassoStepTape]:
    x = state.x_curr
    d1, n1 = preprocess(subgrad_lasso(x, inst, ctx))
    d2, n2 = preprocess(x - state.x_prev)
    d3, n3 = preprocess(inst.reg * np.sign(x))
    channels = np.stack([d1, d2, d1 * d2, d3], axis=1)
    d_out, dir_tape = arch.direction_net.forward(channels)
    direction = d_out[:, 0]
    s_out, step_tape = arch.step_net.forward(np.array([n1, n2, n3]))
    step_size = float(s_out[0])
    x_tilde = x + step_size * direction
    sp_in = np.stack([x_tilde, x, d3], axis=1)
    a_out, sparse_tape = arch.sparsity_net.forward(sp_in)
    z = _sigmoid(a_out[:, 0])
    gated = z * x_tilde
    thresh = arch.prox_tau * inst.reg
    y = soft_threshold(gated, thresh)
    ny = float(np.linalg.norm(y))
    # rescale so the prox does not change the norm; the zero vector stays put
    x_next = y * (float(np.linalg.norm(x_tilde)) / ny) if ny > 0 else y
    tape = _LassoStepTape(
        dir_tape, step_tape, sparse_tape, direction, step_size, x_tilde, z, gated, thresh, y, inst.reg
    )
    return AlgoState(x_curr=x_next, x_prev=x), tape


def lasso_step_backward(arch: LearnedLassoArch, tape: _LassoStepTape, out_grad: np.ndarray) -> np.ndarray:
    """Gradient of <out_grad, x_next> w.r.t. the flat hyperparameters."""
    y, x_tilde = tape.y, tape.x_tilde
    ny = float(np.linalg.norm(y))
    nxt = float(np.linalg.norm(x_tilde))
    g_xt = np.zeros_like(x_tilde)
    if ny > 0:
        u = y / ny
        g_y = (nxt / ny) * (out_grad - u * float(u @ out_grad))
        if nxt > 0:
            g_xt += float(u @ out_grad) * (x_tilde / nxt)
    else:
        g_y = np.asarray(out_grad, dtype=float)
    active = np.abs(tape.gated) > tape.thresh
    g_gated = g_y * active
    g_prox_tau = -float((np.sign(tape.gated) * active) @ g_y) * tape.reg
    g_z = g_gated * x_tilde
    g_xt += g_gated * tape.z
    g_a = g_z * tape.z * (1.0 - tape.z)
    g_sp_in, sparse_wg = arch.sparsity_net.backward(tape.sparse_tape, g_a[:, None])
    g_xt += g_sp_in[:, 0]
    g_s = float(tape.direction @ g_xt)
    g_d = tape.step_size * g_xt
    _, dir_wg = arch.direction_net.backward(tape.dir_tape, g_d[:, None])
    _, step_wg = arch.step_net.backward(tape.step_tape, np.array([g_s]))
    return np.concatenate(
        [w.ravel() for w in dir_wg]
        + [w.ravel() for w in step_wg]
        + [w.ravel() for w in sparse_wg]
        + [[g_prox_tau]]
    )


# ---------------------------------------------------------------------------
# baselines
# ---------------------------------------------------------------------------


def hbf_params(m_minus: float, L_plus: float) -> HbfParams:
    """Worst-case optimal heavy-ball step size and momentum for [m, L]."""
    sm, sL = np.sqrt(m_minus), np.sqrt(L_plus)
    return HbfParams(tau=(2.0 / (sL + sm)) ** 2, beta=((sL - sm) / (sL + sm)) ** 2)


def hbf_step(params: HbfParams, state: AlgoState, inst: QuadraticInstance) -> AlgoState:
    x = state.x_curr
    x_next = x - params.tau * grad_quadratic(x, inst) + params.beta * (x - state.x_prev)
    return AlgoState(x_curr=x_next, x_prev=x)


def fista_step(state: FistaState, inst: LassoInstance, ctx: LassoClassContext) -> FistaState:
    tau = 1.0 / ctx.lipschitz
    t_next = (1.0 + np.sqrt(1.0 + 4.0 * state.t_k**2)) / 2.0
    beta = (state.t_k - 1.0) / t_next
    y = state.x_curr + beta * (state.x_curr - state.x_prev)
    x_next = soft_threshold(y - tau * smooth_grad_lasso(y, inst, ctx), tau * inst.reg)
    return FistaState(x_curr=x_next, x_prev=state.x_curr, t_k=t_next)


def ista_step(state: AlgoState, inst: LassoInstance, ctx: LassoClassContext) -> AlgoState:
    tau = 1.0 / ctx.lipschitz
    x = state.x_curr
    x_next = soft_threshold(x - tau * smooth_grad_lasso(x, inst, ctx), tau * inst.reg)
    return AlgoState(x_curr=x_next, x_prev=x)


def run_algorithm(step, state0, loss_fn, k: int) -> tuple[list, np.ndarray]:
    """Iterate ``step`` k times; returns the k+1 iterates and their losses."""
    if k < 0:
        raise ValueError("k must be nonnegative")
    state = state0
    traj = [np.array(state.x_curr, copy=True)]
    losses = [loss_fn(state.x_curr)]
    for _ in range(k):
        state = step(state)
        traj.append(np.array(state.x_curr, copy=True))
        losses.append(loss_fn(state.x_curr))
    return traj, np.asarray(losses)


# ---------------------------------------------------------------------------
# uniform algorithm interface used by the training / certification pipeline
# ---------------------------------------------------------------------------


class QuadLearnedAlgo:
    """Learned update rule bound to the quadratic problem class."""

    def __init__(self, arch: LearnedQuadArch):
        self.arch = arch

    @property
    def num_params(self) -> int:
        return self.arch.num_params

    def get_flat(self) -> np.ndarray:
        return self.arch.get_flat()

    def set_flat(self, flat: np.ndarray) -> None:
        self.arch.set_flat(flat)

    def reinit(self, rng: np.random.Generator) -> None:
        self.arch = LearnedQuadArch.init(rng)

    def init_state(self, x0: np.ndarray) -> AlgoState:
        return AlgoState(x_curr=np.asarray(x0, dtype=float), x_prev=np.asarray(x0, dtype=float))

    def loss(self, x: np.ndarray, inst) -> float:
        return loss_quadratic(x, inst)

    def step(self, state: AlgoState, inst) -> AlgoState:
        next_state, _ = quad_step_forward(self.arch, state, inst)
        return next_state

    def step_with_tape(self, state: AlgoState, inst):
        return quad_step_forward(self.arch, state, inst)

    def step_backward(self, tape, out_grad: np.ndarray) -> np.ndarray:
        return quad_step_backward(self.arch, tape, out_grad)

    def loss_grad(self, x: np.ndarray, inst) -> np.ndarray:
        return grad_quadratic(x, inst)


class LassoLearnedAlgo:
    """Learned update rule bound to the LASSO class (shared design matrix)."""

    def __init__(self, arch: LearnedLassoArch, ctx: LassoClassContext):
        self.arch = arch
        self.ctx = ctx

    @property
    def num_params(self) -> int:
        return self.arch.num_params

    def get_flat(self) -> np.ndarray:
        return self.arch.get_flat()

    def set_flat(self, flat: np.ndarray) -> None:
        self.arch.set_flat(flat)

    def reinit(self, rng: np.random.Generator) -> None:
        self.arch = LearnedLassoArch.init(rng, prox_tau=1.0 / self.ctx.lipschitz)

    def init_state(self, x0: np.ndarray) -> AlgoState:
        return AlgoState(x_curr=np.asarray(x0, dtype=float), x_prev=np.asarray(x0, dtype=float))

    def loss(self, x: np.ndarray, inst) -> float:
        return loss_lasso(x, inst, self.ctx)

    def step(self, state: AlgoState, inst) -> AlgoState:
        next_state, _ = lasso_step_forward(self.arch, state, inst, self.ctx)
        return next_state

    def step_with_tape(self, state: AlgoState, inst):
        return lasso_step_forward(self.arch, state, inst, self.ctx)

    def step_backward(self, tape, out_grad: np.ndarray) -> np.ndarray:
        return lasso_step_backward(self.arch, tape, out_grad)

    def loss_grad(self, x: np.ndarray, inst) -> np.ndarray:
        return subgrad_lasso(x, inst, self.ctx)


class HbfAlgo:
    def __init__(self, params: HbfParams):
        self.params = params

    def init_state(self, x0: np.ndarray) -> AlgoState:
        return AlgoState(x_curr=np.asarray(x0, dtype=float), x_prev=np.asarray(x0, dtype=float))

    def loss(self, x: np.ndarray, inst) -> float:
        return loss_quadratic(x, inst)

    def step(self, state: AlgoState, inst) -> AlgoState:
        return hbf_step(self.params, state, inst)


class GdAlgo:
    def __init__(self, tau: float):
        self.tau = tau

    def init_state(self, x0: np.ndarray) -> AlgoState:
        return AlgoState(x_curr=np.asarray(x0, dtype=float), x_prev=np.asarray(x0, dtype=float))

    def loss(self, x: np.ndarray, inst) -> float:
        return loss_quadratic(x, inst)

    def step(self, state: AlgoState, inst) -> AlgoState:
        x = state.x_curr
        return AlgoState(x_curr=x - self.tau * grad_quadratic(x, inst), x_prev=x)


class FistaAlgo:
    def __init__(self, ctx: LassoClassContext):
        self.ctx = ctx

    def init_state(self, x0: np.ndarray) -> FistaState:
        return FistaState(x_curr=np.asarray(x0, dtype=float), x_prev=np.asarray(x0, dtype=float))

    def loss(self, x: np.ndarray, inst) -> float:
        return loss_lasso(x, inst, self.ctx)

    def step(self, state: FistaState, inst) -> FistaState:
        return fista_step(state, inst, self.ctx)


class IstaAlgo:
    def __init__(self, ctx: LassoClassContext):
        self.ctx = ctx

    def init_state(self, x0: np.ndarray) -> AlgoState:
        return AlgoState(x_curr=np.asarray(x0, dtype=float), x_prev=np.asarray(x0, dtype=float))

    def loss(self, x: np.ndarray, inst) -> float:
        return loss_lasso(x, inst, self.ctx)

    def step(self, state: AlgoState, inst) -> AlgoState:
        return ista_step(state, inst, self.ctx)


def grad_train_loss_onestep(algo, state, inst) -> np.ndarray:
    """Exact hypergradient of loss(x_next) / loss(x_curr) w.r.t. the flat weights.

    Raises ZeroLossError on a zero denominator; callers skip the term, matching
    the indicator in the ratio training loss.
    """
    l0 = algo.loss(state.x_curr, inst)
    if l0 <= 0.0:
        raise ZeroLossError("loss at the current iterate is zero")
    next_state, tape = algo.step_with_tape(state, inst)
    out_grad = algo.loss_grad(next_state.x_curr, inst) / l0
    return algo.step_backward(tape, out_grad)


def ratio_step(algo, state, inst):
    """One training step's pieces: next state, loss ratio, hypergradient.

    The ratio is None when the denominator is zero (term dropped).
    """
    l0 = algo.loss(state.x_curr, inst)
    next_state, tape = algo.step_with_tape(state, inst)
    if l0 <= 0.0:
        return next_state, None, None
    l1 = algo.loss(next_state.x_curr, inst)
    out_grad = algo.loss_grad(next_state.x_curr, inst) / l0
    return next_state, l1 / l0, algo.step_backward(tape, out_grad)
