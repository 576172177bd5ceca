"""Minimal dense linear algebra for the learned update rules.

Bias-free feed-forward nets with rectified-linear activations, exact
reverse-mode gradients via a per-pass tape, a from-scratch Adam optimizer,
and a central finite-difference oracle used by the tests.

Nets are applied to batches: an input of shape (batch, in_dim) is mapped
through ``H @ W.T`` per layer, so a per-coordinate 1x1-convolution block is
just a batch over coordinates.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = ["DenseNet", "GradTape", "AdamState", "adam_step", "finite_diff"]


@dataclass
class GradTape:
    """Per-layer inputs and pre-activations cached by one forward pass."""

    inputs: list
    pre_acts: list


@dataclass
class DenseNet:
    """Bias-free fully-connected net; ``activation_mask[i]`` rectifies layer i's output."""

    weights: list  # list of (out, in) matrices
    activation_mask: list

    def __post_init__(self):
        if len(self.weights) != len(self.activation_mask):
            raise ValueError("one activation flag per layer required")
        for a, b in zip(self.weights[:-1], self.weights[1:]):
            if a.shape[0] != b.shape[1]:
                raise ValueError("layer dimensions do not chain")

    @classmethod
    def init(cls, dims: list[int], activation_mask: list[bool], rng: np.random.Generator) -> "DenseNet":
        """Uniform init in [-1/sqrt(fan_in), 1/sqrt(fan_in)] per layer."""
        weights = []
        for fan_in, fan_out in zip(dims[:-1], dims[1:]):
            bound = 1.0 / np.sqrt(fan_in)
            weights.append(rng.uniform(-bound, bound, size=(fan_out, fan_in)))
        return cls(weights=weights, activation_mask=list(activation_mask))

    @property
    def in_dim(self) -> int:
        return self.weights[0].shape[1]

    @property
    def num_params(self) -> int:
        return sum(W.size for W in self.weights)

    def get_flat(self) -> np.ndarray:
        return np.concatenate([W.ravel() for W in self.weights])

    def set_flat(self, flat: np.ndarray) -> None:
        if flat.shape != (self.num_params,):
            raise ValueError("flat vector length does not match architecture")
        off = 0
        for i, W in enumerate(self.weights):
            self.weights[i] = flat[off: off + W.size].reshape(W.shape)
            off += W.size

    def forward(self, x: np.ndarray) -> tuple[np.ndarray, GradTape]:
        """Forward pass; accepts a vector or a (batch, in_dim) matrix."""
        x = np.asarray(x, dtype=float)
        squeeze = x.ndim == 1
        H = x[None, :] if squeeze else x
        if H.shape[1] != self.in_dim:
            raise ValueError(f"input dim {H.shape[1]} != net in-dim {self.in_dim}")
        inputs, pre_acts = [], []
        for W, act in zip(self.weights, self.activation_mask):
            inputs.append(H)
            Z = H @ W.T
            pre_acts.append(Z)
            H = np.maximum(Z, 0.0) if act else Z
        out = H[0] if squeeze else H
        return out, GradTape(inputs=inputs, pre_acts=pre_acts)

    def backward(self, tape: GradTape, out_grad: np.ndarray) -> tuple[np.ndarray, list]:
        """Exact reverse-mode pass; rectifier subgradient at 0 is 0."""
        if len(tape.inputs) != len(self.weights):
            raise ValueError("tape does not match this net")
        G = np.asarray(out_grad, dtype=float)
        squeeze = G.ndim == 1
        if squeeze:
            G = G[None, :]
        weight_grads = [None] * len(self.weights)
        for i in range(len(self.weights) - 1, -1, -1):
            if self.activation_mask[i]:
                G = G * (tape.pre_acts[i] > 0)
            weight_grads[i] = G.T @ tape.inputs[i]
            G = G @ self.weights[i]
        in_grad = G[0] if squeeze else G
        return in_grad, weight_grads


@dataclass
class AdamState:
    """Moment estimates and counters of the standard bias-corrected update."""

    first_moment: np.ndarray
    second_moment: np.ndarray
    step_count: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps_hat: float = 1e-8

    @classmethod
    def zeros(cls, dim: int, lr: float = 1e-3, **kwargs) -> "AdamState":
        return cls(first_moment=np.zeros(dim), second_moment=np.zeros(dim), lr=lr, **kwargs)


def adam_step(state: AdamState, params: np.ndarray, grads: np.ndarray) -> tuple[np.ndarray, AdamState]:
    """One Adam update; returns new params, mutates and returns the state."""
    params = np.asarray(params, dtype=float)
    grads = np.asarray(grads, dtype=float)
    if params.shape != grads.shape or params.shape != state.first_moment.shape:
        raise ValueError("params/grads/state length mismatch")
    state.step_count += 1
    t = state.step_count
    state.first_moment = state.beta1 * state.first_moment + (1 - state.beta1) * grads
    state.second_moment = state.beta2 * state.second_moment + (1 - state.beta2) * grads**2
    m_hat = state.first_moment / (1 - state.beta1**t)
    v_hat = state.second_moment / (1 - state.beta2**t)
    new_params = params - state.lr * m_hat / (np.sqrt(v_hat) + state.eps_hat)
    return new_params, state


def finite_diff(f, x: np.ndarray, h: float = 1e-6) -> np.ndarray:
    """Central differences (f(x + h e_i) - f(x - h e_i)) / 2h."""
    x = np.asarray(x, dtype=float)
    g = np.zeros_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e.flat[i] = h
        g.flat[i] = (f(x + e) - f(x - e)) / (2 * h)
    return g
