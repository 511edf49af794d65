"""Small dense numerical kernel: MLPs with explicit backprop, Adam, seeded RNG.

Everything runs on float64 numpy arrays. Matrices are row-major with one
sample per row. The MLP family is fixed: fully-connected layers, rectifier
on hidden layers, identity on the output layer.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np


class ShapeMismatchError(ValueError):
    """Operand shapes do not chain."""


class NonFiniteGradientError(FloatingPointError):
    """A gradient block contains NaN or infinity; the run must abort."""


def derive_seed(seed: int, label: str) -> int:
    """Stable sub-seed for an independent random stream.

    Keyed on (seed, label) so adding a new consumer never shifts the
    draws seen by existing ones.
    """
    digest = hashlib.sha256(f"{seed}/{label}".encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


class SeededRng:
    """Deterministic random source backed by PCG64.

    Gaussian draws use Box-Muller over the raw uniform stream, so normal
    variates depend only on the seed and the call sequence, not on any
    library distribution code.
    """

    def __init__(self, seed: int):
        self._gen = np.random.Generator(np.random.PCG64(seed))

    def uniform(self, n: int) -> np.ndarray:
        """n draws from U[0, 1)."""
        return self._gen.random(n)

    def normal(self, n: int) -> np.ndarray:
        """n standard-normal draws via Box-Muller."""
        if n < 0:
            raise ValueError(f"draw count must be >= 0, got {n}")
        if n == 0:
            return np.zeros(0)
        pairs = (n + 1) // 2
        u1 = 1.0 - self._gen.random(pairs)  # (0, 1]: keeps log finite
        u2 = self._gen.random(pairs)
        radius = np.sqrt(-2.0 * np.log(u1))
        angle = 2.0 * np.pi * u2
        z = np.concatenate([radius * np.cos(angle), radius * np.sin(angle)])
        return z[:n]

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    def get_state(self) -> dict:
        return self._gen.bit_generator.state

    def set_state(self, state: dict) -> None:
        self._gen.bit_generator.state = state


@dataclass
class MlpParams:
    """Weights (fan_in, fan_out) and biases (fan_out,) per layer."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]

    @property
    def sizes(self) -> list[int]:
        return [self.weights[0].shape[0]] + [w.shape[1] for w in self.weights]

    @property
    def n_layers(self) -> int:
        return len(self.weights)

    def n_params(self) -> int:
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))

    def copy(self) -> "MlpParams":
        return MlpParams([w.copy() for w in self.weights], [b.copy() for b in self.biases])


def init_mlp(sizes: list[int], rng: SeededRng) -> MlpParams:
    """Scaled-uniform (Glorot) weights, zero biases."""
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        w = (rng.uniform(fan_in * fan_out) * 2.0 - 1.0) * bound
        weights.append(w.reshape(fan_in, fan_out))
        biases.append(np.zeros(fan_out))
    return MlpParams(weights, biases)


def zeros_mlp(sizes: list[int]) -> MlpParams:
    weights = [np.zeros((i, o)) for i, o in zip(sizes[:-1], sizes[1:])]
    biases = [np.zeros(o) for o in sizes[1:]]
    return MlpParams(weights, biases)


@dataclass
class MlpTape:
    """Activation cache from a forward pass, consumed by mlp_backward."""

    x: np.ndarray
    pre: list[np.ndarray]
    post: list[np.ndarray]


def mlp_forward(params: MlpParams, x: np.ndarray) -> tuple[np.ndarray, MlpTape]:
    """Forward pass over a batch of rows; rectifier on hidden layers only."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise ShapeMismatchError(f"input must be 2-d, got shape {x.shape}")
    if x.shape[1] != params.weights[0].shape[0]:
        raise ShapeMismatchError(
            f"input has {x.shape[1]} columns but first layer expects "
            f"{params.weights[0].shape[0]}"
        )
    last = params.n_layers - 1
    a = x
    pre, post = [], []
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        z = a @ w + b
        a = z if i == last else np.maximum(z, 0.0)
        pre.append(z)
        post.append(a)
    return a, MlpTape(x, pre, post)


def mlp_backward(
    params: MlpParams, tape: MlpTape, grad_out: np.ndarray
) -> tuple[MlpParams, np.ndarray]:
    """Backprop through a taped forward pass.

    Returns gradients in the same (weights, biases) layout as the params,
    plus the gradient with respect to the input batch.
    """
    grad_out = np.asarray(grad_out, dtype=np.float64)
    if len(tape.pre) != params.n_layers:
        raise ShapeMismatchError(
            f"tape has {len(tape.pre)} layers but params have {params.n_layers}"
        )
    if grad_out.shape != tape.post[-1].shape:
        raise ShapeMismatchError(
            f"output grad shape {grad_out.shape} != forward output shape "
            f"{tape.post[-1].shape}"
        )
    last = params.n_layers - 1
    grads_w: list[np.ndarray] = [None] * params.n_layers  # type: ignore[list-item]
    grads_b: list[np.ndarray] = [None] * params.n_layers  # type: ignore[list-item]
    g = grad_out
    for i in range(last, -1, -1):
        d_pre = g if i == last else g * (tape.pre[i] > 0)
        a_prev = tape.x if i == 0 else tape.post[i - 1]
        grads_w[i] = a_prev.T @ d_pre
        grads_b[i] = d_pre.sum(axis=0)
        g = d_pre @ params.weights[i].T
    return MlpParams(grads_w, grads_b), g


@dataclass
class AdamState:
    """Adam moments plus hyperparameters; one (m, v, t) triple per block."""

    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    t: dict[str, int] = field(default_factory=dict)


def adam_step(
    state: AdamState, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]
) -> None:
    """One Adam update, in place, over the blocks present in grads.

    Decoupled weight decay scales each block by (1 - lr*wd) before the
    Adam delta is applied.
    """
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradientError(f"non-finite gradient in block '{name}'")
        if name not in params:
            raise ShapeMismatchError(f"gradient for unknown parameter block '{name}'")
    for name, g in grads.items():
        p = params[name]
        if name not in state.m:
            state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
            state.t[name] = 0
        state.t[name] += 1
        t = state.t[name]
        m = state.m[name]
        v = state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        m_hat = m / (1.0 - state.beta1**t)
        v_hat = v / (1.0 - state.beta2**t)
        if state.weight_decay != 0.0:
            p *= 1.0 - state.lr * state.weight_decay
        p -= state.lr * m_hat / (np.sqrt(v_hat) + state.eps)


def gaussian_sample(rng: SeededRng, n: int) -> np.ndarray:
    """n standard-normal draws from the seeded source."""
    return rng.normal(n)
