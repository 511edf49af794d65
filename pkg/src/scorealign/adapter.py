"""Feature adapter: expands K compressed frame features back to T frames.

Each output frame is a softmax-weighted convex combination of the K
compressed rows (a learned temporal mixing matrix), refined by a shared
per-frame residual MLP. Mixing logits start concentrated on the nearest
key slot under linear spacing, so a fresh adapter behaves like temporal
nearest-neighbor interpolation; the MLP output layer starts at zero, so
the refinement is initially the identity.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .numkit import (
    MlpParams,
    MlpTape,
    SeededRng,
    ShapeMismatchError,
    adam_step,
    AdamState,
    init_mlp,
    mlp_backward,
    mlp_forward,
    zeros_mlp,
)
from .keyframe import phi_select
from .losses import reg_loss

# Logit scale used by interpolation init. Softmax rows stay concentrated
# but unsaturated, so the mixing remains trainable; a saturated one-hot
# init would zero the softmax jacobian and freeze the logits forever.
DEFAULT_SHARPNESS = 8.0


@dataclass
class AdapterParams:
    mixing_logits: np.ndarray  # (T, K), rows softmax-normalized at use
    mlp: MlpParams  # shared per-frame refiner, D -> hidden -> D

    @property
    def t_frames(self) -> int:
        return self.mixing_logits.shape[0]

    @property
    def k_frames(self) -> int:
        return self.mixing_logits.shape[1]

    def copy(self) -> "AdapterParams":
        return AdapterParams(self.mixing_logits.copy(), self.mlp.copy())


def interpolation_logits(t_frames: int, k: int, sharpness: float = DEFAULT_SHARPNESS) -> np.ndarray:
    """Logits concentrating output frame t on its nearest key slot when key
    slots are spaced linearly over [0, T-1]."""
    if t_frames < 1 or k < 1:
        raise ValueError(f"need T >= 1 and K >= 1, got T={t_frames}, K={k}")
    if k == 1:
        slots = np.zeros(1)
    else:
        slots = np.arange(k) * (t_frames - 1) / (k - 1)
    distance = np.abs(np.arange(t_frames)[:, None] - slots[None, :])
    return -sharpness * distance


def init_adapter(
    t_frames: int,
    k: int,
    feat_dim: int,
    hidden: int,
    rng: SeededRng,
    sharpness: float = DEFAULT_SHARPNESS,
) -> AdapterParams:
    mlp = init_mlp([feat_dim, hidden, feat_dim], rng)
    # zero output layer: the residual refinement starts as the identity
    zero_out = zeros_mlp([feat_dim, hidden, feat_dim])
    mlp.weights[-1] = zero_out.weights[-1]
    mlp.biases[-1] = zero_out.biases[-1]
    return AdapterParams(interpolation_logits(t_frames, k, sharpness), mlp)


def _softmax_rows(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


@dataclass
class AdapterTape:
    compressed: np.ndarray
    mix: np.ndarray  # (T, K) softmax rows
    base: np.ndarray  # (T, D) convex combinations
    mlp_tape: MlpTape


def _check_compressed(params: AdapterParams, compressed: np.ndarray) -> np.ndarray:
    compressed = np.asarray(compressed, dtype=np.float64)
    feat_dim = params.mlp.weights[0].shape[0]
    if compressed.ndim != 2 or compressed.shape != (params.k_frames, feat_dim):
        raise ShapeMismatchError(
            f"compressed features must be ({params.k_frames}, {feat_dim}), "
            f"got {compressed.shape}"
        )
    return compressed


def reconstruct_with_tape(
    params: AdapterParams, compressed: np.ndarray
) -> tuple[np.ndarray, AdapterTape]:
    compressed = _check_compressed(params, compressed)
    mix = _softmax_rows(params.mixing_logits)
    base = mix @ compressed
    refined, mlp_tape = mlp_forward(params.mlp, base)
    return base + refined, AdapterTape(compressed, mix, base, mlp_tape)


def reconstruct(params: AdapterParams, compressed: np.ndarray) -> np.ndarray:
    """(K, D) compressed features -> (T, D) reconstructed sequence."""
    out, _ = reconstruct_with_tape(params, compressed)
    return out


@dataclass
class AdapterGrads:
    mixing_logits: np.ndarray
    mlp: MlpParams

    def scale(self, factor: float) -> "AdapterGrads":
        return AdapterGrads(
            self.mixing_logits * factor,
            MlpParams(
                [w * factor for w in self.mlp.weights],
                [b * factor for b in self.mlp.biases],
            ),
        )

    def add_(self, other: "AdapterGrads") -> None:
        self.mixing_logits += other.mixing_logits
        for i in range(len(self.mlp.weights)):
            self.mlp.weights[i] += other.mlp.weights[i]
            self.mlp.biases[i] += other.mlp.biases[i]


def zeros_grads(params: AdapterParams) -> AdapterGrads:
    return AdapterGrads(
        np.zeros_like(params.mixing_logits),
        MlpParams(
            [np.zeros_like(w) for w in params.mlp.weights],
            [np.zeros_like(b) for b in params.mlp.biases],
        ),
    )


def adapter_backward(
    params: AdapterParams, tape: AdapterTape, grad_out: np.ndarray
) -> AdapterGrads:
    """Backprop a (T, D) output gradient to the mixing logits and the MLP."""
    if grad_out.shape != tape.base.shape:
        raise ShapeMismatchError(
            f"output grad shape {grad_out.shape} != {tape.base.shape}"
        )
    mlp_grads, grad_into_mlp_input = mlp_backward(params.mlp, tape.mlp_tape, grad_out)
    grad_base = grad_out + grad_into_mlp_input  # residual path + refiner path
    grad_mix = grad_base @ tape.compressed.T  # (T, K)
    # softmax backward per row: s * (g - <g, s>)
    inner = np.sum(grad_mix * tape.mix, axis=1, keepdims=True)
    grad_logits = tape.mix * (grad_mix - inner)
    return AdapterGrads(grad_logits, mlp_grads)


def reg_loss_and_grads(
    params: AdapterParams,
    features_batch: list[np.ndarray],
    k: int,
    diversity_weight: float,
) -> tuple[float, AdapterGrads]:
    """Reconstruction penalty over a batch: sum of per-sample Euclidean
    reconstruction errors, compressing each sample with the key-frame
    selector (selection indices are constants, no gradient through them).
    """
    if not features_batch:
        raise ValueError("regularization needs a nonempty batch")
    total = 0.0
    grads = zeros_grads(params)
    for features in features_batch:
        compressed = phi_select(features, k, diversity_weight)
        recon, tape = reconstruct_with_tape(params, compressed)
        value, grad_recon = reg_loss(features, recon)
        total += value
        grads.add_(adapter_backward(params, tape, grad_recon))
    return total, grads


def adapter_param_dict(params: AdapterParams, prefix: str = "adapter") -> dict[str, np.ndarray]:
    out = {f"{prefix}.logits": params.mixing_logits}
    for i, (w, b) in enumerate(zip(params.mlp.weights, params.mlp.biases)):
        out[f"{prefix}.w{i}"] = w
        out[f"{prefix}.b{i}"] = b
    return out


def adapter_grad_dict(grads: AdapterGrads, prefix: str = "adapter") -> dict[str, np.ndarray]:
    out = {f"{prefix}.logits": grads.mixing_logits}
    for i, (w, b) in enumerate(zip(grads.mlp.weights, grads.mlp.biases)):
        out[f"{prefix}.w{i}"] = w
        out[f"{prefix}.b{i}"] = b
    return out


def adapter_train_step(
    params: AdapterParams,
    features_batch: list[np.ndarray],
    k: int,
    diversity_weight: float,
    optimizer: AdamState,
) -> float:
    """One Adam step on the reconstruction penalty; returns its value."""
    value, grads = reg_loss_and_grads(params, features_batch, k, diversity_weight)
    adam_step(optimizer, adapter_param_dict(params), adapter_grad_dict(grads))
    return value
