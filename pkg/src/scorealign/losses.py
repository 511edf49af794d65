"""Training losses with analytic gradients.

All losses return (value, gradient). The correlation loss is computed
within a mini-batch, so its value depends on batch composition; batches
whose predictions or targets have (near) zero variance cannot define a
correlation and raise DegenerateBatchError for the caller to handle.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

VARIANCE_FLOOR = 1e-12
NORM_FLOOR = 1e-12


class DegenerateBatchError(ValueError):
    """Batch correlation is undefined (too few points or zero variance)."""


@dataclass(frozen=True)
class LossWeights:
    """Trade-off weights: lam scales the precision term, alpha the replay
    term, beta the reconstruction regularizer."""

    lam: float = 0.05
    alpha: float = 1.0
    beta: float = 1.0

    def __post_init__(self) -> None:
        if self.lam < 0 or self.alpha < 0 or self.beta < 0:
            raise ValueError(f"loss weights must be >= 0, got {self}")


def _check_lengths(pred: np.ndarray, truth: np.ndarray) -> None:
    if pred.shape != truth.shape or pred.ndim != 1:
        raise ValueError(
            f"pred and truth must be 1-d vectors of equal length, got "
            f"{pred.shape} vs {truth.shape}"
        )


def correlation_loss(pred: np.ndarray, truth: np.ndarray) -> tuple[float, np.ndarray]:
    """1 - PLCC(pred, truth), with gradient w.r.t. pred.

    Invariant under positive affine maps of pred; value in [0, 2].
    """
    pred = np.asarray(pred, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    _check_lengths(pred, truth)
    n = pred.size
    if n < 2:
        raise DegenerateBatchError(f"correlation needs >= 2 samples, got {n}")
    a = pred - pred.mean()
    b = truth - truth.mean()
    ssq_a = float(a @ a)
    ssq_b = float(b @ b)
    if ssq_a / n < VARIANCE_FLOOR or ssq_b / n < VARIANCE_FLOOR:
        raise DegenerateBatchError(
            f"variance below {VARIANCE_FLOOR:g} (pred {ssq_a / n:.3e}, "
            f"truth {ssq_b / n:.3e})"
        )
    cross = float(a @ b)
    denom = np.sqrt(ssq_a * ssq_b)
    plcc = cross / denom
    grad = -(b - (cross / ssq_a) * a) / denom
    return 1.0 - plcc, grad


def mse_loss(pred: np.ndarray, truth: np.ndarray) -> tuple[float, np.ndarray]:
    """(1/2N) sum of squared residuals; gradient (pred - truth)/N."""
    pred = np.asarray(pred, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    _check_lengths(pred, truth)
    n = pred.size
    if n < 1:
        raise ValueError("mse needs at least one sample")
    residual = pred - truth
    value = float(residual @ residual) / (2.0 * n)
    return value, residual / n


def combined_loss(
    pred: np.ndarray, truth: np.ndarray, lam: float
) -> tuple[float, np.ndarray]:
    """Correlation loss plus lam times the precision loss."""
    cor_value, cor_grad = correlation_loss(pred, truth)
    mse_value, mse_grad = mse_loss(pred, truth)
    return cor_value + lam * mse_value, cor_grad + lam * mse_grad


def reg_loss(
    original: np.ndarray, reconstructed: np.ndarray
) -> tuple[float, np.ndarray]:
    """Euclidean norm of the reconstruction error, with gradient w.r.t.
    the reconstruction.

    The gradient is the unit direction (reconstructed - original)/norm,
    with a zero subgradient when the norm is (numerically) zero.
    """
    original = np.asarray(original, dtype=np.float64)
    reconstructed = np.asarray(reconstructed, dtype=np.float64)
    if original.shape != reconstructed.shape:
        raise ValueError(
            f"shape mismatch: original {original.shape} vs reconstructed "
            f"{reconstructed.shape}"
        )
    diff = reconstructed - original
    norm = float(np.sqrt(np.sum(diff * diff)))
    if norm < NORM_FLOOR:
        return 0.0, np.zeros_like(diff)
    return norm, diff / norm
