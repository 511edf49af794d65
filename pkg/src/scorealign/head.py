"""Probabilistic regression head.

Pools a frame-feature sequence to one vector, maps it through a small MLP
to (mu, log_var), and produces either a re-parameterized sample (training)
or mu itself (evaluation). Parameterizing the spread as log-variance keeps
sigma positive without clamping.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .numkit import MlpParams, SeededRng, ShapeMismatchError, init_mlp, mlp_forward


@dataclass(frozen=True)
class ScoreDistribution:
    """Gaussian over the predicted score."""

    mu: float
    log_var: float

    @property
    def sigma(self) -> float:
        return float(np.exp(self.log_var / 2.0))


@dataclass(frozen=True)
class HeadConfig:
    pooling: str = "mean"
    hidden_sizes: tuple[int, ...] = (64, 32)
    score_range: tuple[float, float] = (1.0, 5.0)

    def __post_init__(self) -> None:
        if self.pooling != "mean":
            raise ValueError(f"unsupported pooling '{self.pooling}'")
        lo, hi = self.score_range
        if not lo < hi:
            raise ValueError(f"score range must satisfy lo < hi, got {self.score_range}")


def init_head(feat_dim: int, config: HeadConfig, rng: SeededRng) -> MlpParams:
    """Head network: feat_dim -> hidden layers -> (mu, log_var)."""
    return init_mlp([feat_dim, *config.hidden_sizes, 2], rng)


def pool(features: np.ndarray) -> np.ndarray:
    """Temporal mean over frames: (T, D) -> (D,)."""
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 2 or features.shape[0] < 1:
        raise ShapeMismatchError(
            f"features must be a nonempty (T, D) matrix, got shape {features.shape}"
        )
    return features.mean(axis=0)


def predict_distribution(params: MlpParams, features: np.ndarray) -> ScoreDistribution:
    pooled = pool(features)
    out, _ = mlp_forward(params, pooled[None, :])
    return ScoreDistribution(mu=float(out[0, 0]), log_var=float(out[0, 1]))


def reparam_sample(dist: ScoreDistribution, eps: float) -> float:
    """s_hat = mu + eps * sigma; differentiable in (mu, log_var) for fixed eps."""
    return dist.mu + eps * dist.sigma


def predict_eval(params: MlpParams, features: np.ndarray) -> float:
    """Deterministic evaluation: the distribution mean (eps pinned to 0)."""
    return predict_distribution(params, features).mu


def batch_sample(
    head_out: np.ndarray, eps: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Re-parameterized scores for a batch of head outputs.

    head_out is the (n, 2) matrix of (mu, log_var) rows. Returns the score
    vector and the sigma vector (needed for the backward pass).
    """
    if head_out.ndim != 2 or head_out.shape[1] != 2:
        raise ShapeMismatchError(f"head output must be (n, 2), got {head_out.shape}")
    if eps.shape != (head_out.shape[0],):
        raise ShapeMismatchError(
            f"eps must have shape ({head_out.shape[0]},), got {eps.shape}"
        )
    sigma = np.exp(head_out[:, 1] / 2.0)
    return head_out[:, 0] + eps * sigma, sigma


def batch_sample_backward(
    grad_scores: np.ndarray, eps: np.ndarray, sigma: np.ndarray
) -> np.ndarray:
    """Gradient of the sampled scores back to the (mu, log_var) outputs.

    d s/d mu = 1 and d s/d log_var = eps * sigma / 2.
    """
    grad_out = np.empty((grad_scores.size, 2))
    grad_out[:, 0] = grad_scores
    grad_out[:, 1] = grad_scores * eps * sigma / 2.0
    return grad_out
