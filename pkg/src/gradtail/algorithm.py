"""Gradient-alignment weighting state machine.

Each training batch, every example's loss gradient is compared (by cosine)
against an exponential moving average of past mean gradients. Examples whose
alignment lands near a chosen pivot get their loss upweighted smoothly, up to
``1 + amplitude/2``; everything else decays toward weight 1. The running
absolute-alignment average ``sigma`` rescales alignments so the pivot distance
is measured in units of typical alignment spread.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .mlp import MlpModel, ParamSubset, ParamVector


@dataclass(frozen=True)
class GradTailConfig:
    """Hyperparameters for alignment-based example weighting.

    ``amplitude`` may be zero, which makes every weight exactly 1 (a clean
    way to run the full machinery as a no-op baseline).
    """

    pivot: float = 0.0
    decay: float = 0.99
    amplitude: float = 28.0
    slope: float = 0.75
    sigma_floor: float = 1e-3
    warmup_batches: int = 10
    epsilon_norm: float = 1e-12

    def __post_init__(self) -> None:
        if not 0.0 < self.decay < 1.0:
            raise ValueError(f"decay must lie in (0,1), got {self.decay}")
        if self.amplitude < 0.0:
            raise ValueError(f"amplitude must be >= 0, got {self.amplitude}")
        if self.slope <= 0.0:
            raise ValueError(f"slope must be positive, got {self.slope}")
        if self.sigma_floor <= 0.0:
            raise ValueError(f"sigma_floor must be positive, got {self.sigma_floor}")
        if self.warmup_batches < 0:
            raise ValueError("warmup_batches must be nonnegative")
        if self.epsilon_norm <= 0.0:
            raise ValueError("epsilon_norm must be positive")

    @property
    def max_weight(self) -> float:
        return 1.0 + self.amplitude / 2.0

    @classmethod
    def from_max_weight(cls, max_weight: float, **kwargs) -> "GradTailConfig":
        """Build a config whose peak weight equals ``max_weight`` (>= 1)."""
        if max_weight < 1.0:
            raise ValueError(f"max_weight must be >= 1, got {max_weight}")
        return cls(amplitude=2.0 * (max_weight - 1.0), **kwargs)


@dataclass
class GradTailState:
    """EMA mean gradient, running alignment spread, and the update counter."""

    ema_grad: ParamVector
    sigma: float = 0.0
    updates_seen: int = 0

    def __post_init__(self) -> None:
        if self.sigma < 0.0:
            raise ValueError("sigma must be nonnegative")
        if self.updates_seen < 0:
            raise ValueError("updates_seen must be nonnegative")

    @classmethod
    def fresh(cls, model: MlpModel, subset: ParamSubset) -> "GradTailState":
        return cls(ema_grad=ParamVector.zeros(model, subset))

    def copy(self) -> "GradTailState":
        return GradTailState(
            ParamVector(self.ema_grad.values.copy(), self.ema_grad.layout),
            self.sigma,
            self.updates_seen,
        )


@dataclass(frozen=True)
class BatchWeighting:
    """Per-example alignments and loss weights for one batch.

    Undefined alignments (a vanishing norm on either side of the cosine) are
    recorded as 0.0; ``defined`` marks which entries were real cosines.
    """

    alignments: np.ndarray
    weights: np.ndarray
    warmup_active: bool
    defined: np.ndarray

    def __post_init__(self) -> None:
        if not (self.alignments.shape == self.weights.shape == self.defined.shape):
            raise ValueError("field length mismatch")
        if self.warmup_active and not np.all(self.weights == 1.0):
            raise ValueError("warm-up batches must carry unit weights")


def normalized_dot(a: ParamVector, b: ParamVector, epsilon_norm: float) -> float | None:
    """Cosine similarity a.b/(|a||b|); None when either norm < epsilon_norm."""
    a._check_combinable(b)
    na, nb = a.norm(), b.norm()
    if na < epsilon_norm or nb < epsilon_norm:
        return None
    return float(np.clip(a.dot(b) / (na * nb), -1.0, 1.0))


def activation_f(distance, amplitude: float, slope: float):
    """Weight as a function of pivot distance: 1 + amplitude*logistic(-slope*d).

    Monotonically decreasing from 1 + amplitude/2 at d = 0 toward 1 at
    infinity. Accepts scalars or arrays.
    """
    d = np.asarray(distance, dtype=np.float64)
    if np.any(d < 0.0):
        raise ValueError("distance must be nonnegative")
    out = 1.0 + amplitude / (1.0 + np.exp(slope * d))
    return float(out) if np.isscalar(distance) else out


def ema_update(current, observation, decay: float):
    """decay*current + (1-decay)*observation, elementwise; works on scalars or vectors."""
    if not 0.0 < decay < 1.0:
        raise ValueError("decay must lie in (0,1)")
    if isinstance(current, ParamVector):
        if not isinstance(observation, ParamVector):
            raise ValueError("mixed ParamVector / array EMA update")
        current._check_combinable(observation)
        return ParamVector(decay * current.values + (1.0 - decay) * observation.values, current.layout)
    return decay * current + (1.0 - decay) * observation


def step_arrays(
    state: GradTailState, grads: np.ndarray, config: GradTailConfig
) -> tuple[BatchWeighting, GradTailState]:
    """One batch update on a (batch, n_params) gradient matrix.

    Statement order per update: (1) alignments against the PRE-update EMA
    gradient; (2) batch mean of |alignment| over the defined entries; (3) EMA
    update of sigma; (4) EMA update of the mean gradient (unnormalized); (5)
    weights from the POST-update sigma. During warm-up (first
    ``warmup_batches`` updates, or an EMA gradient still too small to define a
    cosine) every weight is 1 while the statistics keep updating.
    """
    grads = np.asarray(grads, dtype=np.float64)
    if grads.ndim != 2 or grads.shape[0] == 0:
        raise ValueError("grads must be a nonempty (batch, n_params) matrix")
    ema = state.ema_grad.values
    if grads.shape[1] != ema.shape[0]:
        raise ValueError("gradient layout does not match state")

    ema_norm = float(np.linalg.norm(ema))
    grad_norms = np.linalg.norm(grads, axis=1)
    ema_defined = ema_norm >= config.epsilon_norm
    defined = (grad_norms >= config.epsilon_norm) & ema_defined

    alignments = np.zeros(grads.shape[0])
    if ema_defined:
        with np.errstate(invalid="ignore", divide="ignore"):
            cos = (grads @ ema) / (grad_norms * ema_norm)
        alignments[defined] = np.clip(cos[defined], -1.0, 1.0)

    sigma = state.sigma
    if np.any(defined):
        sigma = ema_update(sigma, float(np.mean(np.abs(alignments[defined]))), config.decay)

    new_ema = ema_update(
        state.ema_grad,
        ParamVector(grads.mean(axis=0), state.ema_grad.layout),
        config.decay,
    )

    warmup = state.updates_seen < config.warmup_batches or not ema_defined
    if warmup:
        weights = np.ones(grads.shape[0])
    else:
        scale = max(sigma, config.sigma_floor)
        weights = activation_f(
            np.abs(alignments / scale - config.pivot), config.amplitude, config.slope
        )

    new_state = GradTailState(new_ema, sigma, state.updates_seen + 1)
    return BatchWeighting(alignments, weights, warmup, defined), new_state


def gradtail_step(
    state: GradTailState, grads: Sequence[ParamVector], config: GradTailConfig
) -> tuple[BatchWeighting, GradTailState]:
    """One batch update from a list of per-example gradient vectors."""
    if len(grads) == 0:
        raise ValueError("empty batch")
    for g in grads:
        state.ema_grad._check_combinable(g)
    return step_arrays(state, np.stack([g.values for g in grads]), config)


def weighted_loss(losses: np.ndarray, weighting: BatchWeighting) -> float:
    """Mean over the batch of weight * loss."""
    losses = np.asarray(losses, dtype=np.float64)
    if losses.shape != weighting.weights.shape:
        raise ValueError("length mismatch between losses and weights")
    return float(np.mean(weighting.weights * losses))
