"""Two-point zeroth-order gradient estimation and in-place update steps.

The estimator perturbs the parameter vector symmetrically along a random
Gaussian direction, evaluates the loss at both points, and keeps only the
scalar projection of the gradient onto that direction.  The direction itself
is never stored: every coordinate is regenerated on demand from a
counter-based generator keyed by (master_seed, step_index).  That is what
keeps the memory cost of an update step independent of the parameter count:
an estimate is one scalar, one seed and one perturbation magnitude.

Direction sampling maps raw 64-bit counter output words through the inverse
normal CDF, so coordinate i of a direction is a pure function of
(master_seed, step_index, i) and can be regenerated in fixed-size blocks
without touching any other coordinate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Any, Callable

import numpy as np
from numpy.random import Philox
from scipy.special import ndtri

__all__ = [
    "NumericOverflowError",
    "PerturbationSeed",
    "ZOConfig",
    "GradientEstimate",
    "StepRecord",
    "sample_direction",
    "spsa_estimate",
    "materialize_estimate",
    "mezo_step",
    "finite_difference_oracle",
    "train_zo",
]

from .trace import TraceRecord, TrainingTrace

# Loss evaluators are pure callables: same (theta, batch) -> same value.
LossEvaluator = Callable[[np.ndarray, Any], float]

# Streaming block size. Fixed, so per-step temporary buffers never scale
# with the parameter count.
STREAM_BLOCK = 4096

_SHIFT_11 = np.uint64(11)
_INV_2_53 = 2.0**-53
_WORDS_PER_COUNTER = 4  # the counter generator emits 4 output words per tick


class NumericOverflowError(RuntimeError):
    """Raised when a perturbed loss evaluation returns a non-finite value."""


@dataclass(frozen=True)
class PerturbationSeed:
    """Key of one direction vector; (master_seed, step_index) fully determine it."""

    master_seed: int
    step_index: int

    def __post_init__(self):
        if self.step_index < 0:
            raise ValueError(f"step_index must be >= 0, got {self.step_index}")


@dataclass(frozen=True)
class ZOConfig:
    learning_rate: float
    steps: int
    batch_size: int
    delta: float = 1e-3
    master_seed: int = 0

    def __post_init__(self):
        if self.delta <= 0:
            raise ValueError(f"delta must be positive, got {self.delta}")
        if self.learning_rate <= 0:
            raise ValueError(f"learning_rate must be positive, got {self.learning_rate}")
        if self.steps < 0:
            raise ValueError(f"steps must be >= 0, got {self.steps}")
        if self.batch_size <= 0:
            raise ValueError(f"batch_size must be positive, got {self.batch_size}")


@dataclass(frozen=True)
class GradientEstimate:
    """O(1)-sized gradient estimate: the dense vector is projected_grad times
    the direction regenerated from ``seed``, never stored."""

    projected_grad: float
    seed: PerturbationSeed
    delta: float


@dataclass(frozen=True)
class StepRecord:
    projected_grad: float
    loss_plus: float
    loss_minus: float


def _bit_generator(seed: PerturbationSeed) -> Philox:
    key = np.array(
        [seed.master_seed % (1 << 64), seed.step_index % (1 << 64)], dtype=np.uint64
    )
    return Philox(key=key)


def _words_to_normals(words: np.ndarray) -> np.ndarray:
    # Map each 64-bit word to an open-interval uniform, then through the
    # inverse normal CDF. The offset keeps u strictly inside (0, 1).
    u = ((words >> _SHIFT_11) + 0.5) * _INV_2_53
    return ndtri(u)


def sample_direction(seed: PerturbationSeed, n: int) -> np.ndarray:
    """Full direction vector: n i.i.d. standard normal entries.

    Bit-identical across calls with the same seed; prefix-stable, so the
    first k entries match ``sample_direction(seed, k)``.
    """
    if n <= 0:
        raise ValueError(f"direction dimension must be positive, got {n}")
    words = _bit_generator(seed).random_raw(n)
    return _words_to_normals(words)


def direction_slice(seed: PerturbationSeed, start: int, count: int) -> np.ndarray:
    """Coordinates [start, start+count) of the direction, regenerated without
    materializing the preceding ones."""
    if start < 0 or count <= 0:
        raise ValueError("need start >= 0 and count > 0")
    gen = _bit_generator(seed)
    skip_ticks, skip_words = divmod(start, _WORDS_PER_COUNTER)
    if skip_ticks:
        gen.advance(skip_ticks)
    words = gen.random_raw(skip_words + count)[skip_words:]
    return _words_to_normals(words)


def _add_scaled_direction(theta: np.ndarray, seed: PerturbationSeed, coeff: float) -> None:
    """theta += coeff * xi(seed), regenerating xi in fixed-size blocks."""
    if coeff == 0.0:
        return
    gen = _bit_generator(seed)
    n = theta.shape[0]
    for start in range(0, n, STREAM_BLOCK):
        count = min(STREAM_BLOCK, n - start)
        words = gen.random_raw(count)
        theta[start : start + count] += coeff * _words_to_normals(words)


def _check_theta(theta: np.ndarray) -> np.ndarray:
    theta = np.asarray(theta)
    if theta.ndim != 1 or theta.size == 0:
        raise ValueError("theta must be a nonempty 1-D array")
    if theta.dtype != np.float64:
        raise ValueError("theta must be float64 for in-place perturbation")
    return theta


def _two_point_losses(
    evaluator: LossEvaluator,
    theta: np.ndarray,
    batch: Any,
    delta: float,
    seed: PerturbationSeed,
) -> tuple[float, float, float]:
    """Perturb in place, evaluate both points on the SAME batch, restore.

    Restores theta before raising if either loss is non-finite.
    """
    _add_scaled_direction(theta, seed, +delta)
    loss_plus = float(evaluator(theta, batch))
    if not math.isfinite(loss_plus):
        _add_scaled_direction(theta, seed, -delta)
        raise NumericOverflowError(
            f"non-finite loss {loss_plus!r} at theta + delta*xi (seed={seed})"
        )
    _add_scaled_direction(theta, seed, -2.0 * delta)
    loss_minus = float(evaluator(theta, batch))
    if not math.isfinite(loss_minus):
        _add_scaled_direction(theta, seed, +delta)
        raise NumericOverflowError(
            f"non-finite loss {loss_minus!r} at theta - delta*xi (seed={seed})"
        )
    _add_scaled_direction(theta, seed, +delta)
    projected = (loss_plus - loss_minus) / (2.0 * delta)
    return projected, loss_plus, loss_minus


def spsa_estimate(
    evaluator: LossEvaluator,
    theta: np.ndarray,
    batch: Any,
    delta: float,
    seed: PerturbationSeed,
) -> GradientEstimate:
    """Two-point gradient estimate [L(theta+delta*xi) - L(theta-delta*xi)] / (2*delta).

    Exactly two evaluator calls; theta is perturbed in place and restored to
    within floating-point drift of its entry value.
    """
    theta = _check_theta(theta)
    if delta <= 0:
        raise ValueError(f"delta must be positive, got {delta}")
    projected, _, _ = _two_point_losses(evaluator, theta, batch, delta, seed)
    return GradientEstimate(projected_grad=projected, seed=seed, delta=delta)


def materialize_estimate(est: GradientEstimate, n: int) -> np.ndarray:
    """Dense form projected_grad * xi(seed). Test-and-debug use only."""
    if n <= 0:
        raise ValueError(f"dimension must be positive, got {n}")
    if est.projected_grad == 0.0:
        return np.zeros(n)
    return est.projected_grad * sample_direction(est.seed, n)


def mezo_step(
    evaluator: LossEvaluator,
    theta: np.ndarray,
    batch: Any,
    config: ZOConfig,
    step_index: int,
) -> StepRecord:
    """One in-place update theta_i <- theta_i - lr * projected_grad * xi_i.

    The direction is streamed from the step seed in fixed-size blocks; no
    buffer proportional to len(theta) is allocated. On estimator failure
    theta is left in its pre-step state.
    """
    theta = _check_theta(theta)
    seed = PerturbationSeed(config.master_seed, step_index)
    projected, loss_plus, loss_minus = _two_point_losses(
        evaluator, theta, batch, config.delta, seed
    )
    _add_scaled_direction(theta, seed, -config.learning_rate * projected)
    return StepRecord(projected_grad=projected, loss_plus=loss_plus, loss_minus=loss_minus)


def finite_difference_oracle(
    evaluator: LossEvaluator,
    theta: np.ndarray,
    batch: Any,
    h: float = 1e-5,
) -> np.ndarray:
    """Central-difference gradient, 2n evaluator calls. Test-only verification
    oracle for every gradient claim in this package."""
    theta = _check_theta(theta)
    if h <= 0:
        raise ValueError(f"h must be positive, got {h}")
    grad = np.empty_like(theta)
    for i in range(theta.shape[0]):
        orig = theta[i]
        theta[i] = orig + h
        lp = float(evaluator(theta, batch))
        theta[i] = orig - h
        lm = float(evaluator(theta, batch))
        theta[i] = orig
        if not (math.isfinite(lp) and math.isfinite(lm)):
            raise NumericOverflowError(f"non-finite loss near coordinate {i}")
        grad[i] = (lp - lm) / (2.0 * h)
    return grad


def train_zo(
    evaluator: LossEvaluator,
    theta: np.ndarray,
    data,
    config: ZOConfig,
    eval_hook: Callable[[np.ndarray], float] | None = None,
    eval_every: int = 100,
) -> TrainingTrace:
    """Run ``config.steps`` in-place update steps over seeded minibatch draws.

    ``data`` provides train_x / train_y (see data.ArraySplits); dev accuracy
    is whatever ``eval_hook(theta)`` returns, recorded every ``eval_every``
    steps. The per-step loss is the mean of the two perturbed losses. Fully
    reproducible from the config: batch order is a pure function of
    (master_seed, train size, batch_size) and perturbations of
    (master_seed, step_index).
    """
    theta = _check_theta(theta)
    train_x = np.asarray(data.train_x)
    train_y = np.asarray(data.train_y)
    n_train = train_x.shape[0]
    if n_train == 0:
        raise ValueError("train split is empty")
    if eval_every <= 0:
        raise ValueError(f"eval_every must be positive, got {eval_every}")

    batch_rng = np.random.default_rng(config.master_seed)
    batch_size = min(config.batch_size, n_train)
    records = []
    for step in range(config.steps):
        idx = batch_rng.choice(n_train, size=batch_size, replace=False)
        batch = (train_x[idx], train_y[idx])
        rec = mezo_step(evaluator, theta, batch, config, step)
        dev_acc = None
        if eval_hook is not None and (step + 1) % eval_every == 0:
            dev_acc = float(eval_hook(theta))
        records.append(
            TraceRecord(
                step=step,
                loss=0.5 * (rec.loss_plus + rec.loss_minus),
                projected_grad=rec.projected_grad,
                dev_accuracy=dev_acc,
            )
        )
    return TrainingTrace(records=tuple(records))
