"""First-order optimizers and the fixed-epoch early-stopping driver.

Parameters and gradients are flat name -> array dicts, so the encoder
tensors and the segmental weight vector update uniformly.  Gradient
clipping rescales the concatenation of all gradients to the configured
global L2 norm before any accumulator is touched.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Iterable

import numpy as np

OPTIMIZER_KINDS = ("sgd_momentum", "adagrad", "rmsprop")


class NonFiniteGradientError(ValueError):
    """A gradient block contains NaN or infinity."""


@dataclass(frozen=True)
class OptimizerConfig:
    kind: str = "adagrad"
    step_size: float = 0.01
    momentum: float = 0.9  # sgd_momentum only
    decay: float = 0.9  # rmsprop only
    clip_norm: float | None = None
    epochs: int = 10
    epsilon: float = 1e-8

    def __post_init__(self):
        if self.kind not in OPTIMIZER_KINDS:
            raise ValueError(f"unknown optimizer kind {self.kind!r}")
        if self.step_size <= 0:
            raise ValueError("step_size must be positive")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError("momentum must lie in [0, 1)")
        if not 0.0 < self.decay < 1.0:
            raise ValueError("decay must lie in (0, 1)")
        if self.clip_norm is not None and self.clip_norm <= 0:
            raise ValueError("clip_norm must be positive when set")


class OptimizerState:
    """Per-parameter accumulators, created lazily to match gradient shapes."""

    def __init__(self):
        self.slots: dict[str, np.ndarray] = {}

    def slot(self, name: str, like: np.ndarray) -> np.ndarray:
        if name not in self.slots:
            self.slots[name] = np.zeros_like(like)
        return self.slots[name]


def global_norm(grads: dict[str, np.ndarray]) -> float:
    return math.sqrt(sum(float((g * g).sum()) for g in grads.values()))


def clip_gradients(grads: dict[str, np.ndarray], clip_norm: float) -> float:
    """Rescale all gradients in place when their global norm exceeds the cap."""
    norm = global_norm(grads)
    if norm > clip_norm:
        scale = clip_norm / norm
        for g in grads.values():
            g *= scale
    return norm


def step(
    config: OptimizerConfig,
    state: OptimizerState,
    params: dict[str, np.ndarray],
    grads: dict[str, np.ndarray],
) -> tuple[dict[str, np.ndarray], OptimizerState]:
    """Apply one update in place; returns (params, state) for convenience."""
    for name, g in grads.items():
        if not np.isfinite(g).all():
            raise NonFiniteGradientError(f"non-finite gradient in block {name!r}")
        if g.shape != params[name].shape:
            raise ValueError(f"gradient shape mismatch for block {name!r}")
    if config.clip_norm is not None:
        clip_gradients(grads, config.clip_norm)
    eta = config.step_size
    for name, g in grads.items():
        p = params[name]
        if config.kind == "sgd_momentum":
            v = state.slot(name, g)
            v *= config.momentum
            v += g
            p -= eta * v
        elif config.kind == "adagrad":
            acc = state.slot(name, g)
            acc += g * g
            p -= eta * g / (np.sqrt(acc) + config.epsilon)
        else:  # rmsprop
            acc = state.slot(name, g)
            acc *= config.decay
            acc += (1.0 - config.decay) * g * g
            p -= eta * g / (np.sqrt(acc) + config.epsilon)
    return params, state


def early_stop_driver(
    train_fn: Callable[[int], object],
    eval_fn: Callable[[object], float],
    epochs: int,
) -> tuple[object, int, list[float]]:
    """Run every epoch, keep the checkpoint with the best (lowest) dev metric.

    ``train_fn(epoch)`` trains one epoch and returns a checkpoint;
    ``eval_fn(checkpoint)`` scores it.  Ties go to the earlier epoch.
    Returns (best checkpoint, best epoch starting at 1, metric history).
    """
    best_ckpt = None
    best_metric = math.inf
    best_epoch = 0
    history: list[float] = []
    for epoch in range(1, epochs + 1):
        ckpt = train_fn(epoch)
        metric = float(eval_fn(ckpt))
        history.append(metric)
        if metric < best_metric:
            best_ckpt, best_metric, best_epoch = ckpt, metric, epoch
    return best_ckpt, best_epoch, history


def shuffled_order(rng: np.random.Generator, count: int) -> Iterable[int]:
    """Seeded per-epoch utterance order (mini-batch is one utterance)."""
    order = np.arange(count)
    rng.shuffle(order)
    return order.tolist()
