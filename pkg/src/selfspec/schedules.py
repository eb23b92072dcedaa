"""Layer-dropout and early-exit-loss schedules.

Layer dropout: each layer l at step t is skipped per sample with
probability p(l, t) = S(t) * D(l) * p_max, where D ramps exponentially
from 0 at the first layer to 1 at the last, and S is either constant 1
or the same exponential ramp over training steps. A skipped layer
contributes nothing: the residual stream passes through unchanged (no
1/(1-p) rescaling at train or test time).

Early exit loss: the total training loss is a convex combination of
per-layer-exit cross entropies. Exit l (the unembedding of the output
of layer l) carries a raw scale e(l) that grows quadratically with
depth, with the final layer additionally anchored; a binary curriculum
C(t, l) gates which exits are active at step t, and active scales are
renormalized to sum to 1.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
import torch

from selfspec import nn as core


def layer_drop_scale(layer: int, n_layers: int) -> float:
    """Per-layer dropout ramp: 0 at layer 0 up to 1 at the last layer.

    Exponential in the layer index: exp(l * ln2 / (L-1)) - 1. For a
    single-layer model the ramp degenerates to 0 (that layer is never
    dropped).
    """
    if not 0 <= layer < n_layers:
        raise ValueError(f"layer {layer} out of range for {n_layers} layers")
    if n_layers == 1:
        return 0.0
    return math.exp(layer * math.log(2.0) / (n_layers - 1)) - 1.0


def time_drop_scale(step: int, total_steps: int, curriculum: str) -> float:
    """Dropout scale over training time: constant 1, or an exponential ramp 0 -> 1."""
    if not 0 <= step < total_steps:
        raise ValueError(f"step {step} out of range for {total_steps} steps")
    if curriculum == "constant":
        return 1.0
    if curriculum == "exponential":
        if total_steps == 1:
            return 1.0
        return math.exp(step * math.log(2.0) / (total_steps - 1)) - 1.0
    raise ValueError(f"unknown dropout time curriculum {curriculum!r}")


def mean_layer_drop_scale(n_layers: int) -> float:
    """Closed-form mean of the per-layer ramp (geometric series audit)."""
    if n_layers == 1:
        return 0.0
    r = 2.0 ** (1.0 / (n_layers - 1))
    return (2.0 ** (n_layers / (n_layers - 1)) - 1.0) / (r - 1.0) / n_layers - 1.0


@dataclass(frozen=True)
class DropoutSchedule:
    """Layer-dropout configuration for one training run.

    ``layer_curriculum`` is "exponential" for the depth ramp D(l); the
    "constant" variant exists for ablations and applies the ramp's mean
    to every layer, keeping the average dropout identical.
    """

    p_max: float
    n_layers: int
    total_steps: int
    time_curriculum: str = "constant"  # constant | exponential
    layer_curriculum: str = "exponential"  # exponential | constant
    seed: int = 0

    def __post_init__(self) -> None:
        if not 0.0 <= self.p_max <= 1.0:
            raise ValueError(f"p_max must be in [0, 1], got {self.p_max}")
        if self.total_steps < 1:
            raise ValueError("total_steps must be >= 1")
        if self.time_curriculum not in ("constant", "exponential"):
            raise ValueError(f"unknown time curriculum {self.time_curriculum!r}")
        if self.layer_curriculum not in ("exponential", "constant"):
            raise ValueError(f"unknown layer curriculum {self.layer_curriculum!r}")

    def rate(self, layer: int, step: int) -> float:
        """Dropout probability for one layer at one step."""
        if self.layer_curriculum == "constant":
            depth_scale = mean_layer_drop_scale(self.n_layers)
            if not 0 <= layer < self.n_layers:
                raise ValueError(f"layer {layer} out of range for {self.n_layers} layers")
        else:
            depth_scale = layer_drop_scale(layer, self.n_layers)
        return (
            time_drop_scale(step, self.total_steps, self.time_curriculum)
            * depth_scale
            * self.p_max
        )

    def rates(self, step: int) -> np.ndarray:
        return np.array([self.rate(l, step) for l in range(self.n_layers)])


def dropout_rate(layer: int, step: int, schedule: DropoutSchedule) -> float:
    return schedule.rate(layer, step)


def sample_drop_mask(schedule: DropoutSchedule, step: int, batch_size: int) -> np.ndarray:
    """Sample the [n_layers, batch] boolean drop mask for one step.

    True means "skip this layer for this sample". Uses a counter-based
    generator keyed on (seed, step), so the mask is a pure function of
    (seed, step, layer, sample) for a fixed batch size, independent of
    evaluation order.
    """
    key = np.array([np.uint64(schedule.seed & 0xFFFFFFFFFFFFFFFF), np.uint64(step)], dtype=np.uint64)
    rng = np.random.Generator(np.random.Philox(key=key))
    u = rng.random((schedule.n_layers, batch_size))
    p = schedule.rates(step)
    return u < p[:, None]


def exit_loss_scale(layer: int, n_layers: int, scale: float) -> float:
    """Raw per-exit loss weight, quadratic in depth with an anchored final exit.

    For layer l < L-1 the weight is scale * l*(l+1)/2 (the running sum
    0+1+...+l); the final layer gets (L-1) plus the same sum so it
    dominates even when ``scale`` is small, and collapses to the plain
    final-layer loss when ``scale`` is 0.
    """
    if not 0 <= layer < n_layers:
        raise ValueError(f"layer {layer} out of range for {n_layers} layers")
    tri = layer * (layer + 1) / 2.0
    if layer < n_layers - 1:
        return scale * tri
    return (n_layers - 1) + scale * (n_layers - 2) * (n_layers - 1) / 2.0


@dataclass(frozen=True)
class EarlyExitLossSchedule:
    """Early-exit loss configuration: raw scales plus an enablement curriculum."""

    scale: float
    n_layers: int
    total_steps: int
    curriculum: str = "rotational"  # rotational | gradual | all
    rotation_period: int = 1

    def __post_init__(self) -> None:
        if not 0.0 <= self.scale <= 1.0:
            raise ValueError(f"scale must be in [0, 1], got {self.scale}")
        if self.curriculum not in ("rotational", "gradual", "all"):
            raise ValueError(f"unknown curriculum {self.curriculum!r}")
        if self.curriculum == "rotational" and not 1 <= self.rotation_period <= self.n_layers:
            raise ValueError(
                f"rotation_period must be in [1, {self.n_layers}], got {self.rotation_period}"
            )

    def enabled(self, step: int, layer: int) -> bool:
        """Whether exit ``layer``'s loss is active at ``step``.

        Rotational: layer l is active when l == step (mod R), so each
        layer is active exactly once per R consecutive steps and at
        most ceil(L/R) exits are active per step. The final layer is
        not force-enabled (strict rotation). Gradual: exits switch on
        from the last layer downward, all on by step T/2.
        """
        if self.curriculum == "all":
            return True
        if self.curriculum == "rotational":
            r = self.rotation_period
            return layer % r == step % r
        opened = math.floor(step * 2 * self.n_layers / self.total_steps)
        return layer >= self.n_layers - 1 - opened

    def enabled_layers(self, step: int) -> list[int]:
        return [l for l in range(self.n_layers) if self.enabled(step, l)]


def curriculum_enabled(step: int, layer: int, schedule: EarlyExitLossSchedule) -> bool:
    return schedule.enabled(step, layer)


def normalized_loss_scales(step: int, schedule: EarlyExitLossSchedule) -> np.ndarray:
    """Per-layer loss weights at ``step``: gated raw scales, normalized to sum 1.

    Disabled layers get weight 0. If every enabled layer has a zero raw
    scale (only possible when layer 0 alone is enabled, since its raw
    scale is 0), the deepest enabled layer gets weight 1 instead.
    """
    weights = np.zeros(schedule.n_layers)
    enabled = schedule.enabled_layers(step)
    if not enabled:
        raise ValueError(f"no exit enabled at step {step}")
    for l in enabled:
        weights[l] = exit_loss_scale(l, schedule.n_layers, schedule.scale)
    total = weights.sum()
    if total == 0.0:
        weights[enabled[-1]] = 1.0
        return weights
    return weights / total


def total_loss(
    hidden: list[torch.Tensor],
    targets: torch.Tensor,
    step: int,
    schedule: EarlyExitLossSchedule,
    unembed: Callable[[torch.Tensor], torch.Tensor],
) -> tuple[torch.Tensor, dict[int, float]]:
    """Weighted sum of per-exit cross entropies over the enabled exits only.

    ``hidden`` is the list of L+1 per-layer states from a training
    forward (index 0 is the embeddings). Exit weight index l applies to
    hidden[l + 1], the output of layer l. Only enabled exits are
    unembedded, so rotational curricula pay for ceil(L/R) unembeddings
    per step. Returns the scalar loss and the per-exit-layer losses
    that went into it (keyed by hidden index l + 1).
    """
    n_layers = schedule.n_layers
    if len(hidden) != n_layers + 1:
        raise ValueError(f"expected {n_layers + 1} hidden states, got {len(hidden)}")
    weights = normalized_loss_scales(step, schedule)
    loss = None
    per_layer: dict[int, float] = {}
    for l in range(n_layers):
        if weights[l] == 0.0:
            continue
        logits = unembed(hidden[l + 1])
        ce = core.sequence_cross_entropy(logits, targets)
        per_layer[l + 1] = float(ce.detach())
        term = weights[l] * ce
        loss = term if loss is None else loss + term
    assert loss is not None
    return loss, per_layer
