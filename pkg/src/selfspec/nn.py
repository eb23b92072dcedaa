"""Core numeric ops: softmax, cross entropy, RMS norm, and a finite-difference gradient checker.

All ops run on CPU torch tensors. Training and inference use float32;
float64 is supported end to end so gradient checks can run at high
precision. Reverse-mode gradients come from torch autograd; the
finite-difference checker below is the independent oracle for them.
"""

from __future__ import annotations

import math
from typing import Callable, Sequence

import numpy as np
import torch

RMS_NORM_EPS = 1e-5


def _require_finite(x: torch.Tensor, what: str) -> None:
    if not torch.isfinite(x).all():
        raise ValueError(f"non-finite values in {what}")


def softmax(logits: torch.Tensor) -> torch.Tensor:
    """Numerically stable softmax over the last dimension.

    Output is nonnegative, sums to 1, and is invariant to adding a
    constant to all logits (max subtraction keeps exp in range).
    """
    if logits.shape[-1] < 1:
        raise ValueError("softmax needs at least one logit")
    _require_finite(logits, "softmax input")
    shifted = logits - logits.max(dim=-1, keepdim=True).values
    exp = torch.exp(shifted)
    return exp / exp.sum(dim=-1, keepdim=True)


def cross_entropy(logits: torch.Tensor, target: int | torch.Tensor) -> torch.Tensor:
    """Negative log softmax probability of ``target``.

    ``logits`` is a single vector of size V and ``target`` an index in
    [0, V). Computed as logsumexp(logits) - logits[target], which is
    nonnegative by construction.
    """
    if logits.dim() != 1:
        raise ValueError(f"cross_entropy expects a 1-D logit vector, got shape {tuple(logits.shape)}")
    _require_finite(logits, "cross_entropy logits")
    t = int(target)
    if not 0 <= t < logits.shape[0]:
        raise ValueError(f"target {t} out of range for vocab {logits.shape[0]}")
    return torch.logsumexp(logits, dim=-1) - logits[t]


def sequence_cross_entropy(logits: torch.Tensor, targets: torch.Tensor) -> torch.Tensor:
    """Mean cross entropy over a batch of positions.

    ``logits`` has shape [..., V], ``targets`` the matching [...] of
    token indices. Same math as ``cross_entropy`` applied elementwise.
    """
    if targets.min() < 0 or targets.max() >= logits.shape[-1]:
        raise ValueError("target index out of range")
    lse = torch.logsumexp(logits, dim=-1)
    picked = logits.gather(-1, targets.unsqueeze(-1)).squeeze(-1)
    return (lse - picked).mean()


def rms_norm(x: torch.Tensor, gain: torch.Tensor, eps: float = RMS_NORM_EPS) -> torch.Tensor:
    """Root-mean-square normalization over the last dimension, scaled by ``gain``."""
    _require_finite(x, "rms_norm input")
    ms = x.pow(2).mean(dim=-1, keepdim=True)
    return gain * x * torch.rsqrt(ms + eps)


def argmax_token(logits: torch.Tensor) -> int:
    """Greedy token choice with ties broken toward the lowest token id."""
    m = logits.max()
    return int((logits == m).nonzero(as_tuple=False)[0].item())


def grad_check(
    loss_fn: Callable[[], torch.Tensor],
    params: Sequence[torch.Tensor],
    delta: float = 1e-5,
    max_coords_per_param: int = 16,
    seed: int = 0,
    oracle: tuple[Callable[[], torch.Tensor], Sequence[torch.Tensor]] | None = None,
) -> float:
    """Compare autograd gradients of ``loss_fn`` against central differences.

    ``loss_fn`` must be deterministic (any dropout masks frozen) and
    close over ``params``, each of which requires grad. For a sampled
    set of coordinates the relative error
    |analytic - cd| / max(|analytic|, |cd|, 1e-8) is computed and the
    maximum over all sampled coordinates returned.

    For float32 parameters the central differences themselves drown in
    rounding noise, so pass ``oracle=(loss_fn64, params64)``: a float64
    twin evaluating the same mathematical function, used only for the
    difference quotients while the analytic side under test stays
    float32.
    """
    if not 1e-5 <= delta <= 1e-3:
        raise ValueError(f"delta {delta} outside [1e-5, 1e-3]")
    loss = loss_fn()
    if not torch.isfinite(loss):
        raise ValueError("loss is not finite")
    grads = torch.autograd.grad(loss, list(params))
    fd_fn, fd_params = oracle if oracle is not None else (loss_fn, params)
    if len(fd_params) != len(params):
        raise ValueError("oracle must provide one tensor per checked parameter")

    rng = np.random.default_rng(seed)
    worst = 0.0
    for p, fd_p, g in zip(params, fd_params, grads):
        if fd_p.shape != p.shape:
            raise ValueError("oracle parameter shape mismatch")
        n = p.numel()
        flat = fd_p.data.view(-1)
        gflat = g.view(-1)
        k = min(max_coords_per_param, n)
        coords = rng.choice(n, size=k, replace=False)
        for c in coords:
            c = int(c)
            orig = flat[c].item()
            flat[c] = orig + delta
            with torch.no_grad():
                plus = float(fd_fn())
            flat[c] = orig - delta
            with torch.no_grad():
                minus = float(fd_fn())
            flat[c] = orig
            cd = (plus - minus) / (2.0 * delta)
            a = float(gflat[c])
            rel = abs(a - cd) / max(abs(a), abs(cd), 1e-8)
            worst = max(worst, rel)
    return worst


def quadratic_loss(params: Sequence[torch.Tensor]) -> torch.Tensor:
    """Half squared norm of all parameters; gradient equals the parameters."""
    return sum((p * p).sum() for p in params) * 0.5


def cosine_lr(step: int, total_steps: int, lr_max: float, warmup_frac: float = 0.02,
              lr_min_ratio: float = 0.1) -> float:
    """Cosine decay with linear warmup over the first ``warmup_frac`` of steps."""
    warmup = max(1, int(round(warmup_frac * total_steps)))
    if step < warmup:
        return lr_max * (step + 1) / warmup
    span = max(1, total_steps - 1 - warmup)
    progress = min(1.0, (step - warmup) / span)
    lr_min = lr_max * lr_min_ratio
    return lr_min + 0.5 * (1.0 + math.cos(math.pi * progress)) * (lr_max - lr_min)
