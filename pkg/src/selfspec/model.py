"""Decoder-only transformer with an exit point after every layer.

Llama-style blocks (pre-norm, rotary positions, gated FFN) over a
single shared unembedding head: the final norm plus LM head can be
applied to any layer's output, so the model doubles as an ensemble of
sub-models of every depth. Three forward paths are provided:

* ``forward_train``: full-sequence causal forward returning all L+1
  hidden states, with optional per-sample layer dropping (a dropped
  layer passes the residual stream through bitwise unchanged).
* ``forward_step``: incremental decoding through the first E layers
  against a KVQCache, recording each new position's layer-E input
  ("exit state") for later verification.
* ``forward_remainder``: resume at layer E from cached exit states and
  run the remaining layers over several positions in one pass.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
from torch import nn as torch_nn

from selfspec.cache import KVQCache
from selfspec.nn import rms_norm


class ContextOverflowError(RuntimeError):
    """Requested positions exceed the model's maximum context length."""


@dataclass(frozen=True)
class ModelConfig:
    n_layers: int = 8
    dim: int = 128
    n_heads: int = 4
    vocab: int = 257
    max_context: int = 256
    ffn_hidden: int = 344

    def __post_init__(self) -> None:
        if self.n_layers < 1:
            raise ValueError("n_layers must be >= 1")
        if self.vocab < 2:
            raise ValueError("vocab must be >= 2")
        if self.max_context < 1:
            raise ValueError("max_context must be >= 1")
        if self.dim % self.n_heads != 0:
            raise ValueError(f"dim {self.dim} not divisible by n_heads {self.n_heads}")
        if (self.dim // self.n_heads) % 2 != 0:
            raise ValueError("head dim must be even for rotary positions")

    @property
    def head_dim(self) -> int:
        return self.dim // self.n_heads

    def to_dict(self) -> dict:
        return {
            "n_layers": self.n_layers,
            "dim": self.dim,
            "n_heads": self.n_heads,
            "vocab": self.vocab,
            "max_context": self.max_context,
            "ffn_hidden": self.ffn_hidden,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**{k: int(v) for k, v in d.items()})


class Block(torch_nn.Module):
    """Parameters of one decoder layer (math lives in DecoderModel)."""

    def __init__(self, cfg: ModelConfig, dtype: torch.dtype) -> None:
        super().__init__()
        d, f = cfg.dim, cfg.ffn_hidden
        p = torch_nn.Parameter
        self.attn_norm = p(torch.ones(d, dtype=dtype))
        self.wq = p(torch.empty(d, d, dtype=dtype))
        self.wk = p(torch.empty(d, d, dtype=dtype))
        self.wv = p(torch.empty(d, d, dtype=dtype))
        self.wo = p(torch.empty(d, d, dtype=dtype))
        self.ffn_norm = p(torch.ones(d, dtype=dtype))
        self.w_gate = p(torch.empty(d, f, dtype=dtype))
        self.w_up = p(torch.empty(d, f, dtype=dtype))
        self.w_down = p(torch.empty(f, d, dtype=dtype))


class DecoderModel(torch_nn.Module):
    """Decoder-only transformer with shared early-exit head.

    Weights are float32 by default; pass ``dtype=torch.float64`` for
    high-precision gradient checking. ``seed`` makes initialization
    fully deterministic. The token embedding and LM head are distinct
    (untied) parameters; there is exactly one final-norm + head pair,
    used to unembed every layer's output.
    """

    def __init__(self, config: ModelConfig, seed: int = 0, dtype: torch.dtype = torch.float32) -> None:
        super().__init__()
        self.config = config
        self.dtype = dtype
        p = torch_nn.Parameter
        self.token_embedding = p(torch.empty(config.vocab, config.dim, dtype=dtype))
        self.blocks = torch_nn.ModuleList(Block(config, dtype) for _ in range(config.n_layers))
        self.final_norm = p(torch.ones(config.dim, dtype=dtype))
        self.lm_head = p(torch.empty(config.dim, config.vocab, dtype=dtype))
        self._init_weights(seed)

        cos, sin = _rope_tables(config.max_context, config.head_dim, dtype)
        self.register_buffer("rope_cos", cos, persistent=False)
        self.register_buffer("rope_sin", sin, persistent=False)

    def _init_weights(self, seed: int) -> None:
        # Scaled-normal init; residual-output projections shrunk by
        # 1/sqrt(2L) so the stream's variance stays flat with depth.
        gen = torch.Generator().manual_seed(seed)
        out_scale = 1.0 / math.sqrt(2 * self.config.n_layers)
        with torch.no_grad():
            for name, param in self.named_parameters():
                if param.dim() == 1:
                    param.fill_(1.0)
                    continue
                std = 0.02
                if name.endswith(("wo", "w_down")):
                    std *= out_scale
                values = torch.empty(param.shape, dtype=torch.float32)
                values.normal_(mean=0.0, std=std, generator=gen)
                param.copy_(values.to(self.dtype))

    def n_parameters(self) -> int:
        return sum(p.numel() for p in self.parameters())

    def new_cache(self) -> KVQCache:
        c = self.config
        return KVQCache(c.n_layers, c.max_context, c.n_heads, c.head_dim, c.dim, self.dtype)

    # ---------------------------------------------------------------- train

    def forward_train(
        self,
        tokens: torch.Tensor,
        drop_mask: np.ndarray | torch.Tensor | None = None,
    ) -> list[torch.Tensor]:
        """Causal forward over [batch, seq] tokens; returns all L+1 hidden states.

        ``drop_mask`` is an [n_layers, batch] boolean array; True drops
        that layer's contribution for that sample, leaving its hidden
        state bitwise equal to the layer input.
        """
        cfg = self.config
        if tokens.dim() != 2:
            raise ValueError("tokens must be [batch, seq]")
        batch, seq = tokens.shape
        if seq > cfg.max_context:
            raise ContextOverflowError(f"sequence length {seq} exceeds max_context {cfg.max_context}")
        self._check_token_range(tokens)
        keep = None
        if drop_mask is not None:
            mask = torch.as_tensor(np.asarray(drop_mask), dtype=torch.bool)
            if mask.shape != (cfg.n_layers, batch):
                raise ValueError(f"drop_mask must be [{cfg.n_layers}, {batch}], got {tuple(mask.shape)}")
            keep = ~mask

        cos = self.rope_cos[:seq]
        sin = self.rope_sin[:seq]
        causal = torch.full((seq, seq), float("-inf"), dtype=self.dtype).triu(1)

        x = self.token_embedding[tokens]
        hidden = [x]
        for l, blk in enumerate(self.blocks):
            out = self._block_train(blk, x, cos, sin, causal)
            if keep is not None:
                x = torch.where(keep[l].view(batch, 1, 1), out, x)
            else:
                x = out
            if not torch.isfinite(x).all():
                raise ValueError(f"non-finite hidden state after layer {l}")
            hidden.append(x)
        return hidden

    def _block_train(self, blk: Block, x: torch.Tensor, cos: torch.Tensor,
                     sin: torch.Tensor, causal: torch.Tensor) -> torch.Tensor:
        cfg = self.config
        batch, seq, _ = x.shape
        h = rms_norm(x, blk.attn_norm)
        q = (h @ blk.wq).view(batch, seq, cfg.n_heads, cfg.head_dim)
        k = (h @ blk.wk).view(batch, seq, cfg.n_heads, cfg.head_dim)
        v = (h @ blk.wv).view(batch, seq, cfg.n_heads, cfg.head_dim)
        q = _apply_rope(q, cos, sin)
        k = _apply_rope(k, cos, sin)
        q = q.transpose(1, 2)  # [B, H, T, hd]
        k = k.transpose(1, 2)
        v = v.transpose(1, 2)
        scores = q @ k.transpose(-1, -2) / math.sqrt(cfg.head_dim) + causal
        attn = torch.softmax(scores, dim=-1) @ v
        attn = attn.transpose(1, 2).reshape(batch, seq, cfg.dim)
        x = x + attn @ blk.wo
        h2 = rms_norm(x, blk.ffn_norm)
        gated = torch.nn.functional.silu(h2 @ blk.w_gate) * (h2 @ blk.w_up)
        return x + gated @ blk.w_down

    # ---------------------------------------------------------- incremental

    def forward_step(
        self,
        tokens: list[int] | torch.Tensor,
        cache: KVQCache,
        exit_layer: int,
        record_exit: bool = True,
        collect_hidden: bool = False,
    ) -> torch.Tensor | tuple[torch.Tensor, list[torch.Tensor]]:
        """Run layers 0..exit_layer-1 incrementally over new tokens.

        Appends each layer's new keys/values to the cache and, when
        exit_layer < n_layers and ``record_exit``, stores the layer-E
        input hidden state of every new position for later resumption.
        Returns the exit hidden states [len(tokens), dim] (plus all
        per-layer states when ``collect_hidden``).
        """
        cfg = self.config
        if not 1 <= exit_layer <= cfg.n_layers:
            raise ValueError(f"exit_layer must be in [1, {cfg.n_layers}], got {exit_layer}")
        tokens = torch.as_tensor(tokens, dtype=torch.long)
        if tokens.dim() != 1 or tokens.numel() == 0:
            raise ValueError("tokens must be a nonempty 1-D sequence")
        self._check_token_range(tokens)
        n_new = tokens.numel()
        start = cache.valid_len[0]
        if start + n_new > cfg.max_context:
            raise ContextOverflowError(
                f"positions {start}..{start + n_new - 1} exceed max_context {cfg.max_context}"
            )

        x = self.token_embedding[tokens]
        hidden = [x]
        for l in range(exit_layer):
            x = self._block_cached(l, x, cache)
            if collect_hidden:
                hidden.append(x)
        if not torch.isfinite(x).all():
            raise ValueError("non-finite hidden state in forward_step")
        if record_exit and exit_layer < cfg.n_layers:
            for i in range(n_new):
                cache.exit_states[start + i] = x[i].detach().clone()
        if collect_hidden:
            return x, hidden
        return x

    def forward_remainder(self, cache: KVQCache, exit_layer: int, n_positions: int) -> torch.Tensor:
        """Run layers exit_layer..L-1 over ``n_positions`` cached exit states.

        The positions resumed are the ones directly after the deep
        layers' current cache frontier; their exit states must have
        been recorded by forward_step. Appends the deep layers' K/V to
        the cache and returns the final hidden states [n_positions, dim].
        """
        cfg = self.config
        if not 0 <= exit_layer <= cfg.n_layers:
            raise ValueError(f"exit_layer must be in [0, {cfg.n_layers}], got {exit_layer}")
        if n_positions < 1:
            raise ValueError("n_positions must be >= 1")
        start = cache.valid_len[exit_layer] if exit_layer < cfg.n_layers else cache.committed_len
        missing = [p for p in range(start, start + n_positions) if p not in cache.exit_states]
        if missing:
            raise KeyError(f"exit states missing for positions {missing}")
        x = torch.stack([cache.exit_states[p] for p in range(start, start + n_positions)])
        for l in range(exit_layer, cfg.n_layers):
            if cache.valid_len[l] != start:
                raise RuntimeError(
                    f"layer {l} cache frontier {cache.valid_len[l]} != resume position {start}"
                )
            x = self._block_cached(l, x, cache)
        if not torch.isfinite(x).all():
            raise ValueError("non-finite hidden state in forward_remainder")
        return x

    def _block_cached(self, l: int, x: torch.Tensor, cache: KVQCache) -> torch.Tensor:
        """One decoder layer over [T, dim] new positions, reading/writing the cache."""
        cfg = self.config
        blk = self.blocks[l]
        n_new = x.shape[0]
        start = cache.valid_len[l]
        cos = self.rope_cos[start:start + n_new]
        sin = self.rope_sin[start:start + n_new]

        h = rms_norm(x, blk.attn_norm)
        q = (h @ blk.wq).view(n_new, cfg.n_heads, cfg.head_dim)
        k = (h @ blk.wk).view(n_new, cfg.n_heads, cfg.head_dim)
        v = (h @ blk.wv).view(n_new, cfg.n_heads, cfg.head_dim)
        q = _apply_rope(q, cos, sin)
        k = _apply_rope(k, cos, sin)
        keys, values = cache.append(l, k, v)  # [S, H, hd] with S = start + n_new

        qh = q.permute(1, 0, 2)                       # [H, T, hd]
        kh = keys.permute(1, 2, 0)                    # [H, hd, S]
        scores = qh @ kh / math.sqrt(cfg.head_dim)    # [H, T, S]
        if n_new > 1:
            # new position i may attend up to absolute position start + i
            mask = torch.full((n_new, keys.shape[0]), float("-inf"), dtype=self.dtype).triu(start + 1)
            scores = scores + mask
        attn = torch.softmax(scores, dim=-1) @ values.permute(1, 0, 2)  # [H, T, hd]
        attn = attn.permute(1, 0, 2).reshape(n_new, cfg.dim)
        x = x + attn @ blk.wo
        h2 = rms_norm(x, blk.ffn_norm)
        gated = torch.nn.functional.silu(h2 @ blk.w_gate) * (h2 @ blk.w_up)
        x = x + gated @ blk.w_down
        cache.layer_steps += n_new
        return x

    # --------------------------------------------------------------- shared

    def unembed(self, x: torch.Tensor) -> torch.Tensor:
        """Final norm + LM head over [..., dim]; the same head for every layer."""
        return rms_norm(x, self.final_norm) @ self.lm_head

    def _check_token_range(self, tokens: torch.Tensor) -> None:
        if tokens.numel() and (tokens.min() < 0 or tokens.max() >= self.config.vocab):
            raise ValueError(f"token id out of range for vocab {self.config.vocab}")


def _rope_tables(max_context: int, head_dim: int, dtype: torch.dtype) -> tuple[torch.Tensor, torch.Tensor]:
    inv_freq = 1.0 / (10000.0 ** (torch.arange(0, head_dim, 2, dtype=torch.float64) / head_dim))
    angles = torch.outer(torch.arange(max_context, dtype=torch.float64), inv_freq)
    return angles.cos().to(dtype), angles.sin().to(dtype)


def _apply_rope(x: torch.Tensor, cos: torch.Tensor, sin: torch.Tensor) -> torch.Tensor:
    """Rotate consecutive pairs of head dims by position-dependent angles.

    ``x`` is [..., T, H, hd]; cos/sin are [T, hd/2] for the absolute
    positions the T entries occupy.
    """
    shape = x.shape
    x = x.view(*shape[:-1], shape[-1] // 2, 2)
    even, odd = x[..., 0], x[..., 1]
    # broadcast cos/sin over leading batch and the head axis
    c = cos.unsqueeze(-2)
    s = sin.unsqueeze(-2)
    rot_even = even * c - odd * s
    rot_odd = even * s + odd * c
    return torch.stack((rot_even, rot_odd), dim=-1).view(shape)
