"""Unified per-layer KV cache plus exit-state ("exit query") storage.

One cache belongs to one generation session. Every layer keeps keys and
values for a prefix of positions (``valid_len[l]`` of them); during a
speculation round the shallow layers run ahead of the deep ones, and
``committed_len`` tracks how many positions are backed by finalized
tokens. ``exit_states`` holds the exit-layer input hidden state of
draft positions awaiting verification; verification consumes them and
rolls every layer back to the committed frontier.

Storage is preallocated at max_context so rollback is a pointer move;
discarded entries are never trusted afterwards because every append
overwrites its slots.
"""

from __future__ import annotations

import torch


class KVQCache:
    def __init__(self, n_layers: int, max_context: int, n_heads: int, head_dim: int,
                 dim: int, dtype: torch.dtype = torch.float32) -> None:
        self.n_layers = n_layers
        self.max_context = max_context
        self.keys = [torch.zeros(max_context, n_heads, head_dim, dtype=dtype) for _ in range(n_layers)]
        self.values = [torch.zeros(max_context, n_heads, head_dim, dtype=dtype) for _ in range(n_layers)]
        self.valid_len = [0] * n_layers
        self.committed_len = 0
        self.exit_states: dict[int, torch.Tensor] = {}
        # audit counter: one unit per (layer, position) block execution
        self.layer_steps = 0

    def append(self, layer: int, k: torch.Tensor, v: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        """Write new K/V rows for ``layer`` and return views over all valid rows."""
        n_new = k.shape[0]
        start = self.valid_len[layer]
        if start + n_new > self.max_context:
            raise IndexError(f"cache overflow at layer {layer}: {start}+{n_new} > {self.max_context}")
        with torch.no_grad():
            self.keys[layer][start:start + n_new] = k
            self.values[layer][start:start + n_new] = v
        self.valid_len[layer] = start + n_new
        return self.keys[layer][: start + n_new], self.values[layer][: start + n_new]

    def rollback(self, n_positions: int) -> None:
        """Truncate every layer to ``n_positions`` and drop stale exit states."""
        for l in range(self.n_layers):
            self.valid_len[l] = min(self.valid_len[l], n_positions)
        self.exit_states = {p: h for p, h in self.exit_states.items() if p < n_positions}

    def commit(self, n_positions: int) -> None:
        self.committed_len = n_positions

    def clear_exit_states(self) -> None:
        self.exit_states = {}
