"""Desk-scale early-exit transformers with self-speculative decoding.

Train small decoder-only models with per-sample layer dropout and a
shared-head early-exit loss, generate with early exits, and accelerate
greedy generation by drafting with the first E layers and verifying
with the rest over a unified KV + exit-state cache.
"""

from selfspec.model import ModelConfig, DecoderModel
from selfspec.schedules import DropoutSchedule, EarlyExitLossSchedule
from selfspec.trainer import TrainConfig, Trainer, TrainLog, train_run
from selfspec.decoder import (
    DecodeConfig,
    DecodeReport,
    generate_autoregressive,
    generate_early_exit,
    generate_self_speculative,
    speedup,
)
from selfspec.cache import KVQCache
from selfspec.tokenizer import ByteTokenizer

__all__ = [
    "ModelConfig",
    "DecoderModel",
    "DropoutSchedule",
    "EarlyExitLossSchedule",
    "TrainConfig",
    "Trainer",
    "TrainLog",
    "train_run",
    "DecodeConfig",
    "DecodeReport",
    "generate_autoregressive",
    "generate_early_exit",
    "generate_self_speculative",
    "speedup",
    "KVQCache",
    "ByteTokenizer",
]
