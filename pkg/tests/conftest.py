import numpy as np
import pytest
import torch

from selfspec.corpus import synthetic_text
from selfspec.model import ModelConfig, DecoderModel
from selfspec.tokenizer import ByteTokenizer
from selfspec.trainer import TrainConfig, train_run

torch.set_num_threads(1)

TINY = ModelConfig(n_layers=4, dim=32, n_heads=2, vocab=257, max_context=96, ffn_hidden=88)


@pytest.fixture(scope="session")
def tiny_model() -> DecoderModel:
    return DecoderModel(TINY, seed=11)


@pytest.fixture(scope="session")
def mini_corpus() -> np.ndarray:
    tok = ByteTokenizer()
    return np.array(tok.encode_bytes(synthetic_text(40_000, seed=5)), dtype=np.int64)


@pytest.fixture(scope="session")
def mini_trained(mini_corpus) -> DecoderModel:
    """A briefly trained tiny model: enough structure for decode tests."""
    cfg = TrainConfig(steps=120, batch_size=4, context_len=48, learning_rate=1.5e-3,
                      seed=3, p_max=0.1, e_scale=0.4, ee_curriculum="all", eval_every=0)
    model, _ = train_run(mini_corpus, TINY, cfg)
    return model


@pytest.fixture(scope="session")
def mini_baseline(mini_corpus) -> DecoderModel:
    """Same budget without the recipe: early exits stay unaligned."""
    cfg = TrainConfig(steps=120, batch_size=4, context_len=48, learning_rate=1.5e-3,
                      seed=3, p_max=0.0, e_scale=0.0, ee_curriculum="all", eval_every=0)
    model, _ = train_run(mini_corpus, TINY, cfg)
    return model
