"""Synthetic training text and corpus windowing helpers.

The generator emits low-entropy English-like sentences from a fixed
template grammar, deterministically from a seed. That gives toy models
something learnable within a few thousand steps while held-out splits
(different seed section) stay distribution-matched.
"""

from __future__ import annotations

import numpy as np

_SUBJECTS = ["the cat", "the dog", "a bird", "the old man", "my friend", "the river",
             "a child", "the wind", "the ship", "her sister", "the engineer", "a stranger",
             "the captain", "our neighbor", "the librarian", "a young fox"]
_VERBS = ["watches", "follows", "finds", "carries", "remembers", "crosses",
          "paints", "loses", "holds", "hears", "counts", "repairs", "measures",
          "forgets", "borrows", "signals"]
_OBJECTS = ["the moon", "a stone", "the garden", "an open door", "the quiet road",
            "a small light", "the water", "an old song", "the letter", "a red kite",
            "the broken clock", "a paper map", "the tall gate", "a silver coin",
            "the last train", "an empty jar"]
_TAILS = ["at dawn", "after the rain", "in silence", "every morning", "near the shore",
          "for a while", "without a sound", "under the bridge", "again and again", "by heart",
          "before winter", "with great care", "in the fog", "past midnight", "on the hill"]
_CONSONANTS = "bcdfghjklmnprstvwz"
_VOWELS = "aeiou"


def _gibberish_word(rng: np.random.Generator) -> str:
    n = int(rng.integers(2, 5))
    return "".join(
        _CONSONANTS[rng.integers(len(_CONSONANTS))] + _VOWELS[rng.integers(len(_VOWELS))]
        for _ in range(n)
    )


def synthetic_text(n_bytes: int, seed: int = 0) -> bytes:
    """Deterministic sentence soup of roughly ``n_bytes`` bytes.

    Mixes template sentences with pseudo-word names, counts, and quoted
    fragments so a byte-level model has both memorizable structure and
    enough residual entropy to keep deep layers busy.
    """
    rng = np.random.default_rng(seed)
    parts: list[str] = []
    size = 0
    while size < n_bytes:
        s = _SUBJECTS[rng.integers(len(_SUBJECTS))]
        v = _VERBS[rng.integers(len(_VERBS))]
        o = _OBJECTS[rng.integers(len(_OBJECTS))]
        form = rng.random()
        if form < 0.15:
            name = _gibberish_word(rng).capitalize()
            sentence = f"{name} {v} {o}"
        elif form < 0.30:
            count = int(rng.integers(2, 100))
            sentence = f"{s} {v} {count} of them"
        elif form < 0.40:
            sentence = f'"{o}," said {s}'
        else:
            sentence = f"{s} {v} {o}"
        if rng.random() < 0.5:
            sentence += " " + _TAILS[rng.integers(len(_TAILS))]
        sentence += ". "
        parts.append(sentence)
        size += len(sentence)
    return "".join(parts).encode("ascii")[:n_bytes]


def window_batches(tokens: np.ndarray, context_len: int, batch_size: int,
                   total_steps: int, seed: int) -> list[np.ndarray]:
    """Contiguous non-overlapping windows, reshuffled each epoch from the seed.

    Each batch is an int64 array [batch_size, context_len + 1] (inputs
    plus next-token targets). Windows cycle for as many epochs as
    ``total_steps`` requires.
    """
    window = context_len + 1
    n_windows = len(tokens) // window
    if n_windows < 1:
        raise ValueError(
            f"corpus of {len(tokens)} tokens too small for context_len {context_len}"
        )
    starts = np.arange(n_windows) * window
    batches: list[np.ndarray] = []
    epoch = 0
    while len(batches) < total_steps:
        key = np.array([np.uint64(seed & 0xFFFFFFFFFFFFFFFF), np.uint64(epoch)], dtype=np.uint64)
        order = np.random.Generator(np.random.Philox(key=key)).permutation(n_windows)
        for i in range(0, n_windows - batch_size + 1, batch_size):
            sel = starts[order[i:i + batch_size]]
            batch = np.stack([tokens[s:s + window] for s in sel])
            batches.append(batch.astype(np.int64))
            if len(batches) == total_steps:
                break
        epoch += 1
        if epoch > total_steps + 1:
            raise ValueError("corpus too small to form a single batch")
    return batches
