"""Layer-wise unembedding probes and text quality metrics.

The probe greedily generates with the full model while unembedding
every layer's output at the generating position, exposing how early in
the stack the final prediction forms. Two per-token depth statistics
are reported: the first layer whose prediction matches the final one
(the model may still change its mind afterwards), and the first layer
from which all deeper exits already agree with the final prediction.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from selfspec import nn as core
from selfspec.model import DecoderModel
from selfspec.trainer import eval_layer_perplexities


@dataclass
class LayerwisePrediction:
    """Per generated token: the greedy choice of every layer exit."""

    token_index: int
    layer_predictions: list[int]  # exit 1..L
    final_token: int
    earliest_stable_layer: int     # all exits >= this layer agree with the final token
    earliest_agreement_layer: int  # first exit that matches the final token


def layerwise_predictions(model: DecoderModel, prompt: list[int],
                          n_tokens: int) -> list[LayerwisePrediction]:
    """Greedy full-model generation recording every exit's argmax per token."""
    if not prompt:
        raise ValueError("prompt must be nonempty")
    n_layers = model.config.n_layers
    cache = model.new_cache()
    if len(prompt) > 1:
        model.forward_step(prompt[:-1], cache, n_layers, record_exit=False)
    cache.commit(len(prompt) - 1)
    pending = prompt[-1]
    out: list[LayerwisePrediction] = []
    for i in range(n_tokens):
        if cache.committed_len >= model.config.max_context:
            break
        _, hidden = model.forward_step([pending], cache, n_layers,
                                       record_exit=False, collect_hidden=True)
        preds = [core.argmax_token(model.unembed(hidden[l][-1])) for l in range(1, n_layers + 1)]
        final = preds[-1]
        stable = n_layers
        while stable > 1 and preds[stable - 2] == final:
            stable -= 1
        agree = next((l for l in range(1, n_layers + 1) if preds[l - 1] == final), n_layers)
        out.append(LayerwisePrediction(
            token_index=i,
            layer_predictions=preds,
            final_token=final,
            earliest_stable_layer=stable,
            earliest_agreement_layer=agree,
        ))
        cache.commit(cache.committed_len + 1)
        pending = final
    return out


def probe_csv(predictions: list[LayerwisePrediction]) -> str:
    lines = ["token_index,layer,predicted_token_id,is_final_prediction"]
    for p in predictions:
        for layer, tok in enumerate(p.layer_predictions, start=1):
            flag = int(tok == p.final_token)
            lines.append(f"{p.token_index},{layer},{tok},{flag}")
    return "\n".join(lines) + "\n"


def probe_summary(predictions: list[LayerwisePrediction]) -> dict:
    if not predictions:
        return {"tokens": 0}
    return {
        "tokens": len(predictions),
        "mean_earliest_stable_layer": float(np.mean([p.earliest_stable_layer for p in predictions])),
        "mean_earliest_agreement_layer": float(np.mean([p.earliest_agreement_layer for p in predictions])),
    }


def probe_summary_json(predictions: list[LayerwisePrediction]) -> str:
    return json.dumps(probe_summary(predictions), indent=2) + "\n"


def perplexity_at_layer(model: DecoderModel, corpus_tokens: np.ndarray | list[int],
                        layer: int, context_len: int = 64) -> float:
    """exp(mean cross entropy) of exit ``layer`` (1..L) on a held-out corpus."""
    n_layers = model.config.n_layers
    if not 1 <= layer <= n_layers:
        raise ValueError(f"layer must be in [1, {n_layers}], got {layer}")
    tokens = np.asarray(corpus_tokens, dtype=np.int64)
    if len(tokens) < context_len + 1:
        raise ValueError("corpus too small for one evaluation window")
    return eval_layer_perplexities(model, tokens, context_len)[layer]


def rouge2_f1(reference: list | str, hypothesis: list | str) -> float:
    """Bigram-overlap F1 with clipped (multiset) counts, no stemming.

    Strings are split on whitespace; any other sequence is used as is.
    Returns 0 when either side has fewer than two items.
    """
    ref = reference.split() if isinstance(reference, str) else list(reference)
    hyp = hypothesis.split() if isinstance(hypothesis, str) else list(hypothesis)
    if len(ref) < 2 or len(hyp) < 2:
        return 0.0
    ref_bigrams = _bigram_counts(ref)
    hyp_bigrams = _bigram_counts(hyp)
    overlap = sum(min(c, hyp_bigrams.get(b, 0)) for b, c in ref_bigrams.items())
    if overlap == 0:
        return 0.0
    precision = overlap / sum(hyp_bigrams.values())
    recall = overlap / sum(ref_bigrams.values())
    return 2 * precision * recall / (precision + recall)


def _bigram_counts(items: list) -> dict:
    counts: dict = {}
    for pair in zip(items, items[1:]):
        counts[pair] = counts.get(pair, 0) + 1
    return counts


def exact_match(reference: list, hypothesis: list, pad_ids: tuple = (256,)) -> int:
    """1 iff the sequences are identical after trimming trailing pad/end ids."""
    return int(_trim(list(reference), pad_ids) == _trim(list(hypothesis), pad_ids))


def _trim(seq: list, pad_ids: tuple) -> list:
    while seq and seq[-1] in pad_ids:
        seq.pop()
    return seq
