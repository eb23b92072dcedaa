"""Greedy generation engines: autoregressive, early-exit, and self-speculative.

Self-speculative decoding drafts tokens cheaply by exiting at layer E
and verifies them with the remaining layers, all inside one model and
one KVQCache. Greedy verification makes the output token-for-token
identical to plain autoregressive decoding.

Bookkeeping follows a pending-token scheme: the most recently committed
token has not been fed through the model yet. Each round drafts up to d
tokens (d incremental passes through the first E layers, recording exit
states), then verifies with a single remainder pass (layers E..L-1)
over those same d positions. The accepted prefix plus one corrective or
bonus token is emitted, so every round emits n_accepted + 1 tokens; on
full acceptance the bonus token comes from one ordinary full-depth step
on the last draft token. Rejected positions are discarded by truncating
the cache back to the committed frontier.

Costs are tracked in layer-token units (one transformer layer applied
to one position). Per round the draft pass costs d*E, the verification
remainder pass exactly d*(L-E) with cache reuse (d*L without, since the
first E layers are then recomputed), and a full-acceptance bonus step
costs L. Prompt prefill is tracked separately and excluded from
``layer_token_units`` so the per-mode accounting identities stay exact.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

from selfspec.cache import KVQCache
from selfspec.model import DecoderModel
from selfspec.nn import argmax_token

MODES = ("autoregressive", "early_exit", "self_speculative")


@dataclass(frozen=True)
class DecodeConfig:
    exit_layer: int = 4
    num_speculations: int = 8
    max_new_tokens: int = 512
    mode: str = "autoregressive"
    eot_id: int | None = 256

    def __post_init__(self) -> None:
        if self.exit_layer < 1:
            raise ValueError("exit_layer must be >= 1")
        if self.num_speculations < 1:
            raise ValueError("num_speculations must be >= 1")
        if self.max_new_tokens < 1:
            raise ValueError("max_new_tokens must be >= 1")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")


@dataclass
class DecodeReport:
    """Per-run metrics for one generation call."""

    mode: str
    exit_layer: int
    num_speculations: int
    tokens_emitted: int = 0
    rounds: int = 0
    drafts_proposed: int = 0
    drafts_accepted: int = 0
    acceptance_rate: float = 0.0
    layer_token_units: int = 0
    wall_ms_per_token: float = 0.0
    prefill_units: int = 0
    draft_units: int = 0
    verify_units: int = 0
    bonus_units: int = 0

    def finalize(self, wall_ms: float) -> None:
        if self.drafts_proposed:
            self.acceptance_rate = self.drafts_accepted / self.drafts_proposed
        self.wall_ms_per_token = wall_ms / max(1, self.tokens_emitted)

    def to_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass
class DraftResult:
    """Drafted tokens plus the state verification needs."""

    tokens: list[int]
    first_pos: int            # cache position of the first drafted input
    fed_tokens: list[int]     # inputs consumed: pending token + all drafts but the last

    def __len__(self) -> int:
        return len(self.tokens)


def _prefill(model: DecoderModel, prompt: list[int], cache: KVQCache, depth: int,
             report: DecodeReport) -> int:
    """Feed all prompt tokens but the last; returns the pending token."""
    if len(prompt) > 1:
        model.forward_step(prompt[:-1], cache, depth, record_exit=False)
        report.prefill_units += (len(prompt) - 1) * depth
    cache.commit(len(prompt) - 1)
    return prompt[-1]


def _check_prompt(model: DecoderModel, prompt: list[int], config: DecodeConfig) -> None:
    if not prompt:
        raise ValueError("prompt must be nonempty")
    if len(prompt) > model.config.max_context:
        raise ValueError(
            f"prompt length {len(prompt)} exceeds max_context {model.config.max_context}"
        )
    if config.exit_layer > model.config.n_layers:
        raise ValueError(
            f"exit_layer {config.exit_layer} exceeds n_layers {model.config.n_layers}"
        )


def generate_autoregressive(model: DecoderModel, prompt: list[int],
                            config: DecodeConfig) -> tuple[list[int], DecodeReport]:
    """Greedy decoding through all layers; the baseline every mode must match."""
    _check_prompt(model, prompt, config)
    n_layers = model.config.n_layers
    report = DecodeReport("autoregressive", n_layers, config.num_speculations)
    t0 = time.perf_counter()
    cache = model.new_cache()
    pending = _prefill(model, prompt, cache, n_layers, report)
    out: list[int] = []
    while len(out) < config.max_new_tokens and cache.committed_len < model.config.max_context:
        x = model.forward_step([pending], cache, n_layers, record_exit=False)
        report.layer_token_units += n_layers
        tok = argmax_token(model.unembed(x[-1]))
        out.append(tok)
        cache.commit(cache.committed_len + 1)
        if tok == config.eot_id:
            break
        pending = tok
    report.tokens_emitted = len(out)
    report.finalize((time.perf_counter() - t0) * 1000.0)
    return out, report


def generate_early_exit(model: DecoderModel, prompt: list[int],
                        config: DecodeConfig) -> tuple[list[int], DecodeReport]:
    """Greedy decoding that unembeds layer E's output and skips the rest."""
    _check_prompt(model, prompt, config)
    e = config.exit_layer
    report = DecodeReport("early_exit", e, config.num_speculations)
    t0 = time.perf_counter()
    cache = model.new_cache()
    pending = _prefill(model, prompt, cache, e, report)
    out: list[int] = []
    while len(out) < config.max_new_tokens and cache.committed_len < model.config.max_context:
        x = model.forward_step([pending], cache, e, record_exit=False)
        report.layer_token_units += e
        tok = argmax_token(model.unembed(x[-1]))
        out.append(tok)
        cache.commit(cache.committed_len + 1)
        if tok == config.eot_id:
            break
        pending = tok
    report.tokens_emitted = len(out)
    report.finalize((time.perf_counter() - t0) * 1000.0)
    return out, report


def draft(model: DecoderModel, cache: KVQCache, pending: int, exit_layer: int,
          num_speculations: int, eot_id: int | None,
          report: DecodeReport | None = None) -> DraftResult:
    """Draft up to ``num_speculations`` tokens by greedy early exit.

    Feeds the pending token and then each draft but the last through
    layers 0..exit_layer-1, recording exit states and shallow K/V for
    every fed position. Stops early if a draft is the end-of-text token.
    """
    first_pos = cache.committed_len
    tokens: list[int] = []
    fed: list[int] = []
    cur = pending
    for i in range(num_speculations):
        fed.append(cur)
        x = model.forward_step([cur], cache, exit_layer, record_exit=True)
        if report is not None:
            report.draft_units += exit_layer
        tok = argmax_token(model.unembed(x[-1]))
        tokens.append(tok)
        if tok == eot_id or i == num_speculations - 1:
            break
        cur = tok
    return DraftResult(tokens=tokens, first_pos=first_pos, fed_tokens=fed)


def verify(model: DecoderModel, cache: KVQCache, exit_layer: int, drafted: DraftResult,
           eot_id: int | None = None, allow_bonus: bool = True, reuse_cache: bool = True,
           report: DecodeReport | None = None) -> tuple[int, list[int]]:
    """Verify drafted tokens with the remaining layers and emit the round's tokens.

    Runs one remainder pass over the draft positions, accepts the
    longest prefix where the draft agrees with the full model's greedy
    choice, and emits that prefix plus the full model's token at the
    first disagreement. When every draft is accepted the extra token
    comes from a bonus full-depth step on the last draft token, so the
    emitted count is always n_accepted + 1 (unless the bonus is
    suppressed by ``allow_bonus`` or an end-of-text draft). Afterwards
    the cache is truncated so every layer's frontier equals the new
    committed length.

    With ``reuse_cache`` False the draft positions' first E layers are
    recomputed from their tokens instead of resuming from cached exit
    states; outputs are identical, the verification cost rises from
    d*(L-E) to d*L layer-token units.
    """
    d_eff = len(drafted.tokens)
    n_layers = model.config.n_layers
    base = drafted.first_pos

    if not reuse_cache:
        # discard the draft stage's shallow cache and exit states, then
        # recompute them token by token exactly as drafting did
        cache.rollback(base)
        cache.clear_exit_states()
        for tok in drafted.fed_tokens:
            model.forward_step([tok], cache, exit_layer, record_exit=True)
            if report is not None:
                report.verify_units += exit_layer

    h = model.forward_remainder(cache, exit_layer, d_eff)
    if report is not None:
        report.verify_units += d_eff * (n_layers - exit_layer)
    logits = model.unembed(h)
    full = [argmax_token(logits[i]) for i in range(d_eff)]

    n_accepted = 0
    while n_accepted < d_eff and drafted.tokens[n_accepted] == full[n_accepted]:
        n_accepted += 1

    if n_accepted < d_eff:
        emitted = drafted.tokens[:n_accepted] + [full[n_accepted]]
        new_len = base + n_accepted + 1
        cache.rollback(new_len)
        cache.clear_exit_states()
        cache.commit(new_len)
    else:
        emitted = list(drafted.tokens)
        new_len = base + d_eff
        cache.rollback(new_len)
        cache.clear_exit_states()
        cache.commit(new_len)
        if allow_bonus and emitted[-1] != eot_id:
            x = model.forward_step([emitted[-1]], cache, n_layers, record_exit=False)
            if report is not None:
                report.bonus_units += n_layers
            emitted.append(argmax_token(model.unembed(x[-1])))
            cache.commit(new_len + 1)

    if report is not None:
        report.drafts_proposed += d_eff
        report.drafts_accepted += n_accepted
    return n_accepted, emitted


def generate_self_speculative(model: DecoderModel, prompt: list[int], config: DecodeConfig,
                              reuse_cache: bool = True) -> tuple[list[int], DecodeReport]:
    """Draft-and-verify loop; token-identical to autoregressive greedy decoding."""
    _check_prompt(model, prompt, config)
    n_layers = model.config.n_layers
    e = config.exit_layer
    if not 1 <= e < n_layers:
        raise ValueError(f"self-speculative exit_layer must be in [1, {n_layers - 1}], got {e}")
    report = DecodeReport("self_speculative", e, config.num_speculations)
    t0 = time.perf_counter()
    cache = model.new_cache()
    pending = _prefill(model, prompt, cache, n_layers, report)
    out: list[int] = []
    while len(out) < config.max_new_tokens:
        remaining = config.max_new_tokens - len(out)
        room = model.config.max_context - cache.committed_len
        if room < 1:
            break
        d_round = min(config.num_speculations, remaining, room)
        drafted = draft(model, cache, pending, e, d_round, config.eot_id, report)
        n_acc, emitted = verify(
            model, cache, e, drafted,
            eot_id=config.eot_id,
            allow_bonus=remaining > len(drafted) and room > len(drafted),
            reuse_cache=reuse_cache,
            report=report,
        )
        report.rounds += 1
        stop = False
        for tok in emitted:
            out.append(tok)
            if tok == config.eot_id or len(out) == config.max_new_tokens:
                stop = True
                break
        if stop:
            break
        pending = out[-1]
    report.layer_token_units = report.draft_units + report.verify_units + report.bonus_units
    report.tokens_emitted = len(out)
    report.finalize((time.perf_counter() - t0) * 1000.0)
    return out, report


def generate(model: DecoderModel, prompt: list[int], config: DecodeConfig) -> tuple[list[int], DecodeReport]:
    """Dispatch on config.mode."""
    if config.mode == "autoregressive":
        return generate_autoregressive(model, prompt, config)
    if config.mode == "early_exit":
        return generate_early_exit(model, prompt, config)
    return generate_self_speculative(model, prompt, config)


def speedup(report_base: DecodeReport, report_new: DecodeReport) -> float:
    """Ratio of per-token wall times: base over new."""
    if report_new.wall_ms_per_token == 0.0:
        raise ValueError("new report has zero wall time per token")
    return report_base.wall_ms_per_token / report_new.wall_ms_per_token


@dataclass
class AblationResult:
    tokens_with: list[int]
    tokens_without: list[int]
    report_with: DecodeReport
    report_without: DecodeReport


def kvq_ablation(model: DecoderModel, prompts: list[list[int]],
                 config: DecodeConfig) -> list[AblationResult]:
    """Pair self-speculative runs with and without cache reuse per prompt.

    Reuse is a pure optimization: both variants must emit identical
    tokens; only the verification cost differs.
    """
    results = []
    for prompt in prompts:
        tokens_with, rep_with = generate_self_speculative(model, prompt, config, reuse_cache=True)
        tokens_wo, rep_wo = generate_self_speculative(model, prompt, config, reuse_cache=False)
        if tokens_with != tokens_wo:
            raise AssertionError("cache reuse changed emitted tokens")
        results.append(AblationResult(tokens_with, tokens_wo, rep_with, rep_wo))
    return results


BENCH_COLUMNS = ("mode", "E", "d", "prompt_id", "tokens", "acceptance_rate",
                 "ms_per_token", "layer_token_units")


@dataclass
class BenchResult:
    rows: list[dict] = field(default_factory=list)

    def to_csv(self) -> str:
        lines = [",".join(BENCH_COLUMNS)]
        for row in self.rows:
            lines.append(",".join(str(row[c]) for c in BENCH_COLUMNS))
        return "\n".join(lines) + "\n"

    def summary_markdown(self) -> str:
        """Per-mode aggregate table with speedup against the autoregressive rows."""
        by_mode: dict[str, list[dict]] = {}
        for row in self.rows:
            by_mode.setdefault(row["mode"], []).append(row)
        base_ms = None
        if "autoregressive" in by_mode:
            rows = by_mode["autoregressive"]
            base_ms = sum(r["ms_per_token"] for r in rows) / len(rows)
        lines = [
            "| mode | E | d | tokens/s | ms/token | acceptance | speedup |",
            "|---|---|---|---|---|---|---|",
        ]
        for mode in MODES:
            if mode not in by_mode:
                continue
            rows = by_mode[mode]
            ms = sum(r["ms_per_token"] for r in rows) / len(rows)
            acc = sum(r["acceptance_rate"] for r in rows) / len(rows)
            tps = 1000.0 / ms if ms else float("inf")
            spd = f"{base_ms / ms:.2f}x" if base_ms else "-"
            acc_s = f"{acc:.1%}" if mode == "self_speculative" else "-"
            e = rows[0]["E"]
            d = rows[0]["d"] if mode == "self_speculative" else "-"
            lines.append(f"| {mode} | {e} | {d} | {tps:.1f} | {ms:.2f} | {acc_s} | {spd} |")
        return "\n".join(lines) + "\n"


def bench_prompts(model: DecoderModel, prompts: list[list[int]],
                  config: DecodeConfig) -> BenchResult:
    """Run all three modes over every prompt and collect bench rows."""
    result = BenchResult()
    for mode in MODES:
        cfg_mode = DecodeConfig(
            exit_layer=config.exit_layer,
            num_speculations=config.num_speculations,
            max_new_tokens=config.max_new_tokens,
            mode=mode,
            eot_id=config.eot_id,
        )
        for pid, prompt in enumerate(prompts):
            tokens, rep = generate(model, prompt, cfg_mode)
            result.rows.append({
                "mode": mode,
                "E": rep.exit_layer,
                "d": rep.num_speculations,
                "prompt_id": pid,
                "tokens": rep.tokens_emitted,
                "acceptance_rate": round(rep.acceptance_rate, 6),
                "ms_per_token": round(rep.wall_ms_per_token, 4),
                "layer_token_units": rep.layer_token_units,
            })
    return result
