"""Deterministic CPU training loop wiring the schedules into forward/backward.

Each step samples a per-sample layer-drop mask keyed on (seed, step),
runs one training forward, forms the curriculum-weighted early-exit
loss, and applies one AdamW update (betas 0.9/0.95, weight decay 0.1 on
matrices only). The base learning rate is doubled whenever layer
dropout is active, which this recipe needs to hold accuracy. Identical
(config, seed, corpus) reproduce identical parameters bitwise.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from selfspec import nn as core
from selfspec import schedules
from selfspec.checkpoint import save_checkpoint
from selfspec.corpus import window_batches
from selfspec.model import DecoderModel, ModelConfig
from selfspec.schedules import DropoutSchedule, EarlyExitLossSchedule


class TrainingDiverged(RuntimeError):
    def __init__(self, record: dict) -> None:
        super().__init__(f"non-finite loss at step {record['step']}")
        self.record = record


@dataclass(frozen=True)
class TrainConfig:
    steps: int = 1000
    batch_size: int = 4
    context_len: int = 64
    learning_rate: float = 1e-3
    lr_schedule: str = "cosine"  # constant | cosine
    seed: int = 0
    eval_every: int = 0  # 0 disables periodic eval
    p_max: float = 0.1
    dropout_time_curriculum: str = "constant"
    dropout_layer_curriculum: str = "exponential"
    e_scale: float = 0.2
    ee_curriculum: str = "rotational"
    rotation_period: int = 8
    weight_decay: float = 0.1
    betas: tuple[float, float] = (0.9, 0.95)

    def __post_init__(self) -> None:
        if self.steps < 1:
            raise ValueError("steps must be >= 1")
        if self.lr_schedule not in ("constant", "cosine"):
            raise ValueError(f"unknown lr_schedule {self.lr_schedule!r}")

    def dropout_schedule(self, n_layers: int) -> DropoutSchedule:
        return DropoutSchedule(
            p_max=self.p_max,
            n_layers=n_layers,
            total_steps=self.steps,
            time_curriculum=self.dropout_time_curriculum,
            layer_curriculum=self.dropout_layer_curriculum,
            seed=self.seed,
        )

    def early_exit_schedule(self, n_layers: int) -> EarlyExitLossSchedule:
        period = min(self.rotation_period, n_layers)
        return EarlyExitLossSchedule(
            scale=self.e_scale,
            n_layers=n_layers,
            total_steps=self.steps,
            curriculum=self.ee_curriculum,
            rotation_period=period,
        )

    def to_dict(self) -> dict:
        d = dict(self.__dict__)
        d["betas"] = list(self.betas)
        return d


@dataclass
class StepRecord:
    step: int
    loss: float
    lr: float
    enabled_layers: list[int]
    mean_dropout: float
    per_layer_losses: dict[int, float]


@dataclass
class EvalRecord:
    step: int
    layer: int
    perplexity: float


@dataclass
class TrainLog:
    steps: list[StepRecord] = field(default_factory=list)
    evals: list[EvalRecord] = field(default_factory=list)

    def to_csv(self) -> str:
        lines = ["step,loss,lr,enabled_layers,mean_dropout"]
        for r in self.steps:
            enabled = ";".join(str(l) for l in r.enabled_layers)
            lines.append(f"{r.step},{r.loss:.6f},{r.lr:.8f},{enabled},{r.mean_dropout:.6f}")
        return "\n".join(lines) + "\n"

    def evals_to_jsonl(self) -> str:
        return "".join(
            json.dumps({"step": r.step, "layer": r.layer, "perplexity": r.perplexity}) + "\n"
            for r in self.evals
        )


class Trainer:
    def __init__(self, model: DecoderModel, config: TrainConfig) -> None:
        self.model = model
        self.config = config
        n_layers = model.config.n_layers
        self.dropout = config.dropout_schedule(n_layers)
        self.early_exit = config.early_exit_schedule(n_layers)
        # doubled learning rate whenever layer dropout is active
        self.base_lr = config.learning_rate * (2.0 if config.p_max > 0 else 1.0)
        decay = [p for p in model.parameters() if p.dim() >= 2]
        no_decay = [p for p in model.parameters() if p.dim() < 2]
        self.optimizer = torch.optim.AdamW(
            [
                {"params": decay, "weight_decay": config.weight_decay},
                {"params": no_decay, "weight_decay": 0.0},
            ],
            lr=self.base_lr,
            betas=config.betas,
        )

    def lr_at(self, step: int) -> float:
        if self.config.lr_schedule == "constant":
            return self.base_lr
        return core.cosine_lr(step, self.config.steps, self.base_lr)

    def train_step(self, batch: np.ndarray, step: int) -> StepRecord:
        """One optimizer update on a [batch, context_len + 1] token window."""
        cfg = self.config
        inputs = torch.from_numpy(batch[:, :-1])
        targets = torch.from_numpy(batch[:, 1:])
        mask = schedules.sample_drop_mask(self.dropout, step, inputs.shape[0])
        hidden = self.model.forward_train(inputs, mask)
        loss, per_layer = schedules.total_loss(
            hidden, targets, step, self.early_exit, self.model.unembed
        )
        record = StepRecord(
            step=step,
            loss=float(loss.detach()),
            lr=self.lr_at(step),
            enabled_layers=self.early_exit.enabled_layers(step),
            mean_dropout=float(self.dropout.rates(step).mean()),
            per_layer_losses=per_layer,
        )
        if not torch.isfinite(loss):
            raise TrainingDiverged(record.__dict__)
        self.optimizer.zero_grad()
        loss.backward()
        for group in self.optimizer.param_groups:
            group["lr"] = record.lr
        self.optimizer.step()
        return record


def eval_layer_perplexities(model: DecoderModel, tokens: np.ndarray, context_len: int,
                            max_windows: int = 32) -> dict[int, float]:
    """Held-out perplexity of every layer exit (1..L) via the shared head."""
    window = context_len + 1
    n_windows = min(len(tokens) // window, max_windows)
    if n_windows < 1:
        raise ValueError("eval corpus too small for one window")
    data = np.stack([tokens[i * window:(i + 1) * window] for i in range(n_windows)]).astype(np.int64)
    inputs = torch.from_numpy(data[:, :-1])
    targets = torch.from_numpy(data[:, 1:])
    n_layers = model.config.n_layers
    out: dict[int, float] = {}
    with torch.no_grad():
        hidden = model.forward_train(inputs, None)
        for l in range(1, n_layers + 1):
            ce = core.sequence_cross_entropy(model.unembed(hidden[l]), targets)
            out[l] = float(torch.exp(ce))
    return out


def train_run(
    corpus_tokens: np.ndarray | list[int],
    model_config: ModelConfig,
    train_config: TrainConfig,
    out_dir: str | Path | None = None,
    eval_fraction: float = 0.05,
) -> tuple[DecoderModel, TrainLog]:
    """Full training run over a tokenized corpus.

    The trailing ``eval_fraction`` of the corpus is held out for the
    periodic per-layer perplexity eval; the rest is cut into shuffled
    context windows. Writes a checkpoint at the end (and at every eval
    when ``out_dir`` is given) plus the CSV/JSONL logs.
    """
    tokens = np.asarray(corpus_tokens, dtype=np.int64)
    window = train_config.context_len + 1
    if len(tokens) < window:
        raise ValueError(f"corpus of {len(tokens)} tokens < context_len + 1 = {window}")
    n_eval = max(window, int(len(tokens) * eval_fraction))
    train_tokens, eval_tokens = tokens[:-n_eval], tokens[-n_eval:]
    if len(train_tokens) < window:
        raise ValueError("corpus too small to split off a held-out slice")

    torch.manual_seed(train_config.seed)
    model = DecoderModel(model_config, seed=train_config.seed)
    trainer = Trainer(model, train_config)
    batches = window_batches(
        train_tokens, train_config.context_len, train_config.batch_size,
        train_config.steps, train_config.seed,
    )
    log = TrainLog()
    out_path = Path(out_dir) if out_dir is not None else None
    if out_path is not None:
        out_path.mkdir(parents=True, exist_ok=True)

    def run_eval(step: int) -> None:
        for layer, ppl in eval_layer_perplexities(model, eval_tokens, train_config.context_len).items():
            log.evals.append(EvalRecord(step=step, layer=layer, perplexity=ppl))

    for step in range(train_config.steps):
        log.steps.append(trainer.train_step(batches[step], step))
        if train_config.eval_every and (step + 1) % train_config.eval_every == 0:
            run_eval(step)
            if out_path is not None:
                save_checkpoint(model, out_path / f"checkpoint_step{step + 1:06d}.lskp",
                                extras={"train_config": train_config.to_dict()})
    if not (train_config.eval_every and train_config.steps % train_config.eval_every == 0):
        run_eval(train_config.steps - 1)
    if out_path is not None:
        save_checkpoint(model, out_path / "checkpoint.lskp",
                        extras={"train_config": train_config.to_dict()})
        (out_path / "trainlog.csv").write_text(log.to_csv())
        (out_path / "eval.jsonl").write_text(log.evals_to_jsonl())
    return model, log


def dropout_curve_comparison(
    corpus_tokens: np.ndarray,
    model_config: ModelConfig,
    base_config: TrainConfig,
) -> str:
    """Train twice with equal-mean layer dropout, exponential vs constant ramp.

    Returns a CSV of the two loss curves (columns step, loss_exp,
    loss_const). Both runs share the seed and all other settings; the
    constant variant applies the exponential ramp's mean rate to every
    layer.
    """
    curves: dict[str, list[float]] = {}
    for label, layer_curriculum in (("exp", "exponential"), ("const", "constant")):
        cfg_kwargs = base_config.to_dict()
        cfg_kwargs["betas"] = tuple(cfg_kwargs["betas"])
        cfg_kwargs["dropout_layer_curriculum"] = layer_curriculum
        _, log = train_run(corpus_tokens, model_config, TrainConfig(**cfg_kwargs))
        curves[label] = [r.loss for r in log.steps]
    lines = ["step,loss_exp,loss_const"]
    for i, (le, lc) in enumerate(zip(curves["exp"], curves["const"])):
        lines.append(f"{i},{le:.6f},{lc:.6f}")
    return "\n".join(lines) + "\n"
