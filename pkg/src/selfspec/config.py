"""Flat key=value run configuration shared by all CLI commands.

One namespace of scalar keys covers the model, training, and decoding
settings plus file paths; a config file provides any subset and
command-line flags override it (flag wins). Unknown keys are rejected
up front, and every referenced input path must exist before work
starts. Each run echoes its fully resolved configuration, and re-running
from that echo reproduces the outputs bitwise.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

from selfspec.decoder import MODES
from selfspec.model import ModelConfig
from selfspec.trainer import TrainConfig


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class Key:
    name: str
    type: type
    default: object
    help: str


SCHEMA: dict[str, Key] = {k.name: k for k in [
    # model
    Key("n_layers", int, 8, "transformer layer count"),
    Key("dim", int, 128, "model width"),
    Key("n_heads", int, 4, "attention heads"),
    Key("vocab", int, 257, "vocabulary size (byte tokenizer: 257)"),
    Key("max_context", int, 256, "maximum sequence length"),
    Key("ffn_hidden", int, 344, "gated FFN hidden width"),
    # training
    Key("steps", int, 1000, "optimizer steps"),
    Key("batch_size", int, 4, "sequences per step"),
    Key("context_len", int, 64, "training window length"),
    Key("learning_rate", float, 1e-3, "base learning rate (doubled when p_max > 0)"),
    Key("lr_schedule", str, "cosine", "constant | cosine"),
    Key("seed", int, 0, "run seed"),
    Key("eval_every", int, 0, "per-layer perplexity eval interval (0 = final only)"),
    Key("p_max", float, 0.1, "maximum layer dropout rate"),
    Key("dropout_time_curriculum", str, "constant", "constant | exponential"),
    Key("dropout_layer_curriculum", str, "exponential", "exponential | constant"),
    Key("e_scale", float, 0.2, "early exit loss scale"),
    Key("ee_curriculum", str, "rotational", "rotational | gradual | all"),
    Key("rotation_period", int, 8, "layers between active exits in rotation"),
    # decoding
    Key("exit_layer", int, 4, "early exit layer E"),
    Key("num_speculations", int, 8, "draft tokens per round d"),
    Key("max_new_tokens", int, 512, "generation cap"),
    Key("mode", str, "autoregressive", " | ".join(MODES)),
    Key("probe_tokens", int, 16, "tokens to probe"),
    # paths
    Key("corpus", str, "", "training/eval corpus file"),
    Key("checkpoint", str, "", "checkpoint file to load"),
    Key("output_dir", str, "out", "artifact directory"),
    Key("prompts", str, "", "prompt file, one prompt per line"),
]}


class RunConfig:
    def __init__(self, values: dict | None = None) -> None:
        self.values = {k: key.default for k, key in SCHEMA.items()}
        for k, v in (values or {}).items():
            self.set(k, v)

    def set(self, key: str, raw: object) -> None:
        if key not in SCHEMA:
            raise ConfigError(f"unknown config key {key!r}")
        want = SCHEMA[key].type
        try:
            self.values[key] = want(raw)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad value for {key!r}: {raw!r} ({exc})") from exc

    def __getitem__(self, key: str):
        return self.values[key]

    @classmethod
    def from_file(cls, path: str | Path) -> "RunConfig":
        cfg = cls()
        cfg.update_from_file(path)
        return cfg

    def update_from_file(self, path: str | Path) -> None:
        text = Path(path).read_text()
        for lineno, line in enumerate(text.splitlines(), start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected key = value, got {line!r}")
            key, _, raw = line.partition("=")
            self.set(key.strip(), raw.strip())

    def update_from_flags(self, flags: dict) -> None:
        for k, v in flags.items():
            if v is not None:
                self.set(k, v)

    def validate(self, require: tuple[str, ...] = ()) -> None:
        v = self.values
        if not 0.0 <= v["p_max"] <= 1.0:
            raise ConfigError(f"p_max must be in [0, 1], got {v['p_max']}")
        if not 0.0 <= v["e_scale"] <= 1.0:
            raise ConfigError(f"e_scale must be in [0, 1], got {v['e_scale']}")
        if v["dim"] % v["n_heads"] != 0:
            raise ConfigError(f"dim {v['dim']} not divisible by n_heads {v['n_heads']}")
        if not 1 <= v["exit_layer"] <= v["n_layers"]:
            raise ConfigError(f"exit_layer must be in [1, {v['n_layers']}]")
        if v["mode"] == "self_speculative" and v["exit_layer"] >= v["n_layers"]:
            raise ConfigError("self_speculative mode needs exit_layer < n_layers")
        if v["num_speculations"] < 1:
            raise ConfigError("num_speculations must be >= 1")
        if v["mode"] not in MODES:
            raise ConfigError(f"mode must be one of {MODES}")
        if v["context_len"] > v["max_context"]:
            raise ConfigError("context_len exceeds max_context")
        for key in require:
            if not v[key]:
                raise ConfigError(f"missing required path {key!r}")
            if not Path(v[key]).exists():
                raise ConfigError(f"{key} path {v[key]!r} does not exist")

    def model_config(self) -> ModelConfig:
        v = self.values
        return ModelConfig(
            n_layers=v["n_layers"], dim=v["dim"], n_heads=v["n_heads"],
            vocab=v["vocab"], max_context=v["max_context"], ffn_hidden=v["ffn_hidden"],
        )

    def train_config(self) -> TrainConfig:
        v = self.values
        return TrainConfig(
            steps=v["steps"], batch_size=v["batch_size"], context_len=v["context_len"],
            learning_rate=v["learning_rate"], lr_schedule=v["lr_schedule"], seed=v["seed"],
            eval_every=v["eval_every"], p_max=v["p_max"],
            dropout_time_curriculum=v["dropout_time_curriculum"],
            dropout_layer_curriculum=v["dropout_layer_curriculum"],
            e_scale=v["e_scale"], ee_curriculum=v["ee_curriculum"],
            rotation_period=v["rotation_period"],
        )

    def echo(self) -> str:
        return "".join(f"{k} = {self.values[k]}\n" for k in SCHEMA)
