"""Command-line entry points: train, generate, bench, probe, eval-ppl.

Every command takes an optional --config file of flat key = value
pairs; any schema key is also a flag and flags win. Exit codes: 0 on
success, 2 for configuration errors, 3 for runtime failures.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from selfspec import decoder, probe
from selfspec.checkpoint import load_checkpoint
from selfspec.config import SCHEMA, ConfigError, RunConfig
from selfspec.decoder import DecodeConfig
from selfspec.tokenizer import ByteTokenizer
from selfspec.trainer import eval_layer_perplexities, train_run

EXIT_CONFIG_ERROR = 2
EXIT_RUNTIME_ERROR = 3


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="selfspec")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, needs_prompt in (
        ("train", False), ("generate", True), ("bench", False),
        ("probe", True), ("eval-ppl", False),
    ):
        p = sub.add_parser(name)
        p.add_argument("--config", default=None, help="flat key = value config file")
        if needs_prompt:
            p.add_argument("--prompt", default=None, help="prompt text")
        for key in SCHEMA.values():
            flag = "--" + key.name.replace("_", "-")
            p.add_argument(flag, dest=key.name, default=None, help=key.help)
    return parser


def _resolve(args: argparse.Namespace) -> RunConfig:
    cfg = RunConfig()
    if args.config is not None:
        if not Path(args.config).exists():
            raise ConfigError(f"config file {args.config!r} does not exist")
        cfg.update_from_file(args.config)
    cfg.update_from_flags({k: getattr(args, k) for k in SCHEMA})
    return cfg


def _echo(cfg: RunConfig, out_dir: Path) -> None:
    text = cfg.echo()
    sys.stdout.write(text)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "resolved_config.cfg").write_text(text)


def cmd_train(cfg: RunConfig) -> int:
    cfg.validate(require=("corpus",))
    out_dir = Path(cfg["output_dir"])
    _echo(cfg, out_dir)
    tok = ByteTokenizer()
    corpus = np.array(tok.encode_bytes(Path(cfg["corpus"]).read_bytes()), dtype=np.int64)
    _, log = train_run(corpus, cfg.model_config(), cfg.train_config(), out_dir=out_dir)
    print(f"trained {len(log.steps)} steps; final loss {log.steps[-1].loss:.4f}")
    print(f"checkpoint: {out_dir / 'checkpoint.lskp'}")
    return 0


def _load_model(cfg: RunConfig):
    model, _ = load_checkpoint(cfg["checkpoint"])
    return model


def _decode_config(cfg: RunConfig) -> DecodeConfig:
    return DecodeConfig(
        exit_layer=cfg["exit_layer"],
        num_speculations=cfg["num_speculations"],
        max_new_tokens=cfg["max_new_tokens"],
        mode=cfg["mode"],
    )


def cmd_generate(cfg: RunConfig, prompt: str | None) -> int:
    cfg.validate(require=("checkpoint",))
    if not prompt:
        raise ConfigError("empty prompt")
    out_dir = Path(cfg["output_dir"])
    _echo(cfg, out_dir)
    model = _load_model(cfg)
    tok = ByteTokenizer()
    tokens, report = decoder.generate(model, tok.encode(prompt), _decode_config(cfg))
    print(tok.decode(tokens))
    (out_dir / "decode_report.json").write_text(json.dumps(report.to_dict(), indent=2) + "\n")
    return 0


def cmd_bench(cfg: RunConfig) -> int:
    cfg.validate(require=("checkpoint", "prompts"))
    lines = [l for l in Path(cfg["prompts"]).read_text().splitlines() if l.strip()]
    if not lines:
        raise ConfigError(f"prompts file {cfg['prompts']!r} is empty")
    out_dir = Path(cfg["output_dir"])
    _echo(cfg, out_dir)
    model = _load_model(cfg)
    tok = ByteTokenizer()
    result = decoder.bench_prompts(model, [tok.encode(l) for l in lines], _decode_config(cfg))
    (out_dir / "bench.csv").write_text(result.to_csv())
    summary = result.summary_markdown()
    (out_dir / "bench_summary.md").write_text(summary)
    print(summary)
    return 0


def cmd_probe(cfg: RunConfig, prompt: str | None) -> int:
    cfg.validate(require=("checkpoint",))
    if not prompt:
        raise ConfigError("empty prompt")
    out_dir = Path(cfg["output_dir"])
    _echo(cfg, out_dir)
    model = _load_model(cfg)
    tok = ByteTokenizer()
    preds = probe.layerwise_predictions(model, tok.encode(prompt), cfg["probe_tokens"])
    (out_dir / "probe.csv").write_text(probe.probe_csv(preds))
    summary = probe.probe_summary_json(preds)
    (out_dir / "probe_summary.json").write_text(summary)
    print(summary)
    return 0


def cmd_eval_ppl(cfg: RunConfig) -> int:
    cfg.validate(require=("checkpoint", "corpus"))
    out_dir = Path(cfg["output_dir"])
    _echo(cfg, out_dir)
    model = _load_model(cfg)
    tok = ByteTokenizer()
    corpus = np.array(tok.encode_bytes(Path(cfg["corpus"]).read_bytes()), dtype=np.int64)
    ppl = eval_layer_perplexities(model, corpus, cfg["context_len"])
    lines = ["layer,perplexity"] + [f"{l},{p:.6f}" for l, p in sorted(ppl.items())]
    text = "\n".join(lines) + "\n"
    (out_dir / "perplexity.csv").write_text(text)
    print(text)
    return 0


def main(argv: list[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        cfg = _resolve(args)
        if args.command == "train":
            return cmd_train(cfg)
        if args.command == "generate":
            return cmd_generate(cfg, args.prompt)
        if args.command == "bench":
            return cmd_bench(cfg)
        if args.command == "probe":
            return cmd_probe(cfg, args.prompt)
        return cmd_eval_ppl(cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG_ERROR
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME_ERROR


if __name__ == "__main__":
    sys.exit(main())
