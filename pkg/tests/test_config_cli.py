import json

import pytest

from selfspec.cli import main
from selfspec.config import ConfigError, RunConfig
from selfspec.corpus import synthetic_text


# ------------------------------------------------------------------ config

def test_unknown_key_rejected():
    cfg = RunConfig()
    with pytest.raises(ConfigError):
        cfg.set("not_a_key", 1)


def test_bad_value_rejected():
    cfg = RunConfig()
    with pytest.raises(ConfigError):
        cfg.set("steps", "many")


def test_file_then_flag_precedence(tmp_path):
    f = tmp_path / "run.cfg"
    f.write_text("steps = 7\ndim = 64  # comment\n\n# full-line comment\n")
    cfg = RunConfig.from_file(f)
    assert cfg["steps"] == 7 and cfg["dim"] == 64
    cfg.update_from_flags({"steps": "9", "dim": None})
    assert cfg["steps"] == 9 and cfg["dim"] == 64


def test_malformed_line_rejected(tmp_path):
    f = tmp_path / "run.cfg"
    f.write_text("steps 7\n")
    with pytest.raises(ConfigError):
        RunConfig.from_file(f)


def test_validation_rules():
    cfg = RunConfig({"p_max": 1.5})
    with pytest.raises(ConfigError):
        cfg.validate()
    cfg = RunConfig({"mode": "self_speculative", "exit_layer": 8, "n_layers": 8})
    with pytest.raises(ConfigError):
        cfg.validate()
    cfg = RunConfig({"corpus": "/nonexistent/corpus.txt"})
    with pytest.raises(ConfigError):
        cfg.validate(require=("corpus",))


def test_echo_round_trips(tmp_path):
    cfg = RunConfig({"steps": 5, "p_max": 0.25})
    f = tmp_path / "echo.cfg"
    f.write_text(cfg.echo())
    again = RunConfig.from_file(f)
    assert again.values == cfg.values


# --------------------------------------------------------------------- cli

@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    corpus = root / "corpus.txt"
    corpus.write_bytes(synthetic_text(30_000, seed=8))
    prompts = root / "prompts.txt"
    prompts.write_text("the cat watches\nthe dog finds\nmy friend holds\n")
    cfg = root / "run.cfg"
    cfg.write_text(
        "n_layers = 4\ndim = 32\nn_heads = 2\nffn_hidden = 88\nmax_context = 96\n"
        "steps = 25\nbatch_size = 4\ncontext_len = 32\nlearning_rate = 0.002\n"
        "seed = 3\nexit_layer = 2\nnum_speculations = 3\nmax_new_tokens = 10\n"
        f"corpus = {corpus}\n"
    )
    return root


def test_cli_train_and_artifacts(workspace, capsys):
    out = workspace / "train_out"
    rc = main(["train", "--config", str(workspace / "run.cfg"), "--output-dir", str(out)])
    assert rc == 0
    assert (out / "checkpoint.lskp").exists()
    assert (out / "trainlog.csv").exists()
    assert (out / "resolved_config.cfg").exists()
    echoed = capsys.readouterr().out
    assert "steps = 25" in echoed
    assert sum(1 for _ in (out / "trainlog.csv").open()) == 26  # header + 25 rows


def test_cli_train_rejects_bad_pmax(workspace):
    rc = main(["train", "--config", str(workspace / "run.cfg"),
               "--p-max", "1.5", "--output-dir", str(workspace / "x")])
    assert rc == 2


def test_cli_train_missing_corpus(tmp_path):
    rc = main(["train", "--corpus", str(tmp_path / "nope.txt"),
               "--output-dir", str(tmp_path / "out")])
    assert rc == 2


def test_cli_generate_modes_agree(workspace):
    ckpt = workspace / "train_out" / "checkpoint.lskp"
    outs = {}
    for mode in ("autoregressive", "self_speculative"):
        out = workspace / f"gen_{mode}"
        rc = main(["generate", "--config", str(workspace / "run.cfg"),
                   "--checkpoint", str(ckpt), "--mode", mode,
                   "--prompt", "the cat", "--output-dir", str(out)])
        assert rc == 0
        report = json.loads((out / "decode_report.json").read_text())
        outs[mode] = report
    assert outs["self_speculative"]["tokens_emitted"] == outs["autoregressive"]["tokens_emitted"]


def test_cli_generate_early_exit_full_depth(workspace):
    ckpt = workspace / "train_out" / "checkpoint.lskp"
    out = workspace / "gen_ee"
    rc = main(["generate", "--config", str(workspace / "run.cfg"),
               "--checkpoint", str(ckpt), "--mode", "early_exit", "--exit-layer", "4",
               "--prompt", "the cat", "--output-dir", str(out)])
    assert rc == 0


def test_cli_generate_empty_prompt(workspace):
    ckpt = workspace / "train_out" / "checkpoint.lskp"
    rc = main(["generate", "--config", str(workspace / "run.cfg"),
               "--checkpoint", str(ckpt), "--prompt", "",
               "--output-dir", str(workspace / "y")])
    assert rc == 2


def test_cli_generate_invalid_exit_layer(workspace):
    ckpt = workspace / "train_out" / "checkpoint.lskp"
    rc = main(["generate", "--config", str(workspace / "run.cfg"),
               "--checkpoint", str(ckpt), "--exit-layer", "9",
               "--prompt", "hi", "--output-dir", str(workspace / "z")])
    assert rc == 2


def test_cli_bench(workspace):
    ckpt = workspace / "train_out" / "checkpoint.lskp"
    out = workspace / "bench_out"
    rc = main(["bench", "--config", str(workspace / "run.cfg"),
               "--checkpoint", str(ckpt), "--prompts", str(workspace / "prompts.txt"),
               "--max-new-tokens", "8", "--output-dir", str(out)])
    assert rc == 0
    rows = (out / "bench.csv").read_text().strip().splitlines()
    assert len(rows) == 1 + 9  # header + 3 modes x 3 prompts
    md = (out / "bench_summary.md").read_text()
    assert "speedup" in md
    for row in rows[1:]:
        acc = float(row.split(",")[5])
        assert 0.0 <= acc <= 1.0


def test_cli_bench_empty_prompts(workspace, tmp_path):
    empty = tmp_path / "empty.txt"
    empty.write_text("\n")
    ckpt = workspace / "train_out" / "checkpoint.lskp"
    rc = main(["bench", "--config", str(workspace / "run.cfg"),
               "--checkpoint", str(ckpt), "--prompts", str(empty),
               "--output-dir", str(tmp_path / "o")])
    assert rc == 2


def test_cli_probe(workspace):
    ckpt = workspace / "train_out" / "checkpoint.lskp"
    out = workspace / "probe_out"
    rc = main(["probe", "--config", str(workspace / "run.cfg"),
               "--checkpoint", str(ckpt), "--prompt", "the dog",
               "--probe-tokens", "1", "--output-dir", str(out)])
    assert rc == 0
    rows = (out / "probe.csv").read_text().strip().splitlines()
    assert len(rows) == 1 + 4  # n_tokens=1 -> L rows
    summary = json.loads((out / "probe_summary.json").read_text())
    assert 1 <= summary["mean_earliest_stable_layer"] <= 4


def test_cli_eval_ppl(workspace):
    ckpt = workspace / "train_out" / "checkpoint.lskp"
    out = workspace / "ppl_out"
    rc = main(["eval-ppl", "--config", str(workspace / "run.cfg"),
               "--checkpoint", str(ckpt), "--output-dir", str(out)])
    assert rc == 0
    rows = (out / "perplexity.csv").read_text().strip().splitlines()
    assert rows[0] == "layer,perplexity"
    assert len(rows) == 1 + 4


def test_cli_rerun_reproduces_checkpoint(workspace):
    outs = []
    for tag in ("r1", "r2"):
        out = workspace / tag
        rc = main(["train", "--config", str(workspace / "run.cfg"),
                   "--steps", "8", "--output-dir", str(out)])
        assert rc == 0
        outs.append((out / "checkpoint.lskp").read_bytes())
    assert outs[0] == outs[1]


def test_cli_rerun_from_echoed_config(workspace):
    src = workspace / "train_out"
    echo = src / "resolved_config.cfg"
    out = workspace / "echo_rerun"
    rc = main(["train", "--config", str(echo), "--output-dir", str(out)])
    assert rc == 0
    a = (src / "checkpoint.lskp").read_bytes()
    b = (out / "checkpoint.lskp").read_bytes()
    assert a == b
