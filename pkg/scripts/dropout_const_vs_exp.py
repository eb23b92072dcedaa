#!/usr/bin/env python3
"""Train twice with equal-mean layer dropout (exponential ramp vs constant)
and write both loss curves to CSV.

Usage: python scripts/dropout_const_vs_exp.py [--out dropout_curves.csv] [--steps 400]
"""

import argparse
from pathlib import Path

import numpy as np

from selfspec.corpus import synthetic_text
from selfspec.model import ModelConfig
from selfspec.tokenizer import ByteTokenizer
from selfspec.trainer import TrainConfig, dropout_curve_comparison


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", type=Path, default=Path("dropout_curves.csv"))
    ap.add_argument("--steps", type=int, default=400)
    ap.add_argument("--p-max", type=float, default=0.2)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    tok = ByteTokenizer()
    tokens = np.array(tok.encode_bytes(synthetic_text(400_000, seed=1)), dtype=np.int64)
    model_cfg = ModelConfig(n_layers=8, dim=64, n_heads=4, vocab=257,
                            max_context=128, ffn_hidden=172)
    train_cfg = TrainConfig(steps=args.steps, batch_size=4, context_len=64,
                            learning_rate=1e-3, seed=args.seed, p_max=args.p_max,
                            e_scale=0.0, ee_curriculum="all", eval_every=0)
    csv = dropout_curve_comparison(tokens, model_cfg, train_cfg)
    args.out.write_text(csv)
    last = csv.strip().splitlines()[-1].split(",")
    print(f"wrote {args.out}; final losses exp={last[1]} const={last[2]}")


if __name__ == "__main__":
    main()
