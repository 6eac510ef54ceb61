#!/usr/bin/env python3
"""Multi-seed study of the final-model strategies on the default experiment.

For each seed and model family this runs the default config, then reports
per strategy the final test FER and the test-FER curve fluctuation
(standard deviation of checkpoint-to-checkpoint changes). The two summary
counts at the bottom are the ones the acceptance suite checks:

* ema_beats_bmuf: seeds where the exponential shadow's final test FER is at
  most the raw global model's
* ema_steadier_than_ma: seeds where the exponential shadow's curve
  fluctuates less than the running mean's

Usage: python scripts/seed_sweep.py [--seeds N] [--models mlp,lstm]
       [--set key=value ...]
"""

from __future__ import annotations

import argparse
import sys
import time
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from blocktrain.experiment import ExperimentConfig, run_experiment


def curve_fluctuation(records, strategy):
    fers = [r.fer for r in records if r.strategy == strategy]
    return float(np.std(np.diff(fers)))


def run_study(models, seeds, overrides):
    for model in models:
        config = ExperimentConfig(**{**ExperimentConfig().__dict__, **overrides, "model": model})
        ema_beats_bmuf = 0
        ema_steadier = 0
        print(f"== {model} ==")
        print("seed  bmuf_fer  ma_fer  ema_fer  ma_fluct  ema_fluct  secs")
        for seed in seeds:
            start = time.perf_counter()
            result = run_experiment(config.with_seed(seed), threaded=False)
            elapsed = time.perf_counter() - start
            final = result.final_test_fer
            fl_ma = curve_fluctuation(result.test_records, "ma")
            fl_ema = curve_fluctuation(result.test_records, "ema")
            ema_beats_bmuf += final["ema"] <= final["bmuf"]
            ema_steadier += fl_ema < fl_ma
            print(
                f"{seed:<4d}  {final['bmuf']:.4f}    {final['ma']:.4f}  "
                f"{final['ema']:.4f}   {fl_ma:.5f}   {fl_ema:.5f}    {elapsed:.1f}"
            )
        n = len(seeds)
        print(f"ema_beats_bmuf: {ema_beats_bmuf}/{n}   ema_steadier_than_ma: {ema_steadier}/{n}")
        print()


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--seeds", type=int, default=10)
    parser.add_argument("--models", default="mlp,lstm")
    parser.add_argument(
        "--set",
        action="append",
        default=[],
        metavar="key=value",
        help="override a config field (repeatable)",
    )
    args = parser.parse_args(argv)
    overrides = {}
    base = ExperimentConfig()
    for item in args.set:
        key, _, raw = item.partition("=")
        current = getattr(base, key)
        if isinstance(current, tuple):
            overrides[key] = tuple(int(p) for p in raw.split(",") if p)
        else:
            overrides[key] = type(current)(raw)
    run_study(args.models.split(","), list(range(args.seeds)), overrides)


if __name__ == "__main__":
    main()
