#!/usr/bin/env python3
"""Run both default experiments and print the strategy comparison.

Writes ``out/mlp`` and ``out/lstm`` run directories (curves.csv, final.csv,
manifest.cfg) and then summarizes the final test FER of the three candidate
models against the raw global-model baseline, like ``blocktrain compare``.
"""

from __future__ import annotations

import sys
from pathlib import Path

ROOT = Path(__file__).resolve().parent.parent
sys.path.insert(0, str(ROOT / "src"))

from blocktrain.cli import main


def run() -> int:
    out_root = ROOT / "out"
    dirs = []
    for model in ("mlp", "lstm"):
        config = ROOT / "configs" / f"default_{model}.cfg"
        out_dir = out_root / model
        print(f"running {config.name} -> {out_dir}")
        code = main(["run", "--config", str(config), "--out", str(out_dir)])
        if code != 0:
            return code
        dirs.append(str(out_dir))
    return main(["compare", *dirs])


if __name__ == "__main__":
    raise SystemExit(run())
