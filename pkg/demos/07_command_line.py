"""Driving experiments from JSON configs, as the sfde command does.

Equivalent shell usage:
    sfde picard --config configs/tanh.json --out runs/picard
"""

import json
import tempfile
from pathlib import Path

from sfde.cli import main

configs = Path(__file__).resolve().parents[1] / "configs"
with tempfile.TemporaryDirectory() as tmp:
    for kind, cfg in (("smallness", "smallness"), ("picard", "tanh"), ("kernel-check", "kernel")):
        out = Path(tmp) / kind
        status = main([kind, "--config", str(configs / f"{cfg}.json"), "--out", str(out)])
        report = json.loads((out / "report.json").read_text())
        print(f"  exit {status}, files: {sorted(p.name for p in out.iterdir())}, pass={report['pass']}")
