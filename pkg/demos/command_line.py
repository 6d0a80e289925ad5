"""
Reproducible runs from a config file
====================================

The ``rwre`` command ties generation, simulation and analysis together;
this script drives it in-process.
"""

import json
import pathlib
import tempfile

from rwre_lab.cli import main

out = pathlib.Path(tempfile.mkdtemp())
config = {
    "environment": {"kind": "simple-symmetric", "dims": 2, "seed": 1},
    "mode": "annealed",
    "n_walks": 500,
    "n_steps": 256,
    "analyses": ["covariance", "clt", "recurrence", "schmidt", "cylinder-oracle"],
    "output_dir": str(out),
}
path = out / "config.json"
path.write_text(json.dumps(config))

status = main(["run", "--config", str(path), "--workers", "1"])
print("exit status", status)
print(sorted(p.name for p in out.iterdir()))
print((out / "summary.json").read_text())
