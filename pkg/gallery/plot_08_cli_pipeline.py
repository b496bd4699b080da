"""
The command-line pipeline
=========================

synth, fit, elasticities, welfare, optimize and report, driven through
``easi_lab.cli.main`` in a temporary directory.
"""

# %%
import json
import tempfile
from pathlib import Path

from easi_lab.cli import main

d = Path(tempfile.mkdtemp())
steps = [
    ["synth", "--n", "4000", "--seed", "7", "--out", d / "model.csv", "--truth", d / "truth.json"],
    ["fit", "--input", d / "model.csv", "--R", "2", "--out", d / "params.json", "--diagnostics", d / "diag.json"],
    ["elasticities", "--params", d / "params.json", "--out", d / "elasticities.json"],
    ["welfare", "--scenario", "builtin:quantity-table", "--csv", d / "welfare.csv", "--out", d / "welfare.json"],
    ["optimize", "--scenario", "builtin:colombia", "--out", d / "alt.json", "--report", d / "compare.csv", "--manifest", d / "manifest.json"],
    ["report", "--params", d / "params.json", "--scenario", "builtin:colombia", "--alternative", d / "alt.json", "--out-dir", d / "report"],
]
for argv in steps:
    code = main([str(a) for a in argv])
    assert code == 0, argv

print(sorted(p.name for p in (d / "report").iterdir()))
print(json.dumps(json.loads((d / "manifest.json").read_text())["outputs"], indent=1))
