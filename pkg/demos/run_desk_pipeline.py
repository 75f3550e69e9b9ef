"""Synthesize a planted population, run every stage and print the headline numbers.

    python demos/run_desk_pipeline.py [workdir]

Takes about two minutes on one core. Set signal_strength to 0 in
desk_census.json to see the AUC collapse to chance.
"""
import json
import os
import shutil
import sys
import time

from sesinfer import cli

here = os.path.dirname(os.path.abspath(__file__))
work = os.path.abspath(sys.argv[1] if len(sys.argv) > 1 else "desk_run")
os.makedirs(work, exist_ok=True)
cfg = os.path.join(work, "cfg.json")
shutil.copy(os.path.join(here, "desk_census.json"), cfg)

stages = ["synth", "preprocess", "homes", "census-join", "embed", "topics", "features",
          "train", "evaluate", "report"]
for s in stages:
    t0 = time.perf_counter()
    code = cli.main([s, "--config", cfg, "-q"])
    print(f"{s:12s} exit={code} {time.perf_counter() - t0:6.1f} s")
    if code:
        sys.exit(code)

out = os.path.join(work, "out")
with open(os.path.join(out, "cv_gbt.json")) as fh:
    cv = json.loads("".join(ln for ln in fh if not ln.startswith("#")))
print(f"\nouter AUC {cv['auc_mean']:.3f} +- {cv['auc_std']:.3f}")
print(open(os.path.join(out, "report", "table2.txt")).read())
