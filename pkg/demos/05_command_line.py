# %% [markdown]
# The same pipeline from the command line
#
# Each `pnfrec` command writes a run directory holding its artifacts and a
# `manifest.json` with the resolved settings and input digests.  Below, the
# commands are called through `pnfrec.cli.main` so the demo stays in Python;
# in a shell, drop the list syntax: `pnfrec prepare --input ... --threshold 3`.

# %%
import json
import os
import tempfile

from pnfrec.cli import main

out = tempfile.mkdtemp(prefix="pnfrec-demo-")


def pnfrec(*args):
    code = main([str(a) for a in args] + ["--out-dir", out])
    print(f"-> exit code {code}\n")
    return code


pnfrec("generate", "--n-users", 300, "--n-items", 100, "--n-clusters", 5, "--interactions-per-user", 20,
       "--run-name", "data")
pnfrec("prepare", "--input", os.path.join(out, "data", "interactions.tsv"), "--threshold", 3, "--max-len", 15,
       "--run-name", "split")
pnfrec("train", "--input", os.path.join(out, "split"), "--variant", "pnfrec", "--alpha", 0.25, "--beta", 0.1,
       "--d", 16, "--blocks", 1, "--lr", 0.003, "--max-epochs", 5, "--run-name", "model")
pnfrec("evaluate", "--input", os.path.join(out, "split"), "--checkpoint", os.path.join(out, "model", "model.ckpt"),
       "--k", "5,10", "--run-name", "report")

# %% [markdown]
# Flag errors exit with code 2 before any data is read; alpha means nothing
# for the positive-only baseline.

# %%
pnfrec("train", "--input", os.path.join(out, "split"), "--variant", "sasrec_p", "--alpha", 0.3)

# %%
with open(os.path.join(out, "model", "manifest.json")) as fh:
    print(json.dumps(json.load(fh)["config"], indent=1))
