"""
Ablations and sweeps from the command line
==========================================

Drives the ``dreamprvr`` subcommands in-process: generate a corpus, compare
the full model with two ablations, sweep the number of diffusion steps and
plot the result.  Uses the small sweep configuration shipped in ``configs/``.

Run: ``python demos/05_ablation_and_sweep.py [out_dir]``
"""

# %%
import sys
from pathlib import Path

from dreamprvr.cli import main

root = Path(__file__).resolve().parent.parent
out = Path(sys.argv[1] if len(sys.argv) > 1 else "demo_out")
out.mkdir(parents=True, exist_ok=True)
config = str(root / "configs" / "sweep.json")


def run(*argv):
    print("$ dreamprvr", " ".join(argv))
    code = main(list(argv))
    if code:
        raise SystemExit(code)


# %%
run("gen-data", "--spec", str(root / "configs" / "sweep_data.json"), "--out", str(out / "data"))

# %% Same data and seeds for every variant; the text table holds medians over seeds.
run("ablate", "--config", config, "--data", str(out / "data"), "--variants", "full,no-registers,sim-only",
    "--seeds", "0,1", "--out", str(out / "ablation.csv"))

# %% One row per step count: recall plus median training time per epoch.
run("sweep", "--config", config, "--data", str(out / "data"), "--axis", "timesteps", "--values", "2,4,10",
    "--out", str(out / "timesteps.csv"))
print((out / "timesteps.csv").read_text())

# %% An image, and gnuplot-ready columns for the same CSV.
run("plot", "--csv", str(out / "timesteps.csv"), "--out", str(out / "timesteps.png"))
run("plot", "--csv", str(out / "timesteps.csv"), "--out", str(out / "timesteps.dat"))
