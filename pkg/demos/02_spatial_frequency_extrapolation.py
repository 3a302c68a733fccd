"""Train the spatial-frequency network at desk scale and compare it with interpolation.

    python3 demos/02_spatial_frequency_extrapolation.py [--epochs N] [--work DIR]

With the default 150 epochs this takes a couple of minutes on one core;
``--epochs 10`` gives a quick (and much weaker) run. The trained weights are
saved under ``--work`` so demos/03 can reuse them.
"""

import argparse
import time
from pathlib import Path

import numpy as np

from mxlab import pipeline as pl
from mxlab.runconfig import RunConfig
from mxlab.sweeps import acceptance_flags, run_sweep

ap = argparse.ArgumentParser()
ap.add_argument("--epochs", type=int, default=150)
ap.add_argument("--work", type=Path, default=Path("demo_out"))
args = ap.parse_args()

rc = RunConfig.load(desk_scale=True).replace(**{"train.sfcen_epochs": args.epochs})
print("Simulating", rc["system.n_traces"], "channel instances and splitting them",
      tuple(rc["train.split"]), "into train/valid/test ...")
train, valid, test = pl.split(rc, pl.make_traces(rc))
print(f"  {len(train)} training windows, {len(valid)} validation, {len(test)} test.")

key = (rc["eval.r_s"], rc["eval.comb"])
print(f"\nTraining the network for R_s={key[0]} (every other antenna) and R_f={key[1]} "
      f"(every fourth subcarrier) at {rc['train.snr_db']:g} dB ...")
t0 = time.perf_counter()
models, results = pl.train_sfcen_models(rc, train, valid, [key])
res = results[key]
print(f"  done in {time.perf_counter() - t0:.0f} s; best validation loss {res.best_valid:.3e} "
      f"at epoch {res.best_epoch} of {len(res.log)}.")
curve = [r["valid_loss"] for r in res.log]
marks = np.unique(np.linspace(0, len(curve) - 1, 6).astype(int))
print("  validation loss: " + ", ".join(f"ep{i} {curve[i]:.2e}" for i in marks))

ckpt = args.work / "checkpoints" / f"{pl.sfcen_tag(*key)}.ckpt"
pl.save_model(models[key].store, ckpt)
print(f"  saved {ckpt}")

print("\nHeld-out NMSE against SNR (dB):")
rep = run_sweep("snr", pl.eval_context(rc, test, models))
methods = sorted(rep.nmse_db)
print("  SNR  " + "".join(f"{m:>12}" for m in methods))
for i, snr in enumerate(rep.axes):
    print(f"  {snr:>3}  " + "".join(f"{rep.nmse_db[m][i][0]:>12.2f}" for m in methods))
for name, ok, detail in acceptance_flags(rep):
    print(f"\n{name}: {'met' if ok else 'not met'} ({detail})")
print("\nThe network learns the angular and delay structure that the clustered channel leaves in")
print("the pilots, which plain interpolation along one axis at a time cannot exploit.")
