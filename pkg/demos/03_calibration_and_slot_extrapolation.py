"""From one uplink sounding to the downlink channel of every slot in the sub-frame.

    python3 demos/03_calibration_and_slot_extrapolation.py [--epochs N] [--work DIR]

Reuses the spatial-frequency checkpoint from demos/02 when it exists (same
``--work``), otherwise trains it first. Then it trains the calibration
network and the slot extrapolator, and reports per-slot NMSE and the
sum-rate of SVD precoding against perfect CSI.
"""

import argparse
import time
from pathlib import Path

import numpy as np

from mxlab import pipeline as pl
from mxlab.runconfig import RunConfig
from mxlab.sweeps import acceptance_flags, run_sweep

ap = argparse.ArgumentParser()
ap.add_argument("--epochs", type=int, default=100, help="epochs for each of the two stages")
ap.add_argument("--work", type=Path, default=Path("demo_out"))
args = ap.parse_args()

rc = RunConfig.load(desk_scale=True).replace(**{"train.tudcen_epochs": args.epochs})
train, valid, test = pl.split(rc, pl.make_traces(rc))
key = (rc["eval.r_s"], rc["eval.comb"])

ckpt_dir = args.work / "checkpoints"
sfcen = pl.load_sfcen_models(rc, ckpt_dir, [key], required=False)
if not sfcen:
    print("No spatial-frequency checkpoint found; training one first ...")
    sfcen, _ = pl.train_sfcen_models(rc, train, valid, [key])
    pl.save_model(sfcen[key].store, ckpt_dir / f"{pl.sfcen_tag(*key)}.ckpt")

print("Stage 1: the calibration network learns to turn the uplink estimate of slot 0 into the")
print("downlink of slot 1, absorbing the RF mismatch between the two directions.")
t0 = time.perf_counter()
model, res = pl.train_tudcen_model(rc, train, valid, sfcen, parts=("udccn",))
print(f"  {time.perf_counter() - t0:.0f} s, best validation NMSE {10 * np.log10(res['udccn'].best_valid):+.2f} dB")

print("\nStage 2: with calibration frozen, the causal Transformer learns to roll the downlink")
print("forward one slot at a time, feeding back its own predictions.")
t0 = time.perf_counter()
model, res = pl.train_tudcen_model(rc, train, valid, sfcen, model=model, parts=("dcen",))
print(f"  {time.perf_counter() - t0:.0f} s, best validation NMSE {10 * np.log10(res['dcen'].best_valid):+.2f} dB")
pl.save_model(model.store, ckpt_dir / "tudcen.ckpt")

rep = run_sweep("slot", pl.eval_context(rc, test, sfcen, model))
show = ["kdd_sfcen+nocal+hold", "kdd_sfcen+udccn+hold", "kdd_sfcen+tudcen"]
print("\nHeld-out downlink NMSE per slot (dB):")
print("  slot" + "".join(f"{m:>24}" for m in show))
for j, t in enumerate(rep.slots):
    print(f"  {t:>4}" + "".join(f"{rep.nmse_db[m][0][j]:>24.2f}" for m in show))

perfect = np.mean(rep.sum_rate["perfect"][0])
print("\nSum-rate of SVD precoding, averaged over slots 1..7:")
for m in show + ["perfect"]:
    r = np.mean(rep.sum_rate[m][0])
    print(f"  {m:<24} {r:6.2f} bps/Hz ({100 * r / perfect:5.1f}% of perfect CSI)")
for name, ok, detail in acceptance_flags(rep):
    print(f"\n{name}: {'met' if ok else 'not met'} ({detail})")
