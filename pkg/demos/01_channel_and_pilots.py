"""Tour of the channel simulator, the sounding pattern and the classical estimators.

Run with ``python3 demos/01_channel_and_pilots.py``; it takes a few seconds.

The story: a UE moving at 60 km/h sounds a BS array with a sparse pilot
pattern. We look at how quickly the channel changes, what the sparse pattern
saves, and how well interpolation recovers the full channel from it.
"""

import numpy as np

from mxlab.baselines import baseline_estimate, ls_estimate
from mxlab.channel import coherence_time_s, generate_channel_trace, max_doppler_hz
from mxlab.config import ChannelModelConfig, desk_system, make_calibration
from mxlab.metrics import nmse_db
from mxlab.pilots import build_srs_pattern, observe_pilots, overhead

cfg = desk_system()
print(f"System: {cfg.n_tx} BS antennas, {cfg.n_rx} UE antennas, {cfg.n_sc} subcarriers, "
      f"{cfg.n_slot} slots of {cfg.slot_s * 1e6:.0f} us per sub-frame.")

# -- how fast does the channel move? ----------------------------------------
fd = max_doppler_hz(cfg)
print(f"\nAt {cfg.ue_velocity_kmh:g} km/h and {cfg.carrier_hz / 1e9:g} GHz the peak Doppler shift is "
      f"{fd:.0f} Hz, so the coherence time is about {coherence_time_s(cfg) * 1e3:.2f} ms.")
print("A sub-frame lasts 1 ms: the channel seen by the last slot is not the one that was sounded.")

cb, cu = make_calibration(cfg.n_tx, cfg.n_rx)
trace = generate_channel_trace(cfg, ChannelModelConfig(seed=3, calib_bs=cb, calib_ue=cu))
ul = trace.uplink
print(f"\nGenerated uplink {list(ul.shape)} (sub-frame, slot, BS antenna, UE antenna, subcarrier).")
for t in range(1, cfg.n_slot):
    print(f"  reusing slot 0 at slot {t}: NMSE {nmse_db(ul[:, t], ul[:, 0]):+6.2f} dB")

# -- what does the sparse pattern save? --------------------------------------
full = build_srs_pattern(cfg.replace(n_rf=cfg.n_tx), 1, 1)
sparse = build_srs_pattern(cfg, comb=4, r_s=2)
o_full = overhead(cfg.replace(n_rf=cfg.n_tx), full, 1.0)
o_sparse = overhead(cfg, sparse, 1.0)
print(f"\nFull sounding uses {o_full['c_sl']} pilot REs per slot; comb 4 on every other antenna uses "
      f"{o_sparse['c_sl']} ({o_full['c_sl'] // o_sparse['c_sl']}x fewer).")
print(f"Sounded antennas: {sparse.rf_antenna_set.tolist()}; first pilot subcarriers: "
      f"{sparse.pilot_sc_indices[:4].tolist()} ...")

# -- classical recovery ---------------------------------------------------
h0 = ul[:, 0]
print("\nSlot-0 recovery from one noisy sounding (NMSE over all sub-frames):")
for snr in (0, 10, 20):
    obs = observe_pilots(h0, sparse, snr, seed=1)
    coarse = ls_estimate(obs).h_ls
    sub = h0[:, sparse.rf_antenna_set][..., sparse.pilot_sc_indices]
    row = [f"LS at pilots {nmse_db(sub, coarse):+6.2f}"]
    for m in ("linear", "spline", "dft"):
        row.append(f"{m} {nmse_db(h0, baseline_estimate(obs, sparse, m, cfg.n_sc)):+6.2f}")
    print(f"  SNR {snr:>2} dB: " + ", ".join(row) + " dB")
print("LS is accurate where pilots sit; interpolation across the missing antennas and")
print("subcarriers is what limits the full-channel estimate. demos/02 trains a network for that gap.")

# -- reciprocity mismatch --------------------------------------------------
dl = trace.downlink[:, 1]
print(f"\nTransposing the true slot-1 uplink as a downlink estimate gives "
      f"{nmse_db(dl, np.swapaxes(ul[:, 1], -3, -2)):+.2f} dB: the RF chains break reciprocity.")
