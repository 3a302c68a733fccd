"""End-to-end orchestration shared by the CLI, the demos and the acceptance suite.

In-memory helpers build datasets and train models from a
:class:`~mxlab.runconfig.RunConfig`. The on-disk helpers persist and
reload them under one output directory::

    out/
      gen_manifest.txt          config, trace file list and sha256 sums
      traces/trace_0000_ul.mxl  uplink   [N_sf, N_slot, N_T, N_R, N_c]
      traces/trace_0000_dl.mxl  downlink [N_sf, N_slot, N_R, N_T, N_c]
      checkpoints/*.ckpt        sfcen_rs<R_s>_c<R_f>.ckpt, tudcen.ckpt
      logs/*_loss.csv           per-epoch train/valid losses
      reports/eval_<kind>.csv   sweep results (+ .svg plots)
"""

from __future__ import annotations

import logging
import time
from pathlib import Path

from . import __version__
from . import autodiff as ad
from .channel import ChannelTrace, iter_subframes, max_doppler_hz, trace_dims
from .container import (StreamWriter, file_sha256, load_tensors, read_array, read_manifest,
                        save_tensors, write_manifest)
from .runconfig import RunConfig
from .sfcen import KddSfcen
from .sweeps import EvalContext
from .training import (TrainResult, build_traces, split_windows, train_dcen, train_sfcen,
                       train_udccn)
from .tudcen import Tudcen

log = logging.getLogger(__name__)


class DatasetError(RuntimeError):
    """Missing, corrupted or mismatched dataset or checkpoint files."""


def sfcen_tag(r_s: int, comb: int) -> str:
    return f"sfcen_rs{r_s}_c{comb}"


# ---------------------------------------------------------------------------
# in memory


def make_traces(rc: RunConfig) -> list[ChannelTrace]:
    return build_traces(rc.system(), rc.channel(), rc["system.n_traces"], seed=rc["system.trace_seed"])


def split(rc: RunConfig, traces):
    return split_windows(traces, rc.train("sfcen"))


def train_sfcen_models(rc: RunConfig, train, valid, patterns=None):
    """``{(r_s, comb): KddSfcen}`` and ``{(r_s, comb): TrainResult}``."""
    models, results = {}, {}
    sysc = rc.system()
    for r_s, comb in patterns or rc.sfcen_patterns():
        pat = _pattern(sysc, r_s, comb)
        net = KddSfcen(rc.sfcen(r_s, comb), seed=rc["train.seed"])
        t0 = time.perf_counter()
        results[(r_s, comb)] = train_sfcen(net, train, valid, pat, rc.train("sfcen"))
        log.info("%s trained in %.1f s", sfcen_tag(r_s, comb), time.perf_counter() - t0)
        models[(r_s, comb)] = net
    return models, results


def _pattern(sysc, r_s, comb):
    from .pilots import build_srs_pattern
    return build_srs_pattern(sysc.replace(n_rf=sysc.n_tx // r_s), comb, r_s)


def _udccn_source(rc: RunConfig, sfcen_models):
    if rc["train.udccn_input"] == "truth":
        return None
    key = (rc["eval.r_s"], rc["eval.comb"])
    if key not in sfcen_models:
        raise DatasetError(f"UDCCN input is the KDD-SFCEN estimate but {sfcen_tag(*key)} is not trained")
    return sfcen_models[key]


def train_tudcen_model(rc: RunConfig, train, valid, sfcen_models, model: Tudcen | None = None,
                       parts=("udccn", "dcen")):
    model = model or Tudcen(rc.tudcen(), seed=rc["train.seed"])
    pat = _pattern(rc.system(), rc["eval.r_s"], rc["eval.comb"])
    src = _udccn_source(rc, sfcen_models)
    tc = rc.train("tudcen")
    results = {}
    if "udccn" in parts:
        results["udccn"] = train_udccn(model, train, valid, pat, tc, src)
    if "dcen" in parts:
        results["dcen"] = train_dcen(model, train, valid, pat, tc, src)
    return model, results


def eval_context(rc: RunConfig, test, sfcen_models=None, tudcen=None) -> EvalContext:
    n_tr, n_va, n_te = rc["train.split"]
    return EvalContext(system=rc.system(), channel=rc.channel(), test=test, comb=rc["eval.comb"],
                       r_s=rc["eval.r_s"], snr_db=rc["eval.snr_db"], seed=rc["eval.seed"],
                       trace_seed=rc["system.trace_seed"] + n_tr + n_va, n_traces=n_te,
                       horizon_ms=rc["eval.horizon_ms"], sfcen=dict(sfcen_models or {}),
                       tudcen=tudcen)


# ---------------------------------------------------------------------------
# on disk


def _system_keys(values: dict) -> dict:
    return {k: v for k, v in values.items() if k.startswith("system.")}


def write_traces(rc: RunConfig, out_dir) -> Path:
    """Stream every trace to disk and write the generation manifest."""
    out = Path(out_dir)
    (out / "traces").mkdir(parents=True, exist_ok=True)
    sysc, model = rc.system(), rc.channel()
    files = {}
    for i in range(rc["system.n_traces"]):
        m = model.replace(seed=rc["system.trace_seed"] + i)
        names = (f"traces/trace_{i:04d}_ul.mxl", f"traces/trace_{i:04d}_dl.mxl")
        dims_ul = trace_dims(sysc)
        dims_dl = dims_ul[:2] + [sysc.n_rx, sysc.n_tx, sysc.n_sc]
        with StreamWriter(out / names[0], dims_ul) as wu, StreamWriter(out / names[1], dims_dl) as wd:
            for ul, dl in iter_subframes(sysc, m):
                wu.append(ul)
                wd.append(dl)
        for n in names:
            files[f"file.{n}"] = file_sha256(out / n)
    manifest = {"tool.version": __version__, "created": time.strftime("%Y-%m-%dT%H:%M:%S"),
                **rc.as_manifest(), **files}
    path = out / "gen_manifest.txt"
    write_manifest(path, manifest)
    return path


def read_traces(rc: RunConfig, out_dir) -> list[ChannelTrace]:
    """Load and verify the traces written by :func:`write_traces`."""
    out = Path(out_dir)
    mpath = out / "gen_manifest.txt"
    if not mpath.is_file():
        raise DatasetError(f"no dataset manifest at {mpath}; run 'mxlab gen' first")
    man = read_manifest(mpath)
    want = _system_keys(rc.values)
    have = _system_keys(man)
    diff = [k for k in want if k in have and have[k] != want[k]]
    if diff:
        k = diff[0]
        raise DatasetError(f"dataset was generated with {k} = {have[k]!r}, config has {want[k]!r}")
    traces = []
    sysc = rc.system()
    for i in range(rc["system.n_traces"]):
        arrays = []
        for side in ("ul", "dl"):
            name = f"traces/trace_{i:04d}_{side}.mxl"
            path = out / name
            if not path.is_file():
                raise DatasetError(f"missing trace file {path}")
            if man.get(f"file.{name}") != file_sha256(path):
                raise DatasetError(f"checksum mismatch for {path}")
            arrays.append(read_array(path))
        traces.append(ChannelTrace(arrays[0], arrays[1], max_doppler_hz(sysc)))
    return traces


def save_model(store: ad.ParamStore, path):
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    save_tensors(path, store.state_dict())


def _load_into(store: ad.ParamStore, path):
    if not Path(path).is_file():
        raise DatasetError(f"missing checkpoint {path}")
    store.load_state_dict(load_tensors(path))


def load_sfcen_models(rc: RunConfig, ckpt_dir, patterns=None, required=True) -> dict:
    models = {}
    for r_s, comb in patterns or rc.sfcen_patterns():
        path = Path(ckpt_dir) / f"{sfcen_tag(r_s, comb)}.ckpt"
        if not path.is_file():
            if required:
                raise DatasetError(f"missing checkpoint {path}; run 'mxlab train sfcen' first")
            continue
        net = KddSfcen(rc.sfcen(r_s, comb))
        _load_into(net.store, path)
        models[(r_s, comb)] = net
    return models


def load_tudcen(rc: RunConfig, ckpt_dir, required=True) -> Tudcen | None:
    path = Path(ckpt_dir) / "tudcen.ckpt"
    if not path.is_file():
        if required:
            raise DatasetError(f"missing checkpoint {path}; run 'mxlab train udccn' first")
        return None
    model = Tudcen(rc.tudcen())
    _load_into(model.store, path)
    return model


def write_loss_log(res: TrainResult, path):
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    res.write_csv(path)

