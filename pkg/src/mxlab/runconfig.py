"""Flat ``section.key = value`` run configuration.

A run is described by four sections. ``system.*`` covers the radio system
and the channel simulator, ``model.*`` the two networks, ``train.*`` the
training loops and ``eval.*`` the evaluation sweeps. Values are Python
literals (numbers, booleans, strings, lists); unknown keys and type
mismatches are reported with the file name and line number.

Two presets exist: the full-size defaults and the reduced desk-scale
preset. A config file overrides the preset, and command-line flags
override the file.
"""

from __future__ import annotations

import ast
import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

from .config import ChannelModelConfig, ConfigError, SystemConfig, make_calibration
from .sfcen import SfcenConfig
from .training import TrainConfig
from .tudcen import GenTransformerConfig, SfseConfig, TudcenConfig, UdccnConfig

FULL = {
    "system.n_tx": 32, "system.n_rx": 4, "system.n_rb": 52, "system.numerology": 3,
    "system.n_subframes": 100, "system.carrier_hz": 28e9, "system.scs_hz": 120e3,
    "system.srs_period_ms": 1.0, "system.ue_velocity_kmh": 60.0,
    "system.n_clusters": 5, "system.rays_per_cluster": 4, "system.delay_spread_s": 100e-9,
    "system.bs_sector_deg": 20.0, "system.calib_gain": 1.25, "system.calib_phase": 2.0,
    "system.calib_ripple": 0.05, "system.calib_seed": 7, "system.ideal_reciprocity": False,
    "system.n_traces": 100, "system.trace_seed": 0,

    "model.d_sr": 512, "model.d_fr": 512, "model.n_heads": 4, "model.upscale_s": 2,
    "model.upscale_f": 2, "model.p_attn": 0.5, "model.p_seg": 0.5,
    "model.udccn_kernel": 3, "model.udccn_feat": 32,
    "model.n1": 4, "model.n2": 12, "model.d_rep": 512, "model.gen_heads": 4,
    "model.n_layers": 4, "model.d_ff": 2048, "model.p_gen_attn": 0.5, "model.p_ff": 0.5,

    "train.split": [90, 5, 5], "train.seed": 0, "train.snr_db": 5.0, "train.snr_random": False,
    "train.augment": True, "train.patience": 20, "train.lr_floor": 0.1,
    "train.sfcen_batch": 64, "train.sfcen_lr": 6e-5, "train.sfcen_epochs": 200,
    "train.sfcen_patterns": [],
    "train.tudcen_batch": 100, "train.tudcen_lr": 6e-5, "train.tudcen_epochs": 200,
    "train.dcen_mode": "rollout", "train.joint": False, "train.udccn_input": "sfcen",

    "eval.r_s": 2, "eval.comb": 4, "eval.snr_db": 20.0, "eval.horizon_ms": 1.0, "eval.seed": 0,
}

DESK = {
    "system.n_tx": 8, "system.n_rx": 2, "system.n_rb": 8, "system.n_subframes": 20,
    "system.n_traces": 20,
    "model.d_sr": 64, "model.d_fr": 64, "model.p_attn": 0.1, "model.p_seg": 0.1,
    "model.udccn_feat": 16, "model.n2": 8, "model.d_rep": 64, "model.n_layers": 2,
    "model.d_ff": 256, "model.p_gen_attn": 0.1, "model.p_ff": 0.1,
    "train.split": [14, 2, 4], "train.snr_db": 20.0, "train.patience": 40,
    "train.sfcen_batch": 32, "train.sfcen_lr": 1e-3, "train.sfcen_epochs": 150,
    "train.tudcen_batch": 32, "train.tudcen_lr": 1e-3, "train.tudcen_epochs": 100,
}


def _parse_value(text: str):
    try:
        return ast.literal_eval(text)
    except (ValueError, SyntaxError):
        return text            # bare word, e.g. rollout


def _coerce(key, value, default, where):
    if isinstance(default, bool):
        if isinstance(value, bool):
            return value
    elif isinstance(default, float):
        if isinstance(value, (int, float)) and not isinstance(value, bool):
            return float(value)
    elif isinstance(default, int):
        if isinstance(value, int) and not isinstance(value, bool):
            return value
    elif isinstance(default, list):
        if isinstance(value, (list, tuple)):
            return list(value)
    elif isinstance(default, str):
        if isinstance(value, str):
            return value
    raise ConfigError(f"{where}: {key} expects {type(default).__name__}, got {value!r}")


def parse_config_text(text: str, source: str = "<config>") -> dict:
    """``key = value`` lines to a dict; blank lines and ``#`` comments are skipped."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip() if not raw.lstrip().startswith("#") else ""
        if not line:
            continue
        key, sep, value = line.partition("=")
        where = f"{source}:{lineno}"
        key = key.strip()
        if not sep or not key or not value.strip():
            raise ConfigError(f"{where}: expected 'section.key = value', got {raw.strip()!r}")
        if key not in FULL:
            raise ConfigError(f"{where}: unknown key {key!r}")
        if key in out:
            raise ConfigError(f"{where}: duplicate key {key!r}")
        out[key] = _coerce(key, _parse_value(value.strip()), FULL[key], where)
    return out


@dataclass
class RunConfig:
    values: dict = field(default_factory=lambda: dict(FULL))

    @classmethod
    def load(cls, path=None, desk_scale=False, seed=None) -> "RunConfig":
        values = dict(FULL)
        if desk_scale:
            values.update(DESK)
        if path is not None:
            p = Path(path)
            if not p.is_file():
                raise FileNotFoundError(f"config file not found: {p}")
            values.update(parse_config_text(p.read_text(), str(p)))
        if seed is not None:
            for k in ("train.seed", "eval.seed", "system.trace_seed"):
                values[k] = int(seed)
        rc = cls(values)
        rc.validate()
        return rc

    def __getitem__(self, key):
        return self.values[key]

    # -- derived objects -------------------------------------------------

    def system(self) -> SystemConfig:
        v = self.values
        n_tx = v["system.n_tx"]
        r_s = v["eval.r_s"]
        if n_tx % r_s:
            raise ConfigError(f"eval.r_s={r_s} must divide system.n_tx={n_tx}")
        return SystemConfig(n_tx=n_tx, n_rx=v["system.n_rx"], n_rf=n_tx // r_s, n_rb=v["system.n_rb"],
                            n_sc=12 * v["system.n_rb"], carrier_hz=v["system.carrier_hz"],
                            scs_hz=v["system.scs_hz"], numerology=v["system.numerology"],
                            n_slot=2 ** v["system.numerology"], n_subframes=v["system.n_subframes"],
                            srs_period_ms=v["system.srs_period_ms"],
                            ue_velocity_kmh=v["system.ue_velocity_kmh"], snr_db=v["eval.snr_db"])

    def channel(self) -> ChannelModelConfig:
        v = self.values
        cb = cu = None
        if not v["system.ideal_reciprocity"]:
            cb, cu = make_calibration(v["system.n_tx"], v["system.n_rx"], seed=v["system.calib_seed"],
                                      common_gain=v["system.calib_gain"],
                                      common_phase=v["system.calib_phase"],
                                      ripple=v["system.calib_ripple"])
        return ChannelModelConfig(n_clusters=v["system.n_clusters"],
                                  rays_per_cluster=v["system.rays_per_cluster"],
                                  delay_spread_s=v["system.delay_spread_s"],
                                  bs_sector_deg=v["system.bs_sector_deg"], calib_bs=cb, calib_ue=cu)

    def sfcen_patterns(self) -> list[tuple[int, int]]:
        """``(r_s, comb)`` pairs to train; the evaluation pattern is always included."""
        main = (self["eval.r_s"], self["eval.comb"])
        extra = [tuple(int(x) for x in p) for p in self["train.sfcen_patterns"]]
        return [main] + [p for p in extra if p != main]

    def sfcen(self, r_s: int, comb: int) -> SfcenConfig:
        v = self.values
        return SfcenConfig(n_tx=v["system.n_tx"], n_rx=v["system.n_rx"], n_sc=12 * v["system.n_rb"],
                           ratio_s=r_s, ratio_f=comb, upscale_s=v["model.upscale_s"],
                           upscale_f=v["model.upscale_f"], d_sr=v["model.d_sr"], d_fr=v["model.d_fr"],
                           n_heads=v["model.n_heads"], p_attn=v["model.p_attn"], p_seg=v["model.p_seg"])

    def tudcen(self) -> TudcenConfig:
        v = self.values
        n_slot = 2 ** v["system.numerology"]
        return TudcenConfig(
            UdccnConfig(v["model.udccn_kernel"], v["model.udccn_feat"]),
            SfseConfig(v["system.n_tx"], v["system.n_rx"], 12 * v["system.n_rb"], v["model.n1"],
                       v["model.n2"], v["model.d_rep"]),
            GenTransformerConfig(v["model.n_layers"], v["model.d_rep"], v["model.gen_heads"],
                                 v["model.d_ff"], v["model.p_gen_attn"], v["model.p_ff"], n_slot - 1))

    def train(self, part: str) -> TrainConfig:
        v = self.values
        n_slot = 2 ** v["system.numerology"]
        return TrainConfig(batch=v[f"train.{part}_batch"], lr0=v[f"train.{part}_lr"],
                           epochs=v[f"train.{part}_epochs"], patience=v["train.patience"],
                           seed=v["train.seed"], window_len=n_slot, stride=n_slot,
                           split=tuple(v["train.split"]), snr_db=v["train.snr_db"],
                           snr_random=v["train.snr_random"], augment=v["train.augment"],
                           lr_floor=v["train.lr_floor"], dcen_mode=v["train.dcen_mode"],
                           joint=v["train.joint"])

    def validate(self):
        """Build every derived object once so invariant violations surface early."""
        sysc = self.system()
        self.channel()
        if self["eval.comb"] not in (1, 2, 4, 8, 16):
            raise ConfigError(f"eval.comb must be one of 1, 2, 4, 8, 16, got {self['eval.comb']}")
        for r_s, comb in self.sfcen_patterns():
            self.sfcen(r_s, comb)
        self.tudcen()
        self.train("sfcen")
        self.train("tudcen")
        split = self["train.split"]
        if sum(split) > self["system.n_traces"]:
            raise ConfigError(f"train.split {split} needs {sum(split)} traces, "
                              f"system.n_traces={self['system.n_traces']}")
        if split[2] < 1:
            raise ConfigError("train.split needs at least one test trace")
        if self["train.udccn_input"] not in ("sfcen", "truth"):
            raise ConfigError("train.udccn_input must be 'sfcen' or 'truth'")
        return sysc

    def as_manifest(self) -> dict:
        return dict(sorted(self.values.items()))

    def replace(self, **changes) -> "RunConfig":
        values = dict(self.values)
        for k, val in changes.items():
            values[k.replace("__", ".")] = val
        rc = dataclasses.replace(self, values=values)
        rc.validate()
        return rc
