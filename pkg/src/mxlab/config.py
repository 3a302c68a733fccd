"""System and channel-model configuration objects.

Two presets are provided: :func:`table1_system` reproduces the full-size
system parameters and :func:`desk_system` the reduced-dimension preset used
for CPU experiments.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field

import numpy as np

SPEED_OF_LIGHT = 2.998e8
SUBFRAME_S = 1e-3


class ConfigError(ValueError):
    """Raised when a configuration violates one of its invariants."""


@dataclass(frozen=True)
class SystemConfig:
    n_tx: int = 32
    n_rx: int = 4
    n_rf: int = 16
    n_rb: int = 52
    n_sc: int = 624
    carrier_hz: float = 28e9
    scs_hz: float = 120e3
    numerology: int = 3
    n_slot: int = 8
    n_subframes: int = 100
    srs_period_ms: float = 1.0
    ue_velocity_kmh: float = 60.0
    snr_db: float = 5.0

    def __post_init__(self):
        counts = ("n_tx", "n_rx", "n_rf", "n_rb", "n_sc", "n_slot", "n_subframes")
        for name in counts:
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"system.{name} must be >= 1, got {getattr(self, name)}")
        if self.numerology < 0:
            raise ConfigError(f"system.numerology must be >= 0, got {self.numerology}")
        if self.n_slot != 2**self.numerology:
            raise ConfigError(
                f"system.n_slot={self.n_slot} must equal 2**numerology={2 ** self.numerology}")
        if self.n_sc != 12 * self.n_rb:
            raise ConfigError(f"system.n_sc={self.n_sc} must equal 12*n_rb={12 * self.n_rb}")
        if self.n_rf > self.n_tx or self.n_tx % self.n_rf:
            raise ConfigError(f"system.n_rf={self.n_rf} must divide n_tx={self.n_tx}")
        if self.carrier_hz <= 0 or self.scs_hz <= 0:
            raise ConfigError("system.carrier_hz and system.scs_hz must be positive")
        if self.srs_period_ms <= 0:
            raise ConfigError("system.srs_period_ms must be positive")
        if self.ue_velocity_kmh < 0:
            raise ConfigError("system.ue_velocity_kmh must be >= 0")

    @property
    def slot_s(self) -> float:
        return SUBFRAME_S / self.n_slot

    @property
    def spatial_ratio(self) -> int:
        return self.n_tx // self.n_rf

    def replace(self, **changes) -> "SystemConfig":
        """Copy with ``changes``; ``n_rb`` and ``numerology`` drag their dependents."""
        if "n_rb" in changes and "n_sc" not in changes:
            changes["n_sc"] = 12 * changes["n_rb"]
        if "numerology" in changes and "n_slot" not in changes:
            changes["n_slot"] = 2 ** changes["numerology"]
        return dataclasses.replace(self, **changes)


def table1_system(**changes) -> SystemConfig:
    """Full-size system: 32x4 MIMO, 52 RBs, mu=3, 100 sub-frames."""
    return SystemConfig().replace(**changes) if changes else SystemConfig()


def desk_system(**changes) -> SystemConfig:
    """Reduced preset: N_T=8, N_R=2, N_RB=8 (N_c=96), 20 sub-frames per trace."""
    cfg = SystemConfig(n_tx=8, n_rx=2, n_rf=4, n_rb=8, n_sc=96, n_subframes=20,
                       snr_db=20.0)
    return cfg.replace(**changes) if changes else cfg


def make_calibration(n_tx: int, n_rx: int, seed: int = 7, common_gain: float = 1.25,
                     common_phase: float = 2.0, ripple: float = 0.05):
    """Draw per-antenna transceiver calibration coefficients.

    Each coefficient is a shared complex factor times a small random ripple,
    so the array-wide mismatch dominates the antenna-to-antenna spread.

    Returns
    -------
    (calib_bs, calib_ue) : tuple of complex ndarrays of length n_tx and n_rx
    """
    rng = np.random.default_rng(seed)
    # split the common factor between both ends
    half = math.sqrt(common_gain) * np.exp(0.5j * common_phase)

    def side(n):
        amp = 1.0 + ripple * rng.uniform(-1.0, 1.0, n)
        phase = ripple * rng.uniform(-np.pi, np.pi, n)
        return half * amp * np.exp(1j * phase)

    return side(n_tx), side(n_rx)


@dataclass(frozen=True)
class ChannelModelConfig:
    """Parametric clustered-multipath channel description.

    Angles are in degrees. ``calib_bs``/``calib_ue`` default to ideal
    reciprocity (all ones) when left as ``None``.
    """

    n_clusters: int = 5
    rays_per_cluster: int = 4
    delay_spread_s: float = 100e-9
    seed: int = 0
    calib_bs: np.ndarray | None = field(default=None, compare=False)
    calib_ue: np.ndarray | None = field(default=None, compare=False)
    bs_sector_deg: float = 20.0
    bs_ray_spread_deg: float = 2.0
    ue_ray_spread_deg: float = 10.0
    cluster_power_sigma_db: float = 3.0
    intra_cluster_delay_s: float = 5e-9

    def __post_init__(self):
        if self.n_clusters < 1 or self.rays_per_cluster < 1:
            raise ConfigError("model.n_clusters and model.rays_per_cluster must be >= 1")
        if self.delay_spread_s < 0:
            raise ConfigError("model.delay_spread_s must be >= 0")
        for name in ("calib_bs", "calib_ue"):
            c = getattr(self, name)
            if c is None:
                continue
            c = np.asarray(c, dtype=complex)
            mag = np.abs(c)
            if np.any(mag < 0.5) or np.any(mag > 2.0):
                raise ConfigError(f"model.{name} magnitudes must lie in [0.5, 2.0]")
            object.__setattr__(self, name, c)

    @property
    def max_delay_s(self) -> float:
        # cluster delays are truncated at 4 RMS spreads
        return 4.0 * self.delay_spread_s + self.intra_cluster_delay_s * (self.delay_spread_s > 0)

    def calibration(self, n_tx: int, n_rx: int):
        bs = np.ones(n_tx, complex) if self.calib_bs is None else self.calib_bs
        ue = np.ones(n_rx, complex) if self.calib_ue is None else self.calib_ue
        if bs.shape != (n_tx,) or ue.shape != (n_rx,):
            raise ConfigError(
                f"calibration lengths {bs.shape[0]}/{ue.shape[0]} do not match n_tx={n_tx}, n_rx={n_rx}")
        return bs, ue

    def replace(self, **changes) -> "ChannelModelConfig":
        return dataclasses.replace(self, **changes)
