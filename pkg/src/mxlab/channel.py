"""Time-varying clustered-multipath MIMO-OFDM channel traces.

Each ray carries a complex gain, a delay, a BS departure angle, a UE arrival
angle and a Doppler shift ``f_d * cos(ue_angle)``. The channel is sampled once
per slot.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import SPEED_OF_LIGHT, ChannelModelConfig, ConfigError, SystemConfig

SPECIAL = "S"
DOWNLINK = "D"


@dataclass(frozen=True)
class FrameSchedule:
    slot_roles: tuple  # per sub-frame, tuple of role strings
    pilot_symbol_index: int = 13

    @property
    def roles(self):
        return self.slot_roles[0]


@dataclass(frozen=True)
class ChannelTrace:
    """Ground-truth uplink/downlink CSI.

    uplink   : complex [N_sf, N_slot, N_T, N_R, N_c]
    downlink : complex [N_sf, N_slot, N_R, N_T, N_c]
    """

    uplink: np.ndarray
    downlink: np.ndarray
    doppler_hz: float

    def __post_init__(self):
        self.uplink.setflags(write=False)
        self.downlink.setflags(write=False)

    @property
    def n_subframes(self) -> int:
        return self.uplink.shape[0]


def build_frame_schedule(cfg: SystemConfig) -> FrameSchedule:
    """One special slot at index 0, the rest downlink, for every sub-frame."""
    roles = (SPECIAL,) + (DOWNLINK,) * (cfg.n_slot - 1)
    return FrameSchedule(slot_roles=(roles,) * cfg.n_subframes, pilot_symbol_index=13)


def max_doppler_hz(cfg: SystemConfig) -> float:
    return (cfg.ue_velocity_kmh / 3.6) * cfg.carrier_hz / SPEED_OF_LIGHT


def coherence_time_s(cfg: SystemConfig) -> float:
    """Diagnostic coherence time ``0.5 / f_d`` (infinite for a static UE)."""
    fd = max_doppler_hz(cfg)
    return np.inf if fd == 0 else 0.5 / fd


def ula_steering(n: int, angle_rad) -> np.ndarray:
    """Half-wavelength ULA responses, shape ``[len(angle), n]``."""
    angle_rad = np.atleast_1d(angle_rad)
    return np.exp(1j * np.pi * np.arange(n)[None, :] * np.sin(angle_rad)[:, None])


@dataclass(frozen=True)
class RayParams:
    gain: np.ndarray       # complex [P]
    delay_s: np.ndarray    # [P]
    bs_angle: np.ndarray   # radians [P]
    ue_angle: np.ndarray   # radians [P]


def draw_rays(model: ChannelModelConfig, rng: np.random.Generator) -> RayParams:
    nc, nr = model.n_clusters, model.rays_per_cluster
    ds = model.delay_spread_s
    if ds > 0:
        tau_c = np.minimum(rng.exponential(ds, nc), 4.0 * ds)
        tau_c -= tau_c.min()
    else:
        tau_c = np.zeros(nc)
    shadow = 10 ** (model.cluster_power_sigma_db * rng.standard_normal(nc) / 10)
    p_c = shadow * (np.exp(-tau_c / ds) if ds > 0 else np.ones(nc))
    p_c /= p_c.sum()

    bs_c = np.deg2rad(rng.uniform(-model.bs_sector_deg, model.bs_sector_deg, nc))
    ue_c = rng.uniform(-np.pi, np.pi, nc)

    bs = bs_c[:, None] + np.deg2rad(model.bs_ray_spread_deg) * rng.uniform(-1, 1, (nc, nr))
    ue = ue_c[:, None] + np.deg2rad(model.ue_ray_spread_deg) * rng.uniform(-1, 1, (nc, nr))
    if ds > 0:
        tau = tau_c[:, None] + model.intra_cluster_delay_s * rng.uniform(0, 1, (nc, nr))
    else:
        tau = np.zeros((nc, nr))
    phase = rng.uniform(-np.pi, np.pi, (nc, nr))
    gain = np.sqrt(p_c[:, None] / nr) * np.exp(1j * phase)
    return RayParams(gain.ravel(), tau.ravel(), bs.ravel(), ue.ravel())


def _check_aliasing(cfg: SystemConfig, model: ChannelModelConfig):
    if model.max_delay_s > 1.0 / cfg.scs_hz:
        raise ConfigError(
            f"max delay {model.max_delay_s:.3e}s exceeds 1/scs={1 / cfg.scs_hz:.3e}s (aliasing)")


def synthesize(cfg: SystemConfig, rays: RayParams, slot_times_s: np.ndarray,
               doppler_hz: float) -> np.ndarray:
    """Sum-of-rays uplink channel, complex ``[len(slot_times), N_T, N_R, N_c]``.

    Each slot is scaled to unit average power per entry.
    """
    f = np.arange(cfg.n_sc) * cfg.scs_hz
    freq = np.exp(-2j * np.pi * rays.delay_s[:, None] * f[None, :])          # [P, Nc]
    a_bs = ula_steering(cfg.n_tx, rays.bs_angle)                              # [P, NT]
    a_ue = ula_steering(cfg.n_rx, rays.ue_angle)                              # [P, NR]
    f_ray = doppler_hz * np.cos(rays.ue_angle)
    time = rays.gain[None, :] * np.exp(2j * np.pi * slot_times_s[:, None] * f_ray[None, :])
    h = np.einsum("sp,pt,pr,pi->stri", time, a_bs, a_ue, freq, optimize=True)
    power = np.mean(np.abs(h) ** 2, axis=(1, 2, 3), keepdims=True)
    return h / np.sqrt(power)


def derive_downlink(uplink_slot: np.ndarray, model: ChannelModelConfig) -> np.ndarray:
    """Apply the transceiver calibration to an uplink channel.

    Works on ``[..., N_T, N_R, N_c]`` and returns ``[..., N_R, N_T, N_c]`` with
    ``H^d[r, t, i] = calib_ue[r] * calib_bs[t] * H[t, r, i]``.
    """
    uplink_slot = np.asarray(uplink_slot)
    n_tx, n_rx = uplink_slot.shape[-3], uplink_slot.shape[-2]
    bs, ue = model.calibration(n_tx, n_rx)
    dl = np.swapaxes(uplink_slot, -3, -2)
    return dl * (ue[:, None, None] * bs[None, :, None])


def generate_channel_trace(cfg: SystemConfig, model: ChannelModelConfig) -> ChannelTrace:
    model.calibration(cfg.n_tx, cfg.n_rx)
    ul, dl = zip(*iter_subframes(cfg, model))
    return ChannelTrace(uplink=np.stack(ul), downlink=np.stack(dl),
                        doppler_hz=max_doppler_hz(cfg))


def iter_subframes(cfg: SystemConfig, model: ChannelModelConfig):
    """Yield ``(uplink, downlink)`` one sub-frame at a time.

    :func:`generate_channel_trace` stacks exactly these arrays; streaming
    avoids holding a full-size trace in memory.
    """
    _check_aliasing(cfg, model)
    rng = np.random.default_rng(model.seed)
    rays = draw_rays(model, rng)
    fd = max_doppler_hz(cfg)
    for s in range(cfg.n_subframes):
        times = (s * cfg.n_slot + np.arange(cfg.n_slot)) * cfg.slot_s
        ul = synthesize(cfg, rays, times, fd)
        yield ul, derive_downlink(ul, model)


def trace_dims(cfg: SystemConfig) -> list[int]:
    return [cfg.n_subframes, cfg.n_slot, cfg.n_tx, cfg.n_rx, cfg.n_sc]
