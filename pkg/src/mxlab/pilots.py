"""Comb-type SRS pattern, diagonal pilots and the noisy received observation."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import ConfigError, SystemConfig

VALID_COMBS = (1, 2, 4, 8, 16)


@dataclass(frozen=True)
class SrsPattern:
    comb: int
    pilot_sc_indices: np.ndarray
    cdm_codes: np.ndarray
    rf_antenna_set: np.ndarray
    n_tx: int
    seed: int = 0

    @property
    def n_pilot_sc(self) -> int:
        return len(self.pilot_sc_indices)

    @property
    def n_rf(self) -> int:
        return len(self.rf_antenna_set)

    @property
    def r_s(self) -> int:
        return self.n_tx // self.n_rf

    @property
    def r_f(self) -> int:
        return self.comb

    def manifest(self) -> dict:
        return {"pattern.comb": self.comb, "pattern.r_s": self.r_s,
                "pattern.rf_antenna_set": self.rf_antenna_set.tolist(),
                "pattern.seed": self.seed}


@dataclass(frozen=True)
class PilotObservation:
    """Per-pilot-subcarrier blocks.

    s_matrix : complex [N_c', N_R, N_R], diagonal per subcarrier
    y_matrix : complex [N_c', N_RF, N_R]
    """

    s_matrix: np.ndarray
    y_matrix: np.ndarray
    snr_db: float

    @property
    def s_diag(self) -> np.ndarray:
        return np.diagonal(self.s_matrix, axis1=-2, axis2=-1)

    @property
    def y_flat(self) -> np.ndarray:
        """Concatenated ``N_RF x (N_R * N_c')`` view, subcarrier-major columns."""
        y = self.y_matrix
        return np.moveaxis(y, -3, -2).reshape(*y.shape[:-3], y.shape[-2], -1)


def dft_codes(n: int) -> np.ndarray:
    """``n x n`` DFT matrix with exact 0/+-1 components snapped.

    For n in {1, 2, 4} every entry is exactly one of 1, -1, 1j, -1j.
    """
    k = np.arange(n)
    c = np.exp(-2j * np.pi * np.outer(k, k) / n)
    re, im = c.real.copy(), c.imag.copy()
    for part in (re, im):
        for v in (-1.0, 0.0, 1.0):
            part[np.abs(part - v) < 1e-12] = v
    return re + 1j * im


def build_srs_pattern(cfg: SystemConfig, comb: int, r_s: int, seed: int = 0) -> SrsPattern:
    if comb not in VALID_COMBS:
        raise ConfigError(f"invalid comb {comb}; expected one of {VALID_COMBS}")
    if cfg.n_sc % comb:
        raise ConfigError(f"invalid comb {comb}: does not divide N_c={cfg.n_sc}")
    if r_s < 1 or cfg.n_tx % r_s:
        raise ConfigError(f"r_s={r_s} must divide N_T={cfg.n_tx}")
    return SrsPattern(
        comb=comb,
        pilot_sc_indices=np.arange(0, cfg.n_sc, comb),
        cdm_codes=dft_codes(cfg.n_rx),
        rf_antenna_set=np.arange(0, cfg.n_tx, r_s),
        n_tx=cfg.n_tx,
        seed=seed,
    )


def pilot_symbols(pattern: SrsPattern, n_rx: int, seed=None) -> np.ndarray:
    """Diagonal pilot values, complex ``[N_c', N_R]``.

    QPSK phases times the fd-CDM code of each port, so every value is exactly
    one of {1, -1, 1j, -1j} for N_R <= 4 and the LS inversion is exact.
    """
    rng = np.random.default_rng(pattern.seed if seed is None else seed)
    quarter = np.array([1, 1j, -1, -1j])
    phases = quarter[rng.integers(0, 4, (pattern.n_pilot_sc, n_rx))]
    code = pattern.cdm_codes[:, np.arange(pattern.n_pilot_sc) % n_rx].T
    return phases * code


def observe_pilots(trace_slot: np.ndarray, pattern: SrsPattern, snr_db: float,
                   seed=None) -> PilotObservation:
    """Received pilots ``Y_i = H_i[A_RF, :] S_i + N_i`` on every pilot subcarrier.

    ``trace_slot`` is an uplink channel ``[..., N_T, N_R, N_c]``; leading axes are
    treated as independent samples. ``snr_db=inf`` disables the noise.
    """
    h = np.asarray(trace_slot)
    n_rx = h.shape[-2]
    h_p = h[..., pattern.rf_antenna_set, :, :][..., pattern.pilot_sc_indices]
    h_p = np.moveaxis(h_p, -1, -3)                                 # [..., Nc', NRF, NR]
    s = pilot_symbols(pattern, n_rx)                               # [Nc', NR]
    y = h_p * s[:, None, :]
    if np.isfinite(snr_db):
        rng = np.random.default_rng(seed)
        sig = np.mean(np.abs(y) ** 2, axis=(-3, -2, -1), keepdims=True)
        sigma2 = sig / 10 ** (snr_db / 10)
        noise = rng.standard_normal(y.shape) + 1j * rng.standard_normal(y.shape)
        y = y + np.sqrt(sigma2 / 2) * noise
    s_mat = np.zeros((pattern.n_pilot_sc, n_rx, n_rx), complex)
    idx = np.arange(n_rx)
    s_mat[:, idx, idx] = s
    return PilotObservation(s_matrix=s_mat, y_matrix=y, snr_db=snr_db)


def overhead(cfg: SystemConfig, pattern: SrsPattern, horizon_ms: float,
             srs_period_ms: float | None = None) -> dict:
    """Single-sounding RE count ``c_sl`` and total ``c_o`` over ``horizon_ms``."""
    tp = cfg.srs_period_ms if srs_period_ms is None else srs_period_ms
    n_soundings = horizon_ms / tp
    if abs(n_soundings - round(n_soundings)) > 1e-9:
        raise ConfigError(f"horizon {horizon_ms} ms is not a multiple of T_p={tp} ms")
    c_sl = pattern.n_rf * cfg.n_rx * pattern.n_pilot_sc
    return {"c_sl": c_sl, "c_o": int(round(n_soundings)) * c_sl}
