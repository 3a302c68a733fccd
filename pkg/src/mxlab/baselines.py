"""Knowledge-driven estimators: LS on the pilot grid and classical interpolation."""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np
from scipy.interpolate import CubicSpline, interp1d

from .pilots import PilotObservation, SrsPattern


class SingularPilotError(ValueError):
    pass


class InsufficientPointsError(ValueError):
    pass


class Interp(str, enum.Enum):
    LINEAR = "linear"
    SPLINE = "spline"
    DFT = "dft"


@dataclass(frozen=True)
class CoarseEstimate:
    h_ls: np.ndarray  # complex [..., N_RF, N_R, N_c']


def ls_estimate(obs: PilotObservation) -> CoarseEstimate:
    s = obs.s_diag                                                # [Nc', NR]
    if np.any(np.abs(s) < 1e-12):
        raise SingularPilotError("pilot matrix has a diagonal entry below 1e-12")
    h = obs.y_matrix / s[:, None, :]                              # [..., Nc', NRF, NR]
    return CoarseEstimate(h_ls=np.moveaxis(h, -3, -1))


def _interp_axis(x, axis: int, n_full: int, method: Interp, centered: bool):
    """Interpolate ``x`` along ``axis`` from ``n`` samples at stride ``n_full // n``."""
    method = Interp(method)
    x = np.moveaxis(np.asarray(x), axis, -1)
    n = x.shape[-1]
    if n_full % n:
        raise ValueError(f"{n} samples do not tile {n_full} points")
    stride = n_full // n
    if stride == 1:
        return np.moveaxis(x.copy(), -1, axis)
    need = {Interp.LINEAR: 2, Interp.SPLINE: 4, Interp.DFT: 1}[method]
    if n < need:
        raise InsufficientPointsError(f"{method.value} needs >= {need} samples, got {n}")

    if method is Interp.DFT:
        out = _dft_upsample(x, n_full, centered)
    else:
        src = np.arange(n) * stride
        dst = np.arange(n_full)
        parts = []
        for part in (x.real, x.imag):
            if method is Interp.LINEAR:
                f = interp1d(src, part, axis=-1, fill_value="extrapolate", assume_sorted=True)
            else:
                f = CubicSpline(src, part, axis=-1, bc_type="natural", extrapolate=True)
            parts.append(f(dst))
        out = parts[0] + 1j * parts[1]
    return np.moveaxis(out, -1, axis)


def _dft_upsample(x, n_full: int, centered: bool):
    n = x.shape[-1]
    if centered:
        # angular domain: keep negative spatial frequencies at the tail
        spec = np.fft.fft(x, axis=-1) / n
        pad = np.zeros(x.shape[:-1] + (n_full,), complex)
        half = n // 2
        if n % 2:
            pad[..., : half + 1] = spec[..., : half + 1]
            pad[..., n_full - half:] = spec[..., half + 1:]
        else:
            pad[..., :half] = spec[..., :half]
            pad[..., n_full - half + 1:] = spec[..., half + 1:]
            pad[..., half] = 0.5 * spec[..., half]
            pad[..., n_full - half] = 0.5 * spec[..., half]
        return np.fft.ifft(pad, axis=-1) * n_full
    # delay domain: causal taps, zero-pad at the tail
    taps = np.fft.ifft(x, axis=-1)
    pad = np.zeros(x.shape[:-1] + (n_full,), complex)
    pad[..., :n] = taps
    return np.fft.fft(pad, axis=-1)


def interp_frequency(h_partial, method, n_sc_full: int):
    """``[..., N_a, N_R, N_c']`` -> ``[..., N_a, N_R, N_c]``; pilots at stride N_c/N_c'."""
    return _interp_axis(h_partial, -1, n_sc_full, method, centered=False)


def interp_spatial(h_partial, method, n_tx_full: int):
    """``[..., N_RF, N_R, N_c]`` -> ``[..., N_T, N_R, N_c]``; pilots at stride N_T/N_RF."""
    return _interp_axis(h_partial, -3, n_tx_full, method, centered=True)


def baseline_estimate(obs: PilotObservation, pattern: SrsPattern, method, n_sc_full: int):
    """LS, then frequency interpolation, then spatial interpolation."""
    h = ls_estimate(obs).h_ls
    h = interp_frequency(h, method, n_sc_full)
    return interp_spatial(h, method, pattern.n_tx)
