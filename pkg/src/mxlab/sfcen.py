"""Knowledge-and-data-driven spatial-frequency channel extrapolation network.

The LS estimate on the pilot grid is embedded as a sequence of antenna
elements, upscaled by a stack of attention-based sub-element extrapolation
modules (ASEEMs) until every BS antenna is covered, then re-embedded as a
sequence of subcarrier elements and upscaled again to the full band. A
nearest-neighbour broadcast of the LS estimate is added as a global skip path.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .baselines import ls_estimate
from .config import ConfigError, SystemConfig
from .layers import (complex_to_real, init_layer_norm, init_linear, init_mhsa, layer_norm,
                     linear, mhsa, xavier)
from .pilots import PilotObservation, SrsPattern


@dataclass(frozen=True)
class AseemConfig:
    n_in: int
    d_rep: int
    n_heads: int = 4
    upscale: int = 2
    p_attn: float = 0.5
    p_seg: float = 0.5

    def __post_init__(self):
        if self.d_rep % self.n_heads:
            raise ConfigError(f"d_rep={self.d_rep} not divisible by n_heads={self.n_heads}")
        if self.upscale < 1 or self.n_in < 1:
            raise ConfigError("upscale and n_in must be >= 1")


def stage_count(ratio: int, upscale: int) -> int:
    """Smallest n with ``upscale**n >= ratio`` (the ceiling of log base ``upscale``)."""
    if ratio <= 1:
        return 0
    if upscale < 2:
        raise ConfigError(f"upscale factor {upscale} cannot reach ratio {ratio}")
    n, reach = 0, 1
    while reach < ratio:
        reach *= upscale
        n += 1
    return n


def init_aseem(store, prefix, cfg: AseemConfig, rng, zero_pe=False):
    d, r = cfg.d_rep, cfg.upscale
    store.add(f"{prefix}.pe", np.zeros((cfg.n_in, d)) if zero_pe else 0.02 * rng.standard_normal((cfg.n_in, d)))
    init_mhsa(store, f"{prefix}.mhsa", d, rng)
    init_layer_norm(store, f"{prefix}.ln1", d)
    init_linear(store, f"{prefix}.seg.g1", d, d, rng)
    init_linear(store, f"{prefix}.seg.g2", d, r * d, rng)
    store.add(f"{prefix}.seg.w_rc2", xavier(rng, d, r * d))
    init_layer_norm(store, f"{prefix}.ln2", r * d)


def positional_encoding(store, prefix, n_in):
    table = store[f"{prefix}.pe"]
    return ad.embedding_lookup(table, np.arange(n_in))


def seg(store, prefix, x_ln1, upscale, p_seg=0.0, train=False, rng=None):
    """Sub-element generation with its residual path and layer norm.

    Returns ``LN(FF(x_ln1) + x_ln1 @ W_rc2)`` of width ``upscale * d_rep``.
    """
    h = ad.relu(linear(store, f"{prefix}.seg.g1", x_ln1))
    h = ad.dropout(h, p_seg, train, rng)
    x_g = linear(store, f"{prefix}.seg.g2", h)
    if x_g.shape[-1] != upscale * x_ln1.shape[-1]:
        raise ad.ShapeError(f"SEG output width {x_g.shape[-1]} != {upscale}*{x_ln1.shape[-1]}")
    rc2 = ad.add(x_g, ad.matmul(x_ln1, store[f"{prefix}.seg.w_rc2"]))
    return layer_norm(store, f"{prefix}.ln2", rc2)


def sub_element_shuffle(x, r: int):
    """``[..., N, r*d] -> [..., r*N, d]``; row ``r*n + j``, column ``c`` <- ``x[n, c*r + j]``."""
    x = ad.as_tensor(x)
    *lead, n, w = x.shape
    if w % r:
        raise ad.ShapeError(f"width {w} not divisible by upscale {r}")
    d = w // r
    k = len(lead)
    y = ad.reshape(x, (*lead, n, d, r))
    y = ad.transpose(y, tuple(range(k)) + (k, k + 2, k + 1))
    return ad.reshape(y, (*lead, n * r, d))


def inverse_sub_element_shuffle(x, r: int):
    x = ad.as_tensor(x)
    *lead, m, d = x.shape
    if m % r:
        raise ad.ShapeError(f"{m} rows not divisible by upscale {r}")
    k = len(lead)
    y = ad.reshape(x, (*lead, m // r, r, d))
    y = ad.transpose(y, tuple(range(k)) + (k, k + 2, k + 1))
    return ad.reshape(y, (*lead, m // r, d * r))


def aseem_forward(store, prefix, x, cfg: AseemConfig, train=False, rng=None):
    """``[..., N_I, d_R] -> [..., r*N_I, d_R]``."""
    x = ad.as_tensor(x)
    if x.shape[-2:] != (cfg.n_in, cfg.d_rep):
        raise ad.ShapeError(f"{prefix}: expected [..., {cfg.n_in}, {cfg.d_rep}], got {x.shape}")
    x_t = ad.add(x, positional_encoding(store, prefix, cfg.n_in))
    att = mhsa(store, f"{prefix}.mhsa", x_t, cfg.n_heads, cfg.p_attn, train, rng)
    x_ln1 = layer_norm(store, f"{prefix}.ln1", ad.add(att, x_t))
    x_ln2 = seg(store, prefix, x_ln1, cfg.upscale, cfg.p_seg, train, rng)
    return sub_element_shuffle(x_ln2, cfg.upscale)


@dataclass(frozen=True)
class SfcenConfig:
    n_tx: int
    n_rx: int
    n_sc: int
    ratio_s: int          # R_s = N_T / N_RF
    ratio_f: int          # R_f = comb
    upscale_s: int = 2
    upscale_f: int = 2
    d_sr: int = 512
    d_fr: int = 512
    n_heads: int = 4
    p_attn: float = 0.5
    p_seg: float = 0.5

    def __post_init__(self):
        if self.n_tx % self.ratio_s or self.n_sc % self.ratio_f:
            raise ConfigError("compression ratios must divide N_T and N_c")
        for d in (self.d_sr, self.d_fr):
            if d % self.n_heads:
                raise ConfigError(f"representation dim {d} not divisible by {self.n_heads} heads")

    @classmethod
    def for_pattern(cls, cfg: SystemConfig, pattern: SrsPattern, **kw) -> "SfcenConfig":
        return cls(n_tx=cfg.n_tx, n_rx=cfg.n_rx, n_sc=cfg.n_sc, ratio_s=pattern.r_s,
                   ratio_f=pattern.comb, **kw)

    @property
    def n_si(self) -> int:
        return self.n_tx // self.ratio_s

    @property
    def n_fi(self) -> int:
        return self.n_sc // self.ratio_f

    @property
    def n_se(self) -> int:
        return stage_count(self.ratio_s, self.upscale_s)

    @property
    def n_fe(self) -> int:
        return stage_count(self.ratio_f, self.upscale_f)

    def spatial_stages(self) -> list[AseemConfig]:
        return [AseemConfig(self.n_si * self.upscale_s**i, self.d_sr, self.n_heads,
                            self.upscale_s, self.p_attn, self.p_seg) for i in range(self.n_se)]

    def frequency_stages(self) -> list[AseemConfig]:
        return [AseemConfig(self.n_fi * self.upscale_f**j, self.d_fr, self.n_heads,
                            self.upscale_f, self.p_attn, self.p_seg) for j in range(self.n_fe)]


class KddSfcen:
    """LS coarse estimate followed by progressive spatial then frequency ASEEMs."""

    def __init__(self, cfg: SfcenConfig, seed: int = 0, store: ad.ParamStore | None = None):
        self.cfg = cfg
        self.store = store if store is not None else ad.ParamStore()
        if store is None:
            self._init(np.random.default_rng(seed))

    def _init(self, rng):
        c, s = self.cfg, self.store
        feat_s = 2 * c.n_rx * c.n_fi
        feat_f = 2 * c.n_tx * c.n_rx
        init_linear(s, "in_s", feat_s, c.d_sr, rng)
        for i, a in enumerate(c.spatial_stages()):
            init_aseem(s, f"spatial.{i}", a, rng)
        init_linear(s, "out_s", c.d_sr, feat_s, rng, zero=True)
        init_linear(s, "in_f", feat_f, c.d_fr, rng)
        for j, a in enumerate(c.frequency_stages()):
            init_aseem(s, f"freq.{j}", a, rng)
        init_linear(s, "out_f", c.d_fr, feat_f, rng, zero=True)

    def forward(self, h_ls, train=False, rng=None):
        """LS estimate ``[B, N_RF, N_R, N_c']`` (complex) -> real ``[B, 2, N_T, N_R, N_c]``."""
        c, s = self.cfg, self.store
        h_ls = np.asarray(h_ls)
        if h_ls.shape[-3:] != (c.n_si, c.n_rx, c.n_fi):
            raise ConfigError(f"LS estimate shape {h_ls.shape[-3:]} does not match the network "
                              f"({c.n_si}, {c.n_rx}, {c.n_fi})")
        b = h_ls.shape[0]
        x_in = complex_to_real(h_ls, axis=2).reshape(b, c.n_si, -1)         # [B, NRF, 2*NR*Nc']

        xs = linear(s, "in_s", ad.Tensor(x_in))
        for i, a in enumerate(c.spatial_stages()):
            xs = aseem_forward(s, f"spatial.{i}", xs, a, train, rng)
        xs = xs[:, : c.n_tx]
        skip_s = x_in[:, np.arange(c.n_tx) // c.ratio_s]
        hs = ad.add(linear(s, "out_s", xs), skip_s)                          # [B, NT, 2*NR*Nc']

        hf = ad.reshape(hs, (b, c.n_tx, 2, c.n_rx, c.n_fi))
        hf = ad.reshape(ad.transpose(hf, (0, 4, 2, 1, 3)), (b, c.n_fi, -1))   # [B, Nc', 2*NT*NR]
        xf = linear(s, "in_f", hf)
        for j, a in enumerate(c.frequency_stages()):
            xf = aseem_forward(s, f"freq.{j}", xf, a, train, rng)
        xf = xf[:, : c.n_sc]
        skip_f = hf[:, np.arange(c.n_sc) // c.ratio_f]
        out = ad.add(linear(s, "out_f", xf), skip_f)                         # [B, Nc, 2*NT*NR]
        out = ad.reshape(out, (b, c.n_sc, 2, c.n_tx, c.n_rx))
        return ad.transpose(out, (0, 2, 3, 4, 1))

    __call__ = forward

    def estimate(self, obs: PilotObservation, batch: int = 64) -> np.ndarray:
        """Complex uplink estimate ``[..., N_T, N_R, N_c]`` with dropout disabled."""
        h_ls = ls_estimate(obs).h_ls
        single = h_ls.ndim == 3
        h_ls = h_ls[None] if single else h_ls
        outs = []
        for i in range(0, len(h_ls), batch):
            y = self.forward(h_ls[i:i + batch]).data
            outs.append(y[:, 0] + 1j * y[:, 1])
        out = np.concatenate(outs)
        return out[0] if single else out


def sfcen_forward(obs: PilotObservation, pattern: SrsPattern, params: KddSfcen, train=False,
                  rng=None) -> np.ndarray:
    """Complex uplink estimate for one observation (or a batch of them)."""
    if pattern.r_s != params.cfg.ratio_s or pattern.comb != params.cfg.ratio_f:
        raise ConfigError(f"pattern (R_s={pattern.r_s}, R_f={pattern.comb}) does not match the "
                          f"network ({params.cfg.ratio_s}, {params.cfg.ratio_f})")
    if not train:
        return params.estimate(obs)
    h_ls = ls_estimate(obs).h_ls
    y = params.forward(h_ls if h_ls.ndim == 4 else h_ls[None], train, rng).data
    out = y[:, 0] + 1j * y[:, 1]
    return out if h_ls.ndim == 4 else out[0]
