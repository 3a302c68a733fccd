"""Temporal uplink-downlink channel extrapolation.

Two networks share one parameter store:

* the calibration network (UDCCN) maps the estimated uplink channel of slot 0
  to the downlink channel of slot 1 with a small convolution plus a per-pixel
  linear projection;
* the downlink extrapolation network (DCEN) compresses each downlink slot into
  tokens by strided antenna/subcarrier grouping (SFSE), runs a causal
  Transformer along the slot axis and decodes the next slot with the inverse
  embedding, one slot at a time.

Real-valued layouts used internally::

    uplink    [B, 2, N_T, N_R, N_c]
    downlink  [B, 2, N_R, N_T, N_c]
    tokens    [B, G, T, d]          G = N_1 * N_2 groups, T slots
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .config import ConfigError
from .layers import (complex_to_real, init_layer_norm, init_linear, init_mhsa, layer_norm,
                     linear, mhsa, xavier)


@dataclass(frozen=True)
class UdccnConfig:
    kernel: int = 3
    d_feat: int = 32

    def __post_init__(self):
        if self.kernel < 1 or self.kernel % 2 == 0:
            raise ConfigError(f"UDCCN kernel must be odd and >= 1, got {self.kernel}")
        if self.d_feat < 1:
            raise ConfigError("UDCCN d_feat must be >= 1")


@dataclass(frozen=True)
class SfseConfig:
    n_tx: int
    n_rx: int
    n_sc: int
    n1: int = 4
    n2: int = 12
    d_emb: int = 512

    def __post_init__(self):
        if self.n_tx % self.n1:
            raise ConfigError(f"spatial sampling factor {self.n1} does not divide N_T={self.n_tx}")
        if self.n_sc % self.n2:
            raise ConfigError(f"frequency sampling factor {self.n2} does not divide N_c={self.n_sc}")

    @property
    def n_groups(self) -> int:
        return self.n1 * self.n2

    @property
    def width(self) -> int:
        """Per-group feature width before projection."""
        return 2 * self.n_rx * (self.n_tx // self.n1) * (self.n_sc // self.n2)


@dataclass(frozen=True)
class GenTransformerConfig:
    n_layers: int = 4
    d_rep: int = 512
    n_heads: int = 4
    d_ff: int = 2048
    p_attn: float = 0.5
    p_ff: float = 0.5
    max_tokens: int = 7

    def __post_init__(self):
        if self.d_rep % self.n_heads:
            raise ConfigError(f"d_rep={self.d_rep} not divisible by n_heads={self.n_heads}")
        if self.d_ff < self.d_rep:
            raise ConfigError(f"d_ff={self.d_ff} must be >= d_rep={self.d_rep}")
        if self.max_tokens < 1 or self.n_layers < 1:
            raise ConfigError("max_tokens and n_layers must be >= 1")


# ---------------------------------------------------------------------------
# calibration


def init_udccn(store, cfg: UdccnConfig, rng, prefix="udccn"):
    k = cfg.kernel
    store.add(f"{prefix}.conv", xavier(rng, 2 * k * k, cfg.d_feat, (cfg.d_feat, 2, k, k)))
    w_d = np.zeros((2 + cfg.d_feat, 2))
    w_d[:2] = np.eye(2)
    store.add(f"{prefix}.w_d", w_d)


def udccn_tensor(store, x_ul, prefix="udccn"):
    """Real uplink ``[B, 2, N_T, N_R, N_c]`` -> real downlink ``[B, 2, N_R, N_T, N_c]``."""
    x_ul = ad.as_tensor(x_ul)
    b, _, n_t, n_r, n_c = x_ul.shape
    img = ad.reshape(x_ul, (b, 2, n_t * n_r, n_c))
    feat = ad.relu(ad.conv2d(img, store[f"{prefix}.conv"]))
    joined = ad.concat([img, feat], axis=1)                          # [B, 2+d_f, H, W]
    out = ad.matmul(ad.transpose(joined, (0, 2, 3, 1)), store[f"{prefix}.w_d"])
    out = ad.reshape(ad.transpose(out, (0, 3, 1, 2)), (b, 2, n_t, n_r, n_c))
    return ad.transpose(out, (0, 1, 3, 2, 4))


def udccn_forward(h_ul_hat, store, prefix="udccn") -> np.ndarray:
    """Complex uplink estimate ``[..., N_T, N_R, N_c]`` -> downlink slot-1 ``[..., N_R, N_T, N_c]``."""
    h = np.asarray(h_ul_hat)
    single = h.ndim == 3
    h = h[None] if single else h
    y = udccn_tensor(store, complex_to_real(h, axis=1), prefix).data
    out = y[:, 0] + 1j * y[:, 1]
    return out[0] if single else out


# ---------------------------------------------------------------------------
# spatial-frequency sampling embedding


def init_sfse(store, cfg: SfseConfig, rng, prefix="sfse"):
    init_layer_norm(store, f"{prefix}.ln_in", cfg.width)
    init_linear(store, f"{prefix}.proj", cfg.width, cfg.d_emb, rng, bias=False)
    init_layer_norm(store, f"{prefix}.ln_out", cfg.d_emb)


def init_sfse_inverse(store, cfg: SfseConfig, rng, prefix="isfse"):
    init_layer_norm(store, f"{prefix}.ln_in", cfg.d_emb)
    init_linear(store, f"{prefix}.proj", cfg.d_emb, cfg.width, rng, bias=False)
    init_layer_norm(store, f"{prefix}.ln_out", cfg.width)


def rearrange_groups(x, cfg: SfseConfig):
    """Real ``[..., 2, N_R, N_T, N_c]`` -> ``[..., N_1*N_2, width]``.

    Antenna ``t = u*N_1 + a`` lands in spatial group ``a``; subcarrier
    ``i = w*N_2 + b`` in frequency group ``b``.
    """
    x = ad.as_tensor(x)
    lead = x.shape[:-4]
    k = len(lead)
    u, w = cfg.n_tx // cfg.n1, cfg.n_sc // cfg.n2
    y = ad.reshape(x, (*lead, 2, cfg.n_rx, u, cfg.n1, w, cfg.n2))
    y = ad.transpose(y, tuple(range(k)) + tuple(k + i for i in (3, 5, 0, 1, 2, 4)))
    return ad.reshape(y, (*lead, cfg.n_groups, cfg.width))


def inverse_rearrange_groups(x, cfg: SfseConfig):
    x = ad.as_tensor(x)
    lead = x.shape[:-2]
    k = len(lead)
    u, w = cfg.n_tx // cfg.n1, cfg.n_sc // cfg.n2
    y = ad.reshape(x, (*lead, cfg.n1, cfg.n2, 2, cfg.n_rx, u, w))
    # inverse of the permutation (3, 5, 0, 1, 2, 4)
    y = ad.transpose(y, tuple(range(k)) + tuple(k + i for i in (2, 3, 4, 0, 5, 1)))
    return ad.reshape(y, (*lead, 2, cfg.n_rx, cfg.n_tx, cfg.n_sc))


def sfse_embed(x, cfg: SfseConfig, store, prefix="sfse"):
    """Real downlink ``[..., 2, N_R, N_T, N_c]`` -> tokens ``[..., N_1*N_2, d_emb]``."""
    g = layer_norm(store, f"{prefix}.ln_in", rearrange_groups(x, cfg))
    return layer_norm(store, f"{prefix}.ln_out", linear(store, f"{prefix}.proj", g))


def sfse_inverse(tokens, cfg: SfseConfig, store, prefix="isfse"):
    """Tokens ``[..., N_1*N_2, d_emb]`` -> real downlink ``[..., 2, N_R, N_T, N_c]``."""
    t = layer_norm(store, f"{prefix}.ln_in", ad.as_tensor(tokens))
    t = layer_norm(store, f"{prefix}.ln_out", linear(store, f"{prefix}.proj", t))
    return inverse_rearrange_groups(t, cfg)


def sfse_parameter_count(cfg: SfseConfig) -> int:
    """Weights of the embedding projection alone."""
    return cfg.width * cfg.d_emb


# ---------------------------------------------------------------------------
# generative transformer


def causal_mask(n_tokens: int) -> np.ndarray:
    """Additive mask: ``-inf`` strictly above the diagonal, zero elsewhere."""
    if n_tokens < 1:
        raise ValueError("n_tokens must be >= 1")
    return np.triu(np.full((n_tokens, n_tokens), -np.inf), k=1)


def init_gen_transformer(store, cfg: GenTransformerConfig, rng, prefix="gen"):
    store.add(f"{prefix}.pe", 0.02 * rng.standard_normal((cfg.max_tokens, cfg.d_rep)))
    for i in range(cfg.n_layers):
        p = f"{prefix}.{i}"
        init_mhsa(store, f"{p}.mhsa", cfg.d_rep, rng)
        init_layer_norm(store, f"{p}.ln1", cfg.d_rep)
        init_linear(store, f"{p}.ff1", cfg.d_rep, cfg.d_ff, rng)
        init_linear(store, f"{p}.ff2", cfg.d_ff, cfg.d_rep, rng)
        init_layer_norm(store, f"{p}.ln2", cfg.d_rep)


def gen_layer(store, prefix, x, cfg: GenTransformerConfig, mask, train=False, rng=None, kv_cache=None):
    att = mhsa(store, f"{prefix}.mhsa", x, cfg.n_heads, cfg.p_attn, train, rng, mask=mask,
               kv_cache=kv_cache)
    x = layer_norm(store, f"{prefix}.ln1", ad.add(att, x))
    h = ad.dropout(ad.relu(linear(store, f"{prefix}.ff1", x)), cfg.p_ff, train, rng)
    return layer_norm(store, f"{prefix}.ln2", ad.add(linear(store, f"{prefix}.ff2", h), x))


def gen_transformer_forward(tokens, cfg: GenTransformerConfig, store, train=False, rng=None,
                            prefix="gen"):
    """Causal stack over the second-to-last axis: ``[..., n, d] -> [..., n, d]``."""
    x = ad.as_tensor(tokens)
    n = x.shape[-2]
    if n > cfg.max_tokens:
        raise ad.ShapeError(f"{n} tokens exceed max_tokens={cfg.max_tokens}")
    x = ad.add(x, ad.embedding_lookup(store[f"{prefix}.pe"], np.arange(n)))
    mask = causal_mask(n)
    for i in range(cfg.n_layers):
        x = gen_layer(store, f"{prefix}.{i}", x, cfg, mask, train, rng)
    return x


def gen_transformer_step(token, pos: int, cfg: GenTransformerConfig, store, cache: list,
                         train=False, rng=None, prefix="gen"):
    """Output at position ``pos`` for one new token ``[..., d]``.

    ``cache`` starts as ``[]`` and carries per-layer keys and values between
    calls, so a rollout costs one token per step instead of the whole prefix.
    Without dropout the result matches :func:`gen_transformer_forward` at
    ``pos`` up to rounding.
    """
    if pos >= cfg.max_tokens:
        raise ad.ShapeError(f"position {pos} exceeds max_tokens={cfg.max_tokens}")
    if not cache:
        cache.extend({"k": [], "v": []} for _ in range(cfg.n_layers))
    x = ad.as_tensor(token)
    x = ad.reshape(x, (*x.shape[:-1], 1, x.shape[-1]))
    x = ad.add(x, store[f"{prefix}.pe"][np.array([pos])])
    for i in range(cfg.n_layers):
        x = gen_layer(store, f"{prefix}.{i}", x, cfg, None, train, rng, kv_cache=cache[i])
    return ad.reshape(x, (*x.shape[:-2], x.shape[-1]))


# ---------------------------------------------------------------------------
# assembled model


@dataclass(frozen=True)
class TudcenConfig:
    udccn: UdccnConfig
    sfse: SfseConfig
    gen: GenTransformerConfig

    def __post_init__(self):
        if self.sfse.d_emb != self.gen.d_rep:
            raise ConfigError(f"d_emb={self.sfse.d_emb} must equal the transformer d_rep={self.gen.d_rep}")

    @property
    def n_slot(self) -> int:
        return self.gen.max_tokens + 1


class Tudcen:
    """Calibration network plus autoregressive downlink extrapolation."""

    def __init__(self, cfg: TudcenConfig, seed: int = 0, store: ad.ParamStore | None = None):
        self.cfg = cfg
        self.store = store if store is not None else ad.ParamStore()
        if store is None:
            rng = np.random.default_rng(seed)
            init_udccn(self.store, cfg.udccn, rng)
            init_sfse(self.store, cfg.sfse, rng)
            init_gen_transformer(self.store, cfg.gen, rng)
            init_sfse_inverse(self.store, cfg.sfse, rng)

    def param_names(self, part: str) -> list[str]:
        """Parameter names of ``"udccn"`` or ``"dcen"``."""
        if part == "udccn":
            return [n for n in self.store if n.startswith("udccn.")]
        if part == "dcen":
            return [n for n in self.store if not n.startswith("udccn.")]
        raise ValueError(f"unknown part {part!r}")

    def calibrate(self, x_ul, train=False):
        return udccn_tensor(self.store, x_ul)

    def _embed(self, x):
        """Real downlink ``[B, ..., 2, N_R, N_T, N_c]`` -> tokens ``[B, ..., G, d]``."""
        return sfse_embed(x, self.cfg.sfse, self.store)

    def _decode(self, tok):
        return sfse_inverse(tok, self.cfg.sfse, self.store)

    def teacher_forced(self, x_dl, train=False, rng=None):
        """One-step predictions from a known slot sequence.

        ``x_dl`` holds slots ``1..T`` as ``[B, T, 2, N_R, N_T, N_c]``; output
        row ``j`` predicts slot ``j + 2`` from slots ``1..j+1``.
        """
        tok = ad.swapaxes(self._embed(x_dl), 1, 2)                    # [B, G, T, d]
        out = gen_transformer_forward(tok, self.cfg.gen, self.store, train, rng)
        return self._decode(ad.swapaxes(out, 1, 2))                  # [B, T, 2, NR, NT, Nc]

    def rollout(self, x1, n_steps=None, train=False, rng=None):
        """Free-running generation from slot 1.

        ``x1`` is real ``[B, 2, N_R, N_T, N_c]``; returns a list of ``n_steps``
        tensors of the same shape (slots ``2..n_steps+1``).
        """
        n_steps = self.cfg.n_slot - 2 if n_steps is None else n_steps
        cache, preds = [], []
        tok = self._embed(x1)                                         # [B, G, d]
        for pos in range(n_steps):
            out = gen_transformer_step(tok, pos, self.cfg.gen, self.store, cache, train, rng)
            preds.append(self._decode(out))
            tok = self._embed(preds[-1])
        return preds


def extrapolate_slots(h_dl_slot1, model: Tudcen, n_slot: int | None = None) -> list[np.ndarray]:
    """Complex slot-1 downlink ``[..., N_R, N_T, N_c]`` -> channels for slots ``2..N_slot-1``."""
    n_slot = model.cfg.n_slot if n_slot is None else n_slot
    h = np.asarray(h_dl_slot1)
    single = h.ndim == 3
    h = h[None] if single else h
    preds = model.rollout(complex_to_real(h, axis=1), n_steps=max(n_slot - 2, 0))
    out = [p.data[:, 0] + 1j * p.data[:, 1] for p in preds]
    return [o[0] for o in out] if single else out
