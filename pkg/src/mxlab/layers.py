"""Parameterised building blocks shared by both networks.

Weights live in a :class:`~mxlab.autodiff.ParamStore` under dotted names;
each block has an ``init_*`` function that registers them and a forward
function that reads them back by prefix.
"""

from __future__ import annotations

import math

import numpy as np

from . import autodiff as ad


def xavier(rng, fan_in, fan_out, shape=None):
    std = math.sqrt(2.0 / (fan_in + fan_out))
    return std * rng.standard_normal(shape or (fan_in, fan_out))


def init_linear(store, prefix, d_in, d_out, rng, bias=True, zero=False):
    w = np.zeros((d_in, d_out)) if zero else xavier(rng, d_in, d_out)
    store.add(f"{prefix}.w", w)
    if bias:
        store.add(f"{prefix}.b", np.zeros(d_out))


def linear(store, prefix, x):
    y = ad.matmul(x, store[f"{prefix}.w"])
    b = f"{prefix}.b"
    return ad.add(y, store[b]) if b in store else y


def init_layer_norm(store, prefix, d):
    store.add(f"{prefix}.g", np.ones(d))
    store.add(f"{prefix}.b", np.zeros(d))


def layer_norm(store, prefix, x):
    return ad.layer_norm_lastdim(x, store[f"{prefix}.g"], store[f"{prefix}.b"])


def init_mhsa(store, prefix, d, rng):
    for name in ("w_q", "w_k", "w_v", "w_o"):
        store.add(f"{prefix}.{name}", xavier(rng, d, d))


def _heads(x, n_heads):
    """[..., N, d] -> [..., h, N, d/h]"""
    *lead, n, d = x.shape
    x = ad.reshape(x, (*lead, n, n_heads, d // n_heads))
    k = len(lead)
    return ad.transpose(x, tuple(range(k)) + (k + 1, k, k + 2))


def _merge(x):
    """[..., h, N, dk] -> [..., N, h*dk]"""
    *lead, h, n, dk = x.shape
    k = len(lead)
    x = ad.transpose(x, tuple(range(k)) + (k + 1, k, k + 2))
    return ad.reshape(x, (*lead, n, h * dk))


def mhsa(store, prefix, x, n_heads, p_attn=0.0, train=False, rng=None, mask=None, kv_cache=None):
    """Multi-head scaled dot-product self-attention over the second-to-last axis.

    ``mask`` is an additive ``[N, N]`` array applied to the logits.
    ``kv_cache`` is a dict of ``"k"``/``"v"`` lists holding the heads of
    earlier positions; the new keys and values are appended and ``x`` attends
    to all of them (incremental decoding, no mask needed).
    """
    d = x.shape[-1]
    if d % n_heads:
        raise ad.ShapeError(f"representation dim {d} not divisible by {n_heads} heads")
    dk = d // n_heads
    q = _heads(ad.matmul(x, store[f"{prefix}.w_q"]), n_heads)
    k = _heads(ad.matmul(x, store[f"{prefix}.w_k"]), n_heads)
    v = _heads(ad.matmul(x, store[f"{prefix}.w_v"]), n_heads)
    if kv_cache is not None:
        kv_cache["k"].append(k)
        kv_cache["v"].append(v)
        k, v = ad.concat(kv_cache["k"], axis=-2), ad.concat(kv_cache["v"], axis=-2)
    logits = ad.scale(ad.matmul(q, ad.swapaxes(k, -1, -2)), 1.0 / math.sqrt(dk))
    z = ad.softmax_lastdim(logits, mask)
    z = ad.dropout(z, p_attn, train, rng)
    return ad.matmul(_merge(ad.matmul(z, v)), store[f"{prefix}.w_o"])


def complex_to_real(h, axis=-1):
    """Stack real and imaginary parts along a new ``axis``."""
    h = np.asarray(h)
    return np.stack([h.real, h.imag], axis=axis)


def real_to_complex(x, axis=-1):
    x = np.moveaxis(np.asarray(x), axis, -1)
    return x[..., 0] + 1j * x[..., 1]
