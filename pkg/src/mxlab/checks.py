"""Self-contained property checks run by ``mxlab check``.

Each check returns ``(ok, detail)``. They cover exact properties only (no
training beyond a few steps), so the whole suite finishes in seconds.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .baselines import ls_estimate
from .channel import coherence_time_s, generate_channel_trace
from .config import ChannelModelConfig, SystemConfig, table1_system
from .metrics import sum_rate, svd_precoder
from .pilots import build_srs_pattern, observe_pilots, overhead
from .sfcen import AseemConfig, aseem_forward, init_aseem, inverse_sub_element_shuffle, sub_element_shuffle
from .tudcen import (GenTransformerConfig, SfseConfig, UdccnConfig, gen_transformer_forward,
                     init_gen_transformer, init_sfse, init_udccn, sfse_embed, sfse_parameter_count,
                     udccn_tensor)

GRAD_TOL = 1e-4


def _crandn(rng, *shape):
    return rng.standard_normal(shape) + 1j * rng.standard_normal(shape)


def _projected(fn, shape, seed=99):
    w = np.random.default_rng(seed).standard_normal(shape)
    return lambda xs: ad.sum_(ad.mul(fn(xs), w))


def _primitive_cases():
    mask = np.triu(np.full((4, 4), -np.inf), 1)
    return {
        "add": (lambda a, b: ad.add(a, b), [(3, 4), (4,)]),
        "sub": (lambda a, b: ad.sub(a, b), [(2, 3), (3,)]),
        "mul": (lambda a, b: ad.mul(a, b), [(3, 4), (3, 4)]),
        "matmul": (lambda a, b: ad.matmul(a, b), [(2, 3, 4), (4, 2)]),
        "relu": (lambda a: ad.relu(a), [(4, 5)]),
        "softmax": (lambda a: ad.softmax_lastdim(a, mask), [(2, 4, 4)]),
        "layer_norm": (lambda a, g, b: ad.layer_norm_lastdim(a, g, b), [(3, 6), (6,), (6,)]),
        "reshape": (lambda a: ad.reshape(a, (6, 2)), [(3, 4)]),
        "transpose": (lambda a: ad.transpose(a, (2, 0, 1)), [(2, 3, 4)]),
        "concat": (lambda a, b: ad.concat([a, b], axis=1), [(2, 3), (2, 2)]),
        "slice": (lambda a: a[:, np.array([0, 0, 2])], [(2, 3)]),
        "sum": (lambda a: ad.sum_(a, axis=1), [(2, 3, 4)]),
        "mean": (lambda a: ad.mean(a, axis=0), [(2, 3)]),
        "square": (lambda a: ad.square(a), [(3, 3)]),
        "embedding": (lambda t: ad.embedding_lookup(t, np.array([0, 2, 2])), [(3, 4)]),
        "conv2d": (lambda x, w: ad.conv2d(x, w), [(1, 2, 4, 4), (2, 2, 3, 3)]),
    }


def check_gradients():
    """Every primitive plus ASEEM, UDCCN and one generative layer at toy dims."""
    rng = np.random.default_rng(0)
    worst = {}
    for name, (fn, shapes) in _primitive_cases().items():
        xs = [ad.Tensor(rng.standard_normal(s), requires_grad=True) for s in shapes]
        out_shape = fn(*xs).shape
        worst[name] = ad.grad_check(_projected(lambda v, fn=fn: fn(*v), out_shape), xs, n_samples=None)

    s = ad.ParamStore()
    cfg = AseemConfig(4, 8, 2, 2, 0.0, 0.0)
    init_aseem(s, "a", cfg, rng)
    x = ad.Tensor(rng.standard_normal((4, 8)), requires_grad=True)
    params = [s[n] for n in s] + [x]
    worst["aseem"] = ad.grad_check(_projected(lambda _: aseem_forward(s, "a", x, cfg), (8, 8)), params, n_samples=30)

    s = ad.ParamStore()
    init_udccn(s, UdccnConfig(3, 3), rng)
    s["udccn.w_d"].data[:] = rng.standard_normal(s["udccn.w_d"].shape)
    xu = ad.Tensor(rng.standard_normal((1, 2, 4, 2, 4)), requires_grad=True)
    params = [s[n] for n in s] + [xu]
    worst["udccn"] = ad.grad_check(_projected(lambda _: udccn_tensor(s, xu), (1, 2, 2, 4, 4)), params, n_samples=None)

    s = ad.ParamStore()
    gcfg = GenTransformerConfig(1, 8, 2, 16, 0.0, 0.0, 4)
    init_gen_transformer(s, gcfg, rng)
    xt = ad.Tensor(rng.standard_normal((4, 8)), requires_grad=True)
    params = [s[n] for n in s] + [xt]
    worst["gen_layer"] = ad.grad_check(_projected(lambda _: gen_transformer_forward(xt, gcfg, s), (4, 8)),
                                       params, n_samples=30)
    bad = {k: v for k, v in worst.items() if not v <= GRAD_TOL}
    return not bad, f"max rel error {max(worst.values()):.2e}" + (f"; failing {sorted(bad)}" if bad else "")


def check_ls_exact():
    cfg = SystemConfig(n_tx=8, n_rx=2, n_rf=4, n_rb=2, n_sc=24, n_subframes=1)
    rng = np.random.default_rng(1)
    ok = True
    for comb in (1, 2, 4):
        pat = build_srs_pattern(cfg, comb, 2)
        h = _crandn(rng, 3, 8, 2, 24)
        est = ls_estimate(observe_pilots(h, pat, np.inf)).h_ls
        ok &= np.array_equal(est, h[:, pat.rf_antenna_set][..., pat.pilot_sc_indices])
    return bool(ok), "bitwise equality for combs 1, 2, 4"


def check_shuffle_bijection(n_tensors=100):
    rng = np.random.default_rng(2)
    for k in range(n_tensors):
        r = 1 + k % 4
        x = rng.standard_normal((int(rng.integers(1, 3)), int(rng.integers(1, 6)), r * int(rng.integers(1, 5))))
        back = inverse_sub_element_shuffle(sub_element_shuffle(x, r), r).data
        if not np.array_equal(back, x):
            return False, f"tensor {k} (r={r}) not restored"
    return True, f"{n_tensors} random tensors, r in 1..4"


def check_causality(n_tokens=7):
    s = ad.ParamStore()
    cfg = GenTransformerConfig(2, 8, 2, 16, 0.0, 0.0, n_tokens)
    init_gen_transformer(s, cfg, np.random.default_rng(3))
    x = np.random.default_rng(4).standard_normal((2, n_tokens, 8))
    y = gen_transformer_forward(x, cfg, s).data
    for t in range(n_tokens):
        xp = x.copy()
        xp[:, t] += 1.0
        if not np.array_equal(gen_transformer_forward(xp, cfg, s).data[:, :t], y[:, :t]):
            return False, f"perturbing token {t} leaked backwards"
    return True, f"bit-identical prefixes for all t < {n_tokens}"


def check_svd_precoder():
    rng = np.random.default_rng(5)
    h = _crandn(rng, 50, 2, 8)
    f = svd_precoder(h)
    gram = np.swapaxes(f, -1, -2).conj() @ f
    orth = float(np.max(np.abs(gram - np.eye(2))))
    est = h + 0.3 * _crandn(rng, 50, 2, 8)
    r_perf = sum_rate(h, f, 0.01)
    r_est = sum_rate(h, svd_precoder(est), 0.01)
    ok = orth <= 1e-10 and bool(np.all(r_perf >= r_est - 1e-12))
    return ok, f"max |F^H F - I| = {orth:.1e}; perfect >= estimated on {len(h)} samples"


def check_sfse_accounting():
    c = SfseConfig(32, 4, 624, 4, 12, 512)
    n_params = sfse_parameter_count(c)
    formula = 2 * 4 * (32 // 4) * (624 // 12) * 512
    small = SfseConfig(8, 2, 24, 2, 4, 16)
    s = ad.ParamStore()
    init_sfse(s, small, np.random.default_rng(6))
    x = np.random.default_rng(7).standard_normal((2, 2, 8, 24))
    with ad.count_macs() as box:
        sfse_embed(x, small, s)
    macs = 2 * 2 * 8 * 24 * 16
    ok = n_params == formula == 1_703_936 and abs(box[0] - macs) <= 0.01 * macs
    return ok, f"params {n_params}; MACs {box[0]} vs {macs}"


def check_coherence_time():
    tc = coherence_time_s(table1_system())
    return 0.31e-3 <= tc <= 0.33e-3, f"T_c = {tc * 1e3:.4f} ms"


def check_determinism():
    cfg = SystemConfig(n_tx=4, n_rx=2, n_rf=2, n_rb=1, n_sc=12, n_subframes=2)
    m = ChannelModelConfig(seed=11)
    a, b = generate_channel_trace(cfg, m), generate_channel_trace(cfg, m)
    ok = np.array_equal(a.uplink, b.uplink) and np.array_equal(a.downlink, b.downlink)
    return bool(ok), "two generations from one config are identical"


def check_overhead():
    cfg = table1_system()
    full = overhead(cfg, build_srs_pattern(cfg, 1, 1), 1.0)["c_sl"]
    comp = overhead(cfg, build_srs_pattern(cfg, 4, 2), 1.0)
    fast = overhead(cfg, build_srs_pattern(cfg, 4, 2), 1.0, srs_period_ms=0.25)
    ok = full == 8 * comp["c_sl"] and fast["c_o"] == 4 * comp["c_o"]
    return ok, f"c_sl {full} -> {comp['c_sl']}; c_o over 1 ms {fast['c_o']} -> {comp['c_o']}"


CHECKS = {
    "gradients": check_gradients,
    "ls_exact": check_ls_exact,
    "shuffle_bijection": check_shuffle_bijection,
    "causality": check_causality,
    "svd_precoder": check_svd_precoder,
    "sfse_accounting": check_sfse_accounting,
    "coherence_time": check_coherence_time,
    "determinism": check_determinism,
    "overhead": check_overhead,
}


def run_checks(names=None):
    """Run the named checks (all by default); returns ``[(name, ok, detail)]``."""
    out = []
    for name in names or CHECKS:
        try:
            ok, detail = CHECKS[name]()
        except Exception as exc:       # a crash is a failure, not an abort
            ok, detail = False, f"{type(exc).__name__}: {exc}"
        out.append((name, bool(ok), detail))
    return out
