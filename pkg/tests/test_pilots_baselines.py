import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mxlab import baselines as bl
from mxlab.channel import generate_channel_trace, ula_steering
from mxlab.config import ChannelModelConfig, ConfigError, SystemConfig, table1_system
from mxlab.metrics import nmse_db
from mxlab.pilots import (PilotObservation, build_srs_pattern, dft_codes, observe_pilots,
                          overhead, pilot_symbols)


def random_channel(rng, n_t=8, n_r=2, n_c=48, lead=()):
    shape = (*lead, n_t, n_r, n_c)
    return rng.standard_normal(shape) + 1j * rng.standard_normal(shape)


# -- pilots ------------------------------------------------------------------


def test_comb2_single_rb_pattern():
    cfg = SystemConfig(n_tx=4, n_rx=4, n_rf=4, n_rb=1, n_sc=12, n_subframes=1)
    p = build_srs_pattern(cfg, comb=2, r_s=1)
    np.testing.assert_array_equal(p.pilot_sc_indices, [0, 2, 4, 6, 8, 10])
    assert p.cdm_codes.shape == (4, 4)       # fd-CDM length 4
    np.testing.assert_array_equal(p.rf_antenna_set, np.arange(4))


def test_pilot_count_at_table1_values():
    p = build_srs_pattern(table1_system(), comb=2, r_s=2)
    assert p.n_pilot_sc == 312
    np.testing.assert_array_equal(p.rf_antenna_set, np.arange(0, 32, 2))
    assert (p.r_s, p.r_f, p.n_rf) == (2, 2, 16)


@pytest.mark.parametrize("n", [1, 2, 3, 4, 8])
def test_cdm_codes_orthogonal(n):
    c = dft_codes(n)
    np.testing.assert_allclose(c @ c.conj().T, n * np.eye(n), atol=1e-12)
    np.testing.assert_allclose(np.abs(c), 1, atol=1e-15)


def test_invalid_patterns(tiny_cfg):
    with pytest.raises(ConfigError):
        build_srs_pattern(tiny_cfg, comb=3, r_s=1)
    with pytest.raises(ConfigError):
        build_srs_pattern(tiny_cfg.replace(n_rb=1), comb=8, r_s=1)   # 8 does not divide 12
    with pytest.raises(ConfigError):
        build_srs_pattern(tiny_cfg, comb=2, r_s=3)


def test_pilot_symbols_unit_modulus(tiny_cfg):
    s = pilot_symbols(build_srs_pattern(tiny_cfg, 2, 1), tiny_cfg.n_rx)
    np.testing.assert_array_equal(np.abs(s), 1.0)


def test_noiseless_observation_exact(tiny_cfg, rng):
    p = build_srs_pattern(tiny_cfg, 2, 2)
    h = random_channel(rng, 4, 2, 24)
    obs = observe_pilots(h, p, np.inf)
    s = pilot_symbols(p, 2)
    for k, i in enumerate(p.pilot_sc_indices):
        expected = h[p.rf_antenna_set, :, i] @ np.diag(s[k])
        np.testing.assert_array_equal(obs.y_matrix[k], expected)
    assert obs.y_flat.shape == (2, 2 * 12)


def test_noise_power_at_0db(tiny_cfg, rng):
    p = build_srs_pattern(tiny_cfg, 2, 1)
    h = random_channel(rng, 4, 2, 24)
    clean = observe_pilots(h, p, np.inf).y_matrix
    ratios = []
    for seed in range(100):
        y = observe_pilots(h, p, 0.0, seed=seed).y_matrix
        ratios.append(np.sum(np.abs(y - clean) ** 2) / np.sum(np.abs(clean) ** 2))
    assert 0.9 <= np.mean(ratios) <= 1.1


def test_overhead_counts():
    cfg = table1_system()
    full = overhead(cfg, build_srs_pattern(cfg, 1, 1), 1.0)
    comp = overhead(cfg, build_srs_pattern(cfg, 4, 2), 1.0)
    assert full["c_sl"] == cfg.n_tx * cfg.n_rx * cfg.n_sc == 79872
    assert comp["c_sl"] == 9984
    assert full["c_sl"] == 8 * comp["c_sl"]
    assert overhead(cfg, build_srs_pattern(cfg, 4, 2), 10.0)["c_o"] == 10 * comp["c_sl"]
    with pytest.raises(ConfigError):
        overhead(cfg, build_srs_pattern(cfg, 4, 2), 1.5)


def test_overhead_strictly_decreasing():
    cfg = table1_system()
    combs = [overhead(cfg, build_srs_pattern(cfg, c, 1), 1.0)["c_sl"] for c in (1, 2, 4, 8, 16)]
    spat = [overhead(cfg, build_srs_pattern(cfg, 2, r), 1.0)["c_sl"] for r in (1, 2, 4, 8)]
    assert np.all(np.diff(combs) < 0) and np.all(np.diff(spat) < 0)


# -- LS ----------------------------------------------------------------------


def test_ls_exact_noiseless(tiny_cfg, rng):
    p = build_srs_pattern(tiny_cfg, 2, 2)
    h = random_channel(rng, 4, 2, 24, lead=(3,))
    est = bl.ls_estimate(observe_pilots(h, p, np.inf)).h_ls
    np.testing.assert_array_equal(est, h[..., p.rf_antenna_set, :, :][..., p.pilot_sc_indices])


def test_ls_identity_pilot_returns_y(rng):
    y = rng.standard_normal((6, 2, 2)) + 1j * rng.standard_normal((6, 2, 2))
    obs = PilotObservation(np.broadcast_to(np.eye(2), (6, 2, 2)).astype(complex), y, np.inf)
    np.testing.assert_array_equal(bl.ls_estimate(obs).h_ls, np.moveaxis(y, -3, -1))


def test_ls_singular_pilot(rng):
    s = np.zeros((2, 2, 2), complex)
    s[:, 0, 0] = 1
    with pytest.raises(bl.SingularPilotError):
        bl.ls_estimate(PilotObservation(s, np.ones((2, 2, 2), complex), 0.0))


def test_ls_noise_level_10db(tiny_cfg, rng):
    p = build_srs_pattern(tiny_cfg, 2, 1)
    h = random_channel(rng, 4, 2, 24)
    ref = h[..., p.pilot_sc_indices]
    vals = [nmse_db(ref[None], bl.ls_estimate(observe_pilots(h, p, 10.0, seed=s)).h_ls[None])
            for s in range(100)]
    assert abs(10 * np.log10(np.mean(10 ** (np.array(vals) / 10))) + 10) <= 0.5


# -- interpolation -----------------------------------------------------------


@pytest.mark.parametrize("method", list(bl.Interp))
def test_interpolators_exact_on_constant_and_samples(method, rng):
    const = np.full((3, 2, 12), 0.7 - 0.2j)
    np.testing.assert_allclose(bl.interp_frequency(const, method, 48), 0.7 - 0.2j, atol=1e-12)
    np.testing.assert_allclose(bl.interp_spatial(np.full((4, 2, 5), 1 + 1j), method, 16), 1 + 1j, atol=1e-12)
    part = rng.standard_normal((4, 2, 12)) + 1j * rng.standard_normal((4, 2, 12))
    full = bl.interp_frequency(part, method, 48)
    np.testing.assert_allclose(full[..., ::4], part, atol=1e-12)
    sp = bl.interp_spatial(part, method, 8)
    np.testing.assert_allclose(sp[::2], part, atol=1e-12)


def test_linear_exact_on_linear_field():
    f = np.arange(24.0)
    field = np.broadcast_to((2 - 1j) * f + 0.5, (2, 1, 24))
    est = bl.interp_frequency(field[..., ::2], "linear", 24)
    np.testing.assert_allclose(est[..., 1::2], field[..., 1::2], atol=1e-12)


def test_insufficient_points():
    with pytest.raises(bl.InsufficientPointsError):
        bl.interp_frequency(np.ones((1, 1, 1)), "linear", 4)
    with pytest.raises(bl.InsufficientPointsError):
        bl.interp_frequency(np.ones((1, 1, 3)), "spline", 12)
    bl.interp_frequency(np.ones((1, 1, 1)), "dft", 4)


@pytest.mark.parametrize("frac", [0.1, 0.3, 0.45])
def test_dft_single_path_off_grid_delay(frac):
    # an off-grid delay leaks across the finite delay window, so the error
    # floor is set by edge ripple rather than by the band limit
    n_c, comb, scs = 96, 2, 120e3
    tau = frac / (comb * scs)
    h = np.exp(-2j * np.pi * np.arange(n_c) * scs * tau)[None, None, :]
    est = bl.interp_frequency(h[..., ::comb], "dft", n_c)
    np.testing.assert_allclose(est[..., ::comb], h[..., ::comb], atol=1e-12)
    assert nmse_db(h[None], est[None]) <= -12


def test_dft_on_grid_delay_is_exact():
    n_c, comb, scs = 96, 4, 120e3
    tau = 5 / (n_c * scs)                    # integer delay bin
    h = np.exp(-2j * np.pi * np.arange(n_c) * scs * tau)[None, None, :]
    est = bl.interp_frequency(h[..., ::comb], "dft", n_c)
    np.testing.assert_allclose(est, h, atol=1e-12)


def test_dft_single_ray_spatial():
    n_t = 16
    for theta in (np.arcsin(0.25), np.arcsin(-0.25)):    # on-grid, both signs
        a = ula_steering(n_t, theta)[0][:, None, None]
        est = bl.interp_spatial(a[::2], "dft", n_t)
        np.testing.assert_allclose(est, a, atol=1e-12)
    a = ula_steering(n_t, np.deg2rad(7.0))[0][:, None, None]      # off-grid, small angle
    assert nmse_db(a[None], bl.interp_spatial(a[::2], "dft", n_t)[None]) <= -10


def test_broadside_any_method_exact():
    a = ula_steering(8, 0.0)[0][:, None, None] * np.ones((1, 2, 3))
    for m in bl.Interp:
        np.testing.assert_allclose(bl.interp_spatial(a[::2], m, 8), a, atol=1e-12)


@settings(max_examples=20, deadline=None)
@given(st.floats(-3, 3), st.floats(-3, 3), st.integers(0, 1000))
def test_dft_commutes_with_scaling(re, im, seed):
    rng = np.random.default_rng(seed)
    part = rng.standard_normal((2, 2, 8)) + 1j * rng.standard_normal((2, 2, 8))
    alpha = re + 1j * im
    np.testing.assert_allclose(bl.interp_frequency(alpha * part, "dft", 32),
                               alpha * bl.interp_frequency(part, "dft", 32), atol=1e-10)
    np.testing.assert_allclose(bl.interp_spatial(alpha * part, "dft", 4),
                               alpha * bl.interp_spatial(part, "dft", 4), atol=1e-10)


def test_spatial_identity_at_rs1(rng):
    part = random_channel(rng, 4, 2, 6)
    np.testing.assert_array_equal(bl.interp_spatial(part, "spline", 4), part)


def test_baseline_flat_channel_exact(tiny_cfg):
    cfg = tiny_cfg.replace(ue_velocity_kmh=0)
    m = ChannelModelConfig(n_clusters=1, rays_per_cluster=1, delay_spread_s=0.0, bs_sector_deg=0.0,
                           bs_ray_spread_deg=0.0)
    h = generate_channel_trace(cfg, m).uplink[0, 0]
    p = build_srs_pattern(cfg, 2, 2)
    obs = observe_pilots(h, p, np.inf)
    for method in ("linear", "dft"):
        np.testing.assert_allclose(bl.baseline_estimate(obs, p, method, cfg.n_sc), h, atol=1e-12)
