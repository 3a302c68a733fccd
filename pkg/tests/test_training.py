import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mxlab import autodiff as ad
from mxlab.config import ChannelModelConfig, ConfigError, make_calibration
from mxlab.container import (ContainerError, StreamWriter, file_sha256, load_tensors, read_array,
                             read_dims, read_manifest, save_tensors, write_array, write_manifest)
from mxlab.channel import generate_channel_trace
from mxlab.pilots import build_srs_pattern
from mxlab.sfcen import KddSfcen, SfcenConfig
from mxlab.training import (TrainConfig, TrainingDiverged, build_traces, fit, loss_mse_sfcen,
                            loss_nmse_dcen, loss_nmse_udccn, make_windows, split_windows,
                            train_sfcen, train_tudcen)
from mxlab.tudcen import GenTransformerConfig, SfseConfig, Tudcen, TudcenConfig, UdccnConfig


def crandn(rng, *shape):
    return rng.standard_normal(shape) + 1j * rng.standard_normal(shape)


# -- container ---------------------------------------------------------------


def test_container_round_trip(tmp_path, rng):
    a = crandn(rng, 3, 2, 4).astype(np.complex64)
    write_array(tmp_path / "a.mxl", a)
    np.testing.assert_array_equal(read_array(tmp_path / "a.mxl"), a)
    assert read_dims(tmp_path / "a.mxl") == [3, 2, 4]
    raw = (tmp_path / "a.mxl").read_bytes()
    assert raw[:4] == b"MXL1" and len(raw) == 8 + 12 + 24 * 8


def test_container_errors(tmp_path):
    (tmp_path / "bad").write_bytes(b"NOPE" + bytes(8))
    with pytest.raises(ContainerError):
        read_array(tmp_path / "bad")
    write_array(tmp_path / "t", np.ones((4, 4)))
    (tmp_path / "t").write_bytes((tmp_path / "t").read_bytes()[:-8])
    with pytest.raises(ContainerError):
        read_array(tmp_path / "t")


def test_stream_writer(tmp_path, rng):
    rows = crandn(rng, 3, 2, 2).astype(np.complex64)
    with StreamWriter(tmp_path / "s", [3, 2, 2]) as w:
        for r in rows:
            w.append(r)
    np.testing.assert_array_equal(read_array(tmp_path / "s"), rows)
    w = StreamWriter(tmp_path / "s2", [2, 2])
    w.append(np.zeros(2))
    with pytest.raises(ContainerError):
        w.close()
    with pytest.raises(ContainerError):
        StreamWriter(tmp_path / "s3", [1, 2]).append(np.zeros(3))


def test_checkpoint_and_manifest(tmp_path):
    state = {"a.w": np.arange(6.0).reshape(2, 3), "b": np.array([0.5])}
    save_tensors(tmp_path / "c.ckpt", state)
    back = load_tensors(tmp_path / "c.ckpt")
    assert list(back) == ["a.w", "b"]
    np.testing.assert_array_equal(back["a.w"], state["a.w"])
    write_manifest(tmp_path / "m.txt", {"x": 1, "arr": np.array([1.0, 2.0]), "s": "hi"})
    assert read_manifest(tmp_path / "m.txt") == {"x": 1, "arr": [1.0, 2.0], "s": "hi"}
    assert len(file_sha256(tmp_path / "c.ckpt")) == 64
    (tmp_path / "bad.txt").write_text("novalue\n")
    with pytest.raises(ContainerError, match=":1:"):
        read_manifest(tmp_path / "bad.txt")


# -- windows -----------------------------------------------------------------


def test_windows_tile_the_trace(tiny_cfg):
    tr = generate_channel_trace(tiny_cfg, ChannelModelConfig(seed=1))
    ws = make_windows(tr, TrainConfig())
    assert len(ws) == tiny_cfg.n_subframes
    np.testing.assert_array_equal(ws.uplink, tr.uplink)
    np.testing.assert_array_equal(ws.downlink, tr.downlink)
    one = generate_channel_trace(tiny_cfg.replace(n_subframes=1), ChannelModelConfig(seed=1))
    assert len(make_windows(one, TrainConfig())) == 1
    with pytest.raises(ConfigError):
        make_windows(tr, TrainConfig(window_len=4, stride=4))


def test_hundred_subframes_give_hundred_windows(tiny_cfg):
    tr = generate_channel_trace(tiny_cfg.replace(n_subframes=100, n_rb=1, n_sc=12),
                                ChannelModelConfig(seed=0))
    assert len(make_windows(tr, TrainConfig())) == 100


def test_split_by_trace(tiny_cfg):
    traces = build_traces(tiny_cfg, ChannelModelConfig(), 5)
    tr, va, te = split_windows(traces, TrainConfig(split=(3, 1, 1)))
    assert set(tr.trace_id) == {0, 1, 2} and set(va.trace_id) == {3} and set(te.trace_id) == {4}
    with pytest.raises(ConfigError):
        split_windows(traces, TrainConfig(split=(5, 1, 0)))


@pytest.mark.parametrize("changes", [{"batch": 0}, {"stride": 4}, {"dcen_mode": "x"},
                                     {"split": (0, 1, 1)}, {"epochs": 0}])
def test_train_config_validation(changes):
    with pytest.raises(ConfigError):
        TrainConfig(**changes)


# -- losses ------------------------------------------------------------------


def test_mse_loss_examples(rng):
    h = crandn(rng, 3, 2, 2, 4)
    assert loss_mse_sfcen(h, h).item() == 0.0
    assert loss_mse_sfcen(np.zeros_like(h), h).item() == pytest.approx(np.mean(np.sum(np.abs(h) ** 2, axis=(1, 2, 3))))
    pred = crandn(rng, 3, 2, 2, 4)
    ref = np.mean([np.sum(np.abs(pred[b] - h[b]) ** 2) for b in range(3)])
    assert loss_mse_sfcen(pred, h).item() == pytest.approx(ref)


def test_nmse_loss_examples(rng):
    h = crandn(rng, 4, 2, 2, 4)
    assert loss_nmse_udccn(h, h).item() == 0.0
    assert loss_nmse_udccn(np.zeros_like(h), h).item() == pytest.approx(1.0)
    assert loss_nmse_udccn(2 * h, h).item() == pytest.approx(1.0)
    with pytest.raises(ValueError):
        loss_nmse_udccn(h, np.zeros_like(h))


def test_dcen_loss_two_slot_oracle(rng):
    t = [crandn(rng, 3, 2, 2, 4) for _ in range(2)]
    p = [crandn(rng, 3, 2, 2, 4) for _ in range(2)]
    ref = np.mean([np.mean([np.sum(np.abs(p[s][b] - t[s][b]) ** 2) / np.sum(np.abs(t[s][b]) ** 2)
                            for s in range(2)]) for b in range(3)])
    assert loss_nmse_dcen(p, t).item() == pytest.approx(ref)
    assert loss_nmse_dcen(t, t).item() == 0.0
    assert loss_nmse_dcen([np.zeros_like(x) for x in t], t).item() == pytest.approx(1.0)
    with pytest.raises(ValueError):
        loss_nmse_dcen(p[:1], t)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 999))
def test_losses_non_negative(seed):
    rng = np.random.default_rng(seed)
    a, b = crandn(rng, 2, 2, 2, 3), crandn(rng, 2, 2, 2, 3)
    assert loss_mse_sfcen(a, b).item() >= 0
    assert loss_nmse_udccn(a, b).item() >= 0


# -- generic loop ------------------------------------------------------------


def _quadratic_fit(cfg, noise_seed=0):
    s = ad.ParamStore()
    p = s.add("p", np.array([3.0, -2.0]))
    data = np.random.default_rng(noise_seed).standard_normal((20, 2)) + 1.0

    def step(idx, rng):
        return ad.mean(ad.square(ad.sub(p, data[idx])))

    def valid():
        return float(np.sum((p.data - 1.0) ** 2))
    return s, fit(s, ["p"], step, valid, 20, cfg, np.random.default_rng(cfg.seed), "q")


def test_fit_restores_best_state_and_logs():
    cfg = TrainConfig(batch=5, lr0=0.5, epochs=30, patience=30)
    s, res = _quadratic_fit(cfg)
    assert len(res.log) == 30
    assert res.best_valid == min(r["valid_loss"] for r in res.log)
    assert float(np.sum((s["p"].data - 1.0) ** 2)) == pytest.approx(res.best_valid)


def test_fit_early_stopping():
    cfg = TrainConfig(batch=20, lr0=5.0, epochs=200, patience=3)
    _, res = _quadratic_fit(cfg)
    assert len(res.log) < 200
    assert res.best_epoch == len(res.log) - 4


def test_fit_divergence_guard():
    s = ad.ParamStore()
    p = s.add("p", np.ones(1))
    with pytest.raises(TrainingDiverged):
        fit(s, ["p"], lambda idx, rng: ad.sum_(ad.mul(p, np.nan)), lambda: 0.0, 4, TrainConfig(batch=2),
            np.random.default_rng(0), "nan")


def test_fit_is_reproducible():
    cfg = TrainConfig(batch=4, lr0=0.1, epochs=5)
    a, ra = _quadratic_fit(cfg)
    b, rb = _quadratic_fit(cfg)
    assert ra.log == rb.log
    np.testing.assert_array_equal(a["p"].data, b["p"].data)


# -- end-to-end smoke --------------------------------------------------------


@pytest.fixture(scope="module")
def toy_data(tiny_cfg_module):
    cfg = tiny_cfg_module
    cb, cu = make_calibration(cfg.n_tx, cfg.n_rx)
    traces = build_traces(cfg, ChannelModelConfig(calib_bs=cb, calib_ue=cu), 4)
    return cfg, split_windows(traces, TrainConfig(split=(2, 1, 1)))


def test_sfcen_training_reproducible_and_persisted(toy_data, tmp_path):
    cfg, (tr, va, _) = toy_data
    pat = build_srs_pattern(cfg, 2, 2)
    tc = TrainConfig(batch=4, lr0=1e-3, epochs=3, split=(2, 1, 1), snr_db=20.0)
    runs = []
    for k in range(2):
        net = KddSfcen(SfcenConfig.for_pattern(cfg, pat, d_sr=8, d_fr=8, n_heads=2))
        runs.append(train_sfcen(net, tr, va, pat, tc, out_dir=tmp_path / str(k)))
    assert runs[0].log == runs[1].log
    ck = load_tensors(tmp_path / "0" / "sfcen.ckpt")
    assert set(ck) == set(net.store)
    assert (tmp_path / "0" / "sfcen_loss.csv").read_text().count("\n") == 4
    assert file_sha256(tmp_path / "0" / "sfcen.ckpt") == file_sha256(tmp_path / "1" / "sfcen.ckpt")


@pytest.mark.parametrize("mode,joint", [("rollout", False), ("teacher", False), ("rollout", True)])
def test_tudcen_training_runs(toy_data, mode, joint):
    cfg, (tr, va, _) = toy_data
    pat = build_srs_pattern(cfg, 2, 2)
    m = Tudcen(TudcenConfig(UdccnConfig(3, 2), SfseConfig(cfg.n_tx, cfg.n_rx, cfg.n_sc, 2, 4, 8),
                            GenTransformerConfig(1, 8, 2, 16, 0.1, 0.1, 7)))
    frozen = {n: m.store[n].data.copy() for n in m.param_names("udccn")}
    tc = TrainConfig(batch=4, lr0=1e-3, epochs=2, split=(2, 1, 1), dcen_mode=mode, joint=joint)
    from mxlab.training import train_dcen
    res = train_dcen(m, tr, va, pat, tc)
    assert len(res.log) == 2 and np.isfinite(res.best_valid)
    same = all(np.array_equal(frozen[n], m.store[n].data) for n in frozen)
    assert same != joint
    r_u, r_d = train_tudcen(m, tr, va, pat, tc)
    assert r_u.best_epoch >= 0 and r_d.best_epoch >= 0
