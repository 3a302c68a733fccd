"""Windowed datasets, the three training losses and the training loops.

Traces are split by channel instance so no sub-frame of a test trace is ever
seen during training. Every random draw (batch order, pilot noise,
augmentation, dropout) comes from one generator seeded by
:attr:`TrainConfig.seed`, which makes loss curves reproducible.
"""

from __future__ import annotations

import dataclasses
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .baselines import ls_estimate
from .channel import ChannelTrace, generate_channel_trace
from .config import ChannelModelConfig, ConfigError, SystemConfig
from .container import save_tensors
from .layers import complex_to_real
from .pilots import SrsPattern, observe_pilots
from .sfcen import KddSfcen
from .tudcen import Tudcen

log = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    """Raised when a training loss becomes NaN or infinite."""


@dataclass(frozen=True)
class TrainConfig:
    batch: int = 64
    lr0: float = 6e-5
    epochs: int = 200
    patience: int = 20
    seed: int = 0
    window_len: int = 8
    stride: int = 8
    split: tuple = (90, 5, 5)        # channel instances (traces), not windows
    snr_db: float = 5.0
    snr_random: bool = False
    snr_range_db: tuple = (-5.0, 20.0)
    augment: bool = True
    lr_floor: float = 0.1
    dcen_mode: str = "rollout"      # or "teacher"
    joint: bool = False

    def __post_init__(self):
        if self.batch < 1:
            raise ConfigError("train.batch must be >= 1")
        if self.window_len != self.stride:
            raise ConfigError("train.window_len must equal train.stride (disjoint windows)")
        if self.epochs < 1 or self.patience < 1:
            raise ConfigError("train.epochs and train.patience must be >= 1")
        if self.dcen_mode not in ("rollout", "teacher"):
            raise ConfigError(f"train.dcen_mode must be 'rollout' or 'teacher', got {self.dcen_mode!r}")
        if len(self.split) != 3 or min(self.split) < 0 or self.split[0] < 1:
            raise ConfigError(f"train.split must be three counts with n_train >= 1, got {self.split}")

    def replace(self, **changes) -> "TrainConfig":
        return dataclasses.replace(self, **changes)


# ---------------------------------------------------------------------------
# data


@dataclass
class WindowSet:
    """One window per sub-frame.

    uplink   : complex [W, N_slot, N_T, N_R, N_c]
    downlink : complex [W, N_slot, N_R, N_T, N_c]
    trace_id : int [W]
    """

    uplink: np.ndarray
    downlink: np.ndarray
    trace_id: np.ndarray

    def __len__(self):
        return len(self.trace_id)

    @property
    def uplink0(self) -> np.ndarray:
        return self.uplink[:, 0]

    def subset(self, idx) -> "WindowSet":
        return WindowSet(self.uplink[idx], self.downlink[idx], self.trace_id[idx])

    @staticmethod
    def concat(sets) -> "WindowSet":
        sets = list(sets)
        return WindowSet(np.concatenate([s.uplink for s in sets]),
                         np.concatenate([s.downlink for s in sets]),
                         np.concatenate([s.trace_id for s in sets]))


def make_windows(trace: ChannelTrace, cfg: TrainConfig, trace_id: int = 0) -> WindowSet:
    """Cut a trace into disjoint windows of ``window_len`` slots (one per sub-frame)."""
    n_sf, n_slot = trace.uplink.shape[:2]
    if cfg.window_len != n_slot:
        raise ConfigError(f"window length {cfg.window_len} must equal N_slot={n_slot}")
    ul = np.asarray(trace.uplink).reshape(n_sf * n_slot, *trace.uplink.shape[2:])
    dl = np.asarray(trace.downlink).reshape(n_sf * n_slot, *trace.downlink.shape[2:])
    starts = np.arange(0, n_sf * n_slot - cfg.window_len + 1, cfg.stride)
    idx = starts[:, None] + np.arange(cfg.window_len)[None, :]
    return WindowSet(ul[idx], dl[idx], np.full(len(starts), trace_id))


def build_traces(cfg: SystemConfig, model: ChannelModelConfig, n_traces: int, seed: int = 0):
    """Independent channel instances with seeds ``seed, seed+1, ...``; hardware shared."""
    return [generate_channel_trace(cfg, model.replace(seed=seed + i)) for i in range(n_traces)]


def split_windows(traces, cfg: TrainConfig):
    """``(train, valid, test)`` window sets, split by trace in order."""
    n_tr, n_va, n_te = cfg.split
    if n_tr + n_va + n_te > len(traces):
        raise ConfigError(f"split {cfg.split} needs {n_tr + n_va + n_te} traces, got {len(traces)}")
    wins = [make_windows(t, cfg, i) for i, t in enumerate(traces)]
    parts = (wins[:n_tr], wins[n_tr:n_tr + n_va], wins[n_tr + n_va:n_tr + n_va + n_te])
    return tuple(WindowSet.concat(p) if p else None for p in parts)


# ---------------------------------------------------------------------------
# losses


def _real(x):
    """Tensor as-is; complex arrays become ``[B, 2, ...]`` real views."""
    if isinstance(x, ad.Tensor):
        return x
    x = np.asarray(x)
    return ad.Tensor(complex_to_real(x, axis=1)) if np.iscomplexobj(x) else ad.Tensor(x)


def _per_sample_sq(diff):
    axes = tuple(range(1, diff.ndim))
    return ad.sum_(ad.square(diff), axis=axes)


def loss_mse_sfcen(pred, truth):
    """Batch mean of the squared Frobenius error."""
    pred, truth = _real(pred), _real(truth)
    return ad.mean(_per_sample_sq(ad.sub(pred, truth)))


def _nmse_terms(pred, truth):
    pred, truth = _real(pred), _real(truth)
    axes = tuple(range(1, truth.ndim))
    den = np.sum(truth.data ** 2, axis=axes)
    if np.any(den <= 0):
        raise ValueError("NMSE loss needs nonzero truth samples")
    return ad.mul(_per_sample_sq(ad.sub(pred, truth)), 1.0 / den)


def loss_nmse_udccn(pred, truth):
    return ad.mean(_nmse_terms(pred, truth))


def loss_nmse_dcen(preds, truths):
    """``preds``/``truths`` are sequences over slots ``2..N_slot-1`` of ``[B, ...]`` items."""
    if len(preds) != len(truths) or not preds:
        raise ValueError("need matching, non-empty slot sequences")
    total = _nmse_terms(preds[0], truths[0])
    for p, t in zip(preds[1:], truths[1:]):
        total = ad.add(total, _nmse_terms(p, t))
    return ad.mean(ad.scale(total, 1.0 / len(preds)))


# ---------------------------------------------------------------------------
# generic loop


@dataclass
class TrainResult:
    log: list = field(default_factory=list)      # dicts: epoch, train_loss, valid_loss, lr
    best_epoch: int = -1
    best_valid: float = math.inf
    best_state: dict = field(default_factory=dict)

    def write_csv(self, path):
        with open(path, "w") as fh:
            fh.write("epoch,train_loss,valid_loss,lr\n")
            for r in self.log:
                fh.write(f"{r['epoch']},{r['train_loss']:.9e},{r['valid_loss']:.9e},{r['lr']:.6e}\n")


def _check_finite(value, where):
    if not np.isfinite(value):
        raise TrainingDiverged(f"non-finite loss ({value}) during {where}")


def fit(store: ad.ParamStore, names, step_loss, valid_loss, n_train: int, cfg: TrainConfig,
        rng: np.random.Generator, tag: str, on_epoch=None) -> TrainResult:
    """Adam with cosine decay, per-epoch validation, early stopping.

    ``step_loss(idx, rng)`` returns a scalar Tensor for the batch ``idx``;
    ``valid_loss()`` returns a float; ``on_epoch(rng)``, if given, runs before
    each epoch. The parameters in ``names`` end at the best-validation state.
    """
    names = list(names)
    per_epoch = math.ceil(n_train / cfg.batch)
    total = cfg.epochs * per_epoch
    res = TrainResult()
    stale, step = 0, 0
    for epoch in range(cfg.epochs):
        if on_epoch is not None:
            on_epoch(rng)
        order = rng.permutation(n_train)
        run, seen = 0.0, 0
        lr = cfg.lr0
        for b in range(per_epoch):
            idx = np.sort(order[b * cfg.batch:(b + 1) * cfg.batch])
            loss = step_loss(idx, rng)
            _check_finite(float(loss.data), f"{tag} epoch {epoch}")
            loss.backward()
            lr = ad.cosine_lr(cfg.lr0, step, total, cfg.lr_floor)
            ad.adam_step(store, lr, names=names)
            store.zero_grad()
            step += 1
            run += float(loss.data) * len(idx)
            seen += len(idx)
        v = float(valid_loss())
        _check_finite(v, f"{tag} validation at epoch {epoch}")
        res.log.append({"epoch": epoch, "train_loss": run / seen, "valid_loss": v, "lr": lr})
        log.info("%s epoch %d train %.4e valid %.4e", tag, epoch, run / seen, v)
        if v < res.best_valid:
            res.best_valid, res.best_epoch, stale = v, epoch, 0
            res.best_state = {n: store[n].data.copy() for n in names}
        else:
            stale += 1
            if stale >= cfg.patience:
                break
    store.load_state_dict(res.best_state, strict=False)
    return res


def _augment(rng, arrays, tx_axes, rx_axes, flip=True):
    """Common random phase plus optional antenna-order reversal on every array.

    Reversing a half-wavelength ULA maps angle ``theta`` to ``-theta`` up to a
    phase, which leaves a symmetric sector distribution unchanged.
    """
    b = arrays[0].shape[0]
    phase = np.exp(2j * np.pi * rng.random(b))
    ftx = rng.random(b) < 0.5 if flip else np.zeros(b, bool)
    frx = rng.random(b) < 0.5 if flip else np.zeros(b, bool)
    out = []
    for a, at, ar in zip(arrays, tx_axes, rx_axes):
        a = a * phase.reshape((b,) + (1,) * (a.ndim - 1))
        a = np.where(ftx.reshape((b,) + (1,) * (a.ndim - 1)), np.flip(a, at), a)
        a = np.where(frx.reshape((b,) + (1,) * (a.ndim - 1)), np.flip(a, ar), a)
        out.append(a)
    return out


def _train_snr(cfg: TrainConfig, rng):
    if cfg.snr_random:
        return float(rng.uniform(*cfg.snr_range_db))
    return cfg.snr_db


def _seed(rng) -> int:
    return int(rng.integers(2**31))


# ---------------------------------------------------------------------------
# KDD-SFCEN


def train_sfcen(model: KddSfcen, train: WindowSet, valid: WindowSet, pattern: SrsPattern,
                cfg: TrainConfig, out_dir=None) -> TrainResult:
    """Fit the uplink extrapolator on slot-0 channels with fresh pilot noise every batch."""
    rng = np.random.default_rng(cfg.seed)
    truth_tr = train.uplink0
    valid_obs = observe_pilots(valid.uplink0, pattern, cfg.snr_db, seed=cfg.seed + 1)
    valid_ls = ls_estimate(valid_obs).h_ls

    def step_loss(idx, rng):
        h = truth_tr[idx]
        if cfg.augment:
            (h,) = _augment(rng, [h], [-3], [-2])
        obs = observe_pilots(h, pattern, _train_snr(cfg, rng), seed=_seed(rng))
        pred = model.forward(ls_estimate(obs).h_ls, train=True, rng=rng)
        return loss_mse_sfcen(pred, h)

    def valid_loss():
        total = 0.0
        for i in range(0, len(valid), 64):
            pred = model.forward(valid_ls[i:i + 64])
            total += float(loss_mse_sfcen(pred, valid.uplink0[i:i + 64]).data) * len(pred.data)
        return total / len(valid)

    res = fit(model.store, list(model.store), step_loss, valid_loss, len(train), cfg, rng, "sfcen")
    _persist(out_dir, "sfcen", model.store, res)
    return res


# ---------------------------------------------------------------------------
# TUDCEN


def uplink_estimates(ws: WindowSet, pattern: SrsPattern, snr_db: float, seed: int,
                     sfcen: KddSfcen | None = None, method=None) -> np.ndarray:
    """Slot-0 uplink estimates fed to the calibration network.

    ``sfcen`` given: its estimate from noisy pilots. ``method`` given: the
    LS+interpolation baseline. Neither: the ground-truth uplink channel.
    """
    if sfcen is None and method is None:
        return ws.uplink0.copy()
    obs = observe_pilots(ws.uplink0, pattern, snr_db, seed=seed)
    if sfcen is not None:
        return sfcen.estimate(obs)
    from .baselines import baseline_estimate
    return baseline_estimate(obs, pattern, method, ws.uplink0.shape[-1])


def _udccn_predict(model: Tudcen, h_ul, batch=64):
    out = []
    for i in range(0, len(h_ul), batch):
        y = model.calibrate(complex_to_real(h_ul[i:i + batch], axis=1)).data
        out.append(y[:, 0] + 1j * y[:, 1])
    return np.concatenate(out)


def train_udccn(model: Tudcen, train: WindowSet, valid: WindowSet, pattern: SrsPattern,
                cfg: TrainConfig, sfcen: KddSfcen | None = None, out_dir=None) -> TrainResult:
    rng = np.random.default_rng(cfg.seed)
    names = model.param_names("udccn")
    valid_in = uplink_estimates(valid, pattern, cfg.snr_db, cfg.seed + 1, sfcen)
    epoch_in = {"ul": train.uplink0}

    def refresh(rng):
        if sfcen is not None:
            epoch_in["ul"] = uplink_estimates(train, pattern, _train_snr(cfg, rng), _seed(rng), sfcen)

    def step_loss(idx, rng):
        x, y = epoch_in["ul"][idx], train.downlink[idx, 1]
        if cfg.augment:
            x, y = _augment(rng, [x, y], [-3, -2], [-2, -3], flip=False)
        pred = model.calibrate(complex_to_real(x, axis=1), train=True)
        return loss_nmse_udccn(pred, y)

    def valid_loss():
        pred = _udccn_predict(model, valid_in)
        return float(loss_nmse_udccn(pred, valid.downlink[:, 1]).data)

    res = fit(model.store, names, step_loss, valid_loss, len(train), cfg, rng, "udccn", refresh)
    _persist(out_dir, "udccn", model.store, res)
    return res


def dcen_loss(model: Tudcen, x1, truth_seq, cfg: TrainConfig, train=False, rng=None):
    """NMSE over slots ``2..N_slot-1``.

    x1        : real slot-1 input ``[B, 2, N_R, N_T, N_c]`` (rollout seed)
    truth_seq : complex downlink ``[B, N_slot, N_R, N_T, N_c]``
    """
    n_slot = truth_seq.shape[1]
    truths = [truth_seq[:, t] for t in range(2, n_slot)]
    if cfg.dcen_mode == "teacher":
        seq = complex_to_real(truth_seq[:, 1:n_slot - 1], axis=2)
        out = model.teacher_forced(seq, train, rng)
        preds = [out[:, j] for j in range(n_slot - 2)]
    else:
        preds = model.rollout(x1, n_slot - 2, train, rng)
    return loss_nmse_dcen(preds, truths)


def train_dcen(model: Tudcen, train: WindowSet, valid: WindowSet, pattern: SrsPattern,
               cfg: TrainConfig, sfcen: KddSfcen | None = None, out_dir=None) -> TrainResult:
    """Fit the downlink extrapolator with the calibration network frozen.

    Rollouts start from the calibrated slot-1 estimate, refreshed with new
    pilot noise every epoch. With ``cfg.joint`` both networks are updated.
    """
    rng = np.random.default_rng(cfg.seed + 17)
    names = list(model.store) if cfg.joint else model.param_names("dcen")
    valid_x1 = _udccn_predict(model, uplink_estimates(valid, pattern, cfg.snr_db, cfg.seed + 1, sfcen))
    state = {}

    def refresh(rng):
        state["ul"] = uplink_estimates(train, pattern, _train_snr(cfg, rng), _seed(rng), sfcen)
        if not cfg.joint:
            state["x1"] = _udccn_predict(model, state["ul"])

    def step_loss(idx, rng):
        seq = train.downlink[idx]
        if cfg.joint:
            ul = state["ul"][idx]
            if cfg.augment:
                ul, seq = _augment(rng, [ul, seq], [-3, -2], [-2, -3], flip=False)
            x1 = model.calibrate(complex_to_real(ul, axis=1), train=True)
            l2 = loss_nmse_udccn(x1, seq[:, 1])
            return ad.add(l2, dcen_loss(model, x1, seq, cfg, True, rng))
        x1 = state["x1"][idx]
        if cfg.augment:
            x1, seq = _augment(rng, [x1, seq], [-2, -2], [-3, -3])
        return dcen_loss(model, complex_to_real(x1, axis=1), seq, cfg, True, rng)

    def valid_loss():
        total = 0.0
        for i in range(0, len(valid), 64):
            seq = valid.downlink[i:i + 64]
            x1 = complex_to_real(valid_x1[i:i + 64], axis=1)
            total += float(dcen_loss(model, x1, seq, cfg.replace(dcen_mode="rollout")).data) * len(seq)
        return total / len(valid)

    res = fit(model.store, names, step_loss, valid_loss, len(train), cfg, rng, "dcen", refresh)
    _persist(out_dir, "dcen", model.store, res)
    return res


def train_tudcen(model: Tudcen, train: WindowSet, valid: WindowSet, pattern: SrsPattern,
                 cfg: TrainConfig, sfcen: KddSfcen | None = None, out_dir=None):
    """Calibration network first, then the extrapolator on its frozen outputs."""
    r_u = train_udccn(model, train, valid, pattern, cfg, sfcen, out_dir)
    r_d = train_dcen(model, train, valid, pattern, cfg, sfcen, out_dir)
    return r_u, r_d


def _persist(out_dir, tag, store, res: TrainResult):
    if out_dir is None:
        return
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_tensors(out / f"{tag}.ckpt", store.state_dict())
    res.write_csv(out / f"{tag}_loss.csv")
