"""Estimation and link-level metrics: NMSE in dB, SVD precoding and sum-rate."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

log = logging.getLogger(__name__)

NMSE_FLOOR_DB = -120.0
NMSE_CEIL_DB = 40.0


def per_sample_nmse(truth, estimate, sample_ndim: int | None = None) -> np.ndarray:
    """Normalized squared error of every sample.

    The trailing three axes form one channel matrix unless ``sample_ndim``
    says how many leading axes index samples. Zero-truth samples yield NaN.
    """
    truth = np.asarray(truth)
    estimate = np.asarray(estimate)
    if truth.shape != estimate.shape:
        raise ValueError(f"shape mismatch: truth {truth.shape} vs estimate {estimate.shape}")
    k = truth.ndim - 3 if sample_ndim is None else sample_ndim
    axes = tuple(range(k, truth.ndim))
    num = np.sum(np.abs(truth - estimate) ** 2, axis=axes)
    den = np.sum(np.abs(truth) ** 2, axis=axes)
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(den > 0, num / np.where(den > 0, den, 1.0), np.nan)


def to_db(ratio: float) -> float:
    if ratio <= 0:
        return NMSE_FLOOR_DB
    return float(np.clip(10 * np.log10(ratio), NMSE_FLOOR_DB, NMSE_CEIL_DB))


def nmse_db(truth, estimate, sample_ndim: int | None = None) -> float:
    """Mean per-sample NMSE in dB, clamped to [-120, 40] dB; zero-truth samples skipped."""
    e = per_sample_nmse(truth, estimate, sample_ndim)
    bad = np.isnan(e)
    if bad.all():
        raise ValueError("every truth sample is identically zero")
    if bad.any():
        log.warning("excluding %d zero-truth sample(s) from NMSE", int(bad.sum()))
    return to_db(float(np.mean(e[~bad])))


def svd_precoder(h_dl, n_streams: int | None = None) -> np.ndarray:
    """First ``n_streams`` right singular vectors of ``[..., N_R, N_T]`` -> ``[..., N_T, N_s]``."""
    h = np.asarray(h_dl)
    n_r = h.shape[-2]
    n_s = n_r if n_streams is None else n_streams
    if not 1 <= n_s <= min(h.shape[-2:]):
        raise ValueError(f"n_streams={n_s} must lie in [1, {min(h.shape[-2:])}]")
    _, _, vh = np.linalg.svd(h, full_matrices=False)
    return np.swapaxes(vh[..., :n_s, :], -1, -2).conj()


def sum_rate(h_true, precoder, sigma_n2: float) -> np.ndarray:
    """``log2 det(I + H F F^H H^H / (N_R sigma^2))`` per matrix, bps/Hz.

    ``h_true`` is ``[..., N_R, N_T]`` and ``precoder`` ``[..., N_T, N_s]``.
    """
    h = np.asarray(h_true)
    f = np.asarray(precoder)
    n_r = h.shape[-2]
    hf = h @ f
    g = hf @ np.swapaxes(hf, -1, -2).conj() / (n_r * sigma_n2)
    g = 0.5 * (g + np.swapaxes(g, -1, -2).conj())       # guard against round-off asymmetry
    sign, logdet = np.linalg.slogdet(np.eye(n_r) + g)
    if np.any(sign.real <= 0):
        raise FloatingPointError("non-positive determinant in sum-rate")
    return logdet / np.log(2)


def slot_sum_rate(h_true, h_est, sigma_n2: float, n_streams: int | None = None) -> float:
    """Average rate of downlink channels ``[..., N_R, N_T, N_c]`` precoded from ``h_est``.

    Per-subcarrier rates are averaged within a slot, then over samples.
    """
    ht = np.moveaxis(np.asarray(h_true), -1, -3)        # [..., N_c, N_R, N_T]
    he = np.moveaxis(np.asarray(h_est), -1, -3)
    return float(np.mean(sum_rate(ht, svd_precoder(he, n_streams), sigma_n2)))


@dataclass
class MetricsReport:
    """Per-axis, per-slot, per-method results of one sweep."""

    kind: str
    axes: list
    slots: list
    nmse_db: dict = field(default_factory=dict)     # method -> [len(axes), len(slots)]
    sum_rate: dict = field(default_factory=dict)    # method -> [len(axes), len(slots)]
    overhead: dict = field(default_factory=dict)
    runtime_s: float = 0.0
    notes: list = field(default_factory=list)
    axis_name: str = ""                             # CSV header of the axis column; defaults to kind

    def __post_init__(self):
        self.check()

    def check(self):
        shape = (len(self.axes), len(self.slots))
        for table in (self.nmse_db, self.sum_rate):
            for m, v in table.items():
                v = np.asarray(v, float)
                if v.shape != shape:
                    raise ValueError(f"{m}: shape {v.shape} != {shape}")
        for v in self.nmse_db.values():
            finite = np.asarray(v, float)[np.isfinite(np.asarray(v, float))]
            if np.any(finite < NMSE_FLOOR_DB) or np.any(finite > NMSE_CEIL_DB):
                raise ValueError("NMSE outside the clamp range")

    def rows(self):
        """``(axis, slot, method, nmse_db, sum_rate)`` tuples in a stable order."""
        methods = sorted(set(self.nmse_db) | set(self.sum_rate))
        for i, a in enumerate(self.axes):
            for j, t in enumerate(self.slots):
                for m in methods:
                    n = self.nmse_db.get(m)
                    r = self.sum_rate.get(m)
                    yield (a, t, m, np.nan if n is None else float(np.asarray(n)[i, j]),
                           np.nan if r is None else float(np.asarray(r)[i, j]))

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            for note in self.notes:
                fh.write(f"# {note}\n")
            fh.write(f"{self.axis_name or self.kind},slot,method,nmse_db,sum_rate_bps_hz\n")
            for a, t, m, n, r in self.rows():
                fh.write(f"{a},{t},{m},{n:.6f},{r:.6f}\n")


def write_svg(path, x, series: dict, xlabel: str, ylabel: str, width=560, height=380):
    """Minimal line chart; ``series`` maps a label to y values aligned with ``x``."""
    x = np.asarray(x, float)
    ys = {k: np.asarray(v, float) for k, v in series.items()}
    finite = np.concatenate([v[np.isfinite(v)] for v in ys.values()] or [np.zeros(1)])
    y0, y1 = (finite.min(), finite.max()) if finite.size else (0.0, 1.0)
    if y1 - y0 < 1e-9:
        y0, y1 = y0 - 1, y1 + 1
    x0, x1 = x.min(), x.max() if x.max() > x.min() else x.min() + 1
    ml, mr, mt, mb = 60, 140, 20, 45
    pw, ph = width - ml - mr, height - mt - mb

    def px(v):
        return ml + (v - x0) / (x1 - x0) * pw

    def py(v):
        return mt + (1 - (v - y0) / (y1 - y0)) * ph

    colors = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#17becf"]
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
           'font-family="sans-serif" font-size="11">',
           f'<rect x="{ml}" y="{mt}" width="{pw}" height="{ph}" fill="none" stroke="#444"/>']
    for v in x:
        out.append(f'<text x="{px(v):.1f}" y="{mt + ph + 15}" text-anchor="middle">{v:g}</text>')
    for v in np.linspace(y0, y1, 5):
        out.append(f'<text x="{ml - 5}" y="{py(v) + 4:.1f}" text-anchor="end">{v:.1f}</text>')
    out.append(f'<text x="{ml + pw / 2}" y="{height - 8}" text-anchor="middle">{xlabel}</text>')
    out.append(f'<text x="14" y="{mt + ph / 2}" transform="rotate(-90 14 {mt + ph / 2})" '
               f'text-anchor="middle">{ylabel}</text>')
    for k, (label, y) in enumerate(ys.items()):
        c = colors[k % len(colors)]
        pts = " ".join(f"{px(a):.1f},{py(b):.1f}" for a, b in zip(x, y) if np.isfinite(b))
        out.append(f'<polyline fill="none" stroke="{c}" stroke-width="1.5" points="{pts}"/>')
        ly = mt + 14 * k + 10
        out.append(f'<line x1="{ml + pw + 10}" y1="{ly}" x2="{ml + pw + 28}" y2="{ly}" stroke="{c}"/>')
        out.append(f'<text x="{ml + pw + 32}" y="{ly + 4}">{label}</text>')
    out.append("</svg>")
    with open(path, "w") as fh:
        fh.write("\n".join(out) + "\n")
