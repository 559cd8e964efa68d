"""Similarity measures over a mask: SSD, Pearson correlation, Shannon
entropies and mutual information from a hard-binned joint histogram."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .image import Image, Mask

MI_BINS = 64
JEH_BINS = 256


@dataclass(frozen=True, eq=False)
class JointHistogram:
    """Counts indexed ``[fixed_bin, moving_bin]``."""

    counts: np.ndarray

    @property
    def bins(self) -> int:
        return self.counts.shape[0]

    @property
    def n(self) -> int:
        return int(self.counts.sum())

    @property
    def marginal_f(self) -> np.ndarray:
        return self.counts.sum(axis=1)

    @property
    def marginal_m(self) -> np.ndarray:
        return self.counts.sum(axis=0)


@dataclass(frozen=True)
class MetricReport:
    ssd: float
    cc: float
    mi: float
    h_joint: float
    n_pixels: int
    cc_degenerate: bool = False


def _masked_pair(fixed: Image, moving: Image, mask: Mask | None, min_count: int = 1):
    if fixed.shape != moving.shape:
        raise ValueError(f"image dims differ: {fixed.shape} vs {moving.shape}")
    if mask is None:
        return fixed.data.ravel(), moving.data.ravel()
    if mask.shape != fixed.shape:
        raise ValueError(f"mask dims {mask.shape} do not match image dims {fixed.shape}")
    sel = mask.data
    n = int(sel.sum())
    if n < min_count:
        raise ValueError(f"mask selects {n} pixels, need at least {min_count}")
    return fixed.data[sel], moving.data[sel]


def ssd(fixed: Image, moving: Image, mask: Mask | None = None) -> float:
    """Mean squared intensity difference over the mask."""
    f, m = _masked_pair(fixed, moving, mask)
    d = f - m
    return float(np.dot(d, d) / d.size)


def correlation(fixed: Image, moving: Image, mask: Mask | None = None, with_flag: bool = False):
    """Pearson correlation over the mask.

    Returns 0 when either side has zero variance; with ``with_flag`` the
    result is ``(cc, degenerate)``.
    """
    f, m = _masked_pair(fixed, moving, mask, min_count=2)
    df = f - f.mean()
    dm = m - m.mean()
    sff = np.dot(df, df)
    smm = np.dot(dm, dm)
    if sff == 0.0 or smm == 0.0:
        cc, degenerate = 0.0, True
    else:
        cc = float(np.clip(np.dot(df, dm) / np.sqrt(sff * smm), -1.0, 1.0))
        degenerate = False
    return (cc, degenerate) if with_flag else cc


def bin_index(values: np.ndarray, bins: int) -> np.ndarray:
    return np.minimum((values * bins).astype(np.intp), bins - 1)


def joint_histogram(fixed: Image, moving: Image, mask: Mask | None = None, bins: int = MI_BINS) -> JointHistogram:
    if bins < 2:
        raise ValueError(f"bins must be >= 2, got {bins}")
    f, m = _masked_pair(fixed, moving, mask)
    flat = bin_index(f, bins) * bins + bin_index(m, bins)
    counts = np.bincount(flat, minlength=bins * bins).reshape(bins, bins)
    return JointHistogram(counts)


def _entropy_bits(counts: np.ndarray, n: float) -> float:
    c = counts[counts > 0].astype(np.float64)
    p = c / n
    return float(-np.sum(p * np.log2(p)))


def entropy(hist: JointHistogram, which: str = "joint") -> float:
    """Shannon entropy in bits of the joint table or one of its marginals."""
    n = hist.n
    if n < 1:
        raise ValueError("histogram is empty")
    table = {"joint": hist.counts, "marginal_f": hist.marginal_f, "marginal_m": hist.marginal_m}
    try:
        counts = table[which]
    except KeyError:
        raise ValueError(f"unknown entropy kind {which!r}") from None
    return _entropy_bits(counts, n)


def mi_from_hist(hist: JointHistogram) -> float:
    n = hist.n
    h_f = _entropy_bits(hist.marginal_f, n)
    h_m = _entropy_bits(hist.marginal_m, n)
    h_fm = _entropy_bits(hist.counts, n)
    return h_f + h_m - h_fm


def mutual_information(fixed: Image, moving: Image, mask: Mask | None = None, bins: int = MI_BINS) -> float:
    """MI = H(f) + H(m) - H(f, m), in bits."""
    return mi_from_hist(joint_histogram(fixed, moving, mask, bins))


def metric_report(fixed: Image, moving: Image, mask: Mask | None = None, bins: int = MI_BINS) -> MetricReport:
    hist = joint_histogram(fixed, moving, mask, bins)
    cc, degenerate = correlation(fixed, moving, mask, with_flag=True)
    return MetricReport(
        ssd=ssd(fixed, moving, mask),
        cc=cc,
        mi=mi_from_hist(hist),
        h_joint=entropy(hist, "joint"),
        n_pixels=hist.n,
        cc_degenerate=degenerate,
    )


def jeh_image(hist: JointHistogram, size: int = 512) -> Image:
    """Log-scaled joint histogram picture, nearest-neighbour upscaled.

    Columns follow the fixed intensity, rows the moving intensity; the
    low/low corner sits bottom-left.
    """
    bins = hist.bins
    if size < bins:
        raise ValueError(f"size {size} smaller than bin count {bins}")
    peak = hist.counts.max()
    if peak <= 0:
        raise ValueError("joint histogram is empty")
    img = np.log1p(hist.counts.astype(np.float64)) / np.log1p(float(peak))
    # [fixed, moving] -> rows = moving (flipped so low is at the bottom), cols = fixed
    img = img.T[::-1, :]
    idx = np.arange(size) * bins // size
    return Image(np.clip(img[np.ix_(idx, idx)], 0.0, 1.0), (1.0, 1.0))
