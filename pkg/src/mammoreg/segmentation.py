"""Breast/background separation: border noise statistics, thresholding and
disc-adjacency connected components."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage, sparse
from scipy.sparse import csgraph

from .image import Image, Mask


class SegmentationError(RuntimeError):
    pass


@dataclass(frozen=True)
class SegmentationParams:
    border: int = 10
    n_std: float = 12.0
    radius: int = 3
    std_floor: float = 1e-3


@dataclass(frozen=True, eq=False)
class LabelMap:
    labels: np.ndarray
    count: int

    @property
    def shape(self):
        return self.labels.shape


def estimate_background_stats(image: Image, border: int) -> tuple[float, float]:
    """Mean and population std of the ``border``-pixel frame around the image."""
    h, w = image.shape
    if border < 1 or 2 * border >= min(h, w):
        raise ValueError(f"border {border} too large for a {w}x{h} image")
    frame = np.ones((h, w), dtype=bool)
    frame[border:-border, border:-border] = False
    vals = image.data[frame]
    return float(vals.mean()), float(vals.std())


def threshold_mask(image: Image, threshold: float) -> Mask:
    return Mask(image.data > threshold)


def connected_components(mask: Mask, radius: int = 3) -> LabelMap:
    """Label foreground; pixels are adjacent when within Euclidean ``radius``.

    Labels run 1..K in raster order of each component's first pixel.
    """
    if radius < 1:
        raise ValueError(f"radius must be >= 1, got {radius}")
    fg = mask.data
    h, w = fg.shape
    labels = np.zeros((h, w), dtype=np.int64)
    idx = np.flatnonzero(fg)
    if idx.size == 0:
        return LabelMap(labels, 0)
    node = np.full(h * w, -1, dtype=np.int64)
    node[idx] = np.arange(idx.size)
    node = node.reshape(h, w)
    src, dst = [np.empty(0, np.int64)], [np.empty(0, np.int64)]
    r = int(radius)
    # Half of the disc suffices: adjacency is symmetric.
    for dy in range(0, r + 1):
        for dx in range(-r, r + 1):
            if (dy == 0 and dx <= 0) or dx * dx + dy * dy > radius * radius:
                continue
            if dy >= h or abs(dx) >= w:
                continue
            a = node[: h - dy, max(0, -dx) : w - max(0, dx)]
            b = node[dy:, max(0, dx) : w + min(0, dx)]
            both = (a >= 0) & (b >= 0)
            src.append(a[both])
            dst.append(b[both])
    src = np.concatenate(src)
    dst = np.concatenate(dst)
    graph = sparse.coo_matrix((np.ones(src.size, dtype=np.int8), (src, dst)), shape=(idx.size, idx.size))
    count, comp = csgraph.connected_components(graph, directed=False)
    # Renumber 1..K by first raster occurrence (idx is already in raster order).
    _, first = np.unique(comp, return_index=True)
    order = np.empty(count, dtype=np.int64)
    order[comp[np.sort(first)]] = np.arange(1, count + 1)
    labels.ravel()[idx] = order[comp]
    return LabelMap(labels, int(count))


def fill_holes(mask: Mask) -> Mask:
    """Background pixels not reachable from the image border become foreground."""
    return Mask(ndimage.binary_fill_holes(mask.data))


def segment_breast(image: Image, params: SegmentationParams | None = None) -> Mask:
    """Largest bright component above ``mean + n_std * std`` of the border frame,
    with enclosed holes filled."""
    p = params or SegmentationParams()
    if image.width < 32 or image.height < 32:
        raise ValueError("segment_breast needs an image of at least 32x32")
    mean, std = estimate_background_stats(image, p.border)
    threshold = mean + p.n_std * std if std > 0 else mean + p.std_floor
    fg = threshold_mask(image, threshold)
    if not fg.data.any():
        raise SegmentationError(f"no foreground above threshold {threshold:.4g}")
    lab = connected_components(fg, p.radius)
    areas = np.bincount(lab.labels.ravel(), minlength=lab.count + 1)
    areas[0] = 0
    keep = lab.labels == int(np.argmax(areas))
    return fill_holes(Mask(keep))
