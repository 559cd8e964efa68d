"""Grid images, masks and vector fields plus the resampling/warping plumbing.

Coordinates are physical (mm). Pixel ``(col, row)`` has its center at
``(origin_x + col * spacing_x, origin_y + row * spacing_y)``. Arrays are stored
row-major with shape ``(height, width)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from . import _fdkernel


def _frozen(arr, dtype) -> np.ndarray:
    out = np.array(arr, dtype=dtype, copy=True)
    out.setflags(write=False)
    return out


def _check_spacing(spacing):
    sx, sy = (float(s) for s in spacing)
    if not (sx > 0 and sy > 0 and math.isfinite(sx) and math.isfinite(sy)):
        raise ValueError(f"spacing must be positive and finite, got {spacing!r}")
    return sx, sy


@dataclass(frozen=True, eq=False)
class Image:
    """2D scalar image with intensities in [0, 1]."""

    data: np.ndarray
    spacing: tuple[float, float] = (0.05, 0.05)
    origin: tuple[float, float] = (0.0, 0.0)

    def __post_init__(self):
        data = _frozen(self.data, np.float64)
        if data.ndim != 2 or data.size == 0:
            raise ValueError(f"image data must be a non-empty 2D array, got shape {data.shape}")
        if not np.all(np.isfinite(data)):
            raise ValueError("image contains non-finite intensities")
        if data.min() < 0.0 or data.max() > 1.0:
            raise ValueError("image intensities must lie in [0, 1]")
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "spacing", _check_spacing(self.spacing))
        object.__setattr__(self, "origin", tuple(float(o) for o in self.origin))

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape

    def with_data(self, data) -> Image:
        """Same geometry, new pixel values."""
        return Image(data, self.spacing, self.origin)

    def coords(self) -> tuple[np.ndarray, np.ndarray]:
        """Physical (x, y) of every pixel center, each shaped like ``data``."""
        return pixel_coords(self.width, self.height, self.spacing, self.origin)

    def __eq__(self, other):
        if not isinstance(other, Image):
            return NotImplemented
        return (
            self.spacing == other.spacing
            and self.origin == other.origin
            and np.array_equal(self.data, other.data)
        )


@dataclass(frozen=True, eq=False)
class Mask:
    """Boolean region of interest aligned with an :class:`Image`."""

    data: np.ndarray

    def __post_init__(self):
        data = _frozen(self.data, bool)
        if data.ndim != 2:
            raise ValueError(f"mask must be 2D, got shape {data.shape}")
        object.__setattr__(self, "data", data)

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape

    @property
    def count(self) -> int:
        return int(self.data.sum())

    @classmethod
    def full(cls, like) -> Mask:
        return cls(np.ones(like.shape, dtype=bool))

    def __eq__(self, other):
        if not isinstance(other, Mask):
            return NotImplemented
        return np.array_equal(self.data, other.data)


@dataclass(frozen=True, eq=False)
class _PlanarField:
    # vectors has shape (2, height, width): x component plane, then y plane.
    vectors: np.ndarray
    spacing: tuple[float, float] = (0.05, 0.05)
    origin: tuple[float, float] = (0.0, 0.0)

    def __post_init__(self):
        vec = _frozen(self.vectors, np.float64)
        if vec.ndim != 3 or vec.shape[0] != 2 or vec.shape[1] == 0 or vec.shape[2] == 0:
            raise ValueError(f"field vectors must have shape (2, h, w), got {vec.shape}")
        if not np.all(np.isfinite(vec)):
            raise ValueError("field contains non-finite components")
        object.__setattr__(self, "vectors", vec)
        object.__setattr__(self, "spacing", _check_spacing(self.spacing))
        object.__setattr__(self, "origin", tuple(float(o) for o in self.origin))

    @property
    def dx(self) -> np.ndarray:
        return self.vectors[0]

    @property
    def dy(self) -> np.ndarray:
        return self.vectors[1]

    @property
    def width(self) -> int:
        return self.vectors.shape[2]

    @property
    def height(self) -> int:
        return self.vectors.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.vectors.shape[1:]

    def magnitude(self) -> np.ndarray:
        return np.hypot(self.vectors[0], self.vectors[1])

    @classmethod
    def zeros_like(cls, image):
        return cls(np.zeros((2,) + tuple(image.shape)), image.spacing, image.origin)

    @classmethod
    def constant_like(cls, image, dx: float, dy: float):
        vec = np.empty((2,) + tuple(image.shape))
        vec[0] = dx
        vec[1] = dy
        return cls(vec, image.spacing, image.origin)

    def __eq__(self, other):
        if type(other) is not type(self):
            return NotImplemented
        return (
            self.spacing == other.spacing
            and self.origin == other.origin
            and np.array_equal(self.vectors, other.vectors)
        )


class DisplacementField(_PlanarField):
    """Backward-mapping displacement in mm: fixed point p samples moving at p + D(p)."""


class VectorField(_PlanarField):
    """Per-pixel intensity gradient in intensity per mm."""


def pixel_coords(width, height, spacing, origin=(0.0, 0.0)):
    xs = origin[0] + np.arange(width) * spacing[0]
    ys = origin[1] + np.arange(height) * spacing[1]
    return np.meshgrid(xs, ys)


def _bilinear_index(data: np.ndarray, u, v) -> np.ndarray:
    """Bilinear lookup at continuous indices (u = column, v = row); zero outside."""
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    u, v = np.broadcast_arrays(u, v)
    out = np.empty(u.shape)
    _fdkernel.bilinear_many(np.ascontiguousarray(data, dtype=np.float64), u.ravel(), v.ravel(), out.reshape(-1))
    return out


def _bilinear_index_numpy(data: np.ndarray, u, v) -> np.ndarray:
    """Reference numpy version of ``_bilinear_index``."""
    h, w = data.shape
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    tol = _fdkernel.EDGE_TOL
    inside = (u >= -tol) & (u <= w - 1 + tol) & (v >= -tol) & (v <= h - 1 + tol)
    uc = np.clip(np.where(inside, u, 0.0), 0.0, w - 1)
    vc = np.clip(np.where(inside, v, 0.0), 0.0, h - 1)
    i0 = np.floor(uc).astype(np.intp)
    j0 = np.floor(vc).astype(np.intp)
    i1 = np.minimum(i0 + 1, w - 1)
    j1 = np.minimum(j0 + 1, h - 1)
    tu = uc - i0
    tv = vc - j0
    # a + t (b - a) keeps constants exact, and t = 0 returns a untouched.
    top = data[j0, i0] + tu * (data[j0, i1] - data[j0, i0])
    bottom = data[j1, i0] + tu * (data[j1, i1] - data[j1, i0])
    out = top + tv * (bottom - top)
    return np.where(inside, out, 0.0)


def sample_bilinear(image: Image, x, y):
    """Bilinear intensity at physical ``(x, y)``; 0 outside the sampled domain.

    Accepts scalars or arrays of matching shape.
    """
    u = (np.asarray(x, dtype=np.float64) - image.origin[0]) / image.spacing[0]
    v = (np.asarray(y, dtype=np.float64) - image.origin[1]) / image.spacing[1]
    out = _bilinear_index(image.data, u, v)
    return float(out) if out.ndim == 0 else out


def _check_dims(new_width, new_height):
    if int(new_width) < 1 or int(new_height) < 1:
        raise ValueError(f"target dimensions must be >= 1, got {new_width}x{new_height}")
    return int(new_width), int(new_height)


def _resampled_geometry(width, height, spacing, origin, new_width, new_height):
    # Each pixel is a cell one spacing wide; the cell footprint is preserved.
    sx = spacing[0] * width / new_width
    sy = spacing[1] * height / new_height
    ox = origin[0] + 0.5 * (sx - spacing[0])
    oy = origin[1] + 0.5 * (sy - spacing[1])
    return (sx, sy), (ox, oy)


def _resample_plane(plane: np.ndarray, new_width, new_height) -> np.ndarray:
    h, w = plane.shape
    # Output cell centers mapped into source index space, clamped to the
    # outermost source centers (they stay within the source footprint).
    u = np.clip((np.arange(new_width) + 0.5) * (w / new_width) - 0.5, 0, w - 1)
    v = np.clip((np.arange(new_height) + 0.5) * (h / new_height) - 0.5, 0, h - 1)
    uu, vv = np.meshgrid(u, v)
    return _bilinear_index(plane, uu, vv)


def resample(image: Image, new_width: int, new_height: int) -> Image:
    """Bilinear resampling to a new grid covering the same physical footprint."""
    new_width, new_height = _check_dims(new_width, new_height)
    if (new_width, new_height) == (image.width, image.height):
        return image
    spacing, origin = _resampled_geometry(
        image.width, image.height, image.spacing, image.origin, new_width, new_height
    )
    data = np.clip(_resample_plane(image.data, new_width, new_height), 0.0, 1.0)
    return Image(data, spacing, origin)


def resample_field(field: DisplacementField, new_width: int, new_height: int) -> DisplacementField:
    """Resample each component; vectors are in mm so magnitudes carry over unchanged."""
    new_width, new_height = _check_dims(new_width, new_height)
    if (new_width, new_height) == (field.width, field.height):
        return field
    spacing, origin = _resampled_geometry(
        field.width, field.height, field.spacing, field.origin, new_width, new_height
    )
    vec = np.stack([_resample_plane(c, new_width, new_height) for c in field.vectors])
    return type(field)(vec, spacing, origin)


def resample_mask(mask: Mask, new_width: int, new_height: int) -> Mask:
    new_width, new_height = _check_dims(new_width, new_height)
    frac = _resample_plane(mask.data.astype(np.float64), new_width, new_height)
    return Mask(frac >= 0.5)


def gradient(image: Image) -> VectorField:
    """Central differences inside, one-sided at the borders, per mm."""
    if image.width < 2 or image.height < 2:
        raise ValueError("gradient needs at least 2 pixels along each axis")
    gy, gx = np.gradient(image.data, image.spacing[1], image.spacing[0])
    return VectorField(np.stack([gx, gy]), image.spacing, image.origin)


def warp(image: Image, field: DisplacementField) -> Image:
    """Backward warp: ``out[p] = image(p + D(p))`` with zero background."""
    if field.shape != image.shape:
        raise ValueError(f"field dims {field.shape} do not match image dims {image.shape}")
    u = np.arange(image.width)[None, :] + field.dx / image.spacing[0]
    v = np.arange(image.height)[:, None] + field.dy / image.spacing[1]
    return image.with_data(np.clip(_bilinear_index(image.data, u, v), 0.0, 1.0))


def gaussian_kernel(sigma: float) -> np.ndarray:
    """Normalized 1D Gaussian truncated at radius ceil(3 sigma)."""
    if sigma < 0:
        raise ValueError(f"sigma must be >= 0, got {sigma}")
    if sigma == 0:
        return np.ones(1)
    radius = int(math.ceil(3.0 * sigma))
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-0.5 * (x / sigma) ** 2)
    return k / k.sum()


def gaussian_smooth(field: DisplacementField, sigma: float) -> DisplacementField:
    """Separable Gaussian smoothing of each component, edge-replicating borders."""
    kernel = gaussian_kernel(sigma)
    if kernel.size == 1:
        return field
    out = np.empty_like(field.vectors)
    for c in range(2):
        tmp = ndimage.correlate1d(field.vectors[c], kernel, axis=0, mode="nearest")
        out[c] = ndimage.correlate1d(tmp, kernel, axis=1, mode="nearest")
    return type(field)(out, field.spacing, field.origin)


def _foreground_quantiles(values: np.ndarray, levels: int, fractions: np.ndarray):
    fg = values[values > values.mean()]
    if fg.size == 0:
        return None
    lo, hi = fg.min(), fg.max()
    if hi <= lo:
        return None
    counts, edges = np.histogram(fg, bins=levels, range=(lo, hi))
    cdf = np.concatenate([[0.0], np.cumsum(counts) / fg.size])
    # Inverse CDF, linear inside each bin.
    return np.interp(fractions, cdf, edges)


def histogram_match(moving: Image, reference: Image, levels: int = 1024, landmarks: int = 7) -> Image:
    """Map moving intensities onto the reference's foreground distribution.

    Quantile landmarks are taken over pixels brighter than each image's mean
    (so the dark background does not dominate), ``landmarks`` interior points
    plus the foreground minimum and maximum. Intensities are mapped piecewise
    linearly between landmark pairs, extrapolated with the end segments and
    clamped to [0, 1]. When either foreground is constant no mapping exists
    and ``moving`` is returned unchanged.
    """
    if levels < 2:
        raise ValueError(f"levels must be >= 2, got {levels}")
    if not 1 <= landmarks <= levels:
        raise ValueError(f"landmarks must be in [1, levels], got {landmarks}")
    fractions = np.linspace(0.0, 1.0, landmarks + 2)
    ref_q = _foreground_quantiles(reference.data, levels, fractions)
    mov_q = _foreground_quantiles(moving.data, levels, fractions)
    if ref_q is None or mov_q is None:
        return moving
    # Drop repeated moving landmarks so the mapping stays a function.
    keep = np.concatenate([[True], np.diff(mov_q) > 1e-12])
    mov_q, ref_q = mov_q[keep], ref_q[keep]
    if mov_q.size < 2:
        return moving
    v = moving.data
    out = np.interp(v, mov_q, ref_q)
    lo_slope = (ref_q[1] - ref_q[0]) / (mov_q[1] - mov_q[0])
    hi_slope = (ref_q[-1] - ref_q[-2]) / (mov_q[-1] - mov_q[-2])
    out = np.where(v < mov_q[0], ref_q[0] + (v - mov_q[0]) * lo_slope, out)
    out = np.where(v > mov_q[-1], ref_q[-1] + (v - mov_q[-1]) * hi_slope, out)
    return moving.with_data(np.clip(out, 0.0, 1.0))


def flip_horizontal(image):
    """Mirror columns. Works for :class:`Image` and :class:`Mask`."""
    if isinstance(image, Mask):
        return Mask(image.data[:, ::-1])
    return image.with_data(image.data[:, ::-1])
