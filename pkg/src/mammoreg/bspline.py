"""Cubic B-spline free-form deformation and its multiresolution MI registration."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

from . import _fdkernel
from .demons import RegistrationError
from .image import DisplacementField, Image, Mask, histogram_match, resample, resample_mask, warp
from .metrics import MI_BINS, bin_index, mutual_information


def cubic_basis(t):
    """The four uniform cubic B-spline weights at fractional offset ``t``."""
    t = np.asarray(t, dtype=np.float64)
    t2 = t * t
    t3 = t2 * t
    return np.stack(
        [
            (1.0 - t) ** 3 / 6.0,
            (3.0 * t3 - 6.0 * t2 + 4.0) / 6.0,
            (-3.0 * t3 + 3.0 * t2 + 3.0 * t + 1.0) / 6.0,
            t3 / 6.0,
        ]
    )


@dataclass(frozen=True, eq=False)
class BSplineGrid:
    """Control lattice; point (i, j) sits at ``origin + (i*gx, j*gy)``.

    ``coefficients`` has shape (2, ny, nx): x displacements then y, in mm.
    The valid domain runs from control point 1 to control point n-2 on each
    axis, leaving one knot span of margin around the covered image.
    """

    coefficients: np.ndarray
    grid_spacing: tuple[float, float]
    origin: tuple[float, float]

    def __post_init__(self):
        c = np.array(self.coefficients, dtype=np.float64, copy=True)
        if c.ndim != 3 or c.shape[0] != 2 or c.shape[1] < 4 or c.shape[2] < 4:
            raise ValueError(f"coefficients must have shape (2, ny>=4, nx>=4), got {c.shape}")
        if not np.all(np.isfinite(c)):
            raise ValueError("non-finite B-spline coefficients")
        c.setflags(write=False)
        object.__setattr__(self, "coefficients", c)
        object.__setattr__(self, "grid_spacing", tuple(float(g) for g in self.grid_spacing))
        object.__setattr__(self, "origin", tuple(float(o) for o in self.origin))
        if min(self.grid_spacing) <= 0:
            raise ValueError("grid spacing must be positive")

    @property
    def nx(self) -> int:
        return self.coefficients.shape[2]

    @property
    def ny(self) -> int:
        return self.coefficients.shape[1]

    def domain(self):
        """((x0, x1), (y0, y1)) in mm where the spline is defined."""
        gx, gy = self.grid_spacing
        ox, oy = self.origin
        return (ox + gx, ox + (self.nx - 2) * gx), (oy + gy, oy + (self.ny - 2) * gy)

    def with_coefficients(self, coefficients) -> BSplineGrid:
        return BSplineGrid(coefficients, self.grid_spacing, self.origin)

    @classmethod
    def covering(cls, width, height, spacing, origin=(0.0, 0.0), nx=6, ny=5, coefficients=None):
        """Grid whose domain is exactly the pixel-center extent of an image."""
        if nx < 4 or ny < 4:
            raise ValueError("need at least 4 control points per axis")
        if width < 2 or height < 2:
            raise ValueError("image must be at least 2x2")
        gx = (width - 1) * spacing[0] / (nx - 3)
        gy = (height - 1) * spacing[1] / (ny - 3)
        if coefficients is None:
            coefficients = np.zeros((2, ny, nx))
        return cls(coefficients, (gx, gy), (origin[0] - gx, origin[1] - gy))

    def to_json(self) -> dict:
        return {
            "nx": self.nx,
            "ny": self.ny,
            "grid_spacing": list(self.grid_spacing),
            "origin": list(self.origin),
            "coefficients": self.coefficients.ravel().tolist(),
        }

    @classmethod
    def from_json(cls, rec: dict) -> BSplineGrid:
        coeffs = np.asarray(rec["coefficients"], dtype=np.float64).reshape(2, rec["ny"], rec["nx"])
        return cls(coeffs, tuple(rec["grid_spacing"]), tuple(rec["origin"]))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json()))

    @classmethod
    def load(cls, path) -> BSplineGrid:
        return cls.from_json(json.loads(Path(path).read_text()))


# Knot-domain tolerance for points that land on the boundary up to rounding.
_EDGE_TOL = 1e-9


def _cells(u, n):
    """Cell index (first of the four supporting points) and offset for knot
    coordinates ``u`` on an axis with ``n`` control points."""
    u = np.asarray(u, dtype=np.float64)
    if np.any(u < 1.0 - _EDGE_TOL) or np.any(u > n - 2 + _EDGE_TOL):
        raise ValueError("point outside the B-spline grid domain")
    u = np.clip(u, 1.0, n - 2.0)
    i = np.minimum(np.floor(u).astype(np.intp), n - 3)
    return i - 1, u - i


def axis_weights(coords, n, spacing, origin) -> np.ndarray:
    """Dense (len(coords), n) matrix of basis weights along one axis."""
    start, t = _cells((np.asarray(coords) - origin) / spacing, n)
    W = np.zeros((len(coords), n))
    rows = np.arange(len(coords))
    for k, b in enumerate(cubic_basis(t)):
        W[rows, start + k] = b
    return W


def bspline_displacement(grid: BSplineGrid, x: float, y: float) -> tuple[float, float]:
    """Displacement at a point by explicit 4x4 tensor-product summation."""
    gx, gy = grid.grid_spacing
    i0, tx = _cells((x - grid.origin[0]) / gx, grid.nx)
    j0, ty = _cells((y - grid.origin[1]) / gy, grid.ny)
    bx = cubic_basis(tx)
    by = cubic_basis(ty)
    dx = dy = 0.0
    for b in range(4):
        for a in range(4):
            w = by[b] * bx[a]
            dx += w * grid.coefficients[0, int(j0) + b, int(i0) + a]
            dy += w * grid.coefficients[1, int(j0) + b, int(i0) + a]
    return float(dx), float(dy)


def grid_matrices(grid: BSplineGrid, width, height, spacing, origin=(0.0, 0.0)):
    xs = origin[0] + np.arange(width) * spacing[0]
    ys = origin[1] + np.arange(height) * spacing[1]
    wx = axis_weights(xs, grid.nx, grid.grid_spacing[0], grid.origin[0])
    wy = axis_weights(ys, grid.ny, grid.grid_spacing[1], grid.origin[1])
    return wx, wy


def _dense(coeffs, wx, wy) -> np.ndarray:
    return np.stack([wy @ coeffs[c] @ wx.T for c in range(2)])


def grid_to_field(grid: BSplineGrid, width, height, spacing, origin=(0.0, 0.0)) -> DisplacementField:
    """Evaluate the deformation at every pixel center of the given geometry."""
    wx, wy = grid_matrices(grid, width, height, spacing, origin)
    return DisplacementField(_dense(grid.coefficients, wx, wy), tuple(spacing), tuple(origin))


def fit_grid(grid: BSplineGrid, nx: int, ny: int, samples_per_span: int = 4) -> BSplineGrid:
    """Least-squares fit of an (nx, ny) grid over the same domain to ``grid``'s
    deformation sampled on a dense lattice."""
    (x0, x1), (y0, y1) = grid.domain()
    gx = (x1 - x0) / (nx - 3)
    gy = (y1 - y0) / (ny - 3)
    px = max(samples_per_span * max(nx, grid.nx), 8)
    py = max(samples_per_span * max(ny, grid.ny), 8)
    xs = np.linspace(x0, x1, px)
    ys = np.linspace(y0, y1, py)
    cx = axis_weights(xs, grid.nx, grid.grid_spacing[0], grid.origin[0])
    cy = axis_weights(ys, grid.ny, grid.grid_spacing[1], grid.origin[1])
    dense = _dense(grid.coefficients, cx, cy)
    fx = axis_weights(xs, nx, gx, x0 - gx)
    fy = axis_weights(ys, ny, gy, y0 - gy)
    # The tensor-product LSQ separates: C = pinv(fy) F pinv(fx)^T.
    pfx = np.linalg.pinv(fx)
    pfy = np.linalg.pinv(fy)
    coeffs = np.stack([pfy @ dense[c] @ pfx.T for c in range(2)])
    return BSplineGrid(coeffs, (gx, gy), (x0 - gx, y0 - gy))


def refine_grid(grid: BSplineGrid, nx: int | None = None, ny: int | None = None) -> BSplineGrid:
    """Finer grid reproducing ``grid``'s deformation.

    Defaults to halving the knot spacing (2n - 3 points per axis), where the
    fit is exact; other sizes are least-squares approximations.
    """
    nx = 2 * grid.nx - 3 if nx is None else nx
    ny = 2 * grid.ny - 3 if ny is None else ny
    return fit_grid(grid, nx, ny)


@dataclass
class BSplineParams:
    levels: int = 3
    grid_schedule: tuple = ((6, 5), (10, 8), (18, 14))
    max_iterations_per_level: int = 100
    initial_step: float = 2.0
    min_step: float = 0.01
    mi_bins: int = MI_BINS
    working_width: int = 219
    working_height: int = 136
    histogram_levels: int = 1024
    histogram_landmarks: int = 7

    def __post_init__(self):
        self.grid_schedule = tuple(tuple(int(n) for n in g) for g in self.grid_schedule)
        if self.levels < 1:
            raise ValueError("levels must be >= 1")
        if len(self.grid_schedule) != self.levels:
            raise ValueError("grid_schedule needs one (nx, ny) entry per level")
        for a, b in zip(self.grid_schedule, self.grid_schedule[1:]):
            if b[0] < a[0] or b[1] < a[1]:
                raise ValueError("grid_schedule must be non-decreasing")
        if not (self.initial_step > 0 and self.min_step > 0):
            raise ValueError("steps must be positive")
        if self.max_iterations_per_level < 1:
            raise ValueError("max_iterations_per_level must be >= 1")


@dataclass
class BSplineResult:
    grid: BSplineGrid
    iterations: list = field(default_factory=list)
    mi_history: list = field(default_factory=list)

    @property
    def total_iterations(self) -> int:
        return int(sum(self.iterations))


def pyramid_sizes(width, height, levels):
    sizes = [(width, height)]
    for _ in range(levels - 1):
        w, h = sizes[-1]
        sizes.append((max(1, math.ceil(w / 2)), max(1, math.ceil(h / 2))))
    return sizes[::-1]


def _downsample(image: Image, width, height) -> Image:
    if (width, height) == image.shape[::-1]:
        return image
    fx = image.width / width
    fy = image.height / height
    smooth = ndimage.gaussian_filter(image.data, (0.5 * fy, 0.5 * fx), mode="nearest")
    return resample(image.with_data(np.clip(smooth, 0, 1)), width, height)


def _support_ranges(w: np.ndarray):
    nz = w > 0
    lo = np.argmax(nz, axis=0)
    hi = w.shape[0] - np.argmax(nz[::-1], axis=0)
    empty = ~nz.any(axis=0)
    lo[empty] = 0
    hi[empty] = 0
    return lo.astype(np.int64), hi.astype(np.int64)


class _Level:
    """Images, mask and basis matrices for one pyramid level."""

    def __init__(self, fixed: Image, moving: Image, mask: Mask, grid: BSplineGrid, bins: int):
        self.fixed = fixed
        self.moving = moving
        self.mask = mask
        self.bins = bins
        self.wx, self.wy = grid_matrices(grid, fixed.width, fixed.height, fixed.spacing, fixed.origin)
        self.xlo, self.xhi = _support_ranges(self.wx)
        self.ylo, self.yhi = _support_ranges(self.wy)
        self.fbin = bin_index(fixed.data, bins).astype(np.int64)
        self.n = mask.count
        self.table = _fdkernel.plogp_table(self.n)
        self.cols = np.arange(fixed.width)[None, :]
        self.rows = np.arange(fixed.height)[:, None]

    def warped(self, coeffs) -> Image:
        disp = _dense(coeffs, self.wx, self.wy)
        return warp(self.moving, DisplacementField(disp, self.fixed.spacing, self.fixed.origin))

    def mi(self, coeffs) -> float:
        return mutual_information(self.fixed, self.warped(coeffs), self.mask, self.bins)

    def gradient(self, coeffs, hstep: float) -> np.ndarray:
        disp = np.ascontiguousarray(_dense(coeffs, self.wx, self.wy))
        warped = self.warped(coeffs).data
        mbin = bin_index(warped, self.bins).astype(np.int64)
        sel = self.mask.data
        flat = self.fbin[sel] * self.bins + mbin[sel]
        joint = np.bincount(flat, minlength=self.bins * self.bins).reshape(self.bins, self.bins).astype(np.int64)
        margm = joint.sum(axis=0)
        return _fdkernel.mi_gradient(
            np.ascontiguousarray(self.moving.data), self.fbin, np.ascontiguousarray(sel),
            self.fixed.spacing[0], self.fixed.spacing[1], disp, mbin, joint, margm, self.table,
            np.ascontiguousarray(self.wx), np.ascontiguousarray(self.wy),
            self.xlo, self.xhi, self.ylo, self.yhi, float(hstep), self.bins, float(self.n),
        )


def optimize_level(level: _Level, grid: BSplineGrid, params: BSplineParams, level_index: int = 0):
    """Normalized-gradient ascent on MI with step halving.

    Returns (grid, iterations used, MI after every accepted step). Each pass
    through the loop, accepted or not, counts as one iteration.
    """
    coeffs = np.array(grid.coefficients)
    best = level.mi(coeffs)
    if not math.isfinite(best):
        raise RegistrationError(f"non-finite MI at level {level_index}, iteration 0")
    history = [best]
    step = params.initial_step
    grad = None
    it = 0
    while it < params.max_iterations_per_level and step >= params.min_step:
        it += 1
        if grad is None:
            grad = level.gradient(coeffs, step / 10.0)
            if not np.all(np.isfinite(grad)):
                raise RegistrationError(f"non-finite MI gradient at level {level_index}, iteration {it}")
        gmax = np.abs(grad).max()
        if gmax == 0.0:
            # Flat at this perturbation size; probe with a finer one.
            step /= 2.0
            grad = None
            continue
        trial = coeffs + step * grad / gmax
        value = level.mi(trial)
        if not math.isfinite(value):
            raise RegistrationError(f"non-finite MI at level {level_index}, iteration {it}")
        if value > best:
            coeffs, best = trial, value
            history.append(best)
            grad = None
        else:
            step /= 2.0
            grad = None
    return grid.with_coefficients(coeffs), it, history


def register_bspline(fixed: Image, moving: Image, fixed_mask: Mask | None = None,
                     params: BSplineParams | None = None) -> BSplineResult:
    """Coarse-to-fine FFD registration maximizing MI.

    The returned grid covers the full-resolution fixed image, so
    ``grid_to_field`` at the fixed geometry gives the dense field to warp the
    original moving image with.
    """
    p = params or BSplineParams()
    for img in (fixed, moving):
        if not np.all(np.isfinite(img.data)):
            raise RegistrationError("non-finite intensity in input image")
    if moving.shape != fixed.shape:
        moving = resample(moving, fixed.width, fixed.height)
    wf = resample(fixed, p.working_width, p.working_height)
    wm = histogram_match(resample(moving, p.working_width, p.working_height), wf,
                         p.histogram_levels, p.histogram_landmarks)
    mask = fixed_mask if fixed_mask is not None else Mask.full(fixed)
    sizes = pyramid_sizes(p.working_width, p.working_height, p.levels)
    grid = None
    result = BSplineResult(grid=None)
    for li, ((lw, lh), (nx, ny)) in enumerate(zip(sizes, p.grid_schedule)):
        if grid is None:
            grid = BSplineGrid.covering(fixed.width, fixed.height, fixed.spacing, fixed.origin, nx, ny)
        elif (grid.nx, grid.ny) != (nx, ny):
            grid = refine_grid(grid, nx, ny)
        lf = _downsample(wf, lw, lh)
        lm = _downsample(wm, lw, lh)
        lmask = resample_mask(mask, lw, lh)
        if not lmask.data.any():
            lmask = Mask.full(lf)
        level = _Level(lf, lm, lmask, grid, p.mi_bins)
        grid, used, hist = optimize_level(level, grid, p, li)
        result.iterations.append(used)
        result.mi_history.append(hist)
    result.grid = grid
    return result
