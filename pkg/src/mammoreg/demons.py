"""Thirion demons: classic fixed-gradient forces and the symmetric
(fixed + moving gradient) variant, run at one working resolution."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .image import (
    DisplacementField,
    Image,
    Mask,
    _bilinear_index,
    gaussian_smooth,
    gradient,
    histogram_match,
    resample,
    resample_field,
    resample_mask,
    warp,
)

EPS = 1e-12


class RegistrationError(RuntimeError):
    pass


@dataclass
class DemonsParams:
    variant: str = "classic"
    max_iterations: int = 500
    smoothing_sigma: float = 1.0
    k_factor: float | None = None  # None: mean squared working spacing
    convergence_tol: float = 1e-3
    working_width: int = 219
    working_height: int = 136
    histogram_levels: int = 1024
    histogram_landmarks: int = 7

    def __post_init__(self):
        if self.variant not in ("classic", "symmetric"):
            raise ValueError(f"unknown demons variant {self.variant!r}")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if self.smoothing_sigma < 0:
            raise ValueError("smoothing_sigma must be >= 0")
        if self.k_factor is not None and not self.k_factor > 0:
            raise ValueError("k_factor must be > 0")
        if self.convergence_tol < 0:
            raise ValueError("convergence_tol must be >= 0")


@dataclass
class DemonsResult:
    field: DisplacementField
    iterations: int
    converged: bool
    clamp_events: int
    mean_updates: list = field(default_factory=list)


def _check_same(*grids):
    shape = grids[0].shape
    for g in grids[1:]:
        if g.shape != shape:
            raise ValueError(f"grid dims differ: {shape} vs {g.shape}")


def _sample_moving(moving: Image, field: DisplacementField) -> np.ndarray:
    u = np.arange(moving.width)[None, :] + field.dx / moving.spacing[0]
    v = np.arange(moving.height)[:, None] + field.dy / moving.spacing[1]
    return _bilinear_index(moving.data, u, v)


def classic_update(diff, gx, gy):
    """Per-pixel classic force: -diff * grad f / (|grad f|^2 + diff^2)."""
    denom = gx * gx + gy * gy + diff * diff
    ok = denom >= EPS
    scale = np.where(ok, -diff / np.where(ok, denom, 1.0), 0.0)
    return scale * gx, scale * gy


def symmetric_update(diff, sx, sy, k):
    """Per-pixel symmetric force from the summed gradient (sx, sy)."""
    denom = sx * sx + sy * sy + diff * diff / k
    ok = denom >= EPS
    scale = np.where(ok, -2.0 * diff / np.where(ok, denom, 1.0), 0.0)
    return scale * sx, scale * sy


def demons_step_classic(fixed: Image, moving: Image, field: DisplacementField, mask: Mask | None = None,
                        fixed_grad=None) -> DisplacementField:
    """One unsmoothed classic demons update; returns ``field + update``."""
    _check_same(fixed, moving, field)
    g = fixed_grad if fixed_grad is not None else gradient(fixed)
    diff = _sample_moving(moving, field) - fixed.data
    ux, uy = classic_update(diff, g.dx, g.dy)
    if mask is not None:
        ux, uy = ux * mask.data, uy * mask.data
    return DisplacementField(field.vectors + np.stack([ux, uy]), field.spacing, field.origin)


def demons_step_symmetric(fixed: Image, moving: Image, field: DisplacementField, k: float,
                          mask: Mask | None = None, fixed_grad=None) -> DisplacementField:
    """One unsmoothed symmetric-forces update using grad f + grad(warped m)."""
    _check_same(fixed, moving, field)
    if not k > 0:
        raise ValueError(f"k must be > 0, got {k}")
    g = fixed_grad if fixed_grad is not None else gradient(fixed)
    warped = fixed.with_data(np.clip(_sample_moving(moving, field), 0.0, 1.0))
    gm = gradient(warped)
    diff = warped.data - fixed.data
    ux, uy = symmetric_update(diff, g.dx + gm.dx, g.dy + gm.dy, k)
    if mask is not None:
        ux, uy = ux * mask.data, uy * mask.data
    return DisplacementField(field.vectors + np.stack([ux, uy]), field.spacing, field.origin)


def default_k(spacing) -> float:
    return 0.5 * (spacing[0] ** 2 + spacing[1] ** 2)


def _check_finite(*images):
    for img in images:
        if not np.all(np.isfinite(img.data)):
            raise RegistrationError("non-finite intensity in input image")


def register_demons(fixed: Image, moving: Image, fixed_mask: Mask | None = None,
                    params: DemonsParams | None = None) -> DemonsResult:
    """Downsample, histogram-match, iterate demons with Gaussian field
    smoothing, then upsample the field to the fixed image's grid.

    Displacement components are clamped to half the image extent; every
    clamped component counts as one clamp event.
    """
    p = params or DemonsParams()
    _check_finite(fixed, moving)
    if moving.shape != fixed.shape:
        moving = resample(moving, fixed.width, fixed.height)
    wf = resample(fixed, p.working_width, p.working_height)
    wm = resample(moving, p.working_width, p.working_height)
    wm = histogram_match(wm, wf, p.histogram_levels, p.histogram_landmarks)
    if fixed_mask is None:
        wmask = Mask.full(wf)
    else:
        wmask = resample_mask(fixed_mask, p.working_width, p.working_height)
        if not wmask.data.any():
            wmask = Mask.full(wf)
    k = p.k_factor if p.k_factor is not None else default_k(wf.spacing)
    limit_x = 0.5 * wf.width * wf.spacing[0]
    limit_y = 0.5 * wf.height * wf.spacing[1]
    gf = gradient(wf)
    fld = DisplacementField.zeros_like(wf)
    clamps = 0
    history = []
    converged = False
    it = 0
    sel = wmask.data
    for it in range(1, p.max_iterations + 1):
        if p.variant == "classic":
            stepped = demons_step_classic(wf, wm, fld, wmask, gf)
        else:
            stepped = demons_step_symmetric(wf, wm, fld, k, wmask, gf)
        new = gaussian_smooth(stepped, p.smoothing_sigma).vectors
        over = (np.abs(new[0]) > limit_x).sum() + (np.abs(new[1]) > limit_y).sum()
        if over:
            clamps += int(over)
            new = np.stack([np.clip(new[0], -limit_x, limit_x), np.clip(new[1], -limit_y, limit_y)])
        delta = np.hypot(new[0] - fld.dx, new[1] - fld.dy)
        mean_update = float(delta[sel].mean())
        history.append(mean_update)
        fld = DisplacementField(new, wf.spacing, wf.origin)
        if mean_update < p.convergence_tol:
            converged = True
            break
    full = resample_field(fld, fixed.width, fixed.height)
    full = DisplacementField(full.vectors, fixed.spacing, fixed.origin)
    return DemonsResult(full, it, converged, clamps, history)


def register_and_warp(fixed, moving, fixed_mask=None, params=None):
    res = register_demons(fixed, moving, fixed_mask, params)
    return warp(moving, res.field), res
