"""Synthetic ground-truth cases: phantom seeds, lesion insertion and known
global (affine) alterations, with a JSON manifest of everything applied."""

from __future__ import annotations

import json
import math
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

from . import fileio
from .image import Image, _bilinear_index, flip_horizontal
from .segmentation import segment_breast

VIEWS = ("RCC", "LCC", "RMLO", "LMLO")
OPPOSITE = {"RCC": "LCC", "LCC": "RCC", "RMLO": "LMLO", "LMLO": "RMLO"}
CLASSIFICATIONS = ("normal", "masses", "calcification")
ALTERATIONS = ("compression", "movement", "deformation")
ALTERATION_KINDS = ("compression", "movement", "deformation", "rotation", "expansion")


class ConfigError(ValueError):
    pass


def laterality(view: str) -> str:
    return view[0]


@dataclass(frozen=True)
class AffineTransform:
    """``y = A (x - c) + c + t`` in mm, c being the image center."""

    matrix: tuple[float, float, float, float]
    translation: tuple[float, float] = (0.0, 0.0)

    def __post_init__(self):
        object.__setattr__(self, "matrix", tuple(float(v) for v in self.matrix))
        object.__setattr__(self, "translation", tuple(float(v) for v in self.translation))

    @classmethod
    def identity(cls):
        return cls((1.0, 0.0, 0.0, 1.0))

    @property
    def A(self) -> np.ndarray:
        return np.array(self.matrix).reshape(2, 2)

    def det(self) -> float:
        a, b, c, d = self.matrix
        return a * d - b * c

    def is_invertible(self, tol: float = 1e-12) -> bool:
        return abs(self.det()) > tol

    def inverse(self) -> AffineTransform:
        """Inverse about the same center: x = A^-1 (y - c) + c - A^-1 t."""
        if not self.is_invertible():
            raise ValueError("singular affine matrix")
        inv = np.linalg.inv(self.A)
        t = -inv @ np.array(self.translation)
        return AffineTransform(tuple(inv.ravel()), tuple(t))


def image_center(image: Image) -> tuple[float, float]:
    return (
        image.origin[0] + 0.5 * (image.width - 1) * image.spacing[0],
        image.origin[1] + 0.5 * (image.height - 1) * image.spacing[1],
    )


def apply_affine(image: Image, xf: AffineTransform) -> Image:
    """Backward-warp ``image`` through ``xf``: out(p) = image(xf^-1(p))."""
    if not xf.is_invertible():
        raise ValueError("cannot apply a singular affine transform")
    inv = np.linalg.inv(xf.A)
    cx, cy = image_center(image)
    x, y = image.coords()
    qx = x - cx - xf.translation[0]
    qy = y - cy - xf.translation[1]
    sx = inv[0, 0] * qx + inv[0, 1] * qy + cx
    sy = inv[1, 0] * qx + inv[1, 1] * qy + cy
    u = (sx - image.origin[0]) / image.spacing[0]
    v = (sy - image.origin[1]) / image.spacing[1]
    return image.with_data(np.clip(_bilinear_index(image.data, u, v), 0.0, 1.0))


@dataclass(frozen=True)
class LesionSpec:
    kind: str
    center: tuple[float, float]
    size: float
    amplitude: float
    count: int = 1

    def __post_init__(self):
        if self.kind not in ("mass", "calcification"):
            raise ValueError(f"unknown lesion kind {self.kind!r}")
        if not 0.0 < self.amplitude <= 1.0:
            raise ValueError(f"amplitude must be in (0, 1], got {self.amplitude}")
        if not self.size > 0:
            raise ValueError(f"size must be > 0, got {self.size}")
        if self.count < 1:
            raise ValueError(f"count must be >= 1, got {self.count}")
        object.__setattr__(self, "center", tuple(float(c) for c in self.center))

    def to_json(self) -> dict:
        return {
            "kind": self.kind,
            "center_mm": list(self.center),
            "size_mm": self.size,
            "amplitude": self.amplitude,
            "count": self.count,
        }

    @classmethod
    def from_json(cls, rec: dict) -> LesionSpec:
        return cls(rec["kind"], tuple(rec["center_mm"]), rec["size_mm"], rec["amplitude"], rec["count"])


def _check_center(image: Image, center):
    x, y = center
    x0, y0 = image.origin
    x1 = x0 + (image.width - 1) * image.spacing[0]
    y1 = y0 + (image.height - 1) * image.spacing[1]
    if not (x0 <= x <= x1 and y0 <= y <= y1):
        raise ValueError(f"lesion center {center} outside image extent")


def add_mass(image: Image, spec: LesionSpec) -> Image:
    """Add a Gaussian blob of peak ``amplitude`` and std ``size`` mm, cut off at 4 std."""
    if spec.kind != "mass":
        raise ValueError("add_mass needs a mass lesion spec")
    _check_center(image, spec.center)
    x, y = image.coords()
    r2 = (x - spec.center[0]) ** 2 + (y - spec.center[1]) ** 2
    bump = spec.amplitude * np.exp(-r2 / (2.0 * spec.size**2))
    bump[r2 > (4.0 * spec.size) ** 2] = 0.0
    return image.with_data(np.clip(image.data + bump, 0.0, 1.0))


def add_calcifications(image: Image, spec: LesionSpec, seed: int, radius_px=(1.0, 3.0)) -> Image:
    """Scatter ``count`` bright discs within ``size`` mm of the center."""
    if spec.kind != "calcification":
        raise ValueError("add_calcifications needs a calcification lesion spec")
    _check_center(image, spec.center)
    rng = np.random.default_rng(seed)
    sx, sy = image.spacing
    cols = (np.arange(image.width) * sx + image.origin[0])[None, :]
    rows = (np.arange(image.height) * sy + image.origin[1])[:, None]
    added = np.zeros(image.shape)
    for _ in range(spec.count):
        # uniform over the cluster disc
        rho = spec.size * math.sqrt(rng.uniform())
        phi = rng.uniform(0.0, 2.0 * math.pi)
        cx = spec.center[0] + rho * math.cos(phi)
        cy = spec.center[1] + rho * math.sin(phi)
        rad = rng.uniform(*radius_px)
        disc = ((cols - cx) / sx) ** 2 + ((rows - cy) / sy) ** 2 <= rad * rad
        added[disc] += spec.amplitude
    return image.with_data(np.clip(image.data + added, 0.0, 1.0))


def make_alteration(kind: str, magnitude: float, seed: int, extent=(100.0, 100.0)) -> AffineTransform:
    """Build one of the global alterations with strength ``magnitude``.

    ``extent`` is the image size in mm (width, height); a movement shifts by
    ``magnitude`` times the extent along each axis, in a random direction.
    """
    if not 0.0 < magnitude <= 0.2:
        raise ValueError(f"magnitude must be in (0, 0.2], got {magnitude}")
    rng = np.random.default_rng(seed)
    m = float(magnitude)
    if kind == "compression":
        return AffineTransform((1.0 - m, 0.0, 0.0, 1.0))
    if kind == "expansion":
        return AffineTransform((1.0 + m, 0.0, 0.0, 1.0 + m))
    if kind == "movement":
        theta = rng.uniform(0.0, 2.0 * math.pi)
        t = (m * extent[0] * math.cos(theta), m * extent[1] * math.sin(theta))
        return AffineTransform((1.0, 0.0, 0.0, 1.0), t)
    if kind == "deformation":
        jx, jy = rng.uniform(-m / 2, m / 2, size=2)
        shear = m if rng.uniform() < 0.5 else -m
        return AffineTransform((1.0 + jx, shear, 0.0, 1.0 + jy))
    if kind == "rotation":
        angle = math.radians(m * 25.0) * (1.0 if rng.uniform() < 0.5 else -1.0)
        c, s = math.cos(angle), math.sin(angle)
        return AffineTransform((c, -s, s, c))
    raise ValueError(f"unknown alteration kind {kind!r}")


# -- phantom seeds ----------------------------------------------------------

def _smooth_noise(rng, shape, sigma) -> np.ndarray:
    n = ndimage.gaussian_filter(rng.standard_normal(shape), sigma, mode="reflect")
    return (n - n.mean()) / n.std()


def _sigmoid(z):
    return 1.0 / (1.0 + np.exp(-np.clip(z, -50.0, 50.0)))


def _phantom(view_kind, width, height, texture, shape_jitter, tag=True, rng=None):
    """Right-laterality phantom, chest wall near column 0.

    A thin background margin is left along every edge (the chest wall
    included) so the border-frame noise estimate sees background only.
    """
    X, Y = np.meshgrid((np.arange(width) + 0.5) / width, (np.arange(height) + 0.5) / height)
    ja, jb = shape_jitter
    wall = 0.10
    Xw = X - wall
    if view_kind == "CC":
        a, b, cy = 0.62 * ja, 0.34 * jb, 0.5
    else:
        a, b, cy = 0.56 * ja, 0.33 * jb, 0.53
    rho = np.sqrt((Xw / a) ** 2 + ((Y - cy) / b) ** 2)
    inside = _sigmoid((1.0 - rho) / 0.012) * _sigmoid(Xw / 0.004)
    thickness = np.sqrt(np.clip(1.0 - rho**2, 0.0, 1.0))
    tissue = 0.30 + 0.22 * thickness
    gland = np.exp(-((rho / 0.75) ** 2))
    tissue = tissue + 0.11 * texture * gland
    if view_kind == "MLO":
        pect = _sigmoid((0.28 * (1.0 - (Y - 0.13) / 0.50) - Xw) / 0.01)
        pect = pect * _sigmoid((Y - 0.13) / 0.005) * _sigmoid(Xw / 0.004) * (Y < 0.63)
        tissue = tissue + 0.22 * pect
        inside = np.maximum(inside, pect)
    background = 0.03
    img = background + inside * (tissue - background)
    if rng is not None:
        img = img + rng.normal(0.0, 0.004, size=img.shape)
    if tag:
        r0, r1 = int(0.12 * height), int(0.19 * height)
        c0, c1 = int(0.80 * width), int(0.89 * width)
        img[r0:r1, c0:c1] = 0.85
    return np.clip(img, 0.0, 1.0)


def make_seed_set(width: int = 548, height: int = 341, spacing: float = 0.4, seed: int = 0) -> dict[str, Image]:
    """Four mutually consistent phantom views (RCC, LCC, RMLO, LMLO).

    Left views are mirrored right-side anatomy with a partly independent
    texture and a slightly different outline, standing in for bilateral
    asymmetry.
    """
    rng = np.random.default_rng(seed)
    sigma = max(width / 110.0, 1.0)
    out = {}
    for kind in ("CC", "MLO"):
        shared = _smooth_noise(rng, (height, width), sigma)
        own_r = _smooth_noise(rng, (height, width), sigma)
        own_l = _smooth_noise(rng, (height, width), sigma)
        tex_r = 0.85 * shared + 0.53 * own_r
        tex_l = 0.85 * shared + 0.53 * own_l
        jit = rng.uniform(0.96, 1.04, size=2)
        right = _phantom(kind, width, height, tex_r, (1.0, 1.0), rng=rng)
        left = _phantom(kind, width, height, tex_l, tuple(jit), rng=rng)
        out["R" + kind] = Image(right, (spacing, spacing))
        out["L" + kind] = flip_horizontal(Image(left, (spacing, spacing)))
    return {v: out[v] for v in VIEWS}


# -- dataset ----------------------------------------------------------------

@dataclass
class SynthConfig:
    output_dir: str = "dataset"
    cases_per_view: int = 33
    master_seed: int = 0
    width: int = 548
    height: int = 341
    spacing: float = 0.4
    magnitude_range: tuple[float, float] = (0.02, 0.06)
    alterations: tuple[str, ...] = ALTERATIONS
    classifications: tuple[str, ...] = CLASSIFICATIONS
    mass_size_mm: tuple[float, float] = (3.0, 6.0)
    mass_amplitude: tuple[float, float] = (0.10, 0.25)
    calc_count: tuple[int, int] = (5, 15)
    calc_size_mm: tuple[float, float] = (3.0, 6.0)
    calc_amplitude: tuple[float, float] = (0.3, 0.5)
    seed_images: dict = field(default_factory=dict)

    @classmethod
    def from_dict(cls, d: dict) -> SynthConfig:
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown synth config keys: {sorted(unknown)}")
        kw = {k: tuple(v) if isinstance(v, list) else v for k, v in d.items()}
        return cls(**kw)


@dataclass
class CaseManifest:
    id: str
    view: str
    classification: str
    alteration: str
    transform: AffineTransform
    lesions: list
    seed: int
    ground_truth_path: str
    altered_path: str

    def to_json(self) -> dict:
        return {
            "id": self.id,
            "view": self.view,
            "classification": self.classification,
            "alteration": self.alteration,
            "matrix": list(self.transform.matrix),
            "translation_mm": list(self.transform.translation),
            "lesions": [les.to_json() for les in self.lesions],
            "seed": self.seed,
            "ground_truth_path": self.ground_truth_path,
            "altered_path": self.altered_path,
        }

    @classmethod
    def from_json(cls, rec: dict) -> CaseManifest:
        return cls(
            id=rec["id"],
            view=rec["view"],
            classification=rec["classification"],
            alteration=rec["alteration"],
            transform=AffineTransform(tuple(rec["matrix"]), tuple(rec["translation_mm"])),
            lesions=[LesionSpec.from_json(r) for r in rec["lesions"]],
            seed=int(rec["seed"]),
            ground_truth_path=rec["ground_truth_path"],
            altered_path=rec["altered_path"],
        )


def case_seed(master_seed: int, case_id: str) -> int:
    ss = np.random.SeedSequence([int(master_seed), zlib.crc32(case_id.encode())])
    return int(ss.generate_state(1, dtype=np.uint32)[0])


def _lesion_center(rng, image: Image, margin_mm: float):
    mask = segment_breast(image).data
    dist = ndimage.distance_transform_edt(mask, sampling=(image.spacing[1], image.spacing[0]))
    ok = np.flatnonzero(dist >= margin_mm)
    if ok.size == 0:
        ok = np.array([int(np.argmax(dist))])
    j, i = np.unravel_index(ok[rng.integers(ok.size)], mask.shape)
    return (image.origin[0] + i * image.spacing[0], image.origin[1] + j * image.spacing[1])


def make_case(seed_image: Image, view: str, classification: str, alteration: str, seed: int, cfg: SynthConfig):
    """Return (altered image, transform, lesions, magnitude) for one case."""
    rng = np.random.default_rng(seed)
    lesions = []
    img = seed_image
    if classification == "masses":
        size = rng.uniform(*cfg.mass_size_mm)
        spec = LesionSpec("mass", _lesion_center(rng, img, 2 * size), size, rng.uniform(*cfg.mass_amplitude))
        img = add_mass(img, spec)
        lesions.append(spec)
    elif classification == "calcification":
        size = rng.uniform(*cfg.calc_size_mm)
        count = int(rng.integers(cfg.calc_count[0], cfg.calc_count[1] + 1))
        spec = LesionSpec(
            "calcification", _lesion_center(rng, img, 2 * size), size, rng.uniform(*cfg.calc_amplitude), count
        )
        img = add_calcifications(img, spec, int(rng.integers(2**31)))
        lesions.append(spec)
    elif classification != "normal":
        raise ConfigError(f"unknown classification {classification!r}")
    magnitude = float(rng.uniform(*cfg.magnitude_range))
    extent = (img.width * img.spacing[0], img.height * img.spacing[1])
    xf = make_alteration(alteration, magnitude, int(rng.integers(2**31)), extent)
    return apply_affine(img, xf), xf, lesions, magnitude


def generate_dataset(seeds: dict, cfg: SynthConfig, write: bool = True) -> list[CaseManifest]:
    """Generate ``cases_per_view`` altered cases for every view.

    ``seeds`` maps view name to an :class:`Image` or a list of them. Files
    land in ``cfg.output_dir`` together with ``manifest.json``; manifest paths
    are relative to that directory.
    """
    missing = [v for v in VIEWS if not seeds.get(v)]
    if missing:
        raise ConfigError(f"missing seed image(s) for view(s): {', '.join(missing)}")
    out = Path(cfg.output_dir)
    if write:
        out.mkdir(parents=True, exist_ok=True)
    combos = [(c, a) for c in cfg.classifications for a in cfg.alterations]
    cases = []
    for view in VIEWS:
        pool = seeds[view] if isinstance(seeds[view], (list, tuple)) else [seeds[view]]
        gt_names = []
        for s, img in enumerate(pool):
            name = f"{view}_gt.pgm" if len(pool) == 1 else f"{view}_gt{s}.pgm"
            gt_names.append(name)
            if write:
                fileio.save_pgm(img, out / name)
        for k in range(cfg.cases_per_view):
            cid = f"{view}_{k:03d}"
            classification, alteration = combos[k % len(combos)]
            seed = case_seed(cfg.master_seed, cid)
            src = k % len(pool)
            altered, xf, lesions, _ = make_case(pool[src], view, classification, alteration, seed, cfg)
            name = f"{cid}.pgm"
            if write:
                fileio.save_pgm(altered, out / name)
            cases.append(
                CaseManifest(cid, view, classification, alteration, xf, lesions, seed, gt_names[src], name)
            )
    if write:
        write_manifest(cases, out / "manifest.json")
    return cases


def write_manifest(cases, path) -> None:
    text = json.dumps([c.to_json() for c in cases], indent=1)
    Path(path).write_text(text + "\n")


def load_manifest(path) -> list[CaseManifest]:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"manifest not found: {path}")
    return [CaseManifest.from_json(r) for r in json.loads(path.read_text())]


def build_dataset(cfg: SynthConfig) -> list[CaseManifest]:
    """Generate seeds (phantoms unless ``seed_images`` names files) and the dataset."""
    if cfg.seed_images:
        seeds = {}
        for view, paths in cfg.seed_images.items():
            paths = [paths] if isinstance(paths, str) else paths
            seeds[view] = [fileio.load_pgm(p) for p in paths]
    else:
        seeds = make_seed_set(cfg.width, cfg.height, cfg.spacing, cfg.master_seed)
    return generate_dataset(seeds, cfg)
