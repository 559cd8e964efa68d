"""Batch evaluation: segment, register (intra-view and bilateral), warp and
score every case; write per-case CSV rows and grouped summaries."""

from __future__ import annotations

import csv
import io
import json
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from . import fileio
from .bspline import BSplineParams, grid_to_field, register_bspline
from .demons import DemonsParams, register_demons
from .image import Image, Mask, flip_horizontal, warp
from .metrics import JEH_BINS, MI_BINS, jeh_image, joint_histogram, metric_report
from .segmentation import SegmentationParams, segment_breast
from .synth import OPPOSITE, CaseManifest, ConfigError, load_manifest

METHODS = ("bspline", "demons", "demons_sym")
MODES = ("intra", "bilateral")

CSV_COLUMNS = (
    "case_id", "classification", "alteration", "mode", "method", "status",
    "mi_pre", "mi_post", "mi_delta", "cc_pre", "cc_post", "cc_delta",
    "ssd_pre", "ssd_post", "ssd_delta", "iterations", "wall_ms",
)


@dataclass
class ExperimentConfig:
    manifest: str
    methods: tuple = METHODS
    modes: tuple = MODES
    output_dir: str = "results"
    jobs: int = 1
    mi_bins: int = MI_BINS
    demons: dict = field(default_factory=dict)
    bspline: dict = field(default_factory=dict)
    segmentation: dict = field(default_factory=dict)
    fixed_is_ground_truth: bool = True
    record_wall_time: bool = False
    emit_jeh: bool = False
    jeh_bins: int = JEH_BINS
    jeh_size: int = 512

    def __post_init__(self):
        self.methods = tuple(m.replace("-", "_") for m in self.methods)
        self.modes = tuple(self.modes)
        if not self.methods or not self.modes:
            raise ConfigError("select at least one method and one mode")
        bad = [m for m in self.methods if m not in METHODS] + [m for m in self.modes if m not in MODES]
        if bad:
            raise ConfigError(f"unknown method/mode: {bad}")
        if self.jobs < 1:
            raise ConfigError("jobs must be >= 1")
        try:
            self.demons_params()
            self.bspline_params()
            self.segmentation_params()
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad parameter block: {exc}") from exc

    @classmethod
    def from_dict(cls, d: dict, base_dir=None) -> ExperimentConfig:
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ConfigError(f"unknown experiment config keys: {sorted(unknown)}")
        if "manifest" not in d:
            raise ConfigError("experiment config needs a 'manifest' path")
        d = dict(d)
        if base_dir is not None:
            for key in ("manifest", "output_dir"):
                if key in d and not Path(d[key]).is_absolute():
                    d[key] = str(Path(base_dir) / d[key])
        return cls(**d)

    @classmethod
    def load(cls, path) -> ExperimentConfig:
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"config not found: {path}")
        try:
            raw = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON: {exc}") from exc
        return cls.from_dict(raw, base_dir=path.parent)

    def demons_params(self, variant="classic") -> DemonsParams:
        return DemonsParams(**{**self.demons, "variant": variant})

    def bspline_params(self) -> BSplineParams:
        return BSplineParams(**self.bspline)

    def segmentation_params(self) -> SegmentationParams:
        return SegmentationParams(**self.segmentation)


@dataclass
class ReportRow:
    case_id: str
    classification: str
    alteration: str
    mode: str
    method: str
    status: str = "ok"
    mi_pre: float | None = None
    mi_post: float | None = None
    mi_delta: float | None = None
    cc_pre: float | None = None
    cc_post: float | None = None
    cc_delta: float | None = None
    ssd_pre: float | None = None
    ssd_post: float | None = None
    ssd_delta: float | None = None
    iterations: int | None = None
    wall_ms: float | None = None

    @property
    def ok(self) -> bool:
        return self.status == "ok"

    def as_record(self) -> list[str]:
        out = []
        for name in CSV_COLUMNS:
            v = getattr(self, name)
            out.append("" if v is None else repr(v) if isinstance(v, float) else str(v))
        return out

    @classmethod
    def from_record(cls, rec: dict) -> ReportRow:
        kw = {}
        for f in fields(cls):
            raw = rec.get(f.name, "")
            if f.name in ("case_id", "classification", "alteration", "mode", "method", "status"):
                kw[f.name] = raw
            elif raw == "":
                kw[f.name] = None
            elif f.name == "iterations":
                kw[f.name] = int(raw)
            else:
                kw[f.name] = float(raw)
        return cls(**kw)


@dataclass
class CasePair:
    """Preprocessed fixed/moving pair for one (case, mode)."""

    fixed: Image
    moving: Image
    fixed_mask: Mask


def _opposite_ground_truth(case: CaseManifest, cases) -> str:
    want = OPPOSITE[case.view]
    for other in cases:
        if other.view == want:
            return other.ground_truth_path
    raise ConfigError(f"no {want} ground truth in manifest for bilateral case {case.id}")


def prepare_pair(case: CaseManifest, mode: str, config: ExperimentConfig, cases=None) -> CasePair:
    """Load, orient and segment the images of one case.

    Intra mode pairs the altered image with its own ground truth. Bilateral
    mode pairs the mirrored altered image with the opposite-side ground
    truth. With ``fixed_is_ground_truth`` false the two roles swap.
    Background and artifacts outside each image's breast mask are zeroed.
    """
    base = Path(config.manifest).parent
    altered = fileio.load_pgm(base / case.altered_path)
    if mode == "intra":
        reference = fileio.load_pgm(base / case.ground_truth_path)
    else:
        reference = fileio.load_pgm(base / _opposite_ground_truth(case, cases or load_manifest(config.manifest)))
        altered = flip_horizontal(altered)
    fixed, moving = (reference, altered) if config.fixed_is_ground_truth else (altered, reference)
    seg = config.segmentation_params()
    fmask = segment_breast(fixed, seg)
    mmask = segment_breast(moving, seg)
    fixed = fixed.with_data(fixed.data * fmask.data)
    moving = moving.with_data(moving.data * mmask.data)
    return CasePair(fixed, moving, fmask)


def register_pair(pair: CasePair, method: str, config: ExperimentConfig):
    """Return (warped moving, field, iterations)."""
    if method == "bspline":
        res = register_bspline(pair.fixed, pair.moving, pair.fixed_mask, config.bspline_params())
        fld = grid_to_field(res.grid, pair.fixed.width, pair.fixed.height, pair.fixed.spacing, pair.fixed.origin)
        iterations = res.total_iterations
    elif method in ("demons", "demons_sym"):
        variant = "classic" if method == "demons" else "symmetric"
        res = register_demons(pair.fixed, pair.moving, pair.fixed_mask, config.demons_params(variant))
        fld = res.field
        iterations = res.iterations
    else:
        raise ConfigError(f"unknown method {method!r}")
    return warp(pair.moving, fld), fld, iterations


def jeh_names(case_id, method, mode):
    return [f"{case_id}_{method}_{mode}_{tag}.pgm" for tag in ("id", "pre", "post")]


def write_jeh(pair: CasePair, warped: Image, case_id, method, mode, config: ExperimentConfig, out_dir=None):
    """Joint-histogram pictures for (fixed, fixed), (fixed, moving), (fixed, warped)."""
    out = Path(out_dir or config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    for name, other in zip(jeh_names(case_id, method, mode), (pair.fixed, pair.moving, warped)):
        hist = joint_histogram(pair.fixed, other, pair.fixed_mask, config.jeh_bins)
        fileio.save_pgm(jeh_image(hist, config.jeh_size), out / name, bit_depth=8, write_meta=False)
        paths.append(out / name)
    return paths


def run_case(case: CaseManifest, method: str, mode: str, config: ExperimentConfig, cases=None) -> ReportRow:
    """Process one (case, method, mode). Failures come back as a row with a
    ``failed: ...`` status and empty metrics instead of raising."""
    row = ReportRow(case.id, case.classification, case.alteration, mode, method)
    t0 = time.perf_counter()
    try:
        pair = prepare_pair(case, mode, config, cases)
        warped, _, iterations = register_pair(pair, method, config)
        pre = metric_report(pair.fixed, pair.moving, pair.fixed_mask, config.mi_bins)
        post = metric_report(pair.fixed, warped, pair.fixed_mask, config.mi_bins)
        if config.emit_jeh:
            write_jeh(pair, warped, case.id, method, mode, config)
    except Exception as exc:  # noqa: BLE001 - a bad case must not stop the batch
        row.status = f"failed: {type(exc).__name__}: {exc}"
        return row
    row.mi_pre, row.mi_post = pre.mi, post.mi
    row.cc_pre, row.cc_post = pre.cc, post.cc
    row.ssd_pre, row.ssd_post = pre.ssd, post.ssd
    row.mi_delta = row.mi_post - row.mi_pre
    row.cc_delta = row.cc_post - row.cc_pre
    row.ssd_delta = row.ssd_post - row.ssd_pre
    row.iterations = int(iterations)
    if config.record_wall_time:
        row.wall_ms = (time.perf_counter() - t0) * 1000.0
    return row


def emit_jeh(case: CaseManifest, method: str, mode: str, config: ExperimentConfig, out_dir=None, cases=None):
    pair = prepare_pair(case, mode, config, cases)
    warped, _, _ = register_pair(pair, method, config)
    return write_jeh(pair, warped, case.id, method, mode, config, out_dir)


def _task(args):
    case, method, mode, config, cases = args
    return run_case(case, method, mode, config, cases)


def run_experiment(config: ExperimentConfig, cases=None) -> list[ReportRow]:
    """All cases x methods x modes, ordered by (case id, method, mode)."""
    if cases is None:
        cases = load_manifest(config.manifest)
    tasks = sorted(
        ((c, m, md) for c in cases for m in config.methods for md in config.modes),
        key=lambda t: (t[0].id, t[1], t[2]),
    )
    args = [(c, m, md, config, cases) for c, m, md in tasks]
    if config.jobs == 1:
        rows = [_task(a) for a in args]
    else:
        with ProcessPoolExecutor(max_workers=config.jobs) as pool:
            rows = list(pool.map(_task, args))
    return rows


def rows_to_csv(rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for r in rows:
        writer.writerow(r.as_record())
    return buf.getvalue()


def write_rows(rows, path) -> None:
    Path(path).write_text(rows_to_csv(rows))


def read_rows(path) -> list[ReportRow]:
    with open(path, newline="") as fh:
        return [ReportRow.from_record(rec) for rec in csv.DictReader(fh)]


SUMMARY_COLUMNS = ("mode", "classification", "alteration", "method", "n", "mi_delta", "cc_delta", "ssd_delta")


def summarize(rows) -> list[dict]:
    """Mean deltas per (mode, classification, alteration, method), followed by
    per-(mode, method) grand means labelled ``all``. Failed rows are skipped."""
    groups: dict[tuple, list[ReportRow]] = {}
    for r in rows:
        if not r.ok:
            continue
        groups.setdefault((r.mode, r.classification, r.alteration, r.method), []).append(r)
        groups.setdefault((r.mode, "all", "all", r.method), []).append(r)

    def order(key):
        mode, cls, alt, method = key
        return (mode, cls == "all", cls, alt, method)

    out = []
    for key in sorted(groups, key=order):
        members = groups[key]
        rec = dict(zip(SUMMARY_COLUMNS[:4], key))
        rec["n"] = len(members)
        for metric in ("mi_delta", "cc_delta", "ssd_delta"):
            rec[metric] = float(np.mean([getattr(r, metric) for r in members]))
        out.append(rec)
    return out


def write_summary(summary, path) -> None:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(SUMMARY_COLUMNS)
    for rec in summary:
        writer.writerow([repr(rec[c]) if isinstance(rec[c], float) else rec[c] for c in SUMMARY_COLUMNS])
    Path(path).write_text(buf.getvalue())


def grand_means(summary, mode: str, metric: str = "mi_delta") -> dict[str, float]:
    return {
        rec["method"]: rec[metric]
        for rec in summary
        if rec["mode"] == mode and rec["classification"] == "all"
    }
