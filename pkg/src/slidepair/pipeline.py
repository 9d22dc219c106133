"""End-to-end pairing run: prealign, detect and match, register, tile and filter."""

from __future__ import annotations

import json
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Optional

from .dataset import (GlomerulusPairArchive, GroupEntry, PairingEntry, PairingManifest, export_glomerulus_pairs,
                      relpath, write_manifest)
from .errors import (DegenerateConfiguration, MissingFile, NoConsensus, PairingError, SchemaError, TooFewPoints)
from .glomeruli import (STAINS, GlomerulusDetection, MatchConfig, MatchedKeypointPair, detect_blobs,
                        ingest_detections, match_glomeruli)
from .imaging import RasterImage, downsample_size, luminance, resize_area
from .io import read_image, write_png
from .patches import SimilarityThresholds, TilingConfig, read_external_scores, score_and_filter, tile_pair
from .prealign import PreAlignResult, RotationSearchConfig, search_rotation
from .registration import RansacConfig, RegistrationResult, fit_affine_ransac, rmse
from .transform import AffineTransform2D

log = logging.getLogger(__name__)

SPECIAL_STAINS = tuple(s for s in STAINS if s != "HE")


@dataclass(frozen=True)
class DetectConfig:
    scales: tuple[float, ...] = (6.0, 8.0, 10.0, 12.0, 14.0)
    threshold: float = 0.05
    # detection runs on a copy reduced to this size; scales stay in full-resolution pixels
    max_dim: int = 1024

    def __post_init__(self):
        object.__setattr__(self, "scales", tuple(float(s) for s in self.scales))
        if not self.scales or list(self.scales) != sorted(self.scales) or self.scales[0] <= 0:
            raise ValueError("scales must be a non-empty ascending list of positive sigmas")
        if self.max_dim < 16:
            raise ValueError("max_dim must be >= 16")


@dataclass(frozen=True)
class GroupConfig:
    group_id: str
    he_path: str
    special_paths: dict[str, str]
    patient_id: str = ""
    detections: dict[str, str] = field(default_factory=dict)
    external_scores: dict[str, str] = field(default_factory=dict)
    working_level: int = 0


@dataclass(frozen=True)
class PipelineConfig:
    groups: list[GroupConfig] = field(default_factory=list)
    output_dir: str = "out"
    prealign: RotationSearchConfig = field(default_factory=RotationSearchConfig)
    detect: DetectConfig = field(default_factory=DetectConfig)
    match: MatchConfig = field(default_factory=MatchConfig)
    ransac: RansacConfig = field(default_factory=RansacConfig)
    tiling: TilingConfig = field(default_factory=TilingConfig)
    thresholds: SimilarityThresholds = field(default_factory=SimilarityThresholds)
    glomerulus_crop: int = 512
    write_patches: bool = True
    skip_registration: bool = False

    def to_json(self) -> dict:
        doc = asdict(self)
        doc["detect"]["scales"] = list(self.detect.scales)
        return doc


@dataclass
class PairingReport:
    group_id: str
    stain: str
    angle: Optional[float] = None
    prealign_score: Optional[float] = None
    keypoint_pairs: int = 0
    rmse: Optional[float] = None
    inliers: int = 0
    tiles_total: int = 0
    tiles_accepted: int = 0
    tiles_rejected: int = 0
    flags: list[str] = field(default_factory=list)  # degraded results: exit status 2
    warnings: list[str] = field(default_factory=list)
    error: Optional[str] = None
    transform: Optional[list[float]] = None

    @property
    def failed(self) -> bool:
        return bool(self.flags) or self.error is not None


@dataclass
class PipelineReport:
    pairings: list[PairingReport] = field(default_factory=list)
    manifest_path: Optional[str] = None

    @property
    def exit_status(self) -> int:
        return 2 if any(p.failed for p in self.pairings) else 0

    def to_json(self) -> dict:
        return {"exit_status": self.exit_status, "manifest": self.manifest_path,
                "pairings": [asdict(p) for p in self.pairings]}


# ---------------------------------------------------------------------------
# configuration

_SECTIONS = {
    "prealign": RotationSearchConfig,
    "detect": DetectConfig,
    "match": MatchConfig,
    "ransac": RansacConfig,
    "tiling": TilingConfig,
    "thresholds": SimilarityThresholds,
}


def _section(doc: dict, name: str, cls):
    raw = doc.get(name, {})
    if not isinstance(raw, dict):
        raise SchemaError(name, "expected an object")
    known = {f.name for f in fields(cls)}
    for key in raw:
        if key not in known:
            raise SchemaError(f"{name}.{key}", "unknown field")
    try:
        return cls(**raw)
    except (TypeError, ValueError) as exc:
        raise SchemaError(name, str(exc)) from None


def _path(base: Path, value, where: str, check: bool) -> str:
    if not isinstance(value, str) or not value:
        raise SchemaError(where, "expected a non-empty path string")
    p = Path(value)
    if not p.is_absolute():
        p = base / p
    if check and not p.exists():
        raise MissingFile(p)
    return str(p)


def config_from_json(doc: dict, base_dir=".", check_files: bool = True) -> PipelineConfig:
    """Build a :class:`PipelineConfig` from parsed JSON, materialising every default.

    Relative paths resolve against ``base_dir``.
    """
    if not isinstance(doc, dict):
        raise SchemaError("$", "config must be a JSON object")
    base = Path(base_dir)
    raw_groups = doc.get("groups", [])
    if not isinstance(raw_groups, list):
        raise SchemaError("groups", "expected a list")
    groups = []
    ids = set()
    for i, g in enumerate(raw_groups):
        where = f"groups[{i}]"
        if not isinstance(g, dict):
            raise SchemaError(where, "expected an object")
        for key in ("group_id", "he_path"):
            if key not in g:
                raise SchemaError(f"{where}.{key}", "missing")
        gid = str(g["group_id"])
        if gid in ids:
            raise SchemaError("groups[*].group_id", f"duplicate group_id {gid!r}")
        ids.add(gid)
        specials = g.get("special_paths") or {}
        if not isinstance(specials, dict) or not specials:
            raise SchemaError(f"{where}.special_paths", "need at least one special stain")
        for stain in specials:
            if stain not in SPECIAL_STAINS:
                raise SchemaError(f"{where}.special_paths.{stain}", f"stain must be one of {SPECIAL_STAINS}")
        he_path = _path(base, g["he_path"], f"{where}.he_path", check_files)
        special_paths = {s: _path(base, p, f"{where}.special_paths.{s}", check_files)
                         for s, p in sorted(specials.items())}
        all_paths = [he_path, *special_paths.values()]
        if len(set(all_paths)) != len(all_paths):
            raise SchemaError(f"{where}", "slide paths must be distinct")
        dets = {s: _path(base, p, f"{where}.detections.{s}", check_files)
                for s, p in sorted((g.get("detections") or {}).items())}
        ext = {s: _path(base, p, f"{where}.external_scores.{s}", check_files)
               for s, p in sorted((g.get("external_scores") or {}).items())}
        groups.append(GroupConfig(
            group_id=gid, he_path=he_path, special_paths=special_paths,
            patient_id=str(g.get("patient_id", gid)), detections=dets, external_scores=ext,
            working_level=int(g.get("working_level", 0)),
        ))
    sections = {name: _section(doc, name, cls) for name, cls in _SECTIONS.items()}
    out_dir = doc.get("output_dir", "out")
    if not isinstance(out_dir, str) or not out_dir:
        raise SchemaError("output_dir", "expected a non-empty path string")
    out = Path(out_dir)
    crop = doc.get("glomerulus_crop", 512)
    if not isinstance(crop, int) or crop < 32:
        raise SchemaError("glomerulus_crop", "must be an integer >= 32")
    return PipelineConfig(
        groups=groups,
        output_dir=str(out if out.is_absolute() else base / out),
        glomerulus_crop=crop,
        write_patches=bool(doc.get("write_patches", True)),
        skip_registration=bool(doc.get("skip_registration", False)),
        **sections,
    )


def validate_config(path) -> PipelineConfig:
    p = Path(path)
    if not p.exists():
        raise MissingFile(p)
    try:
        doc = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise SchemaError("$", f"not valid JSON: {exc}") from None
    return config_from_json(doc, base_dir=p.parent)


# ---------------------------------------------------------------------------
# stages

def detect_at_working_size(img: RasterImage, dcfg: DetectConfig, slide_id: str, stain: str,
                           level: int = 0) -> list[GlomerulusDetection]:
    """Run the blob detector on a reduced copy and map results back to full resolution."""
    w, h = downsample_size(img.width, img.height, dcfg.max_dim)
    if (w, h) == (img.width, img.height):
        return detect_blobs(img, dcfg.scales, dcfg.threshold, slide_id=slide_id, stain=stain, level=level)
    low = resize_area(img.with_data(luminance(img)), w, h)
    sx, sy = img.width / w, img.height / h
    s = (sx + sy) / 2.0
    dets = detect_blobs(low, [sc / s for sc in dcfg.scales], dcfg.threshold,
                        slide_id=slide_id, stain=stain, level=level)
    out = []
    for d in dets:
        cx, cy = (d.center[0] + 0.5) * sx - 0.5, (d.center[1] + 0.5) * sy - 0.5
        sig = d.scale * s
        out.append(GlomerulusDetection(d.id, d.slide_id, d.stain, (cx, cy),
                                       (cx - 2 * sig, cy - 2 * sig, cx + 2 * sig, cy + 2 * sig),
                                       d.confidence, d.level, sig))
    return out


@dataclass
class RegisteredPair:
    """Outcome of stages 1 to 3 for one H&E / special-stain pair."""

    prealign: PreAlignResult
    pairs: list[MatchedKeypointPair]
    fit: Optional[RegistrationResult]
    transform: AffineTransform2D  # best available source -> target map
    flags: list[str] = field(default_factory=list)


def register_pair(he: RasterImage, special: RasterImage, cfg: PipelineConfig | None = None,
                  source_dets=None, target_dets=None, *, ids=("HE", "special"), stain: str = "PAS",
                  level: int = 0) -> RegisteredPair:
    """Pre-align, match glomeruli and fit the affine for an in-memory pair.

    Detections are computed at the working size unless given. When the
    affine fit fails the pre-alignment is kept and a flag says why.
    """
    cfg = cfg or PipelineConfig()
    pre = search_rotation(he, special, cfg.prealign)
    if source_dets is None:
        source_dets = detect_at_working_size(he, cfg.detect, ids[0], "HE", level)
    if target_dets is None:
        target_dets = detect_at_working_size(special, cfg.detect, ids[1], stain, level)
    pairs = match_glomeruli(source_dets, target_dets, pre.transform, cfg.match)
    try:
        fit = fit_affine_ransac(pairs, cfg.ransac)
    except (TooFewPoints, NoConsensus, DegenerateConfiguration) as exc:
        return RegisteredPair(pre, pairs, None, pre.transform, [f"affine_fallback: {type(exc).__name__}"])
    return RegisteredPair(pre, pairs, fit, fit.transform)


@dataclass
class _PairingOutput:
    report: PairingReport
    entry: PairingEntry
    records: list
    archive: GlomerulusPairArchive


def _run_pairing(cfg: PipelineConfig, group: GroupConfig, he: RasterImage, stain: str,
                 manifest_dir: Path) -> _PairingOutput:
    rep = PairingReport(group.group_id, stain)
    entry = PairingEntry(stain)
    out = _PairingOutput(rep, entry, [], GlomerulusPairArchive())
    try:
        special = read_image(group.special_paths[stain])
        src_dets = (ingest_detections(group.detections["HE"], cfg.match.min_confidence)
                    if "HE" in group.detections else None)
        dst_dets = (ingest_detections(group.detections[stain], cfg.match.min_confidence)
                    if stain in group.detections else None)
        reg = register_pair(he, special, cfg, src_dets, dst_dets,
                            ids=(f"{group.group_id}-HE", f"{group.group_id}-{stain}"), stain=stain,
                            level=group.working_level)
        pre, pairs, transform = reg.prealign, reg.pairs, reg.transform
        rep.angle, rep.prealign_score = pre.angle, pre.score
        entry.prealign = pre.transform.to_list()
        rep.keypoint_pairs = entry.keypoint_pair_count = len(pairs)
        rep.flags.extend(reg.flags)
        if reg.fit is not None:
            entry.affine = reg.fit.transform.to_list()
            rep.rmse, rep.inliers = reg.fit.rmse, len(reg.fit.inlier_ids)
        else:
            rep.rmse = rmse(pre.transform, pairs) if pairs else None
        if cfg.skip_registration:
            transform = AffineTransform2D.identity()
            rep.warnings.append("registration_skipped")
        rep.transform = transform.to_list()

        tiles = tile_pair(he, special, transform, cfg.tiling)
        ext = None
        if stain in group.external_scores:
            ext = read_external_scores(group.external_scores[stain])
        records = score_and_filter(tiles, cfg.thresholds, ext, group_id=group.group_id, stains=("HE", stain))
        if cfg.write_patches and records:
            pdir = Path(cfg.output_dir) / "patches" / stain
            pdir.mkdir(parents=True, exist_ok=True)
            named = []
            for tp, rec in zip(sorted(tiles, key=lambda t: (t.origin[1], t.origin[0])), records):
                x, y = rec.origin
                src_p = pdir / f"{group.group_id}_HE_{x}_{y}.png"
                tgt_p = pdir / f"{group.group_id}_{stain}_{x}_{y}.png"
                write_png(tp.he_patch, src_p)
                write_png(tp.special_patch, tgt_p)
                named.append(_with_paths(rec, relpath(src_p, manifest_dir / "m.json"),
                                         relpath(tgt_p, manifest_dir / "m.json")))
            records = named
        out.records = records
        rep.tiles_total = len(records)
        rep.tiles_accepted = sum(r.accepted for r in records)
        rep.tiles_rejected = rep.tiles_total - rep.tiles_accepted

        if pairs:
            out.archive = export_glomerulus_pairs(pairs, he, special, transform, cfg.glomerulus_crop,
                                                  group_id=group.group_id, stains=("HE", stain))
            if out.archive.skipped:
                rep.warnings.append(f"glomeruli_skipped_at_border: {out.archive.skipped}")
    except PairingError as exc:
        rep.error = f"{type(exc).__name__}: {exc}"
        entry.flags.append(type(exc).__name__)
        log.warning("group %s / %s failed: %s", group.group_id, stain, rep.error)
    entry.flags.extend(f for f in rep.flags + rep.warnings if f not in entry.flags)
    return out


def _with_paths(rec, source_path: str, target_path: str):
    from dataclasses import replace

    return replace(rec, source_path=source_path, target_path=target_path)


def run_pipeline(cfg: PipelineConfig, manifest_path=None, workers: int = 1) -> PipelineReport:
    """Process every group and H&E/special pairing, then write the manifest once.

    Per-pairing failures are recorded in the report and never abort other
    pairings. Output ordering is by ``(group_id, stain)`` whatever the
    number of ``workers``.
    """
    out_dir = Path(cfg.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest_path = Path(manifest_path) if manifest_path else out_dir / "manifest.json"
    manifest_dir = manifest_path.resolve().parent

    groups = sorted(cfg.groups, key=lambda g: g.group_id)
    he_cache: dict[str, RasterImage | Exception] = {}

    def load_he(group: GroupConfig):
        if group.group_id not in he_cache:
            try:
                he_cache[group.group_id] = read_image(group.he_path)
            except (OSError, ValueError) as exc:
                he_cache[group.group_id] = exc
        return he_cache[group.group_id]

    jobs = [(g, s) for g in groups for s in sorted(g.special_paths)]
    for g in groups:
        load_he(g)

    def run(job):
        group, stain = job
        he = he_cache[group.group_id]
        if isinstance(he, Exception):
            rep = PairingReport(group.group_id, stain, error=f"{type(he).__name__}: {he}")
            return _PairingOutput(rep, PairingEntry(stain, flags=["unreadable_he"]), [], GlomerulusPairArchive())
        try:
            return _run_pairing(cfg, group, he, stain, manifest_dir)
        except (OSError, ValueError) as exc:
            rep = PairingReport(group.group_id, stain, error=f"{type(exc).__name__}: {exc}")
            return _PairingOutput(rep, PairingEntry(stain, flags=[type(exc).__name__]), [],
                                  GlomerulusPairArchive())

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            results = list(ex.map(run, jobs))
    else:
        results = [run(j) for j in jobs]

    manifest = PairingManifest()
    archive = GlomerulusPairArchive()
    report = PipelineReport()
    by_group: dict[str, list[_PairingOutput]] = {}
    for (g, _), res in zip(jobs, results):
        by_group.setdefault(g.group_id, []).append(res)
    for g in groups:
        wsi = {"HE": relpath(g.he_path, manifest_path)}
        wsi.update({s: relpath(p, manifest_path) for s, p in g.special_paths.items()})
        entry = GroupEntry(g.group_id, g.patient_id, ["HE", *sorted(g.special_paths)], wsi, g.working_level)
        for res in by_group.get(g.group_id, []):
            entry.pairings.append(res.entry)
            manifest.patch_records.extend(res.records)
            archive.entries.extend(res.archive.entries)
            archive.skipped += res.archive.skipped
            report.pairings.append(res.report)
        manifest.groups.append(entry)

    if archive.entries:
        archive.write(out_dir)
    write_manifest(manifest, manifest_path)
    report.manifest_path = str(manifest_path)
    return report


def resolve_workers(threads: int) -> int:
    return threads if threads > 0 else (os.cpu_count() or 1)
