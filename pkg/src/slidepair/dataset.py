"""Manifests and glomerulus-pair archives written by the pipeline."""

from __future__ import annotations

import json
import logging
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from .errors import SchemaError, SummaryMismatch, VersionUnsupported
from .imaging import RasterImage, sample_affine
from .io import atomic_write_text, write_png
from .patches import PatchPairRecord
from .transform import AffineTransform2D, require_invertible

log = logging.getLogger(__name__)

MANIFEST_VERSION = "1.0"
SUPPORTED_VERSIONS = ("1.0",)


@dataclass
class PairingEntry:
    """One H&E -> special-stain registration inside a group."""

    stain: str
    prealign: Optional[list[float]] = None
    affine: Optional[list[float]] = None
    keypoint_pair_count: int = 0
    flags: list[str] = field(default_factory=list)

    def to_json(self) -> dict:
        return {"stain": self.stain, "prealign": self.prealign, "affine": self.affine,
                "keypoint_pair_count": self.keypoint_pair_count, "flags": list(self.flags)}


@dataclass
class GroupEntry:
    group_id: str
    patient_id: str
    stains: list[str]
    wsi_paths: dict[str, str]
    working_level: int = 0
    pairings: list[PairingEntry] = field(default_factory=list)

    @property
    def keypoint_pair_count(self) -> int:
        return sum(p.keypoint_pair_count for p in self.pairings)

    def to_json(self) -> dict:
        return {
            "group_id": self.group_id, "patient_id": self.patient_id, "stains": list(self.stains),
            "wsi_paths": dict(self.wsi_paths), "working_level": self.working_level,
            "pairings": [p.to_json() for p in self.pairings],
            "keypoint_pair_count": self.keypoint_pair_count,
        }


@dataclass
class PairingManifest:
    groups: list[GroupEntry] = field(default_factory=list)
    patch_records: list[PatchPairRecord] = field(default_factory=list)
    version: str = MANIFEST_VERSION

    def summary(self) -> dict:
        paths = {p for g in self.groups for p in g.wsi_paths.values()}
        accepted = sum(1 for r in self.patch_records if r.accepted)
        return {
            "wsi_count": len(paths),
            "patient_count": len({g.patient_id for g in self.groups}),
            "glomerulus_pair_count": sum(g.keypoint_pair_count for g in self.groups),
            "accepted_patch_count": accepted,
            "rejected_patch_count": len(self.patch_records) - accepted,
        }

    def group(self, group_id: str) -> GroupEntry:
        for g in self.groups:
            if g.group_id == group_id:
                return g
        raise KeyError(group_id)

    def to_json(self) -> dict:
        return {
            "version": self.version,
            "groups": [g.to_json() for g in self.groups],
            "patch_records": [r.to_json() for r in self.patch_records],
            "summary": self.summary(),
        }

    def validate(self) -> None:
        """Check referential integrity; raises :class:`SchemaError`."""
        seen = set()
        for i, g in enumerate(self.groups):
            if g.group_id in seen:
                raise SchemaError(f"groups[{i}].group_id", f"duplicate group_id {g.group_id!r}")
            seen.add(g.group_id)
        for i, r in enumerate(self.patch_records):
            if r.group_id not in seen:
                raise SchemaError(f"patch_records[{i}].group_id", f"unknown group {r.group_id!r}")
            if not (0.0 <= r.fsim <= 1.0 and 0.0 <= r.ssim <= 1.0):
                raise SchemaError(f"patch_records[{i}]", "fsim and ssim must lie in [0, 1]")


def _req(obj: dict, key: str, where: str):
    if not isinstance(obj, dict) or key not in obj:
        raise SchemaError(f"{where}.{key}" if where else key, "missing")
    return obj[key]


def _transform_list(val, where: str):
    if val is None:
        return None
    if not isinstance(val, list) or len(val) != 6:
        raise SchemaError(where, "expected 6 affine entries or null")
    AffineTransform2D.from_list(val)
    return [float(v) for v in val]


def manifest_from_json(doc: dict) -> PairingManifest:
    version = _req(doc, "version", "")
    if version not in SUPPORTED_VERSIONS:
        raise VersionUnsupported(f"manifest version {version!r} not in {SUPPORTED_VERSIONS}")
    groups = []
    for i, g in enumerate(_req(doc, "groups", "")):
        where = f"groups[{i}]"
        pairings = []
        for j, p in enumerate(_req(g, "pairings", where)):
            pw = f"{where}.pairings[{j}]"
            pairings.append(PairingEntry(
                stain=str(_req(p, "stain", pw)),
                prealign=_transform_list(p.get("prealign"), f"{pw}.prealign"),
                affine=_transform_list(p.get("affine"), f"{pw}.affine"),
                keypoint_pair_count=int(_req(p, "keypoint_pair_count", pw)),
                flags=[str(f) for f in p.get("flags", [])],
            ))
        entry = GroupEntry(
            group_id=str(_req(g, "group_id", where)), patient_id=str(_req(g, "patient_id", where)),
            stains=[str(s) for s in _req(g, "stains", where)],
            wsi_paths={str(k): str(v) for k, v in _req(g, "wsi_paths", where).items()},
            working_level=int(g.get("working_level", 0)), pairings=pairings,
        )
        claimed = g.get("keypoint_pair_count")
        if claimed is not None and int(claimed) != entry.keypoint_pair_count:
            raise SummaryMismatch(f"{where}.keypoint_pair_count {claimed} != {entry.keypoint_pair_count}")
        groups.append(entry)
    records = []
    for i, r in enumerate(_req(doc, "patch_records", "")):
        try:
            records.append(PatchPairRecord.from_json(r))
        except (KeyError, TypeError, ValueError, IndexError) as exc:
            raise SchemaError(f"patch_records[{i}]", str(exc)) from None
    m = PairingManifest(groups, records, version)
    m.validate()
    claimed = _req(doc, "summary", "")
    actual = m.summary()
    for key, val in actual.items():
        if claimed.get(key) != val:
            raise SummaryMismatch(f"summary.{key} is {claimed.get(key)!r}, body gives {val}")
    return m


def manifest_to_text(m: PairingManifest) -> str:
    return json.dumps(m.to_json(), indent=2) + "\n"


def write_manifest(m: PairingManifest, path) -> None:
    """Validate and write atomically (temporary file, then rename)."""
    m.validate()
    text = manifest_to_text(m)
    manifest_from_json(json.loads(text))  # summary recomputation check
    atomic_write_text(path, text)


def read_manifest(path) -> PairingManifest:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise SchemaError("$", f"not valid JSON: {exc}") from None
    return manifest_from_json(doc)


def relpath(path, manifest_path) -> str:
    """``path`` relative to the directory holding ``manifest_path``."""
    return Path(os.path.relpath(Path(path).resolve(), Path(manifest_path).resolve().parent)).as_posix()


# ---------------------------------------------------------------------------
# glomerulus-centred pair archive

@dataclass
class GlomerulusPairEntry:
    pair_id: str
    group_id: str
    source_path: str
    target_path: str
    source_center: tuple[float, float]
    target_center: tuple[float, float]
    stains: tuple[str, str]
    he_patch: Optional[RasterImage] = field(default=None, repr=False, compare=False)
    special_patch: Optional[RasterImage] = field(default=None, repr=False, compare=False)

    def to_json(self) -> dict:
        return {"pair_id": self.pair_id, "group_id": self.group_id, "source_path": self.source_path,
                "target_path": self.target_path, "source_center": list(self.source_center),
                "target_center": list(self.target_center), "stains": list(self.stains)}


@dataclass
class GlomerulusPairArchive:
    entries: list[GlomerulusPairEntry] = field(default_factory=list)
    skipped: int = 0

    def validate(self) -> None:
        ids = [e.pair_id for e in self.entries]
        if len(set(ids)) != len(ids):
            raise SchemaError("entries[*].pair_id", "duplicate pair_id")
        for i, e in enumerate(self.entries):
            if not e.source_path or not e.target_path:
                raise SchemaError(f"entries[{i}]", "patch paths must be non-empty")

    def to_json(self) -> dict:
        return {"entries": [e.to_json() for e in self.entries], "skipped": self.skipped}

    def write(self, out_dir) -> Path:
        """Write patch PNGs and ``index.json`` under ``out_dir``; returns the index path."""
        self.validate()
        out = Path(out_dir)
        for e in self.entries:
            for rel, img in ((e.source_path, e.he_patch), (e.target_path, e.special_patch)):
                if img is not None:
                    (out / rel).parent.mkdir(parents=True, exist_ok=True)
                    write_png(img, out / rel)
        index = out / "pairs_glom" / "index.json"
        index.parent.mkdir(parents=True, exist_ok=True)
        atomic_write_text(index, json.dumps(self.to_json(), indent=2) + "\n")
        return index


def read_archive(path) -> GlomerulusPairArchive:
    doc = json.loads(Path(path).read_text())
    entries = [GlomerulusPairEntry(e["pair_id"], e["group_id"], e["source_path"], e["target_path"],
                                   tuple(e["source_center"]), tuple(e["target_center"]), tuple(e["stains"]))
               for e in doc["entries"]]
    arc = GlomerulusPairArchive(entries, int(doc.get("skipped", 0)))
    arc.validate()
    return arc


def export_glomerulus_pairs(pairs, he: RasterImage, special: RasterImage, t: AffineTransform2D,
                            crop: int = 512, *, group_id: str = "group",
                            stains: tuple[str, str] = ("HE", "PAS")) -> GlomerulusPairArchive:
    """Cut ``crop`` x ``crop`` patches centred on each matched glomerulus.

    The special-stain crop is taken directly around the target centre; the
    H&E crop is resampled through ``t^-1`` on the same grid. Pairs whose crop
    would leave the special image are skipped and counted.
    """
    require_invertible(t)
    if crop < 32:
        raise ValueError("crop must be >= 32")
    entries = []
    skipped = 0
    half = crop / 2.0
    for k, p in enumerate(pairs):
        x0 = int(round(p.target_center[0] - half))
        y0 = int(round(p.target_center[1] - half))
        if x0 < 0 or y0 < 0 or x0 + crop > special.width or y0 + crop > special.height:
            skipped += 1
            continue
        pair_id = f"{group_id}_{stains[1]}_{k:05d}"
        he_patch = special.with_data(sample_affine(he.data, t, crop, crop, x0=x0, y0=y0))
        entries.append(GlomerulusPairEntry(
            pair_id=pair_id, group_id=group_id,
            source_path=f"pairs_glom/{pair_id}_{stains[0]}.png",
            target_path=f"pairs_glom/{pair_id}_{stains[1]}.png",
            source_center=tuple(map(float, p.source_center)),
            target_center=tuple(map(float, p.target_center)),
            stains=tuple(stains), he_patch=he_patch, special_patch=special.crop(x0, y0, crop, crop),
        ))
    if skipped:
        log.warning("%d glomerulus pair(s) too close to the border for a %d px crop", skipped, crop)
    return GlomerulusPairArchive(entries, skipped)
