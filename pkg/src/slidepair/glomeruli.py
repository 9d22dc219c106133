"""Stage 2: glomerulus detection, ingestion and cross-slide matching."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np
from scipy import ndimage

from .assignment import hungarian
from .errors import ParseError, SchemaError
from .imaging import RasterImage, luminance
from .transform import AffineTransform2D, require_invertible

STAINS = ("HE", "PAS", "PASM", "MASSON")


@dataclass(frozen=True)
class GlomerulusDetection:
    id: str
    slide_id: str
    stain: str
    center: tuple[float, float]
    bbox: tuple[float, float, float, float]
    confidence: float = 1.0
    level: int = 0
    scale: Optional[float] = None

    def __post_init__(self):
        if self.stain not in STAINS:
            raise SchemaError("stain", f"unknown stain {self.stain!r}")
        x0, y0, x1, y1 = self.bbox
        if not (x0 < x1 and y0 < y1):
            raise SchemaError("bbox", f"need x0<x1 and y0<y1, got {self.bbox}")
        cx, cy = self.center
        if not (x0 <= cx <= x1 and y0 <= cy <= y1):
            raise SchemaError("center", f"center {self.center} outside bbox {self.bbox}")
        if not 0.0 <= self.confidence <= 1.0:
            raise SchemaError("confidence", f"must be in [0, 1], got {self.confidence}")

    def to_json(self) -> dict:
        return {
            "id": self.id, "slide_id": self.slide_id, "stain": self.stain,
            "cx": self.center[0], "cy": self.center[1],
            "x0": self.bbox[0], "y0": self.bbox[1], "x1": self.bbox[2], "y1": self.bbox[3],
            "confidence": self.confidence, "level": self.level,
        }


@dataclass(frozen=True)
class MatchedKeypointPair:
    source_id: str
    target_id: str
    source_center: tuple[float, float]
    target_center: tuple[float, float]
    distance: float

    def to_json(self) -> dict:
        return {
            "source_id": self.source_id, "target_id": self.target_id,
            "sx": self.source_center[0], "sy": self.source_center[1],
            "tx": self.target_center[0], "ty": self.target_center[1],
            "dist": self.distance,
        }

    @classmethod
    def from_json(cls, rec: dict) -> MatchedKeypointPair:
        return cls(str(rec["source_id"]), str(rec["target_id"]),
                   (float(rec["sx"]), float(rec["sy"])), (float(rec["tx"]), float(rec["ty"])),
                   float(rec["dist"]))


@dataclass(frozen=True)
class MatchConfig:
    max_dist: float = 300.0
    min_confidence: float = 0.0

    def __post_init__(self):
        if not self.max_dist > 0:
            raise ValueError("max_dist must be positive")
        if not 0.0 <= self.min_confidence <= 1.0:
            raise ValueError("min_confidence must be in [0, 1]")


# ---------------------------------------------------------------------------
# detection

def log_stack(gray: np.ndarray, scales) -> np.ndarray:
    """Scale-normalised LoG responses, positive at dark blob centres."""
    return np.stack([s * s * ndimage.gaussian_laplace(gray, s, mode="nearest") for s in scales])


def _parabolic(m, c, p) -> float:
    den = m - 2.0 * c + p
    if den >= 0:
        return 0.0
    return float(np.clip(0.5 * (m - p) / den, -0.5, 0.5))


def detect_blobs(img: RasterImage, scales, threshold: float = 0.05, *, polarity: str = "dark",
                 slide_id: str = "slide", stain: str = "HE", level: int = 0) -> list[GlomerulusDetection]:
    """Multiscale Laplacian-of-Gaussian blob detector.

    Keeps 3x3x3 scale-space maxima whose normalised response exceeds
    ``threshold``, strongest first, suppressing any candidate closer than
    ``sigma * sqrt(2)`` (larger of the two sigmas) to a kept one. Centres
    are refined to sub-pixel precision by a parabola through the response.
    A dark Gaussian blob of depth ``A`` peaks at response ``A / 2``, so
    ``confidence = min(1, 2 * response)``.
    """
    scales = [float(s) for s in scales]
    if not scales or any(s <= 0 for s in scales) or scales != sorted(scales):
        raise ValueError("scales must be a non-empty ascending list of positive sigmas")
    if polarity not in ("dark", "bright"):
        raise ValueError("polarity must be 'dark' or 'bright'")
    gray = luminance(img)
    resp = log_stack(gray, scales)
    if polarity == "bright":
        resp = -resp
    peaks = (resp == ndimage.maximum_filter(resp, size=3, mode="nearest")) & (resp > threshold)
    si, yi, xi = np.nonzero(peaks)
    if si.size == 0:
        return []
    vals = resp[si, yi, xi]
    order = np.lexsort((xi, yi, si, -vals))

    kept: list[tuple[int, int, int]] = []
    kept_xy = np.empty((0, 2))
    kept_sig = np.empty(0)
    sig_arr = np.asarray(scales)
    for idx in order:
        s, y, x = int(si[idx]), int(yi[idx]), int(xi[idx])
        sig = sig_arr[s]
        if kept_sig.size:
            d = np.hypot(kept_xy[:, 0] - x, kept_xy[:, 1] - y)
            if np.any(d <= np.maximum(kept_sig, sig) * math.sqrt(2.0)):
                continue
        kept.append((s, y, x))
        kept_xy = np.vstack([kept_xy, [x, y]])
        kept_sig = np.append(kept_sig, sig)

    h, w = gray.shape
    out = []
    for k, (s, y, x) in enumerate(kept):
        r = resp[s]
        dx = _parabolic(r[y, x - 1], r[y, x], r[y, x + 1]) if 0 < x < w - 1 else 0.0
        dy = _parabolic(r[y - 1, x], r[y, x], r[y + 1, x]) if 0 < y < h - 1 else 0.0
        cx, cy = x + dx, y + dy
        sig = scales[s]
        out.append(GlomerulusDetection(
            id=f"{slide_id}-{k:04d}", slide_id=slide_id, stain=stain, center=(cx, cy),
            bbox=(cx - 2 * sig, cy - 2 * sig, cx + 2 * sig, cy + 2 * sig),
            confidence=float(min(1.0, 2.0 * r[y, x])), level=level, scale=sig,
        ))
    return out


# ---------------------------------------------------------------------------
# detection files (JSON Lines)

_REQUIRED = ("id", "slide_id", "stain", "cx", "cy", "x0", "y0", "x1", "y1", "confidence")


def _num(rec: dict, key: str, line: int) -> float:
    val = rec[key]
    if isinstance(val, bool) or not isinstance(val, (int, float)) or not math.isfinite(val):
        raise SchemaError(key, f"expected a finite number, got {val!r}", line=line)
    return float(val)


def ingest_detections(path, min_confidence: float = 0.0) -> list[GlomerulusDetection]:
    """Parse a JSON Lines detection file, dropping records below ``min_confidence``."""
    out = []
    with open(path) as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(line_no, str(exc)) from None
            if not isinstance(rec, dict):
                raise ParseError(line_no, "record is not a JSON object")
            for key in _REQUIRED:
                if key not in rec:
                    raise SchemaError(key, "missing", line=line_no)
            x0, y0, x1, y1 = (_num(rec, k, line_no) for k in ("x0", "y0", "x1", "y1"))
            try:
                det = GlomerulusDetection(
                    id=str(rec["id"]), slide_id=str(rec["slide_id"]), stain=str(rec["stain"]),
                    center=(_num(rec, "cx", line_no), _num(rec, "cy", line_no)),
                    bbox=(x0, y0, x1, y1), confidence=_num(rec, "confidence", line_no),
                    level=int(rec.get("level", 0)),
                )
            except SchemaError as exc:
                raise SchemaError(exc.field, exc.message, line=line_no) from None
            if det.confidence >= min_confidence:
                out.append(det)
    return out


def write_detections(dets, path) -> None:
    with open(path, "w") as fh:
        for det in dets:
            fh.write(json.dumps(det.to_json()) + "\n")


def write_keypoints(pairs, path) -> None:
    Path(path).write_text(json.dumps({"pairs": [p.to_json() for p in pairs]}, indent=2))


def read_keypoints(path) -> list[MatchedKeypointPair]:
    doc = json.loads(Path(path).read_text())
    try:
        return [MatchedKeypointPair.from_json(rec) for rec in doc["pairs"]]
    except (KeyError, TypeError, ValueError) as exc:
        raise SchemaError("pairs", str(exc)) from None


# ---------------------------------------------------------------------------
# matching

def match_glomeruli(src, dst, pre: AffineTransform2D | None = None,
                    cfg: MatchConfig | None = None) -> list[MatchedKeypointPair]:
    """Pair source and target detections by minimum total centre distance.

    Source centres are mapped through ``pre`` into the target frame. Pairs
    farther apart than ``cfg.max_dist`` are priced with a sentinel so the
    solver maximises the number of gated matches, then discarded.
    Output is sorted by distance.
    """
    cfg = cfg or MatchConfig()
    pre = pre or AffineTransform2D.identity()
    require_invertible(pre)
    src = [d for d in src if d.confidence >= cfg.min_confidence]
    dst = [d for d in dst if d.confidence >= cfg.min_confidence]
    if not src or not dst:
        return []
    sc = pre.apply(np.array([d.center for d in src]))
    tc = np.array([d.center for d in dst])
    dist = np.hypot(sc[:, None, 0] - tc[None, :, 0], sc[:, None, 1] - tc[None, :, 1])
    sentinel = cfg.max_dist * min(len(src), len(dst)) + 1.0
    cost = np.where(dist > cfg.max_dist, sentinel, dist)
    pairs = []
    for i, j in hungarian(cost).pairs:
        if dist[i, j] <= cfg.max_dist:
            pairs.append(MatchedKeypointPair(src[i].id, dst[j].id, tuple(map(float, src[i].center)),
                                             tuple(map(float, dst[j].center)), float(dist[i, j])))
    pairs.sort(key=lambda p: (p.distance, p.source_id, p.target_id))
    return pairs
