"""Stage 4: tile registered slide pairs, score tile similarity, accept or reject."""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, NamedTuple, Optional

import numpy as np

from .errors import DegenerateInput, DegenerateMask, MissingExternalScore
from .imaging import RasterImage, apply_affine, tissue_mask
from .similarity import fsim, ssim
from .transform import AffineTransform2D, require_invertible

# Midpoint between aligned and 64 px-misaligned synthetic tile pairs; see
# calibrate_fsim_threshold and benchmarks/calibrate_threshold.py.
DEFAULT_FSIM_MIN = 0.90


@dataclass(frozen=True)
class TilingConfig:
    patch: int = 512
    stride: int = 512
    min_tissue_frac: float = 0.25

    def __post_init__(self):
        if self.patch < 32:
            raise ValueError("patch must be >= 32")
        if self.stride < 1:
            raise ValueError("stride must be >= 1")
        if not 0.0 <= self.min_tissue_frac <= 1.0:
            raise ValueError("min_tissue_frac must be in [0, 1]")


@dataclass(frozen=True)
class SimilarityThresholds:
    fsim_min: Optional[float] = DEFAULT_FSIM_MIN
    ssim_min: Optional[float] = None
    external_max: Optional[float] = None

    def __post_init__(self):
        if self.fsim_min is None and self.ssim_min is None and self.external_max is None:
            raise ValueError("at least one similarity criterion must be set")

    def accepts(self, fsim_value: float, ssim_value: float, external: Optional[float]) -> bool:
        ok = True
        if self.fsim_min is not None:
            ok = ok and fsim_value >= self.fsim_min
        if self.ssim_min is not None:
            ok = ok and ssim_value >= self.ssim_min
        if self.external_max is not None:
            ok = ok and external is not None and external <= self.external_max
        return ok


@dataclass(frozen=True)
class PatchPairRecord:
    group_id: str
    stains: tuple[str, str]
    origin: tuple[int, int]
    size: int
    fsim: float
    ssim: float
    external: Optional[float]
    accepted: bool
    source_path: str = ""
    target_path: str = ""

    def to_json(self) -> dict:
        return {
            "group_id": self.group_id, "stains": list(self.stains), "origin": list(self.origin),
            "size": self.size, "fsim": self.fsim, "ssim": self.ssim, "external": self.external,
            "accepted": self.accepted, "source_path": self.source_path, "target_path": self.target_path,
        }

    @classmethod
    def from_json(cls, rec: dict) -> PatchPairRecord:
        ext = rec.get("external")
        return cls(
            group_id=str(rec["group_id"]), stains=tuple(rec["stains"]),
            origin=(int(rec["origin"][0]), int(rec["origin"][1])), size=int(rec["size"]),
            fsim=float(rec["fsim"]), ssim=float(rec["ssim"]),
            external=None if ext is None else float(ext), accepted=bool(rec["accepted"]),
            source_path=str(rec.get("source_path", "")), target_path=str(rec.get("target_path", "")),
        )


class TilePair(NamedTuple):
    he_patch: RasterImage
    special_patch: RasterImage
    origin: tuple[int, int]


def grid_origins(width: int, height: int, cfg: TilingConfig) -> list[tuple[int, int]]:
    """Top-left corners of every full tile; partial border tiles are dropped."""
    return [(x, y) for y in range(0, height - cfg.patch + 1, cfg.stride)
            for x in range(0, width - cfg.patch + 1, cfg.stride)]


def tile_pair(he: RasterImage, special: RasterImage, t: AffineTransform2D,
              cfg: TilingConfig | None = None) -> list[TilePair]:
    """Cut co-registered tiles on the special-stain grid.

    ``t`` maps H&E pixels into the special-stain frame; H&E tiles are
    resampled through ``t^-1`` at the special tile's coordinates. Tiles
    with less than ``cfg.min_tissue_frac`` tissue in the special image are
    skipped; a special image without tissue yields no tiles.
    """
    cfg = cfg or TilingConfig()
    require_invertible(t)
    try:
        mask = tissue_mask(special).bits
    except DegenerateMask:
        return []
    p = cfg.patch
    keep = [(x, y) for x, y in grid_origins(special.width, special.height, cfg)
            if mask[y:y + p, x:x + p].mean() >= cfg.min_tissue_frac]
    if not keep:
        return []
    moved = apply_affine(he, t, special.width, special.height)
    return [TilePair(moved.crop(x, y, p, p), special.crop(x, y, p, p), (x, y)) for x, y in keep]


def _scores(pair: TilePair) -> tuple[float, float]:
    try:
        f = fsim(pair.he_patch, pair.special_patch)
    except DegenerateInput:
        f = 0.0
    s = ssim(pair.he_patch, pair.special_patch)
    return f, s


def score_and_filter(tiles, thr: SimilarityThresholds | None = None,
                     external_scores: Mapping[tuple[int, int], float] | None = None, *,
                     group_id: str = "", stains: tuple[str, str] = ("HE", "PAS"),
                     workers: int = 1) -> list[PatchPairRecord]:
    """Score every tile pair and flag it accepted when all configured criteria hold.

    Records come back ordered by ``(origin.y, origin.x)``. Stored SSIM is
    clipped to ``[0, 1]``; a tile pair without phase structure scores FSIM 0.
    """
    thr = thr or SimilarityThresholds()
    tiles = sorted(tiles, key=lambda tp: (tp.origin[1], tp.origin[0]))
    externals: list[Optional[float]] = []
    for tp in tiles:
        ext = None
        if external_scores is not None:
            ext = external_scores.get(tuple(tp.origin))
        if thr.external_max is not None and ext is None:
            raise MissingExternalScore(tp.origin)
        externals.append(None if ext is None else float(ext))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            scores = list(ex.map(_scores, tiles))
    else:
        scores = [_scores(tp) for tp in tiles]
    records = []
    for tp, (f, s), ext in zip(tiles, scores, externals):
        s01 = float(np.clip(s, 0.0, 1.0))
        records.append(PatchPairRecord(
            group_id=group_id, stains=tuple(stains), origin=(int(tp.origin[0]), int(tp.origin[1])),
            size=int(tp.special_patch.width), fsim=f, ssim=s01, external=ext,
            accepted=thr.accepts(f, s01, ext),
        ))
    return records


def read_external_scores(path) -> dict[tuple[int, int], float]:
    """JSON object mapping ``"x_y"`` tile origins to scores."""
    doc = json.loads(Path(path).read_text())
    out = {}
    for key, val in doc.items():
        x, y = key.split("_")
        out[(int(x), int(y))] = float(val)
    return out


def calibrate_fsim_threshold(aligned, misaligned) -> tuple[float, float]:
    """Threshold separating aligned from misaligned FSIM scores, and its accuracy.

    Scans midpoints between consecutive sorted scores and returns the one
    with the best balanced accuracy (ties: the midpoint of the widest gap).
    """
    a = np.sort(np.asarray(aligned, dtype=np.float64))
    m = np.sort(np.asarray(misaligned, dtype=np.float64))
    allv = np.unique(np.concatenate([a, m]))
    cands = np.concatenate([[allv[0] - 1e-6], (allv[:-1] + allv[1:]) / 2.0, [allv[-1] + 1e-6]])
    gaps = np.concatenate([[0.0], np.diff(allv), [0.0]])
    best = None
    for thr, gap in zip(cands, gaps):
        acc = 0.5 * (np.mean(a >= thr) + np.mean(m < thr))
        key = (acc, gap)
        if best is None or key > best[0]:
            best = (key, thr)
    (acc, _), thr = best
    return float(thr), float(acc)
