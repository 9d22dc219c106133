"""Stage 1: rough alignment by tissue-centroid translation plus a rotation sweep."""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateMask, MetricUndefined
from .imaging import BACKGROUND, RasterImage, TissueMask, luminance, resize_area, sample_affine, tissue_mask
from .transform import AffineTransform2D, compose, wrap_degrees

METRICS = ("ncc", "mse")


@dataclass(frozen=True)
class RotationSearchConfig:
    coarse_step: float = 4.0
    fine_step: float = 0.5
    fine_halfwidth: float = 6.0
    max_dim: int = 512
    metric: str = "ncc"
    # parabolic polish of the fine peak; kept only if it scores at least as well
    subsample_peak: bool = True

    def __post_init__(self):
        if not 0 < self.fine_step <= self.coarse_step <= 90:
            raise ValueError("need 0 < fine_step <= coarse_step <= 90")
        if self.fine_halfwidth < self.fine_step:
            raise ValueError("fine_halfwidth must be >= fine_step")
        if self.max_dim < 16:
            raise ValueError("max_dim must be at least 16")
        if self.metric not in METRICS:
            raise ValueError(f"metric must be one of {METRICS}, got {self.metric!r}")


@dataclass(frozen=True)
class PreAlignResult:
    angle: float
    source_centroid: tuple[float, float]
    target_centroid: tuple[float, float]
    score: float
    transform: AffineTransform2D
    coarse_sweep: list[tuple[float, float]] = field(default_factory=list, repr=False)
    fine_sweep: list[tuple[float, float]] = field(default_factory=list, repr=False)

    def to_json(self) -> dict:
        return {
            "angle_deg": self.angle,
            "score": self.score,
            "transform": self.transform.to_list(),
            "source_centroid": list(self.source_centroid),
            "target_centroid": list(self.target_centroid),
        }


def centroid(mask: TissueMask) -> tuple[float, float]:
    """Mean ``(x, y)`` of the tissue pixels."""
    ys, xs = np.nonzero(mask.bits)
    if xs.size == 0:
        raise DegenerateMask("cannot take the centroid of an empty mask")
    return float(xs.mean()), float(ys.mean())


def ncc(a: np.ndarray, b: np.ndarray) -> float:
    a = a - a.mean()
    b = b - b.mean()
    den = math.sqrt(float((a * a).sum()) * float((b * b).sum()))
    if den <= 1e-12:
        raise MetricUndefined("normalized cross-correlation undefined for zero-variance input")
    return float((a * b).sum()) / den


def mse(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.mean((a - b) ** 2))


def rotation_about(angle: float, src_c, dst_c) -> AffineTransform2D:
    """Rotate by ``angle`` degrees about ``src_c`` and move ``src_c`` onto ``dst_c``."""
    rot = AffineTransform2D.rotation(angle, center=src_c)
    return compose(AffineTransform2D.translation(dst_c[0] - src_c[0], dst_c[1] - src_c[1]), rot)


def _low_res(img: RasterImage, scale: float) -> RasterImage:
    w = max(1, round(img.width * scale))
    h = max(1, round(img.height * scale))
    return resize_area(img.with_data(luminance(img)), w, h)


def _masked(img: RasterImage) -> tuple[np.ndarray, tuple[float, float]]:
    mask = tissue_mask(img)
    gray = np.where(mask.bits, img.plane(), BACKGROUND)
    return gray, centroid(mask)


def _to_full(pt, low: RasterImage, full: RasterImage) -> tuple[float, float]:
    sx = full.width / low.width
    sy = full.height / low.height
    return (pt[0] + 0.5) * sx - 0.5, (pt[1] + 0.5) * sy - 0.5


def search_rotation(source: RasterImage, target: RasterImage,
                    cfg: RotationSearchConfig | None = None, workers: int = 1) -> PreAlignResult:
    """Exhaustive coarse-to-fine rotation search about the tissue centroids.

    Both images are reduced with one common scale so the larger dimension
    of the pair fits ``cfg.max_dim``. The returned transform maps
    full-resolution source pixels into the target frame.
    """
    cfg = cfg or RotationSearchConfig()
    big = max(source.width, source.height, target.width, target.height)
    scale = min(1.0, cfg.max_dim / big)
    src_low = _low_res(source, scale)
    tgt_low = _low_res(target, scale)
    src_gray, cs = _masked(src_low)
    tgt_gray, ct = _masked(tgt_low)
    src_data = src_gray[:, :, None]
    th, tw = tgt_gray.shape

    def score(angle: float) -> float:
        t = rotation_about(angle, cs, ct)
        moved = sample_affine(src_data, t, tw, th)[:, :, 0]
        if cfg.metric == "ncc":
            return ncc(moved, tgt_gray)
        return mse(moved, tgt_gray)

    def sweep(angles):
        if workers > 1:
            with ThreadPoolExecutor(max_workers=workers) as ex:
                scores = list(ex.map(score, angles))
        else:
            scores = [score(a) for a in angles]
        return list(zip(angles, scores))

    sign = -1.0 if cfg.metric == "ncc" else 1.0

    def best(results):
        # better score first, then smaller |angle|, then the smaller angle
        return min(results, key=lambda r: (sign * r[1], abs(r[0]), r[0]))

    n_coarse = int(math.ceil(360.0 / cfg.coarse_step - 1e-9))
    coarse = sweep([wrap_degrees(-180.0 + k * cfg.coarse_step) for k in range(n_coarse)])
    coarse_angle, _ = best(coarse)

    k = int(math.floor(cfg.fine_halfwidth / cfg.fine_step + 1e-9))
    fine = sweep([wrap_degrees(coarse_angle + j * cfg.fine_step) for j in range(-k, k + 1)])
    angle, value = best(fine)

    if cfg.subsample_peak:
        i = next(i for i, r in enumerate(fine) if r[0] == angle)
        if 0 < i < len(fine) - 1:
            s0, s1, s2 = fine[i - 1][1], fine[i][1], fine[i + 1][1]
            curv = s0 - 2.0 * s1 + s2
            if curv * sign > 0:
                offset = 0.5 * (s0 - s2) / curv
                if abs(offset) < 1.0:
                    cand = wrap_degrees(angle + offset * cfg.fine_step)
                    cand_score = score(cand)
                    if sign * cand_score <= sign * value:
                        angle, value = cand, cand_score

    cs_full = _to_full(cs, src_low, source)
    ct_full = _to_full(ct, tgt_low, target)
    return PreAlignResult(
        angle=angle,
        source_centroid=cs_full,
        target_centroid=ct_full,
        score=value,
        transform=rotation_about(angle, cs_full, ct_full),
        coarse_sweep=coarse,
        fine_sweep=fine,
    )
