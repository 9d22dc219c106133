"""Synthetic serial-section pairs with exact ground truth.

A slide is a soft-edged, lobed tissue region carrying a smooth stain
texture and dark Gaussian "glomeruli" on a white background. The target
slide is rendered from the transformed geometry (each target pixel is
evaluated at its preimage under the ground-truth transform), so no
resampling blur enters the fixtures.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .glomeruli import STAINS
from .imaging import RasterImage
from .transform import AffineTransform2D, compose, invert

# RGB of fully saturated stain per palette
PALETTES = {
    "HE": (0.55, 0.25, 0.60),
    "PAS": (0.70, 0.20, 0.45),
    "PASM": (0.25, 0.25, 0.30),
    "MASSON": (0.25, 0.40, 0.65),
}

TISSUE_DENSITY = 0.40
TEXTURE_AMPLITUDE = 0.18
GLOM_DEPTH = (0.45, 0.60)
EDGE_WIDTH = 6.0
# (min, max wavelength as a fraction of the canvas, relative weight)
TEXTURE_BANDS = ((0.03, 0.08, 1.0), (0.012, 0.025, 0.5))


@dataclass(frozen=True)
class SynthConfig:
    seed: int = 0
    canvas: int = 1024
    n_glomeruli: int = 12
    blob_sigma_range: tuple[float, float] = (8.0, 12.0)
    rotation: float = 0.0
    translation: tuple[float, float] = (0.0, 0.0)
    shear: float = 0.0
    noise_sigma: float = 0.0
    stain_palette: str = "HE"
    target_stain: Optional[str] = None

    def __post_init__(self):
        if self.canvas < 256:
            raise ValueError("canvas must be >= 256")
        if self.n_glomeruli < 0:
            raise ValueError("n_glomeruli must be >= 0")
        if not 0.0 <= self.noise_sigma < 0.5:
            raise ValueError("noise_sigma must be in [0, 0.5)")
        lo, hi = self.blob_sigma_range
        if not 0 < lo <= hi:
            raise ValueError("blob_sigma_range must satisfy 0 < lo <= hi")
        for stain in (self.stain_palette, self.target_stain or self.stain_palette):
            if stain not in STAINS:
                raise ValueError(f"unknown stain {stain!r}")


@dataclass(frozen=True)
class SynthGroundTruth:
    transform: AffineTransform2D
    glomerulus_centers_source: list[tuple[float, float]] = field(default_factory=list)
    glomerulus_centers_target: list[tuple[float, float]] = field(default_factory=list)

    def to_json(self) -> dict:
        return {
            "transform": self.transform.to_list(),
            "glomerulus_centers_source": [list(c) for c in self.glomerulus_centers_source],
            "glomerulus_centers_target": [list(c) for c in self.glomerulus_centers_target],
        }

    @classmethod
    def from_json(cls, doc: dict) -> SynthGroundTruth:
        return cls(AffineTransform2D.from_list(doc["transform"]),
                   [tuple(c) for c in doc["glomerulus_centers_source"]],
                   [tuple(c) for c in doc["glomerulus_centers_target"]])


def truth_transform(cfg: SynthConfig) -> AffineTransform2D:
    """Shear, then rotate (counter-clockwise on screen by ``cfg.rotation``) about
    the canvas centre, then translate.

    On-screen counter-clockwise is a negative angle in pixel coordinates
    because rows grow downwards.
    """
    c = (cfg.canvas - 1) / 2.0
    shear = AffineTransform2D(1.0, cfg.shear, 0.0, 0.0, 1.0, 0.0)
    lin = compose(AffineTransform2D.rotation(-cfg.rotation), shear)
    to_origin = AffineTransform2D.translation(-c, -c)
    back = AffineTransform2D.translation(c + cfg.translation[0], c + cfg.translation[1])
    return compose(back, compose(lin, to_origin))


@dataclass(frozen=True)
class _Geometry:
    center: tuple[float, float]
    radius: float
    lobes: list[tuple[int, float, float]]
    waves: list[tuple[float, float, float, float]]
    gloms: list[tuple[float, float, float, float]]  # x, y, sigma, depth

    def radius_at(self, phi):
        r = np.ones_like(phi)
        for k, amp, ph in self.lobes:
            r = r + amp * np.cos(k * phi + ph)
        return self.radius * r


def _geometry(cfg: SynthConfig, rng: np.random.Generator) -> _Geometry:
    n = cfg.canvas
    c = (n - 1) / 2.0
    center = (c + rng.uniform(-0.03, 0.03) * n, c + rng.uniform(-0.03, 0.03) * n)
    lobes = [(k, rng.uniform(0.03, 0.07) * rng.choice([-1, 1]), rng.uniform(0, 2 * math.pi)) for k in (1, 2, 3)]
    waves = []
    for lo, hi, weight in TEXTURE_BANDS:
        for _ in range(6):
            wavelength = rng.uniform(lo, hi) * n
            direction = rng.uniform(0, math.pi)
            waves.append((2 * math.pi / wavelength * math.cos(direction), 2 * math.pi / wavelength * math.sin(direction),
                          rng.uniform(0, 2 * math.pi), weight * rng.uniform(0.5, 1.0)))
    norm = sum(w[3] for w in waves)
    waves = [(kx, ky, ph, amp / norm) for kx, ky, ph, amp in waves]
    geo = _Geometry(center, 0.27 * n, lobes, waves, [])

    lo, hi = cfg.blob_sigma_range
    gloms: list[tuple[float, float, float, float]] = []
    min_sep = max(6.0 * hi, 0.06 * n)
    attempts = 0
    while len(gloms) < cfg.n_glomeruli:
        attempts += 1
        if attempts > 20000:
            raise ValueError("could not place the requested glomeruli; enlarge the canvas or shrink blob_sigma_range")
        phi = rng.uniform(-math.pi, math.pi)
        rho = math.sqrt(rng.uniform(0, 1)) * 0.75 * float(geo.radius_at(np.array(phi)))
        x, y = center[0] + rho * math.cos(phi), center[1] + rho * math.sin(phi)
        if all(math.hypot(x - gx, y - gy) >= min_sep for gx, gy, _, _ in gloms):
            gloms.append((x, y, rng.uniform(lo, hi), rng.uniform(*GLOM_DEPTH)))
    return _Geometry(center, geo.radius, lobes, waves, gloms)


def _render(geo: _Geometry, n: int, inv: AffineTransform2D, fwd: AffineTransform2D,
            rgb: tuple[float, float, float], noise: float, rng: np.random.Generator) -> np.ndarray:
    ys, xs = np.mgrid[0:n, 0:n].astype(np.float64)
    px = inv.a * xs + inv.b * ys + inv.tx
    py = inv.c * xs + inv.d * ys + inv.ty
    dx, dy = px - geo.center[0], py - geo.center[1]
    rho = np.hypot(dx, dy)
    phi = np.arctan2(dy, dx)
    tissue = 1.0 / (1.0 + np.exp(-(geo.radius_at(phi) - rho) / EDGE_WIDTH))
    tex = np.zeros_like(px)
    for kx, ky, ph, amp in geo.waves:
        tex += amp * np.cos(kx * px + ky * py + ph)
    density = tissue * (TISSUE_DENSITY + TEXTURE_AMPLITUDE * tex)

    # glomeruli only touch a neighbourhood of their mapped centre
    lin_norm = math.sqrt(fwd.a ** 2 + fwd.b ** 2 + fwd.c ** 2 + fwd.d ** 2)
    for gx, gy, sig, depth in geo.gloms:
        cx, cy = fwd.apply((gx, gy))
        r = int(math.ceil(6.0 * sig * lin_norm))
        x0, x1 = max(0, int(cx) - r), min(n, int(cx) + r + 1)
        y0, y1 = max(0, int(cy) - r), min(n, int(cy) + r + 1)
        if x0 >= x1 or y0 >= y1:
            continue
        sx = px[y0:y1, x0:x1] - gx
        sy = py[y0:y1, x0:x1] - gy
        density[y0:y1, x0:x1] += depth * np.exp(-(sx ** 2 + sy ** 2) / (2.0 * sig ** 2))

    density = np.clip(density, 0.0, 1.0)
    out = 1.0 - density[:, :, None] * (1.0 - np.asarray(rgb))[None, None, :]
    if noise > 0:
        out = out + rng.normal(0.0, noise, out.shape)
    return np.clip(out, 0.0, 1.0)


def generate_pair(cfg: SynthConfig) -> tuple[RasterImage, RasterImage, SynthGroundTruth]:
    """Render a source slide and its transformed, independently noised target."""
    geo_rng, src_rng, tgt_rng = (np.random.default_rng(s) for s in np.random.SeedSequence(cfg.seed).spawn(3))
    geo = _geometry(cfg, geo_rng)
    t = truth_transform(cfg)
    ident = AffineTransform2D.identity()
    n = cfg.canvas
    src = _render(geo, n, ident, ident, PALETTES[cfg.stain_palette], cfg.noise_sigma, src_rng)
    tgt = _render(geo, n, invert(t), t, PALETTES[cfg.target_stain or cfg.stain_palette], cfg.noise_sigma, tgt_rng)
    centers_src = [(g[0], g[1]) for g in geo.gloms]
    centers_tgt = [tuple(map(float, t.apply(c))) for c in centers_src]
    truth = SynthGroundTruth(t, centers_src, centers_tgt)
    return RasterImage(src), RasterImage(tgt), truth


def write_pair(cfg: SynthConfig, out_dir) -> SynthGroundTruth:
    from .io import write_png

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    src, tgt, truth = generate_pair(cfg)
    write_png(src, out / "source.png")
    write_png(tgt, out / "target.png")
    doc = truth.to_json()
    doc["config"] = asdict(cfg)
    (out / "truth.json").write_text(json.dumps(doc, indent=2))
    return truth
