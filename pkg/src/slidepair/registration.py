"""Stage 3: affine registration from matched keypoints."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateConfiguration, NoConsensus, TooFewPoints
from .transform import AffineTransform2D

_SINGULAR_EPS = 1e-9


@dataclass(frozen=True)
class RansacConfig:
    enabled: bool = True
    iterations: int = 2000
    inlier_tol: float = 20.0
    min_inlier_frac: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if not self.inlier_tol > 0:
            raise ValueError("inlier_tol must be positive")
        if not 0.0 <= self.min_inlier_frac <= 1.0:
            raise ValueError("min_inlier_frac must be in [0, 1]")


@dataclass(frozen=True)
class RegistrationResult:
    transform: AffineTransform2D
    rmse: float
    inlier_ids: list[str] = field(default_factory=list)
    used_pairs: int = 0

    def to_json(self) -> dict:
        return {"transform": self.transform.to_list(), "rmse": self.rmse,
                "inlier_ids": list(self.inlier_ids), "used_pairs": self.used_pairs}


def _points(pairs) -> tuple[np.ndarray, np.ndarray]:
    src = np.array([p.source_center for p in pairs], dtype=np.float64).reshape(-1, 2)
    dst = np.array([p.target_center for p in pairs], dtype=np.float64).reshape(-1, 2)
    return src, dst


def _normalizer(pts: np.ndarray) -> tuple[np.ndarray, float]:
    mean = pts.mean(axis=0)
    spread = np.sqrt(((pts - mean) ** 2).sum(axis=1).mean())
    return mean, (np.sqrt(2.0) / spread if spread > 0 else 1.0)


def fit_points(src: np.ndarray, dst: np.ndarray) -> AffineTransform2D:
    """Least-squares affine ``src -> dst`` on conditioned coordinates."""
    n = src.shape[0]
    if n < 3:
        raise TooFewPoints(f"need at least 3 correspondences, got {n}")
    ms, ss = _normalizer(src)
    md, sd = _normalizer(dst)
    ps = (src - ms) * ss
    pd = (dst - md) * sd
    design = np.column_stack([ps, np.ones(n)])
    centered = ps - ps.mean(axis=0)
    sv = np.linalg.svd(centered, compute_uv=False)
    if sv[-1] <= _SINGULAR_EPS * max(1.0, sv[0]):
        raise DegenerateConfiguration("source points are collinear")
    # normal equations; both coordinate blocks share one 3x3 system
    params = np.linalg.solve(design.T @ design, design.T @ pd)  # (3, 2)
    lin = params[:2].T  # rows: output x, output y
    off = params[2]
    # undo conditioning: dst = md + (lin @ (ss * (src - ms)) + off) / sd
    a_full = lin * (ss / sd)
    t_full = md + off / sd - a_full @ ms
    return AffineTransform2D(a_full[0, 0], a_full[0, 1], t_full[0], a_full[1, 0], a_full[1, 1], t_full[1])


def fit_affine_lsq(pairs) -> AffineTransform2D:
    """Affine transform minimising the summed squared keypoint residuals.

    Raises :class:`TooFewPoints` below three pairs and
    :class:`DegenerateConfiguration` for collinear source points.
    """
    return fit_points(*_points(pairs))


def residuals(t: AffineTransform2D, src: np.ndarray, dst: np.ndarray) -> np.ndarray:
    return np.hypot(*(t.apply(src) - dst).T) if src.size else np.empty(0)


def rmse(t: AffineTransform2D, pairs) -> float:
    src, dst = _points(pairs)
    if not len(src):
        return 0.0
    return float(np.sqrt(np.mean(residuals(t, src, dst) ** 2)))


def _draw_triples(rng: np.random.Generator, n: int, k: int) -> np.ndarray:
    """``k`` uniform 3-subsets of ``range(n)`` as a ``(k, 3)`` index array."""
    i0 = rng.integers(0, n, k)
    i1 = rng.integers(0, n - 1, k)
    i1 += i1 >= i0
    lo, hi = np.minimum(i0, i1), np.maximum(i0, i1)
    i2 = rng.integers(0, n - 2, k)
    i2 += i2 >= lo
    i2 += i2 >= hi
    return np.stack([i0, i1, i2], axis=1)


def _minimal_fits(src: np.ndarray, dst: np.ndarray, idx: np.ndarray):
    """Exact affine through each 3-point sample, batched.

    Returns ``(lin, off, ok)`` with ``lin`` of shape ``(k, 2, 2)`` and ``off``
    of shape ``(k, 2)``; ``ok`` marks samples that are not near-collinear.
    Each system is solved relative to the sample's first point.
    """
    s, d = src[idx], dst[idx]  # (k, 3, 2)
    ds = s[:, 1:] - s[:, :1]
    dd = d[:, 1:] - d[:, :1]
    det = ds[:, 0, 0] * ds[:, 1, 1] - ds[:, 0, 1] * ds[:, 1, 0]
    scale = np.maximum(np.maximum((ds[:, 0] ** 2).sum(1), (ds[:, 1] ** 2).sum(1)), 1e-300)
    ok = np.abs(det) > 1e-9 * scale
    safe = np.where(ok, det, 1.0)
    inv = np.empty_like(ds)
    inv[:, 0, 0] = ds[:, 1, 1] / safe
    inv[:, 0, 1] = -ds[:, 0, 1] / safe
    inv[:, 1, 0] = -ds[:, 1, 0] / safe
    inv[:, 1, 1] = ds[:, 0, 0] / safe
    # rows of ds are source offsets: dd = ds @ lin.T, so lin.T = inv(ds) @ dd
    lin = np.transpose(inv @ dd, (0, 2, 1))
    off = d[:, 0] - np.einsum("kij,kj->ki", lin, s[:, 0])
    return lin, off, ok


_CHUNK = 256


def fit_affine_ransac(pairs, cfg: RansacConfig | None = None) -> RegistrationResult:
    """Robust affine fit: 3-point hypotheses, largest consensus, least-squares refit.

    With ``cfg.enabled`` false this is a plain least-squares fit over all
    pairs. Hypotheses are drawn from ``numpy.random.default_rng(cfg.seed)``
    and scored in batches, so a fixed seed gives bit-identical results.
    Ties in consensus size go to the smaller inlier residual sum, then to
    the earlier hypothesis.
    """
    cfg = cfg or RansacConfig()
    pairs = list(pairs)
    n = len(pairs)
    if n < 3:
        raise TooFewPoints(f"need at least 3 correspondences, got {n}")
    src, dst = _points(pairs)
    ids = [p.source_id for p in pairs]

    if not cfg.enabled:
        t = fit_points(src, dst)
        return RegistrationResult(t, float(np.sqrt(np.mean(residuals(t, src, dst) ** 2))), ids, n)

    rng = np.random.default_rng(cfg.seed)
    best_mask = None
    best_count = 0
    best_err = np.inf
    done = 0
    while done < cfg.iterations:
        k = min(_CHUNK, cfg.iterations - done)
        done += k
        lin, off, ok = _minimal_fits(src, dst, _draw_triples(rng, n, k))
        if not ok.any():
            continue
        lin, off = lin[ok], off[ok]
        mapped = np.einsum("kij,nj->kni", lin, src) + off[:, None, :]
        res = np.hypot(*(mapped - dst[None]).transpose(2, 0, 1))  # (k, n)
        masks = res <= cfg.inlier_tol
        counts = masks.sum(axis=1)
        errs = np.where(masks, res ** 2, 0.0).sum(axis=1)
        top = counts.max()
        cand = np.flatnonzero(counts == top)
        j = int(cand[np.argmin(errs[cand])])
        if top > best_count or (top == best_count and errs[j] < best_err):
            best_mask, best_count, best_err = masks[j], int(top), float(errs[j])
        if best_count == n:
            break

    if best_mask is None or best_count < 3 or best_count < cfg.min_inlier_frac * n:
        raise NoConsensus(f"largest consensus {best_count}/{n} below {cfg.min_inlier_frac:.2f}")

    # refit and re-gather the consensus until it stops changing
    mask = best_mask
    for _ in range(10):
        t = fit_points(src[mask], dst[mask])
        new_mask = residuals(t, src, dst) <= cfg.inlier_tol
        if new_mask.sum() < 3 or np.array_equal(new_mask, mask):
            break
        mask = new_mask
    t = fit_points(src[mask], dst[mask])
    if mask.sum() < cfg.min_inlier_frac * n:
        raise NoConsensus(f"consensus {int(mask.sum())}/{n} below {cfg.min_inlier_frac:.2f}")
    res = residuals(t, src[mask], dst[mask])
    return RegistrationResult(t, float(np.sqrt(np.mean(res ** 2))),
                              [i for i, m in zip(ids, mask) if m], n)
