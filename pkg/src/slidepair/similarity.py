"""Luminance similarity metrics for patch pairs: SSIM and FSIM."""

from __future__ import annotations

import math

import numpy as np
from scipy import ndimage

from .errors import DegenerateInput, DimensionMismatch
from .imaging import RasterImage, luminance

# FSIM constants for 8-bit luminance (Zhang et al. 2011)
FSIM_T1 = 0.85
FSIM_T2 = 160.0


def _pair(a: RasterImage, b: RasterImage) -> tuple[np.ndarray, np.ndarray]:
    if a.shape != b.shape:
        raise DimensionMismatch(f"images differ in size: {a.shape} vs {b.shape}")
    return luminance(a), luminance(b)


def _gaussian_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    r = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(r ** 2) / (2.0 * sigma ** 2))
    return g / g.sum()


def _filter_valid(x: np.ndarray, g: np.ndarray) -> np.ndarray:
    k = g.size
    out = ndimage.correlate1d(x, g, axis=0, mode="constant")
    out = ndimage.correlate1d(out, g, axis=1, mode="constant")
    r = k // 2
    return out[r:x.shape[0] - r, r:x.shape[1] - r]


def ssim_map(x: np.ndarray, y: np.ndarray, k1: float = 0.01, k2: float = 0.03,
             win: int = 11, sigma: float = 1.5) -> np.ndarray:
    """Local SSIM over the positions where the whole window fits."""
    if min(x.shape) < win:
        raise DimensionMismatch(f"images must be at least {win}x{win} for SSIM")
    g = _gaussian_window(win, sigma)
    c1 = k1 ** 2
    c2 = k2 ** 2
    mx = _filter_valid(x, g)
    my = _filter_valid(y, g)
    sxx = _filter_valid(x * x, g) - mx * mx
    syy = _filter_valid(y * y, g) - my * my
    sxy = _filter_valid(x * y, g) - mx * my
    num = (2.0 * (mx * my) + c1) * (2.0 * sxy + c2)
    den = (mx * mx + my * my + c1) * (sxx + syy + c2)
    return num / den


def ssim(a: RasterImage, b: RasterImage) -> float:
    """Mean SSIM on luminance: 11x11 Gaussian window (sigma 1.5), K1=0.01, K2=0.03, L=1."""
    x, y = _pair(a, b)
    return float(ssim_map(x, y).mean())


# ---------------------------------------------------------------------------
# phase congruency

def _freq_grid(rows: int, cols: int) -> tuple[np.ndarray, np.ndarray]:
    def axis(n):
        if n % 2:
            return np.arange(-(n - 1) / 2, (n - 1) / 2 + 1) / max(n - 1, 1)
        return np.arange(-n / 2, n / 2) / n

    x, y = np.meshgrid(axis(cols), axis(rows))
    return x, y


def _lowpass(rows: int, cols: int, cutoff: float, order: int) -> np.ndarray:
    x, y = _freq_grid(rows, cols)
    radius = np.sqrt(x ** 2 + y ** 2)
    return np.fft.ifftshift(1.0 / (1.0 + (radius / cutoff) ** (2 * order)))


def phase_congruency(im: np.ndarray, nscale: int = 4, norient: int = 4, min_wavelength: float = 6.0,
                     mult: float = 2.0, sigma_onf: float = 0.55, dtheta_on_sigma: float = 1.2,
                     k: float = 2.0, epsilon: float = 1e-4) -> np.ndarray:
    """Kovesi phase congruency with log-Gabor filters, as used by FSIM.

    Sums noise-compensated local energy over orientations and divides by
    the summed amplitude. The noise threshold per orientation is derived
    from the median squared response at the finest scale.
    """
    rows, cols = im.shape
    imagefft = np.fft.fft2(im)
    x, y = _freq_grid(rows, cols)
    radius = np.fft.ifftshift(np.sqrt(x ** 2 + y ** 2))
    theta = np.fft.ifftshift(np.arctan2(-y, x))
    radius[0, 0] = 1.0
    sintheta, costheta = np.sin(theta), np.cos(theta)
    lp = _lowpass(rows, cols, 0.45, 15)
    theta_sigma = math.pi / norient / dtheta_on_sigma

    log_gabor = []
    for s in range(nscale):
        fo = 1.0 / (min_wavelength * mult ** s)
        lg = np.exp(-(np.log(radius / fo)) ** 2 / (2.0 * math.log(sigma_onf) ** 2)) * lp
        lg[0, 0] = 0.0
        log_gabor.append(lg)

    energy_all = np.zeros((rows, cols))
    an_all = np.zeros((rows, cols))
    sqrt_n = math.sqrt(rows * cols)
    for o in range(norient):
        angl = o * math.pi / norient
        ds = sintheta * math.cos(angl) - costheta * math.sin(angl)
        dc = costheta * math.cos(angl) + sintheta * math.sin(angl)
        dtheta = np.abs(np.arctan2(ds, dc))
        spread = np.exp(-dtheta ** 2 / (2.0 * theta_sigma ** 2))

        sum_e = np.zeros((rows, cols))
        sum_o = np.zeros((rows, cols))
        sum_an = np.zeros((rows, cols))
        eo_list = []
        ifft_filters = []
        em_n = 0.0
        for s in range(nscale):
            filt = log_gabor[s] * spread
            ifft_filters.append(np.real(np.fft.ifft2(filt)) * sqrt_n)
            eo = np.fft.ifft2(imagefft * filt)
            eo_list.append(eo)
            sum_an += np.abs(eo)
            sum_e += eo.real
            sum_o += eo.imag
            if s == 0:
                em_n = float(np.sum(filt ** 2))

        x_energy = np.sqrt(sum_e ** 2 + sum_o ** 2) + epsilon
        mean_e = sum_e / x_energy
        mean_o = sum_o / x_energy
        energy = np.zeros((rows, cols))
        for eo in eo_list:
            e, od = eo.real, eo.imag
            energy += e * mean_e + od * mean_o - np.abs(e * mean_o - od * mean_e)

        median_e2n = float(np.median(np.abs(eo_list[0]) ** 2))
        mean_e2n = -median_e2n / math.log(0.5)
        noise_power = mean_e2n / em_n if em_n > 0 else 0.0
        est_sum_an2 = sum(f ** 2 for f in ifft_filters)
        est_sum_aiaj = np.zeros((rows, cols))
        for si in range(nscale - 1):
            for sj in range(si + 1, nscale):
                est_sum_aiaj += ifft_filters[si] * ifft_filters[sj]
        noise_energy2 = 2.0 * noise_power * float(est_sum_an2.sum()) + 4.0 * noise_power * float(est_sum_aiaj.sum())
        tau = math.sqrt(max(noise_energy2, 0.0) / 2.0)
        noise_mean = tau * math.sqrt(math.pi / 2.0)
        noise_sigma = math.sqrt((2.0 - math.pi / 2.0) * tau ** 2)
        thresh = (noise_mean + k * noise_sigma) / 1.7

        energy_all += np.maximum(energy - thresh, 0.0)
        an_all += sum_an

    pc = np.zeros((rows, cols))
    np.divide(energy_all, an_all, out=pc, where=an_all > 1e-12)
    return pc


def _fsim_downsample(y: np.ndarray) -> np.ndarray:
    # FSIM's own pre-filter: F x F box average then decimate, F = round(min(H, W) / 256)
    f = max(1, round(min(y.shape) / 256))
    if f == 1:
        return y
    return ndimage.uniform_filter(y, size=f, mode="constant")[::f, ::f]


def _scharr_gradient(y: np.ndarray) -> np.ndarray:
    dx = np.array([[3, 0, -3], [10, 0, -10], [3, 0, -3]], dtype=np.float64) / 16.0
    gx = ndimage.convolve(y, dx, mode="constant")
    gy = ndimage.convolve(y, dx.T, mode="constant")
    return np.sqrt(gx ** 2 + gy ** 2)


def fsim_maps(x: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Similarity map, PC weight map and the pair of PC maps (on 8-bit scale)."""
    x = _fsim_downsample(x * 255.0)
    y = _fsim_downsample(y * 255.0)
    pc1 = phase_congruency(x)
    pc2 = phase_congruency(y)
    g1 = _scharr_gradient(x)
    g2 = _scharr_gradient(y)
    s_pc = (2.0 * (pc1 * pc2) + FSIM_T1) / (pc1 ** 2 + pc2 ** 2 + FSIM_T1)
    s_g = (2.0 * (g1 * g2) + FSIM_T2) / (g1 ** 2 + g2 ** 2 + FSIM_T2)
    return s_pc * s_g, np.maximum(pc1, pc2), np.stack([pc1, pc2])


def fsim(a: RasterImage, b: RasterImage) -> float:
    """Feature similarity (FSIM, luminance only, alpha = beta = 1).

    Raises :class:`DegenerateInput` when neither image has any phase
    congruency (e.g. both constant).
    """
    x, y = _pair(a, b)
    sim, pcm, _ = fsim_maps(x, y)
    weight = float(pcm.sum())
    if not weight > 1e-12:
        raise DegenerateInput("no phase congruency in either image")
    return float(np.clip((sim * pcm).sum() / weight, 0.0, 1.0))
