"""Image quality metrics on magnitude images."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
from skimage.metrics import structural_similarity

# stands in for +inf PSNR so CSV columns stay numeric
PSNR_IDENTICAL = 999.0


class UndefinedReferenceError(ValueError):
    pass


def _mags(x, ref) -> tuple[np.ndarray, np.ndarray]:
    x = np.abs(np.asarray(x))
    ref = np.abs(np.asarray(ref))
    if x.shape != ref.shape:
        raise ValueError(f"shape mismatch {x.shape} vs {ref.shape}")
    return x.astype(np.float64), ref.astype(np.float64)


def nmse(x, ref) -> float:
    """||x| - |ref||^2 / ||ref||^2."""
    x, ref = _mags(x, ref)
    denom = np.sum(ref**2)
    if denom == 0:
        raise UndefinedReferenceError("NMSE undefined for an all-zero reference")
    return float(np.sum((x - ref) ** 2) / denom)


def psnr(x, ref) -> float:
    """PSNR in dB with peak = max |ref|; identical inputs give ``PSNR_IDENTICAL``."""
    x, ref = _mags(x, ref)
    peak = ref.max()
    if peak == 0:
        raise UndefinedReferenceError("PSNR undefined for an all-zero reference")
    mse = np.mean((x - ref) ** 2)
    if mse == 0:
        return PSNR_IDENTICAL
    return float(10.0 * np.log10(peak**2 / mse))


def ssim(x, ref) -> float:
    """Mean SSIM, 11x11 Gaussian window (sigma 1.5), K1=0.01, K2=0.03, range max |ref|."""
    x, ref = _mags(x, ref)
    peak = ref.max()
    if peak == 0:
        raise UndefinedReferenceError("SSIM undefined for an all-zero reference")
    return float(
        structural_similarity(
            ref,
            x,
            data_range=peak,
            gaussian_weights=True,
            sigma=1.5,
            use_sample_covariance=False,
            K1=0.01,
            K2=0.03,
        )
    )


@dataclass(frozen=True)
class MetricReport:
    image_id: str
    nmse: float
    psnr: float
    ssim: float

    def as_dict(self) -> dict:
        return asdict(self)


def evaluate(x, ref, image_id: str = "") -> MetricReport:
    return MetricReport(image_id, nmse(x, ref), psnr(x, ref), ssim(x, ref))
