"""
Image quality metrics and benchmark aggregation.

PSNR uses a peak of 1.0 and reports identical images as PSNR_CAP. SSIM is the
single-scale Gaussian-window form (sigma 1.5, 11-pixel support, K1 0.01,
K2 0.03, L 1) computed per channel and averaged, or on BT.601 luma.
"""

from typing import Iterable, List, Sequence, Tuple

import numpy as np
from scipy.ndimage import gaussian_filter

from src.errors import ConfigurationError, DomainError, ShapeError
from src.models.models import DatasetScore, EvalReport, ImageScore

PSNR_CAP = 100.0
SSIM_SIGMA = 1.5
SSIM_TRUNCATE = 3.5  # radius 5, window 11
SSIM_WINDOW = 11
SSIM_K1 = 0.01
SSIM_K2 = 0.03
SSIM_MODES = ("color", "gray")

_LUMA = np.array([0.299, 0.587, 0.114])


def _as_pair(a: np.ndarray, b: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeError(f"images differ in shape: {a.shape} vs {b.shape}")
    return a, b


def psnr(a: np.ndarray, b: np.ndarray) -> float:
    """
    Peak signal-to-noise ratio in dB for images in [0, 1].

    Raises:
        ShapeError: If the images differ in shape
    """
    a, b = _as_pair(a, b)
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * np.log10(1.0 / mse))


def _ssim_channel(x: np.ndarray, y: np.ndarray) -> float:
    c1 = (SSIM_K1 * 1.0) ** 2
    c2 = (SSIM_K2 * 1.0) ** 2

    def blur(img):
        return gaussian_filter(img, sigma=SSIM_SIGMA, truncate=SSIM_TRUNCATE, mode="reflect")

    ux, uy = blur(x), blur(y)
    vx = blur(x * x) - ux * ux
    vy = blur(y * y) - uy * uy
    vxy = blur(x * y) - ux * uy
    s = ((2 * ux * uy + c1) * (2 * vxy + c2)) / ((ux ** 2 + uy ** 2 + c1) * (vx + vy + c2))
    pad = (SSIM_WINDOW - 1) // 2
    return float(s[pad:-pad, pad:-pad].mean())


def ssim(a: np.ndarray, b: np.ndarray, mode: str = "color") -> float:
    """
    Structural similarity of two H×W or H×W×C images in [0, 1].

    Args:
        a, b: Images of equal shape
        mode: "color" averages per-channel SSIM, "gray" scores BT.601 luma

    Raises:
        ShapeError: If shapes differ or the image is smaller than the window
    """
    a, b = _as_pair(a, b)
    if mode not in SSIM_MODES:
        raise ConfigurationError(f"ssim mode must be one of {SSIM_MODES} (got '{mode}')")
    if min(a.shape[:2]) < SSIM_WINDOW:
        raise ShapeError(f"image {a.shape[:2]} smaller than the {SSIM_WINDOW}-pixel SSIM window")
    if a.ndim == 2:
        return _ssim_channel(a, b)
    if mode == "gray":
        return _ssim_channel(a @ _LUMA, b @ _LUMA)
    return float(np.mean([_ssim_channel(a[..., c], b[..., c]) for c in range(a.shape[-1])]))


def dataset_score(name: str, rows: Sequence[ImageScore]) -> DatasetScore:
    """
    Mean scores of one dataset.

    Raises:
        DomainError: If the dataset has no rows
    """
    if not rows:
        raise DomainError(f"dataset '{name}' has no images")
    return DatasetScore(
        name=name,
        image_count=len(rows),
        mean_psnr=float(np.mean([r.psnr for r in rows])),
        mean_ssim=float(np.mean([r.ssim for r in rows])),
    )


def aggregate_scores(datasets: Sequence[DatasetScore]) -> Tuple[float, float]:
    """
    Image-count-weighted means of per-dataset means.

    Returns:
        (weighted_psnr, weighted_ssim)

    Raises:
        DomainError: If there are no images at all
    """
    counts = np.array([d.image_count for d in datasets], dtype=np.float64)
    if counts.sum() <= 0:
        raise DomainError("cannot aggregate zero images")
    weighted_psnr = float(np.dot(counts, [d.mean_psnr for d in datasets]) / counts.sum())
    weighted_ssim = float(np.dot(counts, [d.mean_ssim for d in datasets]) / counts.sum())
    return weighted_psnr, weighted_ssim


def build_report(datasets: Sequence[DatasetScore], rows: Iterable[ImageScore] = (),
                 ssim_mode: str = "color") -> EvalReport:
    """Assemble an EvalReport from per-dataset scores and optional per-image rows."""
    datasets = list(datasets)
    weighted_psnr, weighted_ssim = aggregate_scores(datasets)
    return EvalReport(datasets=datasets, weighted_psnr=weighted_psnr,
                      weighted_ssim=weighted_ssim, rows=list(rows), ssim_mode=ssim_mode)


def report_from_rows(rows: List[ImageScore], ssim_mode: str = "color") -> EvalReport:
    """Group per-image rows by dataset (in first-seen order) and aggregate."""
    grouped = {}
    for row in rows:
        grouped.setdefault(row.dataset, []).append(row)
    return build_report([dataset_score(name, group) for name, group in grouped.items()],
                        rows, ssim_mode)
