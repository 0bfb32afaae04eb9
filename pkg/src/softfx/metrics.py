"""Non-reference contrast metrics restricted to the pixels a model changed."""

from __future__ import annotations

import warnings
from dataclasses import asdict, dataclass

import numpy as np

from .raster import ColorTag, Raster, resize_to

REC709 = np.array([0.2126, 0.7152, 0.0722])
DEFAULT_K = 7
DEFAULT_THRESHOLD = 2 / 255


def to_gray(img: Raster) -> np.ndarray:
    """Rec. 709 luma of the stored samples as an (H, W) array."""
    if img.channels == 1:
        return img.data[:, :, 0]
    return img.data @ REC709


def _plane(x) -> np.ndarray:
    if isinstance(x, Raster):
        return to_gray(x)
    return np.asarray(x, dtype=np.float64)


def edit_mask(input_gray, output_gray, threshold: float = DEFAULT_THRESHOLD) -> np.ndarray:
    a, b = _plane(input_gray), _plane(output_gray)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    if threshold <= 0:
        raise ValueError("threshold must be > 0")
    return np.abs(a - b) > threshold


def local_contrast(img_gray, k: int = DEFAULT_K) -> np.ndarray:
    """Population standard deviation over each k x k window, reflect-padded.

    Computed in two passes over the k*k shifted views, which keeps the
    result accurate where the local variance is tiny.
    """
    if k < 3 or k % 2 == 0:
        raise ValueError(f"window size must be odd and >= 3, got {k}")
    g = _plane(img_gray)
    h, w = g.shape
    r = k // 2
    padded = np.pad(g, r, mode="symmetric")
    shifts = [padded[dy:dy + h, dx:dx + w] for dy in range(k) for dx in range(k)]
    mean = np.zeros_like(g)
    for s in shifts:
        mean += s
    mean /= k * k
    var = np.zeros_like(g)
    for s in shifts:
        d = s - mean
        var += d * d
    var /= k * k
    return np.sqrt(var)


@dataclass(frozen=True)
class ContrastReport:
    residual_gain: float
    global_gain: float
    edited_fraction: float
    empty_mask: bool

    def to_dict(self) -> dict:
        return asdict(self)


def residual_contrast_gain(input_img, output_img, k: int = DEFAULT_K,
                           threshold: float = DEFAULT_THRESHOLD) -> ContrastReport:
    """Mean local-contrast change over edited pixels, plus the whole-image change.

    Rasters are converted to gray; an output raster of a different size is
    first resized to the input's.
    """
    if isinstance(input_img, Raster) and isinstance(output_img, Raster):
        if output_img.shape != input_img.shape:
            warnings.warn(f"resizing output {output_img.shape} to input {input_img.shape}")
            output_img = resize_to(output_img, input_img.width, input_img.height)
    g_in, g_out = _plane(input_img), _plane(output_img)
    if g_in.shape != g_out.shape:
        raise RuntimeError(f"shape mismatch after standardization: {g_in.shape} vs {g_out.shape}")
    mask = edit_mask(g_in, g_out, threshold)
    c_in = local_contrast(g_in, k)
    c_out = local_contrast(g_out, k)
    diff = c_out - c_in
    empty = not mask.any()
    return ContrastReport(
        residual_gain=0.0 if empty else float(diff[mask].mean()),
        global_gain=float(diff.mean()),
        edited_fraction=float(mask.mean()),
        empty_mask=empty,
    )


def contrast_map_raster(img, k: int = DEFAULT_K) -> Raster:
    """Local contrast scaled for viewing (std of a [0, 1] signal is at most 0.5)."""
    return Raster(np.clip(local_contrast(img, k) * 2.0, 0.0, 1.0), ColorTag.GRAY)
