"""Training supervision: random masks, softened boundaries, strength-blended
targets and synthetic occlusions over clean images."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import cv2
import numpy as np
from scipy import ndimage

from .procedural import gradient_noise
from .raster import Raster
from .seeding import child

Range = tuple[float, float]


@dataclass(frozen=True)
class MaskSpec:
    """Mask generator settings. Sizes are fractions of min(W, H); counts are inclusive ranges."""

    n_rects: tuple[int, int] = (1, 4)
    rect_scale: Range = (0.1, 0.5)
    n_strokes: tuple[int, int] = (0, 4)
    stroke_width: Range = (0.02, 0.08)
    p_full_frame: float = 0.3
    dilation_radius: Range = (0.01, 0.03)
    blur_sigma: Range = (0.005, 0.015)

    def __post_init__(self):
        if not 0 <= self.p_full_frame <= 1:
            raise ValueError("p_full_frame must be a probability")
        for name in ("n_rects", "n_strokes"):
            lo, hi = getattr(self, name)
            if lo < 0 or hi < lo:
                raise ValueError(f"bad count range {name}={(lo, hi)}")
        for name in ("rect_scale", "stroke_width", "dilation_radius", "blur_sigma"):
            lo, hi = getattr(self, name)
            if not 0 < lo <= hi <= 1:
                raise ValueError(f"fraction range {name}={(lo, hi)} must lie in (0, 1]")

    def to_dict(self) -> dict:
        return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self).items()}

    @classmethod
    def from_dict(cls, d: dict) -> "MaskSpec":
        return cls(**{k: tuple(v) if isinstance(v, list) else v for k, v in d.items()})


def _draw_stroke(canvas: np.ndarray, rng: np.random.Generator, width_px: int, min_side: int):
    h, w = canvas.shape
    x, y = rng.uniform(0, w), rng.uniform(0, h)
    angle = rng.uniform(0, 2 * math.pi)
    for _ in range(int(rng.integers(4, 13))):
        angle += rng.normal(0.0, 0.8)
        length = rng.uniform(0.05, 0.25) * min_side
        nx = float(np.clip(x + length * math.cos(angle), 0, w - 1))
        ny = float(np.clip(y + length * math.sin(angle), 0, h - 1))
        p0, p1 = (int(round(x)), int(round(y))), (int(round(nx)), int(round(ny)))
        cv2.line(canvas, p0, p1, 1, thickness=width_px, lineType=cv2.LINE_8)
        cv2.circle(canvas, p1, width_px // 2, 1, thickness=-1, lineType=cv2.LINE_8)
        x, y = nx, ny


def synth_mask(w: int, h: int, spec: MaskSpec = MaskSpec(), seed=0) -> np.ndarray:
    """Binary {0, 1} mask of shape (h, w): full frame, or a union of rectangles and brush strokes."""
    rng = np.random.default_rng(seed)
    if rng.random() < spec.p_full_frame:
        return np.ones((h, w))
    canvas = np.zeros((h, w), dtype=np.uint8)
    min_side = min(w, h)
    for _ in range(int(rng.integers(spec.n_rects[0], spec.n_rects[1] + 1))):
        rw = max(1, int(round(rng.uniform(*spec.rect_scale) * min_side)))
        rh = max(1, int(round(rng.uniform(*spec.rect_scale) * min_side)))
        x0 = int(rng.integers(0, max(1, w - rw + 1)))
        y0 = int(rng.integers(0, max(1, h - rh + 1)))
        canvas[y0:y0 + rh, x0:x0 + rw] = 1
    for _ in range(int(rng.integers(spec.n_strokes[0], spec.n_strokes[1] + 1))):
        width_px = max(1, int(round(rng.uniform(*spec.stroke_width) * min_side)))
        _draw_stroke(canvas, rng, width_px, min_side)
    return canvas.astype(np.float64)


def disc(radius: int) -> np.ndarray:
    r = int(radius)
    yy, xx = np.mgrid[-r:r + 1, -r:r + 1]
    return xx * xx + yy * yy <= r * r


def soften_mask(mask: np.ndarray, dilation_radius: float, blur_sigma: float) -> np.ndarray:
    """Dilate a binary mask with a disc, then Gaussian-blur it; values stay in [0, 1]."""
    binary = np.asarray(mask) > 0.5
    r = int(round(dilation_radius))
    if r > 0 and binary.any():
        binary = ndimage.binary_dilation(binary, structure=disc(r))
    soft = binary.astype(np.float64)
    if blur_sigma > 0:
        soft = ndimage.gaussian_filter(soft, blur_sigma, mode="nearest", truncate=4.0)
    return np.clip(soft, 0.0, 1.0)


def soft_mask(w: int, h: int, spec: MaskSpec = MaskSpec(), seed=0) -> tuple[np.ndarray, dict]:
    """Draw a binary mask and soften it with radius and sigma drawn from ``spec``.

    Returns the soft mask and the drawn pixel magnitudes.
    """
    binary = synth_mask(w, h, spec, child(seed, 0))
    rng = np.random.default_rng(child(seed, 1))
    min_side = min(w, h)
    radius = rng.uniform(*spec.dilation_radius) * min_side
    sigma = rng.uniform(*spec.blur_sigma) * min_side
    info = {"dilation_radius_px": int(round(radius)), "blur_sigma_px": float(sigma)}
    return soften_mask(binary, radius, sigma), info


def draw_strength(rng: np.random.Generator, p_full: float = 0.5) -> float:
    """Removal strength: exactly 1 with probability ``p_full``, else Uniform[0, 1]."""
    if rng.random() < p_full:
        return 1.0
    return float(rng.random())


@dataclass(frozen=True, eq=False)
class SupervisionSpec:
    strength: float
    mask: np.ndarray
    direction: str = "remove"

    def __post_init__(self):
        if not 0 <= self.strength <= 1:
            raise ValueError("strength must lie in [0, 1]")
        if self.direction not in ("remove", "add"):
            raise ValueError(f"direction must be 'remove' or 'add', got {self.direction!r}")
        m = np.asarray(self.mask, dtype=np.float64)
        if m.ndim != 2 or m.min(initial=0) < 0 or m.max(initial=0) > 1:
            raise ValueError("mask must be 2-D with values in [0, 1]")


def blend(source: np.ndarray, target: np.ndarray, weight: np.ndarray) -> np.ndarray:
    """Per-pixel ``weight*target + (1-weight)*source`` that is exact at weight 0 and 1."""
    out = source + weight * (target - source)
    out = np.where(weight >= 1, target, out)
    return np.clip(out, np.minimum(source, target), np.maximum(source, target))


def compose_target(input_img: Raster, gt: Raster, spec: SupervisionSpec) -> Raster:
    """Training target for one (degraded input, clean gt) pair.

    ``remove`` moves the input toward gt inside the mask; ``add`` swaps the
    roles so the clean image moves toward the degraded one. Blending happens
    on the stored (sRGB-encoded) samples.
    """
    if input_img.tag is not gt.tag:
        raise ValueError(f"tag mismatch: {input_img.tag.value} vs {gt.tag.value}")
    if input_img.data.shape != gt.data.shape:
        raise ValueError(f"image shapes differ: {input_img.data.shape} vs {gt.data.shape}")
    mask = np.asarray(spec.mask, dtype=np.float64)
    if mask.shape != input_img.shape:
        raise ValueError(f"mask shape {mask.shape} does not match images {input_img.shape}")
    if spec.direction == "remove":
        source, target = input_img.data, gt.data
    else:
        source, target = gt.data, input_img.data
    weight = (spec.strength * mask)[:, :, None]
    return Raster(blend(source, target, weight), input_img.tag)


def composite_overlay(clean: np.ndarray, overlay: np.ndarray, mask: np.ndarray, opacity: float) -> np.ndarray:
    m = (np.asarray(mask) > 0.5)[:, :, None]
    mixed = blend(clean, np.broadcast_to(overlay, clean.shape), np.float64(opacity))
    return np.where(m, mixed, clean)


def synth_occlusion(clean: Raster, seed=0, spec: MaskSpec = MaskSpec(p_full_frame=0.0),
                    opacity: Range = (0.3, 1.0)) -> tuple[Raster, np.ndarray]:
    """Overlay a flat or noise-textured patch over random mask regions.

    Returns the degraded image and the binary mask used.
    """
    h, w = clean.shape
    mask = synth_mask(w, h, spec, child(seed, 0))
    rng = np.random.default_rng(child(seed, 1))
    alpha = float(rng.uniform(*opacity))
    c = clean.channels
    if rng.random() < 0.5:
        overlay = np.broadcast_to(rng.random(c), clean.data.shape)
    else:
        lo, hi = rng.random(c), rng.random(c)
        freq = float(rng.uniform(2.0, 8.0))
        t = (gradient_noise(w, h, freq, 2, child(seed, 2)) + 1.0) / 2.0
        overlay = lo + t[:, :, None] * (hi - lo)
    return Raster(composite_overlay(clean.data, overlay, mask, alpha), clean.tag), mask
