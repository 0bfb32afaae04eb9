"""Seeded gradient noise, turbulent flow fields and path-blur advection.

These produce the per-pixel density modulator that makes a rendered medium
patchy instead of homogeneous.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .raster import bilinear
from .seeding import child

_GRADIENTS = np.array(
    [(1, 1), (-1, 1), (1, -1), (-1, -1), (1, 0), (-1, 0), (0, 1), (0, -1)],
    dtype=np.float64,
)


def permutation_table(seed) -> np.ndarray:
    perm = np.random.default_rng(seed).permutation(256)
    return np.concatenate([perm, perm])


def _fade(t):
    return t * t * t * (t * (t * 6 - 15) + 10)


def perlin2(x, y, perm: np.ndarray) -> np.ndarray:
    """Classic 2-D gradient noise at lattice coordinates (x, y); zero on integer points."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    xf0 = np.floor(x)
    yf0 = np.floor(y)
    xi = xf0.astype(np.int64) & 255
    yi = yf0.astype(np.int64) & 255
    fx = x - xf0
    fy = y - yf0

    def corner(dx, dy):
        h = perm[perm[xi + dx] + yi + dy] & 7
        g = _GRADIENTS[h]
        return g[..., 0] * (fx - dx) + g[..., 1] * (fy - dy)

    u = _fade(fx)
    v = _fade(fy)
    n00 = corner(0, 0)
    n10 = corner(1, 0)
    n01 = corner(0, 1)
    n11 = corner(1, 1)
    nx0 = n00 + u * (n10 - n00)
    nx1 = n01 + u * (n11 - n01)
    return nx0 + v * (nx1 - nx0)


def gradient_noise(w: int, h: int, frequency: float = 4.0, octaves: int = 1, seed=0) -> np.ndarray:
    """Fractal gradient noise of shape (h, w) with values in [-1, 1].

    ``frequency`` counts lattice periods across the longer image axis; pixel
    (0, 0) sits on a lattice point. Octaves double the frequency and halve
    the amplitude, and the sum is divided by the total amplitude.
    """
    if w < 1 or h < 1:
        raise ValueError("noise size must be >= 1")
    if frequency <= 0:
        raise ValueError("frequency must be > 0")
    if octaves < 1:
        raise ValueError("octaves must be >= 1")
    perm = permutation_table(seed)
    scale = frequency / max(w, h)
    xs, ys = np.meshgrid(np.arange(w) * scale, np.arange(h) * scale)
    total = np.zeros((h, w))
    amp_sum = 0.0
    for octave in range(octaves):
        f = 2.0**octave
        amp = 0.5**octave
        total += amp * perlin2(xs * f, ys * f, perm)
        amp_sum += amp
    return total / amp_sum


def normalize_vectors(raw: np.ndarray, eps: float = 1e-6) -> np.ndarray:
    """Divide each trailing 2-vector by its norm plus ``eps``."""
    raw = np.asarray(raw, dtype=np.float64)
    norm = np.sqrt(raw[..., 0] ** 2 + raw[..., 1] ** 2)
    with np.errstate(invalid="ignore", divide="ignore"):
        out = raw / (norm + eps)[..., None]
    return np.where(np.isfinite(out), out, 0.0)


def make_flow_field(w: int, h: int, frequency: float = 4.0, seed1=1, seed2=2, eps: float = 1e-6,
                    octaves: int = 1) -> np.ndarray:
    """Unit flow field of shape (h, w, 2); component 0 is x (columns), 1 is y (rows)."""
    vx = gradient_noise(w, h, frequency, octaves, seed1)
    vy = gradient_noise(w, h, frequency, octaves, seed2)
    return normalize_vectors(np.stack([vx, vy], axis=-1), eps)


def path_blur(m0: np.ndarray, flow: np.ndarray, steps: int = 16, step_len: float = 2.0,
              alpha: float = 0.5) -> np.ndarray:
    """Advect a texture along ``flow``: each step blends every pixel with the
    bilinear sample found ``step_len`` pixels downstream."""
    m = np.asarray(m0, dtype=np.float64)
    flow = np.asarray(flow, dtype=np.float64)
    if flow.shape != m.shape + (2,):
        raise ValueError(f"flow shape {flow.shape} does not match field shape {m.shape}")
    if steps < 0:
        raise ValueError("steps must be >= 0")
    if not 0 <= alpha <= 1:
        raise ValueError("alpha must lie in [0, 1]")
    h, w = m.shape
    gx, gy = np.meshgrid(np.arange(w, dtype=np.float64), np.arange(h, dtype=np.float64))
    px = gx + flow[..., 0] * step_len
    py = gy + flow[..., 1] * step_len
    for _ in range(steps):
        sampled = bilinear(m, px, py)
        m = m + alpha * (sampled - m)
    return m


def normalize_density(m: np.ndarray, m_lo: float = 0.3, m_hi: float = 1.7) -> np.ndarray:
    """Affinely map the field's range onto [m_lo, m_hi]; a constant field maps to the midpoint."""
    if not m_hi > m_lo >= 0:
        raise ValueError("need m_hi > m_lo >= 0")
    m = np.asarray(m, dtype=np.float64)
    lo, hi = m.min(), m.max()
    if hi - lo <= 0:
        return np.full(m.shape, (m_lo + m_hi) / 2)
    out = m_lo + (m - lo) * ((m_hi - m_lo) / (hi - lo))
    return np.clip(out, m_lo, m_hi)


@dataclass(frozen=True)
class DensityParams:
    frequency: float = 4.0
    octaves: int = 1
    steps: int = 16
    step_len: float = 2.0
    alpha: float = 0.5
    m_lo: float = 0.3
    m_hi: float = 1.7
    eps: float = 1e-6
    base_frequency: float = 4.0
    base_octaves: int = 3

    def to_dict(self) -> dict:
        return asdict(self)


def density_field(w: int, h: int, seed, params: DensityParams = DensityParams()) -> np.ndarray:
    """Full pipeline: base noise and flow from three child seeds, advection, rescale."""
    s_base, s_fx, s_fy = (child(seed, i) for i in range(3))
    base = gradient_noise(w, h, params.base_frequency, params.base_octaves, s_base)
    m0 = (base + 1.0) / 2.0
    flow = make_flow_field(w, h, params.frequency, s_fx, s_fy, params.eps, params.octaves)
    m = path_blur(m0, flow, params.steps, params.step_len, params.alpha)
    return normalize_density(m, params.m_lo, params.m_hi)
