"""Depth-driven haze, fog and smoke compositing in linear RGB."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .raster import ColorTag, DepthMap, Raster, TagMismatchError, srgb_decode, srgb_encode, srgb_to_linear

KOSCHMIEDER = 3.912  # -ln(0.02): 2% contrast threshold

Triple = tuple[float, float, float]


def extinction_from_visibility(visibility):
    """Base extinction coefficient (1/m) for a meteorological visibility in meters.

    Accepts a scalar or a per-channel sequence.
    """
    v = np.asarray(visibility, dtype=np.float64)
    if np.any(v <= 0):
        raise ValueError(f"visibility must be > 0, got {visibility}")
    beta = KOSCHMIEDER / v
    return float(beta) if beta.ndim == 0 else beta


def height_proxy(y_norm, h_max: float):
    """Screen-space altitude: h_max on the top row, 0 on the bottom row."""
    return h_max * (1.0 - np.asarray(y_norm, dtype=np.float64))


def optical_depth(beta0, density, height, scale_height: float, distance, tau_base: float = 0.0):
    if scale_height <= 0:
        raise ValueError("scale height must be > 0")
    return (beta0 * density) * np.exp(-height / scale_height) * distance + tau_base


def transmittance(tau):
    return np.exp(-np.asarray(tau, dtype=np.float64))


@dataclass(frozen=True)
class AtmosphereParams:
    """Physical parameters of one render.

    ``airlight`` is given in 0-255 sRGB. ``visibility`` may be a scalar or a
    per-channel triple for chromatic extinction.
    """

    visibility: float | Triple
    airlight: Triple
    albedo: Triple = (1.0, 1.0, 1.0)
    kappa: float = 1.0
    eta: float = 1.0
    scale_height: float = 1000.0
    h_max: float = 50.0
    d_max: float = 500.0
    tau_base: float = 0.0

    def __post_init__(self):
        if np.any(np.asarray(self.visibility, dtype=float) <= 0):
            raise ValueError("visibility must be > 0")
        a = np.asarray(self.airlight, dtype=float)
        if a.shape != (3,) or a.min() < 0 or a.max() > 255:
            raise ValueError("airlight must be three sRGB values in [0, 255]")
        w = np.asarray(self.albedo, dtype=float)
        if w.shape != (3,) or w.min() < 0 or w.max() > 1:
            raise ValueError("albedo must be three values in [0, 1]")
        if self.kappa < 0:
            raise ValueError("kappa must be >= 0")
        if not 0 < self.eta <= 1:
            raise ValueError("eta must lie in (0, 1]")
        if self.scale_height <= 0:
            raise ValueError("scale height must be > 0")
        if self.h_max < 0 or self.d_max <= 0 or self.tau_base < 0:
            raise ValueError("need h_max >= 0, d_max > 0, tau_base >= 0")

    @property
    def airlight_linear(self) -> np.ndarray:
        return srgb_to_linear(np.asarray(self.airlight, dtype=np.float64) / 255.0)

    def to_dict(self) -> dict:
        d = asdict(self)
        for k, v in d.items():
            if isinstance(v, tuple):
                d[k] = list(v)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "AtmosphereParams":
        d = dict(d)
        for k in ("airlight", "albedo"):
            if k in d:
                d[k] = tuple(float(x) for x in d[k])
        if isinstance(d.get("visibility"), (list, tuple)):
            d["visibility"] = tuple(float(x) for x in d["visibility"])
        return cls(**d)


def compose(clean: Raster, T, p: AtmosphereParams) -> Raster:
    """Attenuate the scene by ``T`` and add the airlight veil, per channel.

    ``T`` broadcasts against (H, W, 3); values are transmittances in (0, 1].
    """
    if clean.tag is not ColorTag.LINEAR:
        raise TagMismatchError(f"compose needs a LinearRGB raster, got {clean.tag.value}")
    T = np.asarray(T, dtype=np.float64)
    if T.ndim == 2:
        T = T[:, :, None]
    if T.ndim == 3 and T.shape[:2] != clean.shape:
        raise ValueError(f"transmittance shape {T.shape[:2]} does not match image {clean.shape}")
    veil = p.airlight_linear * (np.asarray(p.albedo) * p.kappa)
    out = clean.data * T + veil * (1.0 - T**p.eta)
    return Raster(np.clip(out, 0.0, 1.0), ColorTag.LINEAR)


def transmittance_map(shape: tuple[int, int], depth: DepthMap, p: AtmosphereParams, density=None) -> np.ndarray:
    """Per-pixel, per-channel transmittance of shape (H, W, 3)."""
    h, w = shape
    if depth.shape != (h, w):
        raise ValueError(f"depth shape {depth.shape} does not match image {shape}")
    if density is None:
        density = 1.0
    else:
        density = np.asarray(density, dtype=np.float64)
        if density.shape != (h, w):
            raise ValueError(f"density shape {density.shape} does not match image {shape}")
        density = density[:, :, None]
    y_norm = np.arange(h) / (h - 1) if h > 1 else np.zeros(1)
    height = height_proxy(y_norm, p.h_max)[:, None, None]
    distance = (depth.values * p.d_max)[:, :, None]
    beta0 = np.broadcast_to(np.asarray(extinction_from_visibility(p.visibility)), (3,))
    tau = optical_depth(beta0, density, height, p.scale_height, distance, p.tau_base)
    return transmittance(tau)


def render(clean: Raster, depth: DepthMap, p: AtmosphereParams, density=None) -> Raster:
    """Render the medium onto an sRGB image; ``density`` defaults to a homogeneous medium."""
    lin = srgb_decode(clean)
    T = transmittance_map(clean.shape, depth, p, density)
    return srgb_encode(compose(lin, T, p))


# --- presets --------------------------------------------------------------


@dataclass(frozen=True)
class RenderPreset:
    """Ranges for randomized parameter draws. Each range is a (lo, hi) pair."""

    kind: str
    visibility: tuple[float, float]
    airlight_palette: tuple[Triple, ...]
    eta: tuple[float, float] = (1.0, 1.0)
    scale_height: tuple[float, float] = (200.0, 1000.0)
    albedo: tuple[float, float] = (1.0, 1.0)
    h_max: tuple[float, float] = (20.0, 120.0)
    d_max: tuple[float, float] = (200.0, 1500.0)
    tau_base: tuple[float, float] = (0.0, 0.5)
    # with this probability the scale height is drawn from low_scale_height instead
    p_low_scale_height: float = 0.0
    low_scale_height: tuple[float, float] = (30.0, 60.0)

    def __post_init__(self):
        ranges = {
            "visibility": self.visibility,
            "eta": self.eta,
            "scale_height": self.scale_height,
            "albedo": self.albedo,
            "h_max": self.h_max,
            "d_max": self.d_max,
            "tau_base": self.tau_base,
            "low_scale_height": self.low_scale_height,
        }
        for name, (lo, hi) in ranges.items():
            if lo > hi:
                raise ValueError(f"{name} range is inverted: {(lo, hi)}")
        if self.visibility[0] <= 0 or self.scale_height[0] <= 0 or self.low_scale_height[0] <= 0:
            raise ValueError("visibility and scale height ranges must be > 0")
        if not (0 < self.eta[0] and self.eta[1] <= 1):
            raise ValueError("eta range must lie in (0, 1]")
        if not (0 <= self.albedo[0] and self.albedo[1] <= 1):
            raise ValueError("albedo range must lie in [0, 1]")
        if self.h_max[0] < 0 or self.d_max[0] <= 0 or self.tau_base[0] < 0:
            raise ValueError("h_max >= 0, d_max > 0 and tau_base >= 0 required")
        if not self.airlight_palette:
            raise ValueError("airlight palette is empty")
        for color in self.airlight_palette:
            if len(color) != 3 or min(color) < 0 or max(color) > 255:
                raise ValueError(f"bad palette color {color}")
        if not 0 <= self.p_low_scale_height <= 1:
            raise ValueError("p_low_scale_height must be a probability")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["airlight_palette"] = [list(c) for c in self.airlight_palette]
        return {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}

    @classmethod
    def from_dict(cls, d: dict) -> "RenderPreset":
        d = dict(d)
        d["airlight_palette"] = tuple(tuple(float(x) for x in c) for c in d["airlight_palette"])
        for k, v in list(d.items()):
            if isinstance(v, list):
                d[k] = tuple(v)
        return cls(**d)


PRESETS: dict[str, RenderPreset] = {
    "haze": RenderPreset(
        kind="haze",
        visibility=(100.0, 1000.0),
        airlight_palette=((153, 174, 215), (200, 180, 140), (210, 210, 220)),
        eta=(0.8, 1.0),
        scale_height=(300.0, 1500.0),
    ),
    "fog": RenderPreset(
        kind="fog",
        visibility=(30.0, 1000.0),
        airlight_palette=((255, 255, 255), (240, 240, 240), (225, 225, 225)),
        eta=(0.5, 1.0),
        scale_height=(200.0, 1000.0),
        p_low_scale_height=0.5,
        low_scale_height=(30.0, 60.0),
    ),
    "smoke": RenderPreset(
        kind="smoke",
        visibility=(50.0, 600.0),
        airlight_palette=((180, 150, 120), (160, 120, 90)),
        eta=(0.8, 1.0),
        scale_height=(40.0, 50.0),
        albedo=(0.75, 0.85),
    ),
}


def get_preset(name: str) -> RenderPreset:
    try:
        return PRESETS[name]
    except KeyError:
        raise ValueError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None


def draw_params(preset: RenderPreset, seed, tau_base: float | None = None) -> AtmosphereParams:
    """Draw one parameter set uniformly within the preset ranges."""
    rng = np.random.default_rng(seed)

    def uniform(r):
        return float(rng.uniform(r[0], r[1]))

    visibility = uniform(preset.visibility)
    color = preset.airlight_palette[rng.integers(len(preset.airlight_palette))]
    albedo = uniform(preset.albedo)
    eta = uniform(preset.eta)
    low = rng.random() < preset.p_low_scale_height
    scale_height = uniform(preset.low_scale_height if low else preset.scale_height)
    h_max = uniform(preset.h_max)
    d_max = uniform(preset.d_max)
    base = uniform(preset.tau_base)
    return AtmosphereParams(
        visibility=visibility,
        airlight=tuple(float(c) for c in color),
        albedo=(albedo, albedo, albedo),
        eta=eta,
        scale_height=scale_height,
        h_max=h_max,
        d_max=d_max,
        tau_base=base if tau_base is None else tau_base,
    )
