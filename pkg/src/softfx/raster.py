"""Image buffers, sRGB transfer curves, bilinear resampling and file I/O."""

from __future__ import annotations

import enum
from dataclasses import dataclass
from pathlib import Path

import cv2
import numpy as np


class ColorTag(str, enum.Enum):
    LINEAR = "LinearRGB"
    SRGB = "SRGB"
    GRAY = "Gray"


class TagMismatchError(ValueError):
    pass


class ImageFormatError(ValueError):
    """Raised for malformed files or unsupported bit depths."""


@dataclass(frozen=True, eq=False)
class Raster:
    """A float64 image of shape (height, width, channels), read-only once built.

    Channels is 1 for Gray and 3 for the RGB tags.
    """

    data: np.ndarray
    tag: ColorTag = ColorTag.SRGB

    def __post_init__(self):
        data = np.array(self.data, dtype=np.float64)
        if data.ndim == 2:
            data = data[:, :, None]
        if data.ndim != 3 or data.shape[2] not in (1, 3):
            raise ValueError(f"expected HxW, HxWx1 or HxWx3 data, got shape {data.shape}")
        tag = ColorTag(self.tag)
        if (tag is ColorTag.GRAY) != (data.shape[2] == 1):
            raise ValueError(f"{tag.value} raster cannot have {data.shape[2]} channels")
        if not np.all(np.isfinite(data)):
            raise ValueError("raster samples must be finite")
        if tag is not ColorTag.SRGB and data.min(initial=0.0) < 0:
            raise ValueError(f"{tag.value} samples must be >= 0")
        data.flags.writeable = False
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "tag", tag)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]

    @property
    def shape(self) -> tuple[int, int]:
        return self.height, self.width

    def plane(self) -> np.ndarray:
        """Return the single channel of a Gray raster as an (H, W) view."""
        if self.channels != 1:
            raise TagMismatchError("plane() needs a single-channel raster")
        return self.data[:, :, 0]

    def with_data(self, data: np.ndarray, tag: ColorTag | None = None) -> "Raster":
        return Raster(data, self.tag if tag is None else tag)


@dataclass(frozen=True, eq=False)
class DepthMap:
    """Normalized depth in [0, 1], 1 = farthest."""

    values: np.ndarray

    def __post_init__(self):
        v = np.array(self.values, dtype=np.float64)
        if v.ndim != 2:
            raise ValueError(f"depth must be 2-D, got shape {v.shape}")
        if not np.all(np.isfinite(v)) or v.min(initial=0) < 0 or v.max(initial=0) > 1:
            raise ValueError("depth values must lie in [0, 1]")
        v.flags.writeable = False
        object.__setattr__(self, "values", v)

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape


def _require(img: Raster, tag: ColorTag):
    if img.tag is not tag:
        raise TagMismatchError(f"expected a {tag.value} raster, got {img.tag.value}")


def srgb_to_linear(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    return np.where(x <= 0.04045, x / 12.92, ((x + 0.055) / 1.055) ** 2.4)


def linear_to_srgb(x: np.ndarray) -> np.ndarray:
    x = np.clip(np.asarray(x, dtype=np.float64), 0.0, 1.0)
    return np.where(x <= 0.0031308, x * 12.92, 1.055 * x ** (1 / 2.4) - 0.055)


def srgb_decode(img: Raster) -> Raster:
    _require(img, ColorTag.SRGB)
    if img.data.min(initial=0) < 0 or img.data.max(initial=0) > 1:
        raise ValueError("sRGB samples must lie in [0, 1]")
    return Raster(srgb_to_linear(img.data), ColorTag.LINEAR)


def srgb_encode(img: Raster) -> Raster:
    _require(img, ColorTag.LINEAR)
    return Raster(linear_to_srgb(img.data), ColorTag.SRGB)


def bilinear(arr: np.ndarray, xs, ys) -> np.ndarray:
    """Sample a (H, W) or (H, W, C) array at real coordinates with edge clamping.

    Interpolation is written in lerp form so that equal neighbours give back
    their value exactly.
    """
    h, w = arr.shape[:2]
    xs = np.clip(np.asarray(xs, dtype=np.float64), 0, w - 1)
    ys = np.clip(np.asarray(ys, dtype=np.float64), 0, h - 1)
    x0 = np.floor(xs).astype(np.intp)
    y0 = np.floor(ys).astype(np.intp)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = xs - x0
    fy = ys - y0
    if arr.ndim == 3:
        fx = fx[..., None]
        fy = fy[..., None]
    v00 = arr[y0, x0]
    v01 = arr[y0, x1]
    v10 = arr[y1, x0]
    v11 = arr[y1, x1]
    top = v00 + fx * (v01 - v00)
    bottom = v10 + fx * (v11 - v10)
    return top + fy * (bottom - top)


def sample_bilinear(img: Raster, x: float, y: float) -> np.ndarray:
    """Return the channel vector at pixel coordinate (x, y)."""
    return bilinear(img.data, x, y)


def resize_array(arr: np.ndarray, w: int, h: int) -> np.ndarray:
    """Bilinear resample with pixel-centre alignment."""
    if w < 1 or h < 1:
        raise ValueError(f"target size must be >= 1, got {w}x{h}")
    src_h, src_w = arr.shape[:2]
    if (src_w, src_h) == (w, h):
        return arr
    xs = (np.arange(w) + 0.5) * (src_w / w) - 0.5
    ys = (np.arange(h) + 0.5) * (src_h / h) - 0.5
    gx, gy = np.meshgrid(xs, ys)
    return bilinear(arr, gx, gy)


def resize_to(img: Raster, w: int, h: int) -> Raster:
    if w < 1 or h < 1:
        raise ValueError(f"target size must be >= 1, got {w}x{h}")
    if (img.width, img.height) == (w, h):
        return img
    return Raster(resize_array(img.data, w, h), img.tag)


# --- file I/O -------------------------------------------------------------


def load_png(path, tag: ColorTag | None = None) -> Raster:
    """Load an 8- or 16-bit PNG as a Raster with samples scaled to [0, 1]."""
    path = Path(path)
    buf = np.fromfile(path, dtype=np.uint8)  # raises OSError on missing file
    arr = cv2.imdecode(buf, cv2.IMREAD_UNCHANGED)
    if arr is None:
        raise ImageFormatError(f"cannot decode image: {path}")
    if arr.dtype == np.uint8:
        scale = 255.0
    elif arr.dtype == np.uint16:
        scale = 65535.0
    else:
        raise ImageFormatError(f"unsupported bit depth {arr.dtype} in {path}")
    if arr.ndim == 3:
        if arr.shape[2] == 4:
            arr = arr[:, :, :3]
        arr = arr[:, :, ::-1]  # BGR -> RGB
    data = arr.astype(np.float64) / scale
    if tag is None:
        tag = ColorTag.GRAY if data.ndim == 2 else ColorTag.SRGB
    return Raster(data, tag)


def encode_png(img: Raster | np.ndarray, bits: int = 8) -> bytes:
    """Quantize samples in [0, 1] to 8 or 16 bits and return PNG bytes.

    Samples are written as stored; encode linear rasters first.
    """
    if bits not in (8, 16):
        raise ImageFormatError(f"unsupported bit depth: {bits}")
    data = img.data if isinstance(img, Raster) else np.asarray(img, dtype=np.float64)
    if data.ndim == 3 and data.shape[2] == 1:
        data = data[:, :, 0]
    scale = 255.0 if bits == 8 else 65535.0
    q = np.rint(np.clip(data, 0.0, 1.0) * scale).astype(np.uint8 if bits == 8 else np.uint16)
    if q.ndim == 3:
        q = np.ascontiguousarray(q[:, :, ::-1])
    ok, enc = cv2.imencode(".png", q)
    if not ok:
        raise ImageFormatError("PNG encoding failed")
    return enc.tobytes()


def save_png(img: Raster | np.ndarray, path, bits: int = 8):
    Path(path).write_bytes(encode_png(img, bits))


def read_pfm(path) -> np.ndarray:
    """Read a PFM file into a top-to-bottom (H, W) or (H, W, 3) float array."""
    with open(path, "rb") as f:
        header = f.readline().strip()
        if header not in (b"Pf", b"PF"):
            raise ImageFormatError(f"not a PFM file: {path}")
        channels = 1 if header == b"Pf" else 3
        try:
            dims = f.readline().split()
            width, height = int(dims[0]), int(dims[1])
            scale = float(f.readline().strip())
        except (ValueError, IndexError) as e:
            raise ImageFormatError(f"malformed PFM header in {path}") from e
        endian = "<" if scale < 0 else ">"
        count = width * height * channels
        data = np.fromfile(f, dtype=endian + "f4", count=count)
    if data.size != count:
        raise ImageFormatError(f"truncated PFM data in {path}")
    shape = (height, width) if channels == 1 else (height, width, 3)
    # rows are stored bottom to top
    return np.flipud(data.reshape(shape)).astype(np.float64)


def write_pfm(path, arr: np.ndarray, little_endian: bool = True):
    arr = np.asarray(arr, dtype=np.float32)
    header = b"Pf" if arr.ndim == 2 else b"PF"
    h, w = arr.shape[:2]
    scale = -1.0 if little_endian else 1.0
    with open(path, "wb") as f:
        f.write(header + b"\n")
        f.write(f"{w} {h}\n".encode())
        f.write(f"{scale}\n".encode())
        np.flipud(arr).astype("<f4" if little_endian else ">f4").tofile(f)


def load_depth(path) -> DepthMap:
    """Load depth from a grayscale PNG (scaled by its container maximum) or a PFM (clamped)."""
    path = Path(path)
    if path.suffix.lower() == ".pfm":
        arr = read_pfm(path)
        if arr.ndim == 3:
            raise ImageFormatError(f"depth PFM must be single-channel: {path}")
        if not np.all(np.isfinite(arr)):
            raise ImageFormatError(f"non-finite depth values in {path}")
        return DepthMap(np.clip(arr, 0.0, 1.0))
    img = load_png(path)
    if img.channels != 1:
        raise ImageFormatError(f"depth PNG must be grayscale: {path}")
    return DepthMap(img.plane())
