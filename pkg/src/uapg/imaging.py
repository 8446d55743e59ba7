"""Image/video data model, pixel math, perturbation application and raster I/O.

All in-memory rasters are float64 numpy arrays shaped (height, width,
channels) with values in the unit interval. 8-bit files map to reals via
v/255 on read and round-half-away-from-zero on write, so golden files stay
bit-stable.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path

import numpy as np
from PIL import Image
from scipy.ndimage import uniform_filter

from .errors import (
    DegeneratePerturbationError,
    FormatError,
    ParameterError,
    ShapeError,
)

PSNR_CAP_DB = 99.0

# Rec. 601 luma weights, also used for the full-range RGB<->YCbCr conversion
# applied to Y4M files:
#   Y  = 0.299 R + 0.587 G + 0.114 B
#   Cb = 0.5 (B - Y) / (1 - 0.114) + 0.5
#   Cr = 0.5 (R - Y) / (1 - 0.299) + 0.5
LUMA_R, LUMA_G, LUMA_B = 0.299, 0.587, 0.114


# ---------------------------------------------------------------------------
# Domain types
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ImageTensor:
    """H x W x C raster of unit-interval reals. Treat as immutable."""

    data: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.data, dtype=np.float64)
        if arr.ndim == 2:
            arr = arr[:, :, None]
        if arr.ndim != 3 or arr.shape[2] not in (1, 3):
            raise ShapeError(f"image must be (H, W, 1|3), got {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ParameterError("image contains non-finite values")
        if arr.min() < 0.0 or arr.max() > 1.0:
            raise ParameterError(
                f"image values outside [0, 1]: min={arr.min()}, max={arr.max()}"
            )
        object.__setattr__(self, "data", arr)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]


@dataclass(frozen=True)
class Perturbation:
    """Trainable additive pixel field, clipped to [-clip_bound, +clip_bound].

    Tile dimensions are fixed at creation; rescaling to an amplitude returns
    a new Perturbation whose clip_bound is that amplitude.
    """

    data: np.ndarray
    clip_bound: float = 0.1

    def __post_init__(self):
        arr = np.asarray(self.data, dtype=np.float64)
        if arr.ndim != 3 or arr.shape[2] != 3:
            raise ShapeError(f"perturbation must be (H, W, 3), got {arr.shape}")
        if self.clip_bound <= 0:
            raise ParameterError(f"clip_bound must be > 0, got {self.clip_bound}")
        if np.max(np.abs(arr)) > self.clip_bound + 1e-12:
            raise ParameterError(
                f"perturbation exceeds clip bound {self.clip_bound}: "
                f"max abs {np.max(np.abs(arr))}"
            )
        object.__setattr__(self, "data", arr)

    @classmethod
    def zeros(cls, tile_height: int = 256, tile_width: int = 256,
              clip_bound: float = 0.1) -> "Perturbation":
        return cls(np.zeros((tile_height, tile_width, 3)), clip_bound)

    @property
    def tile_height(self) -> int:
        return self.data.shape[0]

    @property
    def tile_width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]


@dataclass(frozen=True)
class VideoFrames:
    """Ordered frames of identical dimensions plus a rational frame rate."""

    frames: tuple
    rate_num: int = 30
    rate_den: int = 1

    def __post_init__(self):
        frames = tuple(self.frames)
        if not frames:
            raise ParameterError("video must contain at least one frame")
        shape = frames[0].data.shape
        for i, f in enumerate(frames):
            if f.data.shape != shape:
                raise ShapeError(
                    f"frame {i} has shape {f.data.shape}, expected {shape}"
                )
        if self.rate_num <= 0 or self.rate_den <= 0:
            raise ParameterError("frame rate must be positive")
        object.__setattr__(self, "frames", frames)

    @property
    def frame_rate(self) -> float:
        return self.rate_num / self.rate_den

    @property
    def height(self) -> int:
        return self.frames[0].height

    @property
    def width(self) -> int:
        return self.frames[0].width


@dataclass(frozen=True)
class ContrastMask:
    """Single-channel weighting field in [0, 1], same size as its image."""

    data: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.data, dtype=np.float64)
        if arr.ndim != 2:
            raise ShapeError(f"mask must be (H, W), got {arr.shape}")
        if arr.min() < 0.0 or arr.max() > 1.0:
            raise ParameterError("mask values outside [0, 1]")
        object.__setattr__(self, "data", arr)


def _as_array(img) -> np.ndarray:
    """Accept ImageTensor or a bare (H, W, C) array."""
    if isinstance(img, ImageTensor):
        return img.data
    return np.asarray(img, dtype=np.float64)


# ---------------------------------------------------------------------------
# Pixel math
# ---------------------------------------------------------------------------

def mse(ref, dist) -> float:
    """Mean squared difference over all elements."""
    a, b = _as_array(ref), _as_array(dist)
    if a.shape != b.shape:
        raise ShapeError(f"shape mismatch: {a.shape} vs {b.shape}")
    return float(np.mean((a - b) ** 2))


def psnr(ref, dist, cap: float = PSNR_CAP_DB) -> float:
    """Peak signal-to-noise ratio in dB for unit-peak images.

    Identical inputs return `cap` instead of infinity so downstream curve
    areas stay finite.
    """
    err = mse(ref, dist)
    if err == 0.0:
        return cap
    return float(10.0 * np.log10(1.0 / err))


def clamp_unit(img) -> ImageTensor:
    """Clamp every element into [0, 1]."""
    return ImageTensor(np.clip(_as_array(img), 0.0, 1.0))


def luminance(img) -> np.ndarray:
    """Rec. 601 luma of an (H, W, C) raster; single-channel input passes
    through."""
    arr = _as_array(img)
    if arr.shape[2] == 1:
        return arr[:, :, 0]
    return LUMA_R * arr[:, :, 0] + LUMA_G * arr[:, :, 1] + LUMA_B * arr[:, :, 2]


# ---------------------------------------------------------------------------
# Perturbation ops
# ---------------------------------------------------------------------------

def tile_perturbation(p: Perturbation, height: int, width: int) -> np.ndarray:
    """Repeat the low-resolution tile to (height, width, 3), cropping at the
    right/bottom edge when the target is not a multiple of the tile."""
    if height < 1 or width < 1:
        raise ParameterError(f"target size must be >= 1, got {height}x{width}")
    reps_y = -(-height // p.tile_height)
    reps_x = -(-width // p.tile_width)
    tiled = np.tile(p.data, (reps_y, reps_x, 1))
    return tiled[:height, :width, :]


def scale_to_amplitude(p: Perturbation, amplitude: float) -> Perturbation:
    """Rescale so the max absolute element equals `amplitude`."""
    if amplitude <= 0:
        raise ParameterError(f"amplitude must be > 0, got {amplitude}")
    peak = float(np.max(np.abs(p.data)))
    if peak == 0.0:
        raise DegeneratePerturbationError(
            "all-zero perturbation cannot be rescaled"
        )
    return Perturbation(p.data * (amplitude / peak), clip_bound=amplitude)


def apply_perturbation(img, p: Perturbation,
                       mask: ContrastMask | None = None) -> ImageTensor:
    """Add the tiled perturbation to an image and clamp to [0, 1].

    With a mask, the tiled field is weighted per pixel (broadcast over
    channels) before addition.
    """
    arr = _as_array(img)
    field_full = tile_perturbation(p, arr.shape[0], arr.shape[1])
    if arr.shape[2] == 1:
        # grayscale carrier: project the RGB field onto luma
        field_full = luminance(field_full)[:, :, None]
    if mask is not None:
        if mask.data.shape != arr.shape[:2]:
            raise ShapeError(
                f"mask shape {mask.data.shape} does not match image "
                f"{arr.shape[:2]}"
            )
        field_full = field_full * mask.data[:, :, None]
    return clamp_unit(arr + field_full)


def contrast_mask(img, window: int = 7) -> ContrastMask:
    """Local-contrast weighting: windowed standard deviation of Rec. 601
    luma with edge replication, rescaled so the maximum is 1 (all zeros for
    a constant image).

    Stands in for a perceptual CSF mask: perturbation energy is concentrated
    where local contrast already hides it.
    """
    arr = _as_array(img)
    h, w = arr.shape[:2]
    if window % 2 == 0 or window < 3 or window > min(h, w):
        raise ParameterError(
            f"window must be odd, >= 3 and <= min(h, w)={min(h, w)}; "
            f"got {window}"
        )
    # center once globally: variance is shift-invariant and the centered
    # form avoids catastrophic cancellation on (near-)constant images
    luma = luminance(arr)
    luma = luma - luma.mean()
    mean = uniform_filter(luma, size=window, mode="nearest")
    mean_sq = uniform_filter(luma * luma, size=window, mode="nearest")
    var = np.maximum(mean_sq - mean * mean, 0.0)
    std = np.sqrt(var)
    peak = std.max()
    if peak == 0.0:
        return ContrastMask(np.zeros((h, w)))
    return ContrastMask(np.clip(std / peak, 0.0, 1.0))


# ---------------------------------------------------------------------------
# 8-bit conversion
# ---------------------------------------------------------------------------

def to_uint8(arr: np.ndarray) -> np.ndarray:
    """Unit-interval reals -> 8-bit, round half away from zero."""
    return np.floor(np.asarray(arr) * 255.0 + 0.5).astype(np.uint8)


def from_uint8(arr: np.ndarray) -> np.ndarray:
    return np.asarray(arr, dtype=np.float64) / 255.0


# ---------------------------------------------------------------------------
# PNG
# ---------------------------------------------------------------------------

def read_png(path) -> ImageTensor:
    try:
        with Image.open(path) as im:
            if im.mode == "L":
                arr = np.asarray(im, dtype=np.uint8)[:, :, None]
            else:
                arr = np.asarray(im.convert("RGB"), dtype=np.uint8)
    except FileNotFoundError:
        raise
    except Exception as e:
        raise FormatError(f"cannot read PNG {path}: {e}") from e
    return ImageTensor(from_uint8(arr))


def write_png(path, img: ImageTensor) -> None:
    arr = to_uint8(img.data)
    if arr.shape[2] == 1:
        Image.fromarray(arr[:, :, 0], mode="L").save(path, format="PNG")
    else:
        Image.fromarray(arr, mode="RGB").save(path, format="PNG")


# ---------------------------------------------------------------------------
# Perturbation file (UAPP)
# ---------------------------------------------------------------------------

UAPP_MAGIC = b"UAPP"
UAPP_VERSION = 1


def write_perturbation(path, p: Perturbation) -> None:
    """Binary little-endian container: magic, version, tile dims, channels,
    clip bound (f32), then the tile as f32 row-major channel-interleaved."""
    payload = p.data.astype("<f4").tobytes()
    header = UAPP_MAGIC + struct.pack(
        "<IIIIf", UAPP_VERSION, p.tile_height, p.tile_width, p.channels,
        p.clip_bound,
    )
    Path(path).write_bytes(header + payload)


def read_perturbation(path) -> Perturbation:
    raw = Path(path).read_bytes()
    if len(raw) < 4 or raw[:4] != UAPP_MAGIC:
        raise FormatError(f"{path}: bad magic, expected UAPP", offset=0)
    if len(raw) < 24:
        raise FormatError(f"{path}: truncated header", offset=len(raw))
    version, th, tw, ch, clip = struct.unpack("<IIIIf", raw[4:24])
    if version != UAPP_VERSION:
        raise FormatError(f"{path}: unsupported version {version}", offset=4)
    if ch != 3:
        raise FormatError(f"{path}: channels must be 3, got {ch}", offset=16)
    need = th * tw * ch * 4
    if len(raw) != 24 + need:
        raise FormatError(
            f"{path}: payload is {len(raw) - 24} bytes, expected {need}",
            offset=24,
        )
    data = np.frombuffer(raw, dtype="<f4", offset=24).astype(np.float64)
    data = data.reshape(th, tw, ch)
    # float32 storage may round values a hair past the f32-rounded bound
    bound = float(np.float32(clip))
    data = np.clip(data, -bound, bound)
    return Perturbation(data, clip_bound=bound)


# ---------------------------------------------------------------------------
# Y4M video
# ---------------------------------------------------------------------------

def _rgb_to_ycbcr(rgb: np.ndarray) -> np.ndarray:
    r, g, b = rgb[:, :, 0], rgb[:, :, 1], rgb[:, :, 2]
    y = LUMA_R * r + LUMA_G * g + LUMA_B * b
    cb = 0.5 * (b - y) / (1.0 - LUMA_B) + 0.5
    cr = 0.5 * (r - y) / (1.0 - LUMA_R) + 0.5
    return np.stack([y, cb, cr], axis=2)


def _ycbcr_to_rgb(ycc: np.ndarray) -> np.ndarray:
    y, cb, cr = ycc[:, :, 0], ycc[:, :, 1], ycc[:, :, 2]
    r = y + (1.0 - LUMA_R) * 2.0 * (cr - 0.5)
    b = y + (1.0 - LUMA_B) * 2.0 * (cb - 0.5)
    g = (y - LUMA_R * r - LUMA_B * b) / LUMA_G
    return np.clip(np.stack([r, g, b], axis=2), 0.0, 1.0)


def write_y4m(path, video: VideoFrames, subsampling: str = "444") -> None:
    """Write 8-bit Y4M. `subsampling` is "444" (default, lossless chroma) or
    "420" (2x2 box-averaged chroma; requires even dimensions)."""
    if video.frames[0].channels != 3:
        raise ParameterError("Y4M output requires 3-channel frames")
    h, w = video.height, video.width
    if subsampling == "420" and (h % 2 or w % 2):
        raise ParameterError("4:2:0 output requires even dimensions")
    if subsampling not in ("444", "420"):
        raise ParameterError(f"unsupported subsampling {subsampling!r}")
    colorspace = "C444" if subsampling == "444" else "C420jpeg"
    with open(path, "wb") as fh:
        fh.write(
            f"YUV4MPEG2 W{w} H{h} F{video.rate_num}:{video.rate_den} "
            f"Ip A1:1 {colorspace}\n".encode("ascii")
        )
        for frame in video.frames:
            ycc = to_uint8(_rgb_to_ycbcr(frame.data))
            fh.write(b"FRAME\n")
            fh.write(ycc[:, :, 0].tobytes())
            if subsampling == "444":
                fh.write(ycc[:, :, 1].tobytes())
                fh.write(ycc[:, :, 2].tobytes())
            else:
                for c in (1, 2):
                    plane = ycc[:, :, c].astype(np.float64)
                    sub = (plane.reshape(h // 2, 2, w // 2, 2)
                           .mean(axis=(1, 3)))
                    fh.write(np.floor(sub + 0.5).astype(np.uint8).tobytes())


def read_y4m(path) -> VideoFrames:
    raw = Path(path).read_bytes()
    nl = raw.find(b"\n")
    if nl < 0 or not raw.startswith(b"YUV4MPEG2"):
        raise FormatError(f"{path}: not a Y4M stream", offset=0)
    header = raw[:nl].decode("ascii", errors="replace")
    width = height = None
    rate = Fraction(30, 1)
    colorspace = "C420"
    for tok in header.split(" ")[1:]:
        if not tok:
            continue
        key, val = tok[0], tok[1:]
        if key == "W":
            width = int(val)
        elif key == "H":
            height = int(val)
        elif key == "F":
            num, den = val.split(":")
            rate = Fraction(int(num), int(den))
        elif key == "C":
            colorspace = tok
    if width is None or height is None:
        raise FormatError(f"{path}: header lacks W/H", offset=0)
    if colorspace.startswith("C444") and "p" not in colorspace:
        chroma_div = 1
    elif colorspace.startswith("C420"):
        chroma_div = 2
    else:
        raise FormatError(
            f"{path}: unsupported colorspace {colorspace}", offset=0
        )
    y_size = width * height
    c_size = (width // chroma_div) * (height // chroma_div)
    frame_bytes = y_size + 2 * c_size

    frames = []
    pos = nl + 1
    while pos < len(raw):
        fnl = raw.find(b"\n", pos)
        if fnl < 0 or not raw[pos:fnl].startswith(b"FRAME"):
            raise FormatError(f"{path}: expected FRAME marker", offset=pos)
        pos = fnl + 1
        if pos + frame_bytes > len(raw):
            raise FormatError(f"{path}: truncated frame payload", offset=pos)
        y = np.frombuffer(raw, np.uint8, y_size, pos).reshape(height, width)
        cb = np.frombuffer(raw, np.uint8, c_size, pos + y_size)
        cr = np.frombuffer(raw, np.uint8, c_size, pos + y_size + c_size)
        if chroma_div == 2:
            cb = cb.reshape(height // 2, width // 2).repeat(2, 0).repeat(2, 1)
            cr = cr.reshape(height // 2, width // 2).repeat(2, 0).repeat(2, 1)
        else:
            cb = cb.reshape(height, width)
            cr = cr.reshape(height, width)
        ycc = from_uint8(np.stack([y, cb, cr], axis=2))
        frames.append(ImageTensor(_ycbcr_to_rgb(ycc)))
        pos += frame_bytes
    if not frames:
        raise FormatError(f"{path}: no frames", offset=nl + 1)
    return VideoFrames(tuple(frames), rate.numerator, rate.denominator)
