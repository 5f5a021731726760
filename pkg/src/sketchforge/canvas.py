"""Image representation and pixel-space utilities.

Coordinate convention used by every module: pixel (row i, column j) has its
centre at continuous coordinates (j + 0.5, i + 0.5), x rightward, y downward.
Pixel values are floats in [0, 1], stored row-major as (height, width,
channels).
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field

import numpy as np
from numpy.typing import NDArray

from .errors import FormatError, ValidationError

# Rec. 709 luma coefficients for RGB -> grayscale.
LUMA_709 = np.array([0.2126, 0.7152, 0.0722], dtype=np.float64)

_PNG_MAGIC = b"\x89PNG\r\n\x1a\n"


@dataclass
class Canvas:
    """Dense H*W*C float image in [0, 1]."""

    data: NDArray[np.float64]

    def __post_init__(self):
        arr = np.asarray(self.data, dtype=np.float64)
        if arr.ndim == 2:
            arr = arr[:, :, None]
        if arr.ndim != 3:
            raise ValidationError(f"canvas data must be HxWxC, got shape {arr.shape}")
        h, w, c = arr.shape
        if h < 1 or w < 1:
            raise ValidationError(f"canvas dimensions must be >= 1, got {w}x{h}")
        if c not in (1, 3):
            raise ValidationError(f"canvas must have 1 or 3 channels, got {c}")
        if not np.isfinite(arr).all():
            raise ValidationError("canvas contains non-finite values")
        self.data = arr

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def channels(self) -> int:
        return self.data.shape[2]

    @classmethod
    def new(cls, width: int, height: int, channels: int = 1, fill: float = 1.0) -> Canvas:
        return cls(np.full((height, width, channels), float(fill), dtype=np.float64))

    def copy(self) -> Canvas:
        return Canvas(self.data.copy())

    def assert_valid(self) -> None:
        if self.data.min() < 0.0 or self.data.max() > 1.0:
            raise ValidationError("canvas values outside [0, 1]")


@dataclass
class TargetImage:
    """A loaded optimisation target plus its provenance."""

    canvas: Canvas
    source_path: str = ""
    colour_mode: str = "grayscale"  # "grayscale" | "rgb"

    def __post_init__(self):
        if self.colour_mode not in ("grayscale", "rgb"):
            raise ValidationError(f"unknown colour_mode {self.colour_mode!r}")
        want = 1 if self.colour_mode == "grayscale" else 3
        if self.canvas.channels != want:
            raise ValidationError(
                f"colour_mode {self.colour_mode} expects {want} channels, "
                f"canvas has {self.canvas.channels}"
            )


def rgb_to_gray(arr: NDArray[np.float64]) -> NDArray[np.float64]:
    """Rec. 709 luma; exact passthrough where R == G == B."""
    luma = arr @ LUMA_709
    flat = (arr[:, :, 0] == arr[:, :, 1]) & (arr[:, :, 1] == arr[:, :, 2])
    return np.where(flat, arr[:, :, 1], luma)[:, :, None]


def _read_ppm_bytes(raw: bytes) -> NDArray[np.uint8]:
    """Parse a binary PPM (P6, maxval 255) into (h, w, 3) uint8."""
    if raw[:2] != b"P6":
        raise FormatError("not a P6 PPM file")
    pos = 2
    fields = []
    while len(fields) < 3:
        if pos >= len(raw):
            raise FormatError("truncated PPM header")
        ch = raw[pos : pos + 1]
        if ch == b"#":
            nl = raw.find(b"\n", pos)
            if nl < 0:
                raise FormatError("unterminated PPM comment")
            pos = nl + 1
        elif ch.isspace():
            pos += 1
        elif ch.isdigit():
            end = pos
            while end < len(raw) and raw[end : end + 1].isdigit():
                end += 1
            fields.append(int(raw[pos:end]))
            pos = end
        else:
            raise FormatError(f"unexpected byte {ch!r} in PPM header")
    width, height, maxval = fields
    if maxval != 255:
        raise FormatError(f"only maxval 255 supported, got {maxval}")
    if width < 1 or height < 1:
        raise ValidationError(f"zero-dimension image: {width}x{height}")
    # exactly one whitespace byte separates the header from pixel data
    if pos >= len(raw) or not raw[pos : pos + 1].isspace():
        raise FormatError("missing whitespace before PPM pixel data")
    pos += 1
    n = width * height * 3
    body = raw[pos : pos + n]
    if len(body) != n:
        raise FormatError(f"PPM pixel data truncated: want {n} bytes, got {len(body)}")
    return np.frombuffer(body, dtype=np.uint8).reshape(height, width, 3)


def load_image(path: str, colour_mode: str = "grayscale") -> TargetImage:
    """Load a PNG or binary PPM (P6) file.

    Bytes map to floats as v / 255.0; RGB collapses to grayscale with the
    Rec. 709 luma when colour_mode is "grayscale".
    """
    if colour_mode not in ("grayscale", "rgb"):
        raise ValidationError(f"unknown colour_mode {colour_mode!r}")
    try:
        with open(path, "rb") as fh:
            raw = fh.read()
    except OSError as exc:
        raise IOError(f"cannot read image {path!r}: {exc}") from exc

    if raw[:2] == b"P6":
        rgb8 = _read_ppm_bytes(raw)
    elif raw[: len(_PNG_MAGIC)] == _PNG_MAGIC:
        from PIL import Image

        with Image.open(io.BytesIO(raw)) as img:
            img = img.convert("RGB")
            rgb8 = np.asarray(img, dtype=np.uint8)
        if rgb8.shape[0] < 1 or rgb8.shape[1] < 1:
            raise ValidationError("zero-dimension image")
    else:
        raise FormatError(f"unsupported image format in {path!r} (need PNG or P6 PPM)")

    arr = rgb8.astype(np.float64) / 255.0
    if colour_mode == "grayscale":
        arr = rgb_to_gray(arr)
    return TargetImage(canvas=Canvas(arr), source_path=str(path), colour_mode=colour_mode)


def save_ppm(canvas: Canvas, path: str) -> None:
    """Write a P6 PPM; grayscale is replicated to RGB. Bit-exact for 8-bit content."""
    arr = canvas.data
    if canvas.channels == 1:
        arr = np.repeat(arr, 3, axis=2)
    bytes8 = np.rint(np.clip(arr, 0.0, 1.0) * 255.0).astype(np.uint8)
    header = f"P6\n{canvas.width} {canvas.height}\n255\n".encode("ascii")
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(bytes8.tobytes())


def ppm_bytes(canvas: Canvas) -> bytes:
    """The exact bytes save_ppm would write."""
    arr = canvas.data
    if canvas.channels == 1:
        arr = np.repeat(arr, 3, axis=2)
    bytes8 = np.rint(np.clip(arr, 0.0, 1.0) * 255.0).astype(np.uint8)
    header = f"P6\n{canvas.width} {canvas.height}\n255\n".encode("ascii")
    return header + bytes8.tobytes()


def resize_bilinear(img: Canvas, new_w: int, new_h: int) -> Canvas:
    """Bilinear resample with centre-aligned sampling and edge clamping."""
    if new_w < 1 or new_h < 1:
        raise ValidationError(f"target dimensions must be >= 1, got {new_w}x{new_h}")
    src = img.data
    h, w, _ = src.shape

    def axis_coords(n_dst: int, n_src: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        pos = (np.arange(n_dst, dtype=np.float64) + 0.5) * (n_src / n_dst) - 0.5
        pos = np.clip(pos, 0.0, n_src - 1.0)
        lo = np.floor(pos).astype(np.intp)
        lo = np.minimum(lo, n_src - 1)
        hi = np.minimum(lo + 1, n_src - 1)
        frac = pos - lo
        return lo, hi, frac

    x0, x1, fx = axis_coords(new_w, w)
    y0, y1, fy = axis_coords(new_h, h)
    fx = fx[None, :, None]
    fy = fy[:, None, None]
    top = src[y0][:, x0] * (1.0 - fx) + src[y0][:, x1] * fx
    bot = src[y1][:, x0] * (1.0 - fx) + src[y1][:, x1] * fx
    out = top * (1.0 - fy) + bot * fy
    return Canvas(np.clip(out, 0.0, 1.0))


def downsample_avg2(img: Canvas) -> Canvas:
    """Halve each dimension by 2x2 block means; trailing odd row/column
    blocks clamp to the image bounds."""
    h, w, c = img.data.shape
    if h < 2 or w < 2:
        raise ValidationError(f"downsample needs dimensions >= 2, got {w}x{h}")
    src = img.data
    h2, w2 = (h + 1) // 2, (w + 1) // 2
    out = np.empty((h2, w2, c), dtype=np.float64)
    he, we = h // 2, w // 2
    core = src[: 2 * he, : 2 * we].reshape(he, 2, we, 2, c)
    out[:he, :we] = core.mean(axis=(1, 3))
    if w % 2:  # 2x1 blocks along the right edge
        col = src[: 2 * he, -1].reshape(he, 2, c)
        out[:he, -1] = col.mean(axis=1)
    if h % 2:  # 1x2 blocks along the bottom edge
        row = src[-1, : 2 * we].reshape(we, 2, c)
        out[-1, :we] = row.mean(axis=1)
    if w % 2 and h % 2:
        out[-1, -1] = src[-1, -1]
    return Canvas(out)


def avg2_adjoint(grad_small: NDArray[np.float64], out_h: int, out_w: int) -> NDArray[np.float64]:
    """Adjoint of downsample_avg2: spread each block's gradient back to its
    members, weighted 1/block_size. Needed by the pyramid loss."""
    h2, w2, c = grad_small.shape
    if h2 != (out_h + 1) // 2 or w2 != (out_w + 1) // 2:
        raise ValidationError("gradient shape does not match the downsample source")
    out = np.zeros((out_h, out_w, c), dtype=np.float64)
    he, we = out_h // 2, out_w // 2
    core = grad_small[:he, :we] / 4.0
    spread = np.repeat(np.repeat(core, 2, axis=0), 2, axis=1)
    out[: 2 * he, : 2 * we] = spread
    if out_w % 2:
        out[: 2 * he, -1] = np.repeat(grad_small[:he, -1] / 2.0, 2, axis=0)
    if out_h % 2:
        out[-1, : 2 * we] = np.repeat(grad_small[-1, :we] / 2.0, 2, axis=0)
    if out_w % 2 and out_h % 2:
        out[-1, -1] = grad_small[-1, -1]
    return out
