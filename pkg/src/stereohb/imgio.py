"""PNG frame ingestion, the SPECRAW1 planar float format and heatmaps.

SPECRAW1 layout (all integers little-endian)::

    offset  size  field
    0       8     magic  b"SPECRAW1"
    8       4     width     uint32
    12      4     height    uint32
    16      4     channels  uint32
    20      4     dtype tag b"F4LE" (IEEE-754 float32, little-endian)
    24      ...   payload, channel-major then row-major

Scientific outputs go through SPECRAW1 only; PNG is for camera input and
display.
"""

import struct
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np
import png

from .errors import ConfigError, FormatError, ShapeError, ValidationError
from .pipeline import Frame

RAW_MAGIC = b"SPECRAW1"
RAW_DTYPE = b"F4LE"
RAW_HEADER = struct.Struct("<8sIII4s")
assert RAW_HEADER.size == 24

DEFAULT_LUT = "viridis"
DEFAULT_INVALID_COLOUR = (255, 0, 255)


# ---------------------------------------------------------------- PNG

def read_rgb_png(path):
    """Read an 8- or 16-bit RGB/RGBA PNG as a 3-channel :class:`Frame`.

    Values are scaled by 255 or 65535.  A pixel is flagged saturated when
    any channel sits at code 0 or at full scale.  Alpha is dropped.
    """
    try:
        width, height, rows, info = png.Reader(filename=str(path)).asDirect()
        pixels = np.vstack([np.asarray(r, dtype=np.uint32) for r in rows])
    except png.Error as exc:
        raise FormatError(f"{path}: {exc}") from exc
    depth = info["bitdepth"]
    planes = info["planes"]
    if info.get("greyscale") or planes not in (3, 4):
        raise FormatError(f"{path}: expected RGB or RGBA, got {planes}-plane greyscale={info.get('greyscale')}")
    if depth not in (8, 16):
        raise FormatError(f"{path}: unsupported bit depth {depth}")
    full = (1 << depth) - 1
    codes = pixels.reshape(height, width, planes)[..., :3].transpose(2, 0, 1)
    saturated = np.any((codes == 0) | (codes == full), axis=0)
    return Frame(codes / float(full), saturated)


def write_rgb_png(frame, path, bitdepth=8):
    """Write a 3-channel frame; values are clipped to [0, 1] and rounded."""
    if bitdepth not in (8, 16):
        raise FormatError(f"unsupported bit depth {bitdepth}")
    data = getattr(frame, "data", frame)
    data = np.asarray(data, dtype=float)
    if data.ndim != 3 or data.shape[0] != 3:
        raise ShapeError(f"PNG output needs (3, H, W) data, got {data.shape}")
    full = (1 << bitdepth) - 1
    codes = np.rint(np.clip(data, 0.0, 1.0) * full).astype(np.uint16 if bitdepth == 16 else np.uint8)
    _write_png_codes(codes.transpose(1, 2, 0), path, bitdepth)


def _write_png_codes(hwc, path, bitdepth=8):
    h, w, _ = hwc.shape
    writer = png.Writer(w, h, greyscale=False, bitdepth=bitdepth)
    with open(path, "wb") as fh:
        writer.write(fh, np.ascontiguousarray(hwc).reshape(h, w * 3))


# ---------------------------------------------------------------- SPECRAW1

@dataclass(frozen=True, eq=False)
class RawPlanarImage:
    """Planar float32 image, ``data`` of shape (channels, height, width)."""

    data: np.ndarray

    def __post_init__(self):
        d = np.asarray(self.data)
        if d.ndim == 2:
            d = d[None]
        if d.ndim != 3 or 0 in d.shape:
            raise ShapeError(f"raw image data must be (channels, H, W), got {d.shape}")
        d = np.array(d, dtype="<f4", order="C")
        d.setflags(write=False)
        object.__setattr__(self, "data", d)

    @property
    def channels(self):
        return self.data.shape[0]

    @property
    def height(self):
        return self.data.shape[1]

    @property
    def width(self):
        return self.data.shape[2]

    def to_bytes(self):
        head = RAW_HEADER.pack(RAW_MAGIC, self.width, self.height, self.channels, RAW_DTYPE)
        return head + self.data.tobytes(order="C")

    @classmethod
    def from_bytes(cls, buf, source="<bytes>"):
        if len(buf) < RAW_HEADER.size:
            raise FormatError(
                f"{source}: truncated header, expected {RAW_HEADER.size} bytes, got {len(buf)}"
            )
        magic, w, h, c, tag = RAW_HEADER.unpack_from(buf, 0)
        if magic != RAW_MAGIC:
            raise FormatError(f"{source}: bad magic {magic!r} at byte offset 0")
        if tag != RAW_DTYPE:
            raise FormatError(f"{source}: unsupported dtype tag {tag!r} at byte offset 20")
        if w == 0 or h == 0 or c == 0:
            raise FormatError(f"{source}: zero dimension in header ({w}x{h}x{c})")
        expected = RAW_HEADER.size + 4 * w * h * c
        if len(buf) != expected:
            kind = "truncated" if len(buf) < expected else "oversized"
            raise FormatError(
                f"{source}: {kind} payload, expected {expected} bytes, got {len(buf)} "
                f"(payload starts at byte offset {RAW_HEADER.size})"
            )
        data = np.frombuffer(buf, dtype="<f4", offset=RAW_HEADER.size).reshape(c, h, w)
        return cls(data)


def write_raw(image, path):
    if not isinstance(image, RawPlanarImage):
        image = RawPlanarImage(image)
    Path(path).write_bytes(image.to_bytes())


def read_raw(path):
    return RawPlanarImage.from_bytes(Path(path).read_bytes(), str(path))


# ---------------------------------------------------------------- heatmaps

def load_lut(name_or_path=DEFAULT_LUT):
    """256x3 uint8 colour table from a file of ``r,g,b`` lines.

    A bare name such as ``"viridis"`` refers to a table shipped with the
    package.
    """
    p = Path(name_or_path)
    if p.suffix == "" and not p.exists():
        text = (resources.files("stereohb") / "data" / f"{name_or_path}.lut").read_text()
        source = f"{name_or_path}.lut"
    else:
        text = p.read_text()
        source = str(p)
    rows = []
    for lineno, line in enumerate(text.splitlines(), 1):
        if not line.strip():
            continue
        try:
            vals = [int(v) for v in line.split(",")]
        except ValueError:
            raise FormatError(f"{source}:{lineno}: expected 'r,g,b' integers") from None
        if len(vals) != 3 or not all(0 <= v <= 255 for v in vals):
            raise FormatError(f"{source}:{lineno}: expected three values in 0..255")
        rows.append(vals)
    if len(rows) != 256:
        raise FormatError(f"{source}: colour table needs 256 entries, found {len(rows)}")
    lut = np.array(rows, dtype=np.uint8)
    lut.setflags(write=False)
    return lut


def render_heatmap(field, value_range, lut=DEFAULT_LUT, invalid_colour=DEFAULT_INVALID_COLOUR,
                   invalid=None):
    """Colour-map a 2-D field into an (H, W, 3) uint8 image.

    Values are mapped linearly from ``value_range`` onto the 256 table
    entries and clamped at both ends.  Non-finite values and pixels set in
    ``invalid`` are painted ``invalid_colour``, which must not occur in the
    table so that invalid pixels can never be mistaken for data.
    """
    lo, hi = (float(v) for v in value_range)
    if not (np.isfinite(lo) and np.isfinite(hi) and lo < hi):
        raise ConfigError(f"heatmap range must satisfy min < max, got ({lo}, {hi})")
    table = load_lut(lut) if isinstance(lut, (str, Path)) else np.asarray(lut, dtype=np.uint8)
    if table.shape != (256, 3):
        raise ValidationError("colour table must be 256x3")
    bad_colour = np.asarray(invalid_colour, dtype=np.uint8)
    if np.any(np.all(table == bad_colour, axis=1)):
        raise ConfigError(f"invalid colour {tuple(invalid_colour)} also appears in the colour table")
    f = np.asarray(field, dtype=float)
    if f.ndim != 2:
        raise ShapeError("heatmap field must be 2-D")
    bad = ~np.isfinite(f)
    if invalid is not None:
        bad |= np.asarray(invalid, dtype=bool)
    t = (np.where(bad, lo, f) - lo) / (hi - lo)
    idx = np.clip(np.floor(t * 256), 0, 255).astype(np.intp)
    out = table[idx]
    out[bad] = bad_colour
    return out


def write_heatmap_png(image, path):
    _write_png_codes(np.asarray(image, dtype=np.uint8), path, 8)
