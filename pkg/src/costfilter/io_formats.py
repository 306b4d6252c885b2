"""Bit-exact readers/writers for stereo file formats.

Covered formats:
  * PFM ("Pf" grayscale / "PF" color): ASCII header, raw 32-bit floats,
    bottom row first; negative scale means little-endian.
  * KITTI disparity PNG: 16-bit grayscale, code = round(disp * 256), 0 = invalid.
  * 8-bit PNG/PPM/PGM images, decoded to (3, H, W) floats in [0, 1].
  * Named-tensor weights files (magic "DAFW", version 1, f32 LE payloads).
"""
from __future__ import annotations

import struct
from pathlib import Path

import numpy as np
from PIL import Image

from .disparity import DisparityMap
from .errors import FormatError

WEIGHTS_MAGIC = b"DAFW"
WEIGHTS_VERSION = 1

_16BIT_MODES = ("I;16", "I;16B", "I;16L", "I;16N", "I", "F")


# ---------------------------------------------------------------------------
# PFM

def read_pfm(path) -> np.ndarray:
    """Read a PFM file into (1, H, W) or (3, H, W) float32."""
    data = Path(path).read_bytes()
    pos = 0

    def next_token():
        nonlocal pos
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise FormatError(f"truncated PFM header at byte {start}")
        tok = data[start:pos]
        pos += 1  # single whitespace terminator
        return tok, start

    magic, off = next_token()
    if magic not in (b"Pf", b"PF"):
        raise FormatError(f"bad PFM magic {magic!r} at byte {off}")
    channels = 1 if magic == b"Pf" else 3
    wtok, off = next_token()
    htok, off2 = next_token()
    try:
        width, height = int(wtok), int(htok)
    except ValueError:
        raise FormatError(f"bad PFM dimensions at byte {off}") from None
    if width <= 0 or height <= 0:
        raise FormatError(f"non-positive PFM dimensions at byte {off}")
    stok, off = next_token()
    try:
        scale = float(stok)
    except ValueError:
        raise FormatError(f"bad PFM scale at byte {off}") from None
    if scale == 0:
        raise FormatError(f"zero PFM scale at byte {off}")

    count = width * height * channels
    payload = data[pos:pos + count * 4]
    if len(payload) != count * 4:
        raise FormatError(
            f"truncated PFM payload at byte {pos + len(payload)}: "
            f"expected {count * 4} bytes, found {len(payload)}")
    endian = "<" if scale < 0 else ">"
    flat = np.frombuffer(payload, dtype=np.dtype(endian + "f4"), count=count)
    # rows are stored bottom-to-top
    if channels == 1:
        img = flat.reshape(height, width)[::-1]
        return np.ascontiguousarray(img[None]).astype(np.float32)
    img = flat.reshape(height, width, 3)[::-1]
    return np.ascontiguousarray(img.transpose(2, 0, 1)).astype(np.float32)


def write_pfm(tensor: np.ndarray, path) -> None:
    """Write (1, H, W) or (3, H, W) floats as PFM; always emits scale -1.0."""
    tensor = np.asarray(tensor, dtype=np.float32)
    if tensor.ndim != 3 or tensor.shape[0] not in (1, 3):
        raise FormatError(f"PFM writer expects (1|3, H, W), got {tensor.shape}")
    c, h, w = tensor.shape
    magic = b"Pf" if c == 1 else b"PF"
    header = magic + b"\n" + f"{w} {h}".encode() + b"\n" + b"-1.0\n"
    if c == 1:
        body = tensor[0, ::-1].astype("<f4").tobytes()
    else:
        body = tensor.transpose(1, 2, 0)[::-1].astype("<f4").tobytes()
    Path(path).write_bytes(header + body)


# ---------------------------------------------------------------------------
# KITTI disparity PNG

def read_kitti_disp_png(path) -> DisparityMap:
    """16-bit grayscale PNG; disparity = code / 256, code 0 = invalid."""
    with Image.open(path) as im:
        if im.mode not in ("I;16", "I;16B", "I;16L", "I"):
            raise FormatError(
                f"KITTI disparity PNG must be 16-bit single-channel, got mode {im.mode}")
        codes = np.array(im, dtype=np.uint32)
    if codes.ndim != 2:
        raise FormatError("KITTI disparity PNG must be single-channel")
    values = codes.astype(np.float32) / 256.0
    return DisparityMap(values, codes > 0)


def write_kitti_disp_png(dmap: DisparityMap, path) -> None:
    """Round disparities to the nearest 1/256 code; invalid pixels store 0."""
    codes = np.rint(dmap.values * 256.0)
    codes = np.clip(codes, 0, 65535).astype(np.uint16)
    codes[~dmap.valid] = 0
    im = Image.fromarray(codes)
    im.save(path, format="PNG")


# ---------------------------------------------------------------------------
# 8-bit images

def read_image(path) -> np.ndarray:
    """Read an 8-bit PNG/PPM/PGM into (3, H, W) floats in [0, 1].

    Grayscale is replicated across the 3 channels. Standardization is NOT
    applied here; the matching pipeline does that itself.
    """
    with Image.open(path) as im:
        if im.mode in _16BIT_MODES:
            raise FormatError(f"unsupported bit depth (mode {im.mode}); expected 8-bit")
        if im.mode not in ("L", "RGB"):
            im = im.convert("RGB")
        arr = np.array(im, dtype=np.uint8)
    if arr.ndim == 2:
        arr = np.repeat(arr[None], 3, axis=0)
    else:
        arr = arr.transpose(2, 0, 1)
    return arr.astype(np.float32) / 255.0


def write_image(tensor: np.ndarray, path) -> None:
    """Write (3, H, W) or (1, H, W) floats in [0, 1] as an 8-bit image (by extension)."""
    tensor = np.asarray(tensor)
    codes = np.clip(np.rint(tensor * 255.0), 0, 255).astype(np.uint8)
    if codes.shape[0] == 1:
        im = Image.fromarray(codes[0], mode="L")
    else:
        im = Image.fromarray(codes.transpose(1, 2, 0), mode="RGB")
    im.save(path)


# ---------------------------------------------------------------------------
# weights files

class WeightsFile:
    """Ordered name -> float32 ndarray mapping with a bit-exact binary layout."""

    def __init__(self, tensors: dict | None = None):
        self.tensors: dict[str, np.ndarray] = {}
        for name, arr in (tensors or {}).items():
            self[name] = arr

    def __setitem__(self, name: str, arr):
        self.tensors[name] = np.ascontiguousarray(arr, dtype=np.float32)

    def __getitem__(self, name: str) -> np.ndarray:
        return self.tensors[name]

    def __contains__(self, name) -> bool:
        return name in self.tensors

    def __len__(self) -> int:
        return len(self.tensors)

    def names(self):
        return list(self.tensors)


def write_weights(wf: WeightsFile, path) -> None:
    out = bytearray()
    out += WEIGHTS_MAGIC
    out += struct.pack("<I", WEIGHTS_VERSION)
    out += struct.pack("<I", len(wf))
    for name, arr in wf.tensors.items():
        nb = name.encode("utf-8")
        if len(nb) > 0xFFFF:
            raise FormatError(f"tensor name too long: {len(nb)} bytes")
        out += struct.pack("<H", len(nb))
        out += nb
        out += struct.pack("<B", arr.ndim)
        for ext in arr.shape:
            out += struct.pack("<I", ext)
        out += arr.astype("<f4").tobytes()
    Path(path).write_bytes(bytes(out))


def read_weights(path) -> WeightsFile:
    data = Path(path).read_bytes()
    if data[:4] != WEIGHTS_MAGIC:
        raise FormatError(f"bad weights magic {data[:4]!r} at byte 0")
    pos = 4

    def take(n, what):
        nonlocal pos
        if pos + n > len(data):
            raise FormatError(f"truncated weights file at byte {pos} reading {what}")
        chunk = data[pos:pos + n]
        pos += n
        return chunk

    (version,) = struct.unpack("<I", take(4, "version"))
    if version != WEIGHTS_VERSION:
        raise FormatError(f"unsupported weights version {version}")
    (count,) = struct.unpack("<I", take(4, "tensor count"))
    wf = WeightsFile()
    for _ in range(count):
        (nlen,) = struct.unpack("<H", take(2, "name length"))
        name = take(nlen, "name").decode("utf-8")
        if name in wf:
            raise FormatError(f"duplicate tensor name {name!r}")
        (rank,) = struct.unpack("<B", take(1, "rank"))
        shape = tuple(struct.unpack("<I", take(4, "extent"))[0] for _ in range(rank))
        n = int(np.prod(shape)) if shape else 1
        payload = take(4 * n, f"payload of {name!r}")
        wf.tensors[name] = np.frombuffer(payload, dtype="<f4").reshape(shape).copy()
    return wf


# ---------------------------------------------------------------------------
# disparity file dispatch (used by the CLI)

def read_disparity(path, d_max: float | None = None) -> DisparityMap:
    """Load a disparity map from .pfm or .png, optionally clamping to [0, d_max)."""
    p = str(path)
    if p.lower().endswith(".pfm"):
        t = read_pfm(p)
        if t.shape[0] != 1:
            raise FormatError("disparity PFM must be single-channel")
        dmap = DisparityMap(t[0], np.isfinite(t[0]))
    elif p.lower().endswith(".png"):
        dmap = read_kitti_disp_png(p)
    else:
        raise FormatError(f"unknown disparity format for {p!r} (expected .pfm or .png)")
    if d_max is not None:
        dmap = dmap.clamped(d_max)
    return dmap


def write_disparity(dmap: DisparityMap, path) -> None:
    p = str(path)
    if p.lower().endswith(".pfm"):
        write_pfm(dmap.values.astype(np.float32)[None], p)
    elif p.lower().endswith(".png"):
        write_kitti_disp_png(dmap, p)
    else:
        raise FormatError(f"unknown disparity format for {p!r} (expected .pfm or .png)")
