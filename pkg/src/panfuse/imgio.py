"""Bit-exact readers and writers for the engine's on-disk formats.

PMAP container layout:
    bytes 0-7    ASCII magic ``PMAPV001``
    bytes 8-11   unsigned 32-bit little-endian header length L
    bytes 12..   UTF-8 JSON header
                 {"height":H,"width":W,"channels":C,"dtype":"f32le","scheme":...}
    then         H*W*C little-endian float32, row-major, channel-fastest
                 (offset of (r, c, ch) = ((r*W)+c)*C + ch)

Label maps are 16-bit single-channel PNGs. Instance maps are a 16-bit PNG of
ids plus a JSON sidecar ``{"scheme":..., "classes":{"<id>":<class>}}``.

Decoding never fabricates values: corrupt inputs raise, they never produce a
partially filled map. Writers validate before touching the filesystem.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import ConsistencyError, CorruptionError, FormatError, ValidationError
from .maps import InstanceMap, LabelMap, ProbabilityMap
from .schemes import get_scheme

PMAP_MAGIC = b"PMAPV001"
_PNG_SIGNATURE = b"\x89PNG\r\n\x1a\n"

__all__ = [
    "read_pmap",
    "write_pmap",
    "read_label_png",
    "write_label_png",
    "read_instances",
    "write_instances",
    "read_rgb_png",
    "write_rgb_png",
    "pmap_header",
]


def pmap_header(pmap: ProbabilityMap) -> bytes:
    # Key order is fixed so identical maps always serialize to identical bytes.
    header = {
        "height": pmap.height,
        "width": pmap.width,
        "channels": pmap.channels,
        "dtype": "f32le",
        "scheme": pmap.scheme_id,
    }
    return json.dumps(header, separators=(",", ":")).encode("utf-8")


def write_pmap(pmap: ProbabilityMap, path: str | Path) -> None:
    header = pmap_header(pmap)
    payload = np.ascontiguousarray(pmap.data, dtype="<f4").tobytes()
    with open(path, "wb") as fh:
        fh.write(PMAP_MAGIC)
        fh.write(struct.pack("<I", len(header)))
        fh.write(header)
        fh.write(payload)


def read_pmap(path: str | Path) -> ProbabilityMap:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:8] != PMAP_MAGIC:
        raise FormatError(f"{path}: bad magic, not a PMAP container")
    if len(blob) < 12:
        raise CorruptionError(f"{path}: truncated before header length")
    (header_len,) = struct.unpack("<I", blob[8:12])
    if len(blob) < 12 + header_len:
        raise CorruptionError(f"{path}: truncated header")
    try:
        header = json.loads(blob[12 : 12 + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path}: undecodable header: {exc}") from exc
    try:
        height = int(header["height"])
        width = int(header["width"])
        channels = int(header["channels"])
        dtype = header["dtype"]
        scheme = header["scheme"]
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"{path}: header missing required fields: {exc}") from exc
    if dtype != "f32le":
        raise FormatError(f"{path}: unsupported dtype {dtype!r}")
    if height < 0 or width < 0 or channels <= 0:
        raise FormatError(f"{path}: nonsensical dimensions in header")
    payload = blob[12 + header_len :]
    expected = height * width * channels * 4
    if len(payload) != expected:
        raise CorruptionError(
            f"{path}: payload is {len(payload)} bytes, header declares {expected}"
        )
    data = np.frombuffer(payload, dtype="<f4").reshape(height, width, channels)
    return ProbabilityMap(scheme_id=scheme, data=data)


def _check_png_is_16bit_gray(path: str | Path) -> None:
    # Inspect the IHDR directly; Pillow's mode naming shifted across versions.
    with open(path, "rb") as fh:
        head = fh.read(26)
    if head[:8] != _PNG_SIGNATURE:
        raise FormatError(f"{path}: not a PNG file")
    if len(head) < 26 or head[12:16] != b"IHDR":
        raise CorruptionError(f"{path}: missing IHDR chunk")
    bit_depth, color_type = head[24], head[25]
    if bit_depth != 16 or color_type != 0:
        raise FormatError(
            f"{path}: expected 16-bit grayscale PNG, got bit depth "
            f"{bit_depth}, color type {color_type}"
        )


def _read_u16_png(path: str | Path) -> np.ndarray:
    _check_png_is_16bit_gray(path)
    with Image.open(path) as im:
        arr = np.asarray(im)
    if arr.dtype != np.uint16:
        arr = arr.astype(np.uint16)
    return arr


def _write_u16_png(data: np.ndarray, path: str | Path) -> None:
    if data.size and data.max() > np.iinfo(np.uint16).max:
        raise ValidationError(f"{path}: values exceed 16-bit PNG range")
    Image.fromarray(data.astype(np.uint16)).save(path, format="PNG")


def read_label_png(path: str | Path, scheme_id: str) -> LabelMap:
    arr = _read_u16_png(path)
    scheme = get_scheme(scheme_id)
    if arr.size and arr.max() >= scheme.class_count:
        raise ValidationError(
            f"{path}: pixel value {int(arr.max())} outside scheme "
            f"{scheme_id!r} ({scheme.class_count} classes)"
        )
    return LabelMap(scheme_id=scheme_id, data=arr.astype(np.int32))


def write_label_png(label_map: LabelMap, path: str | Path) -> None:
    _write_u16_png(label_map.data, path)


def read_instances(png_path: str | Path, json_path: str | Path) -> InstanceMap:
    ids = _read_u16_png(png_path).astype(np.int32)
    with open(json_path, "r", encoding="utf-8") as fh:
        try:
            sidecar = json.load(fh)
        except json.JSONDecodeError as exc:
            raise FormatError(f"{json_path}: invalid JSON sidecar: {exc}") from exc
    try:
        scheme_id = sidecar["scheme"]
        raw_classes = sidecar["classes"]
        classes = {int(k): int(v) for k, v in raw_classes.items()}
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"{json_path}: malformed sidecar: {exc}") from exc
    present = set(np.unique(ids).tolist()) - {0}
    missing = present - set(classes)
    if missing:
        raise ConsistencyError(
            f"{png_path}: ids {sorted(missing)[:10]} missing from sidecar {json_path}"
        )
    return InstanceMap(scheme_id=scheme_id, ids=ids, classes=classes)


def write_instances(
    inst: InstanceMap, png_path: str | Path, json_path: str | Path
) -> None:
    if inst.ids.size and inst.ids.max() > np.iinfo(np.uint16).max:
        raise ValidationError("instance ids exceed 16-bit PNG range")
    sidecar = {
        "scheme": inst.scheme_id,
        "classes": {str(k): inst.classes[k] for k in sorted(inst.classes)},
    }
    payload = json.dumps(sidecar, separators=(",", ":")) + "\n"
    _write_u16_png(inst.ids, png_path)
    with open(json_path, "w", encoding="utf-8") as fh:
        fh.write(payload)


def read_rgb_png(path: str | Path) -> np.ndarray:
    """Load an 8-bit RGB image as float32 in [0, 1], shape (H, W, 3)."""
    with Image.open(path) as im:
        rgb = im.convert("RGB")
        arr = np.asarray(rgb, dtype=np.float32) / 255.0
    return arr


def write_rgb_png(data: np.ndarray, path: str | Path) -> None:
    """Save a float [0, 1] or uint8 (H, W, 3) array as an RGB PNG."""
    arr = np.asarray(data)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise ValidationError(f"RGB image must be H x W x 3, got {arr.shape}")
    if arr.dtype != np.uint8:
        arr = np.clip(np.round(arr * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(arr, mode="RGB").save(path, format="PNG")
