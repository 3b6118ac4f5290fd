"""MVOL-1 volume files.

Layout: one UTF-8 JSON header line terminated by ``\\n``, then
``nx*ny*nz`` little-endian values of ``etype`` in x-fastest order.
A ``.gz`` suffix means the whole file is gzip-compressed.

``etype`` selects the in-memory kind on read: ``i16`` -> IntensityVolume,
``u16`` -> LabelVolume, ``f32`` -> FloatVolume.
"""
from __future__ import annotations

import gzip
import io
import json
from pathlib import Path

import numpy as np

from .core import FloatVolume, IntensityVolume, LabelVolume, VolumeGeometry
from .errors import FormatError, GeometryError

MAGIC = "MVOL-1"
MAX_HEADER = 1 << 16

_DTYPES = {"i16": np.dtype("<i2"), "u16": np.dtype("<u2"), "f32": np.dtype("<f4")}
_KINDS = {"i16": IntensityVolume, "u16": LabelVolume, "f32": FloatVolume}
_ETYPE_OF = {IntensityVolume: "i16", LabelVolume: "u16", FloatVolume: "f32"}
_KEYS = ("magic", "etype", "dims", "spacing_mm", "lr_axis", "lr_positive_is_left")


def encode_volume(volume) -> bytes:
    etype = _ETYPE_OF.get(type(volume))
    if etype is None:
        raise TypeError(f"cannot serialize {type(volume).__name__}")
    g = volume.geometry
    header = {
        "magic": MAGIC,
        "etype": etype,
        "dims": list(g.dims),
        "spacing_mm": list(g.spacing_mm),
        "lr_axis": g.lr_axis,
        "lr_positive_is_left": g.lr_positive_is_left,
    }
    flat = volume.flat()
    dtype = _DTYPES[etype]
    if etype == "i16":
        info = np.iinfo(np.int16)
        if flat.size and (flat.min() < info.min or flat.max() > info.max):
            raise FormatError("intensity values exceed the i16 range")
    line = json.dumps(header, separators=(",", ":")).encode("utf-8") + b"\n"
    return line + flat.astype(dtype).tobytes()


def decode_volume(raw: bytes):
    nl = raw.find(b"\n", 0, MAX_HEADER)
    if nl < 0:
        raise FormatError("header line not terminated", offset=min(len(raw), MAX_HEADER))
    try:
        text = raw[:nl].decode("utf-8")
    except UnicodeDecodeError as exc:
        raise FormatError("header is not UTF-8", offset=exc.start) from None
    try:
        header = json.loads(text)
    except json.JSONDecodeError as exc:
        raise FormatError(f"garbled header: {exc.msg}", offset=len(text[: exc.pos].encode("utf-8"))) from None
    if not isinstance(header, dict):
        raise FormatError("header must be a JSON object", offset=0)
    missing = [k for k in _KEYS if k not in header]
    if missing:
        raise FormatError(f"header missing keys {missing}", offset=nl)
    if header["magic"] != MAGIC:
        raise FormatError(f"bad magic {header['magic']!r}", offset=text.find('"magic"'))
    etype = header["etype"]
    if etype not in _DTYPES:
        raise FormatError(f"unsupported etype {etype!r}", offset=text.find('"etype"'))
    try:
        geom = VolumeGeometry(
            tuple(header["dims"]),
            tuple(header["spacing_mm"]),
            int(header["lr_axis"]),
            bool(header["lr_positive_is_left"]),
        )
    except (GeometryError, TypeError, ValueError) as exc:
        raise FormatError(f"invalid geometry: {exc}", offset=nl) from None
    dtype = _DTYPES[etype]
    start = nl + 1
    payload = len(raw) - start
    need = geom.n_voxels * dtype.itemsize
    if payload != need:
        raise FormatError(
            f"payload has {payload} bytes ({payload / dtype.itemsize:g} elements), "
            f"dims {list(geom.dims)} need {need} bytes",
            offset=start + min(payload, need),
        )
    flat = np.frombuffer(raw, dtype=dtype, offset=start, count=geom.n_voxels)
    if etype == "f32" and not np.all(np.isfinite(flat)):
        bad = int(np.flatnonzero(~np.isfinite(flat))[0])
        raise FormatError("non-finite f32 value", offset=start + bad * dtype.itemsize)
    data = flat.reshape(geom.dims, order="F")
    return _KINDS[etype](geom, data)


def write_volume(volume, path) -> None:
    path = Path(path)
    blob = encode_volume(volume)
    if path.suffix == ".gz":
        buf = io.BytesIO()
        # fixed mtime and no filename keep the compressed bytes reproducible
        with gzip.GzipFile(filename="", mode="wb", fileobj=buf, compresslevel=6, mtime=0) as gz:
            gz.write(blob)
        blob = buf.getvalue()
    path.write_bytes(blob)


def read_volume(path):
    path = Path(path)
    raw = path.read_bytes()
    if path.suffix == ".gz":
        try:
            raw = gzip.decompress(raw)
        except (OSError, EOFError) as exc:
            raise FormatError(f"{path}: bad gzip stream: {exc}", offset=0) from None
    try:
        return decode_volume(raw)
    except FormatError as exc:
        exc.args = (f"{path}: {exc.args[0]}",)
        raise
