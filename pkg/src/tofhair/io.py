"""On-disk formats: PFM float maps, PGM masks, PNG label/colour images, JSON
and CSV. Every writer goes through a temp file and an atomic rename."""

from __future__ import annotations

import csv
import io
import json
import os
import re
import tempfile
from pathlib import Path

import numpy as np
from PIL import Image

from tofhair.errors import DataError


def atomic_write(path, data: bytes) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def encode_pfm(array: np.ndarray) -> bytes:
    """Little-endian PFM (scale -1.0). 2-D arrays become ``Pf``, (H, W, 3)
    arrays ``PF``. Rows are stored bottom-to-top as the format requires."""
    a = np.asarray(array, dtype="<f4")
    if a.ndim == 2:
        kind = b"Pf"
    elif a.ndim == 3 and a.shape[2] == 3:
        kind = b"PF"
    else:
        raise ValueError(f"PFM holds 1 or 3 channels, got shape {a.shape}")
    h, w = a.shape[:2]
    header = kind + b"\n" + f"{w} {h}\n".encode() + b"-1.0\n"
    return header + np.ascontiguousarray(a[::-1]).tobytes()


def decode_pfm(data: bytes) -> np.ndarray:
    m = re.match(rb"(P[Ff])\s+(\d+)\s+(\d+)\s+(\S+)\s", data)
    if not m:
        raise DataError("not a PFM file")
    kind, w, h, scale = m.group(1), int(m.group(2)), int(m.group(3)), float(m.group(4))
    channels = 3 if kind == b"PF" else 1
    dtype = "<f4" if scale < 0 else ">f4"
    body = np.frombuffer(data, dtype=dtype, count=w * h * channels, offset=m.end())
    shape = (h, w, 3) if channels == 3 else (h, w)
    return body.reshape(shape)[::-1].astype(np.float64)


def write_pfm(path, array) -> Path:
    return atomic_write(path, encode_pfm(array))


def read_pfm(path) -> np.ndarray:
    return decode_pfm(Path(path).read_bytes())


def write_planes(path, planes: np.ndarray, meta: dict | None = None) -> Path:
    """Stack P planes of shape (H, W) into one ``Pf`` image of height P*H and
    record the plane count (plus ``meta``) in a JSON sidecar."""
    planes = np.asarray(planes)
    p, h, w = planes.shape
    sidecar = {"planes": p, "height": h, "width": w}
    sidecar.update(meta or {})
    write_json(Path(path).with_suffix(".json"), sidecar)
    return write_pfm(path, planes.reshape(p * h, w))


def read_planes(path) -> tuple[np.ndarray, dict]:
    meta = read_json(Path(path).with_suffix(".json"))
    flat = read_pfm(path)
    return flat.reshape(meta["planes"], meta["height"], meta["width"]), meta


def encode_pgm(array: np.ndarray) -> bytes:
    a = np.asarray(array)
    if a.ndim != 2:
        raise ValueError("PGM needs a 2-D array")
    if a.min(initial=0) < 0 or a.max(initial=0) > 255:
        raise ValueError("PGM values must fit in 0..255")
    h, w = a.shape
    return f"P5\n{w} {h}\n255\n".encode() + a.astype(np.uint8).tobytes()


def decode_pgm(data: bytes) -> np.ndarray:
    m = re.match(rb"P5\s+(\d+)\s+(\d+)\s+(\d+)\s", data)
    if not m:
        raise DataError("not a binary PGM file")
    w, h = int(m.group(1)), int(m.group(2))
    return np.frombuffer(data, dtype=np.uint8, count=w * h, offset=m.end()).reshape(h, w).copy()


def write_pgm(path, array) -> Path:
    return atomic_write(path, encode_pgm(array))


def read_pgm(path) -> np.ndarray:
    return decode_pgm(Path(path).read_bytes())


def write_mask(path, mask: np.ndarray) -> Path:
    """Boolean mask as PGM with 0/255."""
    return write_pgm(path, np.where(mask, 255, 0))


def read_mask(path) -> np.ndarray:
    return read_pgm(path) > 127


def write_png(path, array) -> Path:
    buf = io.BytesIO()
    Image.fromarray(np.asarray(array, dtype=np.uint8)).save(buf, format="PNG")
    return atomic_write(path, buf.getvalue())


def read_png(path) -> np.ndarray:
    with Image.open(path) as img:
        return np.asarray(img).copy()


def write_json(path, obj) -> Path:
    return atomic_write(path, (json.dumps(obj, indent=2, sort_keys=True) + "\n").encode())


def read_json(path):
    with open(path) as fh:
        return json.load(fh)


def write_csv(path, header, rows) -> Path:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])
    return atomic_write(path, buf.getvalue().encode())


def write_text(path, text: str) -> Path:
    return atomic_write(path, text.encode())
