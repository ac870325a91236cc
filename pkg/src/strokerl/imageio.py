"""Image codecs: binary PPM (P6) with a bit-exact 8-bit round trip, and PNG.

Channel values map v/255 on load and round(v*255) on save.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image


class ImageIOError(Exception):
    """Unreadable, unsupported or malformed image file."""


def _to_bytes(canvas: np.ndarray) -> np.ndarray:
    return np.clip(np.round(canvas * 255.0), 0, 255).astype(np.uint8)


def _from_bytes(raw: np.ndarray) -> np.ndarray:
    return raw.astype(np.float64) / 255.0


def _read_ppm(path: Path) -> np.ndarray:
    try:
        blob = path.read_bytes()
    except OSError as exc:
        raise ImageIOError(f"cannot read {path}: {exc}") from exc
    # Header: magic, width, height, maxval as whitespace/comment-separated tokens.
    tokens = []
    pos = 0
    while len(tokens) < 4 and pos < len(blob):
        if blob[pos : pos + 1].isspace():
            pos += 1
        elif blob[pos : pos + 1] == b"#":
            while pos < len(blob) and blob[pos : pos + 1] != b"\n":
                pos += 1
        else:
            start = pos
            while pos < len(blob) and not blob[pos : pos + 1].isspace():
                pos += 1
            tokens.append(blob[start:pos])
    if len(tokens) < 4 or tokens[0] != b"P6":
        raise ImageIOError(f"{path}: malformed PPM header")
    try:
        width, height, maxval = int(tokens[1]), int(tokens[2]), int(tokens[3])
    except ValueError as exc:
        raise ImageIOError(f"{path}: malformed PPM header") from exc
    if maxval != 255 or width < 1 or height < 1:
        raise ImageIOError(f"{path}: unsupported PPM (need maxval 255)")
    pos += 1  # single whitespace after maxval
    data = blob[pos : pos + height * width * 3]
    if len(data) != height * width * 3:
        raise ImageIOError(f"{path}: truncated PPM pixel data")
    raw = np.frombuffer(data, dtype=np.uint8).reshape(height, width, 3)
    return _from_bytes(raw)


def _write_ppm(canvas: np.ndarray, path: Path) -> None:
    raw = _to_bytes(canvas)
    header = f"P6\n{canvas.shape[1]} {canvas.shape[0]}\n255\n".encode("ascii")
    try:
        path.write_bytes(header + raw.tobytes())
    except OSError as exc:
        raise ImageIOError(f"cannot write {path}: {exc}") from exc


def load_image(path) -> np.ndarray:
    """Load a PPM or PNG file as an H x W x 3 float canvas."""
    path = Path(path)
    if path.suffix.lower() == ".ppm":
        return _read_ppm(path)
    try:
        with Image.open(path) as img:
            raw = np.asarray(img.convert("RGB"))
    except (OSError, ValueError) as exc:
        raise ImageIOError(f"cannot read {path}: {exc}") from exc
    return _from_bytes(raw)


def save_image(canvas: np.ndarray, path) -> None:
    path = Path(path)
    if path.suffix.lower() == ".ppm":
        _write_ppm(canvas, path)
        return
    try:
        Image.fromarray(_to_bytes(canvas), mode="RGB").save(path)
    except (OSError, ValueError, KeyError) as exc:
        raise ImageIOError(f"cannot write {path}: {exc}") from exc
