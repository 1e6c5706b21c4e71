"""Grayscale image files: binary PGM (P5) and PNG.

Images are handled as 2-D numpy arrays indexed ``[row, col]`` (height first).
"""
from __future__ import annotations

import os
import re

import numpy as np
from PIL import Image

_PGM_HEADER = re.compile(rb"^P5\s+(?:#[^\n]*\n\s*)*(\d+)\s+(?:#[^\n]*\n\s*)*(\d+)\s+(?:#[^\n]*\n\s*)*(\d+)\s")


def write_pgm(path, img, maxval=255):
    """Write a [0,1] float image as binary PGM, quantized to ``maxval`` levels."""
    if maxval not in (255, 65535):
        raise ValueError(f"maxval must be 255 or 65535, got {maxval}")
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 2 or img.size == 0:
        raise ValueError(f"expected a non-empty 2-D image, got shape {img.shape}")
    q = np.rint(np.clip(img, 0.0, 1.0) * maxval)
    data = q.astype(">u2" if maxval > 255 else np.uint8).tobytes()
    h, w = img.shape
    with open(path, "wb") as fh:
        fh.write(b"P5\n%d %d\n%d\n" % (w, h, maxval))
        fh.write(data)


def read_pgm(path, with_maxval=False):
    """Read a binary PGM into raw integer sample values (float64 array).

    With ``with_maxval`` the header's maximum sample value is returned too.
    """
    with open(path, "rb") as fh:
        blob = fh.read()
    m = _PGM_HEADER.match(blob)
    if m is None:
        raise ValueError(f"{path}: not a binary PGM (P5) file")
    w, h, maxval = (int(g) for g in m.groups())
    dtype = np.dtype(">u2") if maxval > 255 else np.dtype(np.uint8)
    body = blob[m.end():m.end() + w * h * dtype.itemsize]
    if len(body) != w * h * dtype.itemsize:
        raise ValueError(f"{path}: truncated PGM payload")
    img = np.frombuffer(body, dtype=dtype).reshape(h, w).astype(np.float64)
    return (img, maxval) if with_maxval else img


def read_image(path):
    """Load a grayscale image as raw sample values; PGM natively, PNG via Pillow."""
    path = os.fspath(path)
    if not os.path.isfile(path):
        raise FileNotFoundError(f"image not found: {path}")
    if path.lower().endswith((".pgm", ".pnm")):
        return read_pgm(path)
    with Image.open(path) as im:
        if im.mode not in ("L", "I;16", "I;16B", "I"):
            im = im.convert("L")
        return np.asarray(im, dtype=np.float64)


def read_unit_image(path):
    """Load an already-conditioned image, scaling samples by the format maximum into [0,1]."""
    path = os.fspath(path)
    if path.lower().endswith((".pgm", ".pnm")):
        if not os.path.isfile(path):
            raise FileNotFoundError(f"image not found: {path}")
        img, maxval = read_pgm(path, with_maxval=True)
        return img / maxval
    img = read_image(path)
    with Image.open(path) as im:
        deep = im.mode.startswith("I")
    return img / (65535.0 if deep else 255.0)
