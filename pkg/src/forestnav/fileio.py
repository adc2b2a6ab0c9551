"""Image and table emission: PFM depth maps, PGM intensity frames, CSV."""

from __future__ import annotations

import numpy as np


def write_pfm(path, image: np.ndarray):
    """Grayscale PFM ("Pf"), little-endian, bottom-to-top row order.

    Invalid pixels are expected to already be encoded as 0.0.
    """
    data = np.asarray(image, dtype="<f4")
    if data.ndim != 2:
        raise ValueError("PFM writer expects a 2-D grayscale image")
    with open(path, "wb") as f:
        f.write(b"Pf\n")
        f.write(f"{data.shape[1]} {data.shape[0]}\n".encode())
        f.write(b"-1.0\n")
        f.write(np.flipud(data).tobytes())


def read_pfm(path) -> np.ndarray:
    with open(path, "rb") as f:
        if f.readline().strip() != b"Pf":
            raise ValueError("not a grayscale PFM file")
        w, h = (int(x) for x in f.readline().split())
        scale = float(f.readline())
        dtype = "<f4" if scale < 0 else ">f4"
        data = np.frombuffer(f.read(4 * w * h), dtype=dtype).reshape(h, w)
    return np.flipud(data).astype(float)


def write_pgm(path, image: np.ndarray):
    """8-bit binary PGM (P5) from a [0, 1] intensity image."""
    data = np.clip(np.asarray(image) * 255.0 + 0.5, 0, 255).astype(np.uint8)
    with open(path, "wb") as f:
        f.write(f"P5\n{data.shape[1]} {data.shape[0]}\n255\n".encode())
        f.write(data.tobytes())


def read_pgm(path) -> np.ndarray:
    with open(path, "rb") as f:
        magic = f.readline().strip()
        if magic != b"P5":
            raise ValueError("not a binary PGM file")
        line = f.readline()
        while line.startswith(b"#"):
            line = f.readline()
        w, h = (int(x) for x in line.split())
        maxval = int(f.readline())
        data = np.frombuffer(f.read(w * h), dtype=np.uint8).reshape(h, w)
    return data.astype(float) / maxval
