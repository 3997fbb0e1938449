"""Translational grasp-error estimation from underside images.

A query image of the grasped part's bottom face is compared against a
reference image with normalized cross-correlation; the argmax shift gives
the displacement with respect to the reference grasp pose, which converts
to a goal correction. Both images are mean-centered; the normalization
makes the surface invariant to positive rescaling of the intensities.

Shift convention: a peak at (dx, dy) means query(x, y) = reference(x - dx,
y - dy), i.e. the content moved dx columns right and dy rows down.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np


@dataclass
class GrayImage:
    """Row-major grayscale image with intensities in [0, 1]."""

    pixels: np.ndarray

    def __post_init__(self):
        self.pixels = np.asarray(self.pixels, dtype=np.float64)
        if self.pixels.ndim != 2 or min(self.pixels.shape) < 1:
            raise ValueError("image must be a 2-D array with positive extent")
        if self.pixels.min() < 0.0 or self.pixels.max() > 1.0:
            raise ValueError("intensities must lie in [0, 1]")

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]


@dataclass(frozen=True)
class PixelOffset:
    dx: int
    dy: int
    score: float


def _centered(img: GrayImage) -> np.ndarray:
    data = img.pixels - img.pixels.mean()
    if np.linalg.norm(data) == 0.0:
        raise ValueError("constant image has no correlation structure")
    return data


def _check_pair(reference: GrayImage, query: GrayImage) -> None:
    if reference.pixels.shape != query.pixels.shape:
        raise ValueError(
            f"image dimensions differ: {reference.pixels.shape} vs {query.pixels.shape}")


def cross_correlate(reference: GrayImage, query: GrayImage,
                    border: str = "zero", method: str = "fft") -> np.ndarray:
    """Normalized cross-correlation surface over all integer shifts.

    The surface has shape (2H-1, 2W-1); entry [dy + H - 1, dx + W - 1] holds
    the correlation at shift (dx, dy). ``border="zero"`` pads with zeros;
    ``border="cyclic"`` wraps, making the surface periodic. The direct
    method is the spatial-domain reference; the transform-based path matches
    it to tight tolerance and is the default.
    """
    _check_pair(reference, query)
    if border not in ("zero", "cyclic"):
        raise ValueError(f"unknown border mode {border!r}")
    if method not in ("fft", "direct"):
        raise ValueError(f"unknown method {method!r}")
    ref0 = _centered(reference)
    qry0 = _centered(query)
    denom = np.linalg.norm(ref0) * np.linalg.norm(qry0)
    if method == "fft":
        raw = _correlate_fft(ref0, qry0, border)
    else:
        raw = _correlate_direct(ref0, qry0, border)
    return raw / denom


def _correlate_fft(ref0: np.ndarray, qry0: np.ndarray, border: str) -> np.ndarray:
    h, w = ref0.shape
    if border == "zero":
        ph, pw = 2 * h - 1, 2 * w - 1
        fr = np.fft.fft2(ref0, s=(ph, pw))
        fq = np.fft.fft2(qry0, s=(ph, pw))
        circ = np.fft.ifft2(np.conj(fr) * fq).real
        return np.roll(circ, (h - 1, w - 1), axis=(0, 1))
    circ = np.fft.ifft2(np.conj(np.fft.fft2(ref0)) * np.fft.fft2(qry0)).real
    dys = np.arange(-(h - 1), h) % h
    dxs = np.arange(-(w - 1), w) % w
    return circ[np.ix_(dys, dxs)]


def _correlate_direct(ref0: np.ndarray, qry0: np.ndarray, border: str) -> np.ndarray:
    h, w = ref0.shape
    out = np.zeros((2 * h - 1, 2 * w - 1))
    for dy in range(-(h - 1), h):
        for dx in range(-(w - 1), w):
            if border == "cyclic":
                shifted = np.roll(qry0, (-dy, -dx), axis=(0, 1))
                out[dy + h - 1, dx + w - 1] = float((ref0 * shifted).sum())
            else:
                y0, y1 = max(0, -dy), min(h, h - dy)
                x0, x1 = max(0, -dx), min(w, w - dx)
                if y0 >= y1 or x0 >= x1:
                    continue
                out[dy + h - 1, dx + w - 1] = float(
                    (ref0[y0:y1, x0:x1] * qry0[y0 + dy:y1 + dy, x0 + dx:x1 + dx]).sum())
    return out


def surface_argmax(surface: np.ndarray, height: int, width: int) -> PixelOffset:
    """Peak shift; ties break toward the smallest magnitude, then (dx, dy)."""
    peak = surface.max()
    ys, xs = np.nonzero(surface == peak)
    candidates = sorted(
        (int(x) - (width - 1), int(y) - (height - 1)) for y, x in zip(ys, xs)
    )
    best = min(candidates, key=lambda c: (c[0] ** 2 + c[1] ** 2, c[0], c[1]))
    return PixelOffset(dx=best[0], dy=best[1], score=float(peak))


def estimate_offset(reference: GrayImage, query: GrayImage, mm_per_pixel: float,
                    border: str = "zero", method: str = "fft"):
    """Peak correlation shift and the metric grasp offset in meters."""
    if mm_per_pixel <= 0.0:
        raise ValueError("mm_per_pixel must be positive")
    surface = cross_correlate(reference, query, border=border, method=method)
    off = surface_argmax(surface, reference.height, reference.width)
    metric = np.array([off.dx, off.dy], dtype=np.float64) * mm_per_pixel * 1e-3
    return off, metric


def adjust_goal(assumed_goal: np.ndarray, metric_offset: np.ndarray) -> np.ndarray:
    """A part displaced +d in the gripper must target a goal shifted -d."""
    return np.asarray(assumed_goal, dtype=np.float64) - np.asarray(metric_offset)


def shift_image(img: GrayImage, dx: int, dy: int) -> GrayImage:
    """Translate by whole pixels with zero fill."""
    h, w = img.pixels.shape
    out = np.zeros_like(img.pixels)
    ys0, ys1 = max(0, dy), min(h, h + dy)
    xs0, xs1 = max(0, dx), min(w, w + dx)
    if ys0 < ys1 and xs0 < xs1:
        out[ys0:ys1, xs0:xs1] = img.pixels[ys0 - dy:ys1 - dy, xs0 - dx:xs1 - dx]
    return GrayImage(out)


def textured_image(rng: np.random.Generator, height: int = 64,
                   width: int = 64) -> GrayImage:
    """Synthetic high-texture part underside."""
    return GrayImage(rng.uniform(0.0, 1.0, size=(height, width)))


def read_pgm(path) -> GrayImage:
    """Read portable graymaps, both ASCII (P2) and binary (P5)."""
    data = Path(path).read_bytes()
    tokens: list[bytes] = []
    i = 0
    while len(tokens) < 4:
        while i < len(data) and data[i:i + 1].isspace():
            i += 1
        if i < len(data) and data[i:i + 1] == b"#":
            while i < len(data) and data[i] != 0x0A:
                i += 1
            continue
        start = i
        while i < len(data) and not data[i:i + 1].isspace():
            i += 1
        if start == i:
            raise ValueError("truncated PGM header")
        tokens.append(data[start:i])
    magic = tokens[0].decode("ascii")
    width, height, maxval = (int(t) for t in tokens[1:4])
    if magic not in ("P2", "P5"):
        raise ValueError(f"unsupported graymap magic {magic!r}")
    if not 0 < maxval <= 65535:
        raise ValueError(f"bad maxval {maxval}")
    if magic == "P2":
        values = np.array(data[i:].split(), dtype=np.float64)
    else:
        i += 1  # single whitespace after maxval
        dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
        values = np.frombuffer(data[i:i + width * height * dtype.itemsize],
                               dtype=dtype).astype(np.float64)
    if values.size != width * height:
        raise ValueError(f"expected {width * height} pixels, got {values.size}")
    return GrayImage(values.reshape(height, width) / maxval)


def write_pgm(img: GrayImage, path, maxval: int = 255, binary: bool = False) -> None:
    if not 0 < maxval <= 65535:
        raise ValueError(f"bad maxval {maxval}")
    quant = np.rint(img.pixels * maxval).astype(np.int64)
    header = f"{'P5' if binary else 'P2'}\n{img.width} {img.height}\n{maxval}\n"
    if binary:
        dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
        Path(path).write_bytes(header.encode("ascii") + quant.astype(dtype).tobytes())
    else:
        rows = "\n".join(" ".join(str(v) for v in row) for row in quant)
        Path(path).write_text(header + rows + "\n")
