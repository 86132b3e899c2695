"""Hand-crafted facial texture features.

Image descriptors (LBP, LPQ, BSIF) run on 64x64x3 HSV frames, block-wise
per channel, and the per-frame histograms are averaged over the sequence.
LBP-TOP runs on grayscale 224x224 frame volumes over the XY, XT, YT planes.

Conventions shared by all binary codes here:
  - neighbor >= center (or coefficient strictly > 0) sets the bit;
    exact-zero ties resolve to 0,
  - circular P=8 R=1 neighbors are sampled with bilinear interpolation,
  - a 1-pixel spatial margin (window//2 for LPQ/BSIF) and, for LBP-TOP,
    a 1-frame temporal margin are excluded from coding.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from .core import FeatureVector
from .errors import DataError, DimensionError

LBP_DIM = 2832       # 59 bins x 16 blocks x 3 channels
LPQ_DIM = 3072       # 256 bins x 4 blocks x 3 channels
BSIF_DIM = 3072      # 256 bins x 4 blocks x 3 channels
LBPTOP_DIM = 2832    # 59 bins x 3 planes x 16 block volumes


def rgb_to_hsv(image: np.ndarray) -> np.ndarray:
    """Hexcone RGB -> HSV, all three channels in [0, 1]; achromatic H = 0."""
    img = np.asarray(image)
    if img.ndim != 3 or img.shape[2] != 3:
        raise DimensionError("rgb_to_hsv expects an HxWx3 image")
    rgb = img.astype(np.float64) / 255.0
    r, g, b = rgb[..., 0], rgb[..., 1], rgb[..., 2]
    mx = rgb.max(axis=2)
    mn = rgb.min(axis=2)
    delta = mx - mn
    chromatic = delta > 0
    safe = np.where(chromatic, delta, 1.0)
    h = np.zeros_like(mx)
    is_r = chromatic & (mx == r)
    is_g = chromatic & ~is_r & (mx == g)
    is_b = chromatic & ~is_r & ~is_g
    h[is_r] = ((g - b)[is_r] / safe[is_r]) % 6.0
    h[is_g] = (b - r)[is_g] / safe[is_g] + 2.0
    h[is_b] = (r - g)[is_b] / safe[is_b] + 4.0
    h /= 6.0
    s = np.where(mx > 0, delta / np.where(mx > 0, mx, 1.0), 0.0)
    return np.clip(np.stack([h, s, mx], axis=2), 0.0, 1.0)


def uniform_lbp_table(p: int = 8) -> np.ndarray:
    """Map each 2^p pattern to its uniform bin; non-uniform patterns share the last bin."""
    n = 1 << p
    table = np.empty(n, dtype=np.int64)
    nxt = 0
    for code in range(n):
        bits = [(code >> i) & 1 for i in range(p)]
        transitions = sum(bits[i] != bits[(i + 1) % p] for i in range(p))
        if transitions <= 2:
            table[code] = nxt
            nxt += 1
        else:
            table[code] = -1
    table[table == -1] = nxt  # miscellaneous bin
    return table


_U2_TABLE = uniform_lbp_table(8)
N_UNIFORM_BINS = int(_U2_TABLE.max()) + 1  # 59


def _interp_shift2d(img: np.ndarray, dy: float, dx: float) -> np.ndarray:
    """Bilinearly sampled img[y+dy, x+dx] on the 1-pixel-margin interior."""
    h, w = img.shape[-2:]
    y0, x0 = int(np.floor(dy)), int(np.floor(dx))
    fy, fx = dy - y0, dx - x0

    def shift(sy, sx):
        return img[..., 1 + sy : h - 1 + sy, 1 + sx : w - 1 + sx]

    if fy < 1e-12 and fx < 1e-12:
        return shift(y0, x0).astype(np.float64)
    return (
        (1 - fy) * (1 - fx) * shift(y0, x0)
        + (1 - fy) * fx * shift(y0, x0 + 1)
        + fy * (1 - fx) * shift(y0 + 1, x0)
        + fy * fx * shift(y0 + 1, x0 + 1)
    )


def lbp_code_map(img: np.ndarray, p: int = 8, r: float = 1.0) -> np.ndarray:
    """P=8 R=1 circular LBP codes on the interior; bilinear off-grid sampling."""
    img = np.asarray(img, dtype=np.float64)
    center = img[..., 1:-1, 1:-1]
    codes = np.zeros(center.shape, dtype=np.int64)
    for k in range(p):
        theta = 2.0 * np.pi * k / p
        dy, dx = r * np.sin(theta), r * np.cos(theta)
        neighbor = _interp_shift2d(img, dy, dx)
        codes |= (neighbor >= center - 1e-12).astype(np.int64) << k
    return codes


def _block_histograms(
    codes: np.ndarray, margin: int, full_size: int, block: int, n_bins: int
) -> np.ndarray:
    """Histograms over non-overlapping blocks of the full image grid.

    ``codes`` covers only the margin-excluded interior; each coded pixel is
    binned by its position in the original image.
    """
    nb = full_size // block
    out = np.zeros((nb * nb, n_bins), dtype=np.float64)
    h, w = codes.shape
    rows = (np.arange(h) + margin) // block
    cols = (np.arange(w) + margin) // block
    block_idx = rows[:, None] * nb + cols[None, :]
    flat = block_idx.ravel() * n_bins + codes.ravel()
    counts = np.bincount(flat, minlength=nb * nb * n_bins)
    out[:] = counts.reshape(nb * nb, n_bins)
    return out


def _check_hsv_frames(frames: np.ndarray) -> np.ndarray:
    f = np.asarray(frames, dtype=np.float64)
    if f.ndim == 3:
        f = f[None]
    if f.ndim != 4 or f.shape[1:] != (64, 64, 3):
        raise DimensionError(f"expected (T, 64, 64, 3) HSV frames, got {f.shape}")
    return f


def lbp_features(frames: np.ndarray) -> FeatureVector:
    """Uniform LBP over 16x16 blocks per HSV channel, averaged over frames; dim 2832."""
    f = _check_hsv_frames(frames)
    per_frame = []
    for frame in f:
        parts = []
        for ch in range(3):
            codes = _U2_TABLE[lbp_code_map(frame[:, :, ch])]
            parts.append(
                _block_histograms(codes, 1, 64, 16, N_UNIFORM_BINS).ravel()
            )
        per_frame.append(np.concatenate(parts))
    return FeatureVector(np.mean(per_frame, axis=0), "lbp", LBP_DIM)


def _lpq_kernels(window: int = 7, a: float = 1.0 / 7.0):
    n = np.arange(window) - window // 2
    w1 = np.exp(-2j * np.pi * a * n)
    ones = np.ones(window)
    # frequency points (a,0), (0,a), (a,a), (a,-a); outer(y, x)
    return [
        np.outer(ones, w1),
        np.outer(w1, ones),
        np.outer(w1, w1),
        np.outer(np.conj(w1), w1),
    ]


def lpq_code_map(img: np.ndarray, window: int = 7, a: float = 1.0 / 7.0) -> np.ndarray:
    """8-bit LPQ codes from signs of 4 low-frequency local Fourier coefficients."""
    img = np.asarray(img, dtype=np.float64)
    windows = np.lib.stride_tricks.sliding_window_view(img, (window, window))
    codes = np.zeros(windows.shape[:2], dtype=np.int64)
    for i, kernel in enumerate(_lpq_kernels(window, a)):
        coeff = np.tensordot(windows, kernel, axes=([2, 3], [0, 1]))
        codes |= (coeff.real > 0).astype(np.int64) << (2 * i)
        codes |= (coeff.imag > 0).astype(np.int64) << (2 * i + 1)
    return codes


def lpq_features(frames: np.ndarray) -> FeatureVector:
    """LPQ codes, 256-bin histograms over 32x32 blocks per channel; dim 3072."""
    f = _check_hsv_frames(frames)
    margin = 3
    per_frame = []
    for frame in f:
        parts = []
        for ch in range(3):
            codes = lpq_code_map(frame[:, :, ch])
            parts.append(_block_histograms(codes, margin, 64, 32, 256).ravel())
        per_frame.append(np.concatenate(parts))
    return FeatureVector(np.mean(per_frame, axis=0), "lpq", LPQ_DIM)


@dataclass(frozen=True)
class BsifFilterBank:
    """8 zero-mean real filters of odd size s; one filter per code bit."""

    filters: np.ndarray  # (8, s, s)

    def __post_init__(self):
        f = np.asarray(self.filters, dtype=np.float64)
        object.__setattr__(self, "filters", f)
        if f.ndim != 3 or f.shape[0] != 8 or f.shape[1] != f.shape[2]:
            raise DataError(f"filter bank must be (8, s, s), got {f.shape}")
        if f.shape[1] % 2 == 0:
            raise DataError("filter size must be odd")
        if np.abs(f.mean(axis=(1, 2))).max() > 1e-9:
            raise DataError("filters must be zero-mean")

    @property
    def size(self) -> int:
        return self.filters.shape[1]


def save_filter_bank(bank: BsifFilterBank, path) -> None:
    with Path(path).open("wb") as fh:
        fh.write(struct.pack("<II", 8, bank.size))
        fh.write(bank.filters.astype("<f8").tobytes())


def load_filter_bank(path) -> BsifFilterBank:
    data = Path(path).read_bytes()
    if len(data) < 8:
        raise DataError(f"{path}: truncated filter bank file")
    count, size = struct.unpack_from("<II", data, 0)
    if count != 8:
        raise DataError(f"{path}: expected 8 filters, header says {count}")
    need = 8 + count * size * size * 8
    if len(data) < need:
        raise DataError(f"{path}: expected {need} bytes, got {len(data)}")
    filters = np.frombuffer(data, dtype="<f8", count=count * size * size, offset=8)
    return BsifFilterBank(filters.reshape(count, size, size).copy())


def default_filter_bank() -> BsifFilterBank:
    """The bundled 8-filter 9x9 bank."""
    ref = resources.files("kinverify").joinpath("data/bsif_8x9x9.bin")
    with resources.as_file(ref) as path:
        return load_filter_bank(path)


def bsif_code_map(img: np.ndarray, bank: BsifFilterBank) -> np.ndarray:
    """8-bit codes from filter responses thresholded strictly above 0."""
    img = np.asarray(img, dtype=np.float64)
    s = bank.size
    windows = np.lib.stride_tricks.sliding_window_view(img, (s, s))
    codes = np.zeros(windows.shape[:2], dtype=np.int64)
    for i in range(8):
        resp = np.tensordot(windows, bank.filters[i], axes=([2, 3], [0, 1]))
        codes |= (resp > 0).astype(np.int64) << i
    return codes


def bsif_features(frames: np.ndarray, bank: BsifFilterBank | None = None) -> FeatureVector:
    """BSIF codes, 256-bin histograms over 32x32 blocks per channel; dim 3072."""
    f = _check_hsv_frames(frames)
    if bank is None:
        bank = default_filter_bank()
    margin = bank.size // 2
    per_frame = []
    for frame in f:
        parts = []
        for ch in range(3):
            codes = bsif_code_map(frame[:, :, ch], bank)
            parts.append(_block_histograms(codes, margin, 64, 32, 256).ravel())
        per_frame.append(np.concatenate(parts))
    return FeatureVector(np.mean(per_frame, axis=0), "bsif", BSIF_DIM)


def _interp_shift_axes(vol: np.ndarray, axis_a: int, axis_b: int, da: float, db: float):
    """Bilinearly sampled volume shifted by (da, db) along two axes.

    Operates on the 1-voxel-margin interior of all three axes.
    """
    a0, b0 = int(np.floor(da)), int(np.floor(db))
    fa, fb = da - a0, db - b0

    def shift(sa, sb):
        idx = []
        for ax in range(3):
            off = sa if ax == axis_a else sb if ax == axis_b else 0
            idx.append(slice(1 + off, vol.shape[ax] - 1 + off))
        return vol[tuple(idx)]

    if fa < 1e-12 and fb < 1e-12:
        return shift(a0, b0).astype(np.float64)
    return (
        (1 - fa) * (1 - fb) * shift(a0, b0)
        + (1 - fa) * fb * shift(a0, b0 + 1)
        + fa * (1 - fb) * shift(a0 + 1, b0)
        + fa * fb * shift(a0 + 1, b0 + 1)
    )


def lbptop_code_maps(volume: np.ndarray, p: int = 8, r: float = 1.0):
    """Uniform-mapped LBP codes on the XY, XT and YT planes of a (T,H,W) volume.

    Codes cover the interior voxels (1-frame temporal and 1-pixel spatial
    margins excluded) for all three planes.
    """
    vol = np.asarray(volume, dtype=np.float64)
    if vol.ndim != 3:
        raise DimensionError("expected a (T, H, W) grayscale volume")
    if vol.shape[0] < 3:
        raise DimensionError(f"LBP-TOP needs at least 3 frames, got {vol.shape[0]}")
    center = vol[1:-1, 1:-1, 1:-1]
    # plane -> (axis of cos term, axis of sin term); axes are (T, Y, X) = (0, 1, 2)
    planes = {"XY": (2, 1), "XT": (2, 0), "YT": (1, 0)}
    maps = {}
    for name, (ax_cos, ax_sin) in planes.items():
        codes = np.zeros(center.shape, dtype=np.int64)
        for k in range(p):
            theta = 2.0 * np.pi * k / p
            da, db = r * np.cos(theta), r * np.sin(theta)
            neighbor = _interp_shift_axes(vol, ax_cos, ax_sin, da, db)
            codes |= (neighbor >= center - 1e-12).astype(np.int64) << k
        maps[name] = _U2_TABLE[codes]
    return maps


def lbptop_features(frames: np.ndarray) -> FeatureVector:
    """LBP-TOP over 4x4 block volumes of 56x56 on 224x224 gray frames; dim 2832.

    Layout: 16 block volumes (row-major), each contributing XY, XT, YT
    59-bin histograms in that order.
    """
    vol = np.asarray(frames, dtype=np.float64)
    if vol.ndim != 3 or vol.shape[1:] != (224, 224):
        raise DimensionError(f"expected (T, 224, 224) gray frames, got {vol.shape}")
    maps = lbptop_code_maps(vol)
    block = 56
    nb = 224 // block
    t, h, w = next(iter(maps.values())).shape
    rows = (np.arange(h) + 1) // block
    cols = (np.arange(w) + 1) // block
    block_idx = rows[:, None] * nb + cols[None, :]
    parts = np.zeros((nb * nb, 3, N_UNIFORM_BINS), dtype=np.float64)
    for pi, name in enumerate(("XY", "XT", "YT")):
        flat = (block_idx[None].repeat(t, axis=0).ravel() * N_UNIFORM_BINS
                + maps[name].ravel())
        counts = np.bincount(flat, minlength=nb * nb * N_UNIFORM_BINS)
        parts[:, pi, :] = counts.reshape(nb * nb, N_UNIFORM_BINS)
    return FeatureVector(parts.ravel(), "lbptop", LBPTOP_DIM)


def average_frames(per_frame: list[FeatureVector]) -> FeatureVector:
    """Componentwise arithmetic mean of equal-dim feature vectors."""
    if not per_frame:
        raise DimensionError("cannot average an empty feature list")
    dim = per_frame[0].dim
    if any(f.dim != dim for f in per_frame):
        raise DimensionError("feature vectors have mismatching dims")
    stacked = np.stack([f.values for f in per_frame])
    return FeatureVector(stacked.mean(axis=0), per_frame[0].source, dim)
