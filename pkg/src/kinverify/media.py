"""Media ingestion: PCM16 WAV files, binary PGM/PPM frames, bilinear resize."""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DataError, DimensionError


@dataclass(frozen=True)
class Waveform:
    """Audio samples in [-1, 1] at a fixed sample rate."""

    samples: np.ndarray  # (n,) mono or (n, 2) stereo
    sample_rate: int

    def __post_init__(self):
        s = np.asarray(self.samples, dtype=np.float64)
        object.__setattr__(self, "samples", s)
        if s.size == 0:
            raise DataError("empty waveform")
        if self.sample_rate not in (16000, 44100):
            raise DataError(f"unsupported sample rate {self.sample_rate}")

    @property
    def n_channels(self) -> int:
        return 1 if self.samples.ndim == 1 else self.samples.shape[1]

    @property
    def duration(self) -> float:
        return self.samples.shape[0] / self.sample_rate


def read_wav(path) -> Waveform:
    """Read a RIFF/WAVE PCM 16-bit LE file; samples mapped to [-1,1] by /32768."""
    path = Path(path)
    data = path.read_bytes()

    def fail(offset, msg):
        raise DataError(f"{path}: byte {offset}: {msg}")

    if len(data) < 12 or data[0:4] != b"RIFF":
        fail(0, "missing RIFF magic")
    if data[8:12] != b"WAVE":
        fail(8, "missing WAVE form type")
    pos = 12
    fmt = None
    pcm = None
    while pos + 8 <= len(data):
        cid = data[pos : pos + 4]
        (size,) = struct.unpack_from("<I", data, pos + 4)
        body = pos + 8
        if body + size > len(data):
            fail(pos + 4, f"chunk {cid!r} overruns file")
        if cid == b"fmt ":
            if size < 16:
                fail(pos + 4, "fmt chunk too short")
            fmt = struct.unpack_from("<HHIIHH", data, body)
        elif cid == b"data":
            pcm = data[body : body + size]
        pos = body + size + (size & 1)
    if fmt is None:
        fail(12, "no fmt chunk")
    if pcm is None:
        fail(12, "no data chunk")
    audio_format, channels, rate, _, _, bits = fmt
    if audio_format != 1 or bits != 16:
        raise DataError(f"{path}: only PCM16 supported (format {audio_format}, {bits} bits)")
    if channels not in (1, 2):
        raise DataError(f"{path}: {channels} channels unsupported")
    raw = np.frombuffer(pcm[: len(pcm) - len(pcm) % (2 * channels)], dtype="<i2")
    samples = raw.astype(np.float64) / 32768.0
    if channels == 2:
        samples = samples.reshape(-1, 2)
    return Waveform(samples, rate)


def write_wav(wave: Waveform, path) -> None:
    samples = np.atleast_2d(wave.samples.T).T  # (n, ch)
    pcm = np.clip(np.round(samples * 32768.0), -32768, 32767).astype("<i2")
    channels = pcm.shape[1]
    body = pcm.tobytes()
    byte_rate = wave.sample_rate * channels * 2
    header = b"RIFF" + struct.pack("<I", 36 + len(body)) + b"WAVE"
    header += b"fmt " + struct.pack(
        "<IHHIIHH", 16, 1, channels, wave.sample_rate, byte_rate, channels * 2, 16
    )
    header += b"data" + struct.pack("<I", len(body))
    Path(path).write_bytes(header + body)


def _read_pnm_header(data: bytes, path):
    """Parse a binary PGM/PPM header; returns (magic, w, h, maxval, offset)."""
    tokens = []
    pos = 0
    while len(tokens) < 4:
        if pos >= len(data):
            raise DataError(f"{path}: truncated PNM header")
        c = data[pos : pos + 1]
        if c == b"#":
            while pos < len(data) and data[pos : pos + 1] != b"\n":
                pos += 1
        elif c.isspace():
            pos += 1
        else:
            start = pos
            while pos < len(data) and not data[pos : pos + 1].isspace():
                pos += 1
            tokens.append(data[start:pos])
    pos += 1  # single whitespace after maxval
    magic = tokens[0].decode("ascii", "replace")
    if magic not in ("P5", "P6"):
        raise DataError(f"{path}: unsupported PNM magic {magic!r}")
    try:
        w, h, maxval = (int(t) for t in tokens[1:4])
    except ValueError:
        raise DataError(f"{path}: non-numeric PNM header field")
    if maxval != 255:
        raise DataError(f"{path}: only 8-bit PNM supported (maxval {maxval})")
    return magic, w, h, maxval, pos


def read_image(path) -> np.ndarray:
    """Read a binary PGM (P5) or PPM (P6) file as an HxWx3 uint8 array."""
    path = Path(path)
    data = path.read_bytes()
    magic, w, h, _, offset = _read_pnm_header(data, path)
    channels = 3 if magic == "P6" else 1
    need = w * h * channels
    body = data[offset : offset + need]
    if len(body) < need:
        raise DataError(f"{path}: expected {need} pixel bytes, got {len(body)}")
    img = np.frombuffer(body, dtype=np.uint8).reshape(h, w, channels)
    if channels == 1:
        img = np.repeat(img, 3, axis=2)
    return img


def write_image(img: np.ndarray, path) -> None:
    img = np.asarray(img)
    if img.dtype != np.uint8 or img.ndim != 3 or img.shape[2] != 3:
        raise DimensionError("write_image expects HxWx3 uint8")
    h, w = img.shape[:2]
    Path(path).write_bytes(b"P6\n%d %d\n255\n" % (w, h) + img.tobytes())


def resize_bilinear(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear resize with pixel-center alignment; channels preserved."""
    img = np.asarray(img, dtype=np.float64)
    squeeze = img.ndim == 2
    if squeeze:
        img = img[:, :, None]
    h, w = img.shape[:2]
    if (h, w) == (out_h, out_w):
        out = img.copy()
    else:
        ys = (np.arange(out_h) + 0.5) * h / out_h - 0.5
        xs = (np.arange(out_w) + 0.5) * w / out_w - 0.5
        y0 = np.clip(np.floor(ys).astype(int), 0, h - 1)
        x0 = np.clip(np.floor(xs).astype(int), 0, w - 1)
        y1 = np.minimum(y0 + 1, h - 1)
        x1 = np.minimum(x0 + 1, w - 1)
        wy = np.clip(ys - y0, 0.0, 1.0)[:, None, None]
        wx = np.clip(xs - x0, 0.0, 1.0)[None, :, None]
        top = img[y0][:, x0] * (1 - wx) + img[y0][:, x1] * wx
        bot = img[y1][:, x0] * (1 - wx) + img[y1][:, x1] * wx
        out = top * (1 - wy) + bot * wy
    return out[:, :, 0] if squeeze else out


def read_frames(directory, size: int | None = None) -> np.ndarray:
    """Read all PGM/PPM files in a directory as one (T, H, W, 3) uint8 stack.

    Files are taken in lexicographic filename order. If ``size`` is given,
    every frame is bilinearly resized to size x size.
    """
    directory = Path(directory)
    files = sorted(
        p for p in directory.iterdir() if p.suffix.lower() in (".pgm", ".ppm")
    )
    if not files:
        raise DataError(f"{directory}: no PGM/PPM frames found")
    frames = []
    shape = None
    for p in files:
        img = read_image(p)
        if size is not None:
            img = np.clip(
                np.round(resize_bilinear(img, size, size)), 0, 255
            ).astype(np.uint8)
        if shape is None:
            shape = img.shape
        elif img.shape != shape:
            raise DataError(f"{p}: frame size {img.shape} differs from {shape}")
        frames.append(img)
    return np.stack(frames)


def to_gray(frames: np.ndarray) -> np.ndarray:
    """Luma conversion 0.299 R + 0.587 G + 0.114 B, float64 output."""
    f = np.asarray(frames, dtype=np.float64)
    return f[..., 0] * 0.299 + f[..., 1] * 0.587 + f[..., 2] * 0.114
