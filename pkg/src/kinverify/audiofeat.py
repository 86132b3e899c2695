"""Audio front-end: framing, Hamming windowing, MFCCs and log-spectrograms.

Two intentionally different paths: MFCCs are extracted at 44.1 kHz (frame
256, hop 128, 26 mel filters, 12 cepstral coefficients, c0 dropped) for
the GMM/i-vector models; 512x300 log-spectrograms are extracted at 16 kHz
(25 ms window, 10 ms hop, 1024-point FFT) for the voice network.
"""

from __future__ import annotations

import numpy as np
from scipy.fft import dct
from scipy.signal import resample_poly

from .errors import DataError, DimensionError
from .media import Waveform

LOG_FLOOR = 1e-10

SPEC_BINS = 512
SPEC_FRAMES = 300
SPEC_WIN = 400    # 25 ms at 16 kHz
SPEC_HOP = 160    # 10 ms at 16 kHz
SPEC_NFFT = 1024

MFCC_WIN = 256
MFCC_HOP = 128
MFCC_NMEL = 26
MFCC_NCOEF = 12


def hamming_window(n: int) -> np.ndarray:
    """w[k] = 0.54 - 0.46 cos(2 pi k / (n-1)) for k = 0..n-1."""
    if n < 2:
        raise DimensionError(f"window length must be >= 2, got {n}")
    k = np.arange(n)
    return 0.54 - 0.46 * np.cos(2.0 * np.pi * k / (n - 1))


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(n_filters: int, n_fft: int, sample_rate: int) -> np.ndarray:
    """Triangular mel filters over FFT bins 0..n_fft/2, each peaking at 1."""
    n_bins = n_fft // 2 + 1
    mel_pts = np.linspace(0.0, hz_to_mel(sample_rate / 2.0), n_filters + 2)
    hz_pts = mel_to_hz(mel_pts)
    bin_freqs = np.arange(n_bins) * sample_rate / n_fft
    bank = np.zeros((n_filters, n_bins))
    for i in range(n_filters):
        lo, mid, hi = hz_pts[i], hz_pts[i + 1], hz_pts[i + 2]
        up = (bin_freqs - lo) / (mid - lo)
        down = (hi - bin_freqs) / (hi - mid)
        bank[i] = np.clip(np.minimum(up, down), 0.0, None)
    return bank


def frame_signal(samples: np.ndarray, win: int, hop: int, n_frames: int | None = None):
    """Slice a signal into windows of length ``win`` every ``hop`` samples.

    With ``n_frames`` set, exactly that many frames are produced and any
    samples missing at the tail are zero-padded.
    """
    samples = np.asarray(samples, dtype=np.float64)
    if n_frames is None:
        if len(samples) < win:
            raise DataError(f"signal of {len(samples)} samples shorter than one {win}-sample frame")
        n_frames = 1 + (len(samples) - win) // hop
    need = (n_frames - 1) * hop + win
    if need > len(samples):
        samples = np.concatenate([samples, np.zeros(need - len(samples))])
    idx = np.arange(win)[None, :] + hop * np.arange(n_frames)[:, None]
    return samples[idx]


def mfcc(wave: Waveform, pre_emphasis: float | None = None) -> np.ndarray:
    """Per-frame 12-dim MFCCs (c0 dropped) of a 44.1 kHz mono waveform."""
    if wave.sample_rate != 44100:
        raise DataError(f"mfcc expects 44.1 kHz input, got {wave.sample_rate}")
    samples = wave.samples
    if samples.ndim != 1:
        raise DataError("mfcc expects mono input")
    if len(samples) < MFCC_WIN:
        raise DataError(f"signal too short: {len(samples)} < {MFCC_WIN} samples")
    if pre_emphasis:
        samples = np.concatenate([samples[:1], samples[1:] - pre_emphasis * samples[:-1]])
    frames = frame_signal(samples, MFCC_WIN, MFCC_HOP)
    frames = frames * hamming_window(MFCC_WIN)
    spectrum = np.fft.rfft(frames, n=MFCC_WIN, axis=1)
    power = np.abs(spectrum) ** 2
    bank = mel_filterbank(MFCC_NMEL, MFCC_WIN, wave.sample_rate)
    energies = np.log(np.maximum(power @ bank.T, LOG_FLOOR))
    cepstra = dct(energies, type=2, norm="ortho", axis=1)
    return cepstra[:, 1 : MFCC_NCOEF + 1]


def log_spectrogram(wave: Waveform, offset: float = 0.0) -> "Spectrogram":
    """512x300 log-magnitude spectrogram of 3 s of 16 kHz mono audio.

    Frames start every 10 ms from ``offset``; the final windows may run up
    to one window past the 3-second mark and are zero-padded if the signal
    ends first.
    """
    if wave.sample_rate != 16000:
        raise DataError(f"log_spectrogram expects 16 kHz input, got {wave.sample_rate}")
    samples = wave.samples
    if samples.ndim != 1:
        raise DataError("log_spectrogram expects mono input")
    start = int(round(offset * wave.sample_rate))
    if len(samples) - start < SPEC_FRAMES * SPEC_HOP:
        raise DataError(
            f"need at least 3 s of audio past offset, got "
            f"{(len(samples) - start) / wave.sample_rate:.3f} s"
        )
    frames = frame_signal(samples[start:], SPEC_WIN, SPEC_HOP, n_frames=SPEC_FRAMES)
    frames = frames * hamming_window(SPEC_WIN)
    spectrum = np.fft.rfft(frames, n=SPEC_NFFT, axis=1)
    mag = np.abs(spectrum[:, 1 : SPEC_BINS + 1])  # positive-frequency bins 1..512
    bins = np.log(np.maximum(mag, LOG_FLOOR)).T  # (512 freq, 300 time)
    return Spectrogram(bins, normalized=False)


class Spectrogram:
    """512x300 real matrix (frequency rows, time columns)."""

    __slots__ = ("bins", "normalized")

    def __init__(self, bins: np.ndarray, normalized: bool):
        bins = np.asarray(bins, dtype=np.float64)
        if bins.shape != (SPEC_BINS, SPEC_FRAMES):
            raise DimensionError(
                f"spectrogram must be {SPEC_BINS}x{SPEC_FRAMES}, got {bins.shape}"
            )
        self.bins = bins
        self.normalized = normalized


def normalize_per_bin(spec: Spectrogram) -> Spectrogram:
    """Mean/variance normalization per frequency row; constant rows map to zero."""
    x = spec.bins
    mu = x.mean(axis=1, keepdims=True)
    sd = x.std(axis=1, keepdims=True)
    # rows constant up to float rounding would only amplify noise
    ok = sd > 1e-10 * np.maximum(np.abs(mu), 1.0)
    out = np.where(ok, (x - mu) / np.where(ok, sd, 1.0), 0.0)
    return Spectrogram(out, normalized=True)


def to_16k_mono(wave: Waveform) -> Waveform:
    """Average stereo to mono and resample 44.1 kHz to 16 kHz (polyphase sinc)."""
    samples = wave.samples
    if samples.ndim == 2:
        samples = samples.mean(axis=1)
    if wave.sample_rate == 16000:
        return Waveform(samples, 16000)
    if wave.sample_rate != 44100:
        raise DataError(f"unsupported sample rate {wave.sample_rate}")
    resampled = resample_poly(samples, up=160, down=441)
    return Waveform(resampled, 16000)
