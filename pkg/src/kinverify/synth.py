"""Synthetic kin-structured corpus generator.

Each family draws a parent latent vector; the child latent is
alpha * parent + sqrt(1 - alpha^2) * fresh noise, so alpha controls how
much kin pairs share. One latent drives both modalities of a subject:
face frames are rendered as oriented-texture images whose orientations
and spatial frequencies are functions of the latent, and audio as a
harmonic series whose fundamental and formant-like spectral peaks are
functions of the latent. The only kin-independent variation is the
per-modality rendering noise, which is what gives fusion complementary
signal to exploit.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core import RELATION_ROLES, RELATIONS, Recording, Trial, save_manifest, save_trials
from .errors import DataError
from .media import Waveform, write_image, write_wav

LATENT_DIM = 8


@dataclass(frozen=True)
class SynthConfig:
    n_families: int = 10            # families per relation
    relations: tuple[str, ...] = RELATIONS
    kin_correlation: float = 0.85   # alpha
    latent_dim: int = LATENT_DIM
    noise_level: float = 0.08       # rendering noise, both modalities
    seed: int = 0
    n_frames: int = 5
    frame_size: int = 96
    audio_seconds: float = 3.4
    audio_rate: int = 44100

    def __post_init__(self):
        if self.n_families < 2:
            raise DataError("need at least 2 families per relation")
        if not 0.0 <= self.kin_correlation <= 1.0:
            raise DataError("kin_correlation must be in [0, 1]")
        if self.noise_level < 0:
            raise DataError("noise_level must be nonnegative")
        bad = set(self.relations) - set(RELATIONS)
        if bad:
            raise DataError(f"unknown relations {sorted(bad)}")


def render_face_frames(latent: np.ndarray, cfg: SynthConfig,
                       rng: np.random.Generator) -> np.ndarray:
    """Oriented-texture frames (T, S, S, 3) uint8 driven by the latent."""
    s = cfg.frame_size
    yy, xx = np.mgrid[0:s, 0:s].astype(np.float64)
    z = latent
    frames = []
    # four oriented components; orientation and frequency are latent functions
    thetas = np.pi * (np.arange(4) / 4.0) + 0.45 * z[:4]
    freqs = np.array([0.07, 0.11, 0.16, 0.23]) * np.exp(0.35 * z[4:8])
    # fixed per-channel mixing so HSV block histograms see all components
    mix = np.array(
        [[1.0, 0.6, 0.3, 0.2],
         [0.3, 1.0, 0.6, 0.3],
         [0.2, 0.3, 0.6, 1.0]]
    )
    for t in range(cfg.n_frames):
        comps = []
        for j in range(4):
            u = xx * np.cos(thetas[j]) + yy * np.sin(thetas[j])
            comps.append(np.cos(2.0 * np.pi * freqs[j] * u + 0.9 * z[j] + 0.35 * t))
        comps = np.stack(comps)  # (4, S, S)
        img = np.einsum("cj,jhw->hwc", mix, comps)
        img = img / np.abs(mix).sum(axis=1)  # each channel in [-1, 1]
        img = 127.5 + 100.0 * img
        img += cfg.noise_level * 255.0 * rng.standard_normal(img.shape)
        frames.append(np.clip(np.round(img), 0, 255).astype(np.uint8))
    return np.stack(frames)


def render_voice(latent: np.ndarray, cfg: SynthConfig,
                 rng: np.random.Generator) -> Waveform:
    """Harmonic series with latent-driven fundamental and formant envelope.

    The speaker identity (kin signal) lives in the fundamental, the mean
    formant positions and the broadband spectral tilt, all functions of the
    latent. On top of that, formants wander slowly over the recording
    (rng-driven, independent per recording) so every speaker occupies a
    frame *distribution* rather than a single spectral point; without that
    within-recording spread, frame-level speaker models degenerate.
    """
    z = latent
    sr = cfg.audio_rate
    n = int(round(cfg.audio_seconds * sr))
    t = np.arange(n) / sr
    f0 = 115.0 * np.exp(0.15 * z[0])
    base_formants = np.array([
        450.0 * np.exp(0.35 * z[1]),
        1400.0 * np.exp(0.30 * z[2]),
        2600.0 * np.exp(0.25 * z[3]),
    ])
    bandwidth = 110.0
    tilt = 0.6 + 0.35 * z[6]  # broadband spectral slope, also latent-driven
    # slow articulation wander, piecewise-constant over 256-sample blocks
    block = 256
    n_blocks = (n + block - 1) // block
    tb = (np.arange(n_blocks) * block + block / 2.0) / sr
    wander = np.zeros((3, n_blocks))
    for j in range(3):
        f_slow, f_fast = rng.uniform(0.5, 1.5), rng.uniform(1.5, 3.0)
        p_slow, p_fast = rng.uniform(0.0, 2.0 * np.pi, 2)
        wander[j] = 0.20 * (
            np.sin(2.0 * np.pi * f_slow * tb + p_slow)
            + 0.6 * np.sin(2.0 * np.pi * f_fast * tb + p_fast)
        )
    formants_t = base_formants[:, None] * np.exp(wander)  # (3, n_blocks)
    drift = 1.0 + 0.02 * np.sin(2.0 * np.pi * 0.6 * t + rng.uniform(0.0, 2.0 * np.pi))
    vibrato = 1.0 + 0.008 * np.sin(2.0 * np.pi * 5.0 * t + 2.0 * z[4])
    phase0 = np.cumsum(f0 * vibrato * drift) / sr * 2.0 * np.pi
    signal = np.zeros(n)
    k = 1
    while k * f0 < 5000.0:
        freq = k * f0
        amp_b = 0.02 + np.exp(
            -((freq - formants_t) ** 2) / (2.0 * bandwidth**2)
        ).sum(axis=0)
        amp_b *= np.exp(-tilt * freq / 5000.0)
        amp = np.repeat(amp_b, block)[:n]
        signal += amp * np.sin(k * phase0 + 2.0 * np.pi * ((0.7 * k * z[5]) % 1.0))
        k += 1
    rms = np.sqrt(np.mean(signal**2))
    signal = 0.25 * signal / max(rms, 1e-12)
    signal += cfg.noise_level * 0.25 * rng.standard_normal(n)
    return Waveform(np.clip(signal, -1.0, 1.0), sr)


def gen_synthetic(cfg: SynthConfig, out_dir) -> tuple[list[Recording], list[Trial]]:
    """Write media, manifest and the kin trial list; returns both in memory.

    Layout: ``<out>/<rec_id>/frame_###.ppm`` and ``<out>/<rec_id>.wav``;
    ``manifest.tsv`` and ``kin_trials.tsv`` at the top level. Byte-identical
    output for identical (config, seed).
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    root_ss = np.random.SeedSequence(cfg.seed)
    recordings: list[Recording] = []
    kin_trials: list[Trial] = []
    alpha = cfg.kin_correlation
    for rel_i, relation in enumerate(cfg.relations):
        parent_role, child_role = RELATION_ROLES[relation]
        rel_ss = root_ss.spawn(len(RELATIONS))[RELATIONS.index(relation)]
        fam_seeds = rel_ss.spawn(cfg.n_families)
        for fi in range(cfg.n_families):
            rng = np.random.default_rng(fam_seeds[fi])
            family = f"{relation}{fi:04d}"
            parent_latent = rng.standard_normal(cfg.latent_dim)
            child_latent = alpha * parent_latent + np.sqrt(
                max(1.0 - alpha**2, 0.0)
            ) * rng.standard_normal(cfg.latent_dim)
            for role, latent, tag in (
                (parent_role, parent_latent, "p"),
                (child_role, child_latent, "c"),
            ):
                rec_id = f"{family}_{tag}"
                frame_dir = out / rec_id
                frame_dir.mkdir(exist_ok=True)
                frames = render_face_frames(latent, cfg, rng)
                for ti, frame in enumerate(frames):
                    write_image(frame, frame_dir / f"frame_{ti:03d}.ppm")
                wave = render_voice(latent, cfg, rng)
                write_wav(wave, out / f"{rec_id}.wav")
                recordings.append(
                    Recording(rec_id, family, role, str(frame_dir), str(out / f"{rec_id}.wav"))
                )
            kin_trials.append(Trial(f"{family}_p", f"{family}_c", relation, "kin"))
    save_manifest(recordings, out / "manifest.tsv")
    save_trials(kin_trials, out / "kin_trials.tsv")
    return recordings, kin_trials
