"""Modality combination: PCA and z-score conditioning, early fusion
(concatenation + cosine), late fusion (score averaging) and the Siamese
fusion head (concatenated PCA features through one trained affine layer).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import FeatureVector
from .embed import FusionNet, NetSpec, TrainConfig, build_net, train_siamese
from .errors import DataError, DimensionError

PCA_MAGIC = b"KVPC"
PCA_VERSION = 1


@dataclass(frozen=True)
class PcaModel:
    """mean (D,), orthonormal basis (D, K), eigenvalues (K,) descending."""

    mean: np.ndarray
    basis: np.ndarray
    eigenvalues: np.ndarray

    def __post_init__(self):
        for name in ("mean", "basis", "eigenvalues"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), np.float64))
        if self.basis.ndim != 2 or self.mean.shape != (self.basis.shape[0],):
            raise DimensionError("inconsistent PCA shapes")
        if np.any(np.diff(self.eigenvalues) > 1e-9):
            raise DataError("eigenvalues must be non-increasing")

    @property
    def out_dim(self) -> int:
        return self.basis.shape[1]

    def project(self, x: np.ndarray) -> np.ndarray:
        return (np.asarray(x, np.float64) - self.mean) @ self.basis

    def reconstruct(self, z: np.ndarray) -> np.ndarray:
        return z @ self.basis.T + self.mean


def pca_fit(data, k: int) -> PcaModel:
    """Top-k principal components of mean-centered data.

    Uses a D x D covariance eigendecomposition for D <= 4096 and the
    N x N Gram-matrix route above that (features wider than the sample
    count). Component signs are fixed by making the largest-magnitude
    entry positive.
    """
    x = np.asarray(data, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 2:
        raise DimensionError("pca_fit needs at least 2 sample vectors")
    n, d = x.shape
    if k < 1 or k > min(d, n - 1):
        raise DimensionError(f"k must be in [1, {min(d, n - 1)}], got {k}")
    mean = x.mean(axis=0)
    centered = x - mean
    if d <= 4096:
        cov = centered.T @ centered / (n - 1)
        vals, vecs = np.linalg.eigh(cov)
        order = np.argsort(vals)[::-1][:k]
        eigenvalues = np.maximum(vals[order], 0.0)
        basis = vecs[:, order]
    else:
        gram = centered @ centered.T / (n - 1)
        vals, vecs = np.linalg.eigh(gram)
        order = np.argsort(vals)[::-1][:k]
        eigenvalues = np.maximum(vals[order], 0.0)
        basis = centered.T @ vecs[:, order]
        norms = np.linalg.norm(basis, axis=0)
        if np.any(norms <= 0):
            raise DataError("rank-deficient data for requested k")
        basis = basis / norms
    for j in range(k):
        i = np.argmax(np.abs(basis[:, j]))
        if basis[i, j] < 0:
            basis[:, j] = -basis[:, j]
    return PcaModel(mean, basis, eigenvalues)


def zscore_fit(train) -> tuple[np.ndarray, np.ndarray]:
    """Per-dimension mean and std from training vectors only."""
    x = np.asarray(train, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] == 0:
        raise DimensionError("zscore_fit needs a non-empty (N, D) array")
    return x.mean(axis=0), x.std(axis=0)


def zscore_apply(mu: np.ndarray, sigma: np.ndarray, x) -> np.ndarray:
    """(x - mu) / sigma; zero-variance dimensions map to 0."""
    x = np.asarray(x, dtype=np.float64)
    safe = np.where(sigma > 0, sigma, 1.0)
    return np.where(sigma > 0, (x - mu) / safe, 0.0)


def zscore_fit_apply(train, apply_to) -> np.ndarray:
    mu, sigma = zscore_fit(train)
    return zscore_apply(mu, sigma, apply_to)


def early_fuse(face: np.ndarray, voice: np.ndarray, dim: int = 144) -> np.ndarray:
    """Concatenate equally sized conditioned face and voice features."""
    face = np.asarray(face, dtype=np.float64)
    voice = np.asarray(voice, dtype=np.float64)
    if face.shape != (dim,) or voice.shape != (dim,):
        raise DimensionError(
            f"early fusion expects two {dim}-dim vectors, got {face.shape} and {voice.shape}"
        )
    return np.concatenate([face, voice])


def late_fuse(score_face: float, score_voice: float) -> float:
    """Arithmetic mean of the two modality scores."""
    if not (np.isfinite(score_face) and np.isfinite(score_voice)):
        raise DataError("late fusion requires finite scores")
    return (score_face + score_voice) / 2.0


@dataclass(frozen=True)
class FusionHead:
    """Affine layer over the concatenation of two fixed-size inputs."""

    net: FusionNet
    split: tuple[int, int] = (130, 130)

    def __post_init__(self):
        if sum(self.split) != self.net.spec.input_shape[0]:
            raise DimensionError("split sizes must sum to the layer input width")


def make_fusion_head(split: tuple[int, int] = (130, 130),
                     out_dim: int | None = None) -> FusionHead:
    width = sum(split)
    spec = NetSpec(kind="fusion", input_shape=(width,), output_dim=out_dim or width)
    return FusionHead(build_net(spec), split)


def siamese_fuse(face: np.ndarray, voice: np.ndarray, head: FusionHead) -> FeatureVector:
    """Fused embedding: [face || voice] through the head's affine layer."""
    import torch

    face = np.asarray(face, dtype=np.float64)
    voice = np.asarray(voice, dtype=np.float64)
    if face.shape != (head.split[0],) or voice.shape != (head.split[1],):
        raise DimensionError(
            f"siamese fusion expects dims {head.split}, got {face.shape} and {voice.shape}"
        )
    x = torch.as_tensor(np.concatenate([face, voice]))
    with torch.no_grad():
        out = head.net(x)
    return FeatureVector(out.numpy(), "siamese_fusion")


def train_fusion_head(head: FusionHead, pairs, cfg: TrainConfig):
    """Train the head with contrastive loss on concatenated feature pairs.

    ``pairs``: list of ((face_a, voice_a), (face_b, voice_b), label).
    """
    flat = [
        (np.concatenate([fa, va]), np.concatenate([fb, vb]), y)
        for (fa, va), (fb, vb), y in pairs
    ]
    return train_siamese(head.net, flat, cfg)


def save_pca(model: PcaModel, path) -> None:
    d, k = model.basis.shape
    with Path(path).open("wb") as fh:
        fh.write(PCA_MAGIC)
        fh.write(struct.pack("<III", PCA_VERSION, d, k))
        fh.write(model.mean.astype("<f8").tobytes())
        fh.write(model.eigenvalues.astype("<f8").tobytes())
        fh.write(model.basis.astype("<f8").tobytes())


def load_pca(path) -> PcaModel:
    data = Path(path).read_bytes()
    if data[:4] != PCA_MAGIC:
        raise DataError(f"{path}: bad magic {data[:4]!r}")
    version, d, k = struct.unpack_from("<III", data, 4)
    if version != PCA_VERSION:
        raise DataError(f"{path}: unsupported version {version}")
    need = 16 + 8 * (d + k + d * k)
    if len(data) < need:
        raise DataError(f"{path}: truncated PCA file")
    offset = 16
    mean = np.frombuffer(data, "<f8", d, offset)
    offset += 8 * d
    eigenvalues = np.frombuffer(data, "<f8", k, offset)
    offset += 8 * k
    basis = np.frombuffer(data, "<f8", d * k, offset).reshape(d, k)
    return PcaModel(mean.copy(), basis.copy(), eigenvalues.copy())
