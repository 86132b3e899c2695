"""Diagonal-covariance GMMs: EM training, MAP adaptation, Baum-Welch
statistics and log-likelihood-ratio scoring.

All densities are evaluated in the log domain. Scoring a kinship trial
adapts the universal background model (UBM) to the parent recording and
evaluates the child's frames against the adapted model versus the UBM.
"""

from __future__ import annotations

import struct
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.special import logsumexp

from .errors import DataError, DimensionError, NumericError

GMM_MAGIC = b"KVGM"
GMM_VERSION = 1

DEFAULT_RELEVANCE = 16.0
VARIANCE_FLOOR_FRACTION = 1e-3


@dataclass(frozen=True)
class DiagGMM:
    """weights (C,), means (C, D), variances (C, D)."""

    weights: np.ndarray
    means: np.ndarray
    variances: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64)
        m = np.asarray(self.means, dtype=np.float64)
        v = np.asarray(self.variances, dtype=np.float64)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "means", m)
        object.__setattr__(self, "variances", v)
        if w.ndim != 1 or m.ndim != 2 or v.shape != m.shape or m.shape[0] != w.shape[0]:
            raise DimensionError("inconsistent GMM parameter shapes")
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-10:
            raise DataError("GMM weights must be nonnegative and sum to 1")
        if np.any(v <= 0):
            raise DataError("GMM variances must be strictly positive")

    @property
    def n_components(self) -> int:
        return self.weights.shape[0]

    @property
    def dim(self) -> int:
        return self.means.shape[1]


@dataclass(frozen=True)
class BWStats:
    """Zeroth-order occupancies n (C,) and first-order sums f (C, D)."""

    n: np.ndarray
    f: np.ndarray

    def __post_init__(self):
        n = np.asarray(self.n, dtype=np.float64)
        f = np.asarray(self.f, dtype=np.float64)
        object.__setattr__(self, "n", n)
        object.__setattr__(self, "f", f)
        if n.ndim != 1 or f.ndim != 2 or f.shape[0] != n.shape[0]:
            raise DimensionError("inconsistent Baum-Welch statistic shapes")
        if np.any(n < -1e-12):
            raise DataError("occupancies must be nonnegative")


def _check_frames(frames, dim: int | None = None) -> np.ndarray:
    x = np.asarray(frames, dtype=np.float64)
    if x.ndim != 2:
        raise DimensionError(f"frames must be (N, D), got shape {x.shape}")
    if dim is not None and x.shape[1] != dim:
        raise DimensionError(f"frame dim {x.shape[1]} does not match model dim {dim}")
    return x


def log_gaussians(gmm: DiagGMM, frames: np.ndarray) -> np.ndarray:
    """Per-frame, per-component weighted log densities, shape (N, C)."""
    x = _check_frames(frames, gmm.dim)
    inv_var = 1.0 / gmm.variances
    # -0.5 * [ D log 2pi + sum log var + (x - mu)^2 / var ]
    const = -0.5 * (
        gmm.dim * np.log(2.0 * np.pi) + np.log(gmm.variances).sum(axis=1)
    )
    quad = (
        (x**2) @ inv_var.T
        - 2.0 * x @ (gmm.means * inv_var).T
        + ((gmm.means**2) * inv_var).sum(axis=1)
    )
    return np.log(gmm.weights)[None, :] + const[None, :] - 0.5 * quad


def log_likelihood(gmm: DiagGMM, frames: np.ndarray) -> float:
    """Total log-likelihood of the frames under the mixture."""
    return float(logsumexp(log_gaussians(gmm, frames), axis=1).sum())


def responsibilities(gmm: DiagGMM, frames: np.ndarray) -> np.ndarray:
    lg = log_gaussians(gmm, frames)
    return np.exp(lg - logsumexp(lg, axis=1, keepdims=True))


def _kmeans_pp(x: np.ndarray, c: int, rng: np.random.Generator, iters: int = 10):
    """k-means++ seeding followed by a few Lloyd iterations."""
    n = x.shape[0]
    centers = np.empty((c, x.shape[1]))
    centers[0] = x[rng.integers(n)]
    d2 = ((x - centers[0]) ** 2).sum(axis=1)
    for i in range(1, c):
        total = d2.sum()
        if total <= 0:
            centers[i:] = x[rng.integers(n, size=c - i)]
            break
        probs = d2 / total
        centers[i] = x[rng.choice(n, p=probs)]
        d2 = np.minimum(d2, ((x - centers[i]) ** 2).sum(axis=1))
    assign = None
    x_sq = (x**2).sum(axis=1)
    for _ in range(iters):
        dist = x_sq[:, None] - 2.0 * x @ centers.T + (centers**2).sum(axis=1)[None, :]
        assign = dist.argmin(axis=1)
        for i in range(c):
            mask = assign == i
            if mask.any():
                centers[i] = x[mask].mean(axis=0)
    return centers, assign


def em_train(
    frames,
    n_components: int,
    iters: int = 20,
    seed: int = 0,
    variance_floor_fraction: float = VARIANCE_FLOOR_FRACTION,
) -> tuple[DiagGMM, list[float]]:
    """EM-train a diagonal GMM from k-means++ initialization.

    Returns the model and the per-iteration total log-likelihood trace
    (evaluated before each M-step), which is non-decreasing.
    """
    x = _check_frames(frames)
    if x.shape[0] == 0:
        raise DataError("cannot train a GMM on empty data")
    if n_components < 1:
        raise DataError("need at least one component")
    rng = np.random.default_rng(seed)
    global_var = x.var(axis=0)
    floor = np.maximum(variance_floor_fraction * global_var, 1e-12)

    centers, assign = _kmeans_pp(x, n_components, rng)
    weights = np.full(n_components, 1.0 / n_components)
    variances = np.tile(np.maximum(global_var, floor), (n_components, 1))
    if assign is not None:
        for i in range(n_components):
            mask = assign == i
            if mask.sum() >= 2:
                variances[i] = np.maximum(x[mask].var(axis=0), floor)
        counts = np.bincount(assign, minlength=n_components).astype(float)
        if counts.sum() > 0:
            weights = np.maximum(counts, 1.0)
            weights /= weights.sum()
    gmm = DiagGMM(weights, centers, variances)

    trace: list[float] = []
    for _ in range(max(iters, 0)):
        lg = log_gaussians(gmm, x)
        per_frame = logsumexp(lg, axis=1)
        trace.append(float(per_frame.sum()))
        gamma = np.exp(lg - per_frame[:, None])
        n = gamma.sum(axis=0)
        if np.any(n < 1.0):
            warnings.warn(
                f"{int((n < 1.0).sum())} GMM component(s) with occupancy < 1",
                stacklevel=2,
            )
        n_safe = np.maximum(n, 1e-10)
        means = (gamma.T @ x) / n_safe[:, None]
        second = (gamma.T @ (x**2)) / n_safe[:, None]
        variances = np.maximum(second - means**2, floor)
        weights = n / n.sum()
        gmm = DiagGMM(weights, means, variances)
    trace.append(log_likelihood(gmm, x))
    return gmm, trace


def bw_stats(ubm: DiagGMM, frames) -> BWStats:
    """Zeroth/first-order Baum-Welch statistics of frames against the UBM."""
    x = _check_frames(frames, ubm.dim)
    if x.shape[0] == 0:
        c, d = ubm.n_components, ubm.dim
        return BWStats(np.zeros(c), np.zeros((c, d)))
    gamma = responsibilities(ubm, x)
    return BWStats(gamma.sum(axis=0), gamma.T @ x)


def map_adapt(ubm: DiagGMM, frames, relevance: float = DEFAULT_RELEVANCE) -> DiagGMM:
    """Means-only MAP adaptation; weights and variances copied from the UBM."""
    if relevance <= 0:
        raise DataError("relevance factor must be positive")
    stats = bw_stats(ubm, frames)
    alpha = stats.n / (stats.n + relevance)
    data_mean = np.where(
        stats.n[:, None] > 0, stats.f / np.maximum(stats.n, 1e-300)[:, None], ubm.means
    )
    means = alpha[:, None] * data_mean + (1.0 - alpha[:, None]) * ubm.means
    return DiagGMM(ubm.weights, means, ubm.variances)


def llr_score(model: DiagGMM, ubm: DiagGMM, frames) -> float:
    """Per-frame average log-likelihood ratio log p(X|model) - log p(X|ubm)."""
    x = _check_frames(frames, ubm.dim)
    if model.dim != ubm.dim:
        raise DimensionError("model and UBM dims differ")
    if x.shape[0] == 0:
        raise DataError("cannot score an empty frame sequence")
    return (log_likelihood(model, x) - log_likelihood(ubm, x)) / x.shape[0]


def gmm_to_bytes(gmm: DiagGMM) -> bytes:
    return (
        GMM_MAGIC
        + struct.pack("<III", GMM_VERSION, gmm.n_components, gmm.dim)
        + gmm.weights.astype("<f8").tobytes()
        + gmm.means.astype("<f8").tobytes()
        + gmm.variances.astype("<f8").tobytes()
    )


def gmm_from_bytes(data: bytes, origin: str = "gmm data") -> DiagGMM:
    if data[:4] != GMM_MAGIC:
        raise DataError(f"{origin}: bad magic {data[:4]!r}")
    version, c, d = struct.unpack_from("<III", data, 4)
    if version != GMM_VERSION:
        raise DataError(f"{origin}: unsupported version {version}")
    need = 16 + 8 * (c + 2 * c * d)
    if len(data) < need:
        raise DataError(f"{origin}: truncated model data")
    offset = 16
    weights = np.frombuffer(data, "<f8", c, offset)
    offset += 8 * c
    means = np.frombuffer(data, "<f8", c * d, offset).reshape(c, d)
    offset += 8 * c * d
    variances = np.frombuffer(data, "<f8", c * d, offset).reshape(c, d)
    return DiagGMM(weights.copy(), means.copy(), variances.copy())


def save_gmm(gmm: DiagGMM, path) -> None:
    Path(path).write_bytes(gmm_to_bytes(gmm))


def load_gmm(path) -> DiagGMM:
    return gmm_from_bytes(Path(path).read_bytes(), str(path))
