"""Total-variability modeling: EM training of the loading matrix, i-vector
extraction as a posterior mean, LDA on family labels, cosine backend.

The model ties each recording's GMM component means to a shared low-rank
subspace: mu_c = m_c + T_c w, with a standard-normal prior on w. The
i-vector is the exact posterior mean of w given the recording's
Baum-Welch statistics.
"""

from __future__ import annotations

import struct
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.linalg

from .errors import DataError, DimensionError, NumericError
from .gmm import BWStats, DiagGMM, gmm_from_bytes, gmm_to_bytes

TV_MAGIC = b"KVTV"
TV_VERSION = 1


@dataclass(frozen=True)
class TVModel:
    """UBM plus the (C*D) x R stacked loading matrix."""

    ubm: DiagGMM
    t: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.t, dtype=np.float64)
        object.__setattr__(self, "t", t)
        cd = self.ubm.n_components * self.ubm.dim
        if t.ndim != 2 or t.shape[0] != cd:
            raise DimensionError(f"T must be ({cd}, R), got {t.shape}")
        if t.shape[1] > cd:
            raise DimensionError(f"rank {t.shape[1]} exceeds supervector dim {cd}")
        if not np.all(np.isfinite(t)):
            raise DataError("T contains non-finite entries")

    @property
    def rank(self) -> int:
        return self.t.shape[1]


@dataclass(frozen=True)
class LdaProjection:
    """Columns are generalized-eigenvector directions, eigenvalues descending."""

    basis: np.ndarray
    eigenvalues: np.ndarray

    @property
    def out_dim(self) -> int:
        return self.basis.shape[1]

    def project(self, x: np.ndarray) -> np.ndarray:
        return np.asarray(x, dtype=np.float64) @ self.basis


def _posterior(model: TVModel, stats: BWStats):
    """Precision matrix L and posterior mean w for one recording's stats."""
    ubm = model.ubm
    c, d, r = ubm.n_components, ubm.dim, model.rank
    if stats.n.shape[0] != c or stats.f.shape != (c, d):
        raise DimensionError("statistics do not conform to the UBM")
    t_blocks = model.t.reshape(c, d, r)
    inv_var = 1.0 / ubm.variances  # (C, D)
    f_centered = stats.f - stats.n[:, None] * ubm.means  # (C, D)
    # L = I + sum_c n_c T_c' Sigma_c^-1 T_c
    ts = t_blocks * inv_var[:, :, None]  # Sigma^-1 T per block
    precision = np.eye(r) + np.einsum("c,cdr,cds->rs", stats.n, ts, t_blocks)
    rhs = np.einsum("cdr,cd->r", ts, f_centered)
    return precision, rhs


def extract_ivector(model: TVModel, stats: BWStats) -> np.ndarray:
    """Exact posterior mean w = (I + T' S^-1 N T)^-1 T' S^-1 (f - N m)."""
    precision, rhs = _posterior(model, stats)
    try:
        cho = scipy.linalg.cho_factor(precision)
        return scipy.linalg.cho_solve(cho, rhs)
    except scipy.linalg.LinAlgError as exc:
        raise NumericError(f"posterior precision not SPD: {exc}") from exc


def train_tv(
    ubm: DiagGMM,
    stats: list[BWStats],
    rank: int,
    iters: int = 5,
    seed: int = 0,
) -> tuple[TVModel, list[float]]:
    """EM training of T; returns the model and the per-iteration marginal
    log-likelihood trace (up to a T-independent constant), non-decreasing."""
    if not stats:
        raise DataError("need at least one statistics object")
    c, d = ubm.n_components, ubm.dim
    if rank < 1 or rank > c * d:
        raise DimensionError(f"rank must be in [1, {c * d}], got {rank}")
    rng = np.random.default_rng(seed)
    t = rng.normal(0.0, 0.1, size=(c * d, rank))
    model = TVModel(ubm, t)
    inv_var = 1.0 / ubm.variances
    trace: list[float] = []

    for _ in range(iters):
        acc_fw = np.zeros((c, d, rank))   # sum_r f~_c w_r'
        acc_nww = np.zeros((c, rank, rank))  # sum_r n_c E[w w']
        objective = 0.0
        for st in stats:
            precision, rhs = _posterior(model, st)
            cho = scipy.linalg.cho_factor(precision)
            w = scipy.linalg.cho_solve(cho, rhs)
            cov = scipy.linalg.cho_solve(cho, np.eye(rank))
            eww = cov + np.outer(w, w)
            f_centered = st.f - st.n[:, None] * ubm.means
            acc_fw += f_centered[:, :, None] * w[None, None, :]
            acc_nww += st.n[:, None, None] * eww[None, :, :]
            # marginal log-likelihood up to a T-independent constant
            logdet = 2.0 * np.log(np.diag(cho[0])).sum()
            objective += -0.5 * logdet + 0.5 * float(rhs @ w)
        trace.append(objective)
        t_blocks = model.t.reshape(c, d, rank).copy()
        for ci in range(c):
            if np.abs(acc_nww[ci]).max() <= 0:
                continue  # no update signal for this component
            try:
                t_blocks[ci] = scipy.linalg.solve(
                    acc_nww[ci], acc_fw[ci].T, assume_a="pos"
                ).T
            except scipy.linalg.LinAlgError:
                warnings.warn(f"singular accumulator for component {ci}", stacklevel=2)
        model = TVModel(ubm, t_blocks.reshape(c * d, rank))
    # final objective after the last M-step
    objective = 0.0
    for st in stats:
        precision, rhs = _posterior(model, st)
        cho = scipy.linalg.cho_factor(precision)
        w = scipy.linalg.cho_solve(cho, rhs)
        logdet = 2.0 * np.log(np.diag(cho[0])).sum()
        objective += -0.5 * logdet + 0.5 * float(rhs @ w)
    trace.append(objective)
    return model, trace


def lda_train(
    ivectors,
    labels,
    out_dim: int,
    ridge: float = 1e-6,
) -> LdaProjection:
    """Top generalized eigenvectors of S_b v = lambda S_w v on class labels."""
    x = np.asarray(ivectors, dtype=np.float64)
    labels = list(labels)
    if x.ndim != 2 or x.shape[0] != len(labels):
        raise DimensionError("ivectors/labels mismatch")
    classes = sorted(set(labels))
    if len(classes) < 2:
        raise DataError("LDA needs at least two classes")
    if out_dim > len(classes) - 1 or out_dim > x.shape[1]:
        raise DimensionError(
            f"out_dim {out_dim} exceeds classes-1 ({len(classes) - 1}) or input dim"
        )
    dim = x.shape[1]
    mean = x.mean(axis=0)
    sw = np.zeros((dim, dim))
    sb = np.zeros((dim, dim))
    for cls in classes:
        xc = x[[lab == cls for lab in labels]]
        mc = xc.mean(axis=0)
        centered = xc - mc
        sw += centered.T @ centered
        diff = (mc - mean)[:, None]
        sb += xc.shape[0] * (diff @ diff.T)
    # regularize near-singular within-class scatter
    eigvals_sw = np.linalg.eigvalsh(sw)
    if eigvals_sw.min() < 1e-10 * max(eigvals_sw.max(), 1.0):
        warnings.warn("within-class scatter near-singular; adding ridge", stacklevel=2)
        sw = sw + ridge * (np.trace(sw) / dim + 1.0) * np.eye(dim)
    vals, vecs = scipy.linalg.eigh(sb, sw)
    order = np.argsort(vals)[::-1][:out_dim]
    basis = vecs[:, order]
    # deterministic sign: largest-magnitude entry positive
    for j in range(basis.shape[1]):
        k = np.argmax(np.abs(basis[:, j]))
        if basis[k, j] < 0:
            basis[:, j] = -basis[:, j]
    return LdaProjection(basis, vals[order])


def cosine_score(a, b) -> float:
    """a.b / (|a||b|); raises on zero vectors."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise DimensionError(f"vectors must share one shape, got {a.shape} vs {b.shape}")
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        raise DataError("cosine similarity undefined for zero vectors")
    return float(a @ b / (na * nb))


def save_tv(model: TVModel, path) -> None:
    with Path(path).open("wb") as fh:
        fh.write(TV_MAGIC)
        fh.write(struct.pack("<III", TV_VERSION, model.t.shape[0], model.t.shape[1]))
        fh.write(model.t.astype("<f8").tobytes())
        fh.write(gmm_to_bytes(model.ubm))


def load_tv(path) -> TVModel:
    path = Path(path)
    data = path.read_bytes()
    if data[:4] != TV_MAGIC:
        raise DataError(f"{path}: bad magic {data[:4]!r}")
    version, cd, r = struct.unpack_from("<III", data, 4)
    if version != TV_VERSION:
        raise DataError(f"{path}: unsupported version {version}")
    offset = 16 + 8 * cd * r
    if len(data) < offset:
        raise DataError(f"{path}: truncated model file")
    t = np.frombuffer(data, "<f8", cd * r, 16).reshape(cd, r).copy()
    ubm = gmm_from_bytes(data[offset:], str(path))
    return TVModel(ubm, t)
