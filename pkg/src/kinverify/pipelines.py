"""Trial scoring pipelines and cross-validated evaluation.

Every trainable stage (UBM, total-variability matrix, LDA, PCA, z-score,
networks, fusion head) fits on the training folds' recordings only. The
``RecordingRepo`` records which recording ids each fit touches, and
``crossval_run`` raises if a fit reads a test-fold recording.
"""

from __future__ import annotations

from contextlib import contextmanager
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import audiofeat, embed, fusion, gmm, imgfeat, ivector
from .core import FoldSplit, Recording, Trial
from .errors import DataError, LeakageError
from .media import Waveform, read_frames, read_wav, to_gray
from .metrics import EvalReport, ScoreSet, report_from_scores

METHODS = (
    "lbp", "lpq", "bsif", "lbptop",
    "face_net", "gmm_ubm", "ivector", "voice_net",
    "early", "late", "siamese_fusion",
)


class RecordingRepo:
    """Media loading and per-recording feature caching with access auditing."""

    def __init__(self, recordings: list[Recording]):
        self.by_id = {r.id: r for r in recordings}
        self._cache: dict[tuple[str, str], object] = {}
        self._audit: set[str] | None = None

    @contextmanager
    def audited(self):
        """Record every recording id touched inside the block."""
        prev = self._audit
        accessed: set[str] = set()
        self._audit = accessed
        try:
            yield accessed
        finally:
            self._audit = prev

    def release_media(self):
        """Drop cached raw media (frames, waveforms); derived features stay."""
        self._cache = {
            k: v for k, v in self._cache.items()
            if not (k[1].startswith("frames") or k[1] == "wave")
        }

    def _touch(self, rec_id: str):
        if rec_id not in self.by_id:
            raise DataError(f"unknown recording id {rec_id!r}")
        if self._audit is not None:
            self._audit.add(rec_id)

    def _cached(self, rec_id: str, key: str, compute):
        self._touch(rec_id)
        full_key = (rec_id, key)
        if full_key not in self._cache:
            self._cache[full_key] = compute(self.by_id[rec_id])
        return self._cache[full_key]

    # --- media ---

    def frames(self, rec_id: str, size: int):
        def compute(rec):
            if rec.frames_path is None:
                raise DataError(f"recording {rec.id!r} has no frames")
            return read_frames(rec.frames_path, size=size)

        return self._cached(rec_id, f"frames{size}", compute)

    def waveform(self, rec_id: str) -> Waveform:
        def compute(rec):
            if rec.audio_path is None:
                raise DataError(f"recording {rec.id!r} has no audio")
            wave = read_wav(rec.audio_path)
            if wave.n_channels == 2:
                wave = Waveform(wave.samples.mean(axis=1), wave.sample_rate)
            return wave

        return self._cached(rec_id, "wave", compute)

    # --- derived features ---

    def handcrafted(self, rec_id: str, kind: str) -> np.ndarray:
        def compute(rec):
            if kind == "lbptop":
                gray = to_gray(self.frames(rec_id, 224))
                return imgfeat.lbptop_features(gray).values
            hsv = np.stack([imgfeat.rgb_to_hsv(f) for f in self.frames(rec_id, 64)])
            fn = {"lbp": imgfeat.lbp_features,
                  "lpq": imgfeat.lpq_features,
                  "bsif": imgfeat.bsif_features}[kind]
            return fn(hsv).values

        return self._cached(rec_id, kind, compute)

    def mfcc(self, rec_id: str) -> np.ndarray:
        def compute(rec):
            return audiofeat.mfcc(self.waveform(rec_id))

        return self._cached(rec_id, "mfcc", compute)

    def spectrogram(self, rec_id: str) -> audiofeat.Spectrogram:
        def compute(rec):
            wave = audiofeat.to_16k_mono(self.waveform(rec_id))
            return audiofeat.normalize_per_bin(audiofeat.log_spectrogram(wave))

        return self._cached(rec_id, "spec", compute)

    def gray_frames_unit(self, rec_id: str, size: int) -> np.ndarray:
        def compute(rec):
            return to_gray(self.frames(rec_id, size)) / 255.0 - 0.5

        return self._cached(rec_id, f"gray{size}", compute)


# --- feature providers (per-recording fixed-length vectors) ---


class StaticFeature:
    """Stateless per-recording feature; nothing to fit."""

    def __init__(self, kind: str):
        self.kind = kind

    def fit(self, repo, train_trials, recordings, seed):
        pass

    def get(self, repo, rec_id: str) -> np.ndarray:
        return repo.handcrafted(rec_id, self.kind)


class IvectorFeature:
    """UBM + total-variability extractor fitted on training recordings."""

    def __init__(self, n_components=32, rank=50, em_iters=15, tv_iters=5,
                 max_train_frames=60000):
        self.n_components = n_components
        self.rank = rank
        self.em_iters = em_iters
        self.tv_iters = tv_iters
        self.max_train_frames = max_train_frames
        self.model = None

    def fit(self, repo, train_trials, recordings, seed):
        ids = trial_recording_ids(train_trials)
        frames = np.concatenate([repo.mfcc(i) for i in ids])
        frames = subsample_frames(frames, self.max_train_frames, seed)
        ubm, _ = gmm.em_train(frames, self.n_components, self.em_iters, seed)
        stats = [gmm.bw_stats(ubm, repo.mfcc(i)) for i in ids]
        self.model, _ = ivector.train_tv(ubm, stats, self.rank, self.tv_iters, seed)

    def get(self, repo, rec_id: str) -> np.ndarray:
        stats = gmm.bw_stats(self.model.ubm, repo.mfcc(rec_id))
        return ivector.extract_ivector(self.model, stats)


class FaceNetFeature:
    """Siamese-trained face encoder; embeddings of grayscale frame stacks."""

    def __init__(self, spec=None, train_cfg=None):
        self.spec = spec or embed.face_spec()
        self.train_cfg = train_cfg or embed.TrainConfig(
            learning_rate=1e-5, batch_size=40, epochs=3
        )
        self.net = None

    def _input(self, repo, rec_id):
        return repo.gray_frames_unit(rec_id, self.spec.input_shape[0])

    def fit(self, repo, train_trials, recordings, seed):
        self.net = embed.build_net(self.spec)
        embed.init_parameters(self.net, seed)
        pairs = [
            (self._input(repo, t.parent_id), self._input(repo, t.child_id),
             1 if t.label == "kin" else 0)
            for t in train_trials
        ]
        embed.train_siamese(self.net, pairs, replace(self.train_cfg, seed=seed))

    def get(self, repo, rec_id: str) -> np.ndarray:
        return embed.face_embed(self._input(repo, rec_id), self.net).values


class VoiceNetFeature:
    """Siamese-trained spectrogram encoder."""

    def __init__(self, spec=None, train_cfg=None):
        self.spec = spec or embed.voice_spec()
        self.train_cfg = train_cfg or embed.TrainConfig(
            learning_rate=1e-3, batch_size=40, epochs=10
        )
        self.net = None

    def fit(self, repo, train_trials, recordings, seed):
        self.net = embed.build_net(self.spec)
        embed.init_parameters(self.net, seed)
        pairs = [
            (repo.spectrogram(t.parent_id).bins, repo.spectrogram(t.child_id).bins,
             1 if t.label == "kin" else 0)
            for t in train_trials
        ]
        embed.train_siamese(self.net, pairs, replace(self.train_cfg, seed=seed))

    def get(self, repo, rec_id: str) -> np.ndarray:
        return embed.voice_embed(repo.spectrogram(rec_id), self.net).values


def make_feature(name: str, **kwargs):
    if name in ("lbp", "lpq", "bsif", "lbptop"):
        return StaticFeature(name)
    if name == "ivector":
        return IvectorFeature(**kwargs)
    if name == "face_net":
        return FaceNetFeature(**kwargs)
    if name == "voice_net":
        return VoiceNetFeature(**kwargs)
    raise DataError(f"unknown feature provider {name!r}")


# --- pipelines ---


def trial_recording_ids(trials) -> list[str]:
    seen: dict[str, None] = {}
    for t in trials:
        seen.setdefault(t.parent_id)
        seen.setdefault(t.child_id)
    return list(seen)


def subsample_frames(frames: np.ndarray, max_frames: int, seed: int) -> np.ndarray:
    if frames.shape[0] <= max_frames:
        return frames
    rng = np.random.default_rng(seed)
    idx = np.sort(rng.choice(frames.shape[0], size=max_frames, replace=False))
    return frames[idx]


class CosinePipeline:
    """Cosine scoring of a per-recording feature, optionally PCA-conditioned."""

    def __init__(self, feature, pca_dim: int | None = None):
        self.feature = feature
        self.pca_dim = pca_dim
        self.pca = None

    def fit(self, repo, train_trials, recordings, seed):
        self.feature.fit(repo, train_trials, recordings, seed)
        if self.pca_dim:
            ids = trial_recording_ids(train_trials)
            data = np.stack([self.feature.get(repo, i) for i in ids])
            k = min(self.pca_dim, data.shape[1], data.shape[0] - 1)
            self.pca = fusion.pca_fit(data, k)

    def _vector(self, repo, rec_id):
        v = self.feature.get(repo, rec_id)
        return self.pca.project(v) if self.pca is not None else v

    def score(self, repo, trial) -> float:
        return ivector.cosine_score(
            self._vector(repo, trial.parent_id), self._vector(repo, trial.child_id)
        )


class GmmUbmPipeline:
    """UBM on training MFCCs; parent-adapted model scores the child's frames."""

    def __init__(self, n_components=32, em_iters=15, relevance=16.0,
                 max_train_frames=60000):
        self.n_components = n_components
        self.em_iters = em_iters
        self.relevance = relevance
        self.max_train_frames = max_train_frames
        self.ubm = None

    def fit(self, repo, train_trials, recordings, seed):
        ids = trial_recording_ids(train_trials)
        frames = np.concatenate([repo.mfcc(i) for i in ids])
        frames = subsample_frames(frames, self.max_train_frames, seed)
        self.ubm, _ = gmm.em_train(frames, self.n_components, self.em_iters, seed)

    def score(self, repo, trial) -> float:
        model = gmm.map_adapt(self.ubm, repo.mfcc(trial.parent_id), self.relevance)
        return gmm.llr_score(model, self.ubm, repo.mfcc(trial.child_id))


class IvectorPipeline:
    """I-vectors + LDA on family labels + cosine backend."""

    def __init__(self, n_components=32, rank=50, lda_dim=79, em_iters=15,
                 tv_iters=5, max_train_frames=60000):
        self.extractor = IvectorFeature(n_components, rank, em_iters, tv_iters,
                                        max_train_frames)
        self.lda_dim = lda_dim
        self.lda = None

    def fit(self, repo, train_trials, recordings, seed):
        self.extractor.fit(repo, train_trials, recordings, seed)
        by_id = {r.id: r for r in recordings}
        ids = trial_recording_ids(train_trials)
        ivecs = np.stack([self.extractor.get(repo, i) for i in ids])
        labels = [by_id[i].family_id for i in ids]
        out_dim = min(self.lda_dim, len(set(labels)) - 1, ivecs.shape[1])
        self.lda = ivector.lda_train(ivecs, labels, out_dim)

    def score(self, repo, trial) -> float:
        a = self.lda.project(self.extractor.get(repo, trial.parent_id))
        b = self.lda.project(self.extractor.get(repo, trial.child_id))
        return ivector.cosine_score(a, b)


class EarlyFusionPipeline:
    """PCA + z-score each modality, concatenate, cosine."""

    def __init__(self, face_feature, voice_feature, dim=144):
        self.face = face_feature
        self.voice = voice_feature
        self.dim = dim
        self.face_pca = self.voice_pca = None
        self.face_z = self.voice_z = None

    def fit(self, repo, train_trials, recordings, seed):
        self.face.fit(repo, train_trials, recordings, seed)
        self.voice.fit(repo, train_trials, recordings, seed + 1)
        ids = trial_recording_ids(train_trials)
        face = np.stack([self.face.get(repo, i) for i in ids])
        voice = np.stack([self.voice.get(repo, i) for i in ids])
        k = min(self.dim, face.shape[1], voice.shape[1], len(ids) - 1)
        self.k = k
        self.face_pca = fusion.pca_fit(face, k)
        self.voice_pca = fusion.pca_fit(voice, k)
        self.face_z = fusion.zscore_fit(self.face_pca.project(face))
        self.voice_z = fusion.zscore_fit(self.voice_pca.project(voice))

    def _fused(self, repo, rec_id):
        f = fusion.zscore_apply(*self.face_z, self.face_pca.project(self.face.get(repo, rec_id)))
        v = fusion.zscore_apply(*self.voice_z, self.voice_pca.project(self.voice.get(repo, rec_id)))
        return fusion.early_fuse(f, v, dim=self.k)

    def score(self, repo, trial) -> float:
        return ivector.cosine_score(
            self._fused(repo, trial.parent_id), self._fused(repo, trial.child_id)
        )


class LateFusionPipeline:
    """Average of two uni-modal pipeline scores."""

    def __init__(self, face_pipeline, voice_pipeline):
        self.face = face_pipeline
        self.voice = voice_pipeline

    def fit(self, repo, train_trials, recordings, seed):
        self.face.fit(repo, train_trials, recordings, seed)
        self.voice.fit(repo, train_trials, recordings, seed + 1)

    def score(self, repo, trial) -> float:
        return fusion.late_fuse(
            self.face.score(repo, trial), self.voice.score(repo, trial)
        )


class SiameseFusionPipeline:
    """PCA each modality, concatenate, contrastive-trained affine head, cosine."""

    def __init__(self, face_feature, voice_feature, dim=130, train_cfg=None):
        self.face = face_feature
        self.voice = voice_feature
        self.dim = dim
        self.train_cfg = train_cfg or embed.TrainConfig(
            learning_rate=1e-5, batch_size=40, epochs=5
        )
        self.face_pca = self.voice_pca = None
        self.head = None

    def fit(self, repo, train_trials, recordings, seed):
        self.face.fit(repo, train_trials, recordings, seed)
        self.voice.fit(repo, train_trials, recordings, seed + 1)
        ids = trial_recording_ids(train_trials)
        face = np.stack([self.face.get(repo, i) for i in ids])
        voice = np.stack([self.voice.get(repo, i) for i in ids])
        k = min(self.dim, face.shape[1], voice.shape[1], len(ids) - 1)
        self.k = k
        self.face_pca = fusion.pca_fit(face, k)
        self.voice_pca = fusion.pca_fit(voice, k)
        self.head = fusion.make_fusion_head((k, k))
        embed.init_parameters(self.head.net, seed)
        # identity-plus-noise start so early training keeps the concatenation
        import torch

        with torch.no_grad():
            self.head.net.fc.weight += torch.eye(2 * k)
        pairs = []
        for t in train_trials:
            pa = self._parts(repo, t.parent_id)
            pb = self._parts(repo, t.child_id)
            pairs.append((pa, pb, 1 if t.label == "kin" else 0))
        fusion.train_fusion_head(self.head, pairs, replace(self.train_cfg, seed=seed))

    def _parts(self, repo, rec_id):
        return (
            self.face_pca.project(self.face.get(repo, rec_id)),
            self.voice_pca.project(self.voice.get(repo, rec_id)),
        )

    def _embedding(self, repo, rec_id):
        f, v = self._parts(repo, rec_id)
        return fusion.siamese_fuse(f, v, self.head).values

    def score(self, repo, trial) -> float:
        return ivector.cosine_score(
            self._embedding(repo, trial.parent_id), self._embedding(repo, trial.child_id)
        )


def make_pipeline(method: str, **kwargs):
    """Build a pipeline for one of the METHODS names."""
    if method in ("lbp", "lpq", "bsif", "lbptop"):
        return CosinePipeline(StaticFeature(method), kwargs.get("pca_dim"))
    if method == "gmm_ubm":
        return GmmUbmPipeline(**kwargs)
    if method == "ivector":
        return IvectorPipeline(**kwargs)
    if method == "face_net":
        return CosinePipeline(
            FaceNetFeature(kwargs.get("spec"), kwargs.get("train_cfg")),
            kwargs.get("pca_dim", 110),
        )
    if method == "voice_net":
        return CosinePipeline(
            VoiceNetFeature(kwargs.get("spec"), kwargs.get("train_cfg")),
            kwargs.get("pca_dim", 144),
        )
    face = kwargs.pop("face_feature", None) or make_feature("face_net")
    voice = kwargs.pop("voice_feature", None) or make_feature("voice_net")
    if method == "early":
        return EarlyFusionPipeline(face, voice, kwargs.get("dim", 144))
    if method == "late":
        return LateFusionPipeline(
            kwargs.get("face_pipeline") or CosinePipeline(face),
            kwargs.get("voice_pipeline") or CosinePipeline(voice),
        )
    if method == "siamese_fusion":
        return SiameseFusionPipeline(face, voice, kwargs.get("dim", 130),
                                     kwargs.get("train_cfg"))
    raise DataError(f"unknown method {method!r}")


@dataclass(frozen=True)
class TrialScore:
    trial: Trial
    score: float


def crossval_run(
    repo: RecordingRepo,
    trials: list[Trial],
    recordings: list[Recording],
    folds: FoldSplit,
    pipeline_factory,
    seed: int = 0,
    method: str = "custom",
) -> tuple[EvalReport, list[TrialScore]]:
    """Fit on each training fold, score its test fold, pool scores per relation.

    ``pipeline_factory`` is called once per fold. Raises LeakageError if a
    fitting stage touches any test-fold recording.
    """
    all_scores: list[TrialScore | None] = [None] * len(trials)
    for fold_idx, test_fold in enumerate(folds.folds):
        train_trials = [trials[i] for i in folds.train_indices(fold_idx)]
        test_trials = [trials[i] for i in test_fold]
        train_ids = set(trial_recording_ids(train_trials))
        test_ids = set(trial_recording_ids(test_trials))
        pipeline = pipeline_factory()
        with repo.audited() as touched:
            pipeline.fit(repo, train_trials, recordings, seed * 1000 + fold_idx)
        leaked = touched - train_ids
        if leaked & test_ids:
            raise LeakageError(
                f"fold {fold_idx}: fit touched test recordings {sorted(leaked & test_ids)}"
            )
        if leaked:
            raise LeakageError(
                f"fold {fold_idx}: fit touched out-of-fold recordings {sorted(leaked)}"
            )
        for i in test_fold:
            all_scores[i] = TrialScore(trials[i], pipeline.score(repo, trials[i]))
    scored = [s for s in all_scores if s is not None]
    relations = sorted({s.trial.relation for s in scored})
    scoresets = []
    for rel in relations:
        rel_scores = [s for s in scored if s.trial.relation == rel]
        scoresets.append(
            ScoreSet(
                [s.score for s in rel_scores],
                [1 if s.trial.label == "kin" else 0 for s in rel_scores],
                rel,
            )
        )
    report = report_from_scores(method, scoresets, seed)
    return report, scored


def save_scores(scores: list[TrialScore], path) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for s in scores:
            t = s.trial
            fh.write(f"{t.parent_id}\t{t.child_id}\t{t.relation}\t{t.label}\t{s.score:.12g}\n")


def load_scores(path, recordings=None) -> list[TrialScore]:
    out = []
    with Path(path).open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 5:
                raise DataError(f"{path}:{lineno}: expected 5 fields")
            out.append(TrialScore(Trial(*parts[:4]), float(parts[4])))
    return out
