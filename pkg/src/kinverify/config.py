"""Run configuration: `key = value` files with [section] headers.

Shipped defaults follow the reference experimental setup (128-component
UBM, 100-dim i-vectors, LDA to 79, PCA 110/144/130, batch 40, the
per-path learning rates and epoch counts); every value can be overridden
per run. ``KINVERIFY_SEED`` in the environment overrides the configured
seed.
"""

from __future__ import annotations

import configparser
import os
from pathlib import Path

from . import embed
from .errors import DataError

DEFAULTS: dict[str, dict[str, str]] = {
    "run": {
        "method": "gmm_ubm",
        "seed": "0",
        "folds": "5",
        "jobs": "1",
    },
    "gmm": {
        "n_components": "128",   # UBM size
        "em_iters": "20",
        "relevance": "16",
        "max_train_frames": "60000",
    },
    "ivector": {
        "rank": "100",           # i-vector dimensionality
        "lda_dim": "79",
        "tv_iters": "5",
    },
    "face_net": {
        "input_size": "32",
        "conv_channels": "8,16,32",
        "recurrent_width": "128",
        "learning_rate": "1e-5",
        "batch_size": "40",
        "epochs": "3",
        "pca_dim": "110",
    },
    "voice_net": {
        "conv_channels": "4,8,8,16,16",
        "output_dim": "512",
        "learning_rate": "1e-3",
        "batch_size": "40",
        "epochs": "10",
        "pca_dim": "144",
    },
    "fusion": {
        "face_feature": "face_net",
        "voice_feature": "voice_net",
        "early_dim": "144",      # PCA dim per modality, early/late baseline
        "siamese_dim": "130",    # PCA dim per modality before the fusion head
        "learning_rate": "1e-5",
        "batch_size": "40",
        "epochs": "5",
        "margin": "1.0",
    },
    "synth": {
        "n_families": "10",
        "relations": "FS,FD,MS,MD",
        "kin_correlation": "0.85",
        "noise_level": "0.08",
        "n_frames": "5",
        "frame_size": "96",
        "audio_seconds": "3.4",
    },
}


class RunConfig:
    """Layered view over the defaults and an optional config file."""

    def __init__(self, path: str | os.PathLike | None = None,
                 overrides: dict[str, dict[str, str]] | None = None):
        parser = configparser.ConfigParser()
        parser.read_dict(DEFAULTS)
        if path is not None:
            if not Path(path).is_file():
                raise DataError(f"config file not found: {path}")
            parser.read(path)
        if overrides:
            parser.read_dict(overrides)
        self._parser = parser

    def get(self, section: str, key: str) -> str:
        try:
            return self._parser.get(section, key)
        except (configparser.NoSectionError, configparser.NoOptionError) as exc:
            raise DataError(f"missing config value [{section}] {key}") from exc

    def get_int(self, section, key) -> int:
        return int(self.get(section, key))

    def get_float(self, section, key) -> float:
        return float(self.get(section, key))

    def get_ints(self, section, key) -> tuple[int, ...]:
        return tuple(int(v) for v in self.get(section, key).split(","))

    @property
    def seed(self) -> int:
        env = os.environ.get("KINVERIFY_SEED")
        return int(env) if env else self.get_int("run", "seed")

    def train_cfg(self, section: str) -> "embed.TrainConfig":
        return embed.TrainConfig(
            learning_rate=self.get_float(section, "learning_rate"),
            batch_size=self.get_int(section, "batch_size"),
            epochs=self.get_int(section, "epochs"),
            margin=self.get_float(section, "margin")
            if self._parser.has_option(section, "margin") else embed.DEFAULT_MARGIN,
            seed=self.seed,
        )

    def pipeline_kwargs(self, method: str) -> dict:
        """Keyword arguments for pipelines.make_pipeline(method, ...)."""
        from . import pipelines

        if method in ("lbp", "lpq", "bsif", "lbptop"):
            return {}
        if method == "gmm_ubm":
            return {
                "n_components": self.get_int("gmm", "n_components"),
                "em_iters": self.get_int("gmm", "em_iters"),
                "relevance": self.get_float("gmm", "relevance"),
                "max_train_frames": self.get_int("gmm", "max_train_frames"),
            }
        if method == "ivector":
            return {
                "n_components": self.get_int("gmm", "n_components"),
                "em_iters": self.get_int("gmm", "em_iters"),
                "max_train_frames": self.get_int("gmm", "max_train_frames"),
                "rank": self.get_int("ivector", "rank"),
                "lda_dim": self.get_int("ivector", "lda_dim"),
                "tv_iters": self.get_int("ivector", "tv_iters"),
            }
        if method == "face_net":
            return {
                "spec": embed.face_spec(
                    self.get_int("face_net", "input_size"),
                    self.get_ints("face_net", "conv_channels"),
                    self.get_int("face_net", "recurrent_width"),
                ),
                "train_cfg": self.train_cfg("face_net"),
                "pca_dim": self.get_int("face_net", "pca_dim"),
            }
        if method == "voice_net":
            return {
                "spec": embed.voice_spec(
                    conv_channels=self.get_ints("voice_net", "conv_channels"),
                    output_dim=self.get_int("voice_net", "output_dim"),
                ),
                "train_cfg": self.train_cfg("voice_net"),
                "pca_dim": self.get_int("voice_net", "pca_dim"),
            }
        if method in ("early", "late", "siamese_fusion"):
            from .pipelines import make_feature

            def feature(which):
                name = self.get("fusion", which)
                if name == "face_net":
                    return make_feature("face_net",
                                        spec=self.pipeline_kwargs("face_net")["spec"],
                                        train_cfg=self.train_cfg("face_net"))
                if name == "voice_net":
                    return make_feature("voice_net",
                                        spec=self.pipeline_kwargs("voice_net")["spec"],
                                        train_cfg=self.train_cfg("voice_net"))
                if name == "ivector":
                    kw = self.pipeline_kwargs("ivector")
                    kw.pop("lda_dim")
                    return make_feature("ivector", **kw)
                return make_feature(name)

            kwargs = {
                "face_feature": feature("face_feature"),
                "voice_feature": feature("voice_feature"),
            }
            if method == "early":
                kwargs["dim"] = self.get_int("fusion", "early_dim")
            elif method == "siamese_fusion":
                kwargs["dim"] = self.get_int("fusion", "siamese_dim")
                kwargs["train_cfg"] = self.train_cfg("fusion")
            else:
                kwargs["face_pipeline"] = pipelines.CosinePipeline(
                    kwargs.pop("face_feature"))
                kwargs["voice_pipeline"] = pipelines.CosinePipeline(
                    kwargs.pop("voice_feature"))
            return kwargs
        raise DataError(f"unknown method {method!r}")

    def synth_cfg(self):
        from .synth import SynthConfig

        return SynthConfig(
            n_families=self.get_int("synth", "n_families"),
            relations=tuple(self.get("synth", "relations").split(",")),
            kin_correlation=self.get_float("synth", "kin_correlation"),
            noise_level=self.get_float("synth", "noise_level"),
            seed=self.seed,
            n_frames=self.get_int("synth", "n_frames"),
            frame_size=self.get_int("synth", "frame_size"),
            audio_seconds=self.get_float("synth", "audio_seconds"),
        )
