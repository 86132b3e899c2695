import json
import os

import numpy as np
import pytest

from kinverify import cli, core
from kinverify.config import RunConfig
from kinverify.errors import DataError
from kinverify.synth import SynthConfig, gen_synthetic


class TestSynth:
    def test_corpus_structure(self, tiny_corpus):
        out, recordings, trials = tiny_corpus
        assert len(recordings) == 2 * 6 * 2  # 2 relations x 6 families x 2 subjects
        core.validate_trials(trials, recordings)
        kin = [t for t in trials if t.label == "kin"]
        non = [t for t in trials if t.label == "nonkin"]
        assert len(kin) == len(non) == 12
        for rec in recordings:
            assert os.path.isdir(rec.frames_path)
            assert os.path.isfile(rec.audio_path)
        assert core.load_manifest(out / "manifest.tsv") == recordings

    def test_byte_identical_regeneration(self, tmp_path):
        cfg = SynthConfig(n_families=2, relations=("FS",), seed=11,
                          n_frames=2, frame_size=32, audio_seconds=3.2)
        dirs = []
        for name in ("a", "b"):
            d = tmp_path / name
            gen_synthetic(cfg, d)
            dirs.append(d)
        files_a = sorted(p.relative_to(dirs[0]) for p in dirs[0].rglob("*") if p.is_file())
        files_b = sorted(p.relative_to(dirs[1]) for p in dirs[1].rglob("*") if p.is_file())
        assert files_a == files_b
        for rel in files_a:
            if rel.name == "manifest.tsv":
                continue  # holds absolute paths, differs by output directory
            assert (dirs[0] / rel).read_bytes() == (dirs[1] / rel).read_bytes()

    def test_different_seeds_differ(self, tmp_path):
        waves = []
        for seed in (1, 2):
            cfg = SynthConfig(n_families=2, relations=("FS",), seed=seed,
                              n_frames=1, frame_size=32, audio_seconds=3.2)
            d = tmp_path / f"s{seed}"
            gen_synthetic(cfg, d)
            waves.append((d / "FS0000_p.wav").read_bytes())
        assert waves[0] != waves[1]

    def test_kin_latents_more_similar_than_nonkin(self, tiny_corpus):
        # kin frames correlate more than non-kin frames on average
        from kinverify.media import read_frames

        out, recordings, trials = tiny_corpus

        def mean_frame(rec_id):
            return read_frames(out / rec_id).astype(float).mean(axis=0).ravel()

        def corr(a, b):
            a, b = a - a.mean(), b - b.mean()
            return float(a @ b / (np.linalg.norm(a) * np.linalg.norm(b)))

        kin = [corr(mean_frame(t.parent_id), mean_frame(t.child_id))
               for t in trials if t.label == "kin"]
        non = [corr(mean_frame(t.parent_id), mean_frame(t.child_id))
               for t in trials if t.label == "nonkin"]
        assert np.mean(kin) > np.mean(non) + 0.05

    def test_config_validation(self):
        with pytest.raises(DataError):
            SynthConfig(n_families=1)
        with pytest.raises(DataError):
            SynthConfig(kin_correlation=1.5)
        with pytest.raises(DataError):
            SynthConfig(relations=("FS", "XX"))


class TestRunConfig:
    def test_defaults_present(self):
        cfg = RunConfig()
        assert cfg.get_int("gmm", "n_components") == 128
        assert cfg.get_int("ivector", "rank") == 100
        assert cfg.get_int("ivector", "lda_dim") == 79
        assert cfg.get_int("face_net", "pca_dim") == 110
        assert cfg.get_int("voice_net", "pca_dim") == 144
        assert cfg.get_int("fusion", "siamese_dim") == 130
        assert cfg.get_float("face_net", "learning_rate") == 1e-5
        assert cfg.get_int("voice_net", "epochs") == 10
        assert cfg.get_int("run", "folds") == 5

    def test_file_overrides(self, tmp_path):
        path = tmp_path / "run.cfg"
        path.write_text("[gmm]\nn_components = 8\n")
        cfg = RunConfig(path)
        assert cfg.get_int("gmm", "n_components") == 8
        assert cfg.get_int("ivector", "rank") == 100  # untouched default

    def test_env_seed_override(self, monkeypatch):
        monkeypatch.setenv("KINVERIFY_SEED", "99")
        assert RunConfig().seed == 99
        monkeypatch.delenv("KINVERIFY_SEED")
        assert RunConfig().seed == 0

    def test_missing_file_rejected(self):
        with pytest.raises(DataError, match="not found"):
            RunConfig("/nonexistent/run.cfg")

    def test_missing_key_rejected(self):
        with pytest.raises(DataError, match="missing config"):
            RunConfig().get("gmm", "nope")

    def test_pipeline_kwargs_cover_all_methods(self):
        from kinverify.pipelines import METHODS, make_pipeline

        cfg = RunConfig()
        for method in METHODS:
            pipe = make_pipeline(method, **cfg.pipeline_kwargs(method))
            assert pipe is not None


class TestCli:
    @pytest.fixture(scope="class")
    @staticmethod
    def corpus(tmp_path_factory):
        out = tmp_path_factory.mktemp("cli_corpus")
        cfg_path = out / "run.cfg"
        cfg_path.write_text(
            "[synth]\n"
            "n_families = 4\nrelations = FS\nn_frames = 2\nframe_size = 32\n"
            "audio_seconds = 3.2\n"
            "[run]\nfolds = 2\n"
            "[gmm]\nn_components = 2\nem_iters = 3\nmax_train_frames = 2000\n"
        )
        rc = cli.main(["gen-synth", "--config", str(cfg_path), "--out", str(out / "data")])
        assert rc == 0
        return out, cfg_path

    def test_gen_synth_outputs(self, corpus):
        out, _ = corpus
        recs = core.load_manifest(out / "data" / "manifest.tsv")
        trials = core.load_trials(out / "data" / "trials.tsv")
        core.validate_trials(trials, recs)
        assert len(trials) == 8

    def test_extract(self, corpus, tmp_path):
        out, cfg_path = corpus
        feat_path = tmp_path / "lbp.npz"
        rc = cli.main([
            "extract", "--manifest", str(out / "data" / "manifest.tsv"),
            "--method", "lbp", "--config", str(cfg_path), "--out", str(feat_path),
        ])
        assert rc == 0
        data = np.load(feat_path)
        assert len(data.files) == 8
        assert data[data.files[0]].shape == (2832,)

    def test_score_evaluate_report(self, corpus, tmp_path, capsys):
        out, cfg_path = corpus
        scores_path = tmp_path / "scores.tsv"
        rc = cli.main([
            "score", "--manifest", str(out / "data" / "manifest.tsv"),
            "--trials", str(out / "data" / "trials.tsv"),
            "--method", "gmm_ubm", "--config", str(cfg_path),
            "--out", str(scores_path),
        ])
        assert rc == 0
        report_path = tmp_path / "report.json"
        rc = cli.main([
            "evaluate", "--scores", str(scores_path), "--method", "gmm_ubm",
            "--out", str(report_path),
        ])
        assert rc == 0
        doc = json.loads(report_path.read_text())
        assert "FS" in doc["relations"]
        assert report_path.with_suffix(".roc.FS.tsv").exists()
        rc = cli.main(["report", "--report", str(report_path)])
        assert rc == 0
        assert "average" in capsys.readouterr().out

    def test_train_writes_models(self, corpus, tmp_path):
        out, cfg_path = corpus
        model_dir = tmp_path / "models"
        rc = cli.main([
            "train", "--manifest", str(out / "data" / "manifest.tsv"),
            "--trials", str(out / "data" / "trials.tsv"),
            "--method", "gmm_ubm", "--config", str(cfg_path),
            "--out", str(model_dir),
        ])
        assert rc == 0
        assert (model_dir / "ubm.kvgm").exists()

    def test_fuse_averages(self, corpus, tmp_path):
        out, cfg_path = corpus
        trials = core.load_trials(out / "data" / "trials.tsv")
        from kinverify.pipelines import TrialScore, load_scores, save_scores

        a = [TrialScore(t, float(i)) for i, t in enumerate(trials)]
        b = [TrialScore(t, float(2 * i)) for i, t in enumerate(trials)]
        save_scores(a, tmp_path / "a.tsv")
        save_scores(b, tmp_path / "b.tsv")
        rc = cli.main([
            "fuse", "--scores-face", str(tmp_path / "a.tsv"),
            "--scores-voice", str(tmp_path / "b.tsv"),
            "--out", str(tmp_path / "fused.tsv"),
        ])
        assert rc == 0
        fused = load_scores(tmp_path / "fused.tsv")
        for i, s in enumerate(fused):
            assert s.score == pytest.approx(1.5 * i)

    def test_usage_error_exits_2(self):
        with pytest.raises(SystemExit) as exc:
            cli.main(["score"])  # missing required args
        assert exc.value.code == 2

    def test_data_error_exits_3(self, tmp_path, capsys):
        rc = cli.main([
            "score", "--manifest", str(tmp_path / "missing.tsv"),
            "--trials", str(tmp_path / "missing2.tsv"),
            "--method", "lbp", "--out", str(tmp_path / "s.tsv"),
        ])
        assert rc == 3
        assert "error" in capsys.readouterr().err

    def test_seed_flag_overrides_config(self, corpus, tmp_path):
        out, cfg_path = corpus
        paths = []
        for seed in (5, 6):
            p = tmp_path / f"scores{seed}.tsv"
            rc = cli.main([
                "score", "--manifest", str(out / "data" / "manifest.tsv"),
                "--trials", str(out / "data" / "trials.tsv"),
                "--method", "gmm_ubm", "--config", str(cfg_path),
                "--seed", str(seed), "--out", str(p),
            ])
            assert rc == 0
            paths.append(p)
        assert paths[0].read_bytes() != paths[1].read_bytes()
