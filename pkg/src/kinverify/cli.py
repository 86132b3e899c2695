"""Command-line entry points.

Verbs: gen-synth, extract, train, score, fuse, evaluate, report.
Exit codes: 0 success, 2 usage, 3 data error, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import core, metrics, pipelines
from .config import RunConfig
from .errors import DataError, DimensionError, KinverifyError, LeakageError, NumericError
from .metrics import ScoreSet
from .pipelines import METHODS, RecordingRepo, TrialScore


def _add_common(p: argparse.ArgumentParser):
    p.add_argument("--seed", type=int, default=None, help="override the config seed")
    p.add_argument("--config", default=None, help="config file (key = value sections)")
    p.add_argument("--out", required=True, help="output directory or file")


def _runconfig(args) -> RunConfig:
    overrides = {}
    if args.seed is not None:
        overrides["run"] = {"seed": str(args.seed)}
    return RunConfig(args.config, overrides)


def cmd_gen_synth(args) -> int:
    from .synth import gen_synthetic

    cfg = _runconfig(args).synth_cfg()
    recordings, kin = gen_synthetic(cfg, args.out)
    trials = core.build_trials(kin, recordings, seed=cfg.seed)
    core.save_trials(trials, Path(args.out) / "trials.tsv")
    print(f"wrote {len(recordings)} recordings, {len(trials)} trials to {args.out}")
    return 0


def _load_corpus(args):
    recordings = core.load_manifest(args.manifest)
    trials = core.load_trials(args.trials) if getattr(args, "trials", None) else None
    if trials:
        core.validate_trials(trials, recordings)
    return recordings, trials


def cmd_extract(args) -> int:
    recordings, _ = _load_corpus(args)
    repo = RecordingRepo(recordings)
    if args.method not in ("lbp", "lpq", "bsif", "lbptop", "mfcc"):
        raise DataError(f"extract supports static features, not {args.method!r}")
    out = {}
    for rec in recordings:
        if args.method == "mfcc":
            out[rec.id] = repo.mfcc(rec.id)
        else:
            out[rec.id] = repo.handcrafted(rec.id, args.method)
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    np.savez(args.out, **out)
    print(f"extracted {args.method} features for {len(out)} recordings -> {args.out}")
    return 0


def cmd_train(args) -> int:
    """Fit the method's trainable stages on all given trials; persist models."""
    from . import gmm as gmm_mod
    from . import ivector as iv_mod

    recordings, trials = _load_corpus(args)
    cfg = _runconfig(args)
    repo = RecordingRepo(recordings)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    pipeline = pipelines.make_pipeline(args.method, **cfg.pipeline_kwargs(args.method))
    pipeline.fit(repo, trials, recordings, cfg.seed)
    n_files = 0
    if isinstance(pipeline, pipelines.GmmUbmPipeline):
        gmm_mod.save_gmm(pipeline.ubm, out / "ubm.kvgm")
        n_files += 1
    if isinstance(pipeline, pipelines.IvectorPipeline):
        iv_mod.save_tv(pipeline.extractor.model, out / "tv.kvtv")
        n_files += 1
    feature = getattr(pipeline, "feature", None)
    net = getattr(feature, "net", None) or getattr(getattr(pipeline, "head", None), "net", None)
    if net is not None:
        from .embed import save_net

        save_net(net, out / "net.kvnn")
        n_files += 1
    pca = getattr(pipeline, "pca", None)
    if pca is not None:
        from .fusion import save_pca

        save_pca(pca, out / "pca.kvpc")
        n_files += 1
    print(f"trained {args.method}; wrote {n_files} model file(s) to {out}")
    return 0


def cmd_score(args) -> int:
    """Cross-validated scoring: fit per training fold, score its test fold."""
    recordings, trials = _load_corpus(args)
    cfg = _runconfig(args)
    repo = RecordingRepo(recordings)
    folds = core.make_folds(trials, recordings, k=cfg.get_int("run", "folds"),
                            seed=cfg.seed)
    kwargs = cfg.pipeline_kwargs(args.method)
    report, scores = pipelines.crossval_run(
        repo, trials, recordings, folds,
        lambda: pipelines.make_pipeline(args.method, **kwargs),
        seed=cfg.seed, method=args.method,
    )
    pipelines.save_scores(scores, args.out)
    print(f"scored {len(scores)} trials with {args.method} -> {args.out}")
    print(f"pooled average EER {report.average_eer:.1f}%")
    return 0


def cmd_fuse(args) -> int:
    from .fusion import late_fuse

    face = pipelines.load_scores(args.scores_face)
    voice = pipelines.load_scores(args.scores_voice)
    if [s.trial for s in face] != [s.trial for s in voice]:
        raise DataError("score files cover different trials")
    fused = [TrialScore(f.trial, late_fuse(f.score, v.score))
             for f, v in zip(face, voice)]
    pipelines.save_scores(fused, args.out)
    print(f"late-fused {len(fused)} scores -> {args.out}")
    return 0


def cmd_evaluate(args) -> int:
    scores = pipelines.load_scores(args.scores)
    relations = sorted({s.trial.relation for s in scores})
    scoresets = [
        ScoreSet(
            [s.score for s in scores if s.trial.relation == rel],
            [1 if s.trial.label == "kin" else 0
             for s in scores if s.trial.relation == rel],
            rel,
        )
        for rel in relations
    ]
    seed = args.seed if args.seed is not None else 0
    report = metrics.report_from_scores(args.method or "scores", scoresets, seed)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    report.save_json(out)
    for rel, m in report.relations.items():
        metrics.write_roc_tsv(m.roc, out.with_suffix(f".roc.{rel}.tsv"))
    print(f"report -> {out} (average EER {report.average_eer:.1f}%)")
    return 0


def cmd_report(args) -> int:
    doc = metrics.load_report(args.report)
    print(f"method: {doc['method']}")
    print(f"{'relation':<10}{'EER %':>8}{'AUC':>8}{'trials':>8}")
    for rel, m in sorted(doc["relations"].items()):
        print(f"{rel:<10}{m['eer_percent']:>8.1f}{m['auc']:>8.3f}{m['n_trials']:>8}")
    print(f"{'average':<10}{doc['average_eer_percent']:>8.1f}"
          f"{doc['average_auc']:>8.3f}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="kinverify",
        description="Audio-visual kinship verification toolkit",
    )
    sub = parser.add_subparsers(dest="verb", required=True)

    p = sub.add_parser("gen-synth", help="generate a synthetic kin corpus")
    _add_common(p)
    p.set_defaults(func=cmd_gen_synth)

    p = sub.add_parser("extract", help="extract static features for a manifest")
    _add_common(p)
    p.add_argument("--manifest", required=True)
    p.add_argument("--method", required=True)
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("train", help="fit a method's models on all given trials")
    _add_common(p)
    p.add_argument("--manifest", required=True)
    p.add_argument("--trials", required=True)
    p.add_argument("--method", required=True, choices=METHODS)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("score", help="cross-validated trial scoring")
    _add_common(p)
    p.add_argument("--manifest", required=True)
    p.add_argument("--trials", required=True)
    p.add_argument("--method", required=True, choices=METHODS)
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("fuse", help="late-fuse two score files")
    _add_common(p)
    p.add_argument("--scores-face", required=True)
    p.add_argument("--scores-voice", required=True)
    p.set_defaults(func=cmd_fuse)

    p = sub.add_parser("evaluate", help="EER/ROC/AUC report from a score file")
    _add_common(p)
    p.add_argument("--scores", required=True)
    p.add_argument("--method", default=None)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("report", help="print a saved report")
    p.add_argument("--report", required=True)
    p.set_defaults(func=cmd_report)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 4
    except (DataError, DimensionError, LeakageError, KinverifyError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
