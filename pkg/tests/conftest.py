"""Shared fixtures: a tiny synthetic corpus and its derived structures.

Also collects the acceptance suite's verdict lines and replays them after
the run, outside pytest's output capture.
"""

import numpy as np
import pytest

from kinverify import core
from kinverify.synth import SynthConfig, gen_synthetic

ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def tiny_corpus(tmp_path_factory):
    """Six FS + six MD families, small media; returns (dir, recordings, trials)."""
    out = tmp_path_factory.mktemp("tiny_corpus")
    cfg = SynthConfig(
        n_families=6,
        relations=("FS", "MD"),
        kin_correlation=0.9,
        seed=7,
        n_frames=3,
        frame_size=48,
        audio_seconds=3.2,
    )
    recordings, kin = gen_synthetic(cfg, out)
    trials = core.build_trials(kin, recordings, seed=7)
    return out, recordings, trials


@pytest.fixture()
def rng():
    return np.random.default_rng(20260823)
