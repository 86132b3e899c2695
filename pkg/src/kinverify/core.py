"""Recordings, trials, cross-validation folds and manifest I/O.

The trial protocol: each relation (FS/FD/MS/MD) gets equally many kin and
non-kin pairs, and the 5 cross-validation folds never share a family.
Because a non-kin trial couples two families, fold assignment works on
family *groups* (connected components of the family graph induced by the
trials), so negative sampling deliberately pairs families in small blocks
to keep those groups fold-sized.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DataError, DimensionError

ROLES = ("father", "mother", "son", "daughter")
RELATIONS = ("FS", "FD", "MS", "MD")

# relation -> (parent role, child role)
RELATION_ROLES = {
    "FS": ("father", "son"),
    "FD": ("father", "daughter"),
    "MS": ("mother", "son"),
    "MD": ("mother", "daughter"),
}


@dataclass(frozen=True)
class Recording:
    """One subject's media (frame sequence and/or audio) plus family metadata."""

    id: str
    family_id: str
    role: str
    frames_path: str | None = None
    audio_path: str | None = None

    def __post_init__(self):
        if self.role not in ROLES:
            raise DataError(f"recording {self.id!r}: unknown role {self.role!r}")
        if self.frames_path is None and self.audio_path is None:
            raise DataError(f"recording {self.id!r}: neither frames nor audio present")


@dataclass(frozen=True)
class Trial:
    """An ordered (parent, child) pair of recording ids with a kin/nonkin label."""

    parent_id: str
    child_id: str
    relation: str
    label: str  # "kin" | "nonkin"

    def __post_init__(self):
        if self.relation not in RELATIONS:
            raise DataError(f"unknown relation {self.relation!r}")
        if self.label not in ("kin", "nonkin"):
            raise DataError(f"unknown label {self.label!r}")
        if self.parent_id == self.child_id:
            raise DataError(f"trial pairs recording {self.parent_id!r} with itself")


@dataclass(frozen=True)
class FoldSplit:
    """Disjoint trial-index sets; distinct folds touch disjoint family sets."""

    folds: tuple[tuple[int, ...], ...]

    def train_indices(self, fold: int) -> tuple[int, ...]:
        return tuple(
            i for j, f in enumerate(self.folds) if j != fold for i in f
        )


@dataclass(frozen=True)
class FeatureVector:
    """Fixed-length real vector with declared dimensionality and provenance."""

    values: np.ndarray
    source: str
    dim: int = field(default=0)

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        object.__setattr__(self, "values", v)
        if v.ndim != 1:
            raise DimensionError(f"feature from {self.source!r} is not a vector")
        if self.dim == 0:
            object.__setattr__(self, "dim", v.shape[0])
        if v.shape[0] != self.dim:
            raise DimensionError(
                f"feature from {self.source!r}: {v.shape[0]} values, declared dim {self.dim}"
            )
        if not np.all(np.isfinite(v)):
            raise DimensionError(f"feature from {self.source!r} has non-finite entries")


def _field(raw: str) -> str | None:
    return None if raw == "-" else raw


def load_manifest(path) -> list[Recording]:
    """Parse a TAB-separated manifest, one recording per line.

    Format: ``id<TAB>family_id<TAB>role<TAB>frames_path<TAB>audio_path``,
    with empty path fields written as ``-``.
    """
    path = Path(path)
    recordings = []
    seen: dict[str, int] = {}
    with path.open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 5:
                raise DataError(
                    f"{path}:{lineno}: expected 5 tab-separated fields, got {len(parts)}"
                )
            rid, fam, role, frames, audio = parts
            if rid in seen:
                raise DataError(
                    f"{path}:{lineno}: duplicate recording id {rid!r} "
                    f"(first seen on line {seen[rid]})"
                )
            seen[rid] = lineno
            try:
                rec = Recording(rid, fam, role, _field(frames), _field(audio))
            except DataError as exc:
                raise DataError(f"{path}:{lineno}: {exc}") from exc
            recordings.append(rec)
    return recordings


def save_manifest(recordings: list[Recording], path) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for r in recordings:
            fh.write(
                "\t".join(
                    [r.id, r.family_id, r.role, r.frames_path or "-", r.audio_path or "-"]
                )
                + "\n"
            )


def load_trials(path) -> list[Trial]:
    """Parse ``parent_id<TAB>child_id<TAB>relation<TAB>label`` lines."""
    path = Path(path)
    trials = []
    with path.open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 4:
                raise DataError(
                    f"{path}:{lineno}: expected 4 tab-separated fields, got {len(parts)}"
                )
            try:
                trials.append(Trial(*parts))
            except DataError as exc:
                raise DataError(f"{path}:{lineno}: {exc}") from exc
    return trials


def save_trials(trials: list[Trial], path) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for t in trials:
            fh.write(f"{t.parent_id}\t{t.child_id}\t{t.relation}\t{t.label}\n")


def validate_trials(trials: list[Trial], recordings: list[Recording]) -> None:
    """Check every trial against the recording metadata."""
    by_id = {r.id: r for r in recordings}
    for t in trials:
        for rid in (t.parent_id, t.child_id):
            if rid not in by_id:
                raise DataError(f"trial references unknown recording {rid!r}")
        parent, child = by_id[t.parent_id], by_id[t.child_id]
        proles = RELATION_ROLES[t.relation]
        if (parent.role, child.role) != proles:
            raise DataError(
                f"trial ({t.parent_id},{t.child_id}) roles ({parent.role},{child.role}) "
                f"inconsistent with relation {t.relation}"
            )
        same = parent.family_id == child.family_id
        if t.label == "kin" and not same:
            raise DataError(f"kin trial ({t.parent_id},{t.child_id}) spans two families")
        if t.label == "nonkin" and same:
            raise DataError(
                f"nonkin trial ({t.parent_id},{t.child_id}) stays within one family"
            )


def build_trials(
    positives: list[Trial],
    recordings: list[Recording],
    seed: int,
) -> list[Trial]:
    """Complete a kin-pair list with equally many cross-family negatives.

    For every relation, the families carrying kin pairs are shuffled
    (deterministically from ``seed``) and grouped into blocks of two; each
    kin pair gets one negative built from its block partner's child. Block
    pairing keeps the family graph in components of at most two families,
    which is what makes family-disjoint k-fold splits feasible downstream.
    """
    if any(t.label != "kin" for t in positives):
        raise DataError("build_trials expects kin-labeled positives only")
    by_id = {r.id: r for r in recordings}
    validate_trials(positives, recordings)

    rng = random.Random(seed)
    negatives: list[Trial] = []
    for relation in RELATIONS:
        rel_pos = [t for t in positives if t.relation == relation]
        if not rel_pos:
            continue
        fams = sorted({by_id[t.parent_id].family_id for t in rel_pos})
        if len(fams) < 2:
            raise DataError(
                f"relation {relation}: only one family, no cross-family negative exists"
            )
        rng.shuffle(fams)
        # blocks of 2 families; odd count -> one block of 3 (cyclic)
        blocks = [fams[i : i + 2] for i in range(0, len(fams) - (len(fams) % 2), 2)]
        if len(fams) % 2:
            blocks[-1].append(fams[-1])
        partner: dict[str, str] = {}
        for block in blocks:
            for i, fam in enumerate(block):
                partner[fam] = block[(i + 1) % len(block)]
        # one representative child per family for this relation
        child_of = {
            by_id[t.parent_id].family_id: t.child_id for t in sorted(
                rel_pos, key=lambda t: t.child_id
            )
        }
        for t in rel_pos:
            fam = by_id[t.parent_id].family_id
            negatives.append(
                Trial(t.parent_id, child_of[partner[fam]], relation, "nonkin")
            )
    out = list(positives) + negatives
    validate_trials(out, recordings)
    return out


def trial_families(trial: Trial, by_id: dict[str, Recording]) -> set[str]:
    return {by_id[trial.parent_id].family_id, by_id[trial.child_id].family_id}


def make_folds(
    trials: list[Trial],
    recordings: list[Recording],
    k: int = 5,
    seed: int = 0,
) -> FoldSplit:
    """Split trials into ``k`` family-disjoint folds of balanced size.

    Families linked by any trial form an indivisible group; groups are
    dealt to folds largest-first, always to the currently smallest fold,
    with ties broken by the group's lexicographically smallest family id.
    """
    if not trials:
        raise DataError("cannot split an empty trial list")
    if k < 2:
        raise DataError("k must be at least 2")
    by_id = {r.id: r for r in recordings}

    # union-find over family ids
    parent: dict[str, str] = {}

    def find(x: str) -> str:
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    for t in trials:
        for fam in trial_families(t, by_id):
            parent.setdefault(fam, fam)
    for t in trials:
        fams = sorted(trial_families(t, by_id))
        if len(fams) == 2:
            ra, rb = find(fams[0]), find(fams[1])
            if ra != rb:
                parent[max(ra, rb)] = min(ra, rb)

    groups: dict[str, list[int]] = {}
    group_fams: dict[str, set[str]] = {}
    for i, t in enumerate(trials):
        root = find(min(trial_families(t, by_id)))
        groups.setdefault(root, []).append(i)
        group_fams.setdefault(root, set()).update(trial_families(t, by_id))

    if len(groups) < k:
        raise DataError(
            f"only {len(groups)} family groups; cannot build {k} disjoint folds"
        )

    order = sorted(
        groups, key=lambda root: (-len(groups[root]), min(group_fams[root]))
    )
    rng = random.Random(seed)
    # shuffle within equal-size runs so different seeds give different splits
    i = 0
    shuffled: list[str] = []
    while i < len(order):
        j = i
        while j < len(order) and len(groups[order[j]]) == len(groups[order[i]]):
            j += 1
        run = order[i:j]
        rng.shuffle(run)
        shuffled.extend(run)
        i = j
    fold_lists: list[list[int]] = [[] for _ in range(k)]
    for root in shuffled:
        target = min(
            range(k), key=lambda f: (len(fold_lists[f]), f)
        )
        fold_lists[target].extend(groups[root])
    return FoldSplit(tuple(tuple(sorted(f)) for f in fold_lists))


def fold_family_sets(
    split: FoldSplit, trials: list[Trial], recordings: list[Recording]
) -> list[set[str]]:
    by_id = {r.id: r for r in recordings}
    return [
        set().union(*(trial_families(trials[i], by_id) for i in fold)) if fold else set()
        for fold in split.folds
    ]
