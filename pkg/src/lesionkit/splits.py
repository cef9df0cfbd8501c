"""Group-atomic, class-stratified k-fold assignment."""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Mapping

import numpy as np

from . import _io
from .errors import FoldOutOfRange, TooFewGroups, ValidationError
from .ingest import Dataset, SampleManifest

FOLDS_HEADER = ("sample_id", "fold")


class SecondaryPolicy(str, Enum):
    EXCLUDE = "exclude"
    ADD_TO_TRAIN = "add_to_train"


@dataclass(frozen=True)
class FoldAssignment:
    k: int
    fold_of: Mapping[str, int]
    seed: int = 0

    def folds(self) -> list[list[str]]:
        out: list[list[str]] = [[] for _ in range(self.k)]
        for sid, f in self.fold_of.items():
            out[f].append(sid)
        return out


def stratified_group_kfold(manifest: SampleManifest, k: int, seed: int = 0) -> FoldAssignment:
    """Assign whole groups to ``k`` folds, balancing per-fold class histograms.

    Groups are visited largest first (equal sizes in seeded random order) and
    each goes to the fold whose squared deviation from the per-fold target
    histogram grows least.  Remaining ties go to the fold with fewer samples,
    then the lower index.  Once the number of unplaced groups equals the
    number of empty folds, groups are forced into empty folds so that none
    stays empty.  Only primary-dataset samples receive a fold.
    """
    if k < 2:
        raise ValidationError(f"k must be >= 2, got {k}")
    primary = [s for s in manifest.samples if s.dataset is Dataset.PRIMARY]
    group_order: dict[str, int] = {}
    members: list[list[int]] = []
    for i, s in enumerate(primary):
        g = group_order.setdefault(s.group_id, len(group_order))
        if g == len(members):
            members.append([])
        members[g].append(i)
    n_groups = len(members)
    if n_groups < k:
        raise TooFewGroups(f"{n_groups} group(s) cannot fill {k} folds")

    C = manifest.n_classes
    labels = np.array([s.label for s in primary], dtype=np.int64)
    hist = np.zeros((n_groups, C))
    for g, idx in enumerate(members):
        np.add.at(hist[g], labels[idx], 1.0)
    target = hist.sum(axis=0) / k

    rng = np.random.default_rng(seed)
    order = rng.permutation(n_groups)
    sizes = np.array([len(m) for m in members])
    order = order[np.argsort(-sizes[order], kind="stable")]

    fold_hist = np.zeros((k, C))
    fold_size = np.zeros(k, dtype=np.int64)
    group_fold = np.empty(n_groups, dtype=np.int64)
    n_empty = k
    for remaining, g in zip(range(n_groups, 0, -1), order):
        gh = hist[g]
        # growth of sum((h + g - t)^2) relative to sum((h - t)^2)
        delta = (gh * (2.0 * (fold_hist - target) + gh)).sum(axis=1)
        candidates = np.arange(k)
        if remaining <= n_empty:
            candidates = candidates[fold_size == 0]
        best = min(candidates, key=lambda f: (delta[f], fold_size[f], f))
        if fold_size[best] == 0:
            n_empty -= 1
        fold_hist[best] += gh
        fold_size[best] += sizes[g]
        group_fold[g] = best

    fold_of = {s.sample_id: int(group_fold[group_order[s.group_id]]) for s in primary}
    return FoldAssignment(k, fold_of, seed)


def fold_split(
    assignment: FoldAssignment,
    fold: int,
    manifest: SampleManifest,
    secondary_policy: SecondaryPolicy | str = SecondaryPolicy.EXCLUDE,
) -> tuple[list[str], list[str]]:
    """Return ``(train_ids, validation_ids)`` in manifest order.

    Validation holds only primary-dataset samples of ``fold``.  Secondary
    samples join the training side under ``add_to_train`` and are dropped
    otherwise.
    """
    if not 0 <= fold < assignment.k:
        raise FoldOutOfRange(f"fold {fold} not in [0, {assignment.k})")
    policy = SecondaryPolicy(secondary_policy)
    train, val = [], []
    for s in manifest.samples:
        if s.dataset is Dataset.SECONDARY:
            if policy is SecondaryPolicy.ADD_TO_TRAIN:
                train.append(s.sample_id)
            continue
        try:
            f = assignment.fold_of[s.sample_id]
        except KeyError:
            raise ValidationError(f"sample {s.sample_id!r} has no fold") from None
        (val if f == fold else train).append(s.sample_id)
    return train, val


def save_folds(assignment: FoldAssignment, manifest: SampleManifest, path) -> None:
    rows = [(sid, assignment.fold_of[sid]) for sid in manifest.sample_ids if sid in assignment.fold_of]
    _io.write_csv(path, FOLDS_HEADER, rows)


def load_folds(path, seed: int = 0) -> FoldAssignment:
    _, rows = _io.read_rows(path, FOLDS_HEADER)
    fold_of = {}
    for r in rows:
        try:
            fold_of[r["sample_id"].strip()] = int(r["fold"])
        except ValueError:
            raise ValidationError(f"{path}: non-integer fold {r['fold']!r}") from None
    if not fold_of:
        raise ValidationError(f"{path}: empty fold file")
    k = max(fold_of.values()) + 1
    if min(fold_of.values()) < 0 or len(set(fold_of.values())) != k:
        raise ValidationError(f"{path}: folds must be 0..k-1 and all non-empty")
    return FoldAssignment(k, fold_of, seed)
