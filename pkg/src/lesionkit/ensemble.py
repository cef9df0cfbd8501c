"""Model combination, exhaustive subset search and the final-prediction pipeline."""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Optional, Sequence

import numpy as np

from . import _io
from ._backend import kernels, num_threads
from .cropper import flatten_crops
from .errors import EmptyEnsemble, LengthMismatch, ShapeMismatch, ValidationError
from .metrics import confusion_matrix, wacc

ENSEMBLE_HEADER = ("model_id", "weight", "kind")


class Rule(str, Enum):
    AVERAGE = "average"
    VOTE = "vote"


class Kind(str, Enum):
    FULL = "full"
    CV = "cv"


@dataclass(frozen=True)
class Member:
    model_id: str
    weight: float = 1.0
    kind: Kind = Kind.CV

    def __post_init__(self):
        if not self.weight > 0:
            raise ValidationError(f"member {self.model_id!r}: weight must be positive")
        object.__setattr__(self, "kind", Kind(self.kind))
        object.__setattr__(self, "weight", float(self.weight))


@dataclass(frozen=True)
class EnsembleSpec:
    members: tuple[Member, ...]
    rule: Rule = Rule.AVERAGE

    def __post_init__(self):
        if not self.members:
            raise EmptyEnsemble("an ensemble needs at least one member")
        object.__setattr__(self, "members", tuple(self.members))
        object.__setattr__(self, "rule", Rule(self.rule))

    @property
    def model_ids(self) -> list[str]:
        return [m.model_id for m in self.members]

    @property
    def weights(self) -> np.ndarray:
        return np.array([m.weight for m in self.members])


def _check_stack(preds: np.ndarray, weights) -> tuple[np.ndarray, np.ndarray]:
    preds = np.asarray(preds, dtype=np.float64)
    if preds.ndim != 3 or preds.shape[0] == 0:
        raise EmptyEnsemble(f"expected a non-empty M x S x C stack, got shape {preds.shape}")
    weights = np.asarray(weights, dtype=np.float64).ravel()
    if weights.size != preds.shape[0]:
        raise LengthMismatch(f"{weights.size} weights for {preds.shape[0]} models")
    if not np.all(weights > 0):
        raise ValidationError("ensemble weights must be positive")
    return preds, weights


def combine_average(preds: np.ndarray, weights: Optional[Sequence[float]] = None) -> np.ndarray:
    """Weighted mean over models.

    Models are accumulated in order and divided by the running weight total at
    the end; the subset search kernel uses the same order, so a unit-weight
    subset scores identically here and there.
    """
    preds = np.asarray(preds, dtype=np.float64)
    if weights is None:
        weights = np.ones(preds.shape[0] if preds.ndim == 3 else 0)
    preds, weights = _check_stack(preds, weights)
    acc = weights[0] * preds[0]
    total = float(weights[0])
    for w, p in zip(weights[1:], preds[1:]):
        acc = acc + w * p
        total = total + float(w)
    return acc / total


def combine_vote(preds: np.ndarray, weights: Optional[Sequence[float]] = None) -> np.ndarray:
    """One-hot of the class with the most weighted votes; ties to the lowest index."""
    preds = np.asarray(preds, dtype=np.float64)
    if weights is None:
        weights = np.ones(preds.shape[0] if preds.ndim == 3 else 0)
    preds, weights = _check_stack(preds, weights)
    M, S, C = preds.shape
    votes = np.zeros((S, C))
    rows = np.arange(S)
    for w, p in zip(weights, preds):
        votes[rows, p.argmax(axis=1)] += w
    out = np.zeros((S, C))
    out[rows, votes.argmax(axis=1)] = 1.0
    return out


def combine(preds: np.ndarray, weights=None, rule: Rule | str = Rule.AVERAGE) -> np.ndarray:
    return combine_average(preds, weights) if Rule(rule) is Rule.AVERAGE else combine_vote(preds, weights)


def _crop_mean(preds: np.ndarray) -> np.ndarray:
    preds = np.asarray(preds, dtype=np.float64)
    if preds.ndim == 4:
        return preds.mean(axis=2)
    if preds.ndim == 3:
        return preds
    raise ShapeMismatch(f"expected M x S x C or M x S x R x C predictions, got shape {preds.shape}")


@dataclass(frozen=True)
class SubsetSearchResult:
    spec: EnsembleSpec
    members: tuple[int, ...]  # model indices, ascending
    wacc: float
    n_evaluated: int
    ranking: tuple[int, ...]  # all model indices, best individual WACC first
    individual_wacc: tuple[float, ...]


def subset_search(
    preds: np.ndarray,
    truth: Sequence[int],
    top_k: int = 15,
    rule: Rule | str = Rule.AVERAGE,
    model_ids: Optional[Sequence[str]] = None,
    kinds: Optional[Sequence[Kind | str]] = None,
    n_threads: Optional[int] = None,
) -> SubsetSearchResult:
    """Best unit-weight subset among the ``top_k`` individually strongest models.

    ``preds`` is ``M x S x C`` or ``M x S x R x C`` (crops are averaged first).
    Models are ranked by their own WACC (ties keep input order); every
    non-empty subset of the top ``min(top_k, M)`` is scored under ``rule``.
    Among equal scores the smaller subset wins, then the lexicographically
    smaller tuple of model indices.
    """
    rule = Rule(rule)
    P = _crop_mean(preds)
    M, S, C = P.shape
    if M == 0:
        raise EmptyEnsemble("no models to search")
    truth = np.ascontiguousarray(truth, dtype=np.int64).ravel()
    if truth.size != S:
        raise LengthMismatch(f"{truth.size} labels for {S} samples")
    if top_k < 1:
        raise ValidationError(f"top_k must be >= 1, got {top_k}")
    model_ids = [str(i) for i in range(M)] if model_ids is None else list(model_ids)
    kinds = [Kind.CV] * M if kinds is None else [Kind(k) for k in kinds]
    if len(model_ids) != M or len(kinds) != M:
        raise LengthMismatch("model_ids/kinds must have one entry per model")

    individual = [wacc(confusion_matrix(truth, (P[m] / 1.0).argmax(axis=1), C)) for m in range(M)]
    support = np.bincount(truth, minlength=C).astype(np.float64)  # wacc above already rejected empty classes
    ranking = sorted(range(M), key=lambda m: -individual[m])
    # kernel bit j <-> top[j]; ascending index order keeps summation order
    # identical to combine_average over the same members
    top = sorted(ranking[: min(top_k, M)])
    K = len(top)
    threads = num_threads() if n_threads is None else max(1, int(n_threads))

    if rule is Rule.AVERAGE:
        scores = kernels.subset_wacc_average(np.ascontiguousarray(P[top]), truth, support, threads)
    else:
        winners = np.ascontiguousarray(P[top].argmax(axis=2), dtype=np.int64)
        scores = kernels.subset_wacc_vote(winners, truth, support, C, threads)
    scores = np.asarray(scores)
    n_evaluated = int(np.count_nonzero(~np.isnan(scores[1:])))

    best = np.nanmax(scores[1:])
    tied = np.flatnonzero(scores == best)

    def members_of(mask: int) -> tuple[int, ...]:
        return tuple(sorted(top[j] for j in range(K) if mask >> j & 1))

    chosen = min((members_of(int(mask)) for mask in tied), key=lambda ms: (len(ms), ms))
    spec = EnsembleSpec(tuple(Member(model_ids[m], 1.0, kinds[m]) for m in chosen), rule)
    return SubsetSearchResult(spec, chosen, float(best), n_evaluated, tuple(ranking), tuple(individual))


def ensemble_weights(n_full: int, n_cv: int, full_weight: float = 5.0) -> np.ndarray:
    return np.array([float(full_weight)] * n_full + [1.0] * n_cv)


def final_predict(
    full_preds: Optional[np.ndarray],
    cv_preds: Optional[np.ndarray],
    meta=None,
    full_weight: float = 5.0,
) -> np.ndarray:
    """Final ``S x C`` prediction.

    Fully trained models are averaged over crops.  CV models go through the
    meta-learner (one-hot of its decision) when one is given, otherwise they
    are averaged over crops too.  All models are then averaged with weight
    ``full_weight`` for full models and 1 for CV models.
    """
    parts = []
    shapes = []
    for name, arr in (("full", full_preds), ("cv", cv_preds)):
        if arr is None:
            arr = np.empty((0, 0, 0, 0))
        arr = np.asarray(arr, dtype=np.float64)
        if arr.ndim != 4:
            raise ShapeMismatch(f"{name} predictions must be N x S x R x C, got shape {arr.shape}")
        parts.append(arr)
        if arr.shape[0]:
            shapes.append((arr.shape[1], arr.shape[3]))
    full, cv = parts
    if not shapes:
        raise EmptyEnsemble("no models given")
    if len(set(shapes)) != 1:
        raise ShapeMismatch(f"full and cv predictions disagree on (samples, classes): {shapes}")
    if full_weight <= 0:
        raise ValidationError(f"full_weight must be positive, got {full_weight}")
    S, C = shapes[0]

    stack = [full[m].mean(axis=1) for m in range(full.shape[0])]
    for m in range(cv.shape[0]):
        if meta is None:
            stack.append(cv[m].mean(axis=1))
            continue
        if meta.n_classes != C:
            raise ShapeMismatch(f"meta-model has {meta.n_classes} classes, predictions have {C}")
        feats = np.stack([flatten_crops(cv[m, s]) for s in range(S)])
        dims = {sv.support_vectors.shape[1] for sv in meta.models if sv.support_vectors.size}
        if dims and dims != {feats.shape[1]}:
            raise ShapeMismatch(f"meta-model expects {dims.pop()} features, crops give {feats.shape[1]}")
        stack.append(meta.predict_onehot(feats))
    return combine_average(np.stack(stack), ensemble_weights(full.shape[0], cv.shape[0], full_weight))


def save_ensemble(spec: EnsembleSpec, path) -> None:
    _io.write_csv(path, ENSEMBLE_HEADER, [(m.model_id, _io.format_float(m.weight), m.kind.value) for m in spec.members])


def load_ensemble(path, rule: Rule | str = Rule.AVERAGE) -> EnsembleSpec:
    _, rows = _io.read_rows(path, ENSEMBLE_HEADER)
    try:
        members = tuple(Member(r["model_id"].strip(), float(r["weight"]), r["kind"].strip()) for r in rows)
    except ValueError as exc:
        raise ValidationError(f"{path}: {exc}") from None
    return EnsembleSpec(members, rule)


def final_header(n_classes: int) -> list[str]:
    return ["sample_id"] + [f"p_{c}" for c in range(n_classes)] + ["argmax"]


def save_final(sample_ids: Sequence[str], probs: np.ndarray, path) -> None:
    probs = np.asarray(probs)
    rows = [
        [sid] + [_io.format_float(p) for p in row] + [int(row.argmax())]
        for sid, row in zip(sample_ids, probs)
    ]
    _io.write_csv(path, final_header(probs.shape[1]), rows)


def load_final(path) -> tuple[list[str], np.ndarray]:
    header, rows = _io.read_rows(path, ("sample_id", "argmax"))
    cols = [h for h in header if h.startswith("p_")]
    try:
        probs = np.array([[float(r[c]) for c in cols] for r in rows]).reshape(len(rows), len(cols))
    except ValueError as exc:
        raise ValidationError(f"{path}: {exc}") from None
    return [r["sample_id"].strip() for r in rows], probs
