"""Class and per-sample loss weights, and balanced batch sampling."""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Mapping

import numpy as np

from . import _io
from .errors import BatchTooSmall, EmptyClass, ValidationError, ZeroClassCount
from .ingest import ClassCounts, Diagnosis, SampleManifest

WEIGHTS_HEADER = ("class_index", "weight")


class WeightMode(str, Enum):
    NONE = "none"
    INVERSE_FREQ = "inverse_freq"
    INVERSE_FREQ_OVER_C = "inverse_freq_over_c"


# spellings accepted by the CLI ``--balance`` / ``--mode`` flags
CLI_MODES = {
    "none": WeightMode.NONE,
    "invfreq": WeightMode.INVERSE_FREQ,
    "invfreq-c": WeightMode.INVERSE_FREQ_OVER_C,
}


@dataclass(frozen=True)
class ClassWeights:
    weights: tuple[float, ...]
    mode: WeightMode = WeightMode.NONE

    def __post_init__(self):
        w = tuple(float(x) for x in self.weights)
        if not all(x > 0 and np.isfinite(x) for x in w):
            raise ValidationError("class weights must be finite and strictly positive")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "mode", WeightMode(self.mode))

    @classmethod
    def ones(cls, n_classes: int) -> "ClassWeights":
        return cls((1.0,) * n_classes, WeightMode.NONE)

    def as_array(self) -> np.ndarray:
        return np.array(self.weights)


@dataclass(frozen=True)
class DiagnosisWeights:
    """Loss multipliers per diagnosis type; all 1.0 unless configured."""

    factor: Mapping[Diagnosis, float] = field(default_factory=dict)

    def __post_init__(self):
        full = {d: 1.0 for d in Diagnosis}
        for key, value in dict(self.factor).items():
            value = float(value)
            if not value > 0:
                raise ValidationError(f"diagnosis factor for {key} must be positive, got {value}")
            full[Diagnosis(key)] = value
        object.__setattr__(self, "factor", full)


def class_weights(counts: ClassCounts, mode: WeightMode | str) -> ClassWeights:
    """``N/n_i`` (inverse_freq), ``N/(c*n_i)`` (inverse_freq_over_c) or all ones."""
    mode = WeightMode(mode)
    c = counts.class_count
    if mode is WeightMode.NONE:
        return ClassWeights.ones(c)
    n = counts.as_array()
    if np.any(n == 0):
        zero = [i for i, v in enumerate(counts.counts) if v == 0]
        raise ZeroClassCount(f"class(es) {zero} have no samples")
    N = counts.total
    if mode is WeightMode.INVERSE_FREQ:
        w = N / n
    else:
        w = N / (c * n)
    return ClassWeights(tuple(w.tolist()), mode)


def combined_dataset_weights(primary_counts: ClassCounts, mode: WeightMode | str) -> ClassWeights:
    # Weights always come from the primary dataset, even when secondary data
    # is mixed into training; the secondary set is more imbalanced and would
    # inflate minority weights.
    return class_weights(primary_counts, mode)


def sample_weight(label: int, diagnosis: Diagnosis | str, cw: ClassWeights, dw: DiagnosisWeights) -> float:
    return cw.weights[label] * dw.factor[Diagnosis(diagnosis)]


def sample_weights(manifest: SampleManifest, cw: ClassWeights, dw: DiagnosisWeights) -> np.ndarray:
    return np.array([sample_weight(s.label, s.diagnosis, cw, dw) for s in manifest.samples])


def balanced_batch_indices(
    manifest: SampleManifest, batch_size: int, n_batches: int, seed: int = 0
) -> list[np.ndarray]:
    """Index batches with a near-uniform class histogram.

    Each class gets ``batch_size // C`` slots per batch; the ``batch_size % C``
    leftover slots rotate through the classes from a seeded starting offset.
    Within a class, indices are drawn from a shuffled pass over its samples
    and a fresh shuffle starts once the pass is used up, so small classes are
    oversampled.
    """
    C = manifest.n_classes
    if batch_size < C:
        raise BatchTooSmall(f"batch_size {batch_size} < number of classes {C}")
    labels = manifest.labels
    pools = [np.flatnonzero(labels == c) for c in range(C)]
    empty = [c for c, p in enumerate(pools) if p.size == 0]
    if empty:
        raise EmptyClass(f"class(es) {empty} have no samples to sample from")

    rng = np.random.default_rng(seed)
    base, extra = divmod(batch_size, C)
    offset = int(rng.integers(C))
    streams = [rng.permutation(p) for p in pools]
    cursor = [0] * C

    def draw(c: int, n: int) -> list[int]:
        out = []
        while n:
            if cursor[c] == streams[c].size:
                streams[c] = rng.permutation(pools[c])
                cursor[c] = 0
            take = min(n, streams[c].size - cursor[c])
            out.extend(streams[c][cursor[c] : cursor[c] + take].tolist())
            cursor[c] += take
            n -= take
        return out

    batches = []
    for b in range(n_batches):
        bonus = {(offset + b * extra + j) % C for j in range(extra)}
        idx = []
        for c in range(C):
            idx.extend(draw(c, base + (c in bonus)))
        batches.append(rng.permutation(np.array(idx, dtype=np.int64)))
    return batches


def save_weights(cw: ClassWeights, path) -> None:
    _io.write_csv(path, WEIGHTS_HEADER, [(i, _io.format_float(w)) for i, w in enumerate(cw.weights)])


def load_weights(path) -> ClassWeights:
    _, rows = _io.read_rows(path, WEIGHTS_HEADER)
    pairs = sorted((int(r["class_index"]), float(r["weight"])) for r in rows)
    if [i for i, _ in pairs] != list(range(len(pairs))):
        raise ValidationError(f"{path}: class_index must enumerate 0..C-1")
    weights = tuple(w for _, w in pairs)
    mode = WeightMode.NONE if all(w == 1.0 for w in weights) else WeightMode.INVERSE_FREQ
    return ClassWeights(weights, mode)
