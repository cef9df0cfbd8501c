"""Sample manifests, class-count tables and prediction tensors.

All three live on disk as CSV with fixed headers::

    manifest.csv     sample_id,group_id,label,diagnosis,dataset
    predictions.csv  model_id,sample_id,crop_index,p_0,...,p_{C-1}
    counts.csv       class_index,count

Probabilities are written with 9 significant digits.  Rows that are not
stochastic within 1e-6 are rejected on load, never renormalized.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Optional, Sequence

import numpy as np

from . import _io
from .errors import (
    ClassCountMismatch,
    DuplicateSampleId,
    EmptySelection,
    IncompleteTensor,
    LabelOutOfRange,
    MissingColumn,
    RaggedCrops,
    RowNotStochastic,
    UnknownSampleId,
    ValidationError,
)

STOCHASTIC_TOL = 1e-6

MANIFEST_HEADER = ("sample_id", "group_id", "label", "diagnosis", "dataset")
COUNTS_HEADER = ("class_index", "count")


class Diagnosis(str, Enum):
    CONSENSUS = "consensus"
    SERIAL_IMAGING = "serial_imaging"
    CONFOCAL = "confocal"
    HISTOPATHOLOGY = "histopathology"
    UNKNOWN = "unknown"


class Dataset(str, Enum):
    PRIMARY = "primary"
    SECONDARY = "secondary"


@dataclass(frozen=True)
class Sample:
    sample_id: str
    group_id: str
    label: int
    diagnosis: Diagnosis = Diagnosis.UNKNOWN
    dataset: Dataset = Dataset.PRIMARY


@dataclass(frozen=True)
class SampleManifest:
    samples: tuple[Sample, ...]
    n_classes: int
    _index: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        index = {}
        for i, s in enumerate(self.samples):
            if s.sample_id in index:
                raise DuplicateSampleId(f"duplicate sample_id {s.sample_id!r}")
            index[s.sample_id] = i
            if not 0 <= s.label < self.n_classes:
                raise LabelOutOfRange(
                    f"sample {s.sample_id!r}: label {s.label} not in [0, {self.n_classes})"
                )
        object.__setattr__(self, "_index", index)

    @classmethod
    def from_records(cls, records, n_classes: Optional[int] = None) -> "SampleManifest":
        """Build a manifest from ``(sample_id, group_id, label[, diagnosis[, dataset]])`` tuples."""
        samples = []
        for rec in records:
            sid, gid, label, *rest = rec
            diagnosis = Diagnosis(rest[0]) if len(rest) > 0 else Diagnosis.UNKNOWN
            dataset = Dataset(rest[1]) if len(rest) > 1 else Dataset.PRIMARY
            samples.append(Sample(str(sid), str(gid), int(label), diagnosis, dataset))
        if n_classes is None:
            n_classes = max((s.label for s in samples), default=-1) + 1
        return cls(tuple(samples), int(n_classes))

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def sample_ids(self) -> list[str]:
        return [s.sample_id for s in self.samples]

    @property
    def labels(self) -> np.ndarray:
        return np.array([s.label for s in self.samples], dtype=np.int64)

    @property
    def groups(self) -> list[str]:
        return [s.group_id for s in self.samples]

    def index_of(self, sample_id: str) -> int:
        try:
            return self._index[sample_id]
        except KeyError:
            raise UnknownSampleId(f"sample_id {sample_id!r} not in manifest") from None

    def __contains__(self, sample_id) -> bool:
        return sample_id in self._index

    def subset(self, sample_ids: Sequence[str]) -> "SampleManifest":
        return SampleManifest(tuple(self.samples[self.index_of(s)] for s in sample_ids), self.n_classes)


@dataclass(frozen=True)
class ClassCounts:
    counts: tuple[int, ...]

    def __post_init__(self):
        if any(int(c) < 0 for c in self.counts):
            raise ValidationError("class counts must be non-negative")
        object.__setattr__(self, "counts", tuple(int(c) for c in self.counts))

    @property
    def total(self) -> int:
        return sum(self.counts)

    @property
    def class_count(self) -> int:
        return len(self.counts)

    def as_array(self) -> np.ndarray:
        return np.array(self.counts, dtype=np.int64)


@dataclass(frozen=True, eq=False)
class PredictionTensor:
    """Probabilities indexed ``(model, sample, crop, class)``."""

    model_ids: tuple[str, ...]
    sample_ids: tuple[str, ...]
    values: np.ndarray

    def __post_init__(self):
        values = np.array(self.values, dtype=np.float64)
        if values.ndim != 4:
            raise ValidationError(f"prediction tensor must be 4-d, got shape {values.shape}")
        if values.shape[:2] != (len(self.model_ids), len(self.sample_ids)):
            raise ValidationError("model/sample id lists do not match tensor shape")
        if not np.all(np.isfinite(values)) or values.min(initial=0.0) < 0 or values.max(initial=0.0) > 1:
            raise RowNotStochastic("probabilities must lie in [0, 1]")
        dev = np.abs(values.sum(axis=-1) - 1.0)
        if dev.size and dev.max() > STOCHASTIC_TOL:
            m, s, r = np.unravel_index(int(dev.argmax()), dev.shape)
            raise RowNotStochastic(
                f"row (model {self.model_ids[m]!r}, sample {self.sample_ids[s]!r}, crop {r}) "
                f"sums to {values[m, s, r].sum():.9g}"
            )
        values.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "model_ids", tuple(self.model_ids))
        object.__setattr__(self, "sample_ids", tuple(self.sample_ids))

    @property
    def shape(self) -> tuple[int, int, int, int]:
        return self.values.shape

    @property
    def n_classes(self) -> int:
        return self.values.shape[3]

    def select_models(self, model_ids: Sequence[str]) -> "PredictionTensor":
        idx = [self.model_ids.index(m) for m in model_ids]
        return PredictionTensor(tuple(model_ids), self.sample_ids, self.values[idx])


def _parse_int(text: str, what: str) -> int:
    try:
        return int(text)
    except (TypeError, ValueError):
        raise ValidationError(f"{what}: expected an integer, got {text!r}") from None


def load_manifest(path, n_classes: Optional[int] = None) -> SampleManifest:
    """Load ``manifest.csv``.

    ``n_classes`` declares C; when omitted it is inferred as ``max(label) + 1``.
    The ``diagnosis`` and ``dataset`` columns are optional.
    """
    _, rows = _io.read_rows(path, ("sample_id", "group_id", "label"))
    samples = []
    for line, row in enumerate(rows, start=2):
        try:
            diagnosis = Diagnosis((row.get("diagnosis") or "unknown").strip())
            dataset = Dataset((row.get("dataset") or "primary").strip())
        except ValueError as exc:
            raise ValidationError(f"{path}:{line}: {exc}") from None
        samples.append(
            Sample(
                row["sample_id"].strip(),
                row["group_id"].strip(),
                _parse_int(row["label"], f"{path}:{line} label"),
                diagnosis,
                dataset,
            )
        )
    if n_classes is None:
        n_classes = max((s.label for s in samples), default=-1) + 1
    if any(s.label < 0 for s in samples):
        raise LabelOutOfRange(f"{path}: negative label")
    return SampleManifest(tuple(samples), int(n_classes))


def manifest_to_csv(manifest: SampleManifest) -> str:
    rows = [(s.sample_id, s.group_id, s.label, s.diagnosis.value, s.dataset.value) for s in manifest.samples]
    return _io.render_csv(MANIFEST_HEADER, rows)


def save_manifest(manifest: SampleManifest, path) -> None:
    _io.write_atomic(path, manifest_to_csv(manifest))


def class_counts(manifest: SampleManifest, dataset_filter: Optional[Dataset | str] = None) -> ClassCounts:
    counts = [0] * manifest.n_classes
    selected = 0
    wanted = None if dataset_filter is None else Dataset(dataset_filter)
    for s in manifest.samples:
        if wanted is not None and s.dataset is not wanted:
            continue
        counts[s.label] += 1
        selected += 1
    if selected == 0:
        raise EmptySelection(f"no samples match dataset filter {dataset_filter!r}")
    return ClassCounts(tuple(counts))


def load_counts(path) -> ClassCounts:
    _, rows = _io.read_rows(path, COUNTS_HEADER)
    pairs = sorted((_parse_int(r["class_index"], "class_index"), _parse_int(r["count"], "count")) for r in rows)
    if [i for i, _ in pairs] != list(range(len(pairs))):
        raise ValidationError(f"{path}: class_index must enumerate 0..C-1 exactly once")
    return ClassCounts(tuple(c for _, c in pairs))


def counts_to_csv(counts: ClassCounts) -> str:
    return _io.render_csv(COUNTS_HEADER, enumerate(counts.counts))


def save_counts(counts: ClassCounts, path) -> None:
    _io.write_atomic(path, counts_to_csv(counts))


def prediction_header(n_classes: int) -> list[str]:
    return ["model_id", "sample_id", "crop_index"] + [f"p_{c}" for c in range(n_classes)]


def load_predictions(path, manifest: SampleManifest) -> PredictionTensor:
    """Load ``predictions.csv`` into a dense tensor.

    The sample axis holds the manifest samples that occur in the file, in
    manifest order.  Models keep their order of first appearance.  Every model
    must cover every (sample, crop) cell; nothing is imputed.
    """
    header, rows = _io.read_rows(path, ("model_id", "sample_id", "crop_index"))
    prob_cols = [h for h in header if h.startswith("p_")]
    expected = [f"p_{c}" for c in range(len(prob_cols))]
    if prob_cols != expected or not prob_cols:
        raise MissingColumn(f"{path}: probability columns must be p_0..p_{{C-1}}, got {prob_cols}")
    if len(prob_cols) != manifest.n_classes:
        raise ClassCountMismatch(
            f"{path}: {len(prob_cols)} probability columns but manifest declares {manifest.n_classes} classes"
        )

    cells: dict[tuple[str, str, int], list[float]] = {}
    model_order: dict[str, None] = {}
    crops_of: dict[str, set[int]] = {}
    for line, row in enumerate(rows, start=2):
        mid = row["model_id"].strip()
        sid = row["sample_id"].strip()
        if sid not in manifest:
            raise UnknownSampleId(f"{path}:{line}: sample_id {sid!r} not in manifest")
        crop = _parse_int(row["crop_index"], f"{path}:{line} crop_index")
        try:
            probs = [float(row[c]) for c in prob_cols]
        except (TypeError, ValueError):
            raise ValidationError(f"{path}:{line}: non-numeric probability") from None
        total = sum(probs)
        if abs(total - 1.0) > STOCHASTIC_TOL:
            raise RowNotStochastic(f"{path}:{line}: probabilities sum to {total:.9g}")
        key = (mid, sid, crop)
        if key in cells:
            raise IncompleteTensor(f"{path}:{line}: duplicate row for {key}")
        cells[key] = probs
        model_order.setdefault(mid, None)
        crops_of.setdefault(sid, set()).add(crop)

    if not cells:
        raise EmptySelection(f"{path}: no prediction rows")
    crop_counts = {len(c) for c in crops_of.values()}
    if len(crop_counts) != 1:
        raise RaggedCrops(f"{path}: samples carry differing numbers of crops {sorted(crop_counts)}")
    n_crops = crop_counts.pop()
    for sid, crops in crops_of.items():
        if crops != set(range(n_crops)):
            raise IncompleteTensor(f"{path}: sample {sid!r} crop indices are not 0..{n_crops - 1}")

    model_ids = tuple(model_order)
    sample_ids = tuple(s for s in manifest.sample_ids if s in crops_of)
    values = np.empty((len(model_ids), len(sample_ids), n_crops, len(prob_cols)))
    for m, mid in enumerate(model_ids):
        for s, sid in enumerate(sample_ids):
            for r in range(n_crops):
                try:
                    values[m, s, r] = cells[(mid, sid, r)]
                except KeyError:
                    raise IncompleteTensor(
                        f"{path}: missing row for model {mid!r}, sample {sid!r}, crop {r}"
                    ) from None
    return PredictionTensor(model_ids, sample_ids, values)


def predictions_to_csv(tensor: PredictionTensor) -> str:
    rows = []
    for m, mid in enumerate(tensor.model_ids):
        for s, sid in enumerate(tensor.sample_ids):
            for r in range(tensor.shape[2]):
                rows.append([mid, sid, r] + [_io.format_float(p) for p in tensor.values[m, s, r]])
    return _io.render_csv(prediction_header(tensor.n_classes), rows)


def save_predictions(tensor: PredictionTensor, path) -> None:
    _io.write_atomic(path, predictions_to_csv(tensor))


def load_features(path, manifest: SampleManifest, require_all: bool = False) -> tuple[list[str], np.ndarray]:
    """Load ``features.csv`` (``sample_id,f_0,...,f_{D-1}``), rows in manifest order."""
    header, rows = _io.read_rows(path, ("sample_id",))
    cols = [h for h in header if h.startswith("f_")]
    if cols != [f"f_{d}" for d in range(len(cols))] or not cols:
        raise MissingColumn(f"{path}: feature columns must be f_0..f_{{D-1}}")
    by_id: dict[str, list[float]] = {}
    for line, row in enumerate(rows, start=2):
        sid = row["sample_id"].strip()
        if sid not in manifest:
            raise UnknownSampleId(f"{path}:{line}: sample_id {sid!r} not in manifest")
        if sid in by_id:
            raise DuplicateSampleId(f"{path}:{line}: duplicate sample_id {sid!r}")
        try:
            by_id[sid] = [float(row[c]) for c in cols]
        except (TypeError, ValueError):
            raise ValidationError(f"{path}:{line}: non-numeric feature") from None
    ids = [s for s in manifest.sample_ids if s in by_id]
    if require_all and len(ids) != len(manifest):
        missing = [s for s in manifest.sample_ids if s not in by_id][:5]
        raise IncompleteTensor(f"{path}: no features for sample(s) {missing}...")
    X = np.array([by_id[s] for s in ids], dtype=np.float64).reshape(len(ids), len(cols))
    return ids, X


def save_features(sample_ids: Sequence[str], X: np.ndarray, path) -> None:
    X = np.asarray(X)
    header = ["sample_id"] + [f"f_{d}" for d in range(X.shape[1])]
    _io.write_csv(path, header, ([sid] + [repr(float(v)) for v in row] for sid, row in zip(sample_ids, X)))
