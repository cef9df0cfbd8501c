"""RBF-kernel SVM stacking over flattened multi-crop predictions."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional, Sequence, Union

import numpy as np

from . import _io
from ._backend import kernels
from .errors import (
    DimensionMismatch,
    MissingClass,
    SingleClass,
    TooFewSamples,
    ValidationError,
)
from .ingest import SampleManifest
from .metrics import confusion_matrix, wacc
from .splits import stratified_group_kfold

log = logging.getLogger(__name__)

META_HEADER = ("class_index", "kind", "index", "values")

Gamma = Union[float, str]


def rbf_kernel(x, z, gamma: float) -> float:
    x = np.asarray(x, dtype=np.float64)
    z = np.asarray(z, dtype=np.float64)
    if x.shape != z.shape:
        raise DimensionMismatch(f"vectors of shape {x.shape} and {z.shape}")
    if gamma <= 0:
        raise ValidationError(f"gamma must be positive, got {gamma}")
    d = x - z
    return float(np.exp(-gamma * (d @ d)))


def rbf_gram(A: np.ndarray, B: np.ndarray, gamma: float) -> np.ndarray:
    """Pairwise ``exp(-gamma * |a - b|^2)``."""
    A = np.asarray(A, dtype=np.float64)
    B = np.asarray(B, dtype=np.float64)
    if A.shape[1] != B.shape[1]:
        raise DimensionMismatch(f"feature dimensions {A.shape[1]} and {B.shape[1]} differ")
    sq = (A * A).sum(axis=1)[:, None] + (B * B).sum(axis=1)[None, :] - 2.0 * (A @ B.T)
    np.maximum(sq, 0.0, out=sq)
    if A is B:
        sq = (sq + sq.T) / 2.0
        np.fill_diagonal(sq, 0.0)
    return np.exp(-gamma * sq)


def auto_gamma(X: np.ndarray) -> float:
    """``1 / (n_features * var(X))``, falling back to ``1 / n_features`` for constant X."""
    X = np.asarray(X, dtype=np.float64)
    var = float(X.var())
    return 1.0 / (X.shape[1] * var) if var > 0 else 1.0 / X.shape[1]


@dataclass(frozen=True, eq=False)
class SvmModel:
    support_vectors: np.ndarray  # n_sv x F
    dual_coef: np.ndarray  # alpha_i * y_i
    bias: float
    gamma: float
    C_reg: float
    converged: bool = True
    alpha: Optional[np.ndarray] = None  # full dual vector over the training set
    labels: Optional[np.ndarray] = None  # +-1 training labels, same order as alpha

    def decision_function(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        if self.support_vectors.shape[0] == 0:
            return np.full(X.shape[0], self.bias)
        return rbf_gram(X, self.support_vectors, self.gamma) @ self.dual_coef + self.bias

    def predict(self, X: np.ndarray) -> np.ndarray:
        return np.where(self.decision_function(X) >= 0.0, 1, -1)

    def negated(self) -> "SvmModel":
        return SvmModel(
            self.support_vectors, -self.dual_coef, -self.bias, self.gamma, self.C_reg, self.converged,
            self.alpha, None if self.labels is None else -self.labels,
        )


def dual_objective(alpha: np.ndarray, y: np.ndarray, K: np.ndarray) -> float:
    ay = alpha * y
    return float(alpha.sum() - 0.5 * ay @ K @ ay)


def kkt_residuals(alpha, y, K, b, C_reg) -> np.ndarray:
    """Per-sample KKT violation; zero where the condition holds exactly."""
    r = y * (K @ (alpha * y) + b) - 1.0
    viol = np.zeros_like(r)
    viol = np.where(alpha < C_reg, np.maximum(viol, -r), viol)
    viol = np.where(alpha > 0, np.maximum(viol, r), viol)
    return viol


def svm_fit(
    X: np.ndarray,
    y: np.ndarray,
    C_reg: float = 1.0,
    gamma: Gamma = "auto",
    tol: float = 1e-3,
    max_passes: int = 200,
    seed: int = 0,
) -> SvmModel:
    """Binary soft-margin SVM via SMO.

    ``y`` holds +1/-1 labels.  A fit that does not settle within
    ``max_passes`` full sweeps is returned with ``converged=False``.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64).ravel()
    if X.ndim != 2 or X.shape[0] != y.size:
        raise DimensionMismatch(f"X {X.shape} and y {y.shape} disagree")
    if not np.all(np.isin(y, (-1.0, 1.0))):
        raise ValidationError("labels must be +1 or -1")
    if y.size < 2 or np.all(y == y[0]):
        raise SingleClass("both classes must be present")
    if C_reg <= 0:
        raise ValidationError(f"C_reg must be positive, got {C_reg}")
    g = auto_gamma(X) if gamma == "auto" else float(gamma)
    if g <= 0:
        raise ValidationError(f"gamma must be positive, got {g}")

    K = rbf_gram(X, X, g)
    alpha, b, _, converged = kernels.smo(K, y, float(C_reg), float(tol), int(max_passes), int(seed) & (2**64 - 1))
    alpha = np.asarray(alpha)
    if converged:
        converged = bool(kkt_residuals(alpha, y, K, b, C_reg).max() <= tol * (1 + 1e-9))
    sv = alpha > 0
    return SvmModel(X[sv], alpha[sv] * y[sv], float(b), g, float(C_reg), converged, alpha, y)


@dataclass(frozen=True, eq=False)
class MetaModel:
    models: tuple[SvmModel, ...]

    @property
    def n_classes(self) -> int:
        return len(self.models)

    @property
    def converged(self) -> bool:
        return all(m.converged for m in self.models)

    def decision_function(self, X: np.ndarray) -> np.ndarray:
        return np.column_stack([m.decision_function(X) for m in self.models])

    def predict(self, X: np.ndarray) -> np.ndarray:
        # argmax keeps the first maximum: ties go to the lowest class index
        return self.decision_function(X).argmax(axis=1)

    def predict_onehot(self, X: np.ndarray) -> np.ndarray:
        pred = self.predict(X)
        out = np.zeros((pred.size, self.n_classes))
        out[np.arange(pred.size), pred] = 1.0
        return out


def _canonical_order(X: np.ndarray, labels: np.ndarray) -> np.ndarray:
    # lexicographic on (label, features) so the fit ignores input row order
    keys = [X[:, j] for j in range(X.shape[1] - 1, -1, -1)] + [labels]
    return np.lexsort(keys)


def meta_fit(
    flattened: np.ndarray,
    labels: Sequence[int],
    C_reg: float = 1.0,
    gamma: Gamma = "auto",
    n_classes: Optional[int] = None,
    tol: float = 1e-3,
    max_passes: int = 200,
    seed: int = 0,
) -> MetaModel:
    """One-vs-rest SVMs; with two classes one SVM and its negation."""
    X = np.asarray(flattened, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64).ravel()
    if X.ndim != 2 or X.shape[0] != labels.size:
        raise DimensionMismatch(f"features {X.shape} and {labels.size} labels disagree")
    if labels.size == 0:
        raise MissingClass("no meta training data")
    C = int(labels.max()) + 1 if n_classes is None else int(n_classes)
    missing = sorted(set(range(C)) - set(labels.tolist()))
    if missing or C < 2:
        raise MissingClass(f"class(es) {missing or list(range(C))} absent from meta training data")
    order = _canonical_order(X, labels)
    X, labels = X[order], labels[order]
    g = auto_gamma(X) if gamma == "auto" else float(gamma)
    fit = lambda c: svm_fit(X, np.where(labels == c, 1.0, -1.0), C_reg, g, tol, max_passes, seed + c)  # noqa: E731
    if C == 2:
        first = fit(0)
        return MetaModel((first, first.negated()))
    return MetaModel(tuple(fit(c) for c in range(C)))


def stratified_folds(labels: np.ndarray, k: int, seed: int) -> np.ndarray:
    """Fold index per sample; stratified, every sample its own group."""
    labels = np.asarray(labels, dtype=np.int64)
    manifest = SampleManifest.from_records(
        [(str(i), str(i), int(l)) for i, l in enumerate(labels)], int(labels.max()) + 1
    )
    assignment = stratified_group_kfold(manifest, k, seed)
    return np.array([assignment.fold_of[str(i)] for i in range(labels.size)])


def meta_cv(
    flattened: np.ndarray,
    labels: Sequence[int],
    k: int = 10,
    C_reg: float = 1.0,
    gamma: Gamma = "auto",
    seed: int = 0,
    allow_reduce: bool = True,
    n_classes: Optional[int] = None,
) -> float:
    """Mean validation WACC of ``meta_fit`` over a stratified k-fold split.

    When the smallest class has fewer than ``k`` samples, ``k`` drops to that
    size (with a warning) unless ``allow_reduce`` is false.
    """
    X = np.asarray(flattened, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64).ravel()
    C = int(labels.max()) + 1 if n_classes is None else int(n_classes)
    smallest = int(np.bincount(labels, minlength=C).min())
    if smallest < k:
        if not allow_reduce or smallest < 2:
            raise TooFewSamples(f"smallest class has {smallest} samples, need {k} for {k}-fold CV")
        log.warning("reducing meta CV from %d to %d folds (smallest class size)", k, smallest)
        k = smallest
    folds = stratified_folds(labels, k, seed)
    scores = []
    for f in range(k):
        tr, va = folds != f, folds == f
        model = meta_fit(X[tr], labels[tr], C_reg, gamma, n_classes=C, seed=seed)
        scores.append(wacc(confusion_matrix(labels[va], model.predict(X[va]), C)))
    return float(np.mean(scores))


def save_meta(model: MetaModel, path) -> None:
    """One block of rows per class: a ``params`` row (bias, gamma, C_reg,
    converged), then a ``coef`` and an ``sv`` row per support vector.  Values
    are written at full precision so a reloaded model predicts identically."""
    rows = []
    for c, m in enumerate(model.models):
        params = [m.bias, m.gamma, m.C_reg, 1.0 if m.converged else 0.0]
        rows.append((c, "params", "", " ".join(repr(float(v)) for v in params)))
        for i, (coef, sv) in enumerate(zip(m.dual_coef, m.support_vectors)):
            rows.append((c, "coef", i, repr(float(coef))))
            rows.append((c, "sv", i, " ".join(repr(float(v)) for v in sv)))
    _io.write_csv(path, META_HEADER, rows)


def load_meta(path) -> MetaModel:
    _, rows = _io.read_rows(path, META_HEADER)
    blocks: dict[int, dict] = {}
    try:
        for r in rows:
            c = int(r["class_index"])
            blk = blocks.setdefault(c, {"coef": {}, "sv": {}})
            vals = [float(v) for v in r["values"].split()]
            if r["kind"] == "params":
                blk["params"] = vals
            elif r["kind"] in ("coef", "sv"):
                blk[r["kind"]][int(r["index"])] = vals
            else:
                raise ValidationError(f"{path}: unknown row kind {r['kind']!r}")
    except ValueError as exc:
        raise ValidationError(f"{path}: {exc}") from None
    if sorted(blocks) != list(range(len(blocks))) or len(blocks) < 2:
        raise ValidationError(f"{path}: class blocks must enumerate 0..C-1 with C >= 2")
    models = []
    for c in range(len(blocks)):
        blk = blocks[c]
        if "params" not in blk or sorted(blk["coef"]) != sorted(blk["sv"]):
            raise ValidationError(f"{path}: class {c} block incomplete")
        bias, gamma, C_reg, conv = blk["params"]
        idx = sorted(blk["coef"])
        coef = np.array([blk["coef"][i][0] for i in idx])
        sv = np.array([blk["sv"][i] for i in idx]) if idx else np.empty((0, 0))
        models.append(SvmModel(sv, coef, bias, gamma, C_reg, bool(conv)))
    return MetaModel(tuple(models))
