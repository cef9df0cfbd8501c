"""Weighted-cross-entropy softmax classifier trained with Adam.

Desk-scale stand-in for CNN fine-tuning: stepwise learning-rate decay,
class/diagnosis loss weights, shuffled or balanced batches, and a
validation-WACC checkpoint every few epochs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Optional

import numpy as np

from . import _io
from .balance import ClassWeights, DiagnosisWeights, balanced_batch_indices, sample_weights
from .errors import DimensionMismatch, EpochOutOfRange, ValidationError
from .ingest import SampleManifest
from .metrics import confusion_matrix, wacc
from .splits import FoldAssignment, SecondaryPolicy, fold_split

HISTORY_HEADER = ("epoch", "lr", "train_loss", "val_wacc")


class Sampler(str, Enum):
    SHUFFLED = "shuffled"
    BALANCED = "balanced"


@dataclass(frozen=True)
class SoftmaxModel:
    weights: np.ndarray  # C x D
    bias: np.ndarray  # C

    def __post_init__(self):
        w = np.array(self.weights, dtype=np.float64)
        b = np.array(self.bias, dtype=np.float64)
        if w.ndim != 2 or b.shape != (w.shape[0],):
            raise DimensionMismatch(f"weights {w.shape} and bias {b.shape} disagree")
        if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
            raise ValidationError("model parameters must be finite")
        w.setflags(write=False)
        b.setflags(write=False)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "bias", b)

    @classmethod
    def zeros(cls, n_classes: int, dim: int) -> "SoftmaxModel":
        return cls(np.zeros((n_classes, dim)), np.zeros(n_classes))

    @property
    def n_classes(self) -> int:
        return self.weights.shape[0]

    @property
    def dim(self) -> int:
        return self.weights.shape[1]

    def logits(self, features: np.ndarray) -> np.ndarray:
        features = np.asarray(features, dtype=np.float64)
        if features.shape[-1] != self.dim:
            raise DimensionMismatch(f"features have dimension {features.shape[-1]}, model expects {self.dim}")
        return features @ self.weights.T + self.bias


@dataclass(frozen=True)
class TrainConfig:
    lr0: float = 0.0005
    decay: float = 0.2
    first_drop: int = 50
    drop_every: int = 25
    max_epochs: int = 125
    eval_every: int = 5
    batch_size: int = 40
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if not 0 < self.decay < 1:
            raise ValidationError(f"decay must lie in (0, 1), got {self.decay}")
        if self.lr0 <= 0 or self.max_epochs < 1 or self.eval_every < 1 or self.batch_size < 1:
            raise ValidationError("lr0, max_epochs, eval_every and batch_size must be positive")
        if self.first_drop < 0 or self.drop_every < 1:
            raise ValidationError("first_drop must be >= 0 and drop_every >= 1")


@dataclass
class History:
    epoch: list[int] = field(default_factory=list)
    lr: list[float] = field(default_factory=list)
    train_loss: list[float] = field(default_factory=list)
    val_wacc: list[float] = field(default_factory=list)  # NaN where not evaluated

    @property
    def evaluations(self) -> list[tuple[int, float]]:
        return [(e, w) for e, w in zip(self.epoch, self.val_wacc) if not math.isnan(w)]

    def rows(self):
        for e, lr, loss, w in zip(self.epoch, self.lr, self.train_loss, self.val_wacc):
            yield e, _io.format_float(lr), _io.format_float(loss), "" if math.isnan(w) else _io.format_float(w)


@dataclass
class TrainResult:
    best_model: SoftmaxModel
    last_model: SoftmaxModel
    history: History
    best_epoch: Optional[int]


def log_softmax(logits: np.ndarray) -> np.ndarray:
    logits = np.asarray(logits, dtype=np.float64)
    top = logits.max(axis=-1, keepdims=True)
    shifted = logits - top
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def softmax(logits: np.ndarray) -> np.ndarray:
    p = np.exp(log_softmax(logits))
    return p / p.sum(axis=-1, keepdims=True)


def weighted_ce_loss(logits, label: int, w: float) -> float:
    return float(-w * log_softmax(logits)[label])


def loss_gradient(model: SoftmaxModel, x, label: int, w: float) -> tuple[np.ndarray, np.ndarray]:
    """Gradients of ``weighted_ce_loss`` with respect to weights and bias."""
    x = np.asarray(x, dtype=np.float64)
    g = softmax(model.logits(x))
    g[label] -= 1.0
    g *= w
    return np.outer(g, x), g


def batch_loss_and_gradient(
    weights: np.ndarray, bias: np.ndarray, X: np.ndarray, y: np.ndarray, w: np.ndarray
) -> tuple[float, np.ndarray, np.ndarray]:
    """Mean weighted loss over a batch and its gradients."""
    logp = log_softmax(X @ weights.T + bias)
    rows = np.arange(y.size)
    loss = float(-(w * logp[rows, y]).sum() / y.size)
    g = np.exp(logp)
    g[rows, y] -= 1.0
    g *= (w / y.size)[:, None]
    return loss, g.T @ X, g.sum(axis=0)


def lr_at(epoch: int, cfg: TrainConfig) -> float:
    if not 0 <= epoch < cfg.max_epochs:
        raise EpochOutOfRange(f"epoch {epoch} not in [0, {cfg.max_epochs})")
    drops = 0 if epoch < cfg.first_drop else 1 + (epoch - cfg.first_drop) // cfg.drop_every
    return cfg.lr0 * cfg.decay**drops


def predict_proba(model: SoftmaxModel, features: np.ndarray) -> np.ndarray:
    return softmax(model.logits(np.atleast_2d(features)))


class _Adam:
    def __init__(self, shapes, cfg: TrainConfig):
        self.m = [np.zeros(s) for s in shapes]
        self.v = [np.zeros(s) for s in shapes]
        self.t = 0
        self.cfg = cfg

    def step(self, params, grads, lr: float) -> None:
        cfg = self.cfg
        self.t += 1
        c1 = 1.0 - cfg.beta1**self.t
        c2 = 1.0 - cfg.beta2**self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= cfg.beta1
            m += (1.0 - cfg.beta1) * g
            v *= cfg.beta2
            v += (1.0 - cfg.beta2) * g * g
            p -= lr * (m / c1) / (np.sqrt(v / c2) + cfg.eps)


def _val_wacc(weights, bias, X, y, n_classes) -> float:
    pred = (X @ weights.T + bias).argmax(axis=1)
    return wacc(confusion_matrix(y, pred, n_classes))


def train(
    features: np.ndarray,
    manifest: SampleManifest,
    folds: Optional[FoldAssignment] = None,
    fold: Optional[int] = None,
    cw: Optional[ClassWeights] = None,
    dw: Optional[DiagnosisWeights] = None,
    cfg: TrainConfig = TrainConfig(),
    sampler: Sampler | str = Sampler.SHUFFLED,
    secondary_policy: SecondaryPolicy | str = SecondaryPolicy.EXCLUDE,
) -> TrainResult:
    """Train from zero-initialized parameters.

    ``features`` rows align with ``manifest`` samples.  With ``folds`` and
    ``fold`` given, the fold's primary samples are held out and scored every
    ``cfg.eval_every`` epochs; the best-scoring parameters (earliest on ties)
    are returned as ``best_model``.  Without a fold all samples train and
    ``best_model`` is the final model.
    """
    X = np.asarray(features, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] != len(manifest):
        raise DimensionMismatch(f"features {X.shape} do not align with {len(manifest)} manifest samples")
    C = manifest.n_classes
    cw = cw or ClassWeights.ones(C)
    dw = dw or DiagnosisWeights()
    if len(cw.weights) != C:
        raise DimensionMismatch(f"{len(cw.weights)} class weights for {C} classes")
    sampler = Sampler(sampler)

    labels = manifest.labels
    sw = sample_weights(manifest, cw, dw)
    if folds is not None and fold is not None:
        train_ids, val_ids = fold_split(folds, fold, manifest, secondary_policy)
        train_idx = np.array([manifest.index_of(s) for s in train_ids], dtype=np.int64)
        val_idx = np.array([manifest.index_of(s) for s in val_ids], dtype=np.int64)
    else:
        train_idx = np.arange(len(manifest))
        val_idx = np.array([], dtype=np.int64)
    if train_idx.size == 0:
        raise ValidationError("no training samples")
    train_manifest = manifest.subset([manifest.samples[i].sample_id for i in train_idx])

    rng = np.random.default_rng(cfg.seed)
    W = np.zeros((C, X.shape[1]))
    b = np.zeros(C)
    adam = _Adam([W.shape, b.shape], cfg)
    history = History()
    best = (W.copy(), b.copy())
    best_score = -math.inf
    best_epoch = None
    n_batches = math.ceil(train_idx.size / cfg.batch_size)
    Xv, yv = X[val_idx], labels[val_idx]

    for epoch in range(cfg.max_epochs):
        lr = lr_at(epoch, cfg)
        if sampler is Sampler.SHUFFLED:
            perm = train_idx[rng.permutation(train_idx.size)]
            batches = [perm[i : i + cfg.batch_size] for i in range(0, perm.size, cfg.batch_size)]
        else:
            seed = int(rng.integers(2**63 - 1))
            local = balanced_batch_indices(train_manifest, cfg.batch_size, n_batches, seed)
            batches = [train_idx[bi] for bi in local]
        total = 0.0
        for idx in batches:
            loss, gW, gb = batch_loss_and_gradient(W, b, X[idx], labels[idx], sw[idx])
            adam.step([W, b], [gW, gb], lr)
            total += loss * idx.size
        score = math.nan
        if val_idx.size and (epoch + 1) % cfg.eval_every == 0:
            score = _val_wacc(W, b, Xv, yv, C)
            if score > best_score:
                best_score, best_epoch = score, epoch
                best = (W.copy(), b.copy())
        history.epoch.append(epoch)
        history.lr.append(lr)
        history.train_loss.append(total / sum(i.size for i in batches))
        history.val_wacc.append(score)

    last = SoftmaxModel(W, b)
    best_model = SoftmaxModel(*best) if best_epoch is not None else last
    return TrainResult(best_model, last, history, best_epoch)


MODEL_HEADER = ("param", "class_index", "feature_index", "value")


def save_model(model: SoftmaxModel, path) -> None:
    """Long-format CSV: every weight ``(c, d)``, then every bias ``c``."""
    rows = [("weight", c, d, _io.format_float(v)) for (c, d), v in np.ndenumerate(model.weights)]
    rows += [("bias", c, "", _io.format_float(v)) for c, v in enumerate(model.bias)]
    _io.write_csv(path, MODEL_HEADER, rows)


def load_model(path) -> SoftmaxModel:
    _, rows = _io.read_rows(path, MODEL_HEADER)
    weights: dict[tuple[int, int], float] = {}
    bias: dict[int, float] = {}
    try:
        for r in rows:
            if r["param"] == "weight":
                weights[int(r["class_index"]), int(r["feature_index"])] = float(r["value"])
            elif r["param"] == "bias":
                bias[int(r["class_index"])] = float(r["value"])
            else:
                raise ValidationError(f"{path}: unknown param {r['param']!r}")
    except ValueError as exc:
        raise ValidationError(f"{path}: {exc}") from None
    C = len(bias)
    D = len(weights) // C if C else 0
    if C == 0 or len(weights) != C * D or sorted(bias) != list(range(C)):
        raise ValidationError(f"{path}: incomplete model")
    W = np.empty((C, D))
    for (c, d), v in weights.items():
        if not (0 <= c < C and 0 <= d < D):
            raise ValidationError(f"{path}: index ({c}, {d}) out of range")
        W[c, d] = v
    return SoftmaxModel(W, np.array([bias[c] for c in range(C)]))


def save_history(history: History, path) -> None:
    _io.write_csv(path, HISTORY_HEADER, history.rows())


def with_seed(cfg: TrainConfig, seed: int) -> TrainConfig:
    return replace(cfg, seed=seed)
