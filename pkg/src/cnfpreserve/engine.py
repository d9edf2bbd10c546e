"""Small numpy MLPs, teacher training and prediction-layer distillation.

The distillation objective mixes student cross-entropy with the squared
logit gap to a fixed teacher::

    L = alpha * CE(softmax(gamma * z_S), t) + (1 - alpha) * ||z_T - z_S||^2

Training uses mini-batch SGD on the batch-mean loss with L2 weight decay
added to the weight gradients (biases are not decayed). The sum-over-dataset
loss is recomputed on the full training set after every epoch; that is the
quantity the bound checks consume.

Distillation runs in two stages. Stage 1 trains the freshly initialised
student on plain cross-entropy (a stand-in for intermediate-layer
distillation), stage 2 optimises ``L`` above.
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Literal, Sequence

import numpy as np

from ._textio import read_json, read_kv, write_json
from .datasets import LabeledPoint, PairedDataset, SplitTag, points_to_arrays

log = logging.getLogger(__name__)

Reduction = Literal["sum", "mean"]
MODEL_FORMAT_VERSION = 1
DIVERGENCE_THRESHOLD = 1e6

TEACHER_DIMS = (2, 64, 64, 64, 2)
STUDENT_MILD_DIMS = (2, 32, 32, 2)
STUDENT_AGGRESSIVE_DIMS = (2, 8, 2)

# RNG streams derived from cfg.seed
_STREAM_INIT, _STREAM_STAGE1, _STREAM_STAGE2 = 0, 1, 2


class DivergenceError(RuntimeError):
    """Training loss became non-finite or exceeded the divergence threshold."""


def _rng(seed: int, stream: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(seed), stream])))


# --------------------------------------------------------------------------
# Model


@dataclass(frozen=True, eq=False)
class MlpModel:
    """ReLU hidden layers, identity output. ``weights[k]`` has shape ``(dims[k], dims[k+1])``."""

    layer_dims: tuple[int, ...]
    weights: tuple[np.ndarray, ...]
    biases: tuple[np.ndarray, ...]

    def __post_init__(self):
        dims = tuple(int(d) for d in self.layer_dims)
        if len(dims) < 2 or any(d < 1 for d in dims):
            raise ValueError(f"invalid layer_dims {dims}")
        if len(self.weights) != len(dims) - 1 or len(self.biases) != len(dims) - 1:
            raise ValueError("need one weight matrix and one bias vector per layer")
        ws, bs = [], []
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            w = np.array(w, dtype=np.float64)
            b = np.array(b, dtype=np.float64)
            if w.shape != (dims[k], dims[k + 1]) or b.shape != (dims[k + 1],):
                raise ValueError(
                    f"layer {k}: expected W {(dims[k], dims[k + 1])} and b {(dims[k + 1],)}, "
                    f"got {w.shape} and {b.shape}"
                )
            if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
                raise ValueError(f"layer {k}: non-finite parameters")
            w.setflags(write=False)
            b.setflags(write=False)
            ws.append(w)
            bs.append(b)
        object.__setattr__(self, "layer_dims", dims)
        object.__setattr__(self, "weights", tuple(ws))
        object.__setattr__(self, "biases", tuple(bs))

    @property
    def n_params(self) -> int:
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))

    @property
    def n_classes(self) -> int:
        return self.layer_dims[-1]

    def __eq__(self, other):
        if not isinstance(other, MlpModel):
            return NotImplemented
        return self.layer_dims == other.layer_dims and all(
            np.array_equal(a, b)
            for a, b in zip(self.weights + self.biases, other.weights + other.biases)
        )

    def to_dict(self) -> dict:
        return {
            "format_version": MODEL_FORMAT_VERSION,
            "layer_dims": list(self.layer_dims),
            "activation": "relu",
            "weights": [w.tolist() for w in self.weights],
            "biases": [b.tolist() for b in self.biases],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MlpModel":
        version = d.get("format_version")
        if version != MODEL_FORMAT_VERSION:
            raise ValueError(f"unsupported model format_version {version!r}")
        return cls(tuple(d["layer_dims"]), tuple(d["weights"]), tuple(d["biases"]))


def param_count(dims: Sequence[int]) -> int:
    return sum(dims[k] * dims[k + 1] + dims[k + 1] for k in range(len(dims) - 1))


def init_model(dims: Sequence[int], seed: int) -> MlpModel:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) for weights and biases."""
    rng = _rng(seed, _STREAM_INIT)
    ws, bs = [], []
    for k in range(len(dims) - 1):
        bound = 1.0 / math.sqrt(dims[k])
        ws.append(rng.uniform(-bound, bound, size=(dims[k], dims[k + 1])))
        bs.append(rng.uniform(-bound, bound, size=dims[k + 1]))
    return MlpModel(tuple(dims), tuple(ws), tuple(bs))


def save_model(model: MlpModel, path: str | Path) -> None:
    write_json(path, model.to_dict())


def load_model(path: str | Path) -> MlpModel:
    return MlpModel.from_dict(read_json(path))


def _check_features(model: MlpModel, X: np.ndarray) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.shape[-1] != model.layer_dims[0]:
        raise ValueError(f"features have length {X.shape[-1]}, model expects {model.layer_dims[0]}")
    return X


def forward(model: MlpModel, features) -> np.ndarray:
    """Logits for one feature vector or a ``(n, d_in)`` batch."""
    h = _check_features(model, features)
    last = len(model.weights) - 1
    for k, (w, b) in enumerate(zip(model.weights, model.biases)):
        h = h @ w + b
        if k < last:
            h = np.maximum(h, 0.0)
    return h


def _forward_cache(weights, biases, X):
    acts = [X]
    pre = []
    h = X
    last = len(weights) - 1
    for k, (w, b) in enumerate(zip(weights, biases)):
        z = h @ w + b
        pre.append(z)
        h = np.maximum(z, 0.0) if k < last else z
        acts.append(h)
    return acts, pre


# --------------------------------------------------------------------------
# Loss


def _log_softmax(z: np.ndarray, gamma: float) -> np.ndarray:
    s = gamma * z
    s = s - s.max(axis=-1, keepdims=True)
    return s - np.log(np.exp(s).sum(axis=-1, keepdims=True))


def _check_alpha(alpha: float, teacher_logits) -> None:
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must be in [0, 1], got {alpha}")
    if alpha < 1.0 and teacher_logits is None:
        raise ValueError("teacher logits are required when alpha < 1")


def distillation_loss(
    student_logits,
    labels,
    teacher_logits=None,
    alpha: float = 0.0,
    gamma: float = 1.0,
    reduction: Reduction = "sum",
) -> float:
    """Mixed loss on precomputed logits.

    ``labels`` may be None when ``alpha == 0`` (the cross-entropy term then
    has zero weight and is skipped).
    """
    _check_alpha(alpha, teacher_logits)
    zs = np.atleast_2d(np.asarray(student_logits, dtype=np.float64))
    n = zs.shape[0]
    ce = 0.0
    if alpha > 0.0:
        if labels is None:
            raise ValueError("labels are required when alpha > 0")
        y = np.asarray(labels, dtype=np.int64)
        ce = -float(np.sum(_log_softmax(zs, gamma)[np.arange(n), y]))
    dist = 0.0
    if alpha < 1.0:
        diff = np.atleast_2d(np.asarray(teacher_logits, dtype=np.float64)) - zs
        dist = float(np.sum(diff * diff))
    total = alpha * ce + (1.0 - alpha) * dist
    if reduction == "mean":
        return total / n
    if reduction != "sum":
        raise ValueError(f"reduction must be 'sum' or 'mean', got {reduction!r}")
    return total


def loss_eq1(
    X,
    y,
    teacher: MlpModel | None,
    student: MlpModel,
    alpha: float = 0.0,
    gamma: float = 1.0,
    reduction: Reduction = "sum",
) -> float:
    """Distillation loss of ``student`` against ``teacher`` on a batch ``(X, y)``."""
    X = np.atleast_2d(_check_features(student, X))
    if X.shape[0] == 0:
        raise ValueError("empty batch")
    zt = None if alpha == 1.0 or teacher is None else forward(teacher, X)
    if teacher is not None and teacher.n_classes != student.n_classes:
        raise ValueError("teacher and student disagree on the number of classes")
    return distillation_loss(forward(student, X), y, zt, alpha, gamma, reduction)


@dataclass(frozen=True)
class Gradients:
    weights: tuple[np.ndarray, ...]
    biases: tuple[np.ndarray, ...]

    def flat(self) -> np.ndarray:
        return np.concatenate([a.ravel() for pair in zip(self.weights, self.biases) for a in pair])


def _loss_and_grad(weights, biases, X, y, teacher_logits, alpha, gamma, reduction):
    acts, pre = _forward_cache(weights, biases, X)
    z = acts[-1]
    n = X.shape[0]
    g = np.zeros_like(z)
    ce = dist = 0.0
    if alpha > 0.0:
        logp = _log_softmax(z, gamma)
        ce = -float(np.sum(logp[np.arange(n), y]))
        p = np.exp(logp)
        p[np.arange(n), y] -= 1.0
        g += alpha * gamma * p
    if alpha < 1.0:
        diff = z - teacher_logits
        dist = float(np.sum(diff * diff))
        g += (1.0 - alpha) * 2.0 * diff
    loss = alpha * ce + (1.0 - alpha) * dist
    if reduction == "mean":
        loss /= n
        g /= n
    gw = [None] * len(weights)
    gb = [None] * len(weights)
    for k in range(len(weights) - 1, -1, -1):
        gw[k] = acts[k].T @ g
        gb[k] = g.sum(axis=0)
        if k > 0:
            g = (g @ weights[k].T) * (pre[k - 1] > 0.0)
    return loss, gw, gb


def backward(
    model: MlpModel,
    X,
    y,
    teacher_logits=None,
    alpha: float = 1.0,
    gamma: float = 1.0,
    reduction: Reduction = "sum",
) -> Gradients:
    """Analytic gradient of the mixed loss w.r.t. every parameter of ``model``.

    ``alpha=1`` with no teacher logits is plain cross-entropy.
    """
    _check_alpha(alpha, teacher_logits)
    if reduction not in ("sum", "mean"):
        raise ValueError(f"reduction must be 'sum' or 'mean', got {reduction!r}")
    X = np.atleast_2d(_check_features(model, X))
    y = np.asarray(y, dtype=np.int64).reshape(-1)
    zt = None if teacher_logits is None else np.atleast_2d(np.asarray(teacher_logits, dtype=np.float64))
    _, gw, gb = _loss_and_grad(model.weights, model.biases, X, y, zt, alpha, gamma, reduction)
    return Gradients(tuple(gw), tuple(gb))


# --------------------------------------------------------------------------
# Config and logs


@dataclass(frozen=True)
class DistillConfig:
    """Training hyperparameters.

    Teacher training reuses the stage-1 fields (``lr_stg1``, ``epochs_stg1``).
    Learning rates are desk-scale values for plain SGD on small MLPs.
    """

    alpha: float = 0.0
    gamma: float = 1.0
    lr_stg1: float = 0.05
    lr_stg2: float = 0.03
    batch: int = 32
    epochs_stg1: int = 10
    epochs_stg2: int = 3
    weight_decay: float = 1e-4
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.alpha < 1.0:
            raise ValueError(f"alpha must be in [0, 1), got {self.alpha}")
        if not self.gamma > 0:
            raise ValueError(f"gamma must be > 0, got {self.gamma}")
        for name in ("lr_stg1", "lr_stg2"):
            if not getattr(self, name) >= 0:
                raise ValueError(f"{name} must be >= 0")
        if self.batch < 1:
            raise ValueError("batch must be >= 1")
        if self.epochs_stg1 < 0 or self.epochs_stg2 < 0:
            raise ValueError("epoch counts must be >= 0")
        if not self.weight_decay >= 0:
            raise ValueError("weight_decay must be >= 0")
        if self.seed < 0:
            raise ValueError("seed must be >= 0")

    @classmethod
    def from_mapping(cls, values: dict) -> "DistillConfig":
        types = {f.name: f.type for f in fields(cls)}
        unknown = set(values) - set(types)
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        parsed = {}
        for k, v in values.items():
            parsed[k] = _coerce(k, v, types[k])
        return cls(**parsed)

    @classmethod
    def from_file(cls, path: str | Path) -> "DistillConfig":
        return cls.from_mapping(read_kv(path))

    def to_file(self, path: str | Path) -> None:
        Path(path).write_text(
            "".join(f"{k} = {v!r}\n" for k, v in asdict(self).items()), encoding="utf-8"
        )

    def key(self) -> tuple:
        return tuple(asdict(self).values())


def _coerce(name: str, value, type_name: str):
    try:
        if type_name == "int":
            if isinstance(value, str):
                f = float(value)
                if not f.is_integer():
                    raise ValueError
                return int(f)
            return int(value)
        return float(value)
    except (TypeError, ValueError):
        raise ValueError(f"config key {name!r}: cannot parse {value!r} as {type_name}") from None


@dataclass(frozen=True)
class EpochRecord:
    stage: int
    epoch: int
    mean_batch_loss: float
    sum_form_loss: float
    train_accuracy: float


@dataclass
class TrainLog:
    records: list[EpochRecord] = field(default_factory=list)

    def stage(self, stage: int) -> list[EpochRecord]:
        return [r for r in self.records if r.stage == stage]

    def to_dict(self) -> dict:
        return {"records": [asdict(r) for r in self.records]}

    def save(self, path: str | Path) -> None:
        write_json(path, self.to_dict())


# --------------------------------------------------------------------------
# Training


def _sgd(
    model: MlpModel,
    X: np.ndarray,
    y: np.ndarray,
    teacher_logits: np.ndarray | None,
    alpha: float,
    gamma: float,
    lr: float,
    epochs: int,
    batch: int,
    weight_decay: float,
    rng: np.random.Generator,
    stage: int,
    log_: TrainLog,
) -> MlpModel:
    weights = [w.copy() for w in model.weights]
    biases = [b.copy() for b in model.biases]
    n = X.shape[0]
    for epoch in range(1, epochs + 1):
        order = rng.permutation(n)
        batch_losses = []
        for start in range(0, n, batch):
            idx = order[start : start + batch]
            zt = None if teacher_logits is None else teacher_logits[idx]
            loss, gw, gb = _loss_and_grad(weights, biases, X[idx], y[idx], zt, alpha, gamma, "mean")
            if not math.isfinite(loss) or loss > DIVERGENCE_THRESHOLD:
                raise DivergenceError(f"stage {stage} epoch {epoch}: loss {loss}")
            for k in range(len(weights)):
                weights[k] -= lr * (gw[k] + weight_decay * weights[k])
                biases[k] -= lr * gb[k]
            batch_losses.append(loss)
        acts, _ = _forward_cache(weights, biases, X)
        z = acts[-1]
        if not np.all(np.isfinite(z)):
            raise DivergenceError(f"stage {stage} epoch {epoch}: non-finite logits")
        sum_loss = distillation_loss(z, y, teacher_logits, alpha, gamma, "sum")
        if not math.isfinite(sum_loss) or sum_loss / n > DIVERGENCE_THRESHOLD:
            raise DivergenceError(f"stage {stage} epoch {epoch}: full-train loss {sum_loss}")
        acc = float(np.mean(np.argmax(z, axis=1) == y))
        log_.records.append(EpochRecord(stage, epoch, float(np.mean(batch_losses)), sum_loss, acc))
        log.debug("stage %d epoch %d: loss %.6g acc %.4f", stage, epoch, sum_loss, acc)
    return MlpModel(model.layer_dims, tuple(weights), tuple(biases))


def _training_arrays(model_dims: Sequence[int], data: Sequence[LabeledPoint]):
    if not data:
        raise ValueError("training data is empty")
    X, y = points_to_arrays(data)
    if X.shape[1] != model_dims[0]:
        raise ValueError(f"features have length {X.shape[1]}, model expects {model_dims[0]}")
    if y.max() >= model_dims[-1]:
        raise ValueError(f"label {int(y.max())} out of range for {model_dims[-1]} classes")
    return X, y


def train_teacher(
    data: Sequence[LabeledPoint], dims: Sequence[int], cfg: DistillConfig
) -> tuple[MlpModel, TrainLog]:
    """Cross-entropy SGD from a seeded init, using the stage-1 lr and epoch count."""
    dims = tuple(dims)
    X, y = _training_arrays(dims, data)
    model = init_model(dims, cfg.seed)
    tlog = TrainLog()
    model = _sgd(model, X, y, None, 1.0, cfg.gamma, cfg.lr_stg1, cfg.epochs_stg1, cfg.batch,
                 cfg.weight_decay, _rng(cfg.seed, _STREAM_STAGE1), 1, tlog)
    return model, tlog


def distill(
    teacher: MlpModel,
    data: Sequence[LabeledPoint],
    student_dims: Sequence[int],
    cfg: DistillConfig,
) -> tuple[MlpModel, TrainLog]:
    """Two-stage distillation of ``teacher`` into a fresh student with ``student_dims``."""
    student_dims = tuple(student_dims)
    if student_dims[0] != teacher.layer_dims[0] or student_dims[-1] != teacher.n_classes:
        raise ValueError(f"student dims {student_dims} incompatible with teacher {teacher.layer_dims}")
    if param_count(student_dims) > teacher.n_params:
        raise ValueError(
            f"student has {param_count(student_dims)} parameters, more than the teacher's {teacher.n_params}"
        )
    X, y = _training_arrays(student_dims, data)
    tlog = TrainLog()
    student = init_model(student_dims, cfg.seed)
    student = _sgd(student, X, y, None, 1.0, cfg.gamma, cfg.lr_stg1, cfg.epochs_stg1, cfg.batch,
                   cfg.weight_decay, _rng(cfg.seed, _STREAM_STAGE1), 1, tlog)
    zt = forward(teacher, X)
    student = _sgd(student, X, y, zt, cfg.alpha, cfg.gamma, cfg.lr_stg2, cfg.epochs_stg2, cfg.batch,
                   cfg.weight_decay, _rng(cfg.seed, _STREAM_STAGE2), 2, tlog)
    return student, tlog


def export_pairs(
    teacher: MlpModel, student: MlpModel, data: Sequence[LabeledPoint], split_tag: SplitTag = "train"
) -> PairedDataset:
    if teacher.layer_dims[0] != student.layer_dims[0] or teacher.n_classes != student.n_classes:
        raise ValueError("teacher and student have incompatible input or output sizes")
    X, y = points_to_arrays(data)
    return PairedDataset.from_arrays(forward(teacher, X), forward(student, X), y, split_tag)


def model_accuracy(model: MlpModel, data: Sequence[LabeledPoint]) -> float:
    X, y = points_to_arrays(data)
    return float(np.mean(np.argmax(forward(model, X), axis=1) == y))

