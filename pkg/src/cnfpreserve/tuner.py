"""Exhaustive grid search over distillation hyperparameters.

Each trial re-distills the student with one grid configuration, measures
sigma on the training split and student accuracy on the eval split. A trial
is *feasible* when its eval accuracy is at most ``max_acc_drop`` below the
baseline's, and *holds* when ``sigma <= kappa``. The best trial is the
feasible, holding one with the smallest sigma (ties: higher accuracy, then
grid order). The baseline run itself is a candidate and sits first in order.
"""

from __future__ import annotations

import itertools
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Mapping, Sequence

from ._textio import read_kv, write_json
from .datasets import LabeledPoint
from .engine import DistillConfig, DivergenceError, MlpModel, distill, export_pairs, model_accuracy
from .metrics import DEFAULT_KAPPA, sigma, verdict

log = logging.getLogger(__name__)

DEFAULT_MAX_ACC_DROP = 0.01
# float slack on the accuracy constraint; accuracies are ratios of counts
_ACC_EPS = 1e-12

# Reference prediction-stage search ranges. Under plain SGD these rates barely move a small MLP.
REFERENCE_STAGE2_GRID = {
    "epochs_stg2": (2, 3, 4, 5, 6),
    "lr_stg2": (3e-6, 1e-5, 3e-5, 7e-5, 4e-4, 5e-4, 8e-4),
    "batch": (28, 32, 34, 36, 38, 40),
    "weight_decay": (1e-4, 1e-3, 5e-3, 1e-2, 5e-2),
}
REFERENCE_STAGE1_GRID = {
    "epochs_stg1": (3, 6, 9),
    "lr_stg1": (5e-7, 1e-6, 5e-5, 1e-4, 3e-4, 5e-3),
}
# Desk-scale defaults: learning rates multiplied by 1000, everything else unchanged.
DESK_LR_SCALE = 1000

GRID_KEYS = ("lr_stg1", "lr_stg2", "batch", "epochs_stg2", "weight_decay", "epochs_stg1")
_INT_KEYS = {"batch", "epochs_stg2", "epochs_stg1"}


def _desk(rates: Sequence[float]) -> tuple[float, ...]:
    return tuple(float(f"{r * DESK_LR_SCALE:.12g}") for r in rates)


@dataclass(frozen=True)
class TuneGrid:
    """Candidate lists per hyperparameter.

    Stage-1 lists are only searched when ``tune_stage1`` is set; an empty
    list means "keep the baseline value".
    """

    lr_stg2: tuple[float, ...] = _desk(REFERENCE_STAGE2_GRID["lr_stg2"])
    batch: tuple[int, ...] = REFERENCE_STAGE2_GRID["batch"]
    epochs_stg2: tuple[int, ...] = REFERENCE_STAGE2_GRID["epochs_stg2"]
    weight_decay: tuple[float, ...] = REFERENCE_STAGE2_GRID["weight_decay"]
    lr_stg1: tuple[float, ...] = _desk(REFERENCE_STAGE1_GRID["lr_stg1"])
    epochs_stg1: tuple[int, ...] = REFERENCE_STAGE1_GRID["epochs_stg1"]
    tune_stage1: bool = False

    def __post_init__(self):
        for key in ("lr_stg2", "batch", "epochs_stg2", "weight_decay"):
            if not tuple(getattr(self, key)):
                raise ValueError(f"grid list {key!r} is empty")
        for key in GRID_KEYS:
            object.__setattr__(self, key, tuple(getattr(self, key)))

    def _axes(self) -> list[tuple[str, tuple]]:
        axes = []
        if self.tune_stage1:
            axes += [(k, getattr(self, k)) for k in ("lr_stg1", "epochs_stg1") if getattr(self, k)]
        axes += [(k, getattr(self, k)) for k in ("lr_stg2", "batch", "epochs_stg2", "weight_decay")]
        return axes

    @property
    def size(self) -> int:
        return math.prod(len(v) for _, v in self._axes())

    def configs(self, baseline: DistillConfig, max_trials: int | None = None) -> list[DistillConfig]:
        """Cartesian product in key order (last key varies fastest), truncated to ``max_trials``."""
        axes = self._axes()
        names = [k for k, _ in axes]
        combos = itertools.product(*(v for _, v in axes))
        if max_trials is not None:
            combos = itertools.islice(combos, max_trials)
        return [replace(baseline, **dict(zip(names, c))) for c in combos]

    @classmethod
    def from_file(cls, path: str | Path, tune_stage1: bool = False) -> "TuneGrid":
        raw = read_kv(path)
        unknown = set(raw) - set(GRID_KEYS)
        if unknown:
            raise ValueError(f"unknown grid keys: {sorted(unknown)}")
        values = {}
        for key, text in raw.items():
            items = [t.strip() for t in text.split(",") if t.strip()]
            if not items:
                raise ValueError(f"grid key {key!r} has no candidates")
            try:
                values[key] = tuple(int(float(t)) if key in _INT_KEYS else float(t) for t in items)
            except ValueError:
                raise ValueError(f"grid key {key!r}: cannot parse {text!r}") from None
        return cls(**values, tune_stage1=tune_stage1)

    def to_file(self, path: str | Path) -> None:
        lines = [f"{k} = " + ", ".join(repr(v) for v in getattr(self, k)) for k in GRID_KEYS if getattr(self, k)]
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


@dataclass(frozen=True)
class Trial:
    index: int
    config: DistillConfig
    sigma: float
    acc: float
    acc_train: float
    holds: bool
    feasible: bool
    diverged: bool = False

    def to_dict(self) -> dict:
        d = asdict(self)
        d["config"] = asdict(self.config)
        return d


@dataclass
class TuneOutcome:
    best_config: DistillConfig | None
    best_sigma: float | None
    best_acc: float | None
    baseline_config: DistillConfig
    baseline_sigma: float
    baseline_acc: float
    kappa: float
    max_acc_drop: float
    grid_size: int
    trials: list[Trial] = field(default_factory=list)

    @property
    def found(self) -> bool:
        return self.best_config is not None

    def to_dict(self) -> dict:
        return {
            "best_config": "absent" if self.best_config is None else asdict(self.best_config),
            "best_sigma": self.best_sigma,
            "best_acc": self.best_acc,
            "baseline_config": asdict(self.baseline_config),
            "baseline_sigma": self.baseline_sigma,
            "baseline_acc": self.baseline_acc,
            "kappa": self.kappa,
            "max_acc_drop": self.max_acc_drop,
            "grid_size": self.grid_size,
            "n_trials": len(self.trials),
            "trials": [t.to_dict() for t in self.trials],
        }

    def save(self, path: str | Path) -> None:
        write_json(path, self.to_dict())


def is_feasible(acc: float, baseline_acc: float, max_acc_drop: float) -> bool:
    return acc >= baseline_acc - max_acc_drop - _ACC_EPS


def select_best(trials: Sequence[Trial]) -> Trial | None:
    """Feasible holding trial with minimal sigma; ties by higher acc, then position."""
    best = None
    for t in trials:
        if not (t.feasible and t.holds) or t.diverged:
            continue
        if best is None or (t.sigma, -t.acc) < (best.sigma, -best.acc):
            best = t
    return best


# --------------------------------------------------------------------------
# Running trials

_WORKER_STATE: dict = {}


def _init_worker(teacher, train, evl, student_dims):
    _WORKER_STATE.update(teacher=teacher, train=train, evl=evl, student_dims=student_dims)


def _evaluate(cfg: DistillConfig, teacher, train, evl, student_dims) -> tuple[float, float, float, bool]:
    """Return ``(sigma, eval acc, train acc, diverged)`` for one config."""
    try:
        student, _ = distill(teacher, train, student_dims, cfg)
    except DivergenceError as exc:
        log.info("trial diverged: %s", exc)
        return math.nan, math.nan, math.nan, True
    sig = sigma(export_pairs(teacher, student, train, "train"), cfg.gamma, "zero").sigma
    return sig, model_accuracy(student, evl), model_accuracy(student, train), False


def _evaluate_in_worker(cfg: DistillConfig):
    s = _WORKER_STATE
    return _evaluate(cfg, s["teacher"], s["train"], s["evl"], s["student_dims"])


def tune(
    teacher: MlpModel,
    train: Sequence[LabeledPoint],
    evl: Sequence[LabeledPoint],
    student_dims: Sequence[int],
    grid: TuneGrid,
    kappa: float = DEFAULT_KAPPA,
    max_acc_drop: float = DEFAULT_MAX_ACC_DROP,
    baseline: DistillConfig = DistillConfig(),
    max_trials: int | None = None,
    workers: int = 1,
) -> TuneOutcome:
    if max_acc_drop < 0:
        raise ValueError("max_acc_drop must be >= 0")
    if max_trials is not None and max_trials < 1:
        raise ValueError("max_trials must be >= 1")
    student_dims = tuple(student_dims)
    configs = grid.configs(baseline, max_trials)
    log.info("grid size %d, running %d trials", grid.size, len(configs))

    b_sig, b_acc, b_acc_train, b_div = _evaluate(baseline, teacher, train, evl, student_dims)
    if b_div:
        raise DivergenceError("baseline configuration diverged")

    unique: dict[tuple, DistillConfig] = {}
    for cfg in configs:
        unique.setdefault(cfg.key(), cfg)
    unique.pop(baseline.key(), None)
    todo = list(unique.values())
    if workers > 1 and len(todo) > 1:
        with ProcessPoolExecutor(
            max_workers=workers,
            initializer=_init_worker,
            initargs=(teacher, list(train), list(evl), student_dims),
        ) as pool:
            results = list(pool.map(_evaluate_in_worker, todo))
    else:
        results = [_evaluate(c, teacher, train, evl, student_dims) for c in todo]
    cache = {c.key(): r for c, r in zip(todo, results)}
    cache[baseline.key()] = (b_sig, b_acc, b_acc_train, False)

    def make_trial(i: int, cfg: DistillConfig) -> Trial:
        sig, acc, acc_train, div = cache[cfg.key()]
        if div:
            return Trial(i, cfg, sig, acc, acc_train, False, False, True)
        return Trial(i, cfg, sig, acc, acc_train, verdict(sig, kappa), is_feasible(acc, b_acc, max_acc_drop))

    baseline_trial = make_trial(-1, baseline)
    trials = [make_trial(i, c) for i, c in enumerate(configs)]
    best = select_best([baseline_trial, *trials])
    return TuneOutcome(
        best_config=None if best is None else best.config,
        best_sigma=None if best is None else best.sigma,
        best_acc=None if best is None else best.acc,
        baseline_config=baseline,
        baseline_sigma=b_sig,
        baseline_acc=b_acc,
        kappa=kappa,
        max_acc_drop=max_acc_drop,
        grid_size=grid.size,
        trials=trials,
    )


# --------------------------------------------------------------------------
# Before/after comparison


@dataclass(frozen=True)
class SplitScores:
    acc_teacher: float
    acc_student: float
    sigma: float


def score_student(
    teacher: MlpModel, student: MlpModel, data: Sequence[LabeledPoint], split_tag: str, gamma: float = 1.0
) -> SplitScores:
    pairs = export_pairs(teacher, student, data, split_tag)
    return SplitScores(model_accuracy(teacher, data), model_accuracy(student, data), sigma(pairs, gamma).sigma)


@dataclass(frozen=True)
class ComparisonRow:
    split: str
    acc_teacher: float
    acc_student: float
    acc_tuned: float
    sigma_student: float
    sigma_tuned: float
    holds_student: bool
    holds_tuned: bool
    feasible: bool

    @property
    def transition(self) -> str:
        word = {True: "holds", False: "fails"}
        return f"{word[self.holds_student]} -> {word[self.holds_tuned]}"


def compare_runs(
    baseline: Mapping[str, SplitScores],
    tuned: Mapping[str, SplitScores],
    kappa: float = DEFAULT_KAPPA,
    max_acc_drop: float = DEFAULT_MAX_ACC_DROP,
) -> list[ComparisonRow]:
    """One row per split with teacher/original/tuned accuracy and both sigmas."""
    rows = []
    for split_tag in ("train", "eval"):
        if split_tag not in baseline or split_tag not in tuned:
            continue
        b, t = baseline[split_tag], tuned[split_tag]
        rows.append(
            ComparisonRow(
                split=split_tag,
                acc_teacher=b.acc_teacher,
                acc_student=b.acc_student,
                acc_tuned=t.acc_student,
                sigma_student=b.sigma,
                sigma_tuned=t.sigma,
                holds_student=verdict(b.sigma, kappa),
                holds_tuned=verdict(t.sigma, kappa),
                feasible=is_feasible(t.acc_student, b.acc_student, max_acc_drop),
            )
        )
    return rows


def format_comparison(rows: Sequence[ComparisonRow]) -> str:
    header = "split  acc_B   acc_S   acc_S~  sigma_S  sigma_S~  phi_cnf"
    lines = [header]
    for r in rows:
        lines.append(
            f"{r.split:<6} {100 * r.acc_teacher:6.1f}  {100 * r.acc_student:6.1f}  {100 * r.acc_tuned:6.1f}"
            f"  {r.sigma_student:7.3f}  {r.sigma_tuned:8.3f}  {r.transition}"
        )
    return "\n".join(lines)
