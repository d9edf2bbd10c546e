"""Paired-logit and labeled-point datasets: validation, file formats, synthetic data.

Paired-logits file, one UTF-8 JSON object per line::

    {"id":"<string>","teacher_logits":[f,...],"student_logits":[f,...],"label":<int or null>}

Labeled-points file, one object per line::

    {"features":[f,f],"label":<int>}

Unknown fields are ignored on load. Blank lines are skipped.

All randomness goes through ``numpy.random.Generator(PCG64(seed))``; nothing
touches global RNG state.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Literal, Sequence

import numpy as np

from ._textio import dumps

SplitTag = Literal["train", "eval"]
SPLIT_TAGS = ("train", "eval")
TASKS = ("blobs", "moons", "xor")

BLOB_CENTERS = ((-2.0, -2.0), (2.0, 2.0))
# (center, label): opposite corners share a label
XOR_CENTERS = (((-2.0, -2.0), 0), ((2.0, 2.0), 0), ((-2.0, 2.0), 1), ((2.0, -2.0), 1))


class DatasetError(ValueError):
    """Invalid dataset content."""


class ParseError(DatasetError):
    def __init__(self, lineno: int, msg: str):
        self.lineno = lineno
        super().__init__(f"line {lineno}: {msg}")


class DimensionMismatchError(DatasetError):
    pass


class DuplicateIdError(DatasetError):
    pass


def make_rng(seed: int) -> np.random.Generator:
    """PCG64 generator seeded from an explicit integer (64-bit or wider)."""
    return np.random.Generator(np.random.PCG64(int(seed)))


def _as_finite_vector(values, what: str) -> np.ndarray:
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim != 1:
        raise DatasetError(f"{what} must be a flat vector")
    if not np.all(np.isfinite(arr)):
        raise DatasetError(f"{what} contains non-finite values")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class PairedLogitRecord:
    id: str
    teacher_logits: np.ndarray
    student_logits: np.ndarray
    label: int | None = None

    def __post_init__(self):
        t = _as_finite_vector(self.teacher_logits, f"record {self.id!r}: teacher_logits")
        s = _as_finite_vector(self.student_logits, f"record {self.id!r}: student_logits")
        object.__setattr__(self, "teacher_logits", t)
        object.__setattr__(self, "student_logits", s)
        if t.shape != s.shape:
            raise DimensionMismatchError(
                f"record {self.id!r}: teacher_logits has {t.size} entries, student_logits has {s.size}"
            )
        if t.size < 2:
            raise DimensionMismatchError(f"record {self.id!r}: need at least 2 classes, got {t.size}")
        if self.label is not None:
            if isinstance(self.label, bool) or not isinstance(self.label, (int, np.integer)):
                raise DatasetError(f"record {self.id!r}: label must be an integer or null")
            if not 0 <= self.label < t.size:
                raise DatasetError(f"record {self.id!r}: label {self.label} outside [0, {t.size})")
            object.__setattr__(self, "label", int(self.label))

    @property
    def n_classes(self) -> int:
        return self.teacher_logits.size

    def __eq__(self, other):
        if not isinstance(other, PairedLogitRecord):
            return NotImplemented
        return (
            self.id == other.id
            and self.label == other.label
            and np.array_equal(self.teacher_logits, other.teacher_logits)
            and np.array_equal(self.student_logits, other.student_logits)
        )


@dataclass(frozen=True, eq=False)
class PairedDataset:
    records: tuple[PairedLogitRecord, ...]
    split_tag: SplitTag = "train"

    def __post_init__(self):
        records = tuple(self.records)
        object.__setattr__(self, "records", records)
        if not records:
            raise DatasetError("dataset is empty")
        if self.split_tag not in SPLIT_TAGS:
            raise DatasetError(f"split_tag must be one of {SPLIT_TAGS}, got {self.split_tag!r}")
        c = records[0].n_classes
        seen: set[str] = set()
        for rec in records:
            if rec.n_classes != c:
                raise DimensionMismatchError(
                    f"record {rec.id!r} has {rec.n_classes} classes, dataset has {c}"
                )
            if rec.id in seen:
                raise DuplicateIdError(f"duplicate id {rec.id!r}")
            seen.add(rec.id)

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def __eq__(self, other):
        if not isinstance(other, PairedDataset):
            return NotImplemented
        return self.split_tag == other.split_tag and self.records == other.records

    @property
    def n_classes(self) -> int:
        return self.records[0].n_classes

    @property
    def has_labels(self) -> bool:
        return all(r.label is not None for r in self.records)

    def teacher_matrix(self) -> np.ndarray:
        return np.stack([r.teacher_logits for r in self.records])

    def student_matrix(self) -> np.ndarray:
        return np.stack([r.student_logits for r in self.records])

    def labels(self) -> np.ndarray:
        if not self.has_labels:
            raise DatasetError("dataset has records without labels")
        return np.array([r.label for r in self.records], dtype=np.int64)

    @classmethod
    def from_arrays(cls, teacher, student, labels=None, split_tag: SplitTag = "train", ids=None):
        teacher = np.asarray(teacher, dtype=np.float64)
        student = np.asarray(student, dtype=np.float64)
        n = teacher.shape[0]
        ids = [str(i) for i in range(n)] if ids is None else list(ids)
        labs = [None] * n if labels is None else [int(v) for v in labels]
        return cls(
            tuple(PairedLogitRecord(ids[i], teacher[i], student[i], labs[i]) for i in range(n)),
            split_tag,
        )


@dataclass(frozen=True, eq=False)
class LabeledPoint:
    features: np.ndarray
    label: int

    def __post_init__(self):
        object.__setattr__(self, "features", _as_finite_vector(self.features, "features"))
        if isinstance(self.label, bool) or not isinstance(self.label, (int, np.integer)) or self.label < 0:
            raise DatasetError(f"label must be a non-negative integer, got {self.label!r}")
        object.__setattr__(self, "label", int(self.label))

    def __eq__(self, other):
        if not isinstance(other, LabeledPoint):
            return NotImplemented
        return self.label == other.label and np.array_equal(self.features, other.features)


def points_to_arrays(points: Sequence[LabeledPoint]) -> tuple[np.ndarray, np.ndarray]:
    if not points:
        raise DatasetError("no points")
    X = np.stack([p.features for p in points])
    y = np.array([p.label for p in points], dtype=np.int64)
    return X, y


# --------------------------------------------------------------------------
# File I/O


def _parse_lines(path: str | Path) -> Iterable[tuple[int, dict]]:
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line, parse_constant=_reject_constant)
            except (json.JSONDecodeError, ValueError) as exc:
                raise ParseError(lineno, f"invalid JSON ({exc})") from None
            if not isinstance(obj, dict):
                raise ParseError(lineno, "expected a JSON object")
            yield lineno, obj


def _reject_constant(name: str):
    raise ValueError(f"non-finite literal {name}")


def _require(obj: dict, key: str, lineno: int):
    if key not in obj:
        raise ParseError(lineno, f"missing field {key!r}")
    return obj[key]


def _number_list(value, key: str, lineno: int) -> list[float]:
    if not isinstance(value, list) or not all(
        isinstance(v, (int, float)) and not isinstance(v, bool) for v in value
    ):
        raise ParseError(lineno, f"{key!r} must be a list of numbers")
    return [float(v) for v in value]


def load_paired(path: str | Path, split_tag: SplitTag = "train") -> PairedDataset:
    """Load and validate a paired-logits file, preserving record order."""
    records = []
    seen: dict[str, int] = {}
    n_classes = None
    for lineno, obj in _parse_lines(path):
        rid = _require(obj, "id", lineno)
        if not isinstance(rid, str):
            raise ParseError(lineno, "'id' must be a string")
        teacher = _number_list(_require(obj, "teacher_logits", lineno), "teacher_logits", lineno)
        student = _number_list(_require(obj, "student_logits", lineno), "student_logits", lineno)
        label = obj.get("label")
        if len(teacher) != len(student):
            raise DimensionMismatchError(
                f"line {lineno}: record {rid!r}: teacher_logits has {len(teacher)} entries, "
                f"student_logits has {len(student)}"
            )
        if n_classes is not None and len(teacher) != n_classes:
            raise DimensionMismatchError(
                f"line {lineno}: record {rid!r} has {len(teacher)} classes, earlier records have {n_classes}"
            )
        if rid in seen:
            raise DuplicateIdError(f"line {lineno}: id {rid!r} already used on line {seen[rid]}")
        seen[rid] = lineno
        try:
            rec = PairedLogitRecord(rid, teacher, student, label)
        except DatasetError as exc:
            raise ParseError(lineno, str(exc)) from None
        n_classes = rec.n_classes
        records.append(rec)
    if not records:
        raise DatasetError(f"{path}: no records")
    return PairedDataset(tuple(records), split_tag)


def save_paired(ds: PairedDataset, path: str | Path) -> None:
    if not isinstance(ds, PairedDataset) or len(ds) == 0:
        raise DatasetError("refusing to save an empty dataset")
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for r in ds.records:
            fh.write(
                dumps(
                    {
                        "id": r.id,
                        "teacher_logits": r.teacher_logits,
                        "student_logits": r.student_logits,
                        "label": r.label,
                    }
                )
                + "\n"
            )


def load_points(path: str | Path) -> list[LabeledPoint]:
    points = []
    for lineno, obj in _parse_lines(path):
        feats = _number_list(_require(obj, "features", lineno), "features", lineno)
        label = _require(obj, "label", lineno)
        try:
            points.append(LabeledPoint(feats, label))
        except DatasetError as exc:
            raise ParseError(lineno, str(exc)) from None
    if not points:
        raise DatasetError(f"{path}: no points")
    dims = {p.features.size for p in points}
    if len(dims) != 1:
        raise DimensionMismatchError(f"{path}: mixed feature lengths {sorted(dims)}")
    return points


def save_points(points: Sequence[LabeledPoint], path: str | Path) -> None:
    if not points:
        raise DatasetError("refusing to save an empty point list")
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for p in points:
            fh.write(dumps({"features": p.features, "label": p.label}) + "\n")


# --------------------------------------------------------------------------
# Synthetic data


def gen_synthetic(task: str, n: int, noise: float, seed: int) -> list[LabeledPoint]:
    """Generate a balanced 2-D binary classification task.

    ``blobs`` is two Gaussian clusters at (-2,-2) and (2,2); ``moons`` two
    interleaved half circles; ``xor`` four clusters at the corners of a square
    with diagonal corners sharing a label. ``noise`` is the standard deviation
    of the isotropic Gaussian perturbation. Output order is a seeded shuffle.
    """
    if task not in TASKS:
        raise ValueError(f"unknown task {task!r}; expected one of {TASKS}")
    if n < 4:
        raise ValueError(f"n must be >= 4, got {n}")
    if not (noise >= 0 and math.isfinite(noise)):
        raise ValueError(f"noise must be a finite value >= 0, got {noise}")
    rng = make_rng(seed)
    idx = np.arange(n)

    if task == "blobs":
        labels = idx % 2
        base = np.array(BLOB_CENTERS)[labels]
    elif task == "xor":
        cluster = idx % 4
        base = np.array([c for c, _ in XOR_CENTERS])[cluster]
        labels = np.array([lab for _, lab in XOR_CENTERS])[cluster]
    else:
        n_outer = n - n // 2
        n_inner = n // 2
        t_out = np.linspace(0.0, math.pi, n_outer)
        t_in = np.linspace(0.0, math.pi, n_inner)
        outer = np.column_stack([np.cos(t_out), np.sin(t_out)])
        inner = np.column_stack([1.0 - np.cos(t_in), 0.5 - np.sin(t_in)])
        base = np.vstack([outer, inner])
        labels = np.concatenate([np.zeros(n_outer, dtype=np.int64), np.ones(n_inner, dtype=np.int64)])

    X = base + noise * rng.standard_normal((n, 2))
    order = rng.permutation(n)
    return [LabeledPoint(X[i], int(labels[i])) for i in order]


def split(points: Sequence[LabeledPoint], eval_fraction: float, seed: int):
    """Seeded train/eval partition; both parts keep the input order.

    The eval part has ``round(n * eval_fraction)`` points (half rounds up),
    clamped to ``[1, n - 1]``.
    """
    n = len(points)
    if n < 2:
        raise ValueError(f"need at least 2 points to split, got {n}")
    if not 0.0 < eval_fraction < 1.0:
        raise ValueError(f"eval_fraction must be in (0, 1), got {eval_fraction}")
    k = min(max(math.floor(n * eval_fraction + 0.5), 1), n - 1)
    chosen = np.zeros(n, dtype=bool)
    chosen[make_rng(seed).permutation(n)[:k]] = True
    train = [p for p, c in zip(points, chosen) if not c]
    evl = [p for p, c in zip(points, chosen) if c]
    return train, evl
