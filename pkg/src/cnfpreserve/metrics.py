"""Confidence, pairwise confidence difference, sigma, verdict, accuracy and ECE.

Confidence of a model on an input is the largest softmax probability; the
pairwise difference is student minus teacher confidence, defined only when
both models pick the same class (``None`` otherwise). Sigma is the root mean
square of the pairwise differences over a dataset, and the preservation
property holds when ``sigma <= kappa``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Literal

import numpy as np

from ._textio import write_json
from .datasets import PairedDataset, PairedLogitRecord, SplitTag

BotPolicy = Literal["zero", "exclude"]
Side = Literal["teacher", "student"]
BOT_POLICIES = ("zero", "exclude")

DEFAULT_KAPPA = 0.05
DEFAULT_GAMMA = 1.0
DEFAULT_ECE_BINS = 10


def softmax_gamma(logits, gamma: float = 1.0) -> np.ndarray:
    """Softmax with inverse temperature ``gamma`` along the last axis."""
    z = np.asarray(logits, dtype=np.float64)
    if z.shape[-1] < 2:
        raise ValueError("need at least 2 logits")
    if not np.all(np.isfinite(z)):
        raise ValueError("logits must be finite")
    if not gamma > 0:
        raise ValueError(f"gamma must be > 0, got {gamma}")
    s = gamma * z
    s = s - s.max(axis=-1, keepdims=True)
    e = np.exp(s)
    return e / e.sum(axis=-1, keepdims=True)


def confidence(logits, gamma: float = 1.0) -> tuple[float, int]:
    """Return ``(max probability, argmax)``; ties go to the lowest index."""
    p = softmax_gamma(logits, gamma)
    if p.ndim != 1:
        raise ValueError("confidence() takes a single logit vector")
    idx = int(np.argmax(p))
    return float(p[idx]), idx


def confidences(logits: np.ndarray, gamma: float = 1.0) -> tuple[np.ndarray, np.ndarray]:
    """Row-wise version of :func:`confidence` for an ``(n, C)`` array."""
    p = softmax_gamma(np.atleast_2d(logits), gamma)
    idx = np.argmax(p, axis=-1)
    return p[np.arange(p.shape[0]), idx], idx


@dataclass(frozen=True)
class PairwiseDiff:
    value: float | None
    agreed: bool

    def __post_init__(self):
        if (self.value is None) == self.agreed:
            raise ValueError("value must be present exactly when the models agree")


def delta_cnf(rec: PairedLogitRecord, gamma: float = 1.0) -> PairwiseDiff:
    c_t, i_t = confidence(rec.teacher_logits, gamma)
    c_s, i_s = confidence(rec.student_logits, gamma)
    if i_t != i_s:
        return PairwiseDiff(None, False)
    return PairwiseDiff(c_s - c_t, True)


def pairwise_diffs(ds: PairedDataset, gamma: float = 1.0) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized deltas for a dataset: ``(delta, agreed)``; delta is NaN where not agreed."""
    c_t, i_t = confidences(ds.teacher_matrix(), gamma)
    c_s, i_s = confidences(ds.student_matrix(), gamma)
    agreed = i_t == i_s
    delta = np.where(agreed, c_s - c_t, np.nan)
    return delta, agreed


@dataclass(frozen=True)
class SigmaResult:
    sigma: float
    n_total: int
    n_agree: int
    n_disagree: int
    bot_policy: BotPolicy


def sigma_from_diffs(delta: np.ndarray, agreed: np.ndarray, bot_policy: BotPolicy = "zero") -> SigmaResult:
    if bot_policy not in BOT_POLICIES:
        raise ValueError(f"bot_policy must be one of {BOT_POLICIES}, got {bot_policy!r}")
    n_total = int(agreed.size)
    n_agree = int(np.count_nonzero(agreed))
    # fsum is exactly rounded, so the result does not depend on record order
    ssq = math.fsum(float(d) * float(d) for d in delta[agreed])
    if bot_policy == "zero":
        denom = n_total
    else:
        if n_agree == 0:
            raise ValueError("bot_policy='exclude' needs at least one agreeing record")
        denom = n_agree
    return SigmaResult(math.sqrt(ssq / denom), n_total, n_agree, n_total - n_agree, bot_policy)


def sigma(ds: PairedDataset, gamma: float = 1.0, bot_policy: BotPolicy = "zero") -> SigmaResult:
    """Root-mean-square pairwise confidence difference.

    With ``bot_policy="zero"`` a disagreement adds nothing to the sum but
    still counts in the denominator; ``"exclude"`` drops it from both.
    """
    delta, agreed = pairwise_diffs(ds, gamma)
    return sigma_from_diffs(delta, agreed, bot_policy)


def verdict(sig: SigmaResult | float, kappa: float = DEFAULT_KAPPA) -> bool:
    """True iff sigma <= kappa (boundary inclusive)."""
    if not kappa > 0:
        raise ValueError(f"kappa must be > 0, got {kappa}")
    value = sig.sigma if isinstance(sig, SigmaResult) else float(sig)
    return value <= kappa


def _side_logits(ds: PairedDataset, side: Side) -> np.ndarray:
    if side == "teacher":
        return ds.teacher_matrix()
    if side == "student":
        return ds.student_matrix()
    raise ValueError(f"side must be 'teacher' or 'student', got {side!r}")


def accuracy(ds: PairedDataset, side: Side, gamma: float = 1.0) -> float:
    labels = ds.labels()
    _, idx = confidences(_side_logits(ds, side), gamma)
    return float(np.mean(idx == labels))


def ece_from_arrays(conf, correct, bins: int = DEFAULT_ECE_BINS) -> float:
    """Expected calibration error in percent over equal-width bins on [0, 1]."""
    conf = np.asarray(conf, dtype=np.float64)
    correct = np.asarray(correct, dtype=np.float64)
    if bins < 1:
        raise ValueError(f"bins must be >= 1, got {bins}")
    if conf.size == 0 or conf.shape != correct.shape:
        raise ValueError("conf and correct must be non-empty and the same shape")
    b = np.minimum(np.floor(conf * bins).astype(np.int64), bins - 1)
    n = conf.size
    total = 0.0
    for k in range(bins):
        mask = b == k
        n_b = int(np.count_nonzero(mask))
        if n_b:
            total += (n_b / n) * abs(correct[mask].mean() - conf[mask].mean())
    return 100.0 * total


def ece(ds: PairedDataset, side: Side, gamma: float = 1.0, bins: int = DEFAULT_ECE_BINS) -> float:
    labels = ds.labels()
    conf, idx = confidences(_side_logits(ds, side), gamma)
    return ece_from_arrays(conf, idx == labels, bins)


# --------------------------------------------------------------------------
# Distributions


@dataclass(frozen=True)
class Histogram:
    lo: float
    hi: float
    counts: np.ndarray

    @property
    def edges(self) -> np.ndarray:
        return np.linspace(self.lo, self.hi, self.counts.size + 1)

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def to_csv(self, path: str | Path) -> None:
        edges = self.edges
        lines = ["bin_lo,bin_hi,count"]
        for k, c in enumerate(self.counts):
            lines.append(f"{float(edges[k])!r},{float(edges[k + 1])!r},{int(c)}")
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def histogram(values, lo: float, hi: float, bins: int) -> Histogram:
    """Equal-width histogram; value v lands in ``min(floor((v-lo)/(hi-lo)*bins), bins-1)``."""
    if bins < 1:
        raise ValueError(f"bins must be >= 1, got {bins}")
    v = np.asarray(values, dtype=np.float64)
    b = np.floor((v - lo) / (hi - lo) * bins).astype(np.int64)
    b = np.clip(b, 0, bins - 1)
    return Histogram(lo, hi, np.bincount(b, minlength=bins))


@dataclass(frozen=True)
class Distributions:
    teacher: Histogram
    student: Histogram
    delta: Histogram
    n_total: int
    n_bot: int


def distributions(ds: PairedDataset, gamma: float = 1.0, bins: int = 50) -> Distributions:
    c_t, _ = confidences(ds.teacher_matrix(), gamma)
    c_s, _ = confidences(ds.student_matrix(), gamma)
    delta, agreed = pairwise_diffs(ds, gamma)
    return Distributions(
        teacher=histogram(c_t, 0.0, 1.0, bins),
        student=histogram(c_s, 0.0, 1.0, bins),
        delta=histogram(delta[agreed], -1.0, 1.0, bins),
        n_total=len(ds),
        n_bot=int(np.count_nonzero(~agreed)),
    )


# --------------------------------------------------------------------------
# Report


@dataclass(frozen=True)
class ConfidenceReport:
    acc_teacher: float | None
    acc_student: float | None
    ece_teacher: float | None
    ece_student: float | None
    sigma_result: SigmaResult
    kappa: float
    holds: bool
    split_tag: SplitTag

    def to_dict(self) -> dict:
        s = self.sigma_result
        return {
            "acc_teacher": self.acc_teacher,
            "acc_student": self.acc_student,
            "ece_teacher": self.ece_teacher,
            "ece_student": self.ece_student,
            "sigma": s.sigma,
            "n_total": s.n_total,
            "n_agree": s.n_agree,
            "n_disagree": s.n_disagree,
            "kappa": self.kappa,
            "holds": self.holds,
            "split": self.split_tag,
        }

    def save(self, path: str | Path) -> None:
        write_json(path, self.to_dict())


def audit(
    ds: PairedDataset,
    kappa: float = DEFAULT_KAPPA,
    gamma: float = DEFAULT_GAMMA,
    ece_bins: int = DEFAULT_ECE_BINS,
    bot_policy: BotPolicy = "zero",
) -> ConfidenceReport:
    """Compute one table row: accuracy/ECE for both models (if labeled), sigma and verdict."""
    sig = sigma(ds, gamma, bot_policy)
    holds = verdict(sig, kappa)
    if ds.has_labels:
        acc_t, acc_s = accuracy(ds, "teacher", gamma), accuracy(ds, "student", gamma)
        ece_t, ece_s = ece(ds, "teacher", gamma, ece_bins), ece(ds, "student", gamma, ece_bins)
    else:
        acc_t = acc_s = ece_t = ece_s = None
    return ConfidenceReport(acc_t, acc_s, ece_t, ece_s, sig, kappa, holds, ds.split_tag)

