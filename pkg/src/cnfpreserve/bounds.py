"""Check the sigma <= kappa bound chain on concrete paired logits.

For every input the confidence gap is at most the 2-norm of the softmax gap,
which is at most ``gamma`` times the logit gap. Summing squares gives::

    sigma^2 * n  <=  gamma^2 * sum ||z_S - z_T||^2          (step 1)

and since cross-entropy is non-negative, ``(1 - alpha) * sum ||z_S - z_T||^2``
never exceeds the total loss ``L`` (step 2). Together::

    sigma  <=  gamma * sqrt(L / (n * (1 - alpha)))           (step 3)

The inequalities are checked as ``<=`` with an absolute tolerance, because
identical models give equality.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ._textio import write_json
from .datasets import PairedDataset
from .engine import distillation_loss
from .metrics import pairwise_diffs, sigma_from_diffs, softmax_gamma

DEFAULT_TOL = 1e-9


def logit_mse_sum(ds: PairedDataset) -> float:
    """Sum over records of the squared 2-norm of the logit difference."""
    diff = ds.student_matrix() - ds.teacher_matrix()
    return math.fsum((diff * diff).ravel().tolist())


def kappa_from_bound(gamma: float, beta: float, alpha: float, n: int) -> float:
    if not gamma > 0:
        raise ValueError(f"gamma must be > 0, got {gamma}")
    if not beta >= 0:
        raise ValueError(f"beta must be >= 0, got {beta}")
    if not 0 <= alpha < 1:
        raise ValueError(f"alpha must be in [0, 1), got {alpha}")
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    return gamma * math.sqrt(beta / (n * (1.0 - alpha)))


def observed_loss(ds: PairedDataset, alpha: float = 0.0, gamma: float = 1.0) -> float:
    """Sum-form distillation loss recomputed from the paired logits."""
    labels = ds.labels() if alpha > 0 else None
    return distillation_loss(ds.student_matrix(), labels, ds.teacher_matrix(), alpha, gamma, "sum")


@dataclass(frozen=True)
class BoundChainReport:
    lhs_sigma_sq_n: float
    mid_gamma_sq_logit_mse: float
    beta: float
    alpha: float
    gamma: float
    rhs_loss_bound: float
    sigma: float
    kappa_theoretical: float
    step1_holds: bool
    step2_holds: bool
    step3_holds: bool
    slack1: float
    slack2: float
    slack3: float
    tol: float

    @property
    def all_hold(self) -> bool:
        return self.step1_holds and self.step2_holds and self.step3_holds

    @property
    def ratio(self) -> float:
        """lhs / mid of step 1; NaN when the logit gap is zero."""
        if self.mid_gamma_sq_logit_mse == 0:
            return math.nan
        return self.lhs_sigma_sq_n / self.mid_gamma_sq_logit_mse

    def to_dict(self) -> dict:
        return {
            "step1_holds": self.step1_holds,
            "step2_holds": self.step2_holds,
            "step3_holds": self.step3_holds,
            "sigma": self.sigma,
            "kappa_theoretical": self.kappa_theoretical,
            "slack1": self.slack1,
            "slack2": self.slack2,
            "slack3": self.slack3,
        }

    def save(self, path: str | Path) -> None:
        write_json(path, self.to_dict())


def verify_chain(
    ds: PairedDataset,
    gamma: float = 1.0,
    alpha: float = 0.0,
    observed: float | None = None,
    tol: float = DEFAULT_TOL,
) -> BoundChainReport:
    """Evaluate all three steps; ``observed`` defaults to the recomputed sum-form loss.

    Slacks are ``rhs - lhs`` for each step, so a negative slack beyond
    ``tol`` means the step failed.
    """
    if not 0 <= alpha < 1:
        raise ValueError(f"alpha must be in [0, 1), got {alpha}")
    if observed is None:
        observed = observed_loss(ds, alpha, gamma)
    if not observed >= 0:
        raise ValueError(f"observed loss must be >= 0, got {observed}")
    n = len(ds)
    delta, agreed = pairwise_diffs(ds, gamma)
    sig = sigma_from_diffs(delta, agreed, "zero").sigma
    lhs = math.fsum(float(d) * float(d) for d in delta[agreed])
    mse = logit_mse_sum(ds)
    mid = gamma * gamma * mse
    kappa = kappa_from_bound(gamma, observed, alpha, n)
    slack1 = mid - lhs
    slack2 = observed - (1.0 - alpha) * mse
    slack3 = kappa - sig
    return BoundChainReport(
        lhs_sigma_sq_n=lhs,
        mid_gamma_sq_logit_mse=mid,
        beta=observed,
        alpha=alpha,
        gamma=gamma,
        rhs_loss_bound=gamma * gamma * observed / (1.0 - alpha),
        sigma=sig,
        kappa_theoretical=kappa,
        step1_holds=bool(slack1 >= -tol),
        step2_holds=bool(slack2 >= -tol),
        step3_holds=bool(slack3 >= -tol),
        slack1=slack1,
        slack2=slack2,
        slack3=slack3,
        tol=tol,
    )


def lipschitz_gaps(a: np.ndarray, b: np.ndarray, gamma: float) -> tuple[np.ndarray, np.ndarray]:
    """Row-wise ``(||softmax(a) - softmax(b)||_2, gamma * ||a - b||_2)``."""
    lhs = np.linalg.norm(softmax_gamma(a, gamma) - softmax_gamma(b, gamma), axis=-1)
    rhs = gamma * np.linalg.norm(np.asarray(a) - np.asarray(b), axis=-1)
    return lhs, rhs
