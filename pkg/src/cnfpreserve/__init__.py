"""Confidence-preservation audit for knowledge-distilled classifier pairs."""

from .bounds import BoundChainReport, kappa_from_bound, logit_mse_sum, verify_chain
from .datasets import (
    LabeledPoint,
    PairedDataset,
    PairedLogitRecord,
    gen_synthetic,
    load_paired,
    load_points,
    save_paired,
    save_points,
    split,
)
from .engine import (
    DistillConfig,
    MlpModel,
    TrainLog,
    backward,
    distill,
    export_pairs,
    forward,
    loss_eq1,
    train_teacher,
)
from .metrics import (
    ConfidenceReport,
    PairwiseDiff,
    SigmaResult,
    accuracy,
    audit,
    confidence,
    delta_cnf,
    distributions,
    ece,
    sigma,
    softmax_gamma,
    verdict,
)
from .tuner import TuneGrid, TuneOutcome, compare_runs, tune

__version__ = "0.1.0"
