"""Continual-learning evaluation metrics.

The accuracy matrix R records R[i, j] = accuracy on task j after
learning task i (0-based here; defined for j <= i). ACC averages the
final row, backward transfer measures retention against the diagonal,
and forward transfer compares the diagonal with independent per-task
experts. The per-batch metrics (immediate accuracy, regret, KL) are
pure functions of the ensemble outputs on a test set.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError


class AccuracyMatrix:
    """Lower-triangular task accuracy record plus the expert vector."""

    def __init__(self, Q):
        if Q < 1:
            raise ContractError(f"Q must be >= 1, got {Q}")
        self.Q = Q
        self.R = np.full((Q, Q), np.nan)
        self.independent = np.full(Q, np.nan)

    def record(self, after_task, on_task, value):
        """Store accuracy on on_task measured after learning after_task."""
        if on_task > after_task:
            raise ContractError(
                f"R[{after_task},{on_task}] is above the diagonal"
            )
        if not 0.0 <= value <= 1.0:
            raise ContractError(f"accuracy must be in [0,1], got {value}")
        self.R[after_task, on_task] = value

    def set_independent(self, q, value):
        self.independent[q] = value


def compute_acc(mat):
    """Mean of the final row: average accuracy over all learned tasks."""
    bottom = mat.R[mat.Q - 1, :]
    if np.any(np.isnan(bottom)):
        raise ContractError("final row of R is not fully recorded")
    return float(bottom.mean())


def compute_bwt(mat):
    """Backward transfer: mean of R[Q-1, q] - R[q, q] over q < Q-1.

    Positive values mean later tasks improved earlier ones.
    """
    if mat.Q < 2:
        raise ContractError("backward transfer needs at least two tasks")
    diffs = [mat.R[mat.Q - 1, q] - mat.R[q, q] for q in range(mat.Q - 1)]
    if np.any(np.isnan(diffs)):
        raise ContractError("R entries needed for BWT are not recorded")
    return float(np.mean(diffs))


def compute_fwt(mat):
    """Forward transfer: mean of R[q, q] - independent[q] over q >= 1."""
    if mat.Q < 2:
        raise ContractError("forward transfer needs at least two tasks")
    diffs = [mat.R[q, q] - mat.independent[q] for q in range(1, mat.Q)]
    if np.any(np.isnan(diffs)):
        raise ContractError("independent accuracies for FWT are not recorded")
    return float(np.mean(diffs))


def immediate_accuracy(probs, Y_te):
    """Fraction of rows whose argmax matches the target argmax.

    Ties go to the lowest class index on both sides, which makes the
    rule deterministic.
    """
    probs = np.asarray(probs, dtype=float)
    Y_te = np.asarray(Y_te, dtype=float)
    if probs.shape != Y_te.shape:
        raise ContractError(
            f"shapes must agree, got {probs.shape} vs {Y_te.shape}"
        )
    if probs.shape[0] < 1:
        raise ContractError("empty test set")
    return float(np.mean(probs.argmax(axis=1) == Y_te.argmax(axis=1)))


def _stack_learners(per_learner, Y_te):
    per_learner = [np.asarray(P, dtype=float) for P in per_learner]
    if not per_learner:
        raise ContractError("need at least one learner output")
    Y_te = np.asarray(Y_te, dtype=float)
    for P in per_learner:
        if P.shape != Y_te.shape:
            raise ContractError(
                f"learner output shape {P.shape} does not match targets {Y_te.shape}"
            )
    return per_learner, Y_te


def immediate_regret(per_learner, Y_te):
    """Squared Frobenius cost of the raw ensemble sum on the test set.

    || (sum_l P_l - L * Y) / (L * n) ||_F^2 where n is the number of
    test rows. Identical learners cancel the L, so duplicating a
    learner leaves the value unchanged.
    """
    per_learner, Y_te = _stack_learners(per_learner, Y_te)
    L = len(per_learner)
    n = Y_te.shape[0]
    R = (sum(per_learner) - L * Y_te) / (L * n)
    return float(np.sum(R * R))


def immediate_kl(per_learner, Y_te):
    """Divergence of the summed softmax outputs from the targets.

    Mean over test rows of sum_j Y[i,j] * ln(L * Y[i,j] / sum_l P_l[i,j])
    with the convention 0 * ln(0 / x) = 0. Natural logarithm throughout;
    nonnegative for one-hot targets because the summed probabilities
    never exceed L. Summed probabilities are floored at the smallest
    normal double before the log, so a learner that underflows the true
    class yields a large finite divergence instead of inf.
    """
    per_learner, Y_te = _stack_learners(per_learner, Y_te)
    L = len(per_learner)
    n = Y_te.shape[0]
    P = sum(per_learner)
    mask = Y_te > 0
    floor = np.finfo(float).tiny
    terms = Y_te[mask] * np.log(L * Y_te[mask] / np.maximum(P[mask], floor))
    return float(terms.sum() / n)


@dataclass
class TraceSeries:
    """Per-batch evaluation curves collected during a run."""

    t: list = field(default_factory=list)
    acc_seen: list = field(default_factory=list)
    acc_full: list = field(default_factory=list)
    regret: list = field(default_factory=list)
    cum_regret: list = field(default_factory=list)
    kl: list = field(default_factory=list)

    def append(self, t, acc_seen, acc_full, regret, kl):
        prev = self.cum_regret[-1] if self.cum_regret else 0.0
        self.t.append(int(t))
        self.acc_seen.append(float(acc_seen))
        self.acc_full.append(float(acc_full))
        self.regret.append(float(regret))
        self.cum_regret.append(prev + float(regret))
        self.kl.append(float(kl))

    def rows(self):
        return list(
            zip(self.t, self.acc_seen, self.acc_full, self.regret,
                self.cum_regret, self.kl)
        )
