"""Loss terms and their weighted compositions.

The stochastic-coding objective for a batch is

    total = NLL(t, y) + beta * KL(N(mu, sigma^2) || N(0, I)) - gamma * H_batch

where t is a reparameterized sample from the per-sample Gaussian code,
NLL is cross-entropy on sampled logits (classification) or squared error
(regression), KL is the closed diagonal-Gaussian form, and H_batch is the
entropy of the batch-averaged predicted class distribution (a Jensen upper
bound on the mean per-sample entropy, so maximizing it promotes class-level
uniformity without forcing individual predictions flat).

The per-sample confidence penalty (negative mean per-row entropy) is kept
separate: it regularizes each prediction toward uniform, which is a
different effect from the batch-marginal term above.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .diffcore import (
    DomainError,
    Tensor,
    exp,
    log_softmax,
    mul,
    reduce_mean,
    reduce_sum,
    scale,
    xlogx,
)
from .encoder import GaussianCode

CLASSIFICATION_KINDS = ("spc", "pc", "ce", "ce_cp", "vib")
REGRESSION_KINDS = ("mse", "mse_pc", "mse_vib")
OBJECTIVE_KINDS = CLASSIFICATION_KINDS + REGRESSION_KINDS

_ROW_SUM_TOL = 1e-9


@dataclass
class ObjectiveConfig:
    """Which loss to optimize and with what trade-off weights.

    kind "pc" is "spc" with gamma pinned to 0; "ce" is the fully
    deterministic degenerate case (beta = gamma = 0, t = mu). Regression
    kinds never carry a gamma term: with a one-dimensional output space
    the batch-entropy regularizer has no class structure to act on.

    `structured_from` selects the probabilities fed to the batch-entropy
    term: softmax of the sampled t ("sample", default) or of mu ("mu").
    `cp_weight` is the confidence-penalty weight, used by kind "ce_cp" only.
    """

    kind: str = "spc"
    beta: float = 0.0
    gamma: float = 0.0
    task: str = "classification"
    structured_from: str = "sample"
    cp_weight: float = 0.0

    def __post_init__(self):
        if self.kind not in OBJECTIVE_KINDS:
            raise ValueError(f"unknown objective kind {self.kind!r}")
        if self.task not in ("classification", "regression"):
            raise ValueError(f"unknown task {self.task!r}")
        if self.beta < 0 or self.gamma < 0 or self.cp_weight < 0:
            raise ValueError("beta, gamma and cp_weight must be non-negative")
        if self.structured_from not in ("sample", "mu"):
            raise ValueError(f"structured_from must be 'sample' or 'mu', got {self.structured_from!r}")
        expected_task = "classification" if self.kind in CLASSIFICATION_KINDS else "regression"
        if self.task != expected_task:
            raise ValueError(f"objective kind {self.kind!r} requires task {expected_task!r}")
        if self.gamma != 0.0 and self.kind != "spc":
            # pc is spc with gamma pinned to 0; regression has no class structure
            raise ValueError(f"kind {self.kind!r} does not take a gamma term")
        if self.beta != 0.0 and self.kind in ("ce", "ce_cp", "mse"):
            raise ValueError(f"kind {self.kind!r} does not take a beta term")
        if self.cp_weight != 0.0 and self.kind != "ce_cp":
            raise ValueError("cp_weight applies to kind 'ce_cp' only")


@dataclass
class LossTerms:
    """A scalar loss tensor plus its additive components as plain floats.

    Components that a configuration does not compute (weight zero) are
    reported as 0.0. Identity: total = nll + beta*kl - gamma*batch_entropy
    + cp_weight*penalty, with each weight taken from the config in force.
    """

    total: Tensor
    nll: float = 0.0
    kl: float = 0.0
    batch_entropy: float = 0.0
    penalty: float = 0.0

    @property
    def total_value(self) -> float:
        return float(self.total.values)


def softmax_probs(logits: Tensor) -> Tensor:
    """Differentiable row-wise softmax, via exp(log_softmax)."""
    return exp(log_softmax(logits))


def task_nll(t: Tensor, y) -> Tensor:
    """Mean over the batch of -log softmax(t)[i, y[i]]."""
    y = np.asarray(y)
    batch, num_classes = t.values.shape
    if y.shape != (batch,):
        raise ValueError(f"task_nll: expected {batch} labels, got shape {y.shape}")
    if np.any((y < 0) | (y >= num_classes)):
        raise ValueError(f"task_nll: labels out of range [0, {num_classes})")
    log_probs = log_softmax(t)
    onehot = np.zeros((batch, num_classes))
    onehot[np.arange(batch), y] = 1.0
    return scale(reduce_sum(mul(log_probs, Tensor(onehot))), -1.0 / batch)


def mse(t: Tensor, y) -> Tensor:
    """Mean of (t_i - y_i)^2 over the batch."""
    y = np.asarray(y, dtype=np.float64).reshape(-1, 1)
    if t.values.shape != y.shape:
        raise ValueError(f"mse: prediction shape {t.values.shape} != target shape {y.shape}")
    diff = t - Tensor(y)
    return reduce_mean(mul(diff, diff))


def kl_to_std_normal(code: GaussianCode) -> Tensor:
    """Closed-form KL(N(mu, diag sigma^2) || N(0, I)), averaged over the batch.

    Per sample: 0.5 * sum_d (mu_d^2 + sigma_d^2 - 1 - log sigma_d^2).
    Non-negative, zero exactly when mu = 0 and log_var = 0.
    """
    batch = code.mu.values.shape[0]
    term = mul(code.mu, code.mu) + exp(code.log_var) - code.log_var - Tensor(1.0)
    return scale(reduce_sum(term), 0.5 / batch)


def _check_rows_normalized(probs: Tensor, op: str) -> None:
    values = probs.values
    if values.ndim != 2:
        raise DomainError(f"{op}: expected a BxC probability matrix, got {values.shape}")
    if np.any(values < 0.0):
        raise DomainError(f"{op}: probabilities must be non-negative")
    row_sums = values.sum(axis=1)
    if np.any(np.abs(row_sums - 1.0) > _ROW_SUM_TOL):
        worst = float(np.abs(row_sums - 1.0).max())
        raise DomainError(f"{op}: rows must sum to 1 (max deviation {worst:.3e})")


def batch_entropy(probs: Tensor) -> Tensor:
    """Entropy of the column-mean of a row-stochastic matrix (natural log).

    By Jensen this upper-bounds the mean per-row entropy; it is maximal
    (log C) when the batch-averaged class marginal is uniform and 0 when
    every row concentrates on one shared class.
    """
    _check_rows_normalized(probs, "batch_entropy")
    marginal = reduce_mean(probs, axis=0)
    return scale(reduce_sum(xlogx(marginal)), -1.0)


def confidence_penalty(probs: Tensor) -> Tensor:
    """Negative mean per-row entropy, -(1/B) sum_i H(p_i); in [-log C, 0]."""
    _check_rows_normalized(probs, "confidence_penalty")
    batch = probs.values.shape[0]
    return scale(reduce_sum(xlogx(probs)), 1.0 / batch)


def spc_loss(code: GaussianCode, t_sample: Tensor, y, cfg: ObjectiveConfig) -> LossTerms:
    """Compose NLL + beta*KL - gamma*batch_entropy for kinds 'spc' and 'pc'.

    Zero-weight terms are skipped entirely (not multiplied by 0), so the
    gamma = 0 case is the plain coding objective and beta = gamma = 0
    reduces to cross-entropy on the sampled logits, exactly.
    """
    if cfg.kind not in ("spc", "pc"):
        raise ValueError(f"spc_loss: config kind must be 'spc' or 'pc', got {cfg.kind!r}")
    nll = task_nll(t_sample, y)
    total = nll
    kl_value = 0.0
    lb_value = 0.0
    if cfg.beta != 0.0:
        kl = kl_to_std_normal(code)
        kl_value = float(kl.values)
        total = total + scale(kl, cfg.beta)
    if cfg.gamma != 0.0:
        source = t_sample if cfg.structured_from == "sample" else code.mu
        lb = batch_entropy(softmax_probs(source))
        lb_value = float(lb.values)
        total = total - scale(lb, cfg.gamma)
    return LossTerms(total=total, nll=float(nll.values), kl=kl_value,
                     batch_entropy=lb_value)


def pc_regression_loss(code: GaussianCode, t_sample: Tensor, y,
                       cfg: ObjectiveConfig) -> LossTerms:
    """Squared-error analogue of the coding objective: MSE + beta*KL."""
    if cfg.kind not in ("mse", "mse_pc"):
        raise ValueError(f"pc_regression_loss: config kind must be 'mse' or 'mse_pc', got {cfg.kind!r}")
    nll = mse(t_sample, y)
    total = nll
    kl_value = 0.0
    if cfg.beta != 0.0:
        kl = kl_to_std_normal(code)
        kl_value = float(kl.values)
        total = total + scale(kl, cfg.beta)
    return LossTerms(total=total, nll=float(nll.values), kl=kl_value)
