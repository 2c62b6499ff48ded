"""Deterministic minibatch training: Adamax, early stopping, seeds, sweeps.

Randomness discipline: one `numpy` Generator per run, seeded from the run
seed, consumed in a fixed documented order — model init (when the model is
built here), then per epoch one shuffle permutation, then per batch one
noise draw followed by one dropout mask (if dropout is on). Deterministic
objectives consume the noise draw too and ignore it, so runs that differ
only in objective kind see identical shuffles and can be compared
trajectory-for-trajectory.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import time
from dataclasses import dataclass, field

import numpy as np

from .baselines import (
    VibParams,
    ce_cp_forward,
    ce_forward,
    init_vib,
    mse_forward,
    vib_decode,
    vib_forward,
    vib_from_payload,
    vib_to_checkpoint,
)
from .data import Dataset
from .diffcore import Tape, Tensor, backward, zero_grads
from .encoder import (
    EncoderParams,
    encode,
    encoder_from_payload,
    encoder_to_checkpoint,
    init_encoder,
    load_checkpoint_payload,
    predict,
    sample,
    save_checkpoint,
    softmax_rows,
)
from .metrics import _per_class_stats, confusion_matrix, macro_f1, macro_recall, pearson, spearman
from .objectives import (
    LossTerms,
    ObjectiveConfig,
    pc_regression_loss,
    spc_loss,
)

Model = EncoderParams | VibParams


class TrainingDiverged(RuntimeError):
    """Non-finite loss or gradients encountered during training."""


@dataclass
class TrainConfig:
    """Hyperparameters of one training run (seeds aside, fully deterministic).

    The default learning rate targets the desk-scale MLP; transformer-style
    fine-tuning rates (5e-5) remain available through the field.
    """

    objective: ObjectiveConfig = field(default_factory=ObjectiveConfig)
    epochs: int = 20
    batch_size: int = 128
    learning_rate: float = 1e-2
    weight_decay: float = 0.0
    patience: int = 5
    seeds: tuple[int, ...] = (0, 1, 2, 3, 4)
    hidden_dim: int = 64
    vib_latent_dim: int = 16
    vib_decoder_hidden: int | None = None
    dropout: float = 0.0
    layer_norm: bool = False
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    decoupled_decay: bool = True
    select_metric: str = "auto"
    zero_eps: bool = False  # replace every noise draw with zeros (draws still consumed)

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if not 1 <= self.patience <= self.epochs:
            raise ValueError("patience must be in [1, epochs]")
        if self.batch_size < 2:
            raise ValueError("batch_size must be >= 2 (batch entropy needs a real batch)")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must be in [0, 1)")

    def headline_metric(self) -> str:
        if self.select_metric != "auto":
            return self.select_metric
        return "macro_f1" if self.objective.task == "classification" else "spearman"

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["seeds"] = list(self.seeds)
        return d


@dataclass
class AdamaxState:
    m: list[np.ndarray]
    u: list[np.ndarray]
    t: int = 0

    @classmethod
    def init(cls, params: list[Tensor]) -> "AdamaxState":
        return cls(m=[np.zeros_like(p.values) for p in params],
                   u=[np.zeros_like(p.values) for p in params])


def adamax_step(params: list[Tensor], grads: list[np.ndarray], state: AdamaxState,
                lr: float, weight_decay: float = 0.0, beta1: float = 0.9,
                beta2: float = 0.999, epsilon: float = 1e-8,
                decoupled: bool = True) -> None:
    """One Adamax update, in place.

    m <- beta1*m + (1-beta1)*g;  u <- max(beta2*u, |g|);
    p <- p - (lr / (1 - beta1^t)) * m / (u + epsilon).
    Weight decay is decoupled by default (p is shrunk by lr*wd before the
    update); `decoupled=False` adds wd*p to the gradient instead.
    """
    for i, g in enumerate(grads):
        if not np.all(np.isfinite(g)):
            raise TrainingDiverged(f"non-finite gradient in parameter {i} "
                                   f"(shape {g.shape}); aborting")
    state.t += 1
    correction = 1.0 - beta1 ** state.t
    for p, g, m, u in zip(params, grads, state.m, state.u):
        if weight_decay != 0.0:
            if decoupled:
                p.values *= 1.0 - lr * weight_decay
            else:
                g = g + weight_decay * p.values
        m *= beta1
        m += (1.0 - beta1) * g
        np.maximum(beta2 * u, np.abs(g), out=u)
        p.values -= (lr / correction) * m / (u + epsilon)


@dataclass
class RunReport:
    """Everything one run produced; hashable for byte-exact reproducibility."""

    config: dict
    seed: int
    dataset_info: dict = field(default_factory=dict)
    best_epoch: int = 0
    epochs_ran: int = 0
    step_logs: list[dict] = field(default_factory=list)
    epoch_logs: list[dict] = field(default_factory=list)
    val_metrics: dict = field(default_factory=dict)
    test_metrics: dict = field(default_factory=dict)
    headline_metric: str = ""
    diverged: bool = False
    wall_clock: float = 0.0
    model: "Model | None" = field(default=None, repr=False, compare=False)

    @property
    def headline_value(self) -> float:
        return self.test_metrics[self.headline_metric]

    def results_dict(self) -> dict:
        """Reported numbers only; excludes timing, stable across reruns."""
        return {
            "config": self.config,
            "seed": self.seed,
            "dataset_info": self.dataset_info,
            "best_epoch": self.best_epoch,
            "epochs_ran": self.epochs_ran,
            "step_logs": self.step_logs,
            "epoch_logs": self.epoch_logs,
            "val_metrics": self.val_metrics,
            "test_metrics": self.test_metrics,
            "headline_metric": self.headline_metric,
            "diverged": self.diverged,
        }

    def run_hash(self) -> str:
        payload = json.dumps(self.results_dict(), sort_keys=True)
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()


def save_model(path: str, model: Model) -> None:
    if isinstance(model, VibParams):
        kind, arch, tensors = vib_to_checkpoint(model)
    else:
        kind, arch, tensors = encoder_to_checkpoint(model)
    save_checkpoint(path, kind, arch, tensors)


def load_model(path: str) -> Model:
    payload = load_checkpoint_payload(path)
    if payload["kind"] == "vib":
        return vib_from_payload(payload)
    return encoder_from_payload(payload)


def build_model(dataset: Dataset, cfg: TrainConfig,
                rng: np.random.Generator | int) -> Model:
    out_dim = dataset.num_classes if dataset.task == "classification" else 1
    if cfg.objective.kind in ("vib", "mse_vib"):
        return init_vib(dataset.num_features, cfg.hidden_dim, cfg.vib_latent_dim,
                        out_dim, rng, decoder_hidden=cfg.vib_decoder_hidden,
                        use_layer_norm=cfg.layer_norm)
    return init_encoder(dataset.num_features, cfg.hidden_dim, out_dim, rng,
                        use_layer_norm=cfg.layer_norm)


def batch_loss(model: Model, x: Tensor, y, objective: ObjectiveConfig,
               eps: np.ndarray, dropout_mask: np.ndarray | None = None) -> LossTerms:
    """Dispatch one minibatch through the configured objective."""
    kind = objective.kind
    if kind == "ce":
        return ce_forward(model, x, y, dropout_mask)
    if kind == "ce_cp":
        return ce_cp_forward(model, x, y, objective.cp_weight, dropout_mask)
    if kind == "mse":
        return mse_forward(model, x, y, dropout_mask)
    if kind in ("spc", "pc"):
        code = encode(model, x, dropout_mask)
        t = sample(code, eps)
        return spc_loss(code, t, y, objective)
    if kind == "mse_pc":
        code = encode(model, x, dropout_mask)
        t = sample(code, eps)
        return pc_regression_loss(code, t, y, objective)
    if kind in ("vib", "mse_vib"):
        return vib_forward(model, x, y, objective.beta, eps,
                           task=objective.task, dropout_mask=dropout_mask)
    raise ValueError(f"unknown objective kind {kind!r}")


def model_outputs(model: Model, features: np.ndarray, task: str) -> np.ndarray:
    """Deterministic predictions: class probabilities or point estimates.

    Stochastic heads are read out at their mean (no sampling at inference).
    """
    x = Tensor(features)
    if isinstance(model, VibParams):
        code = encode(model.encoder_view(), x)
        out = vib_decode(model, code.mu)
        if task == "classification":
            return softmax_rows(out.values)
        return out.values
    code = encode(model, x)
    return predict(code, task).values


def evaluate_split(model: Model, dataset: Dataset, split: str) -> dict:
    features, targets = dataset.subset(split)
    outputs = model_outputs(model, features, dataset.task)
    if dataset.task == "classification":
        pred = outputs.argmax(axis=1)
        _, _, f1 = _per_class_stats(confusion_matrix(targets, pred, dataset.num_classes))
        return {
            "macro_f1": macro_f1(targets, pred, dataset.num_classes),
            "macro_recall": macro_recall(targets, pred, dataset.num_classes),
            "accuracy": float((pred == targets).mean()),
            "per_class_f1": [float(v) for v in f1],
        }
    values = outputs.ravel()
    return {"pearson": pearson(values, targets), "spearman": spearman(values, targets)}


def _noise_dim(model: Model) -> int:
    return model.latent_dim if isinstance(model, VibParams) else model.out_dim


def _snapshot(params: list[Tensor]) -> list[np.ndarray]:
    return [p.values.copy() for p in params]


def _restore(params: list[Tensor], snapshot: list[np.ndarray]) -> None:
    for p, values in zip(params, snapshot):
        p.values = values.copy()


def train(dataset: Dataset, cfg: TrainConfig, seed: int,
          model: Model | None = None) -> RunReport:
    """Train one model; returns a report reproducible byte-for-byte from
    (dataset, cfg, seed).

    Validation is scored every epoch with the task's headline metric; the
    best parameters are kept and training stops once `patience` epochs pass
    without improvement. On divergence the best checkpoint so far is
    restored and the report is flagged.
    """
    if dataset.indices("train").size == 0 or dataset.indices("val").size == 0:
        raise ValueError("dataset needs non-empty train and val splits")
    started = time.perf_counter()
    rng = np.random.default_rng(seed)
    if model is None:
        model = build_model(dataset, cfg, rng)
    params = model.parameters()
    state = AdamaxState.init(params)
    objective = cfg.objective
    metric_name = cfg.headline_metric()

    train_features, train_targets = dataset.subset("train")
    n_train = train_features.shape[0]
    noise_dim = _noise_dim(model)

    dataset_info = {"task": dataset.task, "num_classes": dataset.num_classes,
                    "num_features": dataset.num_features,
                    "label_names": list(dataset.label_names)}
    report = RunReport(config=cfg.to_dict(), seed=seed, dataset_info=dataset_info,
                       headline_metric=metric_name)
    best_value = -np.inf
    best_state = _snapshot(params)
    best_epoch = 0
    step = 0
    diverged = False

    for epoch in range(1, cfg.epochs + 1):
        perm = rng.permutation(n_train)
        epoch_totals = []
        for start in range(0, n_train, cfg.batch_size):
            idx = perm[start:start + cfg.batch_size]
            x = Tensor(train_features[idx])
            y = train_targets[idx]
            draw = rng.standard_normal((idx.size, noise_dim))
            eps = np.zeros_like(draw) if cfg.zero_eps else draw
            mask = None
            if cfg.dropout > 0.0:
                keep = rng.random((idx.size, cfg.hidden_dim)) >= cfg.dropout
                mask = keep / (1.0 - cfg.dropout)
            with Tape() as tape:
                terms = batch_loss(model, x, y, objective, eps, mask)
            total = terms.total_value
            step += 1
            report.step_logs.append({
                "step": step, "epoch": epoch, "nll": terms.nll, "kl": terms.kl,
                "batch_entropy": terms.batch_entropy, "penalty": terms.penalty,
                "total": total,
            })
            if not np.isfinite(total):
                diverged = True
                break
            backward(terms.total, tape, params)
            try:
                adamax_step(params, [p.grad for p in params], state,
                            lr=cfg.learning_rate, weight_decay=cfg.weight_decay,
                            beta1=cfg.beta1, beta2=cfg.beta2, epsilon=cfg.epsilon,
                            decoupled=cfg.decoupled_decay)
            except TrainingDiverged:
                diverged = True
                break
            finally:
                zero_grads(params)
            epoch_totals.append(total)
        if diverged:
            report.epochs_ran = epoch
            break
        val = evaluate_split(model, dataset, "val")
        value = val[metric_name]
        report.epoch_logs.append({
            "epoch": epoch,
            "train_total": float(np.mean(epoch_totals)) if epoch_totals else float("nan"),
            "val_metric": value,
        })
        report.epochs_ran = epoch
        if value > best_value:
            best_value = value
            best_state = _snapshot(params)
            best_epoch = epoch
        if epoch - best_epoch >= cfg.patience:
            break

    _restore(params, best_state)
    report.best_epoch = best_epoch
    report.diverged = diverged
    report.val_metrics = evaluate_split(model, dataset, "val")
    report.test_metrics = evaluate_split(model, dataset, "test")
    report.wall_clock = time.perf_counter() - started
    report.model = model
    return report


def run_seeds(dataset: Dataset, cfg: TrainConfig,
              seeds: tuple[int, ...] | None = None) -> list[RunReport]:
    """Independent runs over seeds (fresh model per seed)."""
    if seeds is None:
        seeds = cfg.seeds
    return [train(dataset, cfg, seed) for seed in seeds]


def summarize(reports: list[RunReport]) -> dict:
    values = [r.headline_value for r in reports]
    return {
        "metric": reports[0].headline_metric,
        "mean": float(np.mean(values)),
        "std": float(np.std(values)),
        "values": [float(v) for v in values],
        "seeds": [r.seed for r in reports],
    }


@dataclass
class SweepResult:
    rows: list[dict]
    best_beta: float
    best_gamma: float

    def best_row(self) -> dict:
        for row in self.rows:
            if row["beta"] == self.best_beta and row["gamma"] == self.best_gamma:
                return row
        raise KeyError("best cell missing from sweep rows")


def _cell_objective(objective: ObjectiveConfig, beta: float, gamma: float) -> ObjectiveConfig:
    # ce_cp has a single tunable weight; it shares the beta grid
    if objective.kind == "ce_cp":
        return dataclasses.replace(objective, cp_weight=beta)
    return dataclasses.replace(objective, beta=beta, gamma=gamma)


def sweep(dataset: Dataset, cfg: TrainConfig, betas: list[float],
          gammas: list[float], seeds: tuple[int, ...] | None = None) -> SweepResult:
    """Grid search over (beta, gamma); each cell averages over the seeds.

    For objective kind "ce_cp" the beta grid drives the confidence-penalty
    weight instead (pass gammas=[0.0]). The winning cell maximizes the mean
    validation metric; ties go to the lexicographically smaller (beta, gamma).
    """
    if seeds is None:
        seeds = cfg.seeds
    rows = []
    for beta in betas:
        for gamma in gammas:
            objective = _cell_objective(cfg.objective, beta, gamma)
            cell_cfg = dataclasses.replace(cfg, objective=objective)
            reports = run_seeds(dataset, cell_cfg, seeds)
            val_values = [r.val_metrics[r.headline_metric] for r in reports]
            test_values = [r.headline_value for r in reports]
            rows.append({
                "beta": beta, "gamma": gamma,
                "val_mean": float(np.mean(val_values)),
                "val_std": float(np.std(val_values)),
                "test_mean": float(np.mean(test_values)),
                "test_std": float(np.std(test_values)),
            })
    best = min(rows, key=lambda r: (-r["val_mean"], r["beta"], r["gamma"]))
    return SweepResult(rows=rows, best_beta=best["beta"], best_gamma=best["gamma"])
