"""Stochastic label-space coding: library and experiment harness."""

from .diffcore import Tape, Tensor, backward, param
from .encoder import EncoderParams, GaussianCode, encode, init_encoder, predict, sample
from .objectives import (
    LossTerms,
    ObjectiveConfig,
    batch_entropy,
    confidence_penalty,
    kl_to_std_normal,
    mse,
    spc_loss,
    task_nll,
)
from .baselines import VibParams, ce_cp_forward, ce_forward, init_vib, vib_forward
from .data import Dataset, PerturbationSpec, gen_mixture, hash_featurize, inject_label_noise, load, save, subsample_train
from .metrics import adjusted_rand_index, kmeans, macro_f1, macro_recall, pearson, silhouette, spearman
from .trainer import RunReport, TrainConfig, adamax_step, run_seeds, sweep, train

__version__ = "0.1.0"
