"""Deterministic and bottleneck baselines sharing the core loss terms.

- CE / MSE: the trunk's mean head used as plain logits (or a point
  prediction), no sampling and no KL.
- CE+CP: CE plus a weighted per-sample confidence penalty.
- VIB: encoder to a K-dimensional Gaussian latent (K independent of the
  number of classes) followed by a trainable single-hidden-layer decoder.
  Its prediction path is parametric, unlike the stochastic-coding head
  whose readout after t is a bare softmax.

All three reuse `task_nll` / `mse` / `kl_to_std_normal`; there are no
duplicated formula paths.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .diffcore import Tensor, matmul, param, scale, tanh
from .encoder import (
    EncoderParams,
    GaussianCode,
    _glorot,
    _tensor_from_entry,
    encode,
    hidden_layer,
    sample,
)
from .objectives import (
    LossTerms,
    confidence_penalty,
    kl_to_std_normal,
    mse,
    softmax_probs,
    task_nll,
)


def mlp_logits(params: EncoderParams, x: Tensor,
               dropout_mask: np.ndarray | None = None) -> Tensor:
    """Deterministic forward through the mean head only."""
    h = hidden_layer(params, x, dropout_mask)
    return matmul(h, params.w_mu) + params.b_mu


def ce_forward(params: EncoderParams, x: Tensor, y,
               dropout_mask: np.ndarray | None = None) -> LossTerms:
    """Plain cross-entropy on deterministic logits."""
    nll = task_nll(mlp_logits(params, x, dropout_mask), y)
    return LossTerms(total=nll, nll=float(nll.values))


def ce_cp_forward(params: EncoderParams, x: Tensor, y, cp_weight: float,
                  dropout_mask: np.ndarray | None = None) -> LossTerms:
    """Cross-entropy plus cp_weight * confidence_penalty(softmax(logits))."""
    if cp_weight < 0:
        raise ValueError("cp_weight must be non-negative")
    logits = mlp_logits(params, x, dropout_mask)
    nll = task_nll(logits, y)
    if cp_weight == 0.0:
        return LossTerms(total=nll, nll=float(nll.values))
    penalty = confidence_penalty(softmax_probs(logits))
    total = nll + scale(penalty, cp_weight)
    return LossTerms(total=total, nll=float(nll.values), penalty=float(penalty.values))


def mse_forward(params: EncoderParams, x: Tensor, y,
                dropout_mask: np.ndarray | None = None) -> LossTerms:
    """Plain squared error on the deterministic point prediction."""
    loss = mse(mlp_logits(params, x, dropout_mask), y)
    return LossTerms(total=loss, nll=float(loss.values))


@dataclass
class VibParams:
    """Trunk + Gaussian heads into a K-dim latent, plus an MLP decoder."""

    w_in: Tensor
    b_in: Tensor
    w_mu: Tensor
    b_mu: Tensor
    w_lv: Tensor
    b_lv: Tensor
    w_dec1: Tensor
    b_dec1: Tensor
    w_dec2: Tensor
    b_dec2: Tensor
    use_layer_norm: bool = False

    @property
    def input_dim(self) -> int:
        return self.w_in.values.shape[0]

    @property
    def hidden_dim(self) -> int:
        return self.w_in.values.shape[1]

    @property
    def latent_dim(self) -> int:
        return self.w_mu.values.shape[1]

    @property
    def out_dim(self) -> int:
        return self.w_dec2.values.shape[1]

    def encoder_view(self) -> EncoderParams:
        # the trunk + heads have exactly the encoder layout, reuse its forward
        return EncoderParams(w_in=self.w_in, b_in=self.b_in, w_mu=self.w_mu,
                             b_mu=self.b_mu, w_lv=self.w_lv, b_lv=self.b_lv,
                             use_layer_norm=self.use_layer_norm)

    def parameters(self) -> list[Tensor]:
        return [self.w_in, self.b_in, self.w_mu, self.b_mu, self.w_lv, self.b_lv,
                self.w_dec1, self.b_dec1, self.w_dec2, self.b_dec2]

    def named_parameters(self) -> dict[str, Tensor]:
        return {"w_in": self.w_in, "b_in": self.b_in, "w_mu": self.w_mu,
                "b_mu": self.b_mu, "w_lv": self.w_lv, "b_lv": self.b_lv,
                "w_dec1": self.w_dec1, "b_dec1": self.b_dec1,
                "w_dec2": self.w_dec2, "b_dec2": self.b_dec2}


def init_vib(input_dim: int, hidden_dim: int, latent_dim: int, out_dim: int,
             rng: np.random.Generator | int, decoder_hidden: int | None = None,
             use_layer_norm: bool = False) -> VibParams:
    if isinstance(rng, int):
        rng = np.random.default_rng(rng)
    if decoder_hidden is None:
        decoder_hidden = hidden_dim
    return VibParams(
        w_in=param(_glorot(rng, input_dim, hidden_dim)),
        b_in=param(np.zeros((1, hidden_dim))),
        w_mu=param(_glorot(rng, hidden_dim, latent_dim)),
        b_mu=param(np.zeros((1, latent_dim))),
        w_lv=param(_glorot(rng, hidden_dim, latent_dim)),
        b_lv=param(np.zeros((1, latent_dim))),
        w_dec1=param(_glorot(rng, latent_dim, decoder_hidden)),
        b_dec1=param(np.zeros((1, decoder_hidden))),
        w_dec2=param(_glorot(rng, decoder_hidden, out_dim)),
        b_dec2=param(np.zeros((1, out_dim))),
        use_layer_norm=use_layer_norm,
    )


def vib_encode(params: VibParams, x: Tensor,
               dropout_mask: np.ndarray | None = None) -> GaussianCode:
    return encode(params.encoder_view(), x, dropout_mask)


def vib_decode(params: VibParams, z: Tensor) -> Tensor:
    h = tanh(matmul(z, params.w_dec1) + params.b_dec1)
    return matmul(h, params.w_dec2) + params.b_dec2


def vib_forward(params: VibParams, x: Tensor, y, beta: float,
                eps: Tensor | np.ndarray, task: str = "classification",
                dropout_mask: np.ndarray | None = None) -> LossTerms:
    """NLL(decoder(z), y) + beta * KL on the latent code, z reparameterized."""
    code = vib_encode(params, x, dropout_mask)
    z = sample(code, eps)
    out = vib_decode(params, z)
    nll = task_nll(out, y) if task == "classification" else mse(out, y)
    total = nll
    kl_value = 0.0
    if beta != 0.0:
        kl = kl_to_std_normal(code)
        kl_value = float(kl.values)
        total = total + scale(kl, beta)
    return LossTerms(total=total, nll=float(nll.values), kl=kl_value)


def prediction_path_param_count(model) -> int:
    """Trainable parameters between the code t and the final prediction.

    The stochastic-coding head predicts by softmax/identity on t, so zero;
    VIB runs t through its decoder.
    """
    if isinstance(model, EncoderParams):
        return 0
    if isinstance(model, VibParams):
        return sum(t.values.size for t in
                   (model.w_dec1, model.b_dec1, model.w_dec2, model.b_dec2))
    raise TypeError(f"unknown model type: {type(model).__name__}")


def vib_to_checkpoint(params: VibParams) -> tuple[str, dict, dict[str, Tensor]]:
    arch = {
        "input_dim": params.input_dim,
        "hidden_dim": params.hidden_dim,
        "latent_dim": params.latent_dim,
        "decoder_hidden": params.w_dec1.values.shape[1],
        "out_dim": params.out_dim,
        "use_layer_norm": params.use_layer_norm,
    }
    return "vib", arch, params.named_parameters()


def vib_from_payload(payload: dict) -> VibParams:
    if payload["kind"] != "vib":
        raise ValueError(f"checkpoint kind {payload['kind']!r} is not a vib model")
    t = {name: _tensor_from_entry(entry) for name, entry in payload["tensors"].items()}
    return VibParams(
        w_in=t["w_in"], b_in=t["b_in"], w_mu=t["w_mu"], b_mu=t["b_mu"],
        w_lv=t["w_lv"], b_lv=t["b_lv"], w_dec1=t["w_dec1"], b_dec1=t["b_dec1"],
        w_dec2=t["w_dec2"], b_dec2=t["b_dec2"],
        use_layer_norm=bool(payload["arch"]["use_layer_norm"]),
    )
