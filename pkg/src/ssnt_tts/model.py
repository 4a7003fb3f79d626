"""The SSNT acoustic model: encoder, autoregressive decoder, joint heads.

Decoder states depend only on previous output frames, never on the
alignment, so every trellis cell (i, j) combines encoder row i with decoder
row j.  That is what keeps the first-order forward recursion exact.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, fields
from typing import Optional, Sequence, Tuple

import numpy as np

from .autodiff import ParameterStore, Tensor, apply_primitive
from .nnet import (
    INIT_SCALE,
    EncoderParams,
    Linear,
    LstmCellParams,
    PrenetParams,
    encode,
    lstm_sequence,
    prenet_apply,
)
from .trellis import TrellisError, TrellisGrid, forward_pass

LOG_2PI = math.log(2.0 * math.pi)


@dataclass
class ModelConfig:
    vocab_size: int = 12
    embed_dim: int = 16
    n_ff: int = 1
    enc_hidden: int = 16
    prenet_dims: Tuple[int, ...] = (16, 16)
    prenet_dropout: float = 0.0
    prenet_dropout_inference: bool = False
    dec_layers: int = 1
    dec_hidden: int = 32
    lstm_dropout: float = 0.0
    joint_dim: int = 32
    n_joint_layers: int = 1
    feat_dim: int = 8
    reduction: int = 1
    variance_mode: str = "learned"
    variance: float = 1.0
    terminal_shift: bool = True

    def __post_init__(self):
        self.prenet_dims = tuple(int(w) for w in self.prenet_dims)
        self.validate()

    def validate(self) -> None:
        for name in ("vocab_size", "embed_dim", "enc_hidden", "dec_layers", "dec_hidden",
                     "joint_dim", "n_joint_layers", "feat_dim"):
            if getattr(self, name) <= 0:
                raise ValueError(f"model config: {name} must be positive, got {getattr(self, name)}")
        if self.n_ff < 0:
            raise ValueError("model config: n_ff must be >= 0")
        if not self.prenet_dims or any(w <= 0 for w in self.prenet_dims):
            raise ValueError(f"model config: prenet_dims must be positive, got {self.prenet_dims}")
        if self.reduction not in (1, 2):
            raise ValueError(f"model config: reduction must be 1 or 2, got {self.reduction}")
        if self.variance_mode not in ("learned", "fixed"):
            raise ValueError(f"model config: variance_mode must be 'learned' or 'fixed', got {self.variance_mode!r}")
        if self.variance <= 0:
            raise ValueError("model config: variance must be > 0")
        for name in ("prenet_dropout", "lstm_dropout"):
            if not 0.0 <= getattr(self, name) < 1.0:
                raise ValueError(f"model config: {name} must lie in [0, 1)")

    @property
    def group_dim(self) -> int:
        return self.feat_dim * self.reduction

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def field_names(cls):
        return [f.name for f in fields(cls)]


def init_params(cfg: ModelConfig, seed: int = 0, scale: float = INIT_SCALE) -> ParameterStore:
    """Uniform(-scale, scale) weights, forget bias 1, N(0, 1) embeddings."""
    rng = np.random.default_rng(seed)
    store = ParameterStore()
    enc = EncoderParams.init(store, "enc", cfg.vocab_size, cfg.embed_dim, cfg.n_ff, cfg.enc_hidden, rng, scale)
    PrenetParams.init(store, "dec.prenet", cfg.feat_dim, cfg.prenet_dims, cfg.prenet_dropout, rng, scale)
    d = cfg.prenet_dims[-1]
    for k in range(cfg.dec_layers):
        LstmCellParams.init(store, f"dec.lstm{k}", d, cfg.dec_hidden, rng, scale)
        d = cfg.dec_hidden
    store.add("joint.dec.W", rng.uniform(-scale, scale, (cfg.joint_dim, cfg.dec_hidden)))
    store.add("joint.enc.W", rng.uniform(-scale, scale, (cfg.joint_dim, enc.output_dim)))
    store.add("joint.b", rng.uniform(-scale, scale, (cfg.joint_dim,)))
    for k in range(1, cfg.n_joint_layers):
        Linear.init(store, f"joint.extra{k}", cfg.joint_dim, cfg.joint_dim, rng, scale)
    Linear.init(store, "head.emit", cfg.joint_dim, 1, rng, scale)
    Linear.init(store, "head.mu", cfg.joint_dim, cfg.group_dim, rng, scale)
    if cfg.variance_mode == "learned":
        store.add("log_var", np.full(1, math.log(cfg.variance)))
    return store


def expected_shapes(cfg: ModelConfig) -> dict:
    return {k: t.shape for k, t in init_params(cfg, 0).items()}


# -- decoder ---------------------------------------------------------------

def group_frames(cfg: ModelConfig, y: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Reshape J x D frames into J' x (D*r) groups plus a validity mask.

    A ragged tail is padded by repeating the last frame; the mask is zero on
    padded dimensions.
    """
    y = np.asarray(y, dtype=np.float64)
    if y.ndim != 2 or y.shape[0] == 0:
        raise ValueError(f"targets must be a non-empty J x D matrix, got shape {y.shape}")
    if y.shape[1] != cfg.feat_dim:
        raise ValueError(f"targets have {y.shape[1]} dims, model expects {cfg.feat_dim}")
    r = cfg.reduction
    J = y.shape[0]
    n_groups = -(-J // r)
    pad = n_groups * r - J
    mask = np.ones((n_groups * r, cfg.feat_dim))
    if pad:
        y = np.concatenate([y, np.repeat(y[-1:], pad, axis=0)], axis=0)
        mask[J:] = 0.0
    return y.reshape(n_groups, r * cfg.feat_dim), mask.reshape(n_groups, r * cfg.feat_dim)


def decoder_inputs(cfg: ModelConfig, y: np.ndarray, with_end: bool = False) -> np.ndarray:
    """Teacher-forcing inputs: a zero go-frame, then the last frame of each group.

    ``with_end`` appends the final frame of ``y`` as one more input, giving the
    state from which the end-of-utterance Shift is scored.
    """
    groups, _ = group_frames(cfg, y)
    D, r = cfg.feat_dim, cfg.reduction
    prev = np.zeros((groups.shape[0] + int(with_end), D))
    prev[1:groups.shape[0]] = groups[:-1, (r - 1) * D:]
    if with_end:
        prev[-1] = np.asarray(y, dtype=np.float64)[-1]
    return prev


def _prenet(cfg: ModelConfig, params: ParameterStore) -> PrenetParams:
    return PrenetParams.from_store(params, "dec.prenet", len(cfg.prenet_dims), cfg.prenet_dropout)


def _decoder_cells(cfg: ModelConfig, params: ParameterStore):
    return [LstmCellParams.from_store(params, f"dec.lstm{k}") for k in range(cfg.dec_layers)]


def _prenet_dropout_on(cfg: ModelConfig, training: bool) -> bool:
    return training or cfg.prenet_dropout_inference


def decoder_states(cfg: ModelConfig, params: ParameterStore, y: np.ndarray,
                   training: bool = False, with_end: bool = False) -> Tensor:
    """Top-layer decoder states under teacher forcing, J' x h_dec (J' + 1 with ``with_end``)."""
    inputs = Tensor(decoder_inputs(cfg, y, with_end))
    h = prenet_apply(_prenet(cfg, params), inputs, _prenet_dropout_on(cfg, training))
    for k, cell in enumerate(_decoder_cells(cfg, params)):
        if k > 0 and training and cfg.lstm_dropout > 0:
            h = apply_primitive("dropout", [h], {"rate": cfg.lstm_dropout})
        h = lstm_sequence(cell, h)
    return h


# -- joint network ------------------------------------------------------------

@dataclass
class JointCellOutputs:
    """Per-cell Emit logits (I x J') and Gaussian means (I x J' x D*r)."""

    emit_logit: Tensor
    mean: Tensor

    @property
    def p_emit(self) -> np.ndarray:
        from scipy.special import expit
        return expit(self.emit_logit.data)

    @property
    def shape(self):
        return self.emit_logit.shape


def joint_grid(cfg: ModelConfig, params: ParameterStore, H_enc: Tensor, H_dec: Tensor) -> JointCellOutputs:
    I, J = H_enc.shape[0], H_dec.shape[0]
    k = cfg.joint_dim
    a = (H_enc @ params["joint.enc.W"].T).reshape(I, 1, k)
    b = (H_dec @ params["joint.dec.W"].T).reshape(1, J, k)
    t = apply_primitive("broadcast_add", [apply_primitive("broadcast_add", [a, b]), params["joint.b"]]).tanh()
    for n in range(1, cfg.n_joint_layers):
        t = Linear.from_store(params, f"joint.extra{n}")(t).tanh()
    logit = Linear.from_store(params, "head.emit")(t).reshape(I, J)
    mean = Linear.from_store(params, "head.mu")(t)
    return JointCellOutputs(logit, mean)


def transition_log_probs(joint: JointCellOutputs) -> Tuple[Tensor, Tensor]:
    """log p(Emit) and log p(Shift) = log(1 - p(Emit)), both via log-sigmoid."""
    log_emit_prob = apply_primitive("log_sigmoid", [joint.emit_logit])
    log_shift_prob = apply_primitive("log_sigmoid", [-joint.emit_logit])
    return log_emit_prob, log_shift_prob


def emission_logdensity(y_group, mu, var) -> Tensor:
    """Isotropic Gaussian log density over the last axis."""
    if isinstance(var, Tensor):
        raise TypeError("pass a positive float; use emission_grid for a learned log-variance")
    if var <= 0:
        raise ValueError(f"variance must be > 0, got {var}")
    mu = mu if isinstance(mu, Tensor) else Tensor(mu)
    diff = mu - Tensor(np.asarray(y_group, dtype=np.float64))
    n = diff.shape[-1]
    sq = (diff * diff).sum(axis=-1)
    return sq * (-0.5 / var) - 0.5 * n * math.log(2.0 * math.pi * var)


def log_variance(cfg: ModelConfig, params: ParameterStore) -> Tensor:
    if cfg.variance_mode == "learned":
        return params["log_var"]
    return Tensor(np.full(1, math.log(cfg.variance)))


def emission_grid(mean: Tensor, groups: np.ndarray, mask: np.ndarray, log_var: Tensor) -> Tensor:
    """I x J' emission log densities; masked (padded) dims contribute nothing."""
    diff = mean - Tensor(groups[None, :, :])
    sq = (diff * diff * Tensor(mask[None, :, :])).sum(axis=-1)
    n_dims = mask.sum(axis=1)  # J'
    inv_var = (-log_var).exp()
    const = log_var * Tensor(-0.5 * n_dims) + Tensor(-0.5 * n_dims * LOG_2PI)  # J'
    return sq * (inv_var * -0.5) + const


@dataclass
class ModelOutputs:
    grid: TrellisGrid
    joint: JointCellOutputs
    log_alpha: Tensor
    log_likelihood: Tensor
    loss: Tensor
    n_frames: int


def run_model(cfg: ModelConfig, params: ParameterStore, x: Sequence[int], y: np.ndarray,
              training: bool = False) -> ModelOutputs:
    x = np.asarray(x, dtype=np.int64).reshape(-1)
    groups, mask = group_frames(cfg, y)
    I, Jg = len(x), groups.shape[0]
    if I > Jg:
        raise TrellisError(
            f"no monotonic path: {I} input symbols but only {Jg} output groups "
            f"(J={len(y)}, r={cfg.reduction}); reduce the reduction factor or check the data")
    enc = EncoderParams.from_store(params, "enc", cfg.n_ff)
    H_enc = encode(enc, x)
    H_dec = decoder_states(cfg, params, y, training, with_end=cfg.terminal_shift)
    if cfg.terminal_shift:
        # End of utterance = a Shift off the last input position, scored from
        # the state that has consumed the final frame.
        H_end = H_dec[Jg:Jg + 1]
        H_dec = H_dec[0:Jg]
    joint = joint_grid(cfg, params, H_enc, H_dec)
    lep, lsp = transition_log_probs(joint)
    log_emit = emission_grid(joint.mean, groups, mask, log_variance(cfg, params))
    grid = TrellisGrid(log_emit, lep, lsp)
    log_alpha, ll = forward_pass(grid)
    if cfg.terminal_shift:
        end_logit = joint_grid(cfg, params, H_enc[I - 1:I], H_end).emit_logit
        ll = ll + apply_primitive("log_sigmoid", [-end_logit]).sum()
    return ModelOutputs(grid, joint, log_alpha, ll, -ll, len(y))


def nll(cfg: ModelConfig, params: ParameterStore, x: Sequence[int], y: np.ndarray,
        training: bool = False) -> Tensor:
    """Negative log-likelihood of ``y`` given ``x``, marginalised over alignments."""
    return run_model(cfg, params, x, y, training).loss
