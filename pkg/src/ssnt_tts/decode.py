"""Free-running synthesis with a sampled (or thresholded) hard alignment.

At each output group the decoder, fed its own previous prediction, scores
the current input position ``c`` and ``c + 1``.  The alignment advances with
the renormalised probability of the two permitted moves and the mean of the
Gaussian at the new position is emitted.  After at least one group at the
last input position, the Shift probability there is the end-of-utterance
gate, scored from the state that has seen the previous group.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields
from typing import List, Optional, Sequence

import numpy as np
from scipy.special import expit

from .autodiff import ParameterStore, Tape, Tensor
from .model import ModelConfig, _decoder_cells, _prenet, _prenet_dropout_on
from .nnet import EncoderParams, Linear, encode, lstm_step, prenet_apply, zero_state

MODES = ("greedy", "sample")


@dataclass
class DecodeConfig:
    mode: str = "greedy"
    seed: int = 0
    max_groups: int = 0
    max_groups_per_symbol: int = 10

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"decode config: mode must be one of {MODES}, got {self.mode!r}")
        if self.max_groups < 0 or self.max_groups_per_symbol < 1:
            raise ValueError("decode config: max_groups must be >= 0 and max_groups_per_symbol >= 1")

    def limit(self, n_symbols: int) -> int:
        j_max = self.max_groups if self.max_groups > 0 else self.max_groups_per_symbol * n_symbols
        if j_max < n_symbols:
            raise ValueError(f"max_groups={j_max} is below the {n_symbols} input symbols; decoding cannot finish")
        return j_max

    @classmethod
    def field_names(cls):
        return [f.name for f in fields(cls)]


@dataclass
class DecodeResult:
    y_hat: np.ndarray  # (groups * r) x D
    alignment: np.ndarray  # 0-based input position per group
    advance_prob: np.ndarray  # per group; 0 for the first group and at the last position
    stop_prob: np.ndarray  # end-gate probability scored after each group; NaN before the last position
    terminated: bool
    n_symbols: int

    @property
    def n_groups(self) -> int:
        return len(self.alignment)

    @property
    def reached_end(self) -> bool:
        return bool(self.alignment.size and self.alignment[-1] == self.n_symbols - 1)


def advance_probability(p_emit_stay: float, p_shift_stay: float, p_emit_next: float,
                        at_last: bool = False) -> float:
    """Probability of moving from position c to c + 1, given the two allowed moves.

    Staying weighs ``p_emit_stay``; advancing weighs ``p_shift_stay * p_emit_next``.
    """
    if at_last:
        return 0.0
    advance = p_shift_stay * p_emit_next
    total = p_emit_stay + advance
    if total <= 0.0:
        return 0.0
    return float(advance / total)


class _JointHead:
    """Numpy view of the joint network for one cell at a time."""

    def __init__(self, cfg: ModelConfig, params: ParameterStore, H_enc: np.ndarray):
        self.enc_part = H_enc @ params["joint.enc.W"].data.T + params["joint.b"].data
        self.W_dec = params["joint.dec.W"].data
        self.extra = [Linear.from_store(params, f"joint.extra{n}") for n in range(1, cfg.n_joint_layers)]
        self.w_emit = params["head.emit.W"].data[0]
        self.b_emit = float(params["head.emit.b"].data[0])
        self.W_mu = params["head.mu.W"].data
        self.b_mu = params["head.mu.b"].data

    def __call__(self, h_dec: np.ndarray, rows):
        t = np.tanh(self.enc_part[rows] + h_dec @ self.W_dec.T)
        for layer in self.extra:
            t = np.tanh(t @ layer.W.data.T + layer.b.data)
        p_emit = expit(t @ self.w_emit + self.b_emit)
        mean = t @ self.W_mu.T + self.b_mu
        return p_emit, mean


def synthesize(cfg: ModelConfig, params: ParameterStore, x: Sequence[int],
               dcfg: Optional[DecodeConfig] = None, max_groups: Optional[int] = None) -> DecodeResult:
    dcfg = dcfg or DecodeConfig()
    x = np.asarray(x, dtype=np.int64).reshape(-1)
    I = len(x)
    if I < 1:
        raise ValueError("synthesize: empty symbol sequence")
    j_max = max_groups if max_groups is not None else dcfg.limit(I)
    if j_max < I:
        raise ValueError(f"max_groups={j_max} is below the {I} input symbols")
    rng = np.random.default_rng(dcfg.seed)
    D, r = cfg.feat_dim, cfg.reduction

    with Tape(dcfg.seed, record=False):
        H_enc = encode(EncoderParams.from_store(params, "enc", cfg.n_ff), x).data
        head = _JointHead(cfg, params, H_enc)
        prenet = _prenet(cfg, params)
        cells = _decoder_cells(cfg, params)
        states = [zero_state(cell.hidden) for cell in cells]
        prev = np.zeros(D)
        c = 0
        groups, path, adv_probs, stop_probs = [], [], [], []
        terminated = False
        # step j_max only runs the end gate; it emits nothing
        for j in range(j_max + 1):
            h = prenet_apply(prenet, Tensor(prev), _prenet_dropout_on(cfg, False))
            for k, cell in enumerate(cells):
                states[k] = lstm_step(cell, h, states[k])
                h = states[k][0]
            h_dec = h.data
            rows = [c, c + 1] if c + 1 < I else [c]
            p_emit, mean = head(h_dec, rows)
            if j > 0 and c == I - 1:
                p_stop = 1.0 - p_emit[0]
                stop_probs[-1] = p_stop
                stop = rng.random() < p_stop if dcfg.mode == "sample" else p_stop > 0.5
                if stop:
                    terminated = True
                    break
            if j == j_max:
                break
            p_adv = 0.0
            if j > 0 and c < I - 1:
                p_adv = advance_probability(p_emit[0], 1.0 - p_emit[0], p_emit[-1])
                step = rng.random() < p_adv if dcfg.mode == "sample" else p_adv > 0.5
                if step:
                    c += 1
                    rows = [c, c + 1] if c + 1 < I else [c]
                    p_emit, mean = head(h_dec, rows)
            group = mean[0]
            groups.append(group.reshape(r, D))
            path.append(c)
            adv_probs.append(p_adv)
            stop_probs.append(np.nan)
            prev = groups[-1][-1]
    y_hat = np.concatenate(groups, axis=0)
    return DecodeResult(y_hat, np.array(path, dtype=np.int64), np.array(adv_probs),
                        np.array(stop_probs), terminated, I)


def export_alignment(result: DecodeResult, path) -> None:
    """CSV ``group_index,input_position,advance_prob`` with 1-based indices."""
    try:
        with open(path, "w", encoding="ascii", newline="\n") as fh:
            fh.write("group_index,input_position,advance_prob\n")
            for g, (i, p) in enumerate(zip(result.alignment, result.advance_prob), 1):
                fh.write(f"{g},{int(i) + 1},{format(float(p), '.17g')}\n")
    except OSError as exc:
        raise OSError(f"cannot write alignment to {path}: {exc}") from None


def read_alignment_export(path):
    """Inverse of :func:`export_alignment`: (0-based positions, advance probs)."""
    pos, probs = [], []
    with open(path, "r", encoding="ascii") as fh:
        next(fh)
        for line in fh:
            if line.strip():
                _, i, p = line.strip().split(",")
                pos.append(int(i) - 1)
                probs.append(float(p))
    return np.array(pos, dtype=np.int64), np.array(probs)
