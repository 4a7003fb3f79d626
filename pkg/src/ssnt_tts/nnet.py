"""Network blocks: embedding, feed-forward pre-encoder, LSTM/BiLSTM, pre-net.

Layers are thin views over a :class:`ParameterStore`; weights are stored
output-major (``out x in``) and applied as ``x @ W.T``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .autodiff import ParameterStore, ShapeError, Tensor, apply_primitive

INIT_SCALE = 0.05


def _uniform(rng, shape, scale=INIT_SCALE):
    return rng.uniform(-scale, scale, size=shape)


@dataclass
class Linear:
    W: Tensor
    b: Tensor

    @classmethod
    def init(cls, store: ParameterStore, prefix: str, d_in: int, d_out: int, rng,
             scale: float = INIT_SCALE) -> "Linear":
        W = store.add(f"{prefix}.W", _uniform(rng, (d_out, d_in), scale))
        b = store.add(f"{prefix}.b", _uniform(rng, (d_out,), scale))
        return cls(W, b)

    @classmethod
    def from_store(cls, store: ParameterStore, prefix: str) -> "Linear":
        return cls(store[f"{prefix}.W"], store[f"{prefix}.b"])

    def __call__(self, x: Tensor) -> Tensor:
        if x.shape[-1] != self.W.shape[1]:
            raise ShapeError(f"linear: input dim {x.shape[-1]} != weight input dim {self.W.shape[1]}")
        return apply_primitive("broadcast_add", [x @ self.W.T, self.b])


@dataclass
class LstmCellParams:
    """Gate order along the 4h axis is [input, forget, cell, output]."""

    Wx: Tensor  # 4h x d
    Wh: Tensor  # 4h x h
    b: Tensor  # 4h

    @property
    def hidden(self) -> int:
        return self.Wh.shape[1]

    @property
    def input_dim(self) -> int:
        return self.Wx.shape[1]

    @classmethod
    def init(cls, store: ParameterStore, prefix: str, d: int, h: int, rng,
             scale: float = INIT_SCALE) -> "LstmCellParams":
        if d <= 0 or h <= 0:
            raise ValueError(f"LSTM dims must be positive, got d={d}, h={h}")
        Wx = store.add(f"{prefix}.Wx", _uniform(rng, (4 * h, d), scale))
        Wh = store.add(f"{prefix}.Wh", _uniform(rng, (4 * h, h), scale))
        bias = _uniform(rng, (4 * h,), scale)
        bias[h:2 * h] = 1.0
        b = store.add(f"{prefix}.b", bias)
        return cls(Wx, Wh, b)

    @classmethod
    def from_store(cls, store: ParameterStore, prefix: str) -> "LstmCellParams":
        return cls(store[f"{prefix}.Wx"], store[f"{prefix}.Wh"], store[f"{prefix}.b"])


def zero_state(h: int) -> Tuple[Tensor, Tensor]:
    return Tensor(np.zeros(h)), Tensor(np.zeros(h))


def lstm_step(params: LstmCellParams, x_t: Optional[Tensor], state: Tuple[Tensor, Tensor],
              x_proj: Optional[Tensor] = None, Wh_T: Optional[Tensor] = None) -> Tuple[Tensor, Tensor]:
    """One LSTM update.

    ``x_proj`` (= ``Wx x_t + b``) and ``Wh_T`` may be passed in precomputed
    when stepping through a sequence; ``x_t`` is then ignored.
    """
    h_prev, c_prev = state
    n = params.hidden
    if x_proj is None:
        if x_t.shape != (params.input_dim,):
            raise ShapeError(f"lstm_step: input shape {x_t.shape}, expected ({params.input_dim},)")
        x_proj = x_t @ params.Wx.T + params.b
    if h_prev.shape != (n,) or c_prev.shape != (n,):
        raise ShapeError(f"lstm_step: state shapes {h_prev.shape}/{c_prev.shape}, expected ({n},)")
    if Wh_T is None:
        Wh_T = params.Wh.T
    z = x_proj + h_prev @ Wh_T
    i = z[0:n].sigmoid()
    f = z[n:2 * n].sigmoid()
    g = z[2 * n:3 * n].tanh()
    o = z[3 * n:4 * n].sigmoid()
    c = f * c_prev + i * g
    h = o * c.tanh()
    return h, c


def lstm_sequence(params: LstmCellParams, inputs: Tensor, reverse: bool = False,
                  state: Optional[Tuple[Tensor, Tensor]] = None) -> Tensor:
    """Run a unidirectional LSTM over ``inputs`` (T x d); returns T x h states.

    With ``reverse=True`` time runs from T down to 1, and row t of the result
    is still the state at input position t.
    """
    T = inputs.shape[0]
    if T == 0:
        raise ShapeError("lstm_sequence: empty input sequence")
    if inputs.ndim != 2 or inputs.shape[1] != params.input_dim:
        raise ShapeError(f"lstm_sequence: input shape {inputs.shape}, expected (T, {params.input_dim})")
    proj = apply_primitive("broadcast_add", [inputs @ params.Wx.T, params.b])
    Wh_T = params.Wh.T
    state = state or zero_state(params.hidden)
    outs: List[Tensor] = [None] * T  # type: ignore[list-item]
    order = range(T - 1, -1, -1) if reverse else range(T)
    for t in order:
        state = lstm_step(params, None, state, x_proj=proj[t], Wh_T=Wh_T)
        outs[t] = state[0]
    return apply_primitive("stack", outs, {"axis": 0})


def bilstm_apply(fwd: LstmCellParams, bwd: LstmCellParams, inputs: Tensor) -> Tensor:
    if inputs.ndim != 2 or inputs.shape[0] == 0:
        raise ShapeError(f"bilstm_apply: need a non-empty T x d matrix, got {inputs.shape}")
    hf = lstm_sequence(fwd, inputs)
    hb = lstm_sequence(bwd, inputs, reverse=True)
    return apply_primitive("concat", [hf, hb], {"axis": 1})


@dataclass
class PrenetParams:
    layers: List[Linear]
    rate: float

    def __post_init__(self):
        if not 0.0 <= self.rate < 1.0:
            raise ValueError(f"pre-net dropout rate must lie in [0, 1), got {self.rate}")

    @classmethod
    def init(cls, store, prefix, d_in: int, widths: Sequence[int], rate: float, rng,
             scale: float = INIT_SCALE) -> "PrenetParams":
        layers, d = [], d_in
        for k, w in enumerate(widths):
            if w <= 0:
                raise ValueError(f"pre-net widths must be positive, got {widths}")
            layers.append(Linear.init(store, f"{prefix}.{k}", d, w, rng, scale))
            d = w
        return cls(layers, rate)

    @classmethod
    def from_store(cls, store, prefix, n_layers: int, rate: float) -> "PrenetParams":
        return cls([Linear.from_store(store, f"{prefix}.{k}") for k in range(n_layers)], rate)


def prenet_apply(params: PrenetParams, y_prev: Tensor, training: bool) -> Tensor:
    """relu -> dropout per layer.  Works on one frame or a stack of frames."""
    out = y_prev
    for layer in params.layers:
        out = layer(out).relu()
        if training and params.rate > 0:
            out = apply_primitive("dropout", [out], {"rate": params.rate})
    return out


@dataclass
class EncoderParams:
    embedding: Tensor  # V x e
    ff: List[Linear]
    fwd: LstmCellParams
    bwd: LstmCellParams

    @property
    def vocab_size(self) -> int:
        return self.embedding.shape[0]

    @property
    def output_dim(self) -> int:
        return 2 * self.fwd.hidden

    @classmethod
    def init(cls, store, prefix, vocab_size: int, embed_dim: int, n_ff: int, hidden: int, rng,
             scale: float = INIT_SCALE) -> "EncoderParams":
        if n_ff < 0:
            raise ValueError("n_ff must be >= 0")
        emb = store.add(f"{prefix}.embedding", rng.normal(0.0, 1.0, size=(vocab_size, embed_dim)))
        ff = [Linear.init(store, f"{prefix}.ff{k}", embed_dim, embed_dim, rng, scale) for k in range(n_ff)]
        fwd = LstmCellParams.init(store, f"{prefix}.fwd", embed_dim, hidden, rng, scale)
        bwd = LstmCellParams.init(store, f"{prefix}.bwd", embed_dim, hidden, rng, scale)
        return cls(emb, ff, fwd, bwd)

    @classmethod
    def from_store(cls, store, prefix, n_ff: int) -> "EncoderParams":
        return cls(
            store[f"{prefix}.embedding"],
            [Linear.from_store(store, f"{prefix}.ff{k}") for k in range(n_ff)],
            LstmCellParams.from_store(store, f"{prefix}.fwd"),
            LstmCellParams.from_store(store, f"{prefix}.bwd"),
        )


def encode(params: EncoderParams, symbols: Sequence[int]) -> Tensor:
    """Embed, apply the tanh pre-encoder, then the BiLSTM.  Returns I x 2h."""
    ids = np.asarray(symbols, dtype=np.int64).reshape(-1)
    if ids.size == 0:
        raise ShapeError("encode: empty symbol sequence")
    V = params.vocab_size
    for pos, s in enumerate(ids):
        if not 0 <= s < V:
            raise ValueError(f"encode: symbol id {int(s)} at position {pos} is outside [0, {V})")
    x = apply_primitive("embedding_gather", [params.embedding], {"ids": ids})
    for layer in params.ff:
        x = layer(x).tanh()
    return bilstm_apply(params.fwd, params.bwd, x)
