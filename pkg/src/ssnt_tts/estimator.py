"""scikit-learn style wrapper: ``fit(X, y)`` trains, ``predict(X)`` synthesises.

``X`` is a list of symbol-id sequences and ``y`` a list of ``J x D`` feature
matrices, so the model slots into tooling that understands ``get_params`` /
``set_params`` / ``clone``.
"""

from __future__ import annotations

from typing import List, Optional, Sequence, Tuple

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .autodiff import Tape
from .checkpoint import load_checkpoint, save_checkpoint
from .data import Utterance
from .decode import DecodeConfig, DecodeResult, synthesize
from .model import ModelConfig, init_params, run_model
from .train import AdamState, MetricsLog, TrainConfig, fit_params
from .trellis import best_path, backward_pass, posteriors
from .validation import check_paired, check_symbol_sequences


class SSNTSynthesizer(BaseEstimator):
    """Symbol-to-feature transducer with a latent hard monotonic alignment.

    Parameters mirror :class:`~ssnt_tts.model.ModelConfig` (network shape),
    :class:`~ssnt_tts.train.TrainConfig` (optimiser) and
    :class:`~ssnt_tts.decode.DecodeConfig` (inference).
    """

    def __init__(self, embed_dim=16, n_ff=1, enc_hidden=16, prenet_dims=(16, 16),
                 prenet_dropout=0.5, dec_layers=1, dec_hidden=32, joint_dim=32,
                 n_joint_layers=1, reduction=1, variance_mode="learned", variance=1.0,
                 terminal_shift=True, lr=3e-3, epochs=10, max_steps=0, batch_size=8,
                 clip=5.0, decode_mode="greedy", max_groups_per_symbol=10,
                 random_state=0):
        self.embed_dim = embed_dim
        self.n_ff = n_ff
        self.enc_hidden = enc_hidden
        self.prenet_dims = prenet_dims
        self.prenet_dropout = prenet_dropout
        self.dec_layers = dec_layers
        self.dec_hidden = dec_hidden
        self.joint_dim = joint_dim
        self.n_joint_layers = n_joint_layers
        self.reduction = reduction
        self.variance_mode = variance_mode
        self.variance = variance
        self.terminal_shift = terminal_shift
        self.lr = lr
        self.epochs = epochs
        self.max_steps = max_steps
        self.batch_size = batch_size
        self.clip = clip
        self.decode_mode = decode_mode
        self.max_groups_per_symbol = max_groups_per_symbol
        self.random_state = random_state

    def _model_config(self, vocab_size: int, feat_dim: int) -> ModelConfig:
        return ModelConfig(
            vocab_size=vocab_size, embed_dim=self.embed_dim, n_ff=self.n_ff,
            enc_hidden=self.enc_hidden, prenet_dims=tuple(self.prenet_dims),
            prenet_dropout=self.prenet_dropout, dec_layers=self.dec_layers,
            dec_hidden=self.dec_hidden, joint_dim=self.joint_dim,
            n_joint_layers=self.n_joint_layers, feat_dim=feat_dim, reduction=self.reduction,
            variance_mode=self.variance_mode, variance=self.variance,
            terminal_shift=self.terminal_shift)

    def _train_config(self) -> TrainConfig:
        return TrainConfig(lr=self.lr, epochs=self.epochs, max_steps=self.max_steps,
                           batch_size=self.batch_size, clip=self.clip,
                           seed=int(self.random_state or 0))

    def _decode_config(self, seed=None) -> DecodeConfig:
        return DecodeConfig(mode=self.decode_mode,
                            seed=int(self.random_state or 0) if seed is None else seed,
                            max_groups_per_symbol=self.max_groups_per_symbol)

    def fit(self, X, y, vocab_size: Optional[int] = None):
        Xs, Ys = check_paired(X, y, vocab_size)
        vocab_size = vocab_size or int(max(x.max() for x in Xs)) + 1
        self.config_ = self._model_config(vocab_size, Ys[0].shape[1])
        tcfg = self._train_config()
        self.params_ = init_params(self.config_, tcfg.seed)
        utts = [Utterance(f"u{n}", x, f) for n, (x, f) in enumerate(zip(Xs, Ys))]
        self.optimizer_state_ = AdamState()
        self.metrics_ = fit_params(self.config_, tcfg, self.params_, utts, state=self.optimizer_state_)
        self.n_features_in_ = Ys[0].shape[1]
        return self

    def _check(self, X):
        check_is_fitted(self, "params_")
        return check_symbol_sequences(X, self.config_.vocab_size)

    def decode(self, X, seed=None) -> List[DecodeResult]:
        Xs = self._check(X)
        dcfg = self._decode_config(seed)
        return [synthesize(self.config_, self.params_, x, dcfg) for x in Xs]

    def predict(self, X) -> List[np.ndarray]:
        """Mean feature frames for each symbol sequence."""
        return [r.y_hat for r in self.decode(X)]

    def predict_alignment(self, X) -> List[np.ndarray]:
        return [r.alignment for r in self.decode(X)]

    def _outputs(self, X, y):
        Xs = self._check(X)
        Xs, Ys = check_paired(Xs, y, self.config_.vocab_size, self.config_.feat_dim)
        for x, f in zip(Xs, Ys):
            with Tape(0, record=False):
                yield run_model(self.config_, self.params_, x, f, training=False)

    def score(self, X, y) -> float:
        """Mean per-frame log-likelihood (higher is better)."""
        total = frames = 0
        for out in self._outputs(X, y):
            total -= float(out.loss.data)
            frames += out.n_frames
        return total / frames

    def align(self, X, y) -> List[np.ndarray]:
        """Teacher-forced best alignment path (0-based input position per group)."""
        return [best_path(out.grid)[0] for out in self._outputs(X, y)]

    def posteriors(self, X, y) -> List[np.ndarray]:
        """Teacher-forced cell occupation posteriors, one ``I x J'`` matrix each."""
        res = []
        for out in self._outputs(X, y):
            ll = float(out.log_alpha.data[-1, -1])
            res.append(posteriors(out.log_alpha.data, backward_pass(out.grid), ll))
        return res

    def save(self, path, vocab: Optional[Sequence[str]] = None) -> None:
        check_is_fitted(self, "params_")
        vocab = list(vocab) if vocab is not None else [str(k) for k in range(1, self.config_.vocab_size)]
        save_checkpoint(path, self.config_, self.params_, vocab)

    @classmethod
    def from_checkpoint(cls, path) -> "SSNTSynthesizer":
        ck = load_checkpoint(path)
        c = ck.config
        est = cls(embed_dim=c.embed_dim, n_ff=c.n_ff, enc_hidden=c.enc_hidden,
                  prenet_dims=c.prenet_dims, prenet_dropout=c.prenet_dropout,
                  dec_layers=c.dec_layers, dec_hidden=c.dec_hidden, joint_dim=c.joint_dim,
                  n_joint_layers=c.n_joint_layers, reduction=c.reduction,
                  variance_mode=c.variance_mode, variance=c.variance,
                  terminal_shift=c.terminal_shift)
        est.config_ = c
        est.params_ = ck.params
        est.n_features_in_ = c.feat_dim
        return est
