"""Self-test suites behind ``ssnt check``.

Each suite returns a :class:`SuiteResult`; the CLI prints one line per suite.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable, List

import numpy as np

from . import trellis
from .autodiff import Tape, backward, grad_check
from .data import CorpusConfig, generate
from .model import ModelConfig, init_params, nll
from .train import TrainConfig, fit_params


@dataclass
class SuiteResult:
    name: str
    passed: bool
    detail: str
    seconds: float = 0.0

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"[{status}] {self.name}: {self.detail} ({self.seconds:.2f}s)"


def oracle_equivalence(n_grids: int = 50, seed: int = 0, tol: float = 1e-9) -> SuiteResult:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n_grids):
        I = int(rng.integers(1, 5))
        J = int(rng.integers(I, 8))
        grid = trellis.random_grid(I, J, rng)
        _, ll = trellis.forward_pass(grid)
        worst = max(worst, abs(float(ll.data) - trellis.brute_force_likelihood(grid)))
    return SuiteResult("oracle-equivalence", worst <= tol, f"max |forward - enumeration| = {worst:.3e} (tol {tol:g})")


def identity_grids(n_grids: int = 20, seed: int = 1):
    rng = np.random.default_rng(seed)
    for _ in range(n_grids):
        I = int(rng.integers(1, 11))
        J = int(rng.integers(I, 41))
        yield trellis.random_grid(I, J, rng)


def forward_backward_identity(n_grids: int = 20, seed: int = 1, tol: float = 1e-8) -> SuiteResult:
    from scipy.special import logsumexp
    worst = 0.0
    for grid in identity_grids(n_grids, seed):
        log_alpha, ll = trellis.forward_pass(grid)
        log_beta = trellis.backward_pass(grid)
        per_col = logsumexp(log_alpha.data + log_beta, axis=0)
        worst = max(worst, float(np.max(np.abs(per_col - float(ll.data)))))
    return SuiteResult("forward-backward-identity", worst <= tol, f"max deviation = {worst:.3e} (tol {tol:g})")


def posterior_gradient_consistency(n_grids: int = 20, seed: int = 1, tol: float = 1e-8) -> SuiteResult:
    """d logL / d log_emit[i, j] must equal the occupation posterior."""
    worst = 0.0
    for grid in identity_grids(n_grids, seed):
        grid.log_emit.requires_grad = True
        grid.log_emit.name = "log_emit"
        with Tape() as tape:
            log_alpha, ll = trellis.forward_pass(grid)
            grads = backward(ll, tape=tape)
        gamma = trellis.posteriors(log_alpha.data, trellis.backward_pass(grid), float(ll.data))
        worst = max(worst, float(np.max(np.abs(grads["log_emit"] - gamma))))
    return SuiteResult("gradient-posterior-consistency", worst <= tol, f"max |grad - gamma| = {worst:.3e} (tol {tol:g})")


TINY = dict(vocab_size=3, embed_dim=4, n_ff=1, enc_hidden=4, prenet_dims=(4, 4), dec_layers=1,
            dec_hidden=4, joint_dim=4, feat_dim=2, reduction=1, prenet_dropout=0.0)

# Weights of O(1) keep every gradient entry well above the ~1e-10 absolute
# round-off floor of central differences at h = 1e-5.
GRAD_CHECK_INIT_SCALE = 1.0


def model_gradient_check(seed: int = 0, tol: float = 1e-4) -> SuiteResult:
    cfg = ModelConfig(**TINY)
    params = init_params(cfg, seed, scale=GRAD_CHECK_INIT_SCALE)
    rng = np.random.default_rng(seed)
    x = [0, 1, 2]
    y = rng.normal(size=(5, cfg.feat_dim))
    err = grad_check(lambda: nll(cfg, params, x, y), params, h=1e-5)
    return SuiteResult("model-gradient-check", err <= tol, f"max relative error = {err:.3e} (tol {tol:g})")


def overfit_one(steps: int = 500, seed: int = 0, min_drop: float = 0.70) -> SuiteResult:
    """Per-frame NLL on a single utterance must fall by ``min_drop`` (relative)."""
    cc = CorpusConfig(K=3, D=4, d_min=2, d_max=4, noise_std=0.1, L_min=3, L_max=3,
                      n_train=1, n_val=0, n_test=0, pad_frames=2, seed=seed)
    vocab, splits = generate(cc)
    utt = splits["train"][0]
    cfg = ModelConfig(vocab_size=len(vocab) + 1, embed_dim=8, enc_hidden=8, prenet_dims=(8, 8),
                      dec_hidden=16, joint_dim=16, feat_dim=cc.D)
    params = init_params(cfg, seed)
    log = fit_params(cfg, TrainConfig(lr=1e-2, max_steps=steps, batch_size=1, seed=seed), params, [utt])
    curve = log.train_curve()
    drop = (curve[0] - curve[-1]) / abs(curve[0])
    return SuiteResult("overfit-one", drop >= min_drop,
                       f"I={utt.I} J={utt.J}: per-frame NLL {curve[0]:.3f} -> {curve[-1]:.3f} "
                       f"({100 * drop:.1f}% drop, need {100 * min_drop:.0f}%)")


QUICK: List[Callable[[], SuiteResult]] = [oracle_equivalence, forward_backward_identity,
                                          posterior_gradient_consistency]
FULL: List[Callable[[], SuiteResult]] = QUICK + [model_gradient_check, overfit_one]


def run(level: str = "quick") -> List[SuiteResult]:
    suites = QUICK if level == "quick" else FULL
    results = []
    for suite in suites:
        t0 = time.perf_counter()
        try:
            res = suite()
        except Exception as exc:  # a crashing suite is a failing suite
            res = SuiteResult(suite.__name__, False, f"raised {type(exc).__name__}: {exc}")
        res.seconds = time.perf_counter() - t0
        results.append(res)
    return results
