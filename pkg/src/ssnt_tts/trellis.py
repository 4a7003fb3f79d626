"""Log-space marginalisation over monotonic hard alignments.

A path visits one cell per output frame, starts at (1, 1), ends at (I, J)
and moves either right (stay on input i) or diagonally (advance to i + 1).
Staying at (i, j) costs ``log_emit_prob[i, j]``; advancing from i - 1 into
(i, j) costs ``log_shift_prob[i - 1, j] + log_emit_prob[i, j]``; every
visited cell adds ``log_emit[i, j]``.  The first cell also pays its Emit.

Indices in this module are 0-based.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Tuple

import numpy as np
from scipy.special import logsumexp

from .autodiff import Tensor, apply_primitive

__all__ = [
    "TrellisError",
    "TrellisGrid",
    "ForwardBackwardResult",
    "forward_pass",
    "backward_pass",
    "posteriors",
    "forward_backward",
    "brute_force_likelihood",
    "enumerate_paths",
    "path_log_weight",
    "best_path",
    "is_valid_path",
    "random_grid",
]

NEG_INF = -np.inf
MAX_ENUMERATED_PATHS = 10**6


class TrellisError(ValueError):
    pass


def _tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


@dataclass
class TrellisGrid:
    log_emit: Tensor
    log_emit_prob: Tensor
    log_shift_prob: Tensor

    def __post_init__(self):
        self.log_emit = _tensor(self.log_emit)
        self.log_emit_prob = _tensor(self.log_emit_prob)
        self.log_shift_prob = _tensor(self.log_shift_prob)
        shapes = {self.log_emit.shape, self.log_emit_prob.shape, self.log_shift_prob.shape}
        if len(shapes) != 1 or self.log_emit.ndim != 2:
            raise TrellisError(f"grid matrices must share one 2-D shape, got {sorted(shapes)}")
        if 0 in self.log_emit.shape:
            raise TrellisError(f"grid extents must be positive, got {self.log_emit.shape}")

    @property
    def I(self) -> int:
        return self.log_emit.shape[0]

    @property
    def J(self) -> int:
        return self.log_emit.shape[1]

    def arrays(self) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        return self.log_emit.data, self.log_emit_prob.data, self.log_shift_prob.data

    def check(self, atol: float = 1e-12) -> None:
        le, lep, lsp = self.arrays()
        if not np.isfinite(le).all():
            raise TrellisError("log_emit must be finite")
        gap = np.abs(np.exp(lep) + np.exp(lsp) - 1.0)
        if gap.max() > atol:
            raise TrellisError(f"Emit/Shift probabilities do not sum to 1 (max gap {gap.max():.3e})")


@dataclass
class ForwardBackwardResult:
    log_alpha: np.ndarray
    log_beta: np.ndarray
    log_likelihood: float
    gamma: np.ndarray


def _require_path(I: int, J: int) -> None:
    if I > J:
        raise TrellisError(f"no monotonic path exists: I={I} input positions > J={J} frames")


def forward_pass(grid: TrellisGrid) -> Tuple[Tensor, Tensor]:
    """Forward recursion built from tape primitives.

    Returns ``(log_alpha, log_likelihood)`` as tensors so the likelihood can
    be differentiated by :func:`~ssnt_tts.autodiff.backward`.
    """
    I, J = grid.I, grid.J
    _require_path(I, J)
    # cell score shared by both incoming moves, transposed so columns are rows
    cell = (grid.log_emit + grid.log_emit_prob).T
    shift = grid.log_shift_prob.T
    first = cell[0][0:1]
    if I > 1:
        alpha = apply_primitive("concat", [first, Tensor(np.full(I - 1, NEG_INF))], {"axis": 0})
    else:
        alpha = first
    columns = [alpha]
    pad = Tensor(np.full(1, NEG_INF))
    for j in range(1, J):
        if I == 1:
            alpha = alpha + cell[j]
        else:
            leaving = alpha + shift[j]
            advance = apply_primitive("concat", [pad, leaving[0:I - 1]], {"axis": 0})
            both = apply_primitive("stack", [alpha, advance], {"axis": 0})
            alpha = apply_primitive("logsumexp", [both], {"axis": 0}) + cell[j]
        columns.append(alpha)
    log_alpha = apply_primitive("stack", columns, {"axis": 1})
    return log_alpha, alpha[I - 1]


def backward_pass(grid: TrellisGrid) -> np.ndarray:
    """Backward variables in plain numpy; ``log_beta[I-1, J-1] == 0``."""
    le, lep, lsp = grid.arrays()
    I, J = le.shape
    _require_path(I, J)
    beta = np.full((I, J), NEG_INF)
    beta[:, J - 1] = NEG_INF
    beta[I - 1, J - 1] = 0.0
    for j in range(J - 2, -1, -1):
        stay = lep[:, j + 1] + le[:, j + 1] + beta[:, j + 1]
        adv = np.full(I, NEG_INF)
        adv[:-1] = lsp[:-1, j + 1] + lep[1:, j + 1] + le[1:, j + 1] + beta[1:, j + 1]
        beta[:, j] = np.logaddexp(stay, adv)
    return beta


def posteriors(log_alpha: np.ndarray, log_beta: np.ndarray, log_likelihood: float) -> np.ndarray:
    if not np.isfinite(log_likelihood):
        raise TrellisError("zero-probability instance: log-likelihood is -inf")
    with np.errstate(invalid="ignore"):
        gamma = np.exp(np.asarray(log_alpha) + np.asarray(log_beta) - log_likelihood)
    return np.nan_to_num(gamma, nan=0.0)


def forward_backward(grid: TrellisGrid) -> ForwardBackwardResult:
    log_alpha, ll = forward_pass(grid)
    log_beta = backward_pass(grid)
    ll = float(ll.data)
    return ForwardBackwardResult(log_alpha.data, log_beta, ll, posteriors(log_alpha.data, log_beta, ll))


def enumerate_paths(I: int, J: int):
    """Yield every monotone path as a 0-based int array of length J."""
    _require_path(I, J)
    for steps in itertools.combinations(range(1, J), I - 1):
        inc = np.zeros(J, dtype=np.int64)
        inc[list(steps)] = 1
        yield np.cumsum(inc)


def path_log_weight(grid: TrellisGrid, z) -> float:
    le, lep, lsp = grid.arrays()
    z = np.asarray(z)
    total = lep[z[0], 0] + le[z[0], 0]
    for j in range(1, len(z)):
        i = z[j]
        if z[j] == z[j - 1]:
            total += lep[i, j]
        else:
            total += lsp[i - 1, j] + lep[i, j]
        total += le[i, j]
    return float(total)


def brute_force_likelihood(grid: TrellisGrid) -> float:
    """Sum over every enumerated path; the reference for :func:`forward_pass`."""
    I, J = grid.I, grid.J
    _require_path(I, J)
    n = math.comb(J - 1, I - 1)
    if n > MAX_ENUMERATED_PATHS:
        raise TrellisError(f"{n} paths exceeds the enumeration bound of {MAX_ENUMERATED_PATHS}")
    weights = [path_log_weight(grid, z) for z in enumerate_paths(I, J)]
    return float(logsumexp(weights))


def best_path(grid: TrellisGrid) -> Tuple[np.ndarray, float]:
    """Max-product path (0-based positions) and its log weight.

    Ties prefer staying, i.e. the smaller input position.
    """
    le, lep, lsp = grid.arrays()
    I, J = le.shape
    _require_path(I, J)
    delta = np.full((I, J), NEG_INF)
    came_from_advance = np.zeros((I, J), dtype=bool)
    delta[0, 0] = lep[0, 0] + le[0, 0]
    for j in range(1, J):
        stay = delta[:, j - 1] + lep[:, j]
        adv = np.full(I, NEG_INF)
        adv[1:] = delta[:-1, j - 1] + lsp[:-1, j] + lep[1:, j]
        came_from_advance[:, j] = adv > stay
        delta[:, j] = np.maximum(stay, adv) + le[:, j]
    z = np.empty(J, dtype=np.int64)
    z[-1] = I - 1
    for j in range(J - 1, 0, -1):
        z[j - 1] = z[j] - 1 if came_from_advance[z[j], j] else z[j]
    return z, float(delta[I - 1, J - 1])


def is_valid_path(z, I: int) -> bool:
    """0-based check: starts at 0, unit-or-zero steps, ends at I - 1."""
    z = np.asarray(z)
    if z.size == 0 or z[0] != 0 or z[-1] != I - 1:
        return False
    d = np.diff(z)
    return bool(np.all((d == 0) | (d == 1)))


def random_grid(I: int, J: int, rng) -> TrellisGrid:
    """Random finite grid with complementary Emit/Shift logs (test helper)."""
    le = rng.normal(0.0, 2.0, size=(I, J))
    logits = rng.normal(0.0, 1.5, size=(I, J))
    lep = -np.logaddexp(0.0, -logits)
    lsp = -np.logaddexp(0.0, logits)
    return TrellisGrid(le, lep, lsp)
