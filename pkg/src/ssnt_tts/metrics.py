"""Alignment and duration diagnostics used by ``ssnt eval`` and ``ssnt align``."""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np

from .autodiff import ParameterStore, Tape
from .data import PAUSE, Utterance
from .decode import DecodeConfig, synthesize
from .model import ModelConfig, run_model
from .trellis import best_path


def groups_to_frames(path, r: int, n_frames: int) -> np.ndarray:
    return np.repeat(np.asarray(path), r)[:n_frames]


def boundaries(path, n_symbols: int) -> np.ndarray:
    """Frame index at which each input position 1..I-1 (0-based) is first visited."""
    path = np.asarray(path)
    out = np.full(n_symbols - 1, -1, dtype=np.int64)
    for i in range(1, n_symbols):
        hit = np.flatnonzero(path == i)
        if hit.size:
            out[i - 1] = hit[0]
    return out


def boundary_hits(pred, ref, n_symbols: int, tol: int = 2):
    """(hits, total) over the I-1 internal boundaries; a missing boundary is a miss."""
    bp, br = boundaries(pred, n_symbols), boundaries(ref, n_symbols)
    ok = (bp >= 0) & (np.abs(bp - br) <= tol)
    return int(ok.sum()), len(br)


def durations(path, n_symbols: int) -> np.ndarray:
    return np.bincount(np.asarray(path, dtype=np.int64), minlength=n_symbols)[:n_symbols]


def duration_relative_errors(pred_dur, ref_dur) -> np.ndarray:
    pred_dur = np.asarray(pred_dur, dtype=np.float64)
    ref_dur = np.asarray(ref_dur, dtype=np.float64)
    return np.abs(pred_dur - ref_dur) / ref_dur


@dataclass
class EvalReport:
    nll_per_frame: float
    termination_rate: float
    median_duration_error: float
    boundary_accuracy: float
    duration_errors_by_token: Dict[str, List[float]] = field(default_factory=dict)
    n_utterances: int = 0

    def median_for(self, tokens: Sequence[str]) -> float:
        vals = [e for t in tokens for e in self.duration_errors_by_token.get(t, [])]
        return float(np.median(vals)) if vals else float("nan")

    @property
    def pause_duration_error(self) -> float:
        return self.median_for([PAUSE])

    @property
    def non_pause_duration_error(self) -> float:
        return self.median_for([t for t in self.duration_errors_by_token if t != PAUSE])

    def lines(self) -> List[str]:
        out = [
            f"utterances: {self.n_utterances}",
            f"nll_per_frame: {self.nll_per_frame:.6f}",
            f"termination_rate: {self.termination_rate:.4f}",
            f"median_duration_rel_error: {self.median_duration_error:.4f}",
            f"boundary_accuracy_2frames: {self.boundary_accuracy:.4f}",
        ]
        if PAUSE in self.duration_errors_by_token:
            out.append(f"median_duration_rel_error[pause]: {self.pause_duration_error:.4f}")
            out.append(f"median_duration_rel_error[non-pause]: {self.non_pause_duration_error:.4f}")
        return out


def evaluate(cfg: ModelConfig, params: ParameterStore, utts: Sequence[Utterance],
             dcfg: Optional[DecodeConfig] = None, length_factor: int = 3, tol: int = 2) -> EvalReport:
    """Teacher-forced NLL and best-path boundaries, plus greedy free-running decodes.

    Decodes are capped at ``length_factor`` times the reference group count.
    """
    dcfg = dcfg or DecodeConfig(mode="greedy")
    r = cfg.reduction
    total_nll, frames = 0.0, 0
    hits = n_bounds = 0
    terminated = 0
    by_token: Dict[str, List[float]] = defaultdict(list)
    for u in utts:
        with Tape(0, record=False):
            out = run_model(cfg, params, u.symbols, u.features, training=False)
        total_nll += float(out.loss.data)
        frames += u.J
        if u.alignment is None:
            continue
        ref = np.asarray(u.alignment) - 1
        z, _ = best_path(out.grid)
        h, n = boundary_hits(groups_to_frames(z, r, u.J), ref, u.I, tol)
        hits += h
        n_bounds += n
        n_groups = -(-u.J // r)
        res = synthesize(cfg, params, u.symbols, dcfg, max_groups=length_factor * n_groups)
        terminated += res.terminated
        errs = duration_relative_errors(durations(res.alignment, u.I) * r, durations(ref, u.I))
        toks = u.tokens or [str(s) for s in u.symbols]
        for tok, e in zip(toks, errs):
            by_token[tok].append(float(e))
    all_errs = [e for v in by_token.values() for e in v]
    n_aligned = sum(1 for u in utts if u.alignment is not None)
    return EvalReport(
        nll_per_frame=total_nll / max(frames, 1),
        termination_rate=terminated / n_aligned if n_aligned else float("nan"),
        median_duration_error=float(np.median(all_errs)) if all_errs else float("nan"),
        boundary_accuracy=hits / n_bounds if n_bounds else float("nan"),
        duration_errors_by_token=dict(by_token),
        n_utterances=len(utts),
    )
