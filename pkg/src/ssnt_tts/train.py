"""Adam training of the marginal NLL with checkpointing and a CSV metrics log."""

from __future__ import annotations

import csv
import logging
import math
import time
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np

from .autodiff import ParameterStore, Tape, backward
from .data import Utterance
from .model import ModelConfig, init_params, run_model
from .trellis import TrellisError

log = logging.getLogger(__name__)

METRICS_HEADER = ("step", "train_nll", "val_nll", "seconds")


class TrainingError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    epochs: int = 10
    max_steps: int = 0
    batch_size: int = 8
    clip: float = 5.0
    seed: int = 0
    checkpoint_interval: int = 0
    validation_interval: int = 0

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.lr <= 0:
            raise ValueError("train config: lr must be > 0")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError("train config: beta1, beta2 must lie in [0, 1)")
        if self.eps <= 0:
            raise ValueError("train config: eps must be > 0")
        if self.batch_size < 1:
            raise ValueError("train config: batch_size must be >= 1")
        if self.epochs < 0 or self.max_steps < 0:
            raise ValueError("train config: epochs and max_steps must be >= 0")
        if self.clip < 0:
            raise ValueError("train config: clip must be >= 0")

    @classmethod
    def field_names(cls):
        return [f.name for f in fields(cls)]


@dataclass
class AdamState:
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0


def clip_by_global_norm(grads: Dict[str, np.ndarray], max_norm: float) -> float:
    """Scale ``grads`` in place so their joint L2 norm is at most ``max_norm``."""
    norm = math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
    if max_norm > 0 and norm > max_norm:
        scale = max_norm / norm
        for g in grads.values():
            g *= scale
    return norm


def adam_step(store: ParameterStore, grads: Dict[str, np.ndarray], state: AdamState,
              cfg: TrainConfig) -> AdamState:
    for name, g in grads.items():
        if not np.isfinite(g).all():
            raise TrainingError(f"non-finite gradient for parameter {name!r}")
    grads = {k: np.array(g, dtype=np.float64) for k, g in grads.items()}
    clip_by_global_norm(grads, cfg.clip)
    state.t += 1
    t = state.t
    c1 = 1.0 - cfg.beta1 ** t
    c2 = 1.0 - cfg.beta2 ** t
    for name, p in store.items():
        g = grads.get(name)
        if g is None:
            continue
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        v = state.v[name]
        m *= cfg.beta1
        m += (1.0 - cfg.beta1) * g
        v *= cfg.beta2
        v += (1.0 - cfg.beta2) * g * g
        p.data -= cfg.lr * (m / c1) / (np.sqrt(v / c2) + cfg.eps)
    return state


def utterance_seed(seed: int, epoch: int, index: int) -> int:
    return int(np.random.SeedSequence([seed, epoch, index]).generate_state(1)[0])


def utterance_gradients(cfg: ModelConfig, params: ParameterStore, utt: Utterance, seed: int):
    """Loss, frame count and gradient map for one utterance (dropout on)."""
    with Tape(seed) as tape:
        out = run_model(cfg, params, utt.symbols, utt.features, training=True)
        grads = backward(out.loss, params, tape)
    return float(out.loss.data), out.n_frames, grads


def evaluate_nll(cfg: ModelConfig, params: ParameterStore, utts: Sequence[Utterance],
                 seed: int = 0) -> float:
    """Per-frame NLL with training-mode dropout disabled."""
    total, frames = 0.0, 0
    for k, u in enumerate(utts):
        with Tape(utterance_seed(seed, 2**31 - 1, k), record=False):
            out = run_model(cfg, params, u.symbols, u.features, training=False)
        total += float(out.loss.data)
        frames += out.n_frames
    return total / max(frames, 1)


def usable(cfg: ModelConfig, utts: Sequence[Utterance]) -> List[Utterance]:
    """Drop (with a warning) utterances that admit no monotonic path."""
    keep = []
    for u in utts:
        n_groups = -(-u.J // cfg.reduction)
        if u.I > n_groups:
            log.warning("skipping %s: %d symbols but only %d output groups", u.id, u.I, n_groups)
            continue
        keep.append(u)
    return keep


@dataclass
class MetricsLog:
    rows: List[tuple] = field(default_factory=list)

    def append(self, step: int, train_nll: float, val_nll: Optional[float], seconds: float) -> None:
        if self.rows and step <= self.rows[-1][0]:
            raise ValueError(f"metrics steps must increase: {step} after {self.rows[-1][0]}")
        self.rows.append((step, train_nll, val_nll, seconds))

    def train_curve(self) -> np.ndarray:
        return np.array([r[1] for r in self.rows])

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(METRICS_HEADER)
            for step, tr, va, sec in self.rows:
                w.writerow([step, repr(tr), "" if va is None else repr(va), f"{sec:.3f}"])


def steps_per_epoch(n_utts: int, batch_size: int) -> int:
    return -(-n_utts // batch_size)


def fit_params(cfg: ModelConfig, tcfg: TrainConfig, params: ParameterStore,
               train: Sequence[Utterance], val: Sequence[Utterance] = (),
               state: Optional[AdamState] = None,
               on_step: Optional[Callable[[int, ParameterStore, AdamState], None]] = None,
               metrics: Optional[MetricsLog] = None) -> MetricsLog:
    """Optimise ``params`` in place.

    Batch order and dropout masks derive from ``(seed, epoch, position)``, so a
    run restarted from ``state.t`` retraces the exact same schedule.
    """
    train = usable(cfg, train)
    val = usable(cfg, val)
    if not train:
        raise TrainingError("empty training corpus")
    state = state or AdamState()
    metrics = metrics or MetricsLog()
    per_epoch = steps_per_epoch(len(train), tcfg.batch_size)
    total = tcfg.max_steps if tcfg.max_steps > 0 else tcfg.epochs * per_epoch
    start = time.perf_counter()
    while state.t < total:
        epoch, b = divmod(state.t, per_epoch)
        order = np.random.default_rng(np.random.SeedSequence([tcfg.seed, epoch])).permutation(len(train))
        idx = order[b * tcfg.batch_size:(b + 1) * tcfg.batch_size]
        summed: Dict[str, np.ndarray] = {}
        loss_sum, frames = 0.0, 0
        for k in idx:
            loss, n, grads = utterance_gradients(cfg, params, train[k], utterance_seed(tcfg.seed, epoch, int(k)))
            loss_sum += loss
            frames += n
            for name, g in grads.items():
                if name in summed:
                    summed[name] += g
                else:
                    summed[name] = g.copy()
        adam_step(params, summed, state, tcfg)
        step = state.t
        val_nll = None
        if val and tcfg.validation_interval > 0 and (step % tcfg.validation_interval == 0 or step == total):
            val_nll = evaluate_nll(cfg, params, val, tcfg.seed)
        metrics.append(step, loss_sum / frames, val_nll, time.perf_counter() - start)
        log.info("step %d  train_nll %.4f%s", step, loss_sum / frames,
                 "" if val_nll is None else f"  val_nll {val_nll:.4f}")
        if on_step is not None:
            on_step(step, params, state)
    return metrics


def train_loop(cfg: ModelConfig, tcfg: TrainConfig, corpus_dir, out_dir, resume=None,
               vocab: Optional[Sequence[str]] = None):
    """Train on ``corpus_dir/train`` and write checkpoints plus ``metrics.csv``.

    Returns ``(final checkpoint path, MetricsLog)``.
    """
    from .checkpoint import load_checkpoint, save_checkpoint
    from .data import load_split

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    vocab_map, train = load_split(corpus_dir, "train", with_alignment=False)
    val = []
    if (Path(corpus_dir) / "val" / "transcripts.tsv").exists():
        _, val = load_split(corpus_dir, "val", with_alignment=False)
    if not train:
        raise TrainingError("empty training corpus")
    tokens = sorted(vocab_map, key=vocab_map.get)

    metrics = MetricsLog()
    if resume is not None:
        ck = load_checkpoint(resume)
        cfg, params, state = ck.config, ck.params, ck.adam or AdamState()
        metrics_path = out / "metrics.csv"
        if metrics_path.exists():
            metrics = read_metrics(metrics_path, upto=state.t)
    else:
        params = init_params(cfg, tcfg.seed)
        state = AdamState()

    per_epoch = steps_per_epoch(len(usable(cfg, train)), tcfg.batch_size)
    total = tcfg.max_steps if tcfg.max_steps > 0 else tcfg.epochs * per_epoch
    written: List[Path] = []

    def save(step, p, st):
        path = out / f"ckpt_{step}.bin"
        save_checkpoint(path, cfg, p, tokens, st, tcfg)
        written.append(path)

    def on_step(step, p, st):
        if (tcfg.checkpoint_interval > 0 and step % tcfg.checkpoint_interval == 0) or step == total:
            save(step, p, st)

    fit_params(cfg, tcfg, params, train, val, state, on_step, metrics)
    if not written:
        save(state.t, params, state)
    metrics.write_csv(out / "metrics.csv")
    return written[-1], metrics


def read_metrics(path, upto: Optional[int] = None) -> MetricsLog:
    mlog = MetricsLog()
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            step = int(row["step"])
            if upto is not None and step > upto:
                break
            val = float(row["val_nll"]) if row["val_nll"] else None
            mlog.rows.append((step, float(row["train_nll"]), val, float(row["seconds"])))
    return mlog
