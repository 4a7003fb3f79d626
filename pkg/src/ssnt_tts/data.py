"""Synthetic symbol-to-feature corpus and the plain-text file formats.

Layout on disk::

    corpus/vocab.txt                    one token per line, id = line number (1-based)
    corpus/<split>/transcripts.tsv      id<TAB>tok tok tok
    corpus/<split>/feats/<id>.csv       one frame per row, D comma-separated floats
    corpus/<split>/align/<id>.csv       frame,symbol_index (both 1-based)

Every symbol has a fixed prototype vector; an utterance repeats each
symbol's prototype for a random duration and adds Gaussian noise.  Begin and
end silence symbols frame every utterance, and an optional long "pause"
symbol reproduces the hard-to-time segments seen in read speech.
"""

from __future__ import annotations

import logging
import os
import string
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

log = logging.getLogger(__name__)

BEGIN = "<s>"
END = "</s>"
PAUSE = "pau"
SPLITS = ("train", "val", "test")


class DataFormatError(ValueError):
    pass


class UnknownTokenError(DataFormatError):
    """A transcript token that is not in the vocabulary."""


@dataclass
class CorpusConfig:
    K: int = 8
    D: int = 8
    d_min: int = 2
    d_max: int = 4
    noise_std: float = 0.1
    L_min: int = 3
    L_max: int = 8
    n_train: int = 500
    n_val: int = 50
    n_test: int = 50
    pad_frames: int = 2
    pause: bool = False
    pause_prob: float = 0.2
    pause_scale: float = 0.1
    seed: int = 0

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.K < 2:
            raise ValueError(f"corpus config: K must be >= 2, got {self.K}")
        if self.D < 1:
            raise ValueError(f"corpus config: D must be >= 1, got {self.D}")
        if not 1 <= self.d_min <= self.d_max:
            raise ValueError(f"corpus config: need 1 <= d_min <= d_max, got {self.d_min}, {self.d_max}")
        if self.noise_std < 0:
            raise ValueError("corpus config: noise_std must be >= 0")
        if not 1 <= self.L_min <= self.L_max:
            raise ValueError(f"corpus config: need 1 <= L_min <= L_max, got {self.L_min}, {self.L_max}")
        if min(self.n_train, self.n_val, self.n_test, self.pad_frames) < 0:
            raise ValueError("corpus config: counts must be >= 0")
        if not 0.0 <= self.pause_prob <= 1.0:
            raise ValueError("corpus config: pause_prob must lie in [0, 1]")

    @classmethod
    def field_names(cls):
        return [f.name for f in fields(cls)]


@dataclass
class Utterance:
    id: str
    symbols: np.ndarray  # vocab ids (1-based)
    features: np.ndarray  # J x D
    alignment: Optional[np.ndarray] = None  # per-frame symbol index, 1-based
    tokens: List[str] = field(default_factory=list)

    @property
    def I(self) -> int:
        return len(self.symbols)

    @property
    def J(self) -> int:
        return self.features.shape[0]


def content_tokens(K: int) -> List[str]:
    if K <= 26:
        return list(string.ascii_lowercase[:K])
    return [f"s{k}" for k in range(K)]


def build_vocab(cfg: CorpusConfig) -> List[str]:
    vocab = []
    if cfg.pad_frames > 0:
        vocab += [BEGIN, END]
    if cfg.pause:
        vocab.append(PAUSE)
    return vocab + content_tokens(cfg.K)


def prototypes(cfg: CorpusConfig, vocab: Sequence[str]) -> Dict[str, np.ndarray]:
    """Fixed per-symbol mean vectors; silences are zero, the pause is faint."""
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 0]))
    protos = {}
    for tok in vocab:
        v = rng.normal(0.0, 1.0, size=cfg.D)
        if tok in (BEGIN, END):
            v = np.zeros(cfg.D)
        elif tok == PAUSE:
            v = cfg.pause_scale * v
        protos[tok] = v
    return protos


def _draw_utterance(cfg: CorpusConfig, uid: str, vocab: List[str], protos, rng) -> Utterance:
    content = content_tokens(cfg.K)
    n = int(rng.integers(cfg.L_min, cfg.L_max + 1))
    toks: List[str] = []
    for k in range(n):
        if cfg.pause and k > 0 and rng.random() < cfg.pause_prob:
            toks.append(PAUSE)
        toks.append(content[int(rng.integers(cfg.K))])
    durations = []
    for tok in toks:
        d = int(rng.integers(cfg.d_min, cfg.d_max + 1))
        if tok == PAUSE:
            d *= int(rng.integers(3, 6))
        durations.append(d)
    if cfg.pad_frames > 0:
        toks = [BEGIN] + toks + [END]
        durations = [cfg.pad_frames] + durations + [cfg.pad_frames]
    means = np.concatenate([np.repeat(protos[t][None, :], d, axis=0) for t, d in zip(toks, durations)])
    feats = means + rng.normal(0.0, cfg.noise_std, size=means.shape) if cfg.noise_std > 0 else means
    ids = np.array([vocab.index(t) + 1 for t in toks], dtype=np.int64)
    align = np.repeat(np.arange(1, len(toks) + 1), durations)
    return Utterance(uid, ids, feats, align, toks)


def generate(cfg: CorpusConfig) -> Tuple[List[str], Dict[str, List[Utterance]]]:
    """Build the corpus in memory; a pure function of ``cfg``."""
    vocab = build_vocab(cfg)
    protos = prototypes(cfg, vocab)
    counts = {"train": cfg.n_train, "val": cfg.n_val, "test": cfg.n_test}
    splits = {}
    for k, split in enumerate(SPLITS):
        rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 1 + k]))
        splits[split] = [_draw_utterance(cfg, f"{split}_{n:05d}", vocab, protos, rng)
                         for n in range(counts[split])]
    return vocab, splits


def gen_corpus(cfg: CorpusConfig, out_dir) -> dict:
    """Write the corpus under ``out_dir`` and return summary statistics."""
    out = Path(out_dir)
    vocab, splits = generate(cfg)
    out.mkdir(parents=True, exist_ok=True)
    write_vocab(vocab, out / "vocab.txt")
    for split, utts in splits.items():
        sdir = out / split
        (sdir / "feats").mkdir(parents=True, exist_ok=True)
        (sdir / "align").mkdir(parents=True, exist_ok=True)
        with open(sdir / "transcripts.tsv", "w", encoding="utf-8", newline="\n") as fh:
            for u in utts:
                fh.write(f"{u.id}\t{' '.join(u.tokens)}\n")
        for u in utts:
            write_features(u.features, sdir / "feats" / f"{u.id}.csv")
            write_alignment(u.alignment, sdir / "align" / f"{u.id}.csv")
    all_utts = [u for utts in splits.values() for u in utts]
    return {
        "utterances": len(all_utts),
        "frames": int(sum(u.J for u in all_utts)),
        "mean_I": float(np.mean([u.I for u in all_utts])) if all_utts else 0.0,
        "mean_J": float(np.mean([u.J for u in all_utts])) if all_utts else 0.0,
    }


# -- file formats --------------------------------------------------------------

def _fmt(v: float) -> str:
    return format(float(v), ".17g")


def write_features(matrix, path) -> None:
    m = np.asarray(matrix, dtype=np.float64)
    if m.ndim != 2:
        raise DataFormatError(f"features must be 2-D, got shape {m.shape}")
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        for row in m:
            fh.write(",".join(_fmt(v) for v in row) + "\n")


def read_features(path) -> np.ndarray:
    rows = []
    width = None
    with open(path, "r", encoding="ascii", newline=None) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                row = [float(tok) for tok in line.split(",")]
            except ValueError as exc:
                raise DataFormatError(f"{path}:{lineno}: bad number ({exc})") from None
            if width is None:
                width = len(row)
            elif len(row) != width:
                raise DataFormatError(f"{path}:{lineno}: ragged row with {len(row)} values, expected {width}")
            rows.append(row)
    if not rows:
        raise DataFormatError(f"{path}: empty feature file")
    return np.array(rows, dtype=np.float64)


def write_alignment(align, path) -> None:
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write("frame,symbol_index\n")
        for j, i in enumerate(np.asarray(align), 1):
            fh.write(f"{j},{int(i)}\n")


def read_alignment(path) -> np.ndarray:
    out = []
    with open(path, "r", encoding="ascii") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("frame"):
                continue
            parts = line.split(",")
            if len(parts) != 2:
                raise DataFormatError(f"{path}:{lineno}: expected 'frame,symbol_index'")
            out.append(int(parts[1]))
    return np.array(out, dtype=np.int64)


def write_vocab(vocab: Sequence[str], path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for tok in vocab:
            fh.write(tok + "\n")


def read_vocab(path) -> Dict[str, int]:
    vocab: Dict[str, int] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            tok = line.strip()
            if not tok:
                raise DataFormatError(f"{path}:{lineno}: empty vocabulary entry")
            if tok in vocab:
                raise DataFormatError(f"{path}:{lineno}: duplicate token {tok!r}")
            vocab[tok] = lineno
    return vocab


def tokens_to_ids(tokens: Sequence[str], vocab: Dict[str, int], where: str = "") -> List[int]:
    ids = []
    for tok in tokens:
        if tok not in vocab:
            raise UnknownTokenError(f"{where}unknown token {tok!r}")
        ids.append(vocab[tok])
    return ids


def read_transcript(path, vocab: Dict[str, int]) -> Dict[str, List[int]]:
    """Map utterance id -> symbol ids, preserving file order."""
    out: Dict[str, List[int]] = {}
    with open(path, "r", encoding="utf-8", newline=None) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\r\n")
            if not line.strip():
                continue
            uid, sep, rest = line.partition("\t")
            if not sep:
                raise DataFormatError(f"{path}:{lineno}: expected 'id<TAB>tokens'")
            toks = rest.split()
            if not toks:
                raise DataFormatError(f"{path}:{lineno}: utterance {uid!r} has no tokens")
            if uid in out:
                raise DataFormatError(f"{path}:{lineno}: duplicate utterance id {uid!r}")
            out[uid] = tokens_to_ids(toks, vocab, f"{path}:{lineno}: ")
    return out


def load_split(corpus_dir, split: str, with_alignment: bool = True) -> Tuple[Dict[str, int], List[Utterance]]:
    root = Path(corpus_dir)
    vocab = read_vocab(root / "vocab.txt")
    inv = {v: k for k, v in vocab.items()}
    sdir = root / split
    trans = read_transcript(sdir / "transcripts.tsv", vocab)
    utts = []
    for uid, ids in trans.items():
        feats = read_features(sdir / "feats" / f"{uid}.csv")
        align = None
        apath = sdir / "align" / f"{uid}.csv"
        if with_alignment and apath.exists():
            align = read_alignment(apath)
        utts.append(Utterance(uid, np.array(ids, dtype=np.int64), feats, align, [inv[i] for i in ids]))
    return vocab, utts
