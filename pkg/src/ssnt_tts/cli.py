"""``ssnt`` command-line entry point.

Exit codes: 0 success, 1 I/O or corrupt checkpoint, 2 bad config / unknown
token / missing utterance id, 3 self-check failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np

from .autodiff import Tape
from .checkpoint import CheckpointError, load_checkpoint
from .config import ConfigError, load_run_config
from .data import (SPLITS, DataFormatError, UnknownTokenError, gen_corpus, load_split,
                   read_transcript, tokens_to_ids, write_features)
from .decode import DecodeConfig, export_alignment, synthesize
from .metrics import evaluate
from .model import run_model
from .train import train_loop
from .trellis import backward_pass, best_path, posteriors

EXIT_OK, EXIT_IO, EXIT_USAGE, EXIT_CHECK = 0, 1, 2, 3


class UsageError(Exception):
    """Bad user input that is not a config error (e.g. a missing utterance id)."""


def _fmt(v: float) -> str:
    return format(float(v), ".17g")


# -- commands -----------------------------------------------------------------

def cmd_gen_data(args) -> int:
    rc = load_run_config(args.config)
    cc = rc.corpus_config()
    stats = gen_corpus(cc, args.out)
    print(f"utterances: {stats['utterances']}")
    print(f"frames: {stats['frames']}")
    print(f"mean_I: {stats['mean_I']:.4f}")
    print(f"mean_J: {stats['mean_J']:.4f}")
    return EXIT_OK


def _corpus_dims(data_dir) -> tuple:
    vocab, utts = load_split(data_dir, "train", with_alignment=False)
    if not utts:
        raise DataFormatError(f"{data_dir}: empty training split")
    return len(vocab) + 1, utts[0].features.shape[1]


def cmd_train(args) -> int:
    rc = load_run_config(args.config)
    tcfg = rc.train_config()
    vocab_size, feat_dim = _corpus_dims(args.data)
    cfg = rc.model_config(vocab_size, feat_dim)
    path, metrics = train_loop(cfg, tcfg, args.data, args.out, resume=args.resume)
    curve = metrics.train_curve()
    print(f"steps: {len(curve)}")
    if len(curve):
        print(f"final_train_nll: {curve[-1]:.6f}")
    print(f"checkpoint: {path}")
    return EXIT_OK


def _synth_inputs(args, vocab_map: Dict[str, int]) -> Dict[str, List[int]]:
    if args.text is not None:
        toks = args.text.split()
        if not toks:
            raise UsageError("--text is empty")
        return {"text": tokens_to_ids(toks, vocab_map, "--text: ")}
    return read_transcript(args.transcripts, vocab_map)


def cmd_synth(args) -> int:
    ck = load_checkpoint(args.ckpt)
    inputs = _synth_inputs(args, ck.vocab_map)
    dcfg = DecodeConfig(mode=args.mode, seed=args.seed,
                        max_groups_per_symbol=args.max_groups_per_symbol)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    n_term, lengths = 0, []
    for uid, ids in inputs.items():
        res = synthesize(ck.config, ck.params, ids, dcfg)
        write_features(res.y_hat, out / f"{uid}.csv")
        export_alignment(res, out / f"{uid}.align.csv")
        n_term += res.terminated
        lengths.append(res.n_groups)
        if not res.terminated:
            print(f"warning: {uid}: decode did not terminate within {res.n_groups} groups", file=sys.stderr)
    print(f"utterances: {len(inputs)}")
    print(f"terminated: {n_term}")
    print(f"mean_groups: {np.mean(lengths):.4f}")
    return EXIT_OK


def _find_utterances(data_dir, ids: Sequence[str], split: Optional[str]):
    splits = [split] if split else [s for s in SPLITS if (Path(data_dir) / s / "transcripts.tsv").exists()]
    found = {}
    for s in splits:
        _, utts = load_split(data_dir, s, with_alignment=False)
        for u in utts:
            found.setdefault(u.id, u)
    missing = [i for i in ids if i not in found]
    if missing:
        raise UsageError(f"utterance id(s) not found in {data_dir}: {', '.join(missing)}")
    return [found[i] for i in ids]


def write_gamma(gamma: np.ndarray, path) -> None:
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        for row in gamma:
            fh.write(",".join(_fmt(v) for v in row) + "\n")


def write_pgm(gamma: np.ndarray, path) -> None:
    """ASCII P2 image: one row per input position, 255 = largest value."""
    peak = float(gamma.max())
    img = np.rint(255.0 * gamma / peak).astype(int) if peak > 0 else np.zeros(gamma.shape, int)
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write(f"P2\n{img.shape[1]} {img.shape[0]}\n255\n")
        for row in img:
            fh.write(" ".join(str(v) for v in row) + "\n")


def cmd_align(args) -> int:
    ck = load_checkpoint(args.ckpt)
    ids = [i for i in args.ids.split(",") if i]
    if not ids:
        raise UsageError("--ids is empty")
    utts = _find_utterances(args.data, ids, args.split)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for u in utts:
        with Tape(0, record=False):
            res = run_model(ck.config, ck.params, u.symbols, u.features, training=False)
        la = res.log_alpha.data
        gamma = posteriors(la, backward_pass(res.grid), float(la[-1, -1]))
        z, _ = best_path(res.grid)
        write_gamma(gamma, out / f"{u.id}.gamma.csv")
        with open(out / f"{u.id}.path.csv", "w", encoding="ascii", newline="\n") as fh:
            fh.write("group_index,input_position\n")
            for g, i in enumerate(z, 1):
                fh.write(f"{g},{int(i) + 1}\n")
        if args.pgm:
            write_pgm(gamma, out / f"{u.id}.pgm")
        print(f"{u.id}: I={u.I} groups={gamma.shape[1]} log_likelihood={float(la[-1, -1]):.6f}")
    return EXIT_OK


def cmd_check(args) -> int:
    from . import selfcheck
    results = selfcheck.run(args.level)
    for r in results:
        print(r.line())
    return EXIT_OK if all(r.passed for r in results) else EXIT_CHECK


def cmd_eval(args) -> int:
    ck = load_checkpoint(args.ckpt)
    _, utts = load_split(args.data, args.split, with_alignment=True)
    report = evaluate(ck.config, ck.params, utts,
                      DecodeConfig(mode="greedy", max_groups_per_symbol=args.max_groups_per_symbol))
    for line in report.lines():
        print(line)
    return EXIT_OK


# -- parser -------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ssnt", description="Latent monotonic alignment transducer for feature synthesis.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="write the synthetic toy corpus")
    g.add_argument("--config", required=True)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", help="train on a corpus directory")
    t.add_argument("--config", required=True)
    t.add_argument("--data", required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--resume", help="continue from this checkpoint")
    t.set_defaults(func=cmd_train)

    s = sub.add_parser("synth", help="free-running decode")
    s.add_argument("--ckpt", required=True)
    src = s.add_mutually_exclusive_group(required=True)
    src.add_argument("--text", help="space-separated tokens")
    src.add_argument("--transcripts", help="id<TAB>tokens file")
    s.add_argument("--out", required=True)
    s.add_argument("--mode", choices=("greedy", "sample"), default="greedy")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--max-groups-per-symbol", type=int, default=10)
    s.set_defaults(func=cmd_synth)

    a = sub.add_parser("align", help="teacher-forced posteriors and best path")
    a.add_argument("--ckpt", required=True)
    a.add_argument("--data", required=True)
    a.add_argument("--ids", required=True, help="comma-separated utterance ids")
    a.add_argument("--out", required=True)
    a.add_argument("--split", choices=SPLITS, help="restrict the id lookup to one split")
    a.add_argument("--pgm", action="store_true", help="also write a P2 heatmap per utterance")
    a.set_defaults(func=cmd_align)

    c = sub.add_parser("check", help="built-in self tests")
    c.add_argument("--level", choices=("quick", "full"), default="quick")
    c.set_defaults(func=cmd_check)

    e = sub.add_parser("eval", help="NLL, termination and alignment metrics")
    e.add_argument("--ckpt", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--split", choices=SPLITS, default="test")
    e.add_argument("--max-groups-per-symbol", type=int, default=10)
    e.set_defaults(func=cmd_eval)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except (ConfigError, UnknownTokenError, UsageError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except CheckpointError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (OSError, DataFormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
