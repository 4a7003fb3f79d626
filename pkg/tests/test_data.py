import filecmp
import locale

import numpy as np
import pytest

from ssnt_tts.data import (BEGIN, END, PAUSE, CorpusConfig, DataFormatError, UnknownTokenError,
                           gen_corpus, generate, load_split, prototypes, read_alignment,
                           read_features, read_transcript, read_vocab, write_alignment,
                           write_features, write_vocab)


def test_noise_free_single_symbol_gives_identical_frames():
    cfg = CorpusConfig(K=2, D=3, d_min=3, d_max=3, noise_std=0.0, L_min=1, L_max=1,
                       n_train=1, n_val=0, n_test=0, pad_frames=0)
    vocab, splits = generate(cfg)
    u = splits["train"][0]
    assert u.J == 3 and u.I == 1
    np.testing.assert_array_equal(u.features, np.repeat(u.features[:1], 3, axis=0))
    np.testing.assert_array_equal(u.alignment, [1, 1, 1])


def test_vocab_layout_and_pads():
    cfg = CorpusConfig(K=8, pause=True, n_train=3, n_val=0, n_test=0)
    vocab, splits = generate(cfg)
    assert vocab[:3] == [BEGIN, END, PAUSE] and len(vocab) == 11
    protos = prototypes(cfg, vocab)
    np.testing.assert_array_equal(protos[BEGIN], 0.0)
    for u in splits["train"]:
        assert u.tokens[0] == BEGIN and u.tokens[-1] == END
        assert (u.alignment == 1).sum() == cfg.pad_frames


def test_durations_within_bounds():
    cfg = CorpusConfig(K=4, d_min=2, d_max=4, n_train=50, n_val=0, n_test=0)
    _, splits = generate(cfg)
    for u in splits["train"]:
        d = np.bincount(u.alignment)[1:]
        assert d[0] == d[-1] == 2
        assert d[1:-1].min() >= 2 and d[1:-1].max() <= 4


def test_noise_std_statistics():
    cfg = CorpusConfig(K=4, D=8, noise_std=0.1, n_train=1000, n_val=0, n_test=0, pad_frames=0,
                       L_min=5, L_max=8)
    vocab, splits = generate(cfg)
    protos = prototypes(cfg, vocab)
    resid = np.concatenate([u.features - np.stack([protos[u.tokens[i - 1]] for i in u.alignment])
                            for u in splits["train"]])
    assert resid.size >= 100_000
    assert abs(resid.std() - 0.1) / 0.1 < 0.02


def test_same_seed_same_tree(tmp_path):
    cfg = CorpusConfig(K=3, D=2, n_train=4, n_val=2, n_test=2)
    stats = gen_corpus(cfg, tmp_path / "a")
    gen_corpus(cfg, tmp_path / "b")
    cmp = filecmp.dircmp(tmp_path / "a", tmp_path / "b")
    assert not cmp.diff_files and not cmp.left_only and not cmp.right_only
    for sub in ("train", "val", "test"):
        for kind in ("feats", "align"):
            c = filecmp.dircmp(tmp_path / "a" / sub / kind, tmp_path / "b" / sub / kind)
            _, mismatch, errors = filecmp.cmpfiles(tmp_path / "a" / sub / kind, tmp_path / "b" / sub / kind,
                                                   c.common_files, shallow=False)
            assert not mismatch and not errors
    assert stats["utterances"] == 8


def test_load_split_round_trip(tmp_path):
    cfg = CorpusConfig(K=3, D=2, n_train=3, n_val=0, n_test=0)
    vocab, splits = generate(cfg)
    gen_corpus(cfg, tmp_path)
    vmap, utts = load_split(tmp_path, "train")
    assert list(vmap) == vocab
    for a, b in zip(splits["train"], utts):
        np.testing.assert_array_equal(a.symbols, b.symbols)
        np.testing.assert_array_equal(a.features, b.features)
        np.testing.assert_array_equal(a.alignment, b.alignment)


def test_features_io(tmp_path):
    (tmp_path / "one.csv").write_text("0.5\n")
    np.testing.assert_array_equal(read_features(tmp_path / "one.csv"), [[0.5]])
    m = np.random.default_rng(0).normal(size=(20, 8))
    write_features(m, tmp_path / "m.csv")
    np.testing.assert_array_equal(read_features(tmp_path / "m.csv"), m)
    (tmp_path / "bad.csv").write_text("1,2\n3\n")
    with pytest.raises(DataFormatError, match=":2"):
        read_features(tmp_path / "bad.csv")
    (tmp_path / "empty.csv").write_text("")
    with pytest.raises(DataFormatError):
        read_features(tmp_path / "empty.csv")


def test_decimal_point_ignores_locale(tmp_path):
    old = locale.setlocale(locale.LC_NUMERIC)
    for name in ("de_DE.UTF-8", "fr_FR.UTF-8"):
        try:
            locale.setlocale(locale.LC_NUMERIC, name)
            break
        except locale.Error:
            continue
    try:
        write_features([[1.25, -0.5]], tmp_path / "f.csv")
    finally:
        locale.setlocale(locale.LC_NUMERIC, old)
    assert (tmp_path / "f.csv").read_text() == "1.25,-0.5\n"


def test_transcripts(tmp_path):
    vocab = {"a": 1, "b": 2}
    (tmp_path / "t.tsv").write_bytes(b"u1\ta b a\r\nu2\tb\n")
    assert read_transcript(tmp_path / "t.tsv", vocab) == {"u1": [1, 2, 1], "u2": [2]}
    (tmp_path / "e.tsv").write_text("u1\t \n")
    with pytest.raises(DataFormatError, match="no tokens"):
        read_transcript(tmp_path / "e.tsv", vocab)
    (tmp_path / "u.tsv").write_text("u1\ta c\n")
    with pytest.raises(UnknownTokenError, match="'c'"):
        read_transcript(tmp_path / "u.tsv", vocab)
    (tmp_path / "d.tsv").write_text("u1\ta\nu1\tb\n")
    with pytest.raises(DataFormatError, match="duplicate"):
        read_transcript(tmp_path / "d.tsv", vocab)


def test_vocab_and_alignment_io(tmp_path):
    write_vocab(["x", "y"], tmp_path / "v.txt")
    assert read_vocab(tmp_path / "v.txt") == {"x": 1, "y": 2}
    write_alignment([1, 1, 2], tmp_path / "a.csv")
    assert (tmp_path / "a.csv").read_text().splitlines()[0] == "frame,symbol_index"
    np.testing.assert_array_equal(read_alignment(tmp_path / "a.csv"), [1, 1, 2])


def test_config_validation():
    with pytest.raises(ValueError):
        CorpusConfig(K=1)
    with pytest.raises(ValueError):
        CorpusConfig(d_min=3, d_max=2)
