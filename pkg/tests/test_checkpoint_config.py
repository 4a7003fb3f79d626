import struct
import zlib

import numpy as np
import pytest

from ssnt_tts.checkpoint import MAGIC, CheckpointError, load_checkpoint, save_checkpoint
from ssnt_tts.config import ConfigError, parse_run_config_text
from ssnt_tts.data import CorpusConfig, generate
from ssnt_tts.model import ModelConfig, init_params
from ssnt_tts.train import AdamState, TrainConfig, adam_step, evaluate_nll

CFG = dict(vocab_size=6, embed_dim=4, enc_hidden=4, prenet_dims=(4, 4), dec_hidden=5,
           joint_dim=5, feat_dim=3)


def saved(tmp_path, with_adam=False):
    cfg = ModelConfig(**CFG)
    params = init_params(cfg, 0)
    state = None
    if with_adam:
        state = AdamState()
        adam_step(params, {k: np.ones_like(p.data) for k, p in params.items()}, state, TrainConfig())
    path = tmp_path / "c.bin"
    save_checkpoint(path, cfg, params, ["<s>", "</s>", "a", "b", "c"], state)
    return path, cfg, params, state


def test_layout_header(tmp_path):
    path, *_ = saved(tmp_path)
    raw = path.read_bytes()
    assert raw[:8] == MAGIC
    assert struct.unpack("<I", raw[8:12])[0] == 1
    assert struct.unpack("<I", raw[-4:])[0] == zlib.crc32(raw[:-4])


def test_round_trip_is_fixed_point(tmp_path):
    path, cfg, params, state = saved(tmp_path, with_adam=True)
    ck = load_checkpoint(path)
    assert ck.config == cfg
    assert ck.vocab_map == {"<s>": 1, "</s>": 2, "a": 3, "b": 4, "c": 5}
    for name, p in params.items():
        np.testing.assert_array_equal(ck.params[name].data, p.data)
        np.testing.assert_array_equal(ck.adam.m[name], state.m[name])
    assert ck.adam.t == 1
    save_checkpoint(tmp_path / "again.bin", ck.config, ck.params, ck.vocab, ck.adam)
    assert (tmp_path / "again.bin").read_bytes() == path.read_bytes()


def test_validation_nll_survives_reload(tmp_path):
    path, cfg, params, _ = saved(tmp_path)
    _, splits = generate(CorpusConfig(K=3, D=3, n_train=0, n_val=3, n_test=0))
    ck = load_checkpoint(path)
    assert abs(evaluate_nll(cfg, params, splits["val"]) - evaluate_nll(ck.config, ck.params, splits["val"])) <= 1e-12


def test_flipped_byte_fails_crc(tmp_path):
    path, *_ = saved(tmp_path)
    raw = bytearray(path.read_bytes())
    raw[len(raw) // 2] ^= 0x01
    path.write_bytes(bytes(raw))
    with pytest.raises(CheckpointError, match="CRC"):
        load_checkpoint(path)


def _rewrite(path, mutate):
    payload = bytearray(path.read_bytes()[:-4])
    mutate(payload)
    path.write_bytes(bytes(payload) + struct.pack("<I", zlib.crc32(bytes(payload))))


def test_version_gate(tmp_path):
    path, *_ = saved(tmp_path)
    _rewrite(path, lambda p: p.__setitem__(slice(8, 12), struct.pack("<I", 2)))
    with pytest.raises(CheckpointError, match="version 2"):
        load_checkpoint(path)


def test_shape_mismatch_rejected(tmp_path):
    path, *_ = saved(tmp_path)

    def bump_dim(p):  # same byte length, so the block length prefix stays valid
        p[:] = bytes(p).replace(b"dec_hidden=5", b"dec_hidden=6")
    _rewrite(path, bump_dim)
    with pytest.raises(CheckpointError, match="shape|match"):
        load_checkpoint(path)


def test_missing_file(tmp_path):
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "nope.bin")


def test_config_parsing():
    rc = parse_run_config_text("[model]\ndec_hidden = 7\nprenet_dims = 3, 3\n[data]\nK=4\nD=2\n[train]\nlr=0.5\n")
    assert rc.model_config(vocab_size=9, feat_dim=2).prenet_dims == (3, 3)
    assert rc.corpus_config().K == 4
    assert rc.train_config().lr == 0.5


def test_config_errors():
    with pytest.raises(ConfigError, match="'dec_hiden'"):
        parse_run_config_text("[model]\ndec_hiden = 7\n")
    with pytest.raises(ConfigError, match="unknown section"):
        parse_run_config_text("[modle]\n")
    with pytest.raises(ConfigError, match="'K'"):
        parse_run_config_text("[data]\nD=2\n").corpus_config()
    with pytest.raises(ConfigError, match="feat_dim"):
        parse_run_config_text("[model]\nfeat_dim=5\n").model_config(vocab_size=3, feat_dim=2)
    with pytest.raises(ConfigError, match="bad value"):
        parse_run_config_text("[train]\nlr = fast\n")
    with pytest.raises(ConfigError, match="reduction"):
        parse_run_config_text("[model]\nreduction=4\n").model_config()
