import numpy as np
import pytest

from ssnt_tts.decode import (DecodeConfig, advance_probability, export_alignment,
                             read_alignment_export, synthesize)
from ssnt_tts.model import ModelConfig, init_params
from ssnt_tts.trellis import is_valid_path

TINY = dict(vocab_size=5, embed_dim=4, enc_hidden=4, prenet_dims=(4, 4), dec_hidden=6,
            joint_dim=6, feat_dim=3)


def test_advance_probability_arithmetic():
    assert advance_probability(0.8, 0.2, 0.5) == pytest.approx(0.1 / 0.9, abs=1e-15)
    assert advance_probability(0.5, 0.5, 0.5) == pytest.approx(1 / 3, abs=1e-15)
    assert advance_probability(1.0, 0.0, 0.9) == 0.0
    assert advance_probability(0.3, 0.7, 0.9, at_last=True) == 0.0


def set_emit_bias(params, value):
    params["head.emit.W"].data[...] = 0.0
    params["head.emit.b"].data[...] = value


def test_single_symbol_stops_after_one_group():
    cfg = ModelConfig(**TINY)
    params = init_params(cfg, 0)
    set_emit_bias(params, -5.0)  # p(Shift) ~ 1: leave as soon as allowed
    res = synthesize(cfg, params, [2], DecodeConfig())
    assert res.terminated and res.n_groups == 1
    np.testing.assert_array_equal(res.alignment, [0])
    assert res.y_hat.shape == (1, 3)


def test_never_advancing_model_is_capped_and_unterminated():
    cfg = ModelConfig(**TINY)
    params = init_params(cfg, 0)
    set_emit_bias(params, 30.0)  # p(Emit) ~ 1: never advance
    res = synthesize(cfg, params, [1, 2, 3], DecodeConfig(max_groups=7))
    assert not res.terminated and res.n_groups == 7
    np.testing.assert_array_equal(res.alignment, 0)


def test_greedy_is_deterministic_and_seed_free():
    cfg = ModelConfig(**TINY)
    params = init_params(cfg, 1, scale=0.5)
    a = synthesize(cfg, params, [1, 2, 3, 4], DecodeConfig(seed=1))
    b = synthesize(cfg, params, [1, 2, 3, 4], DecodeConfig(seed=2))
    np.testing.assert_array_equal(a.y_hat, b.y_hat)
    np.testing.assert_array_equal(a.alignment, b.alignment)


def test_sampled_paths_are_monotone_prefixes():
    cfg = ModelConfig(**TINY)
    params = init_params(cfg, 2, scale=0.5)
    x = [1, 2, 3]
    for seed in range(50):
        res = synthesize(cfg, params, x, DecodeConfig(mode="sample", seed=seed))
        z = res.alignment
        assert z[0] == 0 and z.max() <= len(x) - 1
        assert set(np.diff(z)) <= {0, 1}
        if res.terminated:
            assert is_valid_path(z, len(x))


def test_sampled_advance_frequency_matches_probability():
    """Monte-Carlo check of the first advance decision against its probability."""
    cfg = ModelConfig(**TINY)
    params = init_params(cfg, 3, scale=0.5)
    x = [1, 2]
    p = synthesize(cfg, params, x, DecodeConfig(max_groups=2)).advance_prob[1]
    n = 1000
    hits = sum(synthesize(cfg, params, x, DecodeConfig(mode="sample", seed=s), max_groups=2).alignment[1] == 1
               for s in range(n))
    se = np.sqrt(p * (1 - p) / n)
    assert abs(hits / n - p) <= 3 * se


def test_alignment_export_round_trip(tmp_path):
    cfg = ModelConfig(**TINY)
    params = init_params(cfg, 0, scale=0.5)
    res = synthesize(cfg, params, [1, 2, 3], DecodeConfig(mode="sample", seed=4))
    export_alignment(res, tmp_path / "a.csv")
    z, p = read_alignment_export(tmp_path / "a.csv")
    np.testing.assert_array_equal(z, res.alignment)
    np.testing.assert_array_equal(p, res.advance_prob)
    assert (tmp_path / "a.csv").read_text().splitlines()[1].startswith("1,1,")


def test_decode_config_validation():
    with pytest.raises(ValueError):
        DecodeConfig(mode="beam")
    with pytest.raises(ValueError):
        DecodeConfig(max_groups=2).limit(3)
