import math

import numpy as np
import pytest
from scipy import integrate

from ssnt_tts.autodiff import Tape, Tensor, grad_check
from ssnt_tts.model import (ModelConfig, decoder_inputs, decoder_states, emission_logdensity,
                            group_frames, init_params, joint_grid, nll, run_model,
                            transition_log_probs)
from ssnt_tts.nnet import encode, EncoderParams
from ssnt_tts.trellis import TrellisError, brute_force_likelihood

TINY = dict(vocab_size=3, embed_dim=4, n_ff=1, enc_hidden=4, prenet_dims=(4, 4), dec_layers=1,
            dec_hidden=4, joint_dim=4, feat_dim=2, reduction=1)


def zero_heads(params):
    for name, p in params.items():
        if name.startswith(("joint.", "head.")):
            p.data[...] = 0.0


def sig(v):
    return 1.0 / (1.0 + math.exp(-v))


def test_single_group_uses_go_frame_only():
    cfg = ModelConfig(**TINY, )
    y = np.ones((1, 2))
    np.testing.assert_array_equal(decoder_inputs(cfg, y), np.zeros((1, 2)))
    cfg2 = ModelConfig(**{**TINY, "reduction": 2})
    assert group_frames(cfg2, np.ones((2, 2)))[0].shape == (1, 4)


def test_decoder_is_causal():
    cfg = ModelConfig(**TINY)
    params = init_params(cfg, 0)
    y = np.random.default_rng(0).normal(size=(5, 2))
    y2 = y.copy()
    y2[-1] += 10.0
    np.testing.assert_array_equal(decoder_states(cfg, params, y).data, decoder_states(cfg, params, y2).data)


def test_decoder_two_steps_by_hand():
    cfg = ModelConfig(**TINY)
    params = init_params(cfg, 0, scale=0.5)
    y = np.random.default_rng(1).normal(size=(2, 2))
    relu = lambda v: np.maximum(v, 0)
    W0, b0, W1, b1 = (params[k].data for k in ("dec.prenet.0.W", "dec.prenet.0.b", "dec.prenet.1.W", "dec.prenet.1.b"))
    Wx, Wh, b = (params[f"dec.lstm0.{k}"].data for k in ("Wx", "Wh", "b"))
    h, c, rows = np.zeros(4), np.zeros(4), []
    for prev in (np.zeros(2), y[0]):
        p = relu(W1 @ relu(W0 @ prev + b0) + b1)
        z = Wx @ p + Wh @ h + b
        s = 1 / (1 + np.exp(-z))
        c = s[4:8] * c + s[0:4] * np.tanh(z[8:12])
        h = s[12:16] * np.tanh(c)
        rows.append(h)
    np.testing.assert_allclose(decoder_states(cfg, params, y).data, np.array(rows), atol=1e-14)


def test_zero_joint_weights():
    cfg = ModelConfig(**TINY)
    params = init_params(cfg, 0)
    zero_heads(params)
    H_enc = encode(EncoderParams.from_store(params, "enc", 1), [0, 1, 2])
    H_dec = decoder_states(cfg, params, np.ones((6, 2)))
    joint = joint_grid(cfg, params, H_enc, H_dec)
    assert joint.shape == (3, 6)
    np.testing.assert_array_equal(joint.p_emit, 0.5)
    np.testing.assert_array_equal(joint.mean.data, 0.0)
    lep, lsp = transition_log_probs(joint)
    np.testing.assert_allclose(lep.data, -math.log(2), atol=1e-15)
    np.testing.assert_allclose(lsp.data, -math.log(2), atol=1e-15)


def test_joint_cell_scalar_oracle():
    cfg = ModelConfig(**TINY)
    params = init_params(cfg, 0, scale=0.5)
    H_enc = encode(EncoderParams.from_store(params, "enc", 1), [1, 2])
    H_dec = decoder_states(cfg, params, np.random.default_rng(2).normal(size=(2, 2)))
    joint = joint_grid(cfg, params, H_enc, H_dec)
    We, Wd, b = params["joint.enc.W"].data, params["joint.dec.W"].data, params["joint.b"].data
    we, be = params["head.emit.W"].data[0], params["head.emit.b"].data[0]
    Wm, bm = params["head.mu.W"].data, params["head.mu.b"].data
    for i in range(2):
        for j in range(2):
            t = [math.tanh(sum(We[k, n] * H_enc.data[i, n] for n in range(8))
                           + sum(Wd[k, n] * H_dec.data[j, n] for n in range(4)) + b[k]) for k in range(4)]
            assert joint.emit_logit.data[i, j] == pytest.approx(sum(we[k] * t[k] for k in range(4)) + be, abs=1e-14)
            for d in range(2):
                assert joint.mean.data[i, j, d] == pytest.approx(sum(Wm[d, k] * t[k] for k in range(4)) + bm[d], abs=1e-14)


def test_gaussian_constants_and_normalisation():
    assert float(emission_logdensity([0.3], [0.3], 1.0).data) == pytest.approx(-0.5 * math.log(2 * math.pi), abs=1e-12)
    assert float(emission_logdensity([0.0, 0.0], [0.0, 0.0], 1.0).data) == pytest.approx(-math.log(2 * math.pi), abs=1e-12)
    area, _ = integrate.quad(lambda v: math.exp(float(emission_logdensity([v], [0.4], 0.7).data)), -20, 20)
    assert abs(area - 1.0) < 1e-4


def test_complementarity_on_random_logits():
    from ssnt_tts.model import JointCellOutputs
    logits = np.random.default_rng(0).normal(0, 5, size=(4, 9))
    lep, lsp = transition_log_probs(JointCellOutputs(Tensor(logits), Tensor(np.zeros((4, 9, 1)))))
    np.testing.assert_allclose(np.exp(lep.data) + np.exp(lsp.data), 1.0, atol=1e-12)


@pytest.mark.parametrize("terminal, n_half", [(False, 2), (True, 3)])
def test_nll_closed_form_single_symbol(terminal, n_half):
    cfg = ModelConfig(**{**TINY, "terminal_shift": terminal})
    params = init_params(cfg, 0)
    zero_heads(params)
    D = cfg.feat_dim
    loss = float(nll(cfg, params, [1], np.zeros((2, D))).data)
    expect = -(n_half * math.log(0.5) + 2 * (-D / 2 * math.log(2 * math.pi)))
    assert loss == pytest.approx(expect, abs=1e-12)


def test_loss_is_marginal_over_paths():
    cfg = ModelConfig(**{**TINY, "terminal_shift": False})
    params = init_params(cfg, 0, scale=0.5)
    y = np.random.default_rng(0).normal(size=(5, 2))
    out = run_model(cfg, params, [0, 1, 2], y)
    assert -float(out.loss.data) == pytest.approx(brute_force_likelihood(out.grid), abs=1e-10)


def test_finite_loss_and_too_short_targets():
    cfg = ModelConfig(**TINY)
    params = init_params(cfg, 0)
    y = np.random.default_rng(0).normal(size=(5, 2))
    assert math.isfinite(float(nll(cfg, params, [0, 1, 2], y).data))
    with pytest.raises(TrellisError, match="reduction factor"):
        nll(ModelConfig(**{**TINY, "reduction": 2}), init_params(ModelConfig(**{**TINY, "reduction": 2})), [0, 1, 2, 0], y)


def test_ragged_tail_ignores_padded_dims():
    cfg = ModelConfig(**{**TINY, "reduction": 2, "terminal_shift": False})
    params = init_params(cfg, 0, scale=0.5)
    y = np.random.default_rng(0).normal(size=(5, 2))
    groups, mask = group_frames(cfg, y)
    assert groups.shape == (3, 4)
    np.testing.assert_array_equal(mask[-1], [1, 1, 0, 0])
    base = float(nll(cfg, params, [0, 1], y).data)
    params["head.mu.b"].data[2:] += 3.0  # only moves the second frame of each group
    shifted = run_model(cfg, params, [0, 1], y)
    assert float(shifted.loss.data) != base
    le = shifted.grid.log_emit.data[:, -1]
    mu = shifted.joint.mean.data[:, -1, :2]
    ref = [float(emission_logdensity(y[-1], mu[i], 1.0).data) for i in range(2)]
    np.testing.assert_allclose(le, ref, atol=1e-12)


@pytest.mark.parametrize("seed", [0, 1])
def test_tiny_model_gradient_check(seed):
    cfg = ModelConfig(**TINY)
    params = init_params(cfg, seed, scale=1.0)
    y = np.random.default_rng(seed).normal(size=(5, 2))
    assert grad_check(lambda: nll(cfg, params, [0, 1, 2], y), params) <= 1e-4


def test_dropout_makes_training_loss_differ():
    cfg = ModelConfig(**{**TINY, "prenet_dropout": 0.5})
    params = init_params(cfg, 0, scale=0.5)
    y = np.random.default_rng(0).normal(size=(5, 2))
    with Tape(1, record=False):
        train = float(nll(cfg, params, [0, 1], y, training=True).data)
    with Tape(1, record=False):
        evl = float(nll(cfg, params, [0, 1], y, training=False).data)
    assert train != evl


def test_config_validation():
    with pytest.raises(ValueError, match="reduction"):
        ModelConfig(reduction=3)
    with pytest.raises(ValueError, match="variance_mode"):
        ModelConfig(variance_mode="diag")
