import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.special import logsumexp

from ssnt_tts.autodiff import Tape, backward
from ssnt_tts.trellis import (TrellisError, TrellisGrid, backward_pass, best_path,
                              brute_force_likelihood, enumerate_paths, forward_backward,
                              forward_pass, is_valid_path, path_log_weight, random_grid)


def const_grid(I, J, q, le=0.0):
    return TrellisGrid(np.full((I, J), le), np.full((I, J), math.log(q)), np.full((I, J), math.log(1 - q)))


def enum_gamma(grid):
    """Posterior occupation by summing path weights through each cell."""
    paths = list(enumerate_paths(grid.I, grid.J))
    w = np.array([path_log_weight(grid, z) for z in paths])
    total = logsumexp(w)
    gamma = np.zeros((grid.I, grid.J))
    for z, lw in zip(paths, w):
        gamma[z, np.arange(grid.J)] += math.exp(lw - total)
    return gamma


def test_single_row_likelihood_is_three_log_q():
    _, ll = forward_pass(const_grid(1, 3, 0.3))
    assert float(ll.data) == pytest.approx(3 * math.log(0.3), abs=1e-12)


def test_square_grid_has_one_diagonal_path(rng):
    g = random_grid(4, 4, rng)
    assert len(list(enumerate_paths(4, 4))) == 1
    _, ll = forward_pass(g)
    assert float(ll.data) == pytest.approx(path_log_weight(g, np.arange(4)), abs=1e-12)
    np.testing.assert_allclose(forward_backward(g).gamma, np.eye(4), atol=1e-12)
    z, _ = best_path(g)
    np.testing.assert_array_equal(z, np.arange(4))


def test_two_by_three_matches_enumeration():
    g = random_grid(2, 3, np.random.default_rng(0))
    assert len(list(enumerate_paths(2, 3))) == 2
    assert float(forward_pass(g)[1].data) == pytest.approx(brute_force_likelihood(g), abs=1e-12)


def test_path_counts():
    assert len(list(enumerate_paths(1, 6))) == 1
    assert len(list(enumerate_paths(4, 7))) == 20
    for z in enumerate_paths(4, 7):
        assert is_valid_path(z, 4)


def test_four_by_seven_agrees_with_forward(rng):
    g = random_grid(4, 7, rng)
    assert abs(float(forward_pass(g)[1].data) - brute_force_likelihood(g)) <= 1e-9


def test_path_weight_by_hand():
    # I=2, J=3, p(Emit)=0.8: path [0,0,1] = 0.8 (init) * 0.8 (stay) * 0.2*0.8 (advance)
    g = const_grid(2, 3, 0.8)
    assert path_log_weight(g, [0, 0, 1]) == pytest.approx(math.log(0.8 * 0.8 * 0.16), abs=1e-12)


def test_beta_terminal_and_single_row(rng):
    g = random_grid(3, 6, rng)
    assert backward_pass(g)[2, 5] == 0.0
    q = 0.7
    le = rng.normal(size=(1, 5))
    g1 = TrellisGrid(le, np.full((1, 5), math.log(q)), np.full((1, 5), math.log(1 - q)))
    beta = backward_pass(g1)
    for j in range(5):
        expect = sum(math.log(q) + le[0, k] for k in range(j + 1, 5))
        assert beta[0, j] == pytest.approx(expect, abs=1e-12)


def test_single_row_gamma_is_ones(rng):
    np.testing.assert_allclose(forward_backward(random_grid(1, 5, rng)).gamma, 1.0, atol=1e-12)


def test_gamma_matches_enumeration():
    g = random_grid(3, 5, np.random.default_rng(0))
    np.testing.assert_allclose(forward_backward(g).gamma, enum_gamma(g), atol=1e-10)


def test_best_path_matches_enumeration_argmax():
    g = random_grid(3, 5, np.random.default_rng(0))
    paths = list(enumerate_paths(3, 5))
    w = [path_log_weight(g, z) for z in paths]
    z, lw = best_path(g)
    np.testing.assert_array_equal(z, paths[int(np.argmax(w))])
    assert lw == pytest.approx(max(w), abs=1e-12)


def test_best_path_single_row():
    z, _ = best_path(const_grid(1, 4, 0.5))
    np.testing.assert_array_equal(z, np.zeros(4))


def test_too_few_frames_raises():
    with pytest.raises(TrellisError, match="no monotonic path"):
        forward_pass(const_grid(3, 2, 0.5))
    with pytest.raises(TrellisError):
        backward_pass(const_grid(3, 2, 0.5))


def test_mismatched_shapes_rejected():
    with pytest.raises(TrellisError):
        TrellisGrid(np.zeros((2, 3)), np.zeros((2, 3)), np.zeros((3, 2)))


def test_grad_of_loglik_is_posterior(rng):
    g = random_grid(4, 9, rng)
    g.log_emit.requires_grad = True
    g.log_emit.name = "le"
    with Tape() as tape:
        la, ll = forward_pass(g)
        grads = backward(ll, tape=tape)
    np.testing.assert_allclose(grads["le"], enum_gamma(g), atol=1e-10)


def test_neg_inf_cell_stays_finite():
    g = random_grid(2, 4, np.random.default_rng(3))
    g.log_emit.data[1, 1] = -np.inf
    g.log_emit.requires_grad = True
    g.log_emit.name = "le"
    with Tape() as tape:
        _, ll = forward_pass(g)
        grads = backward(ll, tape=tape)
    assert np.isfinite(grads["le"]).all()
    assert grads["le"][1, 1] == 0.0


@settings(max_examples=40, deadline=None)
@given(I=st.integers(1, 5), extra=st.integers(0, 5), seed=st.integers(0, 10_000))
def test_identity_and_normalisation(I, extra, seed):
    g = random_grid(I, I + extra, np.random.default_rng(seed))
    fb = forward_backward(g)
    per_col = logsumexp(fb.log_alpha + fb.log_beta, axis=0)
    np.testing.assert_allclose(per_col, fb.log_likelihood, atol=1e-9)
    np.testing.assert_allclose(fb.gamma.sum(axis=0), 1.0, atol=1e-10)
    assert abs(fb.log_likelihood - brute_force_likelihood(g)) <= 1e-9
