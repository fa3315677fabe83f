import itertools

import numpy as np
import pytest

from qrmnet.detect_qrm import (
    POSTERIOR_FLOOR,
    build_context,
    context_from_real,
    floor_posterior,
    posterior_moments,
    qrm_detect,
)
from qrmnet.numerics import pam_levels

# exact value of exp(-0.01) / (exp(-0.01) + exp(-3.61)); commonly quoted as 0.9735
P_SINGLE = 1.0 / (1.0 + np.exp(-3.6))


def brute_force(ctx, priors=None):
    """Independent enumeration oracle, one RE at a time."""
    B, N = ctx.r.shape
    A = ctx.alphabet
    L = len(A)
    out = np.zeros((B, N, L))
    for b in range(B):
        for states in itertools.product(range(L), repeat=N):
            x = A[list(states)]
            m = np.sum((ctx.r[b] - ctx.R[b] @ x) ** 2) / ctx.sigma_z2[b]
            w = np.exp(-m)
            if priors is not None:
                w *= np.prod([priors[b, n, s] for n, s in enumerate(states)])
            for n, s in enumerate(states):
                out[b, n, s] += w
    return floor_posterior(out)


def random_batch(rng, B, order, snr_db, n_t=2):
    H = (rng.standard_normal((B, n_t, n_t)) + 1j * rng.standard_normal((B, n_t, n_t))) / np.sqrt(2)
    pam = pam_levels(order)
    L = len(pam)
    idx = rng.integers(0, L, (B, 2 * n_t))
    x = pam[idx[:, :n_t]] + 1j * pam[idx[:, n_t:]]
    s2 = 10 ** (-snr_db / 10)
    w = np.sqrt(s2 / 2) * (rng.standard_normal((B, n_t)) + 1j * rng.standard_normal((B, n_t)))
    y = np.einsum("bij,bj->bi", H, x) + w
    return y, H, s2, idx


def single_node_ctx():
    return context_from_real([[0.9]], [[1.0]], 1.0, [-1.0, 1.0])


def test_single_node_example():
    p = qrm_detect(single_node_ctx(), K=2)[0, 0]
    assert p[1] == pytest.approx(P_SINGLE, abs=1e-7)
    assert p[1] == pytest.approx(0.9735, abs=2e-4)


def test_single_node_moments():
    mean, var = posterior_moments(qrm_detect(single_node_ctx(), K=2), [-1.0, 1.0])
    assert mean[0, 0] == pytest.approx(2 * P_SINGLE - 1, abs=1e-7)
    assert var[0, 0] == pytest.approx(1 - (2 * P_SINGLE - 1) ** 2, abs=1e-6)
    # rounded reference values
    assert mean[0, 0] == pytest.approx(0.9470, abs=1e-3)
    assert var[0, 0] == pytest.approx(0.1032, abs=1e-3)


def test_moments_trivial_cases():
    m, v = posterior_moments([[0.5, 0.5]], [-1.0, 1.0])
    assert m[0] == 0.0 and v[0] == 1.0
    m, v = posterior_moments([[0.0, 0.0, 1.0, 0.0]], pam_levels(16))
    assert m[0] == pam_levels(16)[2] and v[0] == 0.0


@pytest.mark.parametrize("order", [4, 16])
def test_full_width_matches_enumeration(order):
    rng = np.random.default_rng(order)
    y, H, s2, _ = random_batch(rng, 12 if order == 16 else 40, order, 10.0)
    ctx = build_context(y, H, s2, order)
    K = len(ctx.alphabet) ** ctx.n_nodes
    assert np.max(np.abs(qrm_detect(ctx, K=K) - brute_force(ctx))) < 1e-9


def test_full_width_with_priors_matches_enumeration():
    rng = np.random.default_rng(3)
    y, H, s2, _ = random_batch(rng, 20, 4, 5.0)
    ctx = build_context(y, H, s2, 4)
    pri = rng.dirichlet(np.ones(2), size=(20, 4))
    assert np.max(np.abs(qrm_detect(ctx, pri, K=16) - brute_force(ctx, pri))) < 1e-9


def test_degenerate_prior_concentrates():
    rng = np.random.default_rng(4)
    y, H, s2, _ = random_batch(rng, 30, 16, 10.0)
    ctx = build_context(y, H, s2, 16)
    pri = np.full((30, 4, 4), 0.25)
    pri[:, 1] = [0.0, 0.0, 1.0, 0.0]
    post = qrm_detect(ctx, pri, K=16)
    assert np.all(post[:, 1, 2] >= 1 - 4 * POSTERIOR_FLOOR)


def test_uniform_prior_invariance():
    rng = np.random.default_rng(5)
    y, H, s2, _ = random_batch(rng, 50, 16, 12.0)
    ctx = build_context(y, H, s2, 16)
    assert np.array_equal(qrm_detect(ctx, np.full((50, 4, 4), 0.25), K=4), qrm_detect(ctx, K=4))


@pytest.mark.parametrize("K", [1, 3, 16])
def test_rows_normalised_and_floored(K):
    rng = np.random.default_rng(6)
    y, H, s2, _ = random_batch(rng, 100, 16, 30.0)
    post = qrm_detect(build_context(y, H, s2, 16), K=K)
    assert np.max(np.abs(post.sum(-1) - 1)) < 1e-12
    assert post.min() >= POSTERIOR_FLOOR * (1 - 1e-12)


def test_max_log_full_width_hard_decisions_equal_sum():
    rng = np.random.default_rng(7)
    y, H, s2, _ = random_batch(rng, 200, 16, 25.0)
    ctx = build_context(y, H, s2, 16)
    a = qrm_detect(ctx, K=256).argmax(-1)
    b = qrm_detect(ctx, K=256, max_log=True).argmax(-1)
    assert np.mean(a == b) > 0.99


def test_invalid_arguments():
    ctx = single_node_ctx()
    with pytest.raises(ValueError):
        qrm_detect(ctx, K=0)
    with pytest.raises(ValueError):
        qrm_detect(ctx, [[[0.7, 0.7]]])


def test_context_identity_noiseless():
    x = np.array([0.3 - 0.1j, -0.7 + 0.9j])
    ctx = build_context(x, np.eye(2), 0.0, 16)
    xr = np.array([0.3, -0.7, -0.1, 0.9])
    assert np.allclose(ctx.r[0], xr) and np.allclose(ctx.R[0], np.eye(4))
    assert np.allclose(ctx.c[0], xr) and np.allclose(ctx.G[0], np.eye(4))


def test_context_definitions():
    rng = np.random.default_rng(8)
    H = (rng.standard_normal((5, 4, 4)) + 1j * rng.standard_normal((5, 4, 4))) / np.sqrt(2)
    y = rng.standard_normal((5, 4)) + 1j * rng.standard_normal((5, 4))
    ctx = build_context(y, H, 0.2, 16)
    for b in range(5):
        assert np.allclose(ctx.G[b], ctx.R[b].T @ ctx.R[b], atol=1e-12, rtol=0)
        assert np.allclose(ctx.c[b], ctx.R[b].T @ ctx.r[b], atol=1e-12, rtol=0)
        assert np.allclose(np.tril(ctx.R[b], -1), 0)
    assert np.all(ctx.sigma_z2 == 0.2)


def test_per_re_noise_levels():
    rng = np.random.default_rng(9)
    y, H, _, _ = random_batch(rng, 6, 4, 10.0)
    s2 = np.linspace(0.05, 0.5, 6)
    ctx = build_context(y, H, s2, 4)
    for b in range(6):
        one = build_context(y[b], H[b], s2[b], 4)
        assert np.allclose(one.R[0], ctx.R[b]) and np.allclose(one.r[0], ctx.r[b])


def symbol_error_rate(post, idx):
    """Complex-symbol error rate: an error if either real coordinate is wrong."""
    n_t = idx.shape[1] // 2
    wrong = post.argmax(-1) != idx
    return float(np.mean(wrong[:, :n_t] | wrong[:, n_t:]))


def test_ser_monotone_in_K():
    rng = np.random.default_rng(10)
    y, H, s2, idx = random_batch(rng, 10_000, 16, 20.0)
    ctx = build_context(y, H, s2, 16)
    ser = [symbol_error_rate(qrm_detect(ctx, K=K), idx) for K in (1, 4, 16, 256)]
    assert all(a >= b for a, b in zip(ser, ser[1:])), ser
