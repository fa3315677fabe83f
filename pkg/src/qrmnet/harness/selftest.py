"""Fast oracle and invariant checks runnable without pytest (``qrmnet selftest``)."""

from __future__ import annotations

import numpy as np

from ..baselines import ep_detect, ml_marginals, ml_marginals_raw
from ..detect_gnn import GnnConfig, GnnNet, qrmnet_detect
from ..detect_qrm import build_context, context_from_real, posterior_moments, qrm_detect
from ..numerics import complex_to_real_matrix, mmse_qrd, pam_levels
from .flops import FlopParams, stage_counts

__all__ = ["CHECKS", "run_selftest", "posterior_ok", "posterior_corpus"]

EPS = 1e-8


def posterior_ok(p) -> bool:
    p = np.asarray(p)
    return bool(np.all(np.abs(p.sum(-1) - 1) <= 1e-12) and np.all(p >= EPS * (1 - 1e-9)))


def _random_system(rng, B, n_t, order, snr_db=15.0):
    H = (rng.standard_normal((B, n_t, n_t)) + 1j * rng.standard_normal((B, n_t, n_t))) / np.sqrt(2)
    al = pam_levels(order)
    lab = rng.integers(0, len(al), (B, 2 * n_t))
    x = al[lab[:, :n_t]] + 1j * al[lab[:, n_t:]]
    s2 = 10 ** (-snr_db / 10)
    w = np.sqrt(s2 / 2) * (rng.standard_normal((B, n_t)) + 1j * rng.standard_normal((B, n_t)))
    return np.einsum("bij,bj->bi", H, x) + w, H, s2, lab


def check_qr_identities(rng):
    """``[A; sigma I] = [Q1; Q2] R`` with orthonormal stacked columns."""
    for n in (2, 3, 5, 8):
        for sigma in (0.0, 0.1, 1.0):
            A = rng.standard_normal((20, n, n))
            Q1, Q2, R = mmse_qrd(A, sigma)
            gram = np.swapaxes(Q1, -1, -2) @ Q1 + np.swapaxes(Q2, -1, -2) @ Q2
            if not (np.allclose(Q1 @ R, A, atol=1e-10)
                    and np.allclose(Q2 @ R, sigma * np.eye(n), atol=1e-10)
                    and np.allclose(gram, np.eye(n), atol=1e-10)):
                return False
    return True


def check_qrm_full_width(rng):
    y, H, s2, _ = _random_system(rng, 50, 2, 4)
    ctx = build_context(y, H, s2, 4)
    return bool(np.max(np.abs(qrm_detect(ctx, K=16) - ml_marginals(ctx)[0])) <= 1e-9)


def check_single_node(rng):
    ctx = context_from_real([[0.9]], [[1.0]], 1.0, [-1.0, 1.0])
    p = qrm_detect(ctx, K=2)[0, 0, 1]
    mean, var = posterior_moments(np.array([1 - p, p]), np.array([-1.0, 1.0]))
    # exact p is 0.973403; the quoted reference values are rounded
    return abs(p - 0.9735) < 2e-4 and abs(mean - 0.9470) < 1e-3 and abs(var - 0.1032) < 1e-3


def posterior_corpus(rng):
    """``(label, posterior)`` pairs from every detector over a spread of cases.

    Covers QPSK and 16QAM, SNRs from -5 to 60 dB, several survivor
    counts, and both an untrained and a randomly perturbed GNN.
    """
    for order in (4, 16):
        n_pam = len(pam_levels(order))
        net = GnnNet(GnnConfig(n_u=4, n_h1=16, n_h2=8, n_h3=16, n_pam=n_pam))
        P0 = net.init(rng)
        P1 = P0.copy()
        for k in P1:
            P1[k] = P1[k] + rng.standard_normal(P1[k].shape)
        for snr in (-5.0, 5.0, 15.0, 30.0, 60.0):
            y, H, s2, _ = _random_system(rng, 40, 2, order, snr)
            ctx = build_context(y, H, s2, order)
            tag = f"{order}qam/{snr:g}dB"
            for K in (1, 4, 16):
                yield f"qrm K={K} {tag}", qrm_detect(ctx, K=K)
            yield f"qrm max-log {tag}", qrm_detect(ctx, K=4, max_log=True)
            yield f"ml {tag}", ml_marginals(ctx)[0]
            yield f"ml-raw {tag}", ml_marginals_raw(y, H, s2, order)[0]
            yield f"ep {tag}", ep_detect(y, H, s2, order).posterior
            yield f"gnn init {tag}", qrmnet_detect(ctx, P0, K=4, T=2, L=2)
            yield f"gnn perturbed {tag}", qrmnet_detect(ctx, P1, K=4, T=2, L=3)


def check_normalisation(rng):
    return all(posterior_ok(p) for _, p in posterior_corpus(rng))


def check_passthrough(rng):
    y, H, s2, _ = _random_system(rng, 30, 2, 16)
    ctx = build_context(y, H, s2, 16)
    net = GnnNet(GnnConfig(n_pam=4))
    return bool(np.array_equal(qrmnet_detect(ctx, net.init(rng), K=8, T=1, passthrough=True),
                               qrm_detect(ctx, K=8)))


def check_flops(rng):
    c = stage_counts(FlopParams())
    return c[("GNN", "V")] == 2 * 32 * 16 and c[("FN", "I")] == 2 * 9 * 1 * 64 * 2


def check_real_model(rng):
    H = rng.standard_normal((3, 3)) + 1j * rng.standard_normal((3, 3))
    x = rng.standard_normal(3) + 1j * rng.standard_normal(3)
    Hr = complex_to_real_matrix(H)
    y = H @ x
    return np.allclose(Hr @ np.concatenate([x.real, x.imag]), np.concatenate([y.real, y.imag]))


CHECKS = {
    "qr_identities": check_qr_identities,
    "real_model": check_real_model,
    "qrm_single_node": check_single_node,
    "qrm_full_width_vs_ml": check_qrm_full_width,
    "posterior_normalisation": check_normalisation,
    "qrmnet_passthrough": check_passthrough,
    "flops_table": check_flops,
}


def run_selftest(seed: int = 0, out=print) -> bool:
    all_ok = True
    for name, fn in CHECKS.items():
        ok = bool(fn(np.random.default_rng(seed)))
        all_ok &= ok
        out(f"{'PASS' if ok else 'FAIL'} {name}")
    return all_ok
