"""QRM detection: breadth-first M-algorithm over the MMSE-QRD tree.

Everything here works on the real-valued model and is batched over a
leading RE axis. A detection context for ``B`` REs and ``N = 2 n_t`` real
nodes holds ``r (B, N)``, ``R (B, N, N)``, ``G = R^T R``, ``c = R^T r`` and
the noise power ``sigma_z2 (B,)`` that scales the Euclidean metric.
Posteriors are ``(B, N, n_pam)`` arrays over the ascending PAM alphabet.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .numerics import (
    complex_to_real_matrix,
    complex_to_real_vector,
    mmse_qrd,
    pam_levels,
)

__all__ = [
    "POSTERIOR_FLOOR",
    "DetectionContext",
    "build_context",
    "context_from_real",
    "floor_posterior",
    "prior_penalty",
    "qrm_detect",
    "posterior_moments",
]

POSTERIOR_FLOOR = 1e-8
_MIN_NOISE = 1e-30


@dataclass(frozen=True)
class DetectionContext:
    r: np.ndarray
    R: np.ndarray
    G: np.ndarray
    c: np.ndarray
    sigma_z2: np.ndarray
    alphabet: np.ndarray

    @property
    def n_nodes(self) -> int:
        return self.r.shape[-1]

    @property
    def batch(self) -> int:
        return self.r.shape[0]

    def take(self, index) -> "DetectionContext":
        """Sub-batch of REs."""
        return DetectionContext(self.r[index], self.R[index], self.G[index],
                                self.c[index], self.sigma_z2[index], self.alphabet)


def context_from_real(r, R, sigma_z2, alphabet) -> DetectionContext:
    r = np.atleast_2d(np.asarray(r, dtype=float))
    R = np.asarray(R, dtype=float)
    if R.ndim == 2:
        R = np.broadcast_to(R, (r.shape[0],) + R.shape)
    sigma_z2 = np.broadcast_to(np.asarray(sigma_z2, dtype=float), (r.shape[0],)).copy()
    G = np.swapaxes(R, -1, -2) @ R
    c = np.einsum("bji,bj->bi", R, r)
    return DetectionContext(r, R, G, c, sigma_z2, np.asarray(alphabet, dtype=float))


def build_context(y, H_hat, sigma_w2, order: int, sigma_x2: float = 1.0) -> DetectionContext:
    """Detection context of a batch of REs from the complex system.

    Parameters
    ----------
    y : (B, n_r) or (n_r,) complex received vectors
    H_hat : (B, n_r, n_t) or (n_r, n_t) complex channel estimates
    sigma_w2 : float or (B,) complex noise variance E|w|^2
    order : QAM order
    sigma_x2 : complex symbol energy

    The MMSE-QRD of the stacked real channel uses ``sigma = sigma_w / sigma_x``.
    The returned ``sigma_z2`` equals ``sigma_w2``, the complex-domain noise
    power, so that ``exp(-||r - R x||^2 / sigma_z2)`` is the Gaussian
    likelihood of the real model (per-dimension variance ``sigma_w2 / 2``).
    """
    y = np.asarray(y, dtype=complex)
    H_hat = np.asarray(H_hat, dtype=complex)
    if y.ndim == 1:
        y = y[None]
    if H_hat.ndim == 2:
        H_hat = np.broadcast_to(H_hat, (y.shape[0],) + H_hat.shape)
    sigma_w2 = np.broadcast_to(np.asarray(sigma_w2, dtype=float), (y.shape[0],))
    alphabet = pam_levels(order)
    H_re = complex_to_real_matrix(H_hat)
    y_re = complex_to_real_vector(y)
    sig = np.sqrt(sigma_w2 / sigma_x2)
    if np.all(sig == sig[0]):
        Q1, _, R = mmse_qrd(H_re, float(sig[0]))
    else:
        parts = [mmse_qrd(H_re[i], float(sig[i])) for i in range(len(sig))]
        Q1 = np.stack([p[0] for p in parts])
        R = np.stack([p[2] for p in parts])
    r = np.einsum("bji,bj->bi", Q1, y_re)
    return context_from_real(r, R, sigma_w2, alphabet)


def floor_posterior(p, eps: float = POSTERIOR_FLOOR):
    """Normalise rows and mix in ``eps`` so every entry is at least ``eps``."""
    p = np.asarray(p, dtype=float)
    total = p.sum(axis=-1, keepdims=True)
    n = p.shape[-1]
    return eps + (1.0 - n * eps) * (p / total)


def prior_penalty(priors):
    """``-log p(x_n)`` shifted per node so the most likely symbol costs 0.

    The shift is constant per node and does not change any posterior; it
    makes uniform priors contribute exactly zero.
    """
    logp = np.log(np.maximum(np.asarray(priors, dtype=float), 1e-300))
    return logp.max(axis=-1, keepdims=True) - logp


def _check_priors(priors, shape):
    priors = np.asarray(priors, dtype=float)
    priors = np.broadcast_to(priors, shape)
    if np.any(priors < 0) or not np.allclose(priors.sum(axis=-1), 1.0, atol=1e-6):
        raise ValueError("priors must be nonnegative rows summing to one")
    return priors


def qrm_detect(ctx: DetectionContext, priors=None, K: int = 16, max_log: bool = False):
    """Soft-output M-algorithm.

    Nodes are decided from the last row of ``R`` upwards. At each level
    every survivor is extended by every PAM level and scored with
    ``(r_n - sum_j R_nj x_j)^2 / sigma_z2 - log p(x_n)``; the ``K`` best
    partial paths survive (ties broken by the path's symbol sequence).
    Marginals are sums of ``exp(-metric)`` over the final survivors, or
    the best survivor metric per symbol when ``max_log`` is set.

    Returns a ``(B, N, n_pam)`` posterior with entries at least
    ``POSTERIOR_FLOOR``.
    """
    if K < 1:
        raise ValueError("K must be at least 1")
    B, N = ctx.r.shape
    alphabet = ctx.alphabet
    L = len(alphabet)
    penalty = None
    if priors is not None:
        penalty = prior_penalty(_check_priors(priors, (B, N, L)))
    inv_noise = 1.0 / np.maximum(ctx.sigma_z2, _MIN_NOISE)

    idx = np.zeros((B, 1, N), dtype=np.int64)
    metric = np.zeros((B, 1))
    code = np.zeros((B, 1), dtype=np.int64)
    rows = np.arange(B)[:, None]
    for n in range(N - 1, -1, -1):
        P = idx.shape[1]
        tail = alphabet[idx[:, :, n + 1:]]  # (B, P, N-n-1)
        interf = np.einsum("bpj,bj->bp", tail, ctx.R[:, n, n + 1:])
        resid = (ctx.r[:, n, None, None] - interf[:, :, None]
                 - ctx.R[:, n, n, None, None] * alphabet[None, None, :])
        branch = resid ** 2 * inv_noise[:, None, None]
        if penalty is not None:
            branch = branch + penalty[:, n, None, :]
        cand = (metric[:, :, None] + branch).reshape(B, P * L)
        cand_code = (code[:, :, None] * L + np.arange(L)).reshape(B, P * L)
        keep = min(K, P * L)
        order = np.lexsort((cand_code, cand), axis=-1)[:, :keep]
        parent = order // L
        symbol = order % L
        idx = idx[rows, parent]
        idx[:, :, n] = symbol
        metric = cand[rows, order]
        code = cand_code[rows, order]

    return _marginals_from_paths(idx, metric, L, max_log)


def _marginals_from_paths(idx, metric, L, max_log=False):
    """Per-node symbol marginals from weighted paths ``idx (B, P, N)``."""
    B, P, N = idx.shape
    onehot = idx[..., None] == np.arange(L)  # (B, P, N, L)
    rel = metric - metric.min(axis=1, keepdims=True)
    if max_log:
        big = np.where(onehot, rel[:, :, None, None], np.inf).min(axis=1)
        p = np.exp(-big)
    else:
        w = np.exp(-rel)
        p = np.einsum("bp,bpnl->bnl", w, onehot.astype(float))
    return floor_posterior(p)


def posterior_moments(posterior, alphabet):
    """Mean and variance of each node's categorical posterior."""
    posterior = np.asarray(posterior, dtype=float)
    alphabet = np.asarray(alphabet, dtype=float)
    mean = posterior @ alphabet
    var = posterior @ (alphabet ** 2) - mean ** 2
    return mean, np.maximum(var, 0.0)
