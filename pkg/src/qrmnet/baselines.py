"""Reference detectors: exhaustive marginalisation and expectation propagation."""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass

import numpy as np

from .detect_qrm import (
    DetectionContext,
    _MIN_NOISE,
    _check_priors,
    floor_posterior,
    prior_penalty,
    posterior_moments,
)
from .numerics import complex_to_real_matrix, complex_to_real_vector, pam_levels

__all__ = [
    "SearchSpaceTooLarge",
    "MAX_ML_STATES",
    "ml_marginals",
    "ml_marginals_raw",
    "EpResult",
    "ep_detect",
]

log = logging.getLogger(__name__)

MAX_ML_STATES = 2 ** 20


class SearchSpaceTooLarge(RuntimeError):
    """Exhaustive enumeration was refused instead of silently subsampled."""


def _enumerate(L, N):
    if L ** N > MAX_ML_STATES:
        raise SearchSpaceTooLarge(f"{L}^{N} hypotheses exceed the limit of {MAX_ML_STATES}")
    return np.array(list(itertools.product(range(L), repeat=N)), dtype=np.int64)


def _marginalise(metric, states, L, penalty):
    """metric (B, S) -> floored marginals (B, N, L) and MAP indices (B, N)."""
    if penalty is not None:
        N = states.shape[1]
        metric = metric + penalty[:, np.arange(N), states].sum(axis=-1)
    rel = metric - metric.min(axis=1, keepdims=True)
    w = np.exp(-rel)
    onehot = (states[:, :, None] == np.arange(L)).astype(float)  # (S, N, L)
    p = np.einsum("bs,snl->bnl", w, onehot)
    return floor_posterior(p), states[np.argmin(metric, axis=1)]


def _chunks(B, states_count, budget=4_000_000):
    step = max(1, budget // max(states_count, 1))
    for lo in range(0, B, step):
        yield slice(lo, min(B, lo + step))


def ml_marginals(ctx: DetectionContext, priors=None):
    """Exact posterior marginals of ``exp(-||r - R x||^2 / sigma_z2) p(x)``.

    Returns ``(posterior (B, N, L), map_indices (B, N))``. Raises
    :class:`SearchSpaceTooLarge` beyond ``MAX_ML_STATES`` hypotheses.
    """
    B, N = ctx.r.shape
    L = len(ctx.alphabet)
    states = _enumerate(L, N)
    X = ctx.alphabet[states]  # (S, N)
    penalty = None if priors is None else prior_penalty(_check_priors(priors, (B, N, L)))
    post = np.empty((B, N, L))
    hard = np.empty((B, N), dtype=np.int64)
    for sl in _chunks(B, len(states) * N):
        resid = ctx.r[sl, None, :] - np.einsum("bij,sj->bsi", ctx.R[sl], X)
        metric = (resid ** 2).sum(-1) / np.maximum(ctx.sigma_z2[sl], _MIN_NOISE)[:, None]
        post[sl], hard[sl] = _marginalise(metric, states, L,
                                          None if penalty is None else penalty[sl])
    return post, hard


def ml_marginals_raw(y, H, sigma_w2, order: int, priors=None):
    """Exact marginals of the unregularised model ``exp(-||y - H x||^2 / sigma_w2)``.

    ``y (B, n_r)`` and ``H (B, n_r, n_t)`` are complex; the enumeration runs
    over the real-valued model.
    """
    y = np.atleast_2d(np.asarray(y, dtype=complex))
    H = np.asarray(H, dtype=complex)
    if H.ndim == 2:
        H = np.broadcast_to(H, (y.shape[0],) + H.shape)
    A = complex_to_real_matrix(H)
    yr = complex_to_real_vector(y)
    alphabet = pam_levels(order)
    B, N = yr.shape[0], A.shape[-1]
    L = len(alphabet)
    states = _enumerate(L, N)
    X = alphabet[states]
    noise = np.maximum(np.broadcast_to(np.asarray(sigma_w2, dtype=float), (B,)), _MIN_NOISE)
    penalty = None if priors is None else prior_penalty(_check_priors(priors, (B, N, L)))
    post = np.empty((B, N, L))
    hard = np.empty((B, N), dtype=np.int64)
    for sl in _chunks(B, len(states) * A.shape[1]):
        resid = yr[sl, None, :] - np.einsum("bij,sj->bsi", A[sl], X)
        metric = (resid ** 2).sum(-1) / noise[sl, None]
        post[sl], hard[sl] = _marginalise(metric, states, L,
                                          None if penalty is None else penalty[sl])
    return post, hard


@dataclass
class EpResult:
    posterior: np.ndarray
    mean: np.ndarray
    var: np.ndarray
    iterations: int
    converged: bool


def ep_detect(y, H, sigma_w2, order: int, priors=None, iterations: int = 10,
              damping: float = 0.9, tol: float = 1e-6, var_floor: float = 1e-9) -> EpResult:
    """Expectation propagation on the real-valued MIMO model.

    Each iteration forms the Gaussian approximation
    ``Sigma = (A^T A / s2 + diag(lam))^-1``, ``mu = Sigma (A^T y / s2 + gam)``,
    removes each node's own site to get the cavity ``N(t_n, h2_n)``, matches
    the moments of ``cavity x discrete prior`` and refreshes the site with
    damping (``damping = 1`` means no damping). Negative site precisions
    keep their previous value.

    ``priors``, if given, is the categorical prior over the PAM alphabet
    per node (uniform otherwise). The returned posterior is the
    cavity-times-prior categorical of the final iteration.
    """
    if not 0.0 < damping <= 1.0:
        raise ValueError("damping must lie in (0, 1]")
    y = np.atleast_2d(np.asarray(y, dtype=complex))
    H = np.asarray(H, dtype=complex)
    if H.ndim == 2:
        H = np.broadcast_to(H, (y.shape[0],) + H.shape)
    A = complex_to_real_matrix(H)
    yr = complex_to_real_vector(y)
    alphabet = pam_levels(order)
    B, N = yr.shape[0], A.shape[-1]
    L = len(alphabet)
    if priors is None:
        prior = np.full((B, N, L), 1.0 / L)
    else:
        prior = np.array(_check_priors(priors, (B, N, L)))
    s2 = np.maximum(np.broadcast_to(np.asarray(sigma_w2, dtype=float), (B,)) / 2.0, _MIN_NOISE)

    AtA = np.swapaxes(A, -1, -2) @ A / s2[:, None, None]
    Aty = np.einsum("bji,bj->bi", A, yr) / s2[:, None]
    m0, v0 = posterior_moments(prior, alphabet)
    v0 = np.maximum(v0, var_floor)
    lam = 1.0 / v0
    gam = m0 / v0
    eye = np.eye(N)
    converged = False
    p = prior
    it = 0
    for it in range(1, iterations + 1):
        Sigma = np.linalg.inv(AtA + lam[:, :, None] * eye)
        mu = np.einsum("bij,bj->bi", Sigma, Aty + gam)
        d = np.diagonal(Sigma, axis1=1, axis2=2)
        denom = np.maximum(1.0 - d * lam, 1e-300)
        # cavity mean from unclamped terms; the floor only widens the cavity
        t = (mu - d * gam) / denom
        h2 = np.maximum(d / denom, var_floor)

        logw = np.log(np.maximum(prior, 1e-300)) - (t[..., None] - alphabet) ** 2 / (2.0 * h2[..., None])
        logw -= logw.max(axis=-1, keepdims=True)
        p = np.exp(logw)
        p /= p.sum(axis=-1, keepdims=True)
        mp, vp = posterior_moments(p, alphabet)
        vp = np.maximum(vp, var_floor)

        lam_new = 1.0 / vp - 1.0 / h2
        gam_new = mp / vp - t / h2
        bad = lam_new <= 0
        lam_new = np.where(bad, lam, lam_new)
        gam_new = np.where(bad, gam, gam_new)
        lam_next = damping * lam_new + (1.0 - damping) * lam
        gam_next = damping * gam_new + (1.0 - damping) * gam
        delta = max(np.max(np.abs(lam_next - lam) / np.maximum(np.abs(lam), 1.0)),
                    np.max(np.abs(gam_next - gam) / np.maximum(np.abs(gam), 1.0)))
        lam, gam = lam_next, gam_next
        if delta < tol:
            converged = True
            break
    if not converged:
        log.debug("EP stopped after %d iterations without converging", it)
    post = floor_posterior(p)
    mean, var = posterior_moments(post, alphabet)
    return EpResult(post, mean, var, it, converged)
