"""Matrix helpers shared by every detector: MMSE-QRD and the real-valued model.

The real-valued equivalent of ``y = H x + w`` stacks real parts on top of
imaginary parts::

    H_re = [[Re H, -Im H],
            [Im H,  Re H]],   y_re = [Re y; Im y],   x_re = [Re x; Im x]

so that an M-QAM symbol becomes two sqrt(M)-PAM coordinates.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "SingularChannelError",
    "UnsupportedConstellationError",
    "RealModel",
    "pam_levels",
    "complex_to_real_matrix",
    "complex_to_real_vector",
    "real_to_complex_vector",
    "mmse_qrd",
    "to_real_model",
    "transform_received",
]


class SingularChannelError(np.linalg.LinAlgError):
    """Raised when an un-regularised QRD meets a rank-deficient channel."""


class UnsupportedConstellationError(ValueError):
    """Raised for QAM orders that are not a perfect square power of two."""


def pam_levels(order: int) -> np.ndarray:
    """Per-dimension PAM alphabet of a unit-energy square ``order``-QAM.

    Levels are sorted ascending. Each real dimension carries half the
    symbol energy, so ``mean(levels**2) == 0.5``.
    """
    order = int(order)
    side = int(round(np.sqrt(order)))
    if order < 4 or side * side != order or side & (side - 1):
        raise UnsupportedConstellationError(f"{order}-QAM is not a square QAM")
    levels = np.arange(-(side - 1), side, 2, dtype=float)
    return levels / np.sqrt(2.0 * (order - 1) / 3.0)


def complex_to_real_matrix(H):
    H = np.asarray(H)
    top = np.concatenate([H.real, -H.imag], axis=-1)
    bottom = np.concatenate([H.imag, H.real], axis=-1)
    return np.concatenate([top, bottom], axis=-2).astype(float)


def complex_to_real_vector(v):
    v = np.asarray(v)
    return np.concatenate([v.real, v.imag], axis=-1).astype(float)


def real_to_complex_vector(v):
    v = np.asarray(v, dtype=float)
    half = v.shape[-1] // 2
    return v[..., :half] + 1j * v[..., half:]


@dataclass(frozen=True)
class RealModel:
    """Stacked real system ``y_re = H_re x_re + w_re``.

    ``sigma_w2`` is the noise variance per real dimension (half of the
    complex noise variance).
    """

    H_re: np.ndarray
    y_re: np.ndarray
    alphabet: np.ndarray
    sigma_w2: float = 0.0

    @property
    def n_nodes(self) -> int:
        return self.H_re.shape[1]


def mmse_qrd(H, sigma: float = 0.0, tol: float = 1e-12):
    """QR decomposition of the noise-augmented channel ``[H; sigma*I]``.

    Parameters
    ----------
    H : (..., n_r, n_t) array, real or complex; leading axes are a batch
    sigma : float
        Ratio sigma_w / sigma_x. ``sigma = 0`` gives the plain (ZF) QRD.

    Returns
    -------
    Q1 : (..., n_r, n_t) array
    Q2 : (..., n_t, n_t) array
    R : (..., n_t, n_t) upper-triangular array with positive real diagonal

    The decomposition satisfies ``Q1^H Q1 + Q2^H Q2 = I``, ``H = Q1 R`` and
    ``Q2 = sigma * R^{-1}``.
    """
    H = np.asarray(H)
    if H.ndim < 2:
        raise ValueError(f"channel must be a matrix, got shape {H.shape}")
    if sigma < 0:
        raise ValueError("sigma must be nonnegative")
    n_r, n_t = H.shape[-2:]
    dtype = complex if np.iscomplexobj(H) else float
    eye = np.broadcast_to(sigma * np.eye(n_t, dtype=dtype), H.shape[:-2] + (n_t, n_t))
    H_aug = np.concatenate([H.astype(dtype), eye], axis=-2)
    # LAPACK geqrf (Householder); only the signs are normalised here
    Q, R = np.linalg.qr(H_aug, mode="reduced")
    d = np.diagonal(R, axis1=-2, axis2=-1)
    mag = np.abs(d)
    if np.any(mag.min(axis=-1) <= tol * np.maximum(mag.max(axis=-1), 1.0)):
        raise SingularChannelError("channel is rank deficient and sigma = 0")
    phase = d / mag
    Q = Q * phase[..., np.newaxis, :]
    R = np.triu(np.conj(phase)[..., :, np.newaxis] * R)
    if dtype is complex:
        idx = np.arange(n_t)
        R[..., idx, idx] = R[..., idx, idx].real
    return Q[..., :n_r, :], Q[..., n_r:, :], R


def to_real_model(y, H, order: int, sigma_w2: float = 0.0) -> RealModel:
    """Real-valued equivalent of the complex system for square ``order``-QAM.

    ``sigma_w2`` is the complex noise variance E|w|^2; the returned model
    stores the per-dimension value ``sigma_w2 / 2``.
    """
    alphabet = pam_levels(order)
    H = np.atleast_2d(np.asarray(H, dtype=complex))
    y = np.asarray(y, dtype=complex).reshape(-1)
    if y.shape[0] != H.shape[0]:
        raise ValueError(f"y has {y.shape[0]} entries but H has {H.shape[0]} rows")
    return RealModel(
        H_re=complex_to_real_matrix(H),
        y_re=complex_to_real_vector(y),
        alphabet=alphabet,
        sigma_w2=0.5 * float(sigma_w2),
    )


def transform_received(y, Q1):
    """``r = Q1^H y``; both arguments may carry matching leading batch axes."""
    y = np.asarray(y)
    Q1 = np.asarray(Q1)
    if y.shape[-1] != Q1.shape[-2]:
        raise ValueError(f"y length {y.shape[-1]} does not match Q1 rows {Q1.shape[-2]}")
    return np.einsum("...ji,...j->...i", np.conj(Q1), y)
