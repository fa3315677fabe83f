"""Kronecker-correlated Rayleigh block-fading MIMO channel and AWGN."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "ChannelProfile",
    "exp_correlation",
    "draw_channel",
    "frequency_correlation",
    "noise_variance",
    "apply_awgn",
]


@dataclass(frozen=True)
class ChannelProfile:
    """Tapped-delay-line profile with scalar spatial correlation.

    Taps sit ``tap_spacing`` samples apart on an ``fft_size``-point OFDM
    raster and decay by ``decay_db`` per tap. ``alpha`` and ``beta`` are the
    adjacent-antenna correlation coefficients at the transmitter and the
    receiver.
    """

    n_taps: int = 4
    decay_db: float = 3.0
    tap_spacing: int = 1
    fft_size: int = 64
    alpha: float = 0.3
    beta: float = 0.3

    def __post_init__(self):
        if self.n_taps < 1:
            raise ValueError("n_taps must be positive")
        for name in ("alpha", "beta"):
            rho = getattr(self, name)
            if not 0.0 <= rho < 1.0:
                raise ValueError(f"{name} must lie in [0, 1), got {rho}")

    @property
    def pdp(self) -> np.ndarray:
        p = 10.0 ** (-self.decay_db * np.arange(self.n_taps) / 10.0)
        return p / p.sum()

    @property
    def delays(self) -> np.ndarray:
        return self.tap_spacing * np.arange(self.n_taps)


def exp_correlation(n: int, rho: float) -> np.ndarray:
    idx = np.arange(n)
    return rho ** np.abs(idx[:, None] - idx[None, :])


def _tap_to_subcarrier(profile: ChannelProfile, n_subcarriers: int) -> np.ndarray:
    k = np.arange(n_subcarriers)
    return np.exp(-2j * np.pi * np.outer(k, profile.delays) / profile.fft_size)


def frequency_correlation(profile: ChannelProfile, n_subcarriers: int) -> np.ndarray:
    """E[H_k H_k'^*] of one link across subcarriers, analytic from the PDP."""
    F = _tap_to_subcarrier(profile, n_subcarriers)
    return (F * profile.pdp) @ F.conj().T


def draw_channel(profile: ChannelProfile, n_symbols: int, n_subcarriers: int,
                 n_rx: int, n_tx: int, rng: np.random.Generator) -> np.ndarray:
    """One block-static channel realisation.

    Returns an array of shape ``(n_symbols, n_subcarriers, n_rx, n_tx)``;
    every OFDM symbol of the TTI sees the same frequency response.
    """
    L_rx = np.linalg.cholesky(exp_correlation(n_rx, profile.beta))
    L_tx = np.linalg.cholesky(exp_correlation(n_tx, profile.alpha))
    shape = (profile.n_taps, n_rx, n_tx)
    W = (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2.0)
    W *= np.sqrt(profile.pdp)[:, None, None]
    taps = L_rx @ W @ L_tx.T
    F = _tap_to_subcarrier(profile, n_subcarriers)
    H = np.einsum("kl,lrt->krt", F, taps)
    return np.broadcast_to(H, (n_symbols,) + H.shape).copy()


def noise_variance(snr_db: float) -> float:
    """Complex noise variance for unit-energy symbols at ``snr_db``."""
    if np.isinf(snr_db) and snr_db > 0:
        return 0.0
    return float(10.0 ** (-snr_db / 10.0))


def apply_awgn(tx_grid, channel, snr_db: float, rng: np.random.Generator):
    """``y = H x + w`` on every RE.

    Parameters
    ----------
    tx_grid : (..., n_symbols, n_subcarriers, n_tx) complex
    channel : (..., n_symbols, n_subcarriers, n_rx, n_tx) complex
    snr_db : float
        Symbol energy over complex noise variance; ``inf`` disables noise.

    Returns
    -------
    y : (..., n_symbols, n_subcarriers, n_rx) complex
    sigma_w2 : float
    """
    sigma_w2 = noise_variance(snr_db)
    y = np.einsum("...rt,...t->...r", channel, tx_grid)
    if sigma_w2 > 0:
        w = rng.standard_normal(y.shape) + 1j * rng.standard_normal(y.shape)
        y = y + np.sqrt(sigma_w2 / 2.0) * w
    return y, sigma_w2
