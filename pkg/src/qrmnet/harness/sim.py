"""Seeded TTI generation and the receiver front end shared by all commands."""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from ..chanest import (
    SRCNN,
    gaussian_kernel,
    interpolate,
    lmmse_kernel,
    ls_pilot_tensor,
    srcnn_forward,
)
from ..channel import apply_awgn, draw_channel, frequency_correlation, noise_variance
from ..grid import Constellation, build_grid, map_bits
from .config import ExperimentConfig

__all__ = ["Tti", "Link", "tti_rng", "simulate_tti", "pam_labels"]


@dataclass
class Tti:
    index: int
    snr_db: float
    H: np.ndarray      # (S, C, n_rx, n_tx) true channel
    bits: np.ndarray   # (n_data, n_tx * bits_per_symbol)
    rx: np.ndarray     # (S, C, n_rx) received grid

    @property
    def sigma_w2(self) -> float:
        return noise_variance(self.snr_db)


def tti_rng(seed: int, *key: int) -> np.random.Generator:
    """Independent stream per (seed, key...) so workers never share state."""
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=tuple(int(k) for k in key)))


class Link:
    """Static pieces of one configuration: grid, constellation, kernels."""

    def __init__(self, cfg: ExperimentConfig):
        self.cfg = cfg
        self.grid = build_grid(cfg.grid_config())
        self.const = Constellation(cfg.order)
        self.profile = cfg.channel_profile()

    @cached_property
    def interp_kernel(self):
        return gaussian_kernel(self.grid, self.cfg.interp_sf, self.cfg.interp_st)

    @cached_property
    def freq_corr(self):
        return frequency_correlation(self.profile, self.cfg.n_subcarriers)

    def simulate(self, index: int, snr_db: float, rng) -> Tti:
        cfg = self.cfg
        H = draw_channel(self.profile, cfg.n_symbols, cfg.n_subcarriers, cfg.n_rx, cfg.n_tx, rng)
        bits = rng.integers(0, 2, (self.grid.n_data, cfg.n_tx * self.const.bits_per_symbol))
        x = map_bits(bits, self.const)
        rx, _ = apply_awgn(self.grid.compose(x), H, snr_db, rng)
        return Tti(index, float(snr_db), H, bits, rx)

    # ------------------------------------------------------------ estimation

    def estimate(self, tti: Tti, estimator: str, ce_params=None):
        """Full-grid channel estimate ``(S, C, n_rx, n_tx)``."""
        if estimator == "perfect":
            return tti.H
        H_p = ls_pilot_tensor(tti.rx, self.grid)
        if estimator == "interp":
            return interpolate(H_p, self.interp_kernel, self.grid.shape)
        if estimator == "lmmse":
            kernel = lmmse_kernel(self.grid, self.freq_corr, max(tti.sigma_w2, 1e-12))
            return interpolate(H_p, kernel, self.grid.shape)
        if estimator == "srcnn":
            if ce_params is None:
                raise ValueError("srcnn estimator needs CE weights")
            model = SRCNN(ce_params["srcnn.conv1.W"].shape[0], ce_params["srcnn.conv2.W"].shape[0],
                          residual=self.cfg.srcnn_residual)
            return srcnn_forward(interpolate(H_p, self.interp_kernel, self.grid.shape),
                                 ce_params, model)
        raise ValueError(f"unknown estimator {estimator!r}")

    def payload(self, tti: Tti, H_hat):
        """Data REs: ``y (n_data, n_rx)``, ``H (n_data, n_rx, n_tx)``."""
        return (self.grid.extract_data(tti.rx, trailing=1),
                self.grid.extract_data(H_hat, trailing=2))

    def labels(self, tti: Tti):
        return pam_labels(tti.bits, self.const, self.cfg.n_tx)


def pam_labels(bits, const: Constellation, n_tx: int):
    """Real-model node labels ``(n_re, 2 n_tx)``: in-phase indices then quadrature."""
    lab = const.bits_to_labels(bits)
    i_idx, q_idx = const.labels_to_pam_indices(lab)
    return np.concatenate([i_idx, q_idx], axis=-1)


def simulate_tti(cfg: ExperimentConfig, index: int, snr_db: float, seed: int | None = None,
                 link: Link | None = None) -> Tti:
    link = link or Link(cfg)
    return link.simulate(index, snr_db, tti_rng(cfg.seed if seed is None else seed, index))
