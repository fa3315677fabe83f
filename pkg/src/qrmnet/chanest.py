"""Pilot-based channel estimation: LS, Gaussian interpolation, SRCNN, LMMSE.

Channel tensors use the layout ``(..., n_symbols, n_subcarriers, n_rx, n_tx)``
for full grids and ``(..., n_pilots, n_rx, n_tx)`` at pilot positions.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .grid import ResourceGrid
from .neural import (
    AdamState,
    Conv2d,
    Dropout,
    ModelParams,
    ReLU,
    Sequential,
    adam_step,
    diagnostics,
    mse,
    mse_backward,
    zeros_like_params,
)

__all__ = [
    "SingularPilotError",
    "IncompleteObservationError",
    "DivergenceError",
    "ls_estimate",
    "pilot_observations",
    "ls_pilot_tensor",
    "assemble_pilot_tensor",
    "gaussian_kernel",
    "lmmse_kernel",
    "interpolate",
    "lmmse_estimate",
    "SRCNN",
    "SrcnnHyper",
    "srcnn_forward",
    "srcnn_train",
    "nmse",
    "NMSE_FLOOR_DB",
]

log = logging.getLogger(__name__)

NMSE_FLOOR_DB = -100.0


class SingularPilotError(ValueError):
    pass


class IncompleteObservationError(ValueError):
    pass


class DivergenceError(RuntimeError):
    def __init__(self, epoch: int, lr: float, loss: float):
        super().__init__(f"training diverged at epoch {epoch} (lr={lr:g}, loss={loss})")
        self.epoch, self.lr, self.loss = epoch, lr, loss


def ls_estimate(y, pilots):
    """Least-squares estimate ``(P^H P)^-1 P^H y`` for a diagonal pilot matrix.

    ``pilots`` is the diagonal of ``P``; broadcasting over leading axes of
    ``y`` is allowed.
    """
    pilots = np.asarray(pilots)
    if np.any(np.abs(pilots) == 0):
        raise SingularPilotError("pilot with zero amplitude")
    return np.asarray(y) / pilots


def pilot_observations(rx_grid, grid: ResourceGrid):
    """Received samples at each antenna's DMRS: ``(..., n_pilots, n_rx, n_tx)``."""
    rx_grid = np.asarray(rx_grid)
    obs = []
    for n in range(grid.n_tx):
        s, c = grid.pilot_positions[n].T
        obs.append(rx_grid[..., s, c, :])
    return np.stack(obs, axis=-1)


def ls_pilot_tensor(rx_grid, grid: ResourceGrid):
    """LS estimates for every link, arranged as the pilot tensor."""
    obs = pilot_observations(rx_grid, grid)
    pilots = np.stack([grid.pilot_vector(n) for n in range(grid.n_tx)], axis=-1)
    return ls_estimate(obs, pilots[:, None, :])


def assemble_pilot_tensor(estimates, n_rx: int, n_tx: int):
    """Stack per-link LS vectors ``{(m, n): h_ls}`` into ``(n_pilots, n_rx, n_tx)``."""
    missing = [(m, n) for m in range(n_rx) for n in range(n_tx) if (m, n) not in estimates]
    if missing:
        raise IncompleteObservationError(f"missing links {missing}")
    n_p = len(next(iter(estimates.values())))
    out = np.zeros((n_p, n_rx, n_tx), dtype=complex)
    for (m, n), h in estimates.items():
        out[:, m, n] = h
    return out


def gaussian_kernel(grid: ResourceGrid, s_f: float = 4.0, s_t: float = 4.0):
    """Row-normalised Gaussian interpolation weights.

    Returns ``(n_tx, n_symbols * n_subcarriers, n_pilots)``: the weight of
    every pilot of antenna ``n`` for every RE of the grid (row-major).
    """
    n_s, n_c = grid.shape
    ss, cc = np.meshgrid(np.arange(n_s), np.arange(n_c), indexing="ij")
    targets = np.stack([ss.ravel(), cc.ravel()], axis=1)
    out = []
    for n in range(grid.n_tx):
        pos = grid.pilot_positions[n]
        dt = targets[:, None, 0] - pos[None, :, 0]
        df = targets[:, None, 1] - pos[None, :, 1]
        logw = -(df ** 2) / (2 * s_f ** 2) - (dt ** 2) / (2 * s_t ** 2)
        w = np.exp(logw - logw.max(axis=1, keepdims=True))
        out.append(w / w.sum(axis=1, keepdims=True))
    return np.stack(out)


def lmmse_kernel(grid: ResourceGrid, freq_corr, sigma_w2: float):
    """Linear MMSE filter ``R_dp (R_pp + sigma_w2 I)^-1`` in kernel layout.

    ``freq_corr`` is the ``(n_subcarriers, n_subcarriers)`` correlation of
    one link; the channel is static over the TTI so time lag does not
    decorrelate.
    """
    n_s, n_c = grid.shape
    cc = np.tile(np.arange(n_c), n_s)
    out = []
    for n in range(grid.n_tx):
        pc = grid.pilot_positions[n][:, 1]
        R_pp = freq_corr[np.ix_(pc, pc)]
        R_dp = freq_corr[np.ix_(cc, pc)]
        A = R_pp + sigma_w2 * np.eye(len(pc))
        out.append(np.linalg.solve(A.T, R_dp.T).T)
    return np.stack(out)


def interpolate(H_p, kernel, grid_shape):
    """Apply per-antenna weights to the pilot tensor.

    ``H_p`` is ``(..., n_pilots, n_rx, n_tx)``; the result is the full-grid
    tensor ``(..., n_symbols, n_subcarriers, n_rx, n_tx)``.
    """
    H = np.einsum("ngp,...pmn->...gmn", kernel, np.asarray(H_p))
    return H.reshape(H.shape[:-3] + tuple(grid_shape) + H.shape[-2:])


def lmmse_estimate(rx_grid, grid: ResourceGrid, freq_corr, sigma_w2: float):
    return interpolate(ls_pilot_tensor(rx_grid, grid),
                       lmmse_kernel(grid, freq_corr, sigma_w2), grid.shape)


def nmse(estimate, label) -> float:
    """``10 log10(||est - label||^2 / ||label||^2)``, floored at -100 dB."""
    estimate = np.asarray(estimate)
    label = np.asarray(label)
    if estimate.shape != label.shape:
        raise ValueError(f"shape mismatch {estimate.shape} vs {label.shape}")
    den = np.sum(np.abs(label) ** 2)
    if den == 0:
        raise ValueError("label has zero norm")
    ratio = np.sum(np.abs(estimate - label) ** 2) / den
    if ratio == 0:
        return NMSE_FLOOR_DB
    return max(10.0 * np.log10(ratio), NMSE_FLOOR_DB)


# ---------------------------------------------------------------- SRCNN

class SRCNN:
    """Three-layer super-resolution CNN on single-channel real planes.

    Conv(1, h1, 9) - ReLU - Dropout - Conv(h1, h2, 1) - ReLU - Dropout -
    Conv(h2, 1, 5), zero padding 4/0/2 so the grid size is preserved.
    With ``residual`` the stack predicts a correction that is added to its
    input.
    """

    def __init__(self, h1: int = 64, h2: int = 32, dropout: float = 0.3, prefix: str = "srcnn",
                 residual: bool = False):
        self.h1, self.h2 = h1, h2
        self.residual = residual
        self.net = Sequential([
            Conv2d(f"{prefix}.conv1", 1, h1, 9, padding=4, input_grad=False),
            ReLU(),
            Dropout(dropout),
            Conv2d(f"{prefix}.conv2", h1, h2, 1, padding=0),
            ReLU(),
            Dropout(dropout),
            Conv2d(f"{prefix}.conv3", h2, 1, 5, padding=2),
        ])

    def init(self, rng) -> ModelParams:
        return ModelParams(self.net.init(rng))

    def forward(self, P, planes, training=False, rng=None):
        out, caches = self.net.forward(P, planes, training=training, rng=rng)
        if self.residual:
            out = out + planes
        return out, caches

    def backward(self, P, caches, d_out, G):
        self.net.backward(P, caches, d_out, G)


def to_planes(H):
    """``(..., S, C, n_rx, n_tx)`` complex -> ``(B, 1, S, C)`` real planes."""
    H = np.asarray(H)
    S, C = H.shape[-4], H.shape[-3]
    moved = np.moveaxis(H, (-4, -3), (-2, -1)).reshape(-1, S, C)
    return np.concatenate([moved.real, moved.imag], axis=0)[:, None]


def from_planes(planes, like_shape):
    planes = planes[:, 0]
    half = planes.shape[0] // 2
    z = planes[:half] + 1j * planes[half:]
    lead = tuple(like_shape[:-4]) + tuple(like_shape[-2:])
    z = z.reshape(lead + planes.shape[1:])
    return np.moveaxis(z, (-2, -1), (-4, -3))


def srcnn_forward(H_in, params, model: SRCNN | None = None):
    """One-shot refinement of a full-grid channel tensor (evaluation mode)."""
    model = model or _model_from_params(params)
    out, _ = model.forward(params, to_planes(H_in))
    return from_planes(out, np.shape(H_in))


def _model_from_params(params) -> SRCNN:
    h1 = params["srcnn.conv1.W"].shape[0]
    h2 = params["srcnn.conv2.W"].shape[0]
    return SRCNN(h1, h2)


@dataclass
class SrcnnHyper:
    h1: int = 64
    h2: int = 32
    dropout: float = 0.3
    lr: float = 1e-3
    epochs: int = 20
    batch_ttis: int = 1
    seed: int = 0
    residual: bool = False


def srcnn_train(inputs, labels, hyper: SrcnnHyper, val=None, params=None):
    """Fit SRCNN to (interpolated, true) full-grid tensor pairs with MSE.

    ``inputs``/``labels`` are ``(n_tti, S, C, n_rx, n_tx)``; each minibatch
    holds the links of ``batch_ttis`` TTIs as independent real planes.
    Returns ``(params, history)`` with one ``(epoch, train_mse, val_mse)``
    tuple per epoch. Raises :class:`DivergenceError` on a non-finite loss
    or when every optimiser step of an epoch was skipped for non-finite
    gradients.
    """
    rng = np.random.default_rng(hyper.seed)
    model = SRCNN(hyper.h1, hyper.h2, hyper.dropout, residual=hyper.residual)
    P = params.copy() if params is not None else model.init(rng)
    state = AdamState(lr=hyper.lr)
    X = np.asarray(inputs)
    Y = np.asarray(labels)
    n = X.shape[0]
    history = []
    for epoch in range(1, hyper.epochs + 1):
        perm = rng.permutation(n)
        losses = []
        skipped = diagnostics["adam_skipped"]
        for lo in range(0, n, hyper.batch_ttis):
            sel = perm[lo:lo + hyper.batch_ttis]
            x, y = to_planes(X[sel]), to_planes(Y[sel])
            out, caches = model.forward(P, x, training=True, rng=rng)
            loss = mse(out, y)
            if not np.isfinite(loss):
                raise DivergenceError(epoch, hyper.lr, loss)
            G = zeros_like_params(P)
            model.backward(P, caches, mse_backward(out, y), G)
            adam_step(P, G, state)
            losses.append(loss)
        if diagnostics["adam_skipped"] - skipped == len(losses):
            raise DivergenceError(epoch, hyper.lr, float(np.mean(losses)))
        val_loss = float("nan")
        if val is not None:
            vx, vy = val
            val_loss = mse(model.forward(P, to_planes(vx))[0], to_planes(vy))
        history.append((epoch, float(np.mean(losses)), val_loss))
        log.info("srcnn epoch %d train %.3e val %.3e", epoch, history[-1][1], val_loss)
    return P, history
