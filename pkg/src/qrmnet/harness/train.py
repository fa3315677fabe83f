"""Training drivers: SRCNN first, then the detector on the resulting estimates."""

from __future__ import annotations

import csv
import logging

import numpy as np

from ..chanest import SrcnnHyper, interpolate, ls_pilot_tensor, srcnn_train
from ..detect_gnn import DetTrainHyper, EpInput, qrmnet_train
from ..detect_qrm import DetectionContext, build_context
from .config import ExperimentConfig
from .sim import Link

__all__ = ["train_ce", "train_det", "detection_batch", "concat_contexts", "write_telemetry"]

log = logging.getLogger(__name__)


def write_telemetry(path, columns, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([repr(float(v)) if isinstance(v, float) else v for v in row])


def train_ce(cfg: ExperimentConfig, ttis, link: Link | None = None, val_ttis=None,
             telemetry=None):
    """Fit SRCNN on (interpolated LS, true channel) pairs of ``ttis``."""
    link = link or Link(cfg)

    def pairs(batch):
        X = np.stack([interpolate(ls_pilot_tensor(t.rx, link.grid), link.interp_kernel,
                                  link.grid.shape) for t in batch])
        return X, np.stack([t.H for t in batch])

    X, Y = pairs(ttis)
    val = pairs(val_ttis) if val_ttis else None
    hyper = SrcnnHyper(h1=cfg.n_h1, h2=cfg.n_h2, dropout=cfg.dropout, lr=cfg.ce_lr,
                       epochs=cfg.ce_epochs, batch_ttis=cfg.ce_batch_ttis, seed=cfg.seed,
                       residual=cfg.srcnn_residual)
    params, history = srcnn_train(X, Y, hyper, val=val)
    if telemetry is not None:
        write_telemetry(telemetry, ("epoch", "loss", "val_mse"), history)
    return params, history


def concat_contexts(parts) -> DetectionContext:
    first = parts[0]
    return DetectionContext(*(np.concatenate([getattr(p, k) for p in parts])
                              for k in ("r", "R", "G", "c", "sigma_z2")), first.alphabet)


def detection_batch(cfg: ExperimentConfig, ttis, link: Link, estimator: str = "perfect",
                    ce_params=None, with_ep: bool = False):
    """Stack the payload REs of ``ttis`` into one detection problem.

    Returns ``(ctx, labels, ep_input or None)``.
    """
    ctxs, labels, ys, Hs, s2 = [], [], [], [], []
    for t in ttis:
        H_hat = link.estimate(t, estimator, ce_params)
        y, H = link.payload(t, H_hat)
        ctxs.append(build_context(y, H, t.sigma_w2, cfg.order))
        labels.append(link.labels(t))
        if with_ep:
            ys.append(y)
            Hs.append(H)
            s2.append(np.full(len(y), t.sigma_w2))
    ep = None
    if with_ep:
        ep = EpInput(np.concatenate(ys), np.concatenate(Hs), np.concatenate(s2), cfg.order,
                     cfg.ep_iterations, cfg.ep_damping)
    return concat_contexts(ctxs), np.concatenate(labels), ep


def train_det(cfg: ExperimentConfig, ttis, link: Link | None = None, ce_params=None,
              perfect_csi: bool = False, prior_source: str = "qrm", val_ttis=None,
              telemetry=None, params=None):
    """Fit the GNN of QRMNet (or of the EP-prior variant) on ``ttis``.

    The channel estimate fed to the detector comes from SRCNN when
    ``ce_params`` is given and from the true channel with ``perfect_csi``.
    """
    if ce_params is None and not perfect_csi:
        raise ValueError("detector training needs CE weights or perfect_csi")
    link = link or Link(cfg)
    est = "perfect" if perfect_csi else "srcnn"
    with_ep = prior_source == "ep"
    ctx, labels, ep = detection_batch(cfg, ttis, link, est, ce_params, with_ep)
    val = None
    if val_ttis:
        val = detection_batch(cfg, val_ttis, link, est, ce_params, with_ep)
    hyper = DetTrainHyper(epochs=cfg.det_epochs, batch=cfg.det_batch, lr=cfg.det_lr, K=cfg.K,
                          T=cfg.T, L=cfg.L, seed=cfg.seed, prior_feature=cfg.prior_feature,
                          n_u=cfg.n_u, n_h1=cfg.n_h1, n_h2=cfg.n_h2, n_h3=cfg.n_h3)
    params, history = qrmnet_train(ctx, labels, hyper, val=val, ep_input=ep, params=params)
    if telemetry is not None:
        write_telemetry(telemetry, ("epoch", "loss", "val_ser"), history)
    return params, history
