"""
Training QRMNet
===============

The GNN sees the channel through node and edge features of the QR
model, and QRM's soft output enters as a prior feature. Its readout is
initialised to zero, so an untrained network returns uniform posteriors
and the first loss is T * 2N_t * ln(sqrt(M)). A short run on perfect
CSI shows the loss falling. The acceptance suite trains much longer
before comparing SER.
"""

import logging

import numpy as np

from qrmnet.harness.config import ExperimentConfig
from qrmnet.harness.dataset import generate_ttis
from qrmnet.harness.evaluate import Weights, rows_to_csv, run_sweep
from qrmnet.harness.sim import Link
from qrmnet.harness.train import train_det

logging.basicConfig(level=logging.INFO, format="%(message)s")

cfg = ExperimentConfig(n_h1=32, n_h2=16, n_h3=32, L=4, det_epochs=6, det_lr=1e-2,
                       train_snr_db=(18.0, 22.0, 26.0), snr_db=(22.0,),
                       detectors=("qrmnet", "qrm"), target_errors=50, max_re=9600)
link = Link(cfg)
ttis = generate_ttis(cfg, 6, cfg.train_snr_db, seed=1000, link=link)
params, history = train_det(cfg, ttis, link, perfect_csi=True)

print(f"uniform-posterior loss {cfg.T * 2 * cfg.n_tx * np.log(4):.3f}")
print("mean loss per epoch:", " ".join(f"{row[1]:.3f}" for row in history))
print(rows_to_csv(run_sweep(cfg, Weights(det=params))))
