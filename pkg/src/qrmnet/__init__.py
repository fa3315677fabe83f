"""Link-level MIMO-OFDM receiver laboratory.

SRCNN channel estimation feeding a QRM-assisted GNN detector (QRMNet),
with exact ML, QRM, EP and LMMSE references. Submodules:

numerics
    MMSE-QRD and the real-valued model.
grid, channel
    Resource grid, constellations and correlated Rayleigh fading.
chanest
    LS, Gaussian interpolation, LMMSE and SRCNN estimators.
neural
    Dense, Conv2d, GRU, losses and Adam with manual backpropagation.
detect_qrm, detect_gnn, baselines
    QRM, the GNN/QRMNet loop, exhaustive ML and EP.
harness
    Configuration, datasets, training drivers, sweeps and the CLI.
"""

__version__ = "0.1.0"
