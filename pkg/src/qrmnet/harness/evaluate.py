"""Monte-Carlo SER/BER/NMSE sweeps with deterministic, ordered reduction."""

from __future__ import annotations

import csv
import io
import logging
import time
from dataclasses import dataclass
from statistics import NormalDist

import numpy as np

from ..baselines import MAX_ML_STATES, SearchSpaceTooLarge, ep_detect, ml_marginals, ml_marginals_raw
from ..detect_gnn import EpInput, qrmnet_detect
from ..detect_qrm import build_context, qrm_detect
from ..grid import demap_hard
from .config import ExperimentConfig
from .sim import Link, tti_rng

__all__ = ["CSV_COLUMNS", "SweepRow", "Weights", "wilson_halfwidth", "run_sweep", "rows_to_csv", "detect"]

log = logging.getLogger(__name__)

CSV_COLUMNS = ("snr_db", "detector", "estimator", "K", "T", "L", "ser", "ber", "nmse_db",
               "n_re", "ci_halfwidth", "seconds")
_Z95 = NormalDist().inv_cdf(0.975)


def wilson_halfwidth(errors: int, trials: int, z: float = _Z95) -> float:
    """Half-width of the Wilson score interval for a binomial proportion."""
    if trials == 0:
        return float("nan")
    p = errors / trials
    denom = 1.0 + z * z / trials
    return float(z * np.sqrt(p * (1 - p) / trials + z * z / (4 * trials * trials)) / denom)


@dataclass
class _Tally:
    sym_err: int = 0
    bit_err: int = 0
    n_re: int = 0
    n_bits: int = 0
    err_energy: float = 0.0
    ref_energy: float = 0.0
    seconds: float = 0.0


@dataclass
class SweepRow:
    snr_db: float
    detector: str
    estimator: str
    K: int
    T: int
    L: int
    ser: float
    ber: float
    nmse_db: float
    n_re: int
    ci_halfwidth: float
    seconds: float = 0.0

    def as_tuple(self):
        return tuple(getattr(self, c) for c in CSV_COLUMNS)


@dataclass
class Weights:
    ce: object = None
    det: object = None
    det_ep: object = None


def detect(detector: str, cfg: ExperimentConfig, y, H, sigma_w2, weights: Weights):
    """Posterior ``(n_re, 2 n_tx, n_pam)`` of one detector on a payload batch."""
    if detector in ("qrm", "qrmnet", "ml"):
        ctx = build_context(y, H, sigma_w2, cfg.order)
        if detector == "qrm":
            return qrm_detect(ctx, K=cfg.K, max_log=cfg.max_log)
        if detector == "ml":
            return ml_marginals(ctx)[0]
        if weights.det is None:
            raise ValueError("qrmnet needs detector weights")
        return qrmnet_detect(ctx, weights.det, cfg.K, cfg.T, cfg.L, cfg.max_log,
                             prior_feature=cfg.prior_feature)
    if detector == "ep":
        return ep_detect(y, H, sigma_w2, cfg.order, iterations=cfg.ep_iterations,
                         damping=cfg.ep_damping).posterior
    if detector == "ep-gnn":
        if weights.det_ep is None:
            raise ValueError("ep-gnn needs EP-prior detector weights")
        ctx = build_context(y, H, sigma_w2, cfg.order)
        ep = EpInput(y, H, np.full(len(y), sigma_w2), cfg.order, cfg.ep_iterations, cfg.ep_damping)
        return qrmnet_detect(ctx, weights.det_ep, cfg.K, cfg.T, cfg.L, ep_input=ep,
                             prior_feature=cfg.prior_feature)
    if detector == "ml-raw":
        return ml_marginals_raw(y, H, sigma_w2, cfg.order)[0]
    raise ValueError(f"unknown detector {detector!r}")


def _ml_feasible(cfg: ExperimentConfig) -> bool:
    return cfg.n_pam ** (2 * cfg.n_tx) <= MAX_ML_STATES


def _combos(cfg: ExperimentConfig):
    dets = list(cfg.detectors)
    for d in ("ml", "ml-raw"):
        if d in dets and not _ml_feasible(cfg):
            raise SearchSpaceTooLarge(f"{d}: {cfg.n_pam}^{2 * cfg.n_tx} hypotheses exceed "
                                      f"{MAX_ML_STATES}")
    return [(d, e) for e in cfg.estimators for d in dets]


def _tti_result(args):
    """All (detector, estimator) tallies for one TTI; pure given its arguments."""
    cfg, weights, snr_index, snr_db, index = args
    link = _link_for(cfg)
    rng = tti_rng(cfg.seed, snr_index, index)
    tti = link.simulate(index, snr_db, rng)
    labels = link.labels(tti)
    n_t = cfg.n_tx
    out = {}
    for est in cfg.estimators:
        H_hat = link.estimate(tti, est, weights.ce)
        y, H = link.payload(tti, H_hat)
        err_e = float(np.sum(np.abs(H_hat - tti.H) ** 2))
        ref_e = float(np.sum(np.abs(tti.H) ** 2))
        for det in cfg.detectors:
            t0 = time.perf_counter()
            post = detect(det, cfg, y, H, tti.sigma_w2, weights)
            dt = time.perf_counter() - t0
            wrong = np.argmax(post, axis=-1) != labels
            sym_err = int((wrong[:, :n_t] | wrong[:, n_t:]).sum())
            bits_hat = demap_hard(post, link.const)
            bit_err = int((bits_hat != tti.bits).sum())
            out[(det, est)] = (sym_err, bit_err, labels.shape[0] * n_t, tti.bits.size,
                               err_e, ref_e, dt)
    return out


_LINKS: dict = {}


def _link_for(cfg):
    link = _LINKS.get(cfg)
    if link is None:
        _LINKS.clear()
        link = _LINKS[cfg] = Link(cfg)
    return link


def _iter_results(cfg, weights, snr_index, snr_db, pool):
    """Per-TTI results in index order; with a pool, blocks are mapped in parallel."""
    block = 1 if pool is None else 2 * cfg.workers
    start = 0
    while True:
        jobs = [(cfg, weights, snr_index, snr_db, i) for i in range(start, start + block)]
        yield from (map(_tti_result, jobs) if pool is None else pool.map(_tti_result, jobs))
        start += block


def run_sweep(cfg: ExperimentConfig, weights: Weights | None = None):
    """SER/BER/NMSE per (SNR, detector, estimator).

    TTIs are drawn in index order from streams keyed by ``(seed, snr index,
    tti index)`` and reduced in that order. A point stops once every
    (detector, estimator) pair has ``target_errors`` symbol errors or
    ``max_re`` symbols have been detected, so worker count does not change
    any number.
    """
    weights = weights or Weights()
    combos = _combos(cfg)
    pool = None
    if cfg.workers > 1:
        import multiprocessing

        pool = multiprocessing.get_context("spawn").Pool(cfg.workers)
    rows = []
    try:
        for si, snr in enumerate(cfg.snr_db):
            tallies = {c: _Tally() for c in combos}
            results = _iter_results(cfg, weights, si, snr, pool)
            for res in results:
                for c, (se, be, nre, nb, ee, re_, dt) in res.items():
                    t = tallies[c]
                    t.sym_err += se
                    t.bit_err += be
                    t.n_re += nre
                    t.n_bits += nb
                    t.err_energy += ee
                    t.ref_energy += re_
                    t.seconds += dt
                n_re = tallies[combos[0]].n_re
                if min(t.sym_err for t in tallies.values()) >= cfg.target_errors or n_re >= cfg.max_re:
                    break
            for (det, est), t in tallies.items():
                ratio = t.err_energy / t.ref_energy
                nmse_db = max(10.0 * np.log10(ratio), -100.0) if ratio > 0 else -100.0
                rows.append(SweepRow(float(snr), det, est, cfg.K, cfg.T, cfg.L,
                                     t.sym_err / t.n_re, t.bit_err / t.n_bits, float(nmse_db),
                                     t.n_re, wilson_halfwidth(t.sym_err, t.n_re),
                                     t.seconds if cfg.timing else 0.0))
            log.info("snr %.1f dB done after %d symbols", snr, tallies[combos[0]].n_re)
    finally:
        if pool is not None:
            pool.terminate()
    return rows


def rows_to_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for r in rows:
        w.writerow([repr(v) if isinstance(v, float) else v for v in r.as_tuple()])
    return buf.getvalue()
