"""Binary TTI dataset files.

Layout (all little-endian)::

    header   b"QRMD" | u32 version | u16 len | dataset hash (ascii) | u64 seed
             | u32 n_symbols | u32 n_subcarriers | u32 n_rx | u32 n_tx
             | u32 n_data | u32 bits_per_re
    records  f64 tti index | f64 snr_db
             | f64[S*C*n_rx*n_tx*2] channel (re, im interleaved, row-major)
             | f64[n_data*bits_per_re] tx bits
             | f64[S*C*n_rx*2] rx grid (re, im interleaved)

Records have a fixed size, so the count follows from the file length and
appending never rewrites the header.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import ExperimentConfig, dataset_hash
from .sim import Link, Tti, tti_rng

__all__ = ["DatasetError", "DatasetHeader", "write_dataset", "read_dataset", "generate_ttis"]

MAGIC = b"QRMD"
VERSION = 1


class DatasetError(ValueError):
    pass


@dataclass(frozen=True)
class DatasetHeader:
    config_hash: str
    seed: int
    n_symbols: int
    n_subcarriers: int
    n_rx: int
    n_tx: int
    n_data: int
    bits_per_re: int

    def pack(self) -> bytes:
        h = self.config_hash.encode()
        return (MAGIC + struct.pack("<IH", VERSION, len(h)) + h
                + struct.pack("<Q6I", self.seed, self.n_symbols, self.n_subcarriers,
                              self.n_rx, self.n_tx, self.n_data, self.bits_per_re))

    @property
    def record_floats(self) -> int:
        S, C = self.n_symbols, self.n_subcarriers
        return 2 + S * C * self.n_rx * self.n_tx * 2 + self.n_data * self.bits_per_re + S * C * self.n_rx * 2

    @classmethod
    def unpack(cls, data: bytes):
        if data[:4] != MAGIC:
            raise DatasetError("not a dataset file")
        version, hlen = struct.unpack_from("<IH", data, 4)
        if version != VERSION:
            raise DatasetError(f"unsupported dataset version {version}")
        pos = 10 + hlen
        h = data[10:pos].decode()
        seed, *dims = struct.unpack_from("<Q6I", data, pos)
        return cls(h, seed, *dims), pos + struct.calcsize("<Q6I")


def _header_for(cfg: ExperimentConfig, link: Link, seed: int) -> DatasetHeader:
    return DatasetHeader(dataset_hash(cfg), seed, cfg.n_symbols, cfg.n_subcarriers, cfg.n_rx,
                         cfg.n_tx, link.grid.n_data, cfg.n_tx * link.const.bits_per_symbol)


def _pack_record(t: Tti) -> bytes:
    parts = [np.array([t.index, t.snr_db], dtype="<f8"),
             np.ascontiguousarray(t.H, dtype=complex).view("<f8").ravel(),
             t.bits.astype("<f8").ravel(),
             np.ascontiguousarray(t.rx, dtype=complex).view("<f8").ravel()]
    return b"".join(p.astype("<f8").tobytes() for p in parts)


def generate_ttis(cfg: ExperimentConfig, n_ttis: int, snrs, seed: int, start: int = 0,
                  link: Link | None = None):
    """TTIs ``start..start+n_ttis-1``; TTI ``i`` uses SNR ``snrs[i % len(snrs)]``."""
    link = link or Link(cfg)
    snrs = list(snrs)
    return [link.simulate(i, snrs[i % len(snrs)], tti_rng(seed, i))
            for i in range(start, start + n_ttis)]


def write_dataset(path, cfg: ExperimentConfig, ttis, seed: int, append: bool = False) -> None:
    link = Link(cfg)
    header = _header_for(cfg, link, seed)
    path = Path(path)
    if append and path.exists():
        existing, _ = DatasetHeader.unpack(path.read_bytes()[:4096])
        if existing != header:
            raise DatasetError(
                f"{path}: config hash {existing.config_hash} does not match {header.config_hash}")
        with path.open("ab") as fh:
            for t in ttis:
                fh.write(_pack_record(t))
        return
    with path.open("wb") as fh:
        fh.write(header.pack())
        for t in ttis:
            fh.write(_pack_record(t))


def read_dataset(path, cfg: ExperimentConfig | None = None):
    """Return ``(header, [Tti, ...])``; checks the hash when ``cfg`` is given."""
    data = Path(path).read_bytes()
    header, pos = DatasetHeader.unpack(data)
    if cfg is not None and header.config_hash != dataset_hash(cfg):
        raise DatasetError(f"{path}: dataset hash {header.config_hash} does not match config "
                           f"{dataset_hash(cfg)}")
    body = np.frombuffer(data, dtype="<f8", offset=pos)
    n = header.record_floats
    if body.size % n:
        raise DatasetError(f"{path}: truncated record")
    S, C, R, T = header.n_symbols, header.n_subcarriers, header.n_rx, header.n_tx
    ttis = []
    for rec in body.reshape(-1, n):
        o = 2
        size = S * C * R * T * 2
        H = rec[o:o + size].copy().view(complex).reshape(S, C, R, T)
        o += size
        size = header.n_data * header.bits_per_re
        bits = rec[o:o + size].astype(np.int64).reshape(header.n_data, header.bits_per_re)
        o += size
        rx = rec[o:].copy().view(complex).reshape(S, C, R)
        ttis.append(Tti(int(rec[0]), float(rec[1]), H, bits, rx))
    return header, ttis
