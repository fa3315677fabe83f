"""OFDM resource grid, DMRS layout and Gray-labelled square QAM."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .numerics import pam_levels

__all__ = [
    "ConfigError",
    "Constellation",
    "GridConfig",
    "ResourceGrid",
    "build_grid",
    "map_bits",
    "demap_hard",
]


class ConfigError(ValueError):
    """Raised when a configuration cannot be realised."""


def _pam_amplitude(bits):
    """Unnormalised Gray PAM amplitude of a bit tuple (3GPP recursion)."""
    signs = 1 - 2 * np.asarray(bits, dtype=int)
    m = signs.shape[-1]
    t = np.ones(signs.shape[:-1], dtype=int)
    for j in range(m - 1, 0, -1):
        t = 2 ** (m - j) - signs[..., j] * t
    return signs[..., 0] * t


class Constellation:
    """Unit-energy square M-QAM with Gray labelling.

    Bits of a symbol are read MSB first; even-indexed bits drive the
    in-phase PAM, odd-indexed bits the quadrature PAM. With this labelling
    ``0000`` maps to ``(1+1j)/sqrt(10)`` in 16QAM and ``00`` to
    ``(1+1j)/sqrt(2)`` in QPSK.

    Attributes
    ----------
    order : int
    bits_per_symbol : int
    points : (order,) complex array indexed by the integer label
    pam : (sqrt(order),) ascending real alphabet per dimension
    pam_bits : (sqrt(order), bits_per_symbol // 2) bit labels of ``pam``
    """

    def __init__(self, order: int):
        self.pam = pam_levels(order)
        self.order = int(order)
        self.bits_per_symbol = int(np.log2(order))
        half = self.bits_per_symbol // 2
        scale = np.sqrt(2.0 * (order - 1) / 3.0)

        labels = np.arange(order)
        bits = (labels[:, None] >> np.arange(self.bits_per_symbol - 1, -1, -1)) & 1
        i_amp = _pam_amplitude(bits[:, 0::2])
        q_amp = _pam_amplitude(bits[:, 1::2])
        self.points = (i_amp + 1j * q_amp) / scale
        self.label_bits = bits

        side = len(self.pam)
        pam_labels = np.arange(side)
        pbits = (pam_labels[:, None] >> np.arange(half - 1, -1, -1)) & 1
        amp = _pam_amplitude(pbits)
        # pam_bits[i] are the bits that produce the i-th ascending level
        order_idx = np.argsort(amp)
        self.pam_bits = pbits[order_idx]
        self._i_index = np.searchsorted(np.sort(amp), i_amp)
        self._q_index = np.searchsorted(np.sort(amp), q_amp)

    @property
    def n_pam(self) -> int:
        return len(self.pam)

    def bits_to_labels(self, bits) -> np.ndarray:
        bits = np.asarray(bits, dtype=int)
        k = self.bits_per_symbol
        if bits.shape[-1] % k:
            raise ValueError(f"bit count {bits.shape[-1]} is not a multiple of {k}")
        groups = bits.reshape(bits.shape[:-1] + (-1, k))
        return groups @ (1 << np.arange(k - 1, -1, -1))

    def labels_to_pam_indices(self, labels):
        """Split complex labels into (in-phase, quadrature) PAM indices."""
        labels = np.asarray(labels)
        return self._i_index[labels], self._q_index[labels]

    def pam_indices_to_bits(self, i_idx, q_idx) -> np.ndarray:
        i_bits = self.pam_bits[np.asarray(i_idx)]
        q_bits = self.pam_bits[np.asarray(q_idx)]
        out = np.empty(i_bits.shape[:-1] + (self.bits_per_symbol,), dtype=int)
        out[..., 0::2] = i_bits
        out[..., 1::2] = q_bits
        return out

    def nearest(self, symbols) -> np.ndarray:
        """Nearest-point labels of complex symbols."""
        symbols = np.asarray(symbols)
        return np.argmin(np.abs(symbols[..., None] - self.points) ** 2, axis=-1)


def map_bits(bits, constellation: Constellation) -> np.ndarray:
    """Map a bit array (last axis) to complex symbols."""
    return constellation.points[constellation.bits_to_labels(bits)]


def demap_hard(posterior, constellation: Constellation) -> np.ndarray:
    """Hard bits from real-model posteriors.

    ``posterior`` has shape ``(..., 2*n_t, n_pam)``; nodes ``0..n_t-1`` are
    in-phase coordinates and ``n_t..2*n_t-1`` quadrature coordinates.
    Returns bits of shape ``(..., n_t * bits_per_symbol)``.
    """
    posterior = np.asarray(posterior)
    idx = np.argmax(posterior, axis=-1)
    n_t = idx.shape[-1] // 2
    bits = constellation.pam_indices_to_bits(idx[..., :n_t], idx[..., n_t:])
    return bits.reshape(bits.shape[:-2] + (-1,))


@dataclass(frozen=True)
class GridConfig:
    n_subcarriers: int = 48
    n_symbols: int = 14
    n_pilots: int = 32
    n_data: int = 480
    n_tx: int = 2
    pilot_symbols: tuple | None = None
    pilot_seed: int = 7


@dataclass
class ResourceGrid:
    """Per-TTI layout shared by all Tx antennas.

    ``pilot_mask[s, c, n]`` marks DMRS of antenna ``n``; ``pilot_values``
    carries the DMRS symbol there and zero elsewhere. ``pilot_positions[n]``
    lists the ``(symbol, subcarrier)`` pairs of antenna ``n`` in the order
    used for the pilot observation vectors. Payload REs are read and
    written in row-major ``(symbol, subcarrier)`` order.
    """

    config: GridConfig
    pilot_mask: np.ndarray
    pilot_values: np.ndarray
    data_mask: np.ndarray
    pilot_positions: list = field(default_factory=list)

    @property
    def shape(self):
        return self.data_mask.shape

    @property
    def n_tx(self) -> int:
        return self.pilot_mask.shape[-1]

    @property
    def n_data(self) -> int:
        return int(self.data_mask.sum())

    @property
    def data_positions(self) -> np.ndarray:
        return np.argwhere(self.data_mask)

    def guard_count(self, antenna: int) -> int:
        used = self.pilot_mask[..., antenna] | self.data_mask
        return int((~used).sum())

    def pilot_vector(self, antenna: int) -> np.ndarray:
        """Diagonal of the pilot observation matrix for one antenna."""
        s, c = self.pilot_positions[antenna].T
        return self.pilot_values[s, c, antenna]

    def compose(self, payload) -> np.ndarray:
        """Place ``payload`` of shape ``(..., n_data, n_tx)`` into a full grid."""
        payload = np.asarray(payload)
        lead = payload.shape[:-2]
        tx = np.broadcast_to(self.pilot_values, lead + self.pilot_values.shape).copy()
        tx[..., self.data_mask, :] = payload
        return tx

    def extract_data(self, grid, trailing: int = 1) -> np.ndarray:
        """Payload REs of a grid array.

        ``grid`` has shape ``(..., n_symbols, n_subcarriers, t_1, ..., t_k)``
        with ``k = trailing`` axes after the grid axes. The result has shape
        ``(..., n_data, t_1, ..., t_k)``.
        """
        g = np.asarray(grid)
        a = g.ndim - 2 - trailing
        g = np.moveaxis(g, (a, a + 1), (-2, -1))
        return np.moveaxis(g[..., self.data_mask], -1, a)


def _pick_pilot_symbols(cfg: GridConfig):
    if cfg.pilot_symbols is not None:
        return tuple(int(s) for s in cfg.pilot_symbols)
    slots = cfg.n_subcarriers // cfg.n_tx
    for candidate in ((2, 11), (2, 5, 8, 11)):
        if cfg.n_pilots % len(candidate) == 0 and cfg.n_pilots // len(candidate) <= slots:
            return candidate
    raise ConfigError(
        f"cannot fit {cfg.n_pilots} pilots per antenna for {cfg.n_tx} antennas on "
        f"{cfg.n_subcarriers} subcarriers"
    )


def build_grid(config: GridConfig | None = None) -> ResourceGrid:
    """Lay out DMRS (comb over antennas) and payload REs for one TTI."""
    cfg = config or GridConfig()
    n_s, n_c, n_t = cfg.n_symbols, cfg.n_subcarriers, cfg.n_tx
    if min(n_s, n_c, n_t, cfg.n_pilots) < 1:
        raise ConfigError("grid dimensions, pilots and antennas must be positive")
    pilot_syms = _pick_pilot_symbols(cfg)
    if any(not 0 <= s < n_s for s in pilot_syms) or len(set(pilot_syms)) != len(pilot_syms):
        raise ConfigError(f"invalid pilot symbols {pilot_syms} for {n_s} OFDM symbols")
    if cfg.n_pilots % len(pilot_syms):
        raise ConfigError(
            f"{cfg.n_pilots} pilots do not divide over {len(pilot_syms)} pilot symbols"
        )
    per_symbol = cfg.n_pilots // len(pilot_syms)
    slots = n_c // n_t
    if per_symbol > slots:
        raise ConfigError(
            f"{per_symbol} pilots per symbol exceed the {slots} comb slots of {n_t} antennas"
        )

    rng = np.random.default_rng(cfg.pilot_seed)
    pilot_mask = np.zeros((n_s, n_c, n_t), dtype=bool)
    pilot_values = np.zeros((n_s, n_c, n_t), dtype=complex)
    # evenly spread subset of the comb slots
    chosen = np.floor(np.arange(per_symbol) * slots / per_symbol).astype(int)
    positions = []
    for n in range(n_t):
        sc = n + n_t * chosen
        pos = np.array([(s, c) for s in pilot_syms for c in sc], dtype=int)
        pilot_mask[pos[:, 0], pos[:, 1], n] = True
        qpsk = np.exp(1j * (np.pi / 4 + np.pi / 2 * rng.integers(0, 4, len(pos))))
        pilot_values[pos[:, 0], pos[:, 1], n] = qpsk
        positions.append(pos)

    data_syms = [s for s in range(n_s) if s not in pilot_syms]
    if cfg.n_data % len(data_syms):
        raise ConfigError(f"{cfg.n_data} payload REs do not divide over {len(data_syms)} symbols")
    width = cfg.n_data // len(data_syms)
    if width > n_c:
        raise ConfigError(f"{cfg.n_data} payload REs exceed the grid")
    left = (n_c - width) // 2
    data_mask = np.zeros((n_s, n_c), dtype=bool)
    data_mask[np.ix_(data_syms, np.arange(left, left + width))] = True

    return ResourceGrid(cfg, pilot_mask, pilot_values, data_mask, positions)
