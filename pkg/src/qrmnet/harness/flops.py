"""Multiplication counts per network stage, row for row from the complexity table.

Symbols: ``n_t`` is the number of transmit antennas, ``n_a`` the
constellation size M, ``n_s``/``n_c`` the grid size. Stages without a
multiplying layer (activations, dropout, softmax) are absent from the
table. The counts follow the published table even where it disagrees with
the implemented network (valid-mode convolution sizes, complex node count).
"""

from __future__ import annotations

from dataclasses import dataclass

__all__ = ["FlopParams", "stage_counts", "total_order", "format_table", "STAGES", "NETWORKS"]

STAGES = ("I", "II", "III", "IV", "V", "VI", "VII")
NETWORKS = ("SRCNN", "FN", "VN", "GNN", "GRU")


@dataclass(frozen=True)
class FlopParams:
    n_t: int = 2
    n_a: int = 16
    n_u: int = 8
    n_h1: int = 64
    n_h2: int = 32
    n_h3: int = 64
    n_s: int = 14
    n_c: int = 48
    L: int = 10

    @classmethod
    def from_config(cls, cfg) -> "FlopParams":
        return cls(cfg.n_tx, cfg.order, cfg.n_u, cfg.n_h1, cfg.n_h2, cfg.n_h3,
                   cfg.n_symbols, cfg.n_subcarriers, cfg.L)


def stage_counts(p: FlopParams) -> dict:
    """``{(network, stage): count}`` for every non-empty table cell."""
    t = p.n_t
    return {
        ("SRCNN", "I"): 81 * p.n_h1 * (p.n_s - 8) * (p.n_c - 4),
        ("SRCNN", "IV"): p.n_h1 * p.n_h2 * p.n_c * (p.n_s - 4),
        ("SRCNN", "VII"): p.n_h2 * p.n_c * (p.n_s - 4),
        ("FN", "I"): 2 * (p.n_u + 1) * (t - 1) * p.n_h1 * t,
        ("FN", "III"): t * (t - 1) * p.n_h1 * p.n_h2,
        ("FN", "V"): t * (t - 1) * p.n_h2 * p.n_u,
        ("VN", "I"): t * p.n_h1 * p.n_h2,
        ("VN", "III"): t * p.n_h2 * p.n_h3,
        ("VN", "V"): t * p.n_h3 * p.n_u,
        ("GNN", "I"): t * p.n_u * p.n_h1,
        ("GNN", "III"): t * p.n_h1 * p.n_h2,
        ("GNN", "V"): t * p.n_h2 * p.n_a,
        ("GRU", "I"): t * (p.n_u + p.n_a + p.n_h1) * p.n_h1,
    }


def total_order(p: FlopParams) -> int:
    """Leading-order total per outer iteration.

    ``N_h1 N_h2 N_c N_s + L N_t^2 (N_u N_h1 + N_u N_h2 + N_h1 N_h2)
    + N_t N_h1 (N_u + N_A + N_h1)``; the leading factor printed as ``N_1``
    in the source is read as ``N_h1``.
    """
    return (p.n_h1 * p.n_h2 * p.n_c * p.n_s
            + p.L * p.n_t ** 2 * (p.n_u * p.n_h1 + p.n_u * p.n_h2 + p.n_h1 * p.n_h2)
            + p.n_t * p.n_h1 * (p.n_u + p.n_a + p.n_h1))


def format_table(p: FlopParams) -> str:
    counts = stage_counts(p)
    lines = ["stage," + ",".join(NETWORKS)]
    for s in STAGES:
        cells = [str(counts[(n, s)]) if (n, s) in counts else "x" for n in NETWORKS]
        lines.append(f"{s}," + ",".join(cells))
    lines.append(f"total_order,{total_order(p)}")
    return "\n".join(lines) + "\n"
