"""Gray-mapped square QAM and the pilot-bearing symbol frame."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

ORDERS = (4, 16, 64)


class DspError(RuntimeError):
    """Base class for receiver-chain failures."""


class ConvergenceError(DspError):
    """An adaptive loop did not settle."""


def _check_order(order: int) -> int:
    if order not in ORDERS:
        raise ValueError(f"unsupported QAM order {order}; expected one of {ORDERS}")
    return int(round(np.sqrt(order)))


def axis_levels(order: int) -> np.ndarray:
    """Per-axis amplitudes of the unit-average-power square constellation."""
    m = _check_order(order)
    scale = np.sqrt(2.0 * (order - 1) / 3.0)
    return (2.0 * np.arange(m) - (m - 1)) / scale


def ring_radii(order: int) -> np.ndarray:
    """Distinct moduli of the unit-power constellation, ascending."""
    pts = constellation(order)
    return np.unique(np.round(np.abs(pts), 12))


def cma_radius2(order: int) -> float:
    """Dispersion constant E|s|^4 / E|s|^2 used by the blind stage."""
    pts = constellation(order)
    a2 = np.abs(pts) ** 2
    return float(np.mean(a2 ** 2) / np.mean(a2))


def _gray(i):
    return i ^ (i >> 1)


def _gray_inverse(g):
    g = np.asarray(g).copy()
    shift = g >> 1
    while np.any(shift):
        g ^= shift
        shift >>= 1
    return g


def bits_per_symbol(order: int) -> int:
    _check_order(order)
    return int(np.log2(order))


def constellation(order: int) -> np.ndarray:
    """Points indexed by the symbol's integer label (I bits high, Q bits low)."""
    labels = np.arange(order)
    return label_to_symbol(labels, order)


def label_to_symbol(labels, order: int) -> np.ndarray:
    m = _check_order(order)
    k = int(np.log2(m))
    levels = axis_levels(order)
    labels = np.asarray(labels, dtype=np.int64)
    gi = labels >> k
    gq = labels & (m - 1)
    return levels[_gray_inverse(gi)] + 1j * levels[_gray_inverse(gq)]


def decide_labels(symbols, order: int) -> np.ndarray:
    """Minimum-distance decision, returned as Gray labels."""
    m = _check_order(order)
    k = int(np.log2(m))
    levels = axis_levels(order)
    step = levels[1] - levels[0]
    s = np.asarray(symbols)

    def idx(v):
        return np.clip(np.rint((v - levels[0]) / step), 0, m - 1).astype(np.int64)

    return (_gray(idx(s.real)) << k) | _gray(idx(s.imag))


def decide(symbols, order: int) -> np.ndarray:
    return label_to_symbol(decide_labels(symbols, order), order)


def labels_to_bits(labels, order: int) -> np.ndarray:
    """Unpack labels to a (..., bits_per_symbol) uint8 array, MSB first."""
    nb = bits_per_symbol(order)
    labels = np.asarray(labels, dtype=np.int64)
    shifts = np.arange(nb - 1, -1, -1)
    return ((labels[..., None] >> shifts) & 1).astype(np.uint8)


@dataclass(frozen=True)
class SymbolFrame:
    """Dual-polarization symbol frame with interleaved pilots.

    ``symbols`` has shape (2, n).  Pilots occupy the same positions on both
    polarizations; ``pilot_values`` has shape (2, len(pilot_positions)).
    """

    order: int
    symbols: np.ndarray
    pilot_positions: np.ndarray
    pilot_values: np.ndarray
    seed: int

    @property
    def n_symbols(self) -> int:
        return self.symbols.shape[1]

    @property
    def data_mask(self) -> np.ndarray:
        mask = np.ones(self.n_symbols, dtype=bool)
        mask[self.pilot_positions] = False
        return mask

    @property
    def labels(self) -> np.ndarray:
        return decide_labels(self.symbols, self.order)


def generate_frame(order: int = 16, n_symbols: int = 2 ** 14, pilot_spacing: int = 64,
                   seed: int = 0) -> SymbolFrame:
    """Seeded uniform Gray-QAM frame with an outer-corner pilot every ``pilot_spacing`` symbols."""
    _check_order(order)
    if pilot_spacing < 2:
        raise ValueError("pilot_spacing must be at least 2")
    if n_symbols < 0:
        raise ValueError("n_symbols must be non-negative")
    rng = np.random.default_rng(seed)
    labels = rng.integers(0, order, size=(2, n_symbols))
    symbols = label_to_symbol(labels, order)
    positions = np.arange(0, n_symbols, pilot_spacing, dtype=np.int64)
    a = axis_levels(order)[-1]
    corners = a * np.array([1 + 1j, -1 + 1j, -1 - 1j, 1 - 1j])
    pilots = corners[rng.integers(0, 4, size=(2, positions.size))]
    symbols[:, positions] = pilots
    return SymbolFrame(order=order, symbols=symbols, pilot_positions=positions, pilot_values=pilots,
                       seed=seed)
