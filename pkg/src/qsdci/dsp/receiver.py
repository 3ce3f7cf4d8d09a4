"""Receiver stages: orthogonalization, timing, equalization, phase and BER."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import _kernels
from .qam import (ConvergenceError, DspError, SymbolFrame, axis_levels, bits_per_symbol, cma_radius2,
                  decide_labels, labels_to_bits, ring_radii)
from .waveform import DEFAULT_ROLLOFF, DEFAULT_SPAN, WaveformQuad, filter_same, rrc_taps

# Default hard-decision FEC threshold for the pre_fec_ok flag.
HD_FEC_BER = 3.8e-3


# -- Gram-Schmidt ---------------------------------------------------------------


def gsop(wave: WaveformQuad) -> WaveformQuad:
    """Orthogonalize Q against I per polarization and scale every rail to unit power."""
    r = wave.rails()
    out = np.empty_like(r)
    for p in range(2):
        i, q = r[2 * p], r[2 * p + 1]
        pi = np.mean(i * i)
        if not pi > 0:
            raise DspError(f"zero-power I rail on polarization {'XY'[p]}")
        i_n = i / math.sqrt(pi)
        q_o = q - np.mean(i_n * q) * i_n
        pq = np.mean(q_o * q_o)
        if not pq > 1e-12 * np.mean(q * q) or not pq > 0:
            raise DspError(f"Q rail on polarization {'XY'[p]} is not independent of I")
        out[2 * p] = i_n
        out[2 * p + 1] = q_o / math.sqrt(pq)
    return wave.with_rails(out)


def gram_matrix(wave: WaveformQuad, pol: int) -> np.ndarray:
    r = wave.rails()[2 * pol:2 * pol + 2]
    return r @ r.T / r.shape[1]


# -- clock recovery -------------------------------------------------------------

GARDNER_KP = 2e-3
GARDNER_KI = 2e-6
# Strobe-trajectory fit tolerance (samples RMS) before declaring divergence.
TIMING_RESIDUAL_MAX = 0.3
# Timing phase is quantized to this grid (samples).  At roll-off 0.05 the
# detector's pattern noise leaves a few hundredths of a sample of wander, so
# finer resolution buys nothing; the equalizer absorbs the remainder.  A rate
# whose drift over the whole record stays below one grid step is nominal.
TIMING_GRID = 1.0 / 16


@dataclass(frozen=True)
class TimingEstimate:
    """Linear strobe trajectory ``t_m = tau0 + m * period`` in input samples."""

    tau0: float
    period: float
    ppm: float
    residual: float
    n_strobes: int
    settle: int


def timing_estimate(wave: WaveformQuad, kp: float = GARDNER_KP, ki: float = GARDNER_KI,
                    rolloff: float = DEFAULT_ROLLOFF, settle_fraction: float = 0.25,
                    numba=None) -> TimingEstimate:
    """Run the Gardner loop on a matched-filtered copy and fit the strobes."""
    sps = wave.samples_per_symbol
    if sps != 2:
        raise ValueError("clock recovery runs at 2 samples per symbol")
    mf = filter_same(wave.rails(), rrc_taps(rolloff, 2, DEFAULT_SPAN))
    power = np.mean(mf ** 2) * 2
    if not power > 0:
        raise ConvergenceError("clock recovery: no signal power")
    z = mf / math.sqrt(power)
    max_sym = wave.n_samples // 2
    times, _ = _kernels.gardner(z, 2.0, kp, ki, max_sym, numba=numba)
    if times.size < 64 or not np.all(np.isfinite(times)):
        raise ConvergenceError("clock recovery: timing loop produced no usable strobes")
    m = np.arange(times.size)
    settle = int(times.size * settle_fraction)
    slope, intercept = np.polyfit(m[settle:], times[settle:], 1)
    resid = times[settle:] - (intercept + slope * m[settle:])
    rms = float(np.sqrt(np.mean(resid ** 2)))
    if not rms <= TIMING_RESIDUAL_MAX or not 1.9 < slope < 2.1:
        raise ConvergenceError(f"clock recovery: strobe residual {rms:.3g} samples, period {slope:.6g}")
    ppm = (2.0 / slope - 1.0) * 1e6
    if abs(ppm) * 1e-6 * wave.n_samples < TIMING_GRID:
        slope, ppm = 2.0, 0.0
    tau0 = intercept - round(intercept / slope) * slope
    tau0 = round(tau0 / TIMING_GRID) * TIMING_GRID
    return TimingEstimate(tau0=float(tau0), period=float(slope), ppm=float(ppm), residual=rms,
                          n_strobes=int(times.size), settle=settle)


def retime(wave: WaveformQuad, est: TimingEstimate, numba=None) -> WaveformQuad:
    """Resample the raw rails onto the recovered 2 samples/symbol grid."""
    step = est.period / 2.0
    last = wave.n_samples - 1
    count = int(math.floor((last - est.tau0) / step)) + 1
    t = est.tau0 + np.arange(count) * step
    return wave.with_rails(_kernels.resample_at(wave.rails(), t, numba=numba))


def clock_recovery(wave: WaveformQuad, kp: float = GARDNER_KP, ki: float = GARDNER_KI,
                   rolloff: float = DEFAULT_ROLLOFF, numba=None) -> WaveformQuad:
    """Gardner timing recovery followed by fractional resampling."""
    return retime(wave, timing_estimate(wave, kp, ki, rolloff, numba=numba), numba=numba)


# -- adaptive equalizer ------------------------------------------------------------


def stokes_demux(pols: np.ndarray) -> np.ndarray:
    """Blind 2x2 unitary demultiplexer from the Stokes-space cloud.

    Independent equal-power polarization tributaries fill a lens-shaped
    Stokes cloud whose axis of least spread points along the transmitted X
    state.  The sign of that axis is chosen towards +S1 so a near-identity
    channel is not reported as swapped.
    """
    x, y = pols
    s = np.vstack([np.abs(x) ** 2 - np.abs(y) ** 2, 2 * np.real(x * np.conj(y)),
                   -2 * np.imag(x * np.conj(y))])
    s = s - s.mean(axis=1, keepdims=True)
    vals, vecs = np.linalg.eigh(s @ s.T)
    n = vecs[:, 0]
    if n[0] < 0:
        n = -n
    theta = math.acos(max(-1.0, min(1.0, n[0])))
    phi = math.atan2(n[2], n[1])
    a = math.cos(theta / 2)
    b = np.exp(1j * phi) * math.sin(theta / 2)
    return np.array([[a, np.conj(b)], [-b, a]])


def _real_mimo(m: np.ndarray) -> np.ndarray:
    """Real 4x4 form of a complex 2x2 matrix acting on (xi, xq, yi, yq)."""
    out = np.zeros((4, 4))
    for i in range(2):
        for j in range(2):
            c = m[i, j]
            out[2 * i:2 * i + 2, 2 * j:2 * j + 2] = [[c.real, -c.imag], [c.imag, c.real]]
    return out


@dataclass
class EqualizerOutput:
    """Equalized complex symbols (2, n) plus the adaptive state for diagnostics."""

    symbols: np.ndarray
    taps: np.ndarray
    error: np.ndarray
    phase_track: np.ndarray
    n_train: int

    def tap_energy(self) -> np.ndarray:
        """Energy of each of the 16 real sub-filters, shape (4, 4)."""
        return np.sum(self.taps ** 2, axis=2)


def cmma_equalize(wave_at_1sps: WaveformQuad, taps_per_filter: int = 21, step_size: float = 1e-3,
                  n_train: int = 4000, n_cma: Optional[int] = None, order: int = 16,
                  pll_gain: float = 0.1, dd_nmse_max: float = 0.1, init: str = "stokes",
                  numba=None) -> EqualizerOutput:
    """Real 4x4 MIMO equalizer: CMA, then ring-directed multi-modulus, then decision-directed.

    The decision-directed stage carries its own first-order phase tracker,
    seeded from the fourth-power estimate of the last training outputs, and
    the returned symbols are derotated by it.

    ``init="stokes"`` seeds the centre taps with :func:`stokes_demux` over
    the training block; plain CMA started from identity stalls on the saddle
    near a 45 degree rotation.  ``init="identity"`` keeps the unit centre taps.
    """
    if taps_per_filter % 2 == 0 or taps_per_filter < 1:
        raise ValueError("taps_per_filter must be odd")
    if not step_size > 0:
        raise ValueError("step_size must be positive")
    if wave_at_1sps.samples_per_symbol != 1:
        raise ValueError("equalizer expects 1 sample per symbol")
    if n_cma is None:
        n_cma = n_train // 4
    r = wave_at_1sps.rails()
    n = r.shape[1]
    p = np.mean(r[0] ** 2 + r[1] ** 2), np.mean(r[2] ** 2 + r[3] ** 2)
    if not (p[0] > 0 and p[1] > 0):
        raise ConvergenceError("equalizer: empty polarization")
    r = r / np.sqrt(np.repeat(p, 2))[:, None]
    c = (taps_per_filter - 1) // 2
    xp = np.pad(r, ((0, 0), (c, c)))
    w = np.zeros((4, 4, taps_per_filter))
    if init == "stokes":
        head = r[:, :max(n_train, 256)]
        w[:, :, c] = _real_mimo(stokes_demux(head[0::2] + 1j * head[1::2]))
    elif init == "identity":
        w[:, :, c] = np.eye(4)
    else:
        raise ValueError(f"unknown equalizer init {init!r}")
    y, err, track = _kernels.cmma(xp, w, n, step_size, n_cma, n_train, cma_radius2(order), ring_radii(order),
                                  axis_levels(order), pll_gain, numba=numba)
    if y.shape[1] < n or not np.all(np.isfinite(err)):
        raise ConvergenceError("equalizer: error power diverged")
    pols = y[0::2] + 1j * y[1::2]
    if n > n_train:
        # error-to-signal ratio of the decision-directed tail; a stage that
        # never converged sits near the uniform-cell limit with shrunken output
        lo = max(n_train, n - 2048)
        nmse = float(np.sum(err[lo:]) / np.sum(np.abs(pols[:, lo:]) ** 2))
        if not nmse <= dd_nmse_max:
            raise ConvergenceError(f"equalizer: decision-directed error ratio {nmse:.3g} above {dd_nmse_max}")
    pols = pols * np.exp(-1j * track)
    return EqualizerOutput(symbols=pols, taps=w, error=err, phase_track=track, n_train=n_train)


# -- frame sync and phase -------------------------------------------------------------


@dataclass(frozen=True)
class Alignment:
    lag: int
    swapped: bool
    metric: float


def align_to_frame(symbols: np.ndarray, frame: SymbolFrame, max_lag: int = 16) -> tuple[np.ndarray, Alignment]:
    """Find the symbol lag and polarization order that best match the pilots.

    Returns streams of the frame's length (zero-filled where the received
    stream ran short) and the alignment found.
    """
    pos = frame.pilot_positions
    n = symbols.shape[1]
    best = None
    for swapped in (False, True):
        order = (1, 0) if swapped else (0, 1)
        for lag in range(-max_lag, max_lag + 1):
            idx = pos + lag
            ok = (idx >= 0) & (idx < n)
            if ok.sum() < max(1, pos.size // 2):
                continue
            metric = 0.0
            for p in range(2):
                corr = np.sum(symbols[order[p], idx[ok]] * np.conj(frame.pilot_values[p, ok]))
                metric += abs(corr) / ok.sum()
            if best is None or metric > best.metric:
                best = Alignment(lag=lag, swapped=swapped, metric=float(metric))
    if best is None:
        raise DspError("frame alignment: too few pilots")
    src = symbols[::-1] if best.swapped else symbols
    out = np.zeros((2, frame.n_symbols), dtype=complex)
    k = np.arange(frame.n_symbols) + best.lag
    ok = (k >= 0) & (k < n)
    out[:, ok] = src[:, k[ok]]
    return out, best


@dataclass
class PhaseRecovery:
    symbols: np.ndarray
    phase: np.ndarray
    cycle_slip: bool
    max_pilot_jump: float
    pilot_residual_rms: float = 0.0


CYCLE_SLIP_RAD = math.pi / 4


def pilot_phase_recovery(symbols: np.ndarray, frame: SymbolFrame) -> PhaseRecovery:
    """Interpolate the pilot phase across the frame and derotate.

    Phases between pilots are linear; outside the first and last pilot they
    are held.  Each interior pilot is also predicted from its two neighbours;
    ``cycle_slip`` is set when the RMS of that prediction residual exceeds
    pi/4, which means the spacing is too coarse for the phase noise and the
    unwrap can no longer be trusted.  The largest single step between
    consecutive pilots is reported as ``max_pilot_jump``.
    """
    pos = frame.pilot_positions
    if pos.size == 0:
        raise DspError("phase recovery: frame has no pilots")
    n = symbols.shape[1]
    phase = np.zeros((2, n))
    jump = 0.0
    resid = []
    for p in range(2):
        est = np.angle(symbols[p, pos] * np.conj(frame.pilot_values[p]))
        est = np.unwrap(est)
        if est.size > 1:
            jump = max(jump, float(np.max(np.abs(np.diff(est)))))
        if est.size > 2:
            w = (pos[1:-1] - pos[:-2]) / (pos[2:] - pos[:-2])
            resid.append(est[1:-1] - ((1 - w) * est[:-2] + w * est[2:]))
        phase[p] = np.interp(np.arange(n), pos, est)
    rms = float(np.sqrt(np.mean(np.concatenate(resid) ** 2))) if resid else 0.0
    out = symbols * np.exp(-1j * phase)
    return PhaseRecovery(symbols=out, phase=phase, cycle_slip=rms > CYCLE_SLIP_RAD,
                         max_pilot_jump=jump, pilot_residual_rms=rms)


# -- BER --------------------------------------------------------------------------------


@dataclass
class BerReport:
    bit_errors: int
    bits: int
    ber: float
    pre_fec_ok: bool
    evm_percent: float
    constellation_dump: Optional[list] = None
    diagnostics: dict = field(default_factory=dict)


def ber_count(symbols: np.ndarray, frame: SymbolFrame, discard: int = 0,
              fec_threshold: float = HD_FEC_BER) -> BerReport:
    """Count bit errors on data symbols at index >= ``discard``."""
    symbols = np.asarray(symbols)
    if symbols.shape != frame.symbols.shape:
        raise ValueError(f"length mismatch: received {symbols.shape}, frame {frame.symbols.shape}")
    mask = frame.data_mask.copy()
    mask[:discard] = False
    rx = symbols[:, mask]
    tx = frame.symbols[:, mask]
    rx_bits = labels_to_bits(decide_labels(rx, frame.order), frame.order)
    tx_bits = labels_to_bits(decide_labels(tx, frame.order), frame.order)
    errors = int(np.count_nonzero(rx_bits != tx_bits))
    bits = int(tx.size * bits_per_symbol(frame.order))
    ber = errors / bits if bits else 0.0
    ref = np.mean(np.abs(tx) ** 2) if tx.size else 1.0
    evm = 100 * math.sqrt(np.mean(np.abs(rx - tx) ** 2) / ref) if tx.size else 0.0
    return BerReport(bit_errors=errors, bits=bits, ber=ber, pre_fec_ok=ber <= fec_threshold, evm_percent=evm)
