"""Seeded channel impairments applied to a four-rail waveform."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ._kernels import resample_at
from .waveform import WaveformQuad


class ImpairmentError(ValueError):
    pass


@dataclass(frozen=True)
class ImpairmentSpec:
    """Impairment parameters; the defaults describe an ideal channel.

    ``snr_db`` is the signal-to-noise ratio per sample (so Es/N0 is higher by
    the oversampling factor).  ``linewidth_hz`` is the combined linewidth seen
    after detection.
    """

    snr_db: float = math.inf
    linewidth_hz: float = 0.0
    freq_offset_hz: float = 0.0
    clock_offset_ppm: float = 0.0
    pol_rotation_rad: float = 0.0
    iq_skew_samples: float = 0.0

    def __post_init__(self):
        if math.isnan(self.snr_db) or self.snr_db == -math.inf:
            raise ImpairmentError("snr_db must be a number or +inf")
        if self.linewidth_hz < 0:
            raise ImpairmentError("linewidth_hz must be non-negative")


def rotate_polarization(pols: np.ndarray, theta: float) -> np.ndarray:
    c, s = math.cos(theta), math.sin(theta)
    jones = np.array([[c, -s], [s, c]])
    return jones @ pols


def wiener_phase(n: int, linewidth_hz: float, sample_rate_hz: float, rng) -> np.ndarray:
    """Phase walk whose increments have variance 2*pi*linewidth/fs."""
    if linewidth_hz == 0 or n == 0:
        return np.zeros(n)
    sigma = math.sqrt(2 * math.pi * linewidth_hz / sample_rate_hz)
    return np.cumsum(rng.normal(0.0, sigma, n))


def clock_offset_times(n: int, ppm: float) -> np.ndarray:
    """Sample instants (in input samples) of a receiver clock ``ppm`` fast or slow."""
    step = 1.0 + ppm * 1e-6
    count = int(math.floor((n - 1) / step)) + 1 if n else 0
    return np.arange(count) * step


def apply_impairments(wave: WaveformQuad, spec: ImpairmentSpec, seed: int = 0) -> WaveformQuad:
    """Rotation, phase noise, frequency offset, clock offset, IQ skew, then AWGN."""
    fs = wave.sample_rate_hz
    if abs(spec.freq_offset_hz) >= fs / 2:
        raise ImpairmentError("frequency offset beyond the sampling Nyquist limit")
    step = 1.0 + spec.clock_offset_ppm * 1e-6
    if step <= 0:
        raise ImpairmentError("clock offset must leave a positive sampling rate")
    rolloff = 1.0 if wave.rolloff is None else wave.rolloff
    occupied = wave.baud * (1 + rolloff)
    if occupied > fs / step:
        raise ImpairmentError(
            f"clock offset {spec.clock_offset_ppm} ppm aliases a {occupied:.3g} Hz wide signal")
    rng = np.random.default_rng(seed)
    n = wave.n_samples
    pols = wave.pols()
    if spec.pol_rotation_rad:
        pols = rotate_polarization(pols, spec.pol_rotation_rad)
    phase = wiener_phase(n, spec.linewidth_hz, fs, rng)
    if spec.freq_offset_hz:
        phase = phase + 2 * math.pi * spec.freq_offset_hz / fs * np.arange(n)
    if np.any(phase):
        pols = pols * np.exp(1j * phase)[None, :]
    rails = np.vstack([pols[0].real, pols[0].imag, pols[1].real, pols[1].imag])
    if spec.clock_offset_ppm:
        rails = resample_at(rails, clock_offset_times(n, spec.clock_offset_ppm))
    if spec.iq_skew_samples:
        t = np.arange(rails.shape[1]) - spec.iq_skew_samples
        rails[1::2] = resample_at(rails[1::2], t)
    if math.isfinite(spec.snr_db):
        pols_now = rails[0::2] + 1j * rails[1::2]
        p_sig = float(np.mean(np.abs(pols_now) ** 2))
        sigma = math.sqrt(p_sig / 10 ** (spec.snr_db / 10) / 2)
        rails = rails + rng.normal(0.0, sigma, rails.shape)
    return wave.with_rails(rails)
