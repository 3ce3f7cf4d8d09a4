"""Four-rail sampled waveforms, RRC pulse shaping and rational resampling."""
from __future__ import annotations

from dataclasses import dataclass, replace
from fractions import Fraction
from typing import Optional

import numpy as np
from scipy.signal import firwin, resample_poly

from .qam import SymbolFrame

DEFAULT_BAUD = 1e9
DEFAULT_ROLLOFF = 0.05
DEFAULT_SPAN = 128


@dataclass(frozen=True)
class WaveformQuad:
    """X/Y polarization I/Q rails sampled at ``sample_rate_hz``.

    ``rolloff`` records the pulse excess bandwidth when known; impairments use
    it to reject clock offsets that would alias.
    """

    xi: np.ndarray
    xq: np.ndarray
    yi: np.ndarray
    yq: np.ndarray
    sample_rate_hz: float
    samples_per_symbol: Fraction
    rolloff: Optional[float] = None

    def __post_init__(self):
        n = {len(self.xi), len(self.xq), len(self.yi), len(self.yq)}
        if len(n) != 1:
            raise ValueError("all four rails must have equal length")
        object.__setattr__(self, "samples_per_symbol", Fraction(self.samples_per_symbol).limit_denominator(10 ** 6))

    @property
    def baud(self) -> float:
        return self.sample_rate_hz / float(self.samples_per_symbol)

    @property
    def n_samples(self) -> int:
        return len(self.xi)

    def rails(self) -> np.ndarray:
        return np.vstack([self.xi, self.xq, self.yi, self.yq])

    def pols(self) -> np.ndarray:
        """Complex (2, n) view: row 0 is X, row 1 is Y."""
        r = self.rails()
        return r[0::2] + 1j * r[1::2]

    def with_rails(self, rails, **changes) -> "WaveformQuad":
        rails = np.asarray(rails, dtype=np.float64)
        return replace(self, xi=rails[0], xq=rails[1], yi=rails[2], yq=rails[3], **changes)

    def with_pols(self, pols, **changes) -> "WaveformQuad":
        pols = np.asarray(pols)
        return self.with_rails(np.vstack([pols[0].real, pols[0].imag, pols[1].real, pols[1].imag]), **changes)

    @classmethod
    def from_pols(cls, pols, sample_rate_hz, samples_per_symbol, rolloff=None) -> "WaveformQuad":
        pols = np.asarray(pols)
        return cls(pols[0].real.copy(), pols[0].imag.copy(), pols[1].real.copy(), pols[1].imag.copy(),
                   float(sample_rate_hz), Fraction(samples_per_symbol), rolloff)

    def power(self) -> np.ndarray:
        """Mean square of each rail."""
        return np.mean(self.rails() ** 2, axis=1)


def rrc_taps(rolloff: float = DEFAULT_ROLLOFF, samples_per_symbol: int = 2,
             span_symbols: int = DEFAULT_SPAN) -> np.ndarray:
    """Unit-energy root-raised-cosine taps, ``span_symbols * sps + 1`` long."""
    if not 0 < rolloff <= 1:
        raise ValueError("rolloff must be in (0, 1]")
    if span_symbols % 2:
        raise ValueError("span_symbols must be even")
    sps = int(samples_per_symbol)
    if sps != samples_per_symbol or sps < 1:
        raise ValueError("samples_per_symbol must be a positive integer")
    b = rolloff
    half = span_symbols * sps // 2
    t = np.arange(-half, half + 1) / sps
    h = np.empty_like(t)
    at_zero = t == 0
    at_pole = np.isclose(np.abs(4 * b * t), 1.0, rtol=0, atol=1e-12)
    regular = ~(at_zero | at_pole)
    tr = t[regular]
    h[regular] = ((np.sin(np.pi * tr * (1 - b)) + 4 * b * tr * np.cos(np.pi * tr * (1 + b)))
                  / (np.pi * tr * (1 - (4 * b * tr) ** 2)))
    h[at_zero] = 1 - b + 4 * b / np.pi
    h[at_pole] = b / np.sqrt(2) * ((1 + 2 / np.pi) * np.sin(np.pi / (4 * b))
                                   + (1 - 2 / np.pi) * np.cos(np.pi / (4 * b)))
    return h / np.sqrt(np.sum(h ** 2))


def filter_same(x, taps) -> np.ndarray:
    """Zero-delay convolution along the last axis for an odd-length symmetric filter."""
    x = np.asarray(x)
    c = (len(taps) - 1) // 2
    n = x.shape[-1]
    out = np.apply_along_axis(lambda r: np.convolve(r, taps), -1, x)
    return out[..., c:c + n]


def rrc_response(freq, rolloff: float = DEFAULT_ROLLOFF) -> np.ndarray:
    """Root-raised-cosine amplitude at ``freq`` in units of the symbol rate."""
    f = np.abs(np.asarray(freq, dtype=float))
    lo, hi = (1 - rolloff) / 2, (1 + rolloff) / 2
    h = np.zeros_like(f)
    h[f <= lo] = 1.0
    edge = (f > lo) & (f < hi)
    h[edge] = np.sqrt(0.5 * (1 + np.cos(np.pi / rolloff * (f[edge] - lo))))
    return h


def filter_rrc_fft(x, rolloff: float, sps: int) -> np.ndarray:
    """Circular RRC filtering along the last axis with the exact spectrum.

    Scaled to match unit-energy taps, so a cascade of two is a periodic
    Nyquist pulse with unit peak and no truncation ISI.
    """
    x = np.asarray(x)
    n = x.shape[-1]
    if n == 0:
        return x.copy()
    h = rrc_response(np.fft.fftfreq(n, d=1.0 / sps), rolloff) * np.sqrt(sps)
    y = np.fft.ifft(np.fft.fft(x, axis=-1) * h, axis=-1)
    return y if np.iscomplexobj(x) else y.real


def _shape(x, rolloff, sps, span_symbols, method):
    if method == "fir":
        return filter_same(x, rrc_taps(rolloff, sps, span_symbols))
    if method == "fft":
        return filter_rrc_fft(x, rolloff, sps)
    raise ValueError(f"unknown shaping method {method!r}")


def tx_waveform(frame: SymbolFrame, rolloff: float = DEFAULT_ROLLOFF, sps: int = 2,
                span_symbols: int = DEFAULT_SPAN, baud: float = DEFAULT_BAUD,
                guard_symbols: int = 0, method: str = "fir") -> WaveformQuad:
    """Upsample each polarization and shape with RRC.

    Symbol k sits at sample ``(k + guard_symbols) * sps``; the guard adds that
    many silent symbol periods at both ends so the edge pulses are not cut.
    ``method="fft"`` shapes with the exact (circular) spectrum instead of the
    truncated taps.
    """
    if sps < 2:
        raise ValueError("sps must be at least 2")
    if guard_symbols < 0:
        raise ValueError("guard_symbols must be non-negative")
    g = guard_symbols
    up = np.zeros((2, (frame.n_symbols + 2 * g) * sps), dtype=complex)
    up[:, g * sps:(g + frame.n_symbols) * sps:sps] = frame.symbols
    if up.size:
        shaped = _shape(up.real, rolloff, sps, span_symbols, method) \
            + 1j * _shape(up.imag, rolloff, sps, span_symbols, method)
    else:
        shaped = up
    return WaveformQuad.from_pols(shaped, baud * sps, sps, rolloff)


def resample_rational(x, up: int, down: int, beta: float = 10.0, half_len: int = 32) -> np.ndarray:
    """Polyphase rational resampling by ``up/down`` along the last axis."""
    frac = Fraction(up, down)
    up, down = frac.numerator, frac.denominator
    if up == 1 and down == 1:
        return np.array(x, dtype=float, copy=True)
    if up == 1:
        # integer decimation of an already band-limited stream
        return np.asarray(x)[..., ::down].copy()
    n_taps = 2 * half_len * max(up, down) + 1
    cutoff = 1.0 / max(up, down)
    h = firwin(n_taps, cutoff, window=("kaiser", beta))
    return resample_poly(x, up, down, axis=-1, window=h)


def matched_filter_downsample(wave: WaveformQuad, rolloff: float = DEFAULT_ROLLOFF, sps_in=None,
                              sps_out=1, span_symbols: int = DEFAULT_SPAN, method: str = "fir") -> WaveformQuad:
    """RRC matched filter, then resample from ``sps_in`` to ``sps_out`` samples/symbol."""
    sps_in = Fraction(wave.samples_per_symbol if sps_in is None else sps_in)
    sps_out = Fraction(sps_out)
    if sps_out < 1:
        raise ValueError("sps_out must be at least 1")
    if sps_in.denominator != 1:
        raise ValueError("matched filter needs an integer input samples-per-symbol")
    filtered = _shape(wave.rails(), rolloff, int(sps_in), span_symbols, method)
    ratio = sps_out / sps_in
    out = resample_rational(filtered, ratio.numerator, ratio.denominator)
    return wave.with_rails(out, sample_rate_hz=wave.baud * float(sps_out), samples_per_symbol=sps_out)
