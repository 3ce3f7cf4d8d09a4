import os
import subprocess
import sys

import numpy as np
import pytest

from qsdci import _accel
from qsdci.dsp import (ImpairmentSpec, apply_impairments, cmma_equalize, generate_frame, gsop,
                       matched_filter_downsample, timing_estimate, tx_waveform)
from qsdci.dsp import _kernels

needs_numba = pytest.mark.skipif(not _accel.HAVE_NUMBA, reason="numba unavailable or disabled")


def _impaired(n=2 ** 13, seed=0):
    w = tx_waveform(generate_frame(n_symbols=n, seed=seed), guard_symbols=64)
    return apply_impairments(w, ImpairmentSpec(snr_db=18, clock_offset_ppm=40, pol_rotation_rad=0.5), seed)


@needs_numba
def test_resampler_backends_agree():
    rng = np.random.default_rng(0)
    x = rng.normal(size=(4, 3000))
    t = np.sort(rng.uniform(-5, 3005, size=4000))
    a = _kernels.resample_at(x, t, numba=True)
    b = _kernels.resample_at(x, t, numba=False)
    assert np.allclose(a, b, rtol=0, atol=1e-12)


@needs_numba
def test_gardner_backends_agree():
    z = gsop(_impaired()).rails()
    ta, ea = _kernels.gardner(z, 2.0, 1e-3, 1e-6, z.shape[1] // 2, numba=True)
    tb, eb = _kernels.gardner(z, 2.0, 1e-3, 1e-6, z.shape[1] // 2, numba=False)
    assert ta.shape == tb.shape
    assert np.allclose(ta, tb, rtol=0, atol=1e-9)
    assert timing_estimate(gsop(_impaired()), numba=True).ppm == pytest.approx(
        timing_estimate(gsop(_impaired()), numba=False).ppm, abs=1e-6)


@needs_numba
def test_equalizer_backends_agree():
    w = matched_filter_downsample(_impaired(2 ** 13, 2), sps_out=1)
    a = cmma_equalize(w, numba=True)
    b = cmma_equalize(w, numba=False)
    assert np.allclose(a.symbols, b.symbols, rtol=0, atol=1e-8)
    assert np.allclose(a.taps, b.taps, rtol=0, atol=1e-8)


def test_use_numba_resolution():
    assert _accel.use_numba(False) is False
    assert _accel.use_numba(None) == _accel.HAVE_NUMBA
    assert _accel.use_numba(True) == _accel.HAVE_NUMBA


def test_disable_flag_forces_numpy():
    env = dict(os.environ, QSDCI_DISABLE_NUMBA="1")
    code = ("from qsdci import _accel; from qsdci.dsp import run_chain, generate_frame;"
            "assert not _accel.HAVE_NUMBA;"
            "r = run_chain(generate_frame(n_symbols=8192, seed=1)); print(r.bit_errors)")
    r = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, timeout=300)
    assert r.returncode == 0, r.stderr
    assert r.stdout.strip() == "0"
