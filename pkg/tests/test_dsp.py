import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import brentq
from scipy.special import erfc

from qsdci.dsp import (STAGES, DspConfig, ImpairmentError, ImpairmentSpec, StageError, SymbolFrame, WaveformQuad,
                       apply_impairments, ber_count, clock_recovery, cmma_equalize, generate_frame, gsop,
                       matched_filter_downsample, pilot_phase_recovery, resample_rational, rrc_taps, run_chain,
                       timing_estimate, tx_waveform, write_constellation_csv)
from qsdci.dsp.qam import axis_levels, constellation, decide_labels, labels_to_bits, ring_radii
from qsdci.dsp.receiver import CYCLE_SLIP_RAD, gram_matrix
from qsdci.dsp.impairments import wiener_phase

SPAN = 128
GUARD = SPAN // 2


def _q(x):
    return 0.5 * erfc(x / math.sqrt(2))


def qam16_ber(es_n0):
    """Gray 16-QAM bit error rate on AWGN, including the second-neighbour terms."""
    a = 1 / math.sqrt(10)
    s = math.sqrt(1 / (2 * es_n0))
    return (3 * _q(a / s) + 2 * _q(3 * a / s) - _q(5 * a / s)) / 4


def _strip(wave, sps, n):
    return wave.pols()[:, GUARD * sps:(GUARD + n) * sps:sps]


# -- frames -------------------------------------------------------------------------

def test_empty_frame():
    f = generate_frame(n_symbols=0)
    assert f.symbols.shape == (2, 0) and f.pilot_positions.size == 0


@pytest.mark.parametrize("order", [4, 16, 64])
def test_frame_power_near_unity(order):
    n = 2 ** 14
    f = generate_frame(order, n, seed=4)
    data = f.symbols[:, f.data_mask]
    assert abs(np.mean(np.abs(data) ** 2) - 1) <= 2 / math.sqrt(n)
    assert abs(np.mean(np.abs(constellation(order)) ** 2) - 1) < 1e-12


def test_frame_deterministic_and_pilots_increasing():
    a, b = generate_frame(seed=9), generate_frame(seed=9)
    assert np.array_equal(a.symbols, b.symbols)
    assert np.all(np.diff(a.pilot_positions) > 0)
    assert not np.array_equal(a.symbols, generate_frame(seed=10).symbols)


def test_frame_rejects_bad_order():
    with pytest.raises(ValueError):
        generate_frame(order=8)
    with pytest.raises(ValueError):
        generate_frame(pilot_spacing=1)


def test_ring_radii_of_unit_power_16qam():
    assert np.allclose(ring_radii(16), np.sqrt([2, 10, 18]) / math.sqrt(10), atol=1e-15)


# -- pulse shaping ----------------------------------------------------------------------

def test_rrc_taps_symmetric_and_unit_energy():
    for beta in (0.05, 0.25, 0.5, 1.0):
        h = rrc_taps(beta, 2, SPAN)
        assert np.allclose(h, h[::-1], atol=1e-15)
        assert abs(np.sum(h ** 2) - 1) <= 1e-9


def test_rrc_singular_points_finite():
    # beta = 0.25 at sps 4 puts t = T/(4 beta) exactly on a sample
    h = rrc_taps(0.25, 4, 32)
    assert np.all(np.isfinite(h))
    t = (np.arange(h.size) - h.size // 2) / 4
    near = np.abs(np.abs(t) - 1.0) < 0.3
    assert np.all(np.diff(h[near][:3]) != 0)


@pytest.mark.parametrize("sps", [2, 4])
def test_rrc_pair_zero_isi(sps):
    h = rrc_taps(0.05, sps, SPAN)
    g = np.convolve(h, h)
    c = g.size // 2
    lags = g[c % sps::sps]
    peak = g[c]
    isi = np.delete(lags, c // sps)
    assert np.max(np.abs(isi)) <= 1e-3 * peak


def test_tx_impulse_response_is_tap_vector():
    n = 257
    sym = np.zeros((2, n), dtype=complex)
    sym[0, n // 2] = 1
    frame = SymbolFrame(16, sym, np.array([0]), np.zeros((2, 1)), 0)
    w = tx_waveform(frame, 0.05, 2, SPAN)
    h = rrc_taps(0.05, 2, SPAN)
    c = n // 2 * 2
    seg = w.xi[c - h.size // 2:c + h.size // 2 + 1]
    assert np.allclose(seg, h, atol=1e-15)
    assert np.all(w.yi == 0) and np.all(w.xq == 0)


def test_tx_power_scales_with_symbol_power():
    f = generate_frame(n_symbols=2048, seed=2)
    w1 = tx_waveform(f, guard_symbols=GUARD)
    w3 = tx_waveform(replace(f, symbols=f.symbols * 3), guard_symbols=GUARD)
    assert np.allclose(w3.power(), 9 * w1.power(), rtol=1e-12)


def test_matched_filter_loopback_exact_spectrum():
    f = generate_frame(n_symbols=4096, seed=1)
    w = tx_waveform(f, method="fft")
    for sps_out in (2, 1):
        m = matched_filter_downsample(w, sps_out=sps_out, method="fft")
        got = m.pols()[:, ::sps_out]
        assert np.max(np.abs(got - f.symbols)) < 1e-6


def test_matched_filter_loopback_truncated_taps():
    f = generate_frame(n_symbols=4096, seed=1)
    w = tx_waveform(f, guard_symbols=GUARD)
    m = matched_filter_downsample(w, sps_out=2)
    # limited by the truncation ISI of the finite tap vector
    assert np.max(np.abs(_strip(m, 2, 4096) - f.symbols)) < 5e-3


def test_matched_filter_preserves_impulse_energy():
    x = np.zeros(4 * SPAN + 1)
    x[x.size // 2] = 1
    w = WaveformQuad(x, x * 0, x * 0, x * 0, 2e9, 2)
    out = matched_filter_downsample(w, sps_out=2)
    assert abs(np.sum(out.xi ** 2) - 1) <= 1e-6


def test_rational_resampler_roundtrip():
    rng = np.random.default_rng(0)
    n = 9000
    spec = np.zeros(n // 2 + 1, dtype=complex)
    keep = int(0.4 * (n // 2))  # well inside the 5/9 band
    spec[1:keep] = rng.normal(size=keep - 1) + 1j * rng.normal(size=keep - 1)
    x = np.fft.irfft(spec, n)
    x /= np.std(x)
    up = resample_rational(x, 9, 5)
    assert up.size == n * 9 // 5
    back = resample_rational(up, 5, 9)
    edge = 400
    assert np.max(np.abs(back[edge:-edge] - x[edge:-edge])) < 1e-4


# -- impairments -----------------------------------------------------------------------

def _wave(n=2 ** 14, seed=0):
    return tx_waveform(generate_frame(n_symbols=n, seed=seed), guard_symbols=GUARD)


def test_ideal_impairments_are_identity():
    w = _wave(1024)
    out = apply_impairments(w, ImpairmentSpec(), seed=3)
    assert np.array_equal(out.rails(), w.rails())


def test_awgn_hits_requested_snr():
    w = _wave(2 ** 16)
    for snr in (5.0, 15.0, 25.0):
        out = apply_impairments(w, ImpairmentSpec(snr_db=snr), seed=1)
        noise = out.rails() - w.rails()
        measured = 10 * math.log10(np.sum(w.power()) / np.sum(np.mean(noise ** 2, axis=1)))
        assert measured == pytest.approx(snr, abs=0.1)


def test_wiener_increment_variance():
    fs, lw = 2e9, 100e3
    x = np.ones(2 ** 20)
    w = WaveformQuad(x, 0 * x, x, 0 * x, fs, 2)
    out = apply_impairments(w, ImpairmentSpec(linewidth_hz=lw), seed=8)
    dphi = np.diff(np.unwrap(np.angle(out.pols()[0])))
    assert np.var(dphi) == pytest.approx(2 * math.pi * lw / fs, rel=0.05)
    # rotation is common to both polarizations
    assert np.allclose(out.pols()[0], out.pols()[1])


def test_impairments_reproducible_per_seed():
    w = _wave(2048)
    spec = ImpairmentSpec(snr_db=15, linewidth_hz=1e5, clock_offset_ppm=30, pol_rotation_rad=0.3)
    a, b = apply_impairments(w, spec, 4), apply_impairments(w, spec, 4)
    assert np.array_equal(a.rails(), b.rails())
    assert not np.array_equal(a.rails(), apply_impairments(w, spec, 5).rails())


def test_aliasing_clock_offset_rejected():
    w = _wave(512)
    with pytest.raises(ImpairmentError):
        apply_impairments(w, ImpairmentSpec(clock_offset_ppm=1e6), 0)
    with pytest.raises(ImpairmentError):
        apply_impairments(w, ImpairmentSpec(freq_offset_hz=1.5e9), 0)


# -- Gram-Schmidt ------------------------------------------------------------------------

def _skewed(deg, n=50_000, seed=0):
    rng = np.random.default_rng(seed)
    i, q = rng.normal(size=(2, n))
    th = math.radians(deg)
    q_skew = 0.7 * (math.cos(th) * q + math.sin(th) * i)
    return WaveformQuad(1.3 * i, q_skew, 0.4 * q, 2.0 * i - q, 2e9, 2)


def test_gsop_gram_identity_under_skew():
    out = gsop(_skewed(10.0))
    for pol in (0, 1):
        assert np.allclose(gram_matrix(out, pol), np.eye(2), atol=1e-9, rtol=0)
    assert np.allclose(out.power(), 1.0, atol=1e-9)


@given(st.floats(-80.0, 80.0), st.integers(0, 2 ** 16))
@settings(max_examples=30, deadline=None)
def test_gsop_gram_identity_any_full_rank(deg, seed):
    out = gsop(_skewed(deg, n=4096, seed=seed))
    for pol in (0, 1):
        assert np.allclose(gram_matrix(out, pol), np.eye(2), atol=1e-9, rtol=0)


def test_gsop_keeps_orthonormal_input():
    rng = np.random.default_rng(1)
    n = 4096
    basis, _ = np.linalg.qr(rng.normal(size=(n, 4)))
    r = basis.T * math.sqrt(n)
    w = WaveformQuad(*r, 2e9, 2)
    assert np.allclose(gsop(w).rails(), r, atol=1e-9)


def test_gsop_zero_rail_rejected():
    x = np.ones(64)
    with pytest.raises(Exception):
        gsop(WaveformQuad(0 * x, x, x, -x * 0.5 + 1, 2e9, 2))


# -- clock recovery ---------------------------------------------------------------------

def test_clock_recovery_identity_at_zero_ppm():
    w = _wave(2 ** 14)
    out = clock_recovery(w)
    n = min(out.n_samples, w.n_samples)
    assert np.max(np.abs(out.rails()[:, :n] - w.rails()[:, :n])) < 1e-6


@pytest.mark.parametrize("ppm", [-100, -50, 50, 100])
def test_clock_offset_estimated(ppm):
    w = apply_impairments(_wave(2 ** 15, seed=1), ImpairmentSpec(snr_db=20, clock_offset_ppm=ppm), 2)
    est = timing_estimate(gsop(w))
    assert est.ppm == pytest.approx(ppm, abs=3)


@pytest.mark.parametrize("snr", [20, 14])
def test_clock_offset_costs_little_ber(snr):
    f = generate_frame(n_symbols=2 ** 15, seed=3)
    ref = run_chain(f, ImpairmentSpec(snr_db=snr), seed=5)
    res = {}
    for ppm in (50, -50):
        r = run_chain(f, ImpairmentSpec(snr_db=snr, clock_offset_ppm=ppm), seed=5)
        assert r.ber <= 2 * ref.ber
        res[ppm] = r.diagnostics["timing_residual"]
    # the loop wanders by the same amount either way
    assert 0.5 <= res[50] / res[-50] <= 2.0


# -- equalizer ------------------------------------------------------------------------------

def _one_sps(wave):
    return matched_filter_downsample(wave, sps_out=1)


def test_identity_channel_taps_are_diagonal():
    eq = cmma_equalize(_one_sps(_wave(2 ** 14)))
    e = eq.tap_energy()
    off = e.sum() - np.trace(e)
    assert off < 0.01 * e.sum()
    c = eq.taps.shape[2] // 2
    for k in range(4):
        assert np.argmax(np.abs(eq.taps[k, k])) == c


def test_pure_rotation_is_undone():
    f = generate_frame(n_symbols=2 ** 14, seed=6)
    r = run_chain(f, ImpairmentSpec(pol_rotation_rad=math.radians(30)), seed=1)
    assert r.bit_errors == 0


def test_equalizer_rejects_even_taps():
    with pytest.raises(ValueError):
        cmma_equalize(_one_sps(_wave(1024)), taps_per_filter=20)


# -- phase recovery ----------------------------------------------------------------------

def test_constant_phase_removed():
    f = generate_frame(n_symbols=4096, seed=2)
    ph = pilot_phase_recovery(f.symbols * np.exp(1j * 0.7), f)
    assert np.max(np.abs(ph.symbols - f.symbols)) < 1e-9
    assert not ph.cycle_slip


def test_coarse_pilots_flag_cycle_slip():
    f = generate_frame(n_symbols=2 ** 14, pilot_spacing=64, seed=2)
    rng = np.random.default_rng(0)
    theta = wiener_phase(f.n_symbols, 20e6, 1e9, rng)
    ph = pilot_phase_recovery(f.symbols * np.exp(1j * theta), f)
    assert ph.cycle_slip and ph.pilot_residual_rms > CYCLE_SLIP_RAD


def test_zero_phase_is_identity():
    f = generate_frame(n_symbols=4096, seed=2)
    assert np.array_equal(pilot_phase_recovery(f.symbols, f).symbols, f.symbols)


def _es_n0_for(ber):
    return brentq(lambda x: qam16_ber(10 ** (x / 10)) - ber, 0.0, 30.0)


def test_pilot_tracking_penalty_against_genie():
    f = generate_frame(n_symbols=2 ** 17, seed=12)
    rng = np.random.default_rng(3)
    es_n0 = 10 ** (15 / 10)
    theta = wiener_phase(f.n_symbols, 100e3, 1e9, rng)
    noise = (rng.normal(size=f.symbols.shape) + 1j * rng.normal(size=f.symbols.shape)) / math.sqrt(2 * es_n0)
    rx = f.symbols * np.exp(1j * theta) + noise
    genie = ber_count(rx * np.exp(-1j * theta), f)
    ph = pilot_phase_recovery(rx, f)
    piloted = ber_count(ph.symbols, f)
    assert not ph.cycle_slip and ph.pilot_residual_rms < CYCLE_SLIP_RAD / 2
    # tracking error between pilots stays well inside the slip threshold
    err = np.angle(np.exp(1j * (ph.phase - theta)))
    assert np.var(err) < CYCLE_SLIP_RAD ** 2 / 10
    penalty = _es_n0_for(piloted.ber) - _es_n0_for(genie.ber)
    assert penalty < 0.5


# -- BER counting ------------------------------------------------------------------------------

def test_ber_identical_streams():
    f = generate_frame(n_symbols=2048, seed=1)
    r = ber_count(f.symbols, f)
    assert r.bit_errors == 0 and r.ber == 0 and r.pre_fec_ok and r.evm_percent == 0


def test_adjacent_decision_flip_costs_one_bit():
    f = generate_frame(n_symbols=2048, seed=1)
    step = 2 * axis_levels(16)[0] - 2 * axis_levels(16)[0] + (axis_levels(16)[1] - axis_levels(16)[0])
    k = int(np.flatnonzero(f.data_mask)[5])
    for delta in (step, -step, 1j * step, -1j * step):
        rx = f.symbols.copy()
        moved = rx[0, k] + delta
        if np.max(np.abs([moved.real, moved.imag])) > axis_levels(16)[-1] + 1e-9:
            continue
        rx[0, k] = moved
        r = ber_count(rx, f)
        assert r.bit_errors == 1
        assert r.ber == 1 / r.bits


def test_gray_neighbours_differ_in_one_bit():
    pts = constellation(16)
    bits = labels_to_bits(decide_labels(pts, 16), 16)
    d = np.abs(pts[:, None] - pts[None, :])
    dmin = np.min(d[d > 0])
    for i, j in zip(*np.nonzero(np.isclose(d, dmin))):
        assert np.sum(bits[i] != bits[j]) == 1


def test_ber_length_mismatch():
    f = generate_frame(n_symbols=128)
    with pytest.raises(ValueError):
        ber_count(f.symbols[:, :-1], f)


def test_awgn_ber_matches_closed_form():
    n = 2 ** 17
    f = generate_frame(n_symbols=n, seed=21)
    es_n0_db = 18.0
    snr_per_sample = es_n0_db - 10 * math.log10(2)
    w = apply_impairments(tx_waveform(f, guard_symbols=GUARD), ImpairmentSpec(snr_db=snr_per_sample), seed=4)
    rx = _strip(matched_filter_downsample(w, sps_out=2), 2, n)
    r = ber_count(rx, f)
    # the frame carries a little extra power in its corner pilots
    es = np.mean(np.abs(f.symbols) ** 2)
    p = qam16_ber(10 ** (es_n0_db / 10) / es)
    sigma = math.sqrt(p * (1 - p) / r.bits)
    assert abs(r.ber - p) <= 3 * sigma


# -- full chain ------------------------------------------------------------------------------

def test_noiseless_chain_is_error_free():
    r = run_chain(generate_frame(seed=0))
    assert r.bit_errors == 0 and r.bits > 0


def test_impaired_chain_below_threshold():
    spec = ImpairmentSpec(snr_db=20, linewidth_hz=100e3, pol_rotation_rad=math.radians(30), clock_offset_ppm=50)
    r = run_chain(generate_frame(seed=0), spec, seed=1)
    assert r.ber < 1e-3 and r.pre_fec_ok
    for key in ("tx_power", "rx_power", "timing_ppm", "tap_norm", "phase_track_std_rad"):
        assert key in r.diagnostics


def test_frequency_offset_fails_equalizer():
    with pytest.raises(StageError) as info:
        run_chain(generate_frame(seed=0), ImpairmentSpec(snr_db=20, freq_offset_hz=500e6), seed=1)
    assert info.value.stage == "cmma_equalize"
    assert info.value.convergence


def test_zero_offset_passes_where_offset_fails():
    r = run_chain(generate_frame(seed=0), ImpairmentSpec(snr_db=20, freq_offset_hz=0.0), seed=1)
    assert r.ber < 1e-3


def test_chain_deterministic():
    spec = ImpairmentSpec(snr_db=16, linewidth_hz=100e3, pol_rotation_rad=0.4, clock_offset_ppm=-20)
    a = run_chain(generate_frame(seed=3), spec, seed=7)
    b = run_chain(generate_frame(seed=3), spec, seed=7)
    assert a.bit_errors == b.bit_errors and a.evm_percent == b.evm_percent
    assert a.diagnostics == b.diagnostics


def test_ber_monotone_in_snr():
    f = generate_frame(seed=0)
    bers = [run_chain(f, ImpairmentSpec(snr_db=s, linewidth_hz=100e3), seed=2).ber for s in range(10, 25, 2)]
    assert all(a >= b for a, b in zip(bers, bers[1:]))
    assert bers[0] > 1e-2


def test_stage_labels_and_dump(tmp_path):
    assert STAGES[0] == "tx_waveform" and STAGES[-1] == "ber_count"
    r = run_chain(generate_frame(n_symbols=2 ** 13, seed=1), config=DspConfig(dump=True, dump_limit=100))
    stages = {row[0] for row in r.constellation_dump}
    assert stages == {"received", "equalized", "recovered"}
    path = tmp_path / "const.csv"
    write_constellation_csv(r.constellation_dump, path)
    lines = path.read_text().splitlines()
    assert lines[0] == "stage,pol,i,q"
    assert len(lines) == 1 + 3 * 2 * 100
