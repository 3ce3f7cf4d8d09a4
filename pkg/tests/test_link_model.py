import math
from dataclasses import replace

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import quad, trapezoid

from qsdci import presets
from qsdci.link_model import (ChannelPlan, DetectorSpec, Direction, FiberSpec, LinkModelError, OpticalCarrier,
                              PlanError, PlanMode, Role, SaturationError, adjusted_dark_count, backward_icsrs,
                              calibrate_filter_bandwidth, dbm_to_w, forward_icsrs, fwm_efficiency,
                              fwm_peak_power, icxt_ratio, phase_mismatch_from_spacing, photon_energy,
                              same_fiber_srs, total_noise, w_to_dbm)

H_PLANCK = 6.62607015e-34
C_LIGHT = 299792458.0


def _forward_integral(p0, fiber, bw, n=None):
    aq, ac, h, L = fiber.alpha_q, fiber.alpha_c, fiber.coupling, fiber.length_km

    def f(z):
        # scattered in the classical core at z, leaked over z, then attenuated to L
        return math.exp(-ac * z) * -math.expm1(-2 * h * z) * math.exp(-aq * (L - z))

    if n:
        z = np.linspace(0, L, n)
        return p0 * fiber.raman_efficiency * bw * trapezoid([f(v) for v in z], z)
    return p0 * fiber.raman_efficiency * bw * quad(f, 0, L, epsabs=0, epsrel=1e-12)[0]


def _backward_integral(p0, fiber, bw, n=None):
    aq, ac, h, L = fiber.alpha_q, fiber.alpha_c, fiber.coupling, fiber.length_km

    def f(z):
        return math.exp(-ac * z) * -math.expm1(-2 * h * z) * math.exp(-aq * z)

    if n:
        z = np.linspace(0, L, n)
        return p0 * fiber.raman_efficiency * bw * trapezoid([f(v) for v in z], z)
    return p0 * fiber.raman_efficiency * bw * quad(f, 0, L, epsabs=0, epsrel=1e-12)[0]


# -- photon energy and crosstalk ----------------------------------------------

def test_photon_energy_values():
    assert photon_energy(1550) == pytest.approx(1.282e-19, rel=1e-3)
    assert photon_energy(1310) == pytest.approx(1.517e-19, rel=1e-3)
    assert photon_energy(1550) == pytest.approx(H_PLANCK * C_LIGHT / 1550e-9, rel=1e-15)


def test_photon_energy_halving_wavelength_doubles_energy():
    assert photon_energy(775) == pytest.approx(2 * photon_energy(1550), rel=1e-15)


@pytest.mark.parametrize("bad", [0.0, -1.0])
def test_photon_energy_rejects_nonpositive(bad):
    with pytest.raises(LinkModelError):
        photon_energy(bad)


def test_icxt_ratio_examples():
    assert icxt_ratio(7e-7, 3.5) == pytest.approx(2.45e-6, rel=1e-12)
    assert 10 * math.log10(icxt_ratio(7e-7, 3.5)) == pytest.approx(-56.1, abs=0.05)
    assert icxt_ratio(7e-7, 100) == pytest.approx(7e-5, rel=1e-12)
    assert 10 * math.log10(icxt_ratio(7e-7, 100)) == pytest.approx(-41.5, abs=0.05)
    assert icxt_ratio(3e-4, 0) == 0


# -- four-wave mixing ---------------------------------------------------------

def test_phase_mismatch_examples():
    assert phase_mismatch_from_spacing(21.7, 0) == 0
    assert phase_mismatch_from_spacing(21.7, 100) == pytest.approx(8.57, abs=0.01)
    # ps^2/km * (rad/ps)^2 with 100 GHz = 0.1 rad-cycles/ps
    omega_per_ps = 2 * math.pi * 0.1
    assert phase_mismatch_from_spacing(21.7, 100) == pytest.approx(21.7 * omega_per_ps ** 2, rel=1e-12)
    assert phase_mismatch_from_spacing(21.7, 200) == pytest.approx(4 * phase_mismatch_from_spacing(21.7, 100))


@given(st.floats(1e-3, 1.0), st.floats(1e-3, 500.0))
def test_fwm_efficiency_is_one_when_phase_matched(alpha, z):
    assert fwm_efficiency(alpha, 0.0, z) == pytest.approx(1.0, rel=1e-12)


def test_fwm_efficiency_envelope_limit():
    assert fwm_efficiency(0.046, 8.6, 1e4) == pytest.approx(2.86e-5, rel=2e-3)
    assert fwm_efficiency(0.046, 8.6, 3.5, envelope=True) == pytest.approx(2.86e-5, rel=2e-3)


def test_fwm_efficiency_rejects_zero_length():
    with pytest.raises(LinkModelError):
        fwm_efficiency(0.046, 1.0, 0.0)


def test_fwm_envelope_falls_as_inverse_fourth_power_of_spacing():
    spacing = np.logspace(2, 3, 11)
    eta = [fwm_efficiency(0.046, phase_mismatch_from_spacing(21.7, s), 3.5, envelope=True) for s in spacing]
    slope = np.polyfit(np.log10(spacing), np.log10(eta), 1)[0]
    assert slope == pytest.approx(-4.0, abs=0.01)


def _eq3_mp(pi, pj, pk, gamma, alpha, z, d, dbeta):
    mpmath.mp.dps = 40
    a, z, db = mpmath.mpf(alpha), mpmath.mpf(z), mpmath.mpf(dbeta)
    loss = 1 - mpmath.e ** (-a * z)
    eta = a ** 2 / (a ** 2 + db ** 2) * (1 + 4 * mpmath.e ** (-a * z) * mpmath.sin(db * z / 2) ** 2 / loss ** 2)
    return eta * d ** 2 * mpmath.mpf(gamma) ** 2 * mpmath.mpf(pi) * pj * pk * mpmath.e ** (-a * z) * loss ** 2 / (9 * a ** 2)


def test_fwm_peak_power_matches_high_precision_oracle():
    dbeta = phase_mismatch_from_spacing(21.7, 100)
    got = fwm_peak_power(1e-3, 1e-3, 1e-3, 1.3, 0.046, 3.5, True, dbeta)
    want = _eq3_mp(1e-3, 1e-3, 1e-3, 1.3, 0.046, 3.5, 3, dbeta)
    assert abs(got - float(want)) <= 1e-12 * float(want)


def test_fwm_peak_power_nondegenerate_is_four_times_degenerate():
    args = (2e-3, 1e-3, 5e-4, 1.3, 0.046, 3.5)
    assert fwm_peak_power(*args, False, 3.0) == pytest.approx(4 * fwm_peak_power(*args, True, 3.0), rel=1e-14)


def test_fwm_peak_power_zero_cases():
    assert fwm_peak_power(0.0, 1e-3, 1e-3, 1.3, 0.046, 3.5, True, 8.6) == 0
    assert fwm_peak_power(1e-3, 1e-3, 1e-3, 1.3, 0.046, 0.0, True, 8.6) == 0


@given(st.permutations([1e-4, 3e-3, 7e-3]), st.floats(0.1, 100.0), st.floats(0.0, 50.0))
def test_fwm_peak_power_symmetric_in_powers(perm, z, dbeta):
    ref = fwm_peak_power(1e-4, 3e-3, 7e-3, 1.3, 0.046, z, False, dbeta)
    assert fwm_peak_power(*perm, 1.3, 0.046, z, False, dbeta) == pytest.approx(ref, rel=1e-12)


# -- inter-core Raman ---------------------------------------------------------

@pytest.mark.parametrize("length", [0.1, 1.0, 3.5, 10.0, 50.0, 100.0, 150.0])
def test_icsrs_matches_distributed_integral(length):
    fib = presets.fiber(length)
    p0, bw = 1e-3, 0.8
    assert forward_icsrs(p0, fib, bw) == pytest.approx(_forward_integral(p0, fib, bw), rel=1e-8)
    assert backward_icsrs(p0, fib, bw) == pytest.approx(_backward_integral(p0, fib, bw), rel=1e-8)
    # coarse trapezoid rule, as a second independent quadrature
    assert forward_icsrs(p0, fib, bw) == pytest.approx(_forward_integral(p0, fib, bw, n=2001), rel=1e-2)
    assert backward_icsrs(p0, fib, bw) == pytest.approx(_backward_integral(p0, fib, bw, n=2001), rel=1e-2)


@given(st.floats(0.1, 150.0), st.floats(0.0, 0.2), st.floats(0.0, 0.2), st.floats(1e-9, 1e-3))
@settings(max_examples=60)
def test_icsrs_integral_property(length, aq, ac, h):
    fib = replace(presets.fiber(length), alpha_q=aq, alpha_c=ac, coupling=h)
    assert forward_icsrs(1e-3, fib, 1.0) == pytest.approx(_forward_integral(1e-3, fib, 1.0), rel=1e-6)
    assert backward_icsrs(1e-3, fib, 1.0) == pytest.approx(_backward_integral(1e-3, fib, 1.0), rel=1e-6)


def test_icsrs_degenerate_denominators_use_series():
    # alpha_q == alpha_c makes the first forward bracket degenerate
    fib = replace(presets.fiber(3.5), alpha_c=0.046)
    assert forward_icsrs(1e-3, fib, 1.0) == pytest.approx(_forward_integral(1e-3, fib, 1.0), rel=1e-9)
    fib = replace(presets.fiber(3.5), alpha_c=0.046 - 2 * 7e-7)
    assert forward_icsrs(1e-3, fib, 1.0) == pytest.approx(_forward_integral(1e-3, fib, 1.0), rel=1e-9)


def test_icsrs_vanishes_at_zero_length_and_coupling():
    assert forward_icsrs(1e-3, presets.fiber(0.0), 1.0) == 0
    assert backward_icsrs(1e-3, presets.fiber(0.0), 1.0) == 0
    fib = replace(presets.fiber(3.5), coupling=0.0)
    assert forward_icsrs(1e-3, fib, 1.0) == 0
    assert backward_icsrs(1e-3, fib, 1.0) == 0


def test_backward_icsrs_nondecreasing_and_saturating():
    lengths = np.linspace(0, 2000, 201)
    vals = np.array([backward_icsrs(1e-3, presets.fiber(L), 1.0) for L in lengths])
    assert np.all(np.diff(vals) >= -1e-9 * vals.max())  # rounding only
    assert (vals[-1] - vals[-2]) < 1e-6 * vals[-1]


# -- same-fiber Raman -----------------------------------------------------------

def test_same_fiber_srs_zero_length():
    for d in Direction:
        assert same_fiber_srs(1e-3, 0.046, 0.046, 9.2e-12, 1.0, 0.0, d) == 0


def test_same_fiber_srs_equal_attenuation_closed_forms():
    a, L = 0.046, 20.0
    fwd = same_fiber_srs(1e-3, a, a, 9.2e-12, 1.0, L, Direction.FORWARD)
    bwd = same_fiber_srs(1e-3, a, a, 9.2e-12, 1.0, L, Direction.BACKWARD)
    assert fwd == pytest.approx(1e-3 * 9.2e-12 * L * math.exp(-a * L), rel=1e-12)
    assert bwd == pytest.approx(1e-3 * 9.2e-12 * (1 - math.exp(-2 * a * L)) / (2 * a), rel=1e-12)


def test_same_fiber_srs_levels_at_0dbm():
    fib = FiberSpec()
    kw = dict(alpha_pump=fib.alpha_c, alpha_probe=fib.alpha_q, raman_efficiency=fib.srs_efficiency,
              filter_bw_nm=1.0)
    bwd = w_to_dbm(same_fiber_srs(1e-3, length_km=50, direction="backward", **kw))
    fwd = w_to_dbm(same_fiber_srs(1e-3, length_km=1, direction="forward", **kw))
    assert bwd == pytest.approx(-100, abs=3)
    assert fwd == pytest.approx(-110, abs=3)


def test_forward_srs_rises_until_one_over_alpha():
    fib = FiberSpec()
    lengths = np.linspace(0.5, 20, 40)
    vals = [same_fiber_srs(1e-3, fib.alpha_c, fib.alpha_q, fib.srs_efficiency, 1.0, L, "forward") for L in lengths]
    assert np.all(np.diff(vals) > 0)


# -- adjusted dark count ------------------------------------------------------

def test_adjusted_dark_count_hand_arithmetic():
    det = DetectorSpec(p_dc=6e-6, gate_width_s=1e-9)
    p = 10 ** (-112.9 / 10) * 1e-3
    eps = H_PLANCK * C_LIGHT / 1550e-9
    want = p * 1e-9 * 0.0525 / eps / 2 + 6e-6
    got = adjusted_dark_count(p, det, 0.0525)
    assert abs(got - want) < 1e-12
    assert got == pytest.approx(7.05e-6, abs=1e-8)


def test_adjusted_dark_count_linear_excess():
    det = DetectorSpec(p_dc=6e-6)
    assert adjusted_dark_count(0.0, det, 0.05) == 6e-6
    e1 = adjusted_dark_count(1e-14, det, 0.05) - 6e-6
    e2 = adjusted_dark_count(2e-14, det, 0.05) - 6e-6
    assert e2 == pytest.approx(2 * e1, rel=1e-9)


def test_adjusted_dark_count_saturation():
    with pytest.raises(SaturationError):
        adjusted_dark_count(1.0, DetectorSpec(), 1.0)


def test_detector_derives_p_dc_from_dark_rate():
    assert DetectorSpec(dark_rate_hz=600, gate_width_s=1e-9).p_dc == pytest.approx(6e-7)
    assert DetectorSpec(p_dc=6e-6).p_dc == 6e-6


# -- unit conversions ---------------------------------------------------------

@given(st.floats(-150.0, 40.0))
def test_dbm_roundtrip(dbm):
    assert w_to_dbm(dbm_to_w(dbm)) == pytest.approx(dbm, rel=1e-12, abs=1e-12)


@given(st.floats(1e-20, 10.0))
def test_watt_roundtrip(w):
    assert dbm_to_w(w_to_dbm(w)) == pytest.approx(w, rel=1e-12)


def test_zero_power_is_minus_infinity_dbm():
    assert w_to_dbm(0.0) == -math.inf


# -- fiber and plan validation --------------------------------------------------

def test_seven_core_adjacency():
    fib = FiberSpec.seven_core()
    assert fib.neighbours(0) == [1, 2, 3, 4, 5, 6]
    for k in range(1, 7):
        ring = {k % 6 + 1, (k - 2) % 6 + 1}
        assert set(fib.neighbours(k)) == {0} | ring
    adj = np.array(fib.adjacency)
    assert np.array_equal(adj, adj.T) and not adj.diagonal().any()


def test_fiber_rejects_asymmetric_adjacency():
    adj = [[False, True], [False, False]]
    with pytest.raises(LinkModelError):
        FiberSpec(core_count=2, adjacency=adj)


def test_plan_needs_exactly_one_quantum_carrier():
    with pytest.raises(PlanError):
        ChannelPlan((OpticalCarrier(1550.8, 0.0, 0),))
    q = presets.quantum_carrier()
    with pytest.raises(PlanError):
        ChannelPlan((q, replace(q, core_index=2)))


def test_sdm_plan_rejects_classical_on_quantum_core():
    with pytest.raises(PlanError):
        ChannelPlan((presets.quantum_carrier(1), OpticalCarrier(1550.8, 0.0, 1)))
    ChannelPlan((presets.quantum_carrier(1), OpticalCarrier(1550.8, 0.0, 1)), mode=PlanMode.DWDM)


def test_plan_core_out_of_range():
    plan = ChannelPlan((presets.quantum_carrier(1), OpticalCarrier(1550.8, 0.0, 9)))
    with pytest.raises(PlanError):
        total_noise(plan, presets.fiber(), DetectorSpec())


# -- aggregate budget -----------------------------------------------------------

def test_total_noise_without_classical_carriers():
    det = DetectorSpec()
    b = total_noise(ChannelPlan((presets.quantum_carrier(),)), presets.fiber(), det)
    assert b.p_total_w == 0
    assert b.p_r_per_gate == det.p_dc


def _all_adjacent_plan(dbm):
    return ChannelPlan((presets.quantum_carrier(0),) + tuple(OpticalCarrier(1550.8, dbm, c) for c in range(1, 7)))


def test_total_noise_six_adjacent_carriers_is_six_times_one():
    fib, det = presets.fiber(), DetectorSpec()
    one = total_noise(presets.single_carrier_plan(0.0, quantum_core=0, classical_core=1), fib, det)
    six = total_noise(_all_adjacent_plan(0.0), fib, det)
    assert six.p_total_w == pytest.approx(6 * one.p_total_w, rel=1e-12)
    assert six.icxt_ratio == pytest.approx(6 * icxt_ratio(fib.coupling, fib.length_km), rel=1e-12)


@given(st.floats(-20.0, 15.0), st.floats(-20.0, 15.0))
@settings(max_examples=40)
def test_total_noise_linear_and_additive(a_dbm, b_dbm):
    fib, det = presets.fiber(), DetectorSpec()
    only_a = total_noise(presets.single_carrier_plan(a_dbm, classical_core=0), fib, det).p_total_w
    only_b = total_noise(presets.single_carrier_plan(b_dbm, classical_core=2), fib, det).p_total_w
    both = ChannelPlan((presets.quantum_carrier(), OpticalCarrier(1550.8, a_dbm, 0), OpticalCarrier(1550.8, b_dbm, 2)))
    assert total_noise(both, fib, det).p_total_w == pytest.approx(only_a + only_b, rel=1e-12)
    assert only_a / dbm_to_w(a_dbm) == pytest.approx(only_b / dbm_to_w(b_dbm), rel=1e-12)


def test_budget_fields_consistent():
    b = total_noise(presets.link_plan(), presets.fiber(), DetectorSpec())
    assert b.p_total_w == pytest.approx(b.p_f_icsrs_w + b.p_b_icsrs_w + b.p_fwm_w, rel=1e-12)
    assert dbm_to_w(b.p_total_dbm) == pytest.approx(b.p_total_w, rel=1e-9)
    assert min(b.p_f_icsrs_w, b.p_b_icsrs_w, b.p_fwm_w) >= 0


def test_non_adjacent_core_silent_by_default():
    # core 4 is opposite core 1 on the ring
    b = total_noise(presets.single_carrier_plan(10.0, quantum_core=1, classical_core=4), presets.fiber(), DetectorSpec())
    assert b.p_total_w == 0


def test_pair_coupling_override():
    fib = replace(presets.fiber(), pair_coupling={(4, 1): 7e-7})
    far = total_noise(presets.single_carrier_plan(10.0, 1, 4), fib, DetectorSpec()).p_total_w
    near = total_noise(presets.single_carrier_plan(10.0, 1, 0), presets.fiber(), DetectorSpec()).p_total_w
    assert far == pytest.approx(near, rel=1e-12)


def test_dwdm_cband_adds_fwm_oband_does_not():
    fib, det = presets.fiber(), DetectorSpec()
    cband = ChannelPlan((presets.quantum_carrier(), OpticalCarrier(1550.8, 0.0, 1)), mode="dwdm")
    oband = ChannelPlan((presets.quantum_carrier(), OpticalCarrier(1310.0, 0.0, 1)), mode="dwdm")
    assert total_noise(cband, fib, det).p_fwm_w > 0
    b = total_noise(oband, fib, det)
    assert b.p_fwm_w == 0
    assert b.p_f_srs_w > 0 and b.p_b_srs_w > 0
    assert b.p_total_w == pytest.approx(b.p_f_srs_w + b.p_b_srs_w, rel=1e-12)


def test_all_noise_vanishes_at_zero_length():
    fib = presets.fiber(0.0)
    for plan in (presets.link_plan(), ChannelPlan((presets.quantum_carrier(), OpticalCarrier(1550.8, 0.0, 1)),
                                                  mode="dwdm")):
        assert total_noise(plan, fib, DetectorSpec()).p_total_w == 0


def test_filter_calibration_is_clipped_to_bounds():
    fib, det = presets.fiber(), DetectorSpec(p_dc=presets.SINGLE_P_DC)
    plan = presets.single_carrier_plan()
    bw = calibrate_filter_bandwidth(presets.SINGLE_TARGET_DBM, plan, fib, det)
    assert 0.1 <= bw <= 2.0
    # an attainable target is hit exactly
    reachable = total_noise(plan, fib, det, filter_bw_nm=0.5).p_total_dbm
    assert calibrate_filter_bandwidth(reachable, plan, fib, det) == pytest.approx(0.5, rel=1e-9)
