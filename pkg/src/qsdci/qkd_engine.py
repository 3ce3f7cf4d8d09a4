"""One-decoy BB84 session statistics and finite-key secret key rate.

The detection model is the usual threshold-detector decoy model: a pulse of
intensity k yields a click with probability ``1 - (1 - 2 p_R) exp(-eta k)``
and an erroneous click with probability ``p_R + e_mis (1 - exp(-eta k))``.
Parameter estimation follows the one-decoy finite-key bounds (vacuum and
single-photon lower bounds, phase-error upper bound) with Hoeffding
deviations; the deviation term is pluggable through ``deviation=``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np
from scipy.optimize import brentq

from . import _accel
from .link_model import ChannelPlan, DetectorSpec, FiberSpec, LinkModelError, total_noise


class QkdError(ValueError):
    """Inconsistent protocol parameters or unusable statistics."""


@dataclass(frozen=True)
class DecoyParams:
    mu: float = 0.523
    nu: float = 0.131
    p_mu: float = 0.798
    p_z_alice: float = 0.898
    p_z_bob: float = 0.5
    rep_rate_hz: float = 100e6
    e_misalign: float = 0.01262  # reproduces 1.27 % QBER at 3.5 km on the reference link
    f_ec: float = 1.16
    eps_sec: float = 1e-9
    eps_cor: float = 1e-15

    def __post_init__(self):
        if not 0 < self.nu < self.mu:
            raise QkdError(f"need 0 < nu < mu, got mu={self.mu}, nu={self.nu}")
        for name in ("p_mu", "p_z_alice", "p_z_bob", "eps_sec", "eps_cor"):
            v = getattr(self, name)
            if not 0 < v < 1:
                raise QkdError(f"{name} must lie in (0, 1), got {v!r}")
        if not 0 <= self.e_misalign < 0.5:
            raise QkdError(f"e_misalign must lie in [0, 0.5), got {self.e_misalign!r}")
        if not self.rep_rate_hz > 0:
            raise QkdError("rep_rate_hz must be positive")
        if self.f_ec < 1:
            raise QkdError("f_ec must be >= 1")

    @property
    def p_nu(self) -> float:
        return 1.0 - self.p_mu

    def intensities(self):
        return ((self.mu, self.p_mu), (self.nu, self.p_nu))


@dataclass(frozen=True)
class SessionTally:
    n_z_mu: int
    n_z_nu: int
    m_z_mu: int
    m_z_nu: int
    n_x_mu: int
    n_x_nu: int
    m_x_mu: int
    m_x_nu: int
    pulses_sent: int
    duration_s: float
    # Monte Carlo only: sifted Z detections from vacuum / single-photon pulses.
    true_z0: int | None = None
    true_z1: int | None = None

    def __post_init__(self):
        pairs = (("n_z_mu", "m_z_mu"), ("n_z_nu", "m_z_nu"), ("n_x_mu", "m_x_mu"), ("n_x_nu", "m_x_nu"))
        for n_name, m_name in pairs:
            n, m = getattr(self, n_name), getattr(self, m_name)
            if m < 0 or n < m:
                raise QkdError(f"need 0 <= {m_name} <= {n_name}, got {m} and {n}")
        if self.n_z + self.n_x > self.pulses_sent:
            raise QkdError("more sifted detections than pulses sent")

    @property
    def n_z(self) -> int:
        return self.n_z_mu + self.n_z_nu

    @property
    def m_z(self) -> int:
        return self.m_z_mu + self.m_z_nu

    @property
    def n_x(self) -> int:
        return self.n_x_mu + self.n_x_nu

    @property
    def m_x(self) -> int:
        return self.m_x_mu + self.m_x_nu

    @property
    def qber_z(self) -> float:
        return self.m_z / self.n_z if self.n_z else 0.0

    @property
    def qber_x(self) -> float:
        return self.m_x / self.n_x if self.n_x else 0.0

    def counts(self) -> dict[str, int]:
        return {k: getattr(self, k) for k in
                ("n_z_mu", "n_z_nu", "m_z_mu", "m_z_nu", "n_x_mu", "n_x_nu", "m_x_mu", "m_x_nu")}


@dataclass(frozen=True)
class FiniteKeyInputs:
    s_z0_lower: float
    s_z1_lower: float
    phi_z_upper: float
    leak_ec: float
    eps_sec: float = 1e-9
    eps_cor: float = 1e-15
    duration_s: float = 1.0

    def __post_init__(self):
        if not 0 <= self.phi_z_upper <= 0.5:
            raise QkdError(f"phi_z_upper must lie in [0, 0.5], got {self.phi_z_upper!r}")
        if min(self.s_z0_lower, self.s_z1_lower, self.leak_ec) < 0:
            raise QkdError("counts and leakage must be non-negative")


@dataclass(frozen=True)
class SkrResult:
    skr_bps: float
    qber: float
    raw_sifted_bps: float
    inputs: FiniteKeyInputs
    clamped: bool = False
    extra: dict = field(default_factory=dict, compare=False)


def binary_entropy(x: float) -> float:
    if not 0.0 <= x <= 1.0:
        raise QkdError(f"binary entropy argument must lie in [0, 1], got {x!r}")
    if x == 0.0 or x == 1.0:
        return 0.0
    return -x * math.log2(x) - (1.0 - x) * math.log2(1.0 - x)


def ec_leakage(n_bits: float, qber: float, f_ec: float) -> float:
    if f_ec < 1:
        raise QkdError("f_ec must be >= 1")
    return f_ec * n_bits * binary_entropy(qber)


def gains(params: DecoyParams, eta: float, p_r: float):
    """Per-intensity (Q_k, E_k Q_k) for overall transmittance ``eta``."""
    out = []
    for k, _ in params.intensities():
        t = math.exp(-eta * k)
        q = 1.0 - (1.0 - 2.0 * p_r) * t
        eq = p_r + params.e_misalign * (1.0 - t)
        out.append((q, eq))
    return out


def model_qber(params: DecoyParams, eta: float, p_r: float) -> float:
    (q_mu, e_mu), (q_nu, e_nu) = gains(params, eta, p_r)
    return (params.p_mu * e_mu + params.p_nu * e_nu) / (params.p_mu * q_mu + params.p_nu * q_nu)


def expected_statistics(params: DecoyParams, channel_transmittance: float, detector_efficiency: float,
                        p_r_per_gate: float, pulses: float) -> SessionTally:
    """Expected counts, rounded half-to-even."""
    if not (0 <= channel_transmittance <= 1 and 0 <= detector_efficiency <= 1):
        raise QkdError("transmittance and efficiency must lie in [0, 1]")
    eta = channel_transmittance * detector_efficiency
    zz = params.p_z_alice * params.p_z_bob
    xx = (1.0 - params.p_z_alice) * (1.0 - params.p_z_bob)
    (q_mu, e_mu), (q_nu, e_nu) = gains(params, eta, p_r_per_gate)

    def r(x):
        return int(np.rint(x))

    n_mu, n_nu = pulses * params.p_mu, pulses * params.p_nu
    return SessionTally(
        n_z_mu=r(n_mu * zz * q_mu), n_z_nu=r(n_nu * zz * q_nu),
        m_z_mu=r(n_mu * zz * e_mu), m_z_nu=r(n_nu * zz * e_nu),
        n_x_mu=r(n_mu * xx * q_mu), n_x_nu=r(n_nu * xx * q_nu),
        m_x_mu=r(n_mu * xx * e_mu), m_x_nu=r(n_nu * xx * e_nu),
        pulses_sent=r(pulses), duration_s=pulses / params.rep_rate_hz,
    )


# -- Monte Carlo -------------------------------------------------------------

# Output slots of the session kernels.
_SLOTS = ("n_z_mu", "n_z_nu", "m_z_mu", "m_z_nu", "n_x_mu", "n_x_nu", "m_x_mu", "m_x_nu",
          "true_z0", "true_z1")


def _photon_tables(mu, nu, eta):
    """Poisson CDFs for both intensities and the click probability per photon number."""
    top = int(max(mu, nu) + 12.0 * math.sqrt(max(mu, nu)) + 40)
    n = np.arange(top)
    logfact = np.cumsum(np.log(np.maximum(n, 1)))
    cdf = np.empty((2, top))
    for row, k in enumerate((mu, nu)):
        pmf = np.exp(n * math.log(k) - k - logfact) if k > 0 else (n == 0).astype(float)
        cdf[row] = np.cumsum(pmf)
    cdf[:, -1] = 1.0
    return cdf, -np.expm1(n * math.log1p(-eta)) if eta < 1 else (n > 0).astype(float)


@_accel.njit
def _dark_gap(log_q):
    """Gates until the next dark click (geometric); huge when clicks are impossible."""
    g = math.log(1.0 - np.random.random()) / log_q if log_q != 0.0 else np.inf
    return int(g) if g < 4.0e18 else 4 * 10 ** 18


@_accel.njit
def _session_kernel(seed, pulses, p_mu, p_za, p_zb, cdf, click, p_r, e_mis):
    np.random.seed(seed)
    out = np.zeros(10, dtype=np.int64)
    log_q = math.log1p(-p_r) if p_r < 1.0 else -np.inf
    next0 = _dark_gap(log_q)
    next1 = _dark_gap(log_q)
    for i in range(pulses):
        # one uniform split into the intensity, both bases and the photon number
        u = np.random.random()
        signal = u < p_mu
        u = u / p_mu if signal else (u - p_mu) / (1.0 - p_mu)
        za = u < p_za
        u = u / p_za if za else (u - p_za) / (1.0 - p_za)
        zb = u < p_zb
        u = u / p_zb if zb else (u - p_zb) / (1.0 - p_zb)
        row = 0 if signal else 1
        n = 0
        while u > cdf[row, n]:
            n += 1
        hit = False
        if n > 0:
            hit = np.random.random() < click[n]
        # detector 0 holds Alice's bit, detector 1 the flipped bit
        d0 = i == next0
        d1 = i == next1
        if d0:
            next0 = i + 1 + _dark_gap(log_q)
        if d1:
            next1 = i + 1 + _dark_gap(log_q)
        if hit:
            if za == zb:
                if np.random.random() < e_mis:
                    d1 = True
                else:
                    d0 = True
            elif np.random.random() < 0.5:
                d0 = True
            else:
                d1 = True
        if not (d0 or d1) or za != zb:
            continue
        if d0 and d1:
            wrong = np.random.random() < 0.5
        else:
            wrong = d1
        slot = (0 if za else 4) + (0 if signal else 1)
        out[slot] += 1
        if wrong:
            out[slot + 2] += 1
        if za:
            if n == 0:
                out[8] += 1
            elif n == 1:
                out[9] += 1
    return out


def _session_numpy(seed, pulses, mu, nu, p_mu, p_za, p_zb, eta, p_r, e_mis, chunk=1 << 20):
    rng = np.random.default_rng(seed)
    out = np.zeros(10, dtype=np.int64)
    left = pulses
    while left > 0:
        m = min(chunk, left)
        left -= m
        signal = rng.random(m) < p_mu
        k = np.where(signal, mu, nu)
        za = rng.random(m) < p_za
        zb = rng.random(m) < p_zb
        n = rng.poisson(k)
        hit = rng.random(m) < 1.0 - (1.0 - eta) ** n
        d0 = rng.random(m) < p_r
        d1 = rng.random(m) < p_r
        u = rng.random(m)
        same = za == zb
        to_wrong = np.where(same, u < e_mis, u < 0.5)
        d1 |= hit & to_wrong
        d0 |= hit & ~to_wrong
        coin = rng.random(m) < 0.5
        wrong = np.where(d0 & d1, coin, d1)
        kept = same & (d0 | d1)
        for basis_z, base in ((True, 0), (False, 4)):
            for sig, off in ((True, 0), (False, 1)):
                sel = kept & (za == basis_z) & (signal == sig)
                out[base + off] += np.count_nonzero(sel)
                out[base + off + 2] += np.count_nonzero(sel & wrong)
        zsel = kept & za
        out[8] += np.count_nonzero(zsel & (n == 0))
        out[9] += np.count_nonzero(zsel & (n == 1))
    return out


def simulate_session(seed: int, params: DecoyParams, channel_transmittance: float,
                     detector_efficiency: float, p_r_per_gate: float, pulses: int,
                     numba: bool | None = None) -> SessionTally:
    """Per-pulse Monte Carlo of one acquisition block, photon-number tagged.

    Double clicks are assigned a random bit. Streams differ between the
    numba and numpy backends; each is reproducible for a given seed.
    """
    if not (0 <= channel_transmittance <= 1 and 0 <= detector_efficiency <= 1):
        raise QkdError("transmittance and efficiency must lie in [0, 1]")
    pulses = int(pulses)
    args = (int(seed), pulses, params.mu, params.nu, params.p_mu, params.p_z_alice, params.p_z_bob,
            channel_transmittance * detector_efficiency, p_r_per_gate, params.e_misalign)
    if _accel.use_numba(numba):
        cdf, click = _photon_tables(params.mu, params.nu, args[7])
        raw = _session_kernel(args[0], pulses, params.p_mu, params.p_z_alice, params.p_z_bob, cdf, click,
                              p_r_per_gate, params.e_misalign)
    else:
        raw = _session_numpy(*args)
    vals = dict(zip(_SLOTS, (int(v) for v in raw)))
    return SessionTally(pulses_sent=pulses, duration_s=pulses / params.rep_rate_hz, **vals)


# -- finite-key parameter estimation ------------------------------------------


def hoeffding_deviation(n: float, eps: float) -> float:
    """sqrt(n/2 ln(21/eps)): two-sided deviation of a count from its mean."""
    return math.sqrt(n / 2.0 * math.log(21.0 / eps))


def _tau(params: DecoyParams, photons: int) -> float:
    return sum(p * math.exp(-k) * k ** photons / math.factorial(photons) for k, p in params.intensities())


def _gamma(a: float, b: float, c: float, d: float) -> float:
    """Random-sampling correction between single-photon error rates in X and Z."""
    if b <= 0 or b >= 1 or c <= 0 or d <= 0:
        return 0.0
    arg = (c + d) / (c * d * (1 - b) * b) * 21.0 ** 2 / a ** 2
    return math.sqrt((c + d) * (1 - b) * b / (c * d * math.log(2)) * math.log2(arg))


def _basis_bounds(n_mu, n_nu, m_nu, params, deviation):
    """(s0_lower, s0_upper, s1_lower) for one basis."""
    mu, nu, p_mu, p_nu = params.mu, params.nu, params.p_mu, params.p_nu
    n_tot = n_mu + n_nu
    dn = deviation(n_tot, params.eps_sec)
    n_mu_p = math.exp(mu) / p_mu * (n_mu + dn)
    n_nu_m = math.exp(nu) / p_nu * (n_nu - dn)
    tau0, tau1 = _tau(params, 0), _tau(params, 1)
    s0_low = tau0 / (mu - nu) * (mu * n_nu_m - nu * n_mu_p)
    s0_up = 2.0 * (tau0 * math.exp(nu) / p_nu * m_nu + dn)
    s1_low = tau1 * mu / (nu * (mu - nu)) * (
        n_nu_m - nu ** 2 / mu ** 2 * n_mu_p - (mu ** 2 - nu ** 2) / mu ** 2 * s0_up / tau0)
    clamp = lambda v: min(max(v, 0.0), float(n_tot))  # noqa: E731
    return clamp(s0_low), clamp(s0_up), clamp(s1_low)


def one_decoy_bounds(tally: SessionTally, params: DecoyParams,
                     deviation: Callable[[float, float], float] = hoeffding_deviation):
    """Return ``(s_z0_lower, s_z1_lower, phi_z_upper)``."""
    if params.nu >= params.mu:
        raise QkdError("decoy intensity must be below signal intensity")
    if tally.n_z_nu <= 0 or tally.n_z_mu <= 0 or tally.n_x_nu <= 0 or tally.n_x_mu <= 0:
        raise QkdError("degenerate statistics: every basis/intensity needs detections")
    s_z0, _, s_z1 = _basis_bounds(tally.n_z_mu, tally.n_z_nu, tally.m_z_nu, params, deviation)
    _, _, s_x1 = _basis_bounds(tally.n_x_mu, tally.n_x_nu, tally.m_x_nu, params, deviation)
    if s_z1 <= 0 or s_x1 <= 0:
        return s_z0, s_z1, 0.5
    mu, nu = params.mu, params.nu
    dm = deviation(tally.m_x, params.eps_sec)
    m_mu_p = math.exp(mu) / params.p_mu * (tally.m_x_mu + dm)
    m_nu_m = math.exp(nu) / params.p_nu * (tally.m_x_nu - dm)
    v_x1 = _tau(params, 1) / (mu - nu) * (m_mu_p - m_nu_m)
    ratio = min(max(v_x1 / s_x1, 0.0), 0.5)
    phi = ratio + _gamma(params.eps_sec, ratio, s_z1, s_x1)
    return s_z0, s_z1, min(phi, 0.5)


def finite_key_rate(inputs: FiniteKeyInputs, qber: float = 0.0, raw_sifted_bps: float = 0.0) -> SkrResult:
    if not inputs.duration_s > 0:
        raise QkdError("acquisition duration must be positive")
    length = (inputs.s_z0_lower
              + inputs.s_z1_lower * (1.0 - binary_entropy(inputs.phi_z_upper))
              - inputs.leak_ec
              - 6.0 * math.log2(19.0 / inputs.eps_sec)
              - math.log2(2.0 / inputs.eps_cor))
    clamped = length < 0
    return SkrResult(skr_bps=max(length, 0.0) / inputs.duration_s, qber=qber,
                     raw_sifted_bps=raw_sifted_bps, inputs=inputs, clamped=clamped)


def key_from_tally(tally: SessionTally, params: DecoyParams,
                   deviation: Callable[[float, float], float] = hoeffding_deviation) -> SkrResult:
    """Parameter estimation, EC leakage and key length for one block."""
    qber = tally.qber_z
    try:
        s0, s1, phi = one_decoy_bounds(tally, params, deviation)
    except QkdError:
        s0, s1, phi = 0.0, 0.0, 0.5
    inputs = FiniteKeyInputs(
        s_z0_lower=s0, s_z1_lower=s1, phi_z_upper=phi,
        leak_ec=ec_leakage(tally.n_z, qber, params.f_ec),
        eps_sec=params.eps_sec, eps_cor=params.eps_cor, duration_s=tally.duration_s,
    )
    return finite_key_rate(inputs, qber=qber, raw_sifted_bps=tally.n_z / tally.duration_s)


# -- end-to-end pipeline -------------------------------------------------------

BLOCK_NZ = 1e8


def channel_transmittance(fiber: FiberSpec, detector: DetectorSpec, distance_km: float) -> float:
    """Fiber loss times the lumped receiver insertion loss."""
    return math.exp(-fiber.alpha_q * distance_km) * detector.receiver_transmittance


def pulses_for_block(params: DecoyParams, eta: float, p_r: float, block_nz: float = BLOCK_NZ) -> float:
    (q_mu, _), (q_nu, _) = gains(params, eta, p_r)
    per_pulse = params.p_z_alice * params.p_z_bob * (params.p_mu * q_mu + params.p_nu * q_nu)
    return block_nz / per_pulse


def skr_pipeline(distance_km: float, plan: ChannelPlan, fiber: FiberSpec, detector: DetectorSpec,
                 params: DecoyParams, block_nz: float = BLOCK_NZ,
                 noise_length_km: float | None = None) -> SkrResult:
    """Noise budget -> p_R -> expected block statistics -> finite-key rate.

    The fiber is rescaled to ``distance_km``. When ``noise_length_km`` is
    given, noise is evaluated on a fiber of that length instead while the
    quantum channel still sees the full ``distance_km`` attenuation (a
    deployed span extended by an attenuator).
    """
    if distance_km < 0:
        raise QkdError("distance must be non-negative")
    noise_fiber = fiber.with_length(distance_km if noise_length_km is None else noise_length_km)
    budget = total_noise(plan, noise_fiber, detector)
    t_ch = channel_transmittance(fiber, detector, distance_km)
    eta = t_ch * detector.efficiency
    pulses = pulses_for_block(params, eta, budget.p_r_per_gate, block_nz)
    tally = expected_statistics(params, t_ch, detector.efficiency, budget.p_r_per_gate, pulses)
    res = key_from_tally(tally, params)
    extra = {"p_r": budget.p_r_per_gate, "noise_dbm": budget.p_total_dbm, "pulses": tally.pulses_sent,
             "duration_s": tally.duration_s, "n_z": tally.n_z,
             "model_qber": model_qber(params, eta, budget.p_r_per_gate)}
    return replace(res, extra=extra)


def calibrate_misalignment(target_qber: float, params: DecoyParams, eta: float, p_r: float) -> float:
    """Misalignment error that makes the model Z-basis QBER hit ``target_qber``."""
    def f(e):
        return model_qber(replace(params, e_misalign=e), eta, p_r) - target_qber

    if f(0.0) > 0:
        raise QkdError(f"background alone exceeds target QBER {target_qber}")
    return brentq(f, 0.0, 0.499, xtol=1e-14)


__all__ = [
    "DecoyParams", "SessionTally", "FiniteKeyInputs", "SkrResult", "QkdError",
    "binary_entropy", "ec_leakage", "gains", "model_qber", "expected_statistics", "simulate_session",
    "hoeffding_deviation", "one_decoy_bounds", "finite_key_rate", "key_from_tally", "skr_pipeline",
    "channel_transmittance", "pulses_for_block", "calibrate_misalignment", "BLOCK_NZ", "LinkModelError",
]
