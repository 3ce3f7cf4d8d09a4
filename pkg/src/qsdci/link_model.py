"""Closed-form channel physics for quantum/classical coexistence in MCF.

Power-level noise model only: inter-core crosstalk, four-wave mixing,
same-fiber and inter-core spontaneous Raman scattering, and the conversion
of in-band noise power into detector background clicks per gate.

Units follow the fiber-optics convention: attenuation and coupling in 1/km
(natural-log power coefficients), lengths in km, powers in W unless the
name says dBm, Raman efficiency per nm per km.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace
from typing import Mapping, Sequence

import numpy as np
from scipy.constants import c as SPEED_OF_LIGHT
from scipy.constants import h as PLANCK

# Below this |x*L| the (exp(xL)-1)/x family is evaluated by its series.
_SERIES_THRESHOLD = 1e-6

C_BAND_NM = (1530.0, 1565.0)


class LinkModelError(ValueError):
    """Invalid physical input or an unphysical operating point."""


class PlanError(LinkModelError):
    """Channel plan violates its structural invariants."""


class SaturationError(LinkModelError):
    """Background click probability exceeds one per gate."""


class Role(str, enum.Enum):
    QUANTUM = "quantum"
    LOCAL_OSCILLATOR = "lo"
    CLASSICAL = "classical"


class Direction(str, enum.Enum):
    FORWARD = "forward"
    BACKWARD = "backward"


# -- unit helpers ------------------------------------------------------------


def dbm_to_w(p_dbm):
    if np.ndim(p_dbm):
        return 1e-3 * np.power(10.0, np.asarray(p_dbm, dtype=float) / 10.0)
    return 1e-3 * 10.0 ** (p_dbm / 10.0)


def w_to_dbm(p_w):
    """Watts to dBm; zero power maps to ``-inf``."""
    if np.ndim(p_w):
        with np.errstate(divide="ignore"):
            return 10.0 * np.log10(np.asarray(p_w, dtype=float) / 1e-3)
    if p_w < 0:
        raise LinkModelError(f"negative power {p_w!r} W")
    if p_w == 0:
        return -math.inf
    return 10.0 * math.log10(p_w / 1e-3)


def db_to_linear(db):
    return 10.0 ** (db / 10.0)


def linear_to_db(x):
    return 10.0 * math.log10(x)


def wavelength_to_thz(wavelength_nm):
    return SPEED_OF_LIGHT / (wavelength_nm * 1e-9) / 1e12


def in_c_band(wavelength_nm):
    return C_BAND_NM[0] <= wavelength_nm <= C_BAND_NM[1]


# -- domain types ------------------------------------------------------------


def _ring_adjacency(n_outer: int) -> tuple[tuple[bool, ...], ...]:
    n = n_outer + 1
    adj = [[False] * n for _ in range(n)]
    for k in range(1, n):
        adj[0][k] = adj[k][0] = True
        nxt = k % n_outer + 1
        adj[k][nxt] = adj[nxt][k] = True
    return tuple(tuple(row) for row in adj)


@dataclass(frozen=True)
class FiberSpec:
    """Multicore fiber geometry and physical coefficients.

    ``adjacency[i][j]`` marks nearest-neighbour cores. Coupling between
    adjacent cores is ``coupling``; non-adjacent pairs use
    ``second_order_coupling`` (default zero), and ``pair_coupling`` can
    override any unordered pair for sensitivity studies.
    """

    core_count: int = 7
    length_km: float = 3.5
    alpha_q: float = 0.046
    alpha_c: float = 0.0471
    raman_efficiency: float = 6.9e-8
    coupling: float = 7e-7
    adjacency: tuple[tuple[bool, ...], ...] = field(default_factory=lambda: _ring_adjacency(6))
    gamma_nl: float = 1.3
    beta2_ps2_per_km: float = 21.7
    # same-core spontaneous Raman (pump and probe in one core), 1/(nm km)
    srs_efficiency: float = 9.2e-12
    second_order_coupling: float = 0.0
    pair_coupling: Mapping[tuple[int, int], float] = field(default_factory=dict)

    def __post_init__(self):
        adjacency = tuple(tuple(bool(v) for v in row) for row in self.adjacency)
        object.__setattr__(self, "adjacency", adjacency)
        object.__setattr__(
            self,
            "pair_coupling",
            {tuple(sorted(map(int, k))): float(v) for k, v in dict(self.pair_coupling).items()},
        )
        if self.core_count < 1:
            raise LinkModelError("core_count must be >= 1")
        for name in ("length_km", "alpha_q", "alpha_c", "raman_efficiency", "coupling",
                     "gamma_nl", "second_order_coupling", "srs_efficiency"):
            if getattr(self, name) < 0:
                raise LinkModelError(f"{name} must be >= 0, got {getattr(self, name)!r}")
        if len(adjacency) != self.core_count or any(len(r) != self.core_count for r in adjacency):
            raise LinkModelError("adjacency must be core_count x core_count")
        for i in range(self.core_count):
            if adjacency[i][i]:
                raise LinkModelError(f"core {i} marked adjacent to itself")
            for j in range(i):
                if adjacency[i][j] != adjacency[j][i]:
                    raise LinkModelError(f"adjacency not symmetric at ({i}, {j})")
        for (i, j), h in self.pair_coupling.items():
            if not (0 <= i < self.core_count and 0 <= j < self.core_count) or i == j or h < 0:
                raise LinkModelError(f"bad pair_coupling entry {(i, j)}: {h}")

    @classmethod
    def seven_core(cls, length_km: float = 3.5, **overrides) -> "FiberSpec":
        """Hexagonal 7-core fiber: core 0 at the centre, 1..6 around the ring."""
        return cls(core_count=7, length_km=length_km, adjacency=_ring_adjacency(6), **overrides)

    def with_length(self, length_km: float) -> "FiberSpec":
        return replace(self, length_km=length_km)

    def adjacent(self, i: int, j: int) -> bool:
        return self.adjacency[i][j]

    def neighbours(self, core: int) -> list[int]:
        return [j for j, a in enumerate(self.adjacency[core]) if a]

    def coupling_between(self, i: int, j: int) -> float:
        if i == j:
            raise LinkModelError("coupling is defined between distinct cores")
        key = (min(i, j), max(i, j))
        if key in self.pair_coupling:
            return self.pair_coupling[key]
        return self.coupling if self.adjacency[i][j] else self.second_order_coupling


@dataclass(frozen=True)
class OpticalCarrier:
    wavelength_nm: float
    power_dbm: float
    core_index: int
    role: Role = Role.CLASSICAL

    def __post_init__(self):
        object.__setattr__(self, "role", Role(self.role))
        if not self.wavelength_nm > 0:
            raise PlanError(f"wavelength must be positive, got {self.wavelength_nm!r}")
        if self.core_index < 0:
            raise PlanError(f"negative core index {self.core_index}")

    @property
    def power_w(self) -> float:
        return dbm_to_w(self.power_dbm)


@dataclass(frozen=True)
class DetectorSpec:
    """Gated single-photon detector behind the receiver optics.

    ``p_dc`` is the dark-click probability per gate; when omitted it is
    derived as ``dark_rate_hz * gate_width_s``. ``insertion_loss_db`` lumps
    the coupler, decoder and filter losses in front of the detector.
    """

    efficiency: float = 0.0525
    dark_rate_hz: float = 600.0
    gate_width_s: float = 1e-9
    p_dc: float | None = None
    filter_bw_nm: float = 0.8
    insertion_loss_db: float = 3.0

    def __post_init__(self):
        if not 0.0 <= self.efficiency <= 1.0:
            raise LinkModelError(f"efficiency must lie in [0, 1], got {self.efficiency!r}")
        if self.dark_rate_hz < 0 or self.gate_width_s <= 0:
            raise LinkModelError("dark_rate_hz >= 0 and gate_width_s > 0 required")
        if not self.filter_bw_nm > 0:
            raise LinkModelError(f"filter_bw_nm must be > 0, got {self.filter_bw_nm!r}")
        if self.insertion_loss_db < 0:
            raise LinkModelError("insertion_loss_db must be >= 0")
        if self.p_dc is None:
            object.__setattr__(self, "p_dc", self.dark_rate_hz * self.gate_width_s)
        if not 0.0 <= self.p_dc <= 1.0:
            raise LinkModelError(f"p_dc must be a probability, got {self.p_dc!r}")

    @property
    def receiver_transmittance(self) -> float:
        return db_to_linear(-self.insertion_loss_db)

    @property
    def eta_noise(self) -> float:
        """Transmittance seen by a noise photon already at the fiber output."""
        return self.receiver_transmittance * self.efficiency


@dataclass(frozen=True)
class NoiseBudget:
    """In-band noise at the quantum receiver and the resulting p_R.

    ``p_f_srs_w``/``p_b_srs_w`` hold same-core Raman from classical carriers
    sharing the quantum core (DWDM); they are zero in SDM operation.
    """

    p_f_icsrs_w: float
    p_b_icsrs_w: float
    p_fwm_w: float
    icxt_ratio: float
    p_total_w: float
    p_total_dbm: float
    p_r_per_gate: float
    p_f_srs_w: float = 0.0
    p_b_srs_w: float = 0.0
    filter_bw_nm: float = 0.0

    @property
    def p_icsrs_w(self) -> float:
        return self.p_f_icsrs_w + self.p_b_icsrs_w


# -- elementary physics ------------------------------------------------------


def photon_energy(wavelength_nm: float) -> float:
    """h*c/lambda in joules."""
    if not wavelength_nm > 0:
        raise LinkModelError(f"wavelength must be positive, got {wavelength_nm!r}")
    return PLANCK * SPEED_OF_LIGHT / (wavelength_nm * 1e-9)


def icxt_ratio(h_per_km: float, length_km: float) -> float:
    """Linear inter-core crosstalk power ratio accumulated over the span."""
    if h_per_km < 0 or length_km < 0:
        raise LinkModelError("coupling and length must be non-negative")
    return h_per_km * length_km


def phase_mismatch_from_spacing(beta2_ps2_per_km: float, spacing_ghz: float) -> float:
    """|beta2| (2 pi df)^2 in 1/km."""
    if spacing_ghz < 0:
        raise LinkModelError("spacing must be non-negative")
    omega = 2.0 * math.pi * spacing_ghz * 1e9  # rad/s
    return abs(beta2_ps2_per_km) * 1e-24 * omega * omega


def fwm_efficiency(alpha_per_km: float, delta_beta_per_km: float, z_km: float,
                   envelope: bool = False) -> float:
    """Phase-matching efficiency of degenerate/non-degenerate FWM.

    ``envelope=True`` drops the oscillating sin^2 term and returns the peak
    envelope alpha^2 / (alpha^2 + dbeta^2).
    """
    if not alpha_per_km > 0:
        raise LinkModelError("alpha must be positive")
    if not z_km > 0:
        raise LinkModelError("FWM efficiency is undefined at z = 0")
    a2 = alpha_per_km * alpha_per_km
    base = a2 / (a2 + delta_beta_per_km * delta_beta_per_km)
    if envelope:
        return base
    loss = -math.expm1(-alpha_per_km * z_km)
    ripple = 4.0 * math.exp(-alpha_per_km * z_km) * math.sin(delta_beta_per_km * z_km / 2.0) ** 2
    return base * (1.0 + ripple / (loss * loss))


def fwm_peak_power(p_i_w: float, p_j_w: float, p_k_w: float, gamma: float, alpha: float,
                   z_km: float, degenerate: bool, delta_beta: float,
                   envelope: bool = False) -> float:
    """Mixing-product power at distance ``z_km`` (W); degeneracy D = 3 or 6."""
    if min(p_i_w, p_j_w, p_k_w) < 0:
        raise LinkModelError("powers must be non-negative")
    if not alpha > 0:
        raise LinkModelError("alpha must be positive")
    if z_km <= 0 or p_i_w == 0 or p_j_w == 0 or p_k_w == 0:
        return 0.0
    d = 3.0 if degenerate else 6.0
    eta = fwm_efficiency(alpha, delta_beta, z_km, envelope=envelope)
    loss = -math.expm1(-alpha * z_km)
    return (eta * d * d * gamma * gamma * p_i_w * p_j_w * p_k_w * math.exp(-alpha * z_km)
            / (9.0 * alpha * alpha) * loss * loss)


def _growth(x: float, length: float) -> float:
    """(exp(x L) - 1) / x with the x -> 0 limit handled by series."""
    xl = x * length
    if abs(xl) < _SERIES_THRESHOLD:
        return length * (1.0 + xl / 2.0 + xl * xl / 6.0)
    return math.expm1(xl) / x


def forward_icsrs(p0_w: float, fiber: FiberSpec, filter_bw_nm: float,
                  coupling: float | None = None) -> float:
    """Forward Raman generated in the classical core and leaked to the quantum core."""
    h = fiber.coupling if coupling is None else coupling
    if p0_w < 0 or h < 0:
        raise LinkModelError("power and coupling must be non-negative")
    length = fiber.length_km
    if length == 0 or h == 0 or p0_w == 0:
        return 0.0
    a = fiber.alpha_q - fiber.alpha_c
    bracket = _growth(a, length) - _growth(a - 2.0 * h, length)
    return p0_w * fiber.raman_efficiency * filter_bw_nm * math.exp(-fiber.alpha_q * length) * bracket


def backward_icsrs(p0_w: float, fiber: FiberSpec, filter_bw_nm: float,
                   coupling: float | None = None) -> float:
    """Backward counterpart of :func:`forward_icsrs`."""
    h = fiber.coupling if coupling is None else coupling
    if p0_w < 0 or h < 0:
        raise LinkModelError("power and coupling must be non-negative")
    length = fiber.length_km
    if length == 0 or h == 0 or p0_w == 0:
        return 0.0
    s = fiber.alpha_q + fiber.alpha_c
    bracket = _growth(-s, length) - _growth(-(s + 2.0 * h), length)
    return p0_w * fiber.raman_efficiency * filter_bw_nm * bracket


def same_fiber_srs(p0_w: float, alpha_pump: float, alpha_probe: float, raman_efficiency: float,
                   filter_bw_nm: float, length_km: float,
                   direction: Direction | str = Direction.FORWARD) -> float:
    """Raman noise from a pump sharing the quantum channel's core.

    Forward: P0 eta dl (e^{-a_q L} - e^{-a_p L}) / (a_p - a_q), which is
    P0 eta dl L e^{-a L} for equal attenuations.  Backward:
    P0 eta dl (1 - e^{-(a_p + a_q) L}) / (a_p + a_q).
    """
    direction = Direction(direction)
    if min(p0_w, alpha_pump, alpha_probe, raman_efficiency, filter_bw_nm, length_km) < 0:
        raise LinkModelError("SRS inputs must be non-negative")
    if length_km == 0 or p0_w == 0:
        return 0.0
    scale = p0_w * raman_efficiency * filter_bw_nm
    if direction is Direction.FORWARD:
        # e^{-a_q L} * (e^{(a_q - a_p) L} - 1) / (a_q - a_p)
        return scale * math.exp(-alpha_probe * length_km) * _growth(alpha_probe - alpha_pump, length_km)
    return scale * _growth(-(alpha_pump + alpha_probe), length_km)


def adjusted_dark_count(p_icsrs_w: float, detector: DetectorSpec, eta_r: float,
                        wavelength_nm: float = 1550.0) -> float:
    """Background click probability per gate: P T_d / (2 eps) * eta_R + p_dc."""
    if p_icsrs_w < 0 or eta_r < 0:
        raise LinkModelError("noise power and eta_r must be non-negative")
    if eta_r > 1:
        raise LinkModelError(f"eta_r must lie in [0, 1], got {eta_r!r}")
    p_r = p_icsrs_w * detector.gate_width_s / (2.0 * photon_energy(wavelength_nm)) * eta_r + detector.p_dc
    if p_r > 1.0:
        raise SaturationError(f"background click probability {p_r:.3g} per gate exceeds 1")
    return p_r


# -- channel plans and the aggregate budget ----------------------------------


class PlanMode(str, enum.Enum):
    SDM = "sdm"
    DWDM = "dwdm"


@dataclass(frozen=True)
class ChannelPlan:
    """Carrier placement on the fiber.

    In SDM mode no classical carrier may share the quantum core. In DWDM
    mode co-core carriers add same-fiber Raman and, inside the C band, FWM.
    """

    carriers: tuple[OpticalCarrier, ...]
    mode: PlanMode = PlanMode.SDM
    channel_spacing_ghz: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "carriers", tuple(self.carriers))
        object.__setattr__(self, "mode", PlanMode(self.mode))
        quantum = [c for c in self.carriers if c.role is Role.QUANTUM]
        if len(quantum) != 1:
            raise PlanError(f"plan needs exactly one quantum carrier, found {len(quantum)}")
        if self.mode is PlanMode.SDM:
            q = quantum[0].core_index
            for c in self.carriers:
                if c.role is not Role.QUANTUM and c.core_index == q:
                    raise PlanError(f"SDM plan puts a {c.role.value} carrier on quantum core {q}")
        if self.channel_spacing_ghz is not None and self.channel_spacing_ghz < 0:
            raise PlanError("channel spacing must be non-negative")

    @property
    def quantum(self) -> OpticalCarrier:
        return next(c for c in self.carriers if c.role is Role.QUANTUM)

    @property
    def classical(self) -> tuple[OpticalCarrier, ...]:
        return tuple(c for c in self.carriers if c.role is not Role.QUANTUM)

    def validate_for(self, fiber: FiberSpec) -> None:
        for c in self.carriers:
            if c.core_index >= fiber.core_count:
                raise PlanError(f"core {c.core_index} does not exist in a {fiber.core_count}-core fiber")

    def with_carriers(self, carriers: Sequence[OpticalCarrier]) -> "ChannelPlan":
        return replace(self, carriers=tuple(carriers))


def _spacing_ghz(plan: ChannelPlan, carrier: OpticalCarrier) -> float:
    if plan.channel_spacing_ghz is not None:
        return plan.channel_spacing_ghz
    return abs(wavelength_to_thz(carrier.wavelength_nm) - wavelength_to_thz(plan.quantum.wavelength_nm)) * 1e3


def total_noise(plan: ChannelPlan, fiber: FiberSpec, detector: DetectorSpec,
                filter_bw_nm: float | None = None, fwm_envelope: bool = False) -> NoiseBudget:
    """Sum every classical contribution reaching the quantum core.

    Carriers on other cores couple in through ``fiber.coupling_between``
    (forward + backward inter-core Raman). Carriers on the quantum core add
    same-fiber Raman in both directions and, when both sit in the C band,
    degenerate FWM.
    """
    plan.validate_for(fiber)
    bw = detector.filter_bw_nm if filter_bw_nm is None else filter_bw_nm
    q = plan.quantum
    f_ic = b_ic = f_srs = b_srs = fwm = 0.0
    xt = 0.0
    for c in plan.classical:
        p0 = c.power_w
        if c.core_index != q.core_index:
            h = fiber.coupling_between(q.core_index, c.core_index)
            f_ic += forward_icsrs(p0, fiber, bw, coupling=h)
            b_ic += backward_icsrs(p0, fiber, bw, coupling=h)
            xt += icxt_ratio(h, fiber.length_km)
            continue
        f_srs += same_fiber_srs(p0, fiber.alpha_c, fiber.alpha_q, fiber.srs_efficiency, bw,
                                fiber.length_km, Direction.FORWARD)
        b_srs += same_fiber_srs(p0, fiber.alpha_c, fiber.alpha_q, fiber.srs_efficiency, bw,
                                fiber.length_km, Direction.BACKWARD)
        if in_c_band(c.wavelength_nm) and in_c_band(q.wavelength_nm) and fiber.length_km > 0:
            dbeta = phase_mismatch_from_spacing(fiber.beta2_ps2_per_km, _spacing_ghz(plan, c))
            fwm += fwm_peak_power(p0, p0, p0, fiber.gamma_nl, fiber.alpha_q, fiber.length_km,
                                  degenerate=True, delta_beta=dbeta, envelope=fwm_envelope)
    total = f_ic + b_ic + fwm + f_srs + b_srs
    p_r = adjusted_dark_count(total, detector, detector.eta_noise, q.wavelength_nm)
    return NoiseBudget(
        p_f_icsrs_w=f_ic,
        p_b_icsrs_w=b_ic,
        p_fwm_w=fwm,
        icxt_ratio=xt,
        p_total_w=total,
        p_total_dbm=w_to_dbm(total),
        p_r_per_gate=p_r,
        p_f_srs_w=f_srs,
        p_b_srs_w=b_srs,
        filter_bw_nm=bw,
    )


def calibrate_filter_bandwidth(target_dbm: float, plan: ChannelPlan, fiber: FiberSpec,
                               detector: DetectorSpec, bounds=(0.1, 2.0)) -> float:
    """Raman-noise filter width that best reproduces ``target_dbm``.

    Inter-core Raman is linear in the filter width, so the unconstrained
    solution is closed-form; it is then clipped to ``bounds``.
    """
    ref = total_noise(plan, fiber, detector, filter_bw_nm=1.0)
    raman = ref.p_total_w - ref.p_fwm_w
    if raman <= 0:
        raise LinkModelError("plan produces no Raman noise to calibrate against")
    wanted = (dbm_to_w(target_dbm) - ref.p_fwm_w) / raman
    return float(min(max(wanted, bounds[0]), bounds[1]))
