"""Core allocation over the multicore fiber and SDM vs DWDM key-rate curves."""
from __future__ import annotations

import itertools
from dataclasses import dataclass, replace
from typing import Sequence

from .link_model import (ChannelPlan, DetectorSpec, FiberSpec, NoiseBudget, OpticalCarrier, PlanError,
                         PlanMode, Role, total_noise)
from .qkd_engine import BLOCK_NZ, DecoyParams, skr_pipeline
from . import presets

# Relative SKR difference treated as a tie in the exhaustive search.
TIE_RTOL = 1e-9


@dataclass(frozen=True)
class AllocationScore:
    plan: ChannelPlan
    budget: NoiseBudget
    skr_bps: float
    qber: float

    @property
    def quantum_core(self) -> int:
        return self.plan.quantum.core_index

    @property
    def classical_cores(self) -> tuple[int, ...]:
        return tuple(c.core_index for c in self.plan.classical)


def score_plan(plan: ChannelPlan, fiber: FiberSpec, detector: DetectorSpec, decoy: DecoyParams,
               block_nz: float = BLOCK_NZ) -> AllocationScore:
    budget = total_noise(plan, fiber, detector)
    res = skr_pipeline(fiber.length_km, plan, fiber, detector, decoy, block_nz=block_nz)
    return AllocationScore(plan=plan, budget=budget, skr_bps=res.skr_bps, qber=res.qber)


def _build(q: int, cores: Sequence[int], powers: Sequence[float], wavelength_nm: float) -> ChannelPlan:
    carriers = [presets.quantum_carrier(q)]
    carriers += [OpticalCarrier(wavelength_nm, p, c) for c, p in zip(cores, powers)]
    return ChannelPlan(tuple(carriers))


def optimize_allocation(fiber: FiberSpec, n_classical_carriers: int, powers: float | Sequence[float],
                        detector: DetectorSpec | None = None, decoy: DecoyParams | None = None,
                        wavelength_nm: float = presets.CLASSICAL_NM) -> AllocationScore:
    """Exhaustive search over quantum and classical core placements.

    Maximises SKR; ties go to the lowest quantum core, then the
    lexicographically smallest classical core tuple.
    """
    detector = detector or DetectorSpec()
    decoy = decoy or DecoyParams()
    if isinstance(powers, (int, float)):
        powers = [float(powers)] * n_classical_carriers
    powers = list(powers)
    if len(powers) != n_classical_carriers:
        raise PlanError("need one launch power per classical carrier")
    if not 0 <= n_classical_carriers <= fiber.core_count - 1:
        raise PlanError(f"cannot place {n_classical_carriers} classical carriers beside a quantum core "
                        f"in a {fiber.core_count}-core fiber")
    equal = len(set(powers)) <= 1
    pick = itertools.combinations if equal else itertools.permutations
    scores = []
    for q in range(fiber.core_count):
        others = [c for c in range(fiber.core_count) if c != q]
        for cores in pick(others, n_classical_carriers):
            scores.append(score_plan(_build(q, cores, powers, wavelength_nm), fiber, detector, decoy))
    top = max(s.skr_bps for s in scores)
    best = [s for s in scores if s.skr_bps >= top * (1 - TIE_RTOL)]
    return min(best, key=lambda s: (s.quantum_core, s.classical_cores))


def greedy_allocation(fiber: FiberSpec, n_classical_carriers: int) -> tuple[int, tuple[int, ...]]:
    """Adjacency-count heuristic: quiet quantum core, far cores filled first."""
    degree = [len(fiber.neighbours(c)) for c in range(fiber.core_count)]
    q = min(range(fiber.core_count), key=lambda c: (degree[c], c))
    others = sorted((c for c in range(fiber.core_count) if c != q),
                    key=lambda c: (fiber.adjacent(q, c), c))
    return q, tuple(sorted(others[:n_classical_carriers]))


def adjacent_classical(plan: ChannelPlan, fiber: FiberSpec) -> int:
    q = plan.quantum.core_index
    return sum(1 for c in plan.classical if c.core_index != q and fiber.adjacent(q, c.core_index))


@dataclass(frozen=True)
class CurvePoint:
    distance_km: float
    skr_bps: float
    qber: float
    p_r: float


def skr_vs_distance(plan: ChannelPlan, fiber_template: FiberSpec, distances: Sequence[float],
                    detector: DetectorSpec | None = None, decoy: DecoyParams | None = None,
                    noise_length_km: float | None = None, block_nz: float = BLOCK_NZ) -> list[CurvePoint]:
    """One pipeline evaluation per distance on a length-scaled fiber.

    ``noise_length_km`` pins the noise-generating span (attenuator-extended
    link) instead of scaling it with distance.
    """
    detector = detector or DetectorSpec()
    decoy = decoy or DecoyParams()
    distances = [float(d) for d in distances]
    if any(b < a for a, b in zip(distances, distances[1:])):
        raise ValueError("distances must be sorted ascending")
    out = []
    for d in distances:
        r = skr_pipeline(d, plan, fiber_template.with_length(d), detector, decoy,
                         block_nz=block_nz, noise_length_km=noise_length_km)
        out.append(CurvePoint(d, r.skr_bps, r.qber, r.extra["p_r"]))
    return out


def sdm_plan(launch_dbm: float, quantum_core: int = presets.QUANTUM_CORE, classical_core: int = 0) -> ChannelPlan:
    """1550 nm classical carrier in a core adjacent to the quantum core."""
    return presets.single_carrier_plan(launch_dbm, quantum_core, classical_core)


def dwdm_plan(launch_dbm: float, classical_nm: float = presets.O_BAND_NM,
              core: int = presets.QUANTUM_CORE) -> ChannelPlan:
    """Classical carrier co-propagating in the quantum core."""
    return ChannelPlan((presets.quantum_carrier(core), OpticalCarrier(classical_nm, launch_dbm, core)),
                       mode=PlanMode.DWDM)


def compare_sdm_dwdm(fiber: FiberSpec, detector: DetectorSpec, decoy: DecoyParams,
                     launch_dbm: float = 10.0, distances: Sequence[float] = (3.5, 50, 100, 150),
                     acceptance_bw_nm: float | None = None, dwdm_alpha_c: float = presets.O_BAND_ALPHA,
                     noise_length_km: float | None = None) -> dict[str, list[CurvePoint]]:
    """SDM (adjacent-core 1550 nm) against DWDM (co-core 1310 nm) key-rate curves.

    Neither arm is filtered; both collect Raman noise over
    ``acceptance_bw_nm`` (defaults to the detector filter width).
    """
    if acceptance_bw_nm is not None:
        detector = replace(detector, filter_bw_nm=acceptance_bw_nm)
    sdm = skr_vs_distance(sdm_plan(launch_dbm), fiber, distances, detector, decoy, noise_length_km)
    dwdm_fiber = replace(fiber, alpha_c=dwdm_alpha_c)
    dwdm = skr_vs_distance(dwdm_plan(launch_dbm), dwdm_fiber, distances, detector, decoy, noise_length_km)
    return {"sdm": sdm, "dwdm": dwdm}


__all__ = [
    "AllocationScore", "ChannelPlan", "CurvePoint", "score_plan", "optimize_allocation", "greedy_allocation",
    "adjacent_classical", "skr_vs_distance", "compare_sdm_dwdm", "sdm_plan", "dwdm_plan", "Role",
]
