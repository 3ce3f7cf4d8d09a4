"""Operating point of the 3.5 km seven-core coexistence link."""
from __future__ import annotations

from .link_model import ChannelPlan, DetectorSpec, FiberSpec, OpticalCarrier, Role
from .qkd_engine import DecoyParams

QUANTUM_NM = 1550.0
CLASSICAL_NM = 1550.8  # one 100 GHz slot above the quantum channel
O_BAND_NM = 1310.0
O_BAND_ALPHA = 0.093  # 1/km

QUANTUM_CORE = 1
LO_CORE = 4
LO_DBM = 10.0
WEAK_DBM = 0.0

# Single-carrier noise measurement: one classical core at 2.04 dBm, 1 ns gates.
SINGLE_LAUNCH_DBM = 2.04
SINGLE_TARGET_DBM = -112.9
SINGLE_P_DC = 6e-6


def fiber(length_km: float = 3.5) -> FiberSpec:
    return FiberSpec.seven_core(length_km)


def detector(**overrides) -> DetectorSpec:
    return DetectorSpec(**overrides)


def decoy(**overrides) -> DecoyParams:
    return DecoyParams(**overrides)


def quantum_carrier(core: int = QUANTUM_CORE) -> OpticalCarrier:
    return OpticalCarrier(QUANTUM_NM, -90.0, core, Role.QUANTUM)


def link_plan(weak_dbm: float = WEAK_DBM, lo_dbm: float = LO_DBM) -> ChannelPlan:
    """Quantum on core 1, LO on the opposite outer core 4, weak data elsewhere."""
    carriers = [quantum_carrier(), OpticalCarrier(CLASSICAL_NM, lo_dbm, LO_CORE, Role.LOCAL_OSCILLATOR)]
    carriers += [OpticalCarrier(CLASSICAL_NM, weak_dbm, c) for c in (0, 2, 3, 5, 6)]
    return ChannelPlan(tuple(carriers))


def single_carrier_plan(launch_dbm: float = SINGLE_LAUNCH_DBM, quantum_core: int = QUANTUM_CORE,
              classical_core: int = 0) -> ChannelPlan:
    """Single classical core next to the measured core."""
    return ChannelPlan((quantum_carrier(quantum_core), OpticalCarrier(CLASSICAL_NM, launch_dbm, classical_core)))
