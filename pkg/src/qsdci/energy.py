"""Per-information-bit transceiver energy and capacity-versus-power comparison.

Tx and Rx energies are sums of per-bit component energies divided by the
module power conversion efficiency.  QKD costs appear only as the encoder
(Tx) and sifting (Rx) terms.  Total power counts Tx + Rx once per
transported bit.
"""
from __future__ import annotations

from dataclasses import dataclass, fields, replace
from importlib import resources
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np

try:
    import tomllib
except ImportError:  # Python < 3.11
    import tomli as tomllib

PJ = 1e-12
DEFAULT_FOM_J = 50e-15
REFERENCE_NODE_NM = 5.0

TX_FIELDS = ("e_laser", "e_mod", "e_enc", "e_dac")
RX_FIELDS = ("e_pd", "e_adc", "e_dfb", "e_dsp", "e_sift")


class EnergyError(ValueError):
    pass


@dataclass(frozen=True)
class EnergyTable:
    """Component energies in J per information bit."""

    scheme_name: str
    capacity_gbps: float
    eta_conv: float = 1.0
    e_laser: float = 0.0
    e_mod: float = 0.0
    e_enc: float = 0.0
    e_dac: float = 0.0
    e_pd: float = 0.0
    e_adc: float = 0.0
    e_dfb: float = 0.0
    e_dsp: float = 0.0
    e_sift: float = 0.0

    def __post_init__(self):
        for name in TX_FIELDS + RX_FIELDS:
            if getattr(self, name) < 0:
                raise EnergyError(f"{name} must be non-negative")
        if not 0 < self.eta_conv <= 1:
            raise EnergyError("eta_conv must lie in (0, 1]")
        if self.capacity_gbps < 0:
            raise EnergyError("capacity_gbps must be non-negative")

    def with_channels(self, n: int) -> "EnergyTable":
        """Same per-bit costs carried over ``n`` parallel channels."""
        return replace(self, capacity_gbps=self.capacity_gbps * n)


def _eta(table: EnergyTable) -> float:
    if table.eta_conv == 0:
        raise EnergyError("eta_conv is zero")
    return table.eta_conv


def tx_energy_per_bit(table: EnergyTable) -> float:
    return (table.e_laser + table.e_mod + table.e_enc + table.e_dac) / _eta(table)


def rx_energy_per_bit(table: EnergyTable) -> float:
    return (table.e_pd + table.e_adc + table.e_dfb + table.e_dsp + table.e_sift) / _eta(table)


def energy_per_bit(table: EnergyTable) -> float:
    return tx_energy_per_bit(table) + rx_energy_per_bit(table)


def converter_energy_per_bit(count: int, enob: float, sample_rate_hz: float, bitrate_bps: float,
                             fom_j_per_step: float = DEFAULT_FOM_J) -> float:
    """Walden-rule converter power ``count * fom * 2**enob * fs`` per line bit."""
    if bitrate_bps <= 0:
        raise EnergyError("bitrate must be positive")
    return count * fom_j_per_step * 2.0 ** enob * sample_rate_hz / bitrate_bps


def scale_to_node(table: EnergyTable, node_nm: float, reference_nm: float = REFERENCE_NODE_NM) -> EnergyTable:
    """Scale the CMOS-bound terms (DSP, DAC, ADC) linearly with feature size."""
    k = node_nm / reference_nm
    return replace(table, e_dsp=table.e_dsp * k, e_dac=table.e_dac * k, e_adc=table.e_adc * k)


@dataclass(frozen=True)
class SchemePoint:
    scheme_name: str
    capacity_gbps: float
    total_power_w: float


@dataclass(frozen=True)
class Comparison:
    points: list
    slopes: dict  # scheme -> fitted J/bit

    def slope_pj(self, scheme: str) -> float:
        return self.slopes[scheme] / PJ


def slope_through_origin(x, y) -> float:
    """Least-squares slope of y = k x."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    den = float(np.dot(x, x))
    if den == 0:
        return 0.0
    return float(np.dot(x, y) / den)


def scheme_comparison(tables: Sequence[EnergyTable], channel_counts: Iterable[int] = (1,)) -> Comparison:
    """Capacity/power points for each table and channel count, with per-scheme slopes.

    Slopes are in J/bit (capacity is converted to b/s before fitting).
    """
    counts = list(channel_counts)
    points = []
    for t in tables:
        e = energy_per_bit(t)
        for n in counts:
            cap = t.capacity_gbps * n
            points.append(SchemePoint(t.scheme_name, cap, cap * 1e9 * e))
    slopes = {}
    for name in dict.fromkeys(p.scheme_name for p in points):
        sel = [p for p in points if p.scheme_name == name]
        slopes[name] = slope_through_origin([p.capacity_gbps * 1e9 for p in sel], [p.total_power_w for p in sel])
    return Comparison(points=points, slopes=slopes)


# -- config-backed presets ------------------------------------------------------------

_SCHEME_KEYS = {"label", "capacity_gbps", "eta_conv", "laser_pj", "mod_pj", "enc_pj", "pd_pj", "dfb_pj",
                "dsp_pj", "sift_pj", "dac", "adc", "dac_pj", "adc_pj"}
_CONVERTER_KEYS = {"count", "enob", "sample_rate_gsps"}


def table_from_mapping(name: str, spec: Mapping, fom_j_per_step: float = DEFAULT_FOM_J) -> EnergyTable:
    """Build a table from a config section; converters may be given directly or by rule."""
    unknown = set(spec) - _SCHEME_KEYS
    if unknown:
        raise EnergyError(f"unknown key(s) in energy scheme '{name}': {', '.join(sorted(unknown))}")
    if "capacity_gbps" not in spec:
        raise EnergyError(f"energy scheme '{name}' needs capacity_gbps")
    cap = float(spec["capacity_gbps"])

    def conv(kind):
        direct = spec.get(f"{kind}_pj")
        block = spec.get(kind)
        if direct is not None and block is not None:
            raise EnergyError(f"energy scheme '{name}': give either {kind} or {kind}_pj, not both")
        if block is None:
            return float(direct or 0.0) * PJ
        bad = set(block) - _CONVERTER_KEYS
        if bad:
            raise EnergyError(f"unknown key(s) in {name}.{kind}: {', '.join(sorted(bad))}")
        return converter_energy_per_bit(int(block["count"]), float(block["enob"]),
                                        float(block["sample_rate_gsps"]) * 1e9, cap * 1e9, fom_j_per_step)

    return EnergyTable(
        scheme_name=str(spec.get("label", name)),
        capacity_gbps=cap,
        eta_conv=float(spec.get("eta_conv", 1.0)),
        e_laser=float(spec.get("laser_pj", 0.0)) * PJ,
        e_mod=float(spec.get("mod_pj", 0.0)) * PJ,
        e_enc=float(spec.get("enc_pj", 0.0)) * PJ,
        e_dac=conv("dac"),
        e_pd=float(spec.get("pd_pj", 0.0)) * PJ,
        e_adc=conv("adc"),
        e_dfb=float(spec.get("dfb_pj", 0.0)) * PJ,
        e_dsp=float(spec.get("dsp_pj", 0.0)) * PJ,
        e_sift=float(spec.get("sift_pj", 0.0)) * PJ,
    )


def load_presets(path: Optional[str] = None) -> dict:
    """Tables keyed by section name, from ``path`` or the bundled preset file."""
    if path is None:
        raw = resources.files("qsdci").joinpath("data/energy_presets.toml").read_text(encoding="utf-8")
    else:
        with open(path, encoding="utf-8") as fh:
            raw = fh.read()
    doc = tomllib.loads(raw)
    fom = float(doc.get("converter", {}).get("fom_fj_per_step", DEFAULT_FOM_J / 1e-15)) * 1e-15
    return {k: table_from_mapping(k, v, fom) for k, v in doc.get("schemes", {}).items()}


def preset_tables() -> list:
    return list(load_presets().values())


def table_as_pj(table: EnergyTable) -> dict:
    """Component energies in pJ/bit, keyed by field name."""
    return {f.name: getattr(table, f.name) / PJ for f in fields(table) if f.name.startswith("e_")}
