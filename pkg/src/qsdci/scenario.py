"""Scenario files, dispatch to the models, and deterministic CSV output.

A scenario is a TOML document.  Model sections (``fiber``, ``plan``,
``detector``, ``decoy``) mirror the model dataclasses; option sections
(``noise``, ``skr``, ``allocation``, ``curves``, ``dsp``, ``energy``,
``sweep``) parameterise the subcommands.  Every section is optional and
unknown keys are rejected.
"""
from __future__ import annotations

import copy
import csv
import hashlib
import io
import math
import os
from dataclasses import asdict, dataclass, field, fields, replace
from typing import Any, Mapping, Optional, Sequence

import numpy as np

try:
    import tomllib
except ImportError:  # Python < 3.11
    import tomli as tomllib
import tomli_w

from . import __version__, allocation, energy, presets
from .dsp import DspConfig, ImpairmentSpec, generate_frame, run_chain, write_constellation_csv
from .link_model import (ChannelPlan, DetectorSpec, FiberSpec, OpticalCarrier, _ring_adjacency, calibrate_filter_bandwidth,
                         dbm_to_w, fwm_peak_power, phase_mismatch_from_spacing, total_noise, w_to_dbm)
from .qkd_engine import (BLOCK_NZ, DecoyParams, calibrate_misalignment, channel_transmittance, key_from_tally,
                         simulate_session, skr_pipeline)

COMMANDS = ("noise", "skr", "plan", "curves", "dsp", "energy", "sweep")


class ScenarioError(ValueError):
    """Configuration problem; the message names the offending key or field."""


class StageFailure(RuntimeError):
    """A model stage raised while running a scenario."""

    def __init__(self, stage: str, point: Optional[str], cause: BaseException):
        where = f" at {point}" if point else ""
        super().__init__(f"[{stage}]{where}: {cause}")
        self.stage = stage
        self.point = point
        self.cause = cause


def derive_seed(seed: int, stage: str) -> int:
    """Independent 63-bit stream seed for ``stage``: sha256 of ``"{seed}:{stage}"``."""
    digest = hashlib.sha256(f"{seed}:{stage}".encode()).digest()
    return int.from_bytes(digest[:8], "little") >> 1


# -- option sections ------------------------------------------------------------------------


@dataclass(frozen=True)
class NoiseOptions:
    kind: str = "budget"  # "budget" or "fwm"
    launch_dbm: tuple = ()
    target_dbm: Optional[float] = None
    fwm_envelope: bool = False
    spacings_ghz: tuple = (100.0, 200.0, 300.0, 500.0, 700.0, 1000.0)
    fwm_launch_dbm: float = 0.0


@dataclass(frozen=True)
class SkrOptions:
    distance_km: Optional[float] = None
    block_nz: float = BLOCK_NZ
    noise_length_km: Optional[float] = None
    target_qber: Optional[float] = None
    monte_carlo: bool = False
    mc_pulses: int = 10 ** 8


@dataclass(frozen=True)
class AllocationOptions:
    n_classical: Optional[int] = None
    power_dbm: float = 10.0


@dataclass(frozen=True)
class CurveOptions:
    launch_dbm: float = 10.0
    distances_km: tuple = (3.5, 50.0, 100.0, 150.0)
    acceptance_bw_nm: Optional[float] = None
    dwdm_alpha_c: float = presets.O_BAND_ALPHA
    noise_length_km: Optional[float] = None


@dataclass(frozen=True)
class DspOptions:
    order: int = 16
    n_symbols: int = 2 ** 14
    pilot_spacing: int = 64
    impairments: ImpairmentSpec = field(default_factory=ImpairmentSpec)
    receiver: DspConfig = field(default_factory=DspConfig)


@dataclass(frozen=True)
class EnergyOptions:
    presets: tuple = ("imdd_200g", "ic_400g", "shc_400g")
    schemes: Mapping = field(default_factory=dict)
    channel_counts: tuple = (1,)
    node_nm: Optional[float] = None


@dataclass(frozen=True)
class SweepSpec:
    parameter: str
    values: tuple
    command: str = "skr"


@dataclass(frozen=True)
class Scenario:
    name: str = "scenario"
    seed: Optional[int] = None
    fiber: FiberSpec = field(default_factory=presets.fiber)
    plan: ChannelPlan = field(default_factory=presets.link_plan)
    detector: DetectorSpec = field(default_factory=DetectorSpec)
    decoy: DecoyParams = field(default_factory=DecoyParams)
    noise: NoiseOptions = field(default_factory=NoiseOptions)
    skr: SkrOptions = field(default_factory=SkrOptions)
    allocation: AllocationOptions = field(default_factory=AllocationOptions)
    curves: CurveOptions = field(default_factory=CurveOptions)
    dsp: Optional[DspOptions] = None
    energy: Optional[EnergyOptions] = None
    sweep: Optional[SweepSpec] = None


# -- dict <-> dataclass --------------------------------------------------------------------

_SIMPLE = {"noise": NoiseOptions, "skr": SkrOptions, "allocation": AllocationOptions, "curves": CurveOptions,
           "decoy": DecoyParams}
_TOP_KEYS = ("name", "seed", "fiber", "plan", "detector", "decoy", "noise", "skr", "allocation", "curves", "dsp",
             "energy", "sweep")


def _check_keys(data: Mapping, allowed, where: str) -> None:
    if not isinstance(data, Mapping):
        raise ScenarioError(f"'{where}' must be a table")
    for key in data:
        if key not in allowed:
            raise ScenarioError(f"unknown key '{key}' in [{where}]" if where else f"unknown key '{key}'")


def _construct(cls, kwargs: dict, where: str):
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ScenarioError(f"[{where}] {exc}") from exc


def _plain(cls, data: Mapping, where: str):
    names = {f.name for f in fields(cls)}
    _check_keys(data, names, where)
    kwargs = {k: tuple(v) if isinstance(v, list) else v for k, v in data.items()}
    return _construct(cls, kwargs, where)


def _fiber(data: Mapping) -> FiberSpec:
    names = {f.name for f in fields(FiberSpec)}
    _check_keys(data, names, "fiber")
    kw = dict(data)
    if "adjacency" in kw:
        kw["adjacency"] = tuple(tuple(bool(v) for v in row) for row in kw["adjacency"])
    else:
        kw["adjacency"] = _ring_adjacency(int(kw.get("core_count", 7)) - 1)
    if "pair_coupling" in kw:
        try:
            kw["pair_coupling"] = {(int(i), int(j)): float(h) for i, j, h in kw["pair_coupling"]}
        except (TypeError, ValueError) as exc:
            raise ScenarioError("[fiber] pair_coupling entries must be [i, j, h]") from exc
    return _construct(FiberSpec, kw, "fiber")


def _plan(data: Mapping) -> ChannelPlan:
    _check_keys(data, {"mode", "channel_spacing_ghz", "carriers"}, "plan")
    if "carriers" not in data:
        raise ScenarioError("[plan] needs a 'carriers' array")
    carriers = []
    for k, c in enumerate(data["carriers"]):
        where = f"plan.carriers[{k}]"
        _check_keys(c, {"wavelength_nm", "power_dbm", "core", "role"}, where)
        kw = {"wavelength_nm": c.get("wavelength_nm"), "power_dbm": c.get("power_dbm"),
              "core_index": c.get("core"), "role": c.get("role", "classical")}
        missing = [n for n in ("wavelength_nm", "power_dbm", "core") if n not in c]
        if missing:
            raise ScenarioError(f"[{where}] missing {', '.join(missing)}")
        carriers.append(_construct(OpticalCarrier, kw, where))
    kw = {"carriers": tuple(carriers), "mode": data.get("mode", "sdm")}
    if "channel_spacing_ghz" in data:
        kw["channel_spacing_ghz"] = data["channel_spacing_ghz"]
    return _construct(ChannelPlan, kw, "plan")


def _dsp(data: Mapping) -> DspOptions:
    _check_keys(data, {"order", "n_symbols", "pilot_spacing", "impairments", "receiver"}, "dsp")
    kw = {k: v for k, v in data.items() if k not in ("impairments", "receiver")}
    kw["impairments"] = _plain(ImpairmentSpec, data.get("impairments", {}), "dsp.impairments")
    kw["receiver"] = _plain(DspConfig, data.get("receiver", {}), "dsp.receiver")
    return _construct(DspOptions, kw, "dsp")


def _energy(data: Mapping) -> EnergyOptions:
    _check_keys(data, {f.name for f in fields(EnergyOptions)}, "energy")
    kw = {k: tuple(v) if isinstance(v, list) else v for k, v in data.items()}
    opts = _construct(EnergyOptions, kw, "energy")
    known = energy.load_presets()
    for name in opts.presets:
        if name not in known:
            raise ScenarioError(f"[energy] unknown preset '{name}'; available: {', '.join(known)}")
    for name, spec in opts.schemes.items():
        try:
            energy.table_from_mapping(name, spec)
        except (energy.EnergyError, KeyError, TypeError) as exc:
            raise ScenarioError(f"[energy.schemes.{name}] {exc}") from exc
    return opts


def scenario_from_dict(doc: Mapping) -> Scenario:
    _check_keys(doc, _TOP_KEYS, "")
    kw: dict[str, Any] = {}
    if "name" in doc:
        kw["name"] = str(doc["name"])
    if "seed" in doc:
        if not isinstance(doc["seed"], int) or isinstance(doc["seed"], bool) or doc["seed"] < 0:
            raise ScenarioError("'seed' must be a non-negative integer")
        kw["seed"] = doc["seed"]
    if "fiber" in doc:
        kw["fiber"] = _fiber(doc["fiber"])
    if "plan" in doc:
        kw["plan"] = _plan(doc["plan"])
    if "detector" in doc:
        kw["detector"] = _plain(DetectorSpec, doc["detector"], "detector")
    for key, cls in _SIMPLE.items():
        if key in doc:
            kw[key] = _plain(cls, doc[key], key)
    if "dsp" in doc:
        kw["dsp"] = _dsp(doc["dsp"])
    if "energy" in doc:
        kw["energy"] = _energy(doc["energy"])
    if "sweep" in doc:
        sw = _plain(SweepSpec, doc["sweep"], "sweep")
        if sw.command not in COMMANDS or sw.command == "sweep":
            raise ScenarioError(f"[sweep] command must be one of {', '.join(COMMANDS[:-1])}")
        kw["sweep"] = sw
    scenario = Scenario(**kw)
    try:
        scenario.plan.validate_for(scenario.fiber)
    except ValueError as exc:
        raise ScenarioError(f"[plan] {exc}") from exc
    if scenario.sweep is not None:
        _check_sweep(doc, scenario.sweep)
    return scenario


def _clean(value):
    """TOML-serialisable form: tuples to lists, enums to values, None dropped by the caller."""
    if isinstance(value, tuple):
        return [_clean(v) for v in value]
    if isinstance(value, Mapping):
        return {str(k): _clean(v) for k, v in value.items() if v is not None}
    if hasattr(value, "value") and isinstance(getattr(value, "value"), str):
        return value.value
    if isinstance(value, np.generic):
        return value.item()
    return value


def _section(obj, skip=()) -> dict:
    out = {}
    for f in fields(obj):
        if f.name in skip:
            continue
        v = getattr(obj, f.name)
        if v is None:
            continue
        out[f.name] = _clean(v)
    return out


def scenario_to_dict(s: Scenario) -> dict:
    """Fully explicit document; ``load(save(s)) == s``."""
    doc: dict[str, Any] = {"name": s.name}
    if s.seed is not None:
        doc["seed"] = s.seed
    fib = _section(s.fiber, skip=("adjacency", "pair_coupling"))
    if s.fiber.adjacency != _ring_adjacency(s.fiber.core_count - 1):
        fib["adjacency"] = [list(r) for r in s.fiber.adjacency]
    if s.fiber.pair_coupling:
        fib["pair_coupling"] = [[i, j, h] for (i, j), h in sorted(s.fiber.pair_coupling.items())]
    doc["fiber"] = fib
    plan = {"mode": s.plan.mode.value}
    if s.plan.channel_spacing_ghz is not None:
        plan["channel_spacing_ghz"] = s.plan.channel_spacing_ghz
    plan["carriers"] = [{"wavelength_nm": c.wavelength_nm, "power_dbm": c.power_dbm, "core": c.core_index,
                         "role": c.role.value} for c in s.plan.carriers]
    doc["plan"] = plan
    det = _section(s.detector)
    if det["p_dc"] == s.detector.dark_rate_hz * s.detector.gate_width_s:
        del det["p_dc"]  # derived; keeps sweeps over the dark rate consistent
    doc["detector"] = det
    for key in ("decoy", "noise", "skr", "allocation", "curves"):
        doc[key] = _section(getattr(s, key))
    if s.dsp is not None:
        doc["dsp"] = {"order": s.dsp.order, "n_symbols": s.dsp.n_symbols, "pilot_spacing": s.dsp.pilot_spacing,
                      "impairments": _section(s.dsp.impairments), "receiver": _section(s.dsp.receiver)}
    if s.energy is not None:
        doc["energy"] = _section(s.energy)
    if s.sweep is not None:
        doc["sweep"] = _section(s.sweep)
    return doc


def load_scenario(path) -> Scenario:
    try:
        with open(path, "rb") as fh:
            doc = tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise ScenarioError(f"{path}: parse error: {exc}") from exc
    except OSError as exc:
        raise ScenarioError(f"{path}: {exc}") from exc
    return scenario_from_dict(doc)


def loads_scenario(text: str) -> Scenario:
    try:
        doc = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ScenarioError(f"parse error: {exc}") from exc
    return scenario_from_dict(doc)


def dumps_scenario(s: Scenario) -> str:
    return tomli_w.dumps(scenario_to_dict(s))


def save_scenario(s: Scenario, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(dumps_scenario(s))


# -- parameter paths ---------------------------------------------------------------------------


def _assign(doc: dict, path: str, value) -> None:
    """Set ``value`` at dotted ``path``, creating missing tables on the way."""
    parts = path.split(".")
    node: Any = doc
    for k, part in enumerate(parts):
        last = k == len(parts) - 1
        if isinstance(node, list):
            if not part.isdigit() or int(part) >= len(node):
                raise ScenarioError(f"parameter path '{path}' does not exist (at '{part}')")
            if last:
                node[int(part)] = value
            else:
                node = node[int(part)]
        elif isinstance(node, dict):
            if last:
                node[part] = value
            else:
                node = node.setdefault(part, {})
        else:
            raise ScenarioError(f"parameter path '{path}' does not exist (at '{part}')")


def _apply(doc: Mapping, path: str, value) -> Scenario:
    doc = copy.deepcopy(dict(doc))
    _assign(doc, path, value)
    return scenario_from_dict(doc)


def _check_sweep(doc: Mapping, sw: SweepSpec) -> None:
    base = {k: v for k, v in doc.items() if k != "sweep"}
    if not sw.values:
        raise ScenarioError("[sweep] values must not be empty")
    try:
        _apply(base, sw.parameter, sw.values[0])
    except ScenarioError as exc:
        raise ScenarioError(f"[sweep] parameter '{sw.parameter}' is not a valid path: {exc}") from exc


def with_parameter(s: Scenario, path: str, value) -> Scenario:
    """Copy of ``s`` with the value at dotted ``path`` replaced and revalidated."""
    return _apply(scenario_to_dict(s), path, value)


# -- results ---------------------------------------------------------------------------------


@dataclass
class ResultTable:
    columns: list
    rows: list = field(default_factory=list)
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        for r in self.rows:
            if len(r) != len(self.columns):
                raise ValueError("rows must match the column count")

    def column(self, name: str) -> list:
        k = self.columns.index(name)
        return [r[k] for r in self.rows]


def format_cell(value) -> str:
    """'.' decimal, shortest round-trip digits, scientific for |x| < 1e-3 or >= 1e6."""
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        x = float(value)
        if math.isnan(x):
            return "nan"
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        if x != 0 and (abs(x) < 1e-3 or abs(x) >= 1e6):
            return np.format_float_scientific(x, unique=True, trim="-")
        return repr(x)
    if value is None:
        return ""
    return str(value)


def emit_csv(table: ResultTable, path=None) -> str:
    """Render (and optionally write) the table: ``# key: value`` metadata lines, header, rows."""
    buf = io.StringIO()
    for key, value in table.metadata.items():
        buf.write(f"# {key}: {format_cell(value)}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(table.columns)
    for r in table.rows:
        w.writerow([format_cell(v) for v in r])
    text = buf.getvalue()
    if path is not None:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    return text


def read_csv(path_or_text: str) -> ResultTable:
    """Parse emitted CSV back; numeric cells become floats (ints stay ints)."""
    text = path_or_text
    if "\n" not in path_or_text and os.path.exists(path_or_text):
        with open(path_or_text, encoding="utf-8") as fh:
            text = fh.read()
    lines = text.splitlines()
    meta = {}
    k = 0
    while k < len(lines) and lines[k].startswith("# "):
        key, _, value = lines[k][2:].partition(": ")
        meta[key] = value
        k += 1
    reader = csv.reader(lines[k:])
    columns = next(reader, [])

    def parse(cell):
        for conv in (int, float):
            try:
                return conv(cell)
            except ValueError:
                pass
        return cell

    rows = [[parse(c) for c in r] for r in reader]
    return ResultTable(columns=columns, rows=rows, metadata=meta)


# -- dispatch -------------------------------------------------------------------------------------


def _base_metadata(s: Scenario, command: str, seed: Optional[int]) -> dict:
    return {
        "tool": "qsdci",
        "version": __version__,
        "scenario": s.name,
        "command": command,
        "seed": "none" if seed is None else seed,
    }


def _link_knobs(s: Scenario, filter_bw_nm: float) -> dict:
    d = s.detector
    return {
        "filter_bw_nm": filter_bw_nm,
        "insertion_loss_db": d.insertion_loss_db,
        "detector_efficiency": d.efficiency,
        "p_dc": d.p_dc,
        "srs_efficiency": s.fiber.srs_efficiency,
        "raman_efficiency": s.fiber.raman_efficiency,
        "coupling": s.fiber.coupling,
    }


def _qkd_knobs(s: Scenario) -> dict:
    q = s.decoy
    return {"e_misalign": q.e_misalign, "f_ec": q.f_ec, "eps_sec": q.eps_sec, "eps_cor": q.eps_cor,
            "mu": q.mu, "nu": q.nu, "p_mu": q.p_mu, "p_z_alice": q.p_z_alice, "p_z_bob": q.p_z_bob,
            "block_nz": s.skr.block_nz}


def _scaled_plan(plan: ChannelPlan, launch_dbm: float) -> ChannelPlan:
    return plan.with_carriers([c if c.role.value == "quantum" else replace(c, power_dbm=launch_dbm)
                               for c in plan.carriers])


def _run_noise(s: Scenario, seed, meta: dict) -> ResultTable:
    opt = s.noise
    if opt.kind == "fwm":
        p = dbm_to_w(opt.fwm_launch_dbm)
        rows = []
        for df in opt.spacings_ghz:
            dbeta = phase_mismatch_from_spacing(s.fiber.beta2_ps2_per_km, df)
            pw = fwm_peak_power(p, p, p, s.fiber.gamma_nl, s.fiber.alpha_c, s.fiber.length_km, True, dbeta,
                                envelope=opt.fwm_envelope)
            rows.append([float(df), pw, w_to_dbm(pw)])
        meta.update({"fwm_envelope": opt.fwm_envelope, "fwm_launch_dbm": opt.fwm_launch_dbm,
                     "gamma_nl": s.fiber.gamma_nl, "beta2_ps2_per_km": s.fiber.beta2_ps2_per_km})
        return ResultTable(["spacing_ghz", "p_fwm_w", "p_fwm_dbm"], rows, meta)
    if opt.kind != "budget":
        raise ScenarioError(f"[noise] kind must be 'budget' or 'fwm', got {opt.kind!r}")
    detector = s.detector
    calibrated = False
    if opt.target_dbm is not None:
        ref_plan = _scaled_plan(s.plan, opt.launch_dbm[0]) if opt.launch_dbm else s.plan
        bw = calibrate_filter_bandwidth(opt.target_dbm, ref_plan, s.fiber, detector)
        detector = replace(detector, filter_bw_nm=bw)
        calibrated = True
    launches = list(opt.launch_dbm) or [None]
    rows = []
    for launch in launches:
        plan = s.plan if launch is None else _scaled_plan(s.plan, launch)
        b = total_noise(plan, s.fiber, detector, fwm_envelope=opt.fwm_envelope)
        shown = max((c.power_dbm for c in plan.classical), default=float("-inf")) if launch is None else launch
        rows.append([shown, b.p_f_icsrs_w, b.p_b_icsrs_w, b.p_fwm_w, b.p_f_srs_w + b.p_b_srs_w, b.icxt_ratio,
                     b.p_total_w, b.p_total_dbm, b.p_r_per_gate])
    meta.update(_link_knobs(s, detector.filter_bw_nm))
    meta["filter_bw_calibrated"] = calibrated
    if calibrated:
        meta["target_dbm"] = opt.target_dbm
    meta["fwm_envelope"] = opt.fwm_envelope
    return ResultTable(["launch_dbm", "p_f_icsrs_w", "p_b_icsrs_w", "p_fwm_w", "p_srs_w", "icxt_ratio",
                        "p_total_w", "p_total_dbm", "p_r"], rows, meta)


def _run_skr(s: Scenario, seed, meta: dict) -> ResultTable:
    opt = s.skr
    d = s.fiber.length_km if opt.distance_km is None else opt.distance_km
    decoy = s.decoy
    if opt.target_qber is not None:
        base = skr_pipeline(d, s.plan, s.fiber, s.detector, decoy, opt.block_nz, opt.noise_length_km)
        eta = channel_transmittance(s.fiber, s.detector, d) * s.detector.efficiency
        decoy = replace(decoy, e_misalign=calibrate_misalignment(opt.target_qber, decoy, eta, base.extra["p_r"]))
    res = skr_pipeline(d, s.plan, s.fiber, s.detector, decoy, opt.block_nz, opt.noise_length_km)
    cols = ["distance_km", "skr_bps", "qber", "p_r", "noise_dbm", "n_z", "duration_s"]
    row = [float(d), res.skr_bps, res.qber, res.extra["p_r"], res.extra["noise_dbm"], res.extra["n_z"],
           res.extra["duration_s"]]
    meta.update(_link_knobs(s, s.detector.filter_bw_nm))
    meta.update(_qkd_knobs(replace(s, decoy=decoy)))
    meta["noise_length_km"] = "distance" if opt.noise_length_km is None else opt.noise_length_km
    if opt.target_qber is not None:
        meta["target_qber"] = opt.target_qber
    if opt.monte_carlo:
        if seed is None:
            raise ScenarioError("Monte Carlo needs a seed (scenario 'seed' or --seed)")
        mc_seed = derive_seed(seed, "skr.monte_carlo")
        t_ch = channel_transmittance(s.fiber, s.detector, d)
        tally = simulate_session(mc_seed, decoy, t_ch, s.detector.efficiency, res.extra["p_r"], opt.mc_pulses)
        mc = key_from_tally(tally, decoy)
        cols += ["mc_skr_bps", "mc_qber", "mc_n_z"]
        row += [mc.skr_bps, mc.qber, tally.n_z]
        meta["mc_pulses"] = opt.mc_pulses
        meta["mc_seed"] = mc_seed
    return ResultTable(cols, [row], meta)


def _run_plan(s: Scenario, seed, meta: dict) -> ResultTable:
    opt = s.allocation
    n = len(s.plan.classical) if opt.n_classical is None else opt.n_classical
    best = allocation.optimize_allocation(s.fiber, n, opt.power_dbm, s.detector, s.decoy)
    greedy = allocation.greedy_allocation(s.fiber, n)
    cores = ";".join(str(c) for c in best.classical_cores)
    row = [best.quantum_core, cores, best.skr_bps, best.qber, best.budget.p_r_per_gate,
           (best.quantum_core, best.classical_cores) == greedy]
    meta.update(_link_knobs(s, s.detector.filter_bw_nm))
    meta.update(_qkd_knobs(s))
    meta.update({"n_classical": n, "power_dbm": opt.power_dbm})
    return ResultTable(["quantum_core", "classical_cores", "skr_bps", "qber", "p_r", "matches_greedy"], [row], meta)


def _run_curves(s: Scenario, seed, meta: dict) -> ResultTable:
    opt = s.curves
    curves = allocation.compare_sdm_dwdm(s.fiber, s.detector, s.decoy, opt.launch_dbm, opt.distances_km,
                                         opt.acceptance_bw_nm, opt.dwdm_alpha_c, opt.noise_length_km)
    rows = [[arm, p.distance_km, p.skr_bps, p.qber, p.p_r] for arm in ("sdm", "dwdm") for p in curves[arm]]
    bw = s.detector.filter_bw_nm if opt.acceptance_bw_nm is None else opt.acceptance_bw_nm
    meta.update(_link_knobs(s, bw))
    meta.update(_qkd_knobs(s))
    meta.update({"launch_dbm": opt.launch_dbm, "dwdm_alpha_c": opt.dwdm_alpha_c,
                 "noise_length_km": "distance" if opt.noise_length_km is None else opt.noise_length_km})
    return ResultTable(["arm", "distance_km", "skr_bps", "qber", "p_r"], rows, meta)


DSP_DIAG_COLUMNS = ("timing_ppm", "timing_tau0", "timing_residual", "tap_norm", "tap_offdiag_fraction", "dd_mse",
                    "max_pilot_jump_rad", "pilot_residual_rms_rad", "cycle_slip", "align_lag", "pol_swapped")


def _run_dsp(s: Scenario, seed, meta: dict, dump_path=None) -> ResultTable:
    opt = s.dsp or DspOptions()
    if seed is None:
        raise ScenarioError("the dsp stage needs a seed (scenario 'seed' or --seed)")
    frame_seed = derive_seed(seed, "dsp.frame")
    channel_seed = derive_seed(seed, "dsp.channel")
    frame = generate_frame(opt.order, opt.n_symbols, opt.pilot_spacing, frame_seed)
    cfg = replace(opt.receiver, dump=opt.receiver.dump or dump_path is not None)
    rep = run_chain(frame, opt.impairments, cfg, channel_seed)
    if dump_path is not None:
        write_constellation_csv(rep.constellation_dump, dump_path)
    cols = ["ber", "bit_errors", "bits", "evm_percent", "pre_fec_ok"] + list(DSP_DIAG_COLUMNS)
    row = [rep.ber, rep.bit_errors, rep.bits, rep.evm_percent, rep.pre_fec_ok]
    row += [rep.diagnostics[k] for k in DSP_DIAG_COLUMNS]
    meta.update({"frame_seed": frame_seed, "channel_seed": channel_seed, "order": opt.order,
                 "n_symbols": opt.n_symbols, "pilot_spacing": opt.pilot_spacing})
    meta.update({f"impairment_{k}": v for k, v in asdict(opt.impairments).items()})
    meta.update({f"receiver_{k}": ("none" if v is None else v) for k, v in asdict(cfg).items()})
    return ResultTable(cols, [row], meta)


def _energy_tables(opt: EnergyOptions) -> list:
    known = energy.load_presets()
    tables = [known[n] for n in opt.presets]
    tables += [energy.table_from_mapping(n, spec) for n, spec in opt.schemes.items()]
    if opt.node_nm is not None:
        tables = [energy.scale_to_node(t, opt.node_nm) for t in tables]
    return tables


def _run_energy(s: Scenario, seed, meta: dict) -> ResultTable:
    opt = s.energy or EnergyOptions()
    cmp = energy.scheme_comparison(_energy_tables(opt), opt.channel_counts)
    rows = [[p.scheme_name, p.capacity_gbps, p.total_power_w, cmp.slope_pj(p.scheme_name)] for p in cmp.points]
    meta.update({"power_convention": "tx+rx counted once per transported bit",
                 "preset_values": "assumptions (not measured)",
                 "converter_fom_fj_per_step": energy.DEFAULT_FOM_J / 1e-15,
                 "cmos_node_nm": energy.REFERENCE_NODE_NM if opt.node_nm is None else opt.node_nm,
                 "channel_counts": ";".join(str(c) for c in opt.channel_counts)})
    return ResultTable(["scheme", "capacity_gbps", "power_w", "slope_pj_per_bit"], rows, meta)


_RUNNERS = {"noise": _run_noise, "skr": _run_skr, "plan": _run_plan, "curves": _run_curves, "energy": _run_energy}


def _run_one(s: Scenario, command: str, seed, dump_path=None, point: Optional[str] = None) -> ResultTable:
    meta = _base_metadata(s, command, seed)
    try:
        if command == "dsp":
            return _run_dsp(s, seed, meta, dump_path)
        return _RUNNERS[command](s, seed, meta)
    except ScenarioError:
        raise
    except Exception as exc:
        stage = getattr(exc, "stage", None)
        label = f"{command}.{stage}" if stage else command
        raise StageFailure(label, point, exc) from exc


def run_scenario(s: Scenario, command: str = "skr", seed: Optional[int] = None, dump_path=None,
                 jobs: int = 1) -> ResultTable:
    """Run ``command`` on ``s``; ``seed`` overrides the scenario seed."""
    if command not in COMMANDS:
        raise ScenarioError(f"unknown command {command!r}; expected one of {', '.join(COMMANDS)}")
    seed = s.seed if seed is None else seed
    if command != "sweep":
        return _run_one(s, command, seed, dump_path)
    if s.sweep is None:
        raise ScenarioError("the sweep command needs a [sweep] section")
    sw = s.sweep
    points = []
    for k, v in enumerate(sw.values):
        try:
            points.append(with_parameter(s, sw.parameter, v))
        except ScenarioError as exc:
            raise ScenarioError(f"[sweep] point {k} ({sw.parameter}={v!r}): {exc}") from exc

    def run_point(k):
        point_seed = None if seed is None else derive_seed(seed, f"sweep.{k}")
        return _run_one(points[k], sw.command, point_seed, point=f"{sw.parameter}={sw.values[k]!r}")

    if jobs > 1:
        from concurrent.futures import ThreadPoolExecutor
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(run_point, range(len(points))))
    else:
        results = [run_point(k) for k in range(len(points))]
    name = sw.parameter
    columns = ["point", name] + (results[0].columns if results else [])
    rows = [[k, sw.values[k]] + r for k, res in enumerate(results) for r in res.rows]
    meta = _base_metadata(s, "sweep", seed)
    meta.update({"sweep_command": sw.command, "sweep_parameter": name, "sweep_points": len(points)})
    if results:
        for key, value in results[0].metadata.items():
            if key not in meta and key not in ("command", "seed", "mc_seed", "frame_seed", "channel_seed"):
                meta[key] = value if all(r.metadata.get(key) == value for r in results) else "varies"
    meta["point_seed_rule"] = "sha256('{seed}:sweep.{index}')"
    return ResultTable(columns, rows, meta)
