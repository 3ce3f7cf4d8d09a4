"""End-to-end transmitter, channel and receiver run with per-stage diagnostics."""
from __future__ import annotations

import csv
from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np

from .impairments import ImpairmentSpec, apply_impairments
from .qam import ConvergenceError, DspError, SymbolFrame
from .receiver import (GARDNER_KI, GARDNER_KP, HD_FEC_BER, BerReport, align_to_frame, ber_count,
                       cmma_equalize, gsop, pilot_phase_recovery, retime, timing_estimate)
from .waveform import DEFAULT_BAUD, DEFAULT_ROLLOFF, DEFAULT_SPAN, matched_filter_downsample, tx_waveform


class StageError(DspError):
    """A chain stage failed; ``stage`` names it and ``cause`` keeps the original error."""

    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"stage '{stage}': {cause}")
        self.stage = stage
        self.cause = cause

    @property
    def convergence(self) -> bool:
        return isinstance(self.cause, ConvergenceError)


@dataclass(frozen=True)
class DspConfig:
    baud: float = DEFAULT_BAUD
    sps: int = 2
    rolloff: float = DEFAULT_ROLLOFF
    span_symbols: int = DEFAULT_SPAN
    taps: int = 21
    step_size: float = 1e-3
    n_train: int = 4000
    n_cma: Optional[int] = None
    pll_gain: float = 0.1
    gardner_kp: float = GARDNER_KP
    gardner_ki: float = GARDNER_KI
    dd_nmse_max: float = 0.1
    max_lag: int = 16
    fec_threshold: float = HD_FEC_BER
    discard_training: bool = True
    dump: bool = False
    dump_limit: int = 2048

    @property
    def guard_symbols(self) -> int:
        return self.span_symbols // 2


STAGES = ("tx_waveform", "apply_impairments", "gsop", "clock_recovery", "matched_filter_downsample",
          "cmma_equalize", "pilot_phase_recovery", "ber_count")


def _dump_rows(stage, pols, limit):
    rows = []
    for p in range(2):
        for v in pols[p, :limit]:
            rows.append((stage, "XY"[p], float(v.real), float(v.imag)))
    return rows


def run_chain(frame: SymbolFrame, impairments: Optional[ImpairmentSpec] = None,
              config: Optional[DspConfig] = None, seed: int = 0, numba=None) -> BerReport:
    """Transmit ``frame`` through ``impairments`` and count bit errors after the receiver."""
    imp = impairments or ImpairmentSpec()
    cfg = config or DspConfig()
    diag: dict = {}
    dump: list = []
    stage = STAGES[0]
    try:
        wave = tx_waveform(frame, cfg.rolloff, cfg.sps, cfg.span_symbols, cfg.baud, cfg.guard_symbols)
        diag["tx_power"] = float(np.sum(wave.power()))
        stage = "apply_impairments"
        rx = apply_impairments(wave, imp, seed)
        diag["rx_power"] = float(np.sum(rx.power()))
        stage = "gsop"
        rx = gsop(rx)
        if cfg.dump:
            dump += _dump_rows("received", rx.pols()[:, cfg.guard_symbols * cfg.sps::cfg.sps], cfg.dump_limit)
        stage = "clock_recovery"
        est = timing_estimate(rx, cfg.gardner_kp, cfg.gardner_ki, cfg.rolloff, numba=numba)
        diag.update({f"timing_{k}": v for k, v in asdict(est).items()})
        rx = retime(rx, est, numba=numba)
        stage = "matched_filter_downsample"
        rx = matched_filter_downsample(rx, cfg.rolloff, cfg.sps, 1, cfg.span_symbols)
        diag["mf_power"] = float(np.sum(rx.power()))
        stage = "cmma_equalize"
        eq = cmma_equalize(rx, cfg.taps, cfg.step_size, cfg.n_train + cfg.guard_symbols, cfg.n_cma,
                           frame.order, cfg.pll_gain, cfg.dd_nmse_max, numba=numba)
        energy = eq.tap_energy()
        diag["tap_norm"] = float(np.sqrt(energy.sum()))
        diag["tap_offdiag_fraction"] = float(1 - np.trace(energy) / energy.sum())
        diag["dd_mse"] = float(np.mean(eq.error[-2048:]) / 2)
        symbols, align = align_to_frame(eq.symbols[:, cfg.guard_symbols:], frame, cfg.max_lag)
        diag["align_lag"] = align.lag
        diag["pol_swapped"] = align.swapped
        if cfg.dump:
            dump += _dump_rows("equalized", symbols[:, cfg.n_train:], cfg.dump_limit)
        stage = "pilot_phase_recovery"
        ph = pilot_phase_recovery(symbols, frame)
        diag["max_pilot_jump_rad"] = ph.max_pilot_jump
        diag["pilot_residual_rms_rad"] = ph.pilot_residual_rms
        diag["cycle_slip"] = ph.cycle_slip
        diag["phase_track_std_rad"] = float(np.std(eq.phase_track[:, cfg.n_train:]))
        if cfg.dump:
            dump += _dump_rows("recovered", ph.symbols[:, cfg.n_train:], cfg.dump_limit)
        stage = "ber_count"
        report = ber_count(ph.symbols, frame, cfg.n_train if cfg.discard_training else 0, cfg.fec_threshold)
    except StageError:
        raise
    except Exception as exc:  # every stage failure is re-labelled with its stage
        raise StageError(stage, exc) from exc
    report.diagnostics = diag
    report.constellation_dump = dump if cfg.dump else None
    return report


def write_constellation_csv(dump, path) -> None:
    """Write (stage, pol, i, q) rows for constellation plots."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["stage", "pol", "i", "q"])
        for stage, pol, i, q in dump:
            w.writerow([stage, pol, repr(i), repr(q)])
