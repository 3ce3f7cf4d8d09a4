"""Self-homodyne dual-polarization QAM waveform and receiver chain."""
from .chain import STAGES, DspConfig, StageError, run_chain, write_constellation_csv
from .impairments import ImpairmentError, ImpairmentSpec, apply_impairments
from .qam import ConvergenceError, DspError, SymbolFrame, generate_frame
from .receiver import (BerReport, EqualizerOutput, TimingEstimate, align_to_frame, ber_count, clock_recovery,
                       cmma_equalize, gsop, pilot_phase_recovery, timing_estimate)
from .waveform import WaveformQuad, matched_filter_downsample, resample_rational, rrc_taps, tx_waveform

__all__ = [
    "STAGES", "DspConfig", "StageError", "run_chain", "write_constellation_csv",
    "ImpairmentError", "ImpairmentSpec", "apply_impairments",
    "ConvergenceError", "DspError", "SymbolFrame", "generate_frame",
    "BerReport", "EqualizerOutput", "TimingEstimate", "align_to_frame", "ber_count", "clock_recovery",
    "cmma_equalize", "gsop", "pilot_phase_recovery", "timing_estimate",
    "WaveformQuad", "matched_filter_downsample", "resample_rational", "rrc_taps", "tx_waveform",
]
