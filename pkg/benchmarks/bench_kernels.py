"""Time each hot loop with the numba kernel and with its numpy twin.

Run from the repository root::

    python3 benchmarks/bench_kernels.py --repeat 5

The first numba call compiles (or loads the on-disk cache); it is made
once before timing and reported separately.  Both backends get the same
inputs, and the script checks that their outputs agree before timing.
"""
import argparse
import time

import numpy as np

from qsdci import _accel
from qsdci.dsp import (ImpairmentSpec, apply_impairments, cmma_equalize, generate_frame, gsop,
                       matched_filter_downsample, tx_waveform)
from qsdci.dsp import _kernels
from qsdci.qkd_engine import DecoyParams, simulate_session


def _best(fn, repeat):
    best = np.inf
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def _cases(n_symbols, pulses):
    frame = generate_frame(n_symbols=n_symbols, seed=0)
    wave = apply_impairments(tx_waveform(frame, guard_symbols=64),
                             ImpairmentSpec(snr_db=20, clock_offset_ppm=50, pol_rotation_rad=0.5), seed=1)
    rails = gsop(wave).rails()
    times = np.arange(0, rails.shape[1] - 4, 1.0 + 50e-6)
    aligned = apply_impairments(tx_waveform(frame, guard_symbols=64),
                                ImpairmentSpec(snr_db=20, pol_rotation_rad=0.5), seed=1)
    one_sps = matched_filter_downsample(aligned, sps_out=1)
    params = DecoyParams()

    return {
        "resample_at": (lambda nb: _kernels.resample_at(rails, times, numba=nb),
                        lambda a, b: np.max(np.abs(a - b)) < 1e-9),
        "gardner": (lambda nb: _kernels.gardner(rails, 2.0, 1e-3, 1e-6, rails.shape[1] // 2, numba=nb),
                    lambda a, b: np.max(np.abs(a[0] - b[0])) < 1e-6),
        "cmma": (lambda nb: cmma_equalize(one_sps, numba=nb).symbols,
                 lambda a, b: np.max(np.abs(a - b)) < 1e-6),
        # different random streams; compare the detection rate only
        "qkd_session": (lambda nb: simulate_session(3, params, 0.5, 0.0525, 1e-6, pulses, numba=nb),
                        lambda a, b: abs(a.n_z - b.n_z) < 6 * np.sqrt(max(a.n_z, 1)) + 1),
    }


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--symbols", type=int, default=2 ** 15, help="dual-pol symbols per DSP case")
    ap.add_argument("--pulses", type=int, default=2_000_000, help="pulses per QKD session")
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args(argv)

    if not _accel.HAVE_NUMBA:
        print("numba is unavailable or disabled (QSDCI_DISABLE_NUMBA); only the numpy path can run")

    print(f"{'kernel':<12} {'compile s':>10} {'numba s':>10} {'numpy s':>10} {'speedup':>8}  agree")
    for name, (run, agree) in _cases(args.symbols, args.pulses).items():
        t_np = _best(lambda: run(False), args.repeat)
        if not _accel.HAVE_NUMBA:
            print(f"{name:<12} {'-':>10} {'-':>10} {t_np:>10.4f} {'-':>8}  -")
            continue
        t0 = time.perf_counter()
        out_nb = run(True)
        t_first = time.perf_counter() - t0
        t_nb = _best(lambda: run(True), args.repeat)
        ok = agree(out_nb, run(False))
        print(f"{name:<12} {t_first:>10.3f} {t_nb:>10.4f} {t_np:>10.4f} {t_np / t_nb:>8.1f}  {ok}")


if __name__ == "__main__":
    main()
