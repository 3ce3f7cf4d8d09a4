"""Sequential inner loops of the receiver, each in a numba and a numpy flavour.

``*_nb`` functions are compiled through :mod:`qsdci._accel` (plain Python when
numba is off); ``*_np`` twins vectorise what can be vectorised and are the
fallback selected by ``QSDCI_DISABLE_NUMBA=1``.  Both flavours implement the
same arithmetic and agree to rounding.
"""
import math

import numpy as np

from .._accel import njit, use_numba

# Polyphase interpolator: 2*HALF taps per phase, PHASES+1 phase rows.
HALF = 16
PHASES = 512
KAISER_BETA = 8.0


def _design_bank(half=HALF, phases=PHASES, beta=KAISER_BETA):
    mu = np.arange(phases + 1)[:, None] / phases
    d = np.arange(-(half - 1), half + 1)[None, :]
    arg = mu - d  # distance from the output instant to the input sample
    win = np.kaiser(2 * half + 1, beta)
    # sample the window continuously at arg in [-half, half]
    grid = np.linspace(-half, half, 2 * half + 1)
    w = np.interp(arg, grid, win)
    bank = np.sinc(arg) * w
    bank[0] = 0.0
    bank[0, half - 1] = 1.0  # d == 0 at mu == 0: exact passthrough
    bank[-1] = 0.0
    bank[-1, half] = 1.0  # mu == 1 is the next sample exactly
    return bank


BANK = _design_bank()


# -- fractional resampler ------------------------------------------------------


@njit
def resample_at_nb(x, times, bank):
    rails, n = x.shape
    phases = bank.shape[0] - 1
    ntap = bank.shape[1]
    half = ntap // 2
    out = np.zeros((rails, times.shape[0]))
    for k in range(times.shape[0]):
        t = times[k]
        i = int(math.floor(t))
        pos = (t - i) * phases
        p = int(math.floor(pos))
        f = pos - p
        if p >= phases:
            p = phases - 1
            f = 1.0
        for m in range(ntap):
            j = i + m - (half - 1)
            if j < 0 or j >= n:
                continue
            h = (1.0 - f) * bank[p, m] + f * bank[p + 1, m]
            if h == 0.0:
                continue
            for r in range(rails):
                out[r, k] += h * x[r, j]
    return out


def resample_at_np(x, times, bank):
    rails, n = x.shape
    phases = bank.shape[0] - 1
    ntap = bank.shape[1]
    half = ntap // 2
    i = np.floor(times).astype(np.int64)
    pos = (times - i) * phases
    p = np.minimum(np.floor(pos).astype(np.int64), phases - 1)
    f = pos - p
    h = (1.0 - f)[:, None] * bank[p] + f[:, None] * bank[p + 1]  # (K, ntap)
    idx = i[:, None] + np.arange(ntap)[None, :] - (half - 1)
    valid = (idx >= 0) & (idx < n)
    h = np.where(valid, h, 0.0)
    gathered = x[:, np.clip(idx, 0, n - 1)]  # (rails, K, ntap)
    return np.einsum("rkm,km->rk", gathered, h)


def resample_at(x, times, numba=None):
    """Evaluate each rail of ``x`` at fractional sample ``times``."""
    x = np.ascontiguousarray(x, dtype=np.float64)
    times = np.ascontiguousarray(times, dtype=np.float64)
    if use_numba(numba):
        return resample_at_nb(x, times, BANK)
    return resample_at_np(x, times, BANK)


# -- Gardner timing loop -------------------------------------------------------


@njit
def _cubic(x, t, out):
    n = x.shape[1]
    i = int(math.floor(t))
    mu = t - i
    c0 = -mu * (mu - 1.0) * (mu - 2.0) / 6.0
    c1 = (mu + 1.0) * (mu - 1.0) * (mu - 2.0) / 2.0
    c2 = -(mu + 1.0) * mu * (mu - 2.0) / 2.0
    c3 = (mu + 1.0) * mu * (mu - 1.0) / 6.0
    for r in range(x.shape[0]):
        a = x[r, i - 1] if i - 1 >= 0 else 0.0
        b = x[r, i] if 0 <= i < n else 0.0
        c = x[r, i + 1] if i + 1 < n else 0.0
        d = x[r, i + 2] if i + 2 < n else 0.0
        out[r] = c0 * a + c1 * b + c2 * c + c3 * d


@njit
def gardner_nb(z, t0, kp, ki, max_symbols):
    """Strobe time (in samples) of every recovered symbol at 2 samples/symbol."""
    rails, n = z.shape
    times = np.zeros(max_symbols)
    errs = np.zeros(max_symbols)
    on = np.zeros(rails)
    mid = np.zeros(rails)
    prev = np.zeros(rails)
    t = t0
    integ = 0.0
    count = 0
    for m in range(max_symbols):
        if t + 3.0 >= n:
            break
        _cubic(z, t, on)
        _cubic(z, t - 1.0, mid)
        e = 0.0
        if m > 0:
            for r in range(rails):
                e += (prev[r] - on[r]) * mid[r]
        integ += ki * e
        times[m] = t
        errs[m] = e
        t += 2.0 + kp * e + integ
        for r in range(rails):
            prev[r] = on[r]
        count += 1
    return times[:count], errs[:count]


def _cubic_np(x, t):
    n = x.shape[1]
    i = int(math.floor(t))
    mu = t - i
    c = np.array([
        -mu * (mu - 1.0) * (mu - 2.0) / 6.0,
        (mu + 1.0) * (mu - 1.0) * (mu - 2.0) / 2.0,
        -(mu + 1.0) * mu * (mu - 2.0) / 2.0,
        (mu + 1.0) * mu * (mu - 1.0) / 6.0,
    ])
    idx = np.arange(i - 1, i + 3)
    ok = (idx >= 0) & (idx < n)
    vals = np.where(ok[None, :], x[:, np.clip(idx, 0, n - 1)], 0.0)
    return vals @ c


def gardner_np(z, t0, kp, ki, max_symbols):
    n = z.shape[1]
    times = np.zeros(max_symbols)
    errs = np.zeros(max_symbols)
    prev = np.zeros(z.shape[0])
    t, integ, count = t0, 0.0, 0
    for m in range(max_symbols):
        if t + 3.0 >= n:
            break
        on = _cubic_np(z, t)
        mid = _cubic_np(z, t - 1.0)
        e = float(np.dot(prev - on, mid)) if m > 0 else 0.0
        integ += ki * e
        times[m] = t
        errs[m] = e
        t += 2.0 + kp * e + integ
        prev = on
        count += 1
    return times[:count], errs[:count]


def gardner(z, t0, kp, ki, max_symbols, numba=None):
    z = np.ascontiguousarray(z, dtype=np.float64)
    if use_numba(numba):
        return gardner_nb(z, float(t0), float(kp), float(ki), int(max_symbols))
    return gardner_np(z, float(t0), float(kp), float(ki), int(max_symbols))


# -- cascaded multi-modulus 4x4 real MIMO equalizer ----------------------------

STAGE_CMA, STAGE_RING, STAGE_DD = 0, 1, 2


@njit
def _slice(v, levels):
    best = levels[0]
    dist = abs(v - best)
    for q in range(1, levels.shape[0]):
        d = abs(v - levels[q])
        if d < dist:
            dist = d
            best = levels[q]
    return best


@njit
def _nearest_ring(r, rings):
    best = rings[0]
    for q in range(1, rings.shape[0]):
        if abs(r - rings[q]) < abs(r - best):
            best = rings[q]
    return best


@njit
def cmma_nb(xp, w, n_out, step, n_cma, n_train, cma_r2, rings, levels, pll_gain, acq_window):
    """Run the equalizer over ``n_out`` symbols of the padded input ``xp``.

    Returns outputs (4, n_out), per-symbol error power and the DD phase track
    (2, n_out).  ``w`` is updated in place.
    """
    ntap = w.shape[2]
    y = np.zeros((4, n_out))
    err = np.zeros(n_out)
    track = np.zeros((2, n_out))
    e = np.zeros(4)
    theta = np.zeros(2)
    for n in range(n_out):
        for i in range(4):
            acc = 0.0
            for j in range(4):
                for k in range(ntap):
                    acc += w[i, j, k] * xp[j, n + k]
            y[i, n] = acc
        if n == n_train:
            for p in range(2):
                sr = 0.0
                si = 0.0
                lo = n - acq_window
                if lo < 0:
                    lo = 0
                for q in range(lo, n):
                    c = complex(y[2 * p, q], y[2 * p + 1, q])
                    c4 = c * c * c * c
                    sr += c4.real
                    si += c4.imag
                theta[p] = math.atan2(-si, -sr) / 4.0
        ep = 0.0
        for p in range(2):
            yr = y[2 * p, n]
            yi = y[2 * p + 1, n]
            mag2 = yr * yr + yi * yi
            if n < n_cma:
                g = cma_r2 - mag2
                e[2 * p] = g * yr
                e[2 * p + 1] = g * yi
                ep += g * g
            elif n < n_train:
                r = _nearest_ring(math.sqrt(mag2), rings)
                g = r * r - mag2
                e[2 * p] = g * yr
                e[2 * p + 1] = g * yi
                ep += g * g
            else:
                c = math.cos(theta[p])
                s = math.sin(theta[p])
                zr = yr * c + yi * s
                zi = -yr * s + yi * c
                dr = _slice(zr, levels)
                di = _slice(zi, levels)
                # decision rotated back into the equalizer output frame
                br = dr * c - di * s
                bi = dr * s + di * c
                e[2 * p] = br - yr
                e[2 * p + 1] = bi - yi
                ep += e[2 * p] ** 2 + e[2 * p + 1] ** 2
                theta[p] += pll_gain * (zi * dr - zr * di) / (dr * dr + di * di)
            track[p, n] = theta[p]
        err[n] = ep
        if not math.isfinite(ep) or ep > 1e6:
            return y[:, :n + 1], err[:n + 1], track[:, :n + 1]
        for i in range(4):
            ge = step * e[i]
            for j in range(4):
                for k in range(ntap):
                    w[i, j, k] += ge * xp[j, n + k]
    return y, err, track


def cmma_np(xp, w, n_out, step, n_cma, n_train, cma_r2, rings, levels, pll_gain, acq_window):
    ntap = w.shape[2]
    y = np.zeros((4, n_out))
    err = np.zeros(n_out)
    track = np.zeros((2, n_out))
    theta = np.zeros(2)
    for n in range(n_out):
        win = xp[:, n:n + ntap]
        yn = np.einsum("ijk,jk->i", w, win)
        y[:, n] = yn
        if n == n_train:
            lo = max(n - acq_window, 0)
            c = y[0::2, lo:n] + 1j * y[1::2, lo:n]
            s4 = np.sum(c ** 4, axis=1)
            theta = np.arctan2(-s4.imag, -s4.real) / 4.0
        yc = yn[0::2] + 1j * yn[1::2]
        mag2 = np.abs(yc) ** 2
        if n < n_cma:
            g = cma_r2 - mag2
            ec = g * yc
            ep = float(np.sum(g * g))
        elif n < n_train:
            r = rings[np.argmin(np.abs(np.sqrt(mag2)[:, None] - rings[None, :]), axis=1)]
            g = r * r - mag2
            ec = g * yc
            ep = float(np.sum(g * g))
        else:
            rot = np.exp(-1j * theta)
            zc = yc * rot
            dr = levels[np.argmin(np.abs(zc.real[:, None] - levels[None, :]), axis=1)]
            di = levels[np.argmin(np.abs(zc.imag[:, None] - levels[None, :]), axis=1)]
            dc = dr + 1j * di
            ec = dc / rot - yc
            ep = float(np.sum(np.abs(ec) ** 2))
            theta = theta + pll_gain * (zc.imag * dr - zc.real * di) / (dr * dr + di * di)
        track[:, n] = theta
        err[n] = ep
        if not math.isfinite(ep) or ep > 1e6:
            return y[:, :n + 1], err[:n + 1], track[:, :n + 1]
        e = np.empty(4)
        e[0::2] = ec.real
        e[1::2] = ec.imag
        w += step * e[:, None, None] * win[None, :, :]
    return y, err, track


def cmma(xp, w, n_out, step, n_cma, n_train, cma_r2, rings, levels, pll_gain, acq_window=512, numba=None):
    xp = np.ascontiguousarray(xp, dtype=np.float64)
    args = (xp, w, int(n_out), float(step), int(n_cma), int(n_train), float(cma_r2),
            np.asarray(rings, dtype=np.float64), np.asarray(levels, dtype=np.float64), float(pll_gain),
            int(acq_window))
    if use_numba(numba):
        return cmma_nb(*args)
    return cmma_np(*args)
