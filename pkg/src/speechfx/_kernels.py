"""Sample-sequential DSP recursions, compiled with numba.

These loops are inherently stateful (one-pole branching smoothers, comb and
all-pass delay lines, a time-varying biquad) and dominate render time, so
they are kept in nopython kernels. All state is local; kernels are pure
functions of their arguments and bit-deterministic.
"""

import math

import numpy as np
from numba import njit


@njit(cache=True)
def asym_one_pole(target, coef_rise, coef_fall, initial):
    """Branching one-pole smoother: coef_rise when the target is above the
    state, coef_fall when below. Coefficients in (0, 1); larger = slower."""
    n = target.shape[0]
    out = np.empty(n)
    s = initial
    for i in range(n):
        t = target[i]
        c = coef_rise if t > s else coef_fall
        s = c * s + (1.0 - c) * t
        out[i] = s
    return out


@njit(cache=True)
def freeverb_wet(x, comb_lengths, ap_lengths, feedback, damp):
    """Parallel damped combs summed, then series all-passes (gain 0.5).

    Delay buffers read before write, so the wet path has at least
    min(comb_lengths) samples of pre-delay.
    """
    n = x.shape[0]
    out = np.zeros(n)
    n_combs = comb_lengths.shape[0]
    max_len = 0
    for c in range(n_combs):
        if comb_lengths[c] > max_len:
            max_len = comb_lengths[c]
    buf = np.zeros((n_combs, max_len))
    idx = np.zeros(n_combs, dtype=np.int64)
    store = np.zeros(n_combs)
    damp2 = 1.0 - damp

    for i in range(n):
        xi = x[i]
        acc = 0.0
        for c in range(n_combs):
            j = idx[c]
            y = buf[c, j]
            store[c] = y * damp2 + store[c] * damp
            buf[c, j] = xi + store[c] * feedback
            j += 1
            if j >= comb_lengths[c]:
                j = 0
            idx[c] = j
            acc += y
        out[i] = acc

    for a in range(ap_lengths.shape[0]):
        length = ap_lengths[a]
        abuf = np.zeros(length)
        j = 0
        for i in range(n):
            xi = out[i]
            y = abuf[j]
            out[i] = -xi + y
            abuf[j] = xi + y * 0.5
            j += 1
            if j >= length:
                j = 0
    return out


@njit(cache=True)
def peaking_cut_tv(x, depth_db, cos_w0, alpha):
    """Peaking-EQ cut whose depth (dB, >= 0) varies per sample.

    Coefficients follow the audio-cookbook peaking form with
    A = 10^(-depth/40); direct-form I keeps the recursion stable while
    the depth moves.
    """
    n = x.shape[0]
    out = np.empty(n)
    ln10_over_40 = math.log(10.0) / 40.0
    x1 = 0.0
    x2 = 0.0
    y1 = 0.0
    y2 = 0.0
    for i in range(n):
        a_gain = math.exp(-depth_db[i] * ln10_over_40)
        b0 = 1.0 + alpha * a_gain
        b2 = 1.0 - alpha * a_gain
        a0 = 1.0 + alpha / a_gain
        a2 = 1.0 - alpha / a_gain
        b1 = -2.0 * cos_w0
        xi = x[i]
        yi = (b0 * xi + b1 * x1 + b2 * x2 - b1 * y1 - a2 * y2) / a0
        x2 = x1
        x1 = xi
        y2 = y1
        y1 = yi
        out[i] = yi
    return out
