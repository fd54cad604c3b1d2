"""Compiled inner loops for long simulations.

All integer arithmetic is int64; products and accumulators fit comfortably
(worst case ~4e14 against the 9.2e18 limit).  Rounding is half-to-even
everywhere, matching the pure-Python reference operations bit for bit, which
the test suite verifies directly.
"""

from __future__ import annotations

import numpy as np
from numba import njit

from .dynamics import DynamicsParams

__all__ = [
    "term_arrays",
    "transmitter_kernel",
    "link_kernel",
    "detector_kernel",
    "reference_loop_kernel",
]


def term_arrays(params: DynamicsParams):
    """Flatten the term table into parallel int64 arrays for the kernels."""
    n = len(params.terms)
    rows = np.empty(n, dtype=np.int64)
    cidx = np.empty(n, dtype=np.int64)
    signs = np.empty(n, dtype=np.int64)
    va = np.empty(n, dtype=np.int64)
    vb = np.empty(n, dtype=np.int64)
    for k, t in enumerate(params.terms):
        rows[k], cidx[k], signs[k], va[k], vb[k] = t.row, t.coeff, t.sign, t.var_a, t.var_b
    return rows, cidx, signs, va, vb


@njit(cache=True)
def _rhe(num, den):
    # round-half-even of num/den for int64, den > 0
    q = num // den
    r = num - q * den
    twice = 2 * r
    if twice > den or (twice == den and q % 2 != 0):
        q += 1
    return q


@njit(cache=True)
def _sat(v, hi):
    if v > hi:
        return hi
    if v < -hi:
        return -hi
    return v


@njit(cache=True)
def transmitter_kernel(state0, rows, cidx, signs, va, vb, folded, denom,
                       scale, max_raw, n_steps):
    """Free-running fixed-point trajectory with fraction-saving updates."""
    traj = np.empty((n_steps + 1, 3), dtype=np.int64)
    s = state0.copy()
    resid = np.zeros(3, dtype=np.int64)
    traj[0] = s
    n_terms = rows.shape[0]
    sat_count = 0
    for i in range(n_steps):
        acc = np.zeros(3, dtype=np.int64)
        for k in range(n_terms):
            if vb[k] < 0:
                p = s[va[k]] * scale
            else:
                p = s[va[k]] * s[vb[k]]
            acc[rows[k]] += signs[k] * folded[cidx[k]] * p
        for r in range(3):
            total = acc[r] + resid[r]
            inc = _rhe(total, denom)
            rem = total - inc * denom
            v = s[r] + inc
            if v > max_raw or v < -max_raw:
                sat_count += 1
                rem = 0
            s[r] = _sat(v, max_raw)
            resid[r] = rem
        traj[i + 1] = s
    return traj, sat_count


@njit(cache=True)
def link_kernel(tx0, rx0,
                rows, cidx, signs, va, vb,
                folded_true, denom, scale, max_raw, h_folded, h,
                k_raw,
                theta0, adapted_idx, adapted_row, gamma, theta_clip,
                n_steps, train_steps,
                mask_raw, noise, use_noise,
                record_err, record_states):
    """Closed-loop link: modulated transmitter, channel, adaptive receiver.

    The transmitter free-runs; the transmitted vector is its state with the
    mask added on z (saturating).  Additive noise (analog units) is applied
    to all three components, requantized with saturation.  The receiver
    integrates the estimated field evaluated on the received drive plus the
    feedback -k*e (master-slave topology; the estimated-field cancellation is
    exact by construction instead of being routed through a saturating
    control word).  Estimates adapt by the gradient rule on the receiver
    regressor while i < train_steps, then hold.

    Returns (e3_trace, err_trace, tx_traj, rx_traj, theta_hat, sat_counts,
    z_power_acc) where z_power_acc accumulates transmitted z^2 (analog^2)
    over the run for calibration.
    """
    n_coeff = folded_true.shape[0]
    n_ad = adapted_idx.shape[0]
    n_terms = rows.shape[0]

    w = tx0.copy()
    sg = rx0.copy()
    rw = np.zeros(3, dtype=np.int64)
    rs = np.zeros(3, dtype=np.int64)
    theta_hat = theta0.copy()
    folded_hat = np.empty(n_coeff, dtype=np.int64)
    for j in range(n_coeff):
        folded_hat[j] = np.int64(np.rint(theta_hat[j] * h * scale *
                                         (denom // (scale * scale))))

    e3 = np.empty(n_steps, dtype=np.int64)
    err = np.empty((n_steps if record_err else 1, 3), dtype=np.int64)
    txt = np.empty((n_steps if record_states else 1, 3), dtype=np.int64)
    rxt = np.empty((n_steps if record_states else 1, 3), dtype=np.int64)
    sat_counts = np.zeros(3, dtype=np.int64)  # tx-mask, channel, receiver
    z_power = 0.0
    sub = denom // (scale * scale)
    csf = np.int64(scale) * np.int64(sub)
    d = np.empty(3, dtype=np.int64)

    for i in range(n_steps):
        # transmitted vector: mask on z, saturating
        m = mask_raw[i]
        tz = w[2] + m
        if tz > max_raw or tz < -max_raw:
            sat_counts[0] += 1
        tz = _sat(tz, max_raw)
        d[0] = w[0]
        d[1] = w[1]
        d[2] = tz
        z_power += (tz / scale) * (tz / scale)
        if use_noise:
            for r in range(3):
                nv = np.int64(np.rint(d[r] + noise[i, r] * scale))
                if nv > max_raw or nv < -max_raw:
                    sat_counts[1] += 1
                d[r] = _sat(nv, max_raw)

        e0 = sg[0] - d[0]
        e1 = sg[1] - d[1]
        e2 = sg[2] - d[2]
        e3[i] = e2
        if record_err:
            err[i, 0] = e0
            err[i, 1] = e1
            err[i, 2] = e2
        if record_states:
            txt[i, 0] = d[0]
            txt[i, 1] = d[1]
            txt[i, 2] = d[2]
            rxt[i, 0] = sg[0]
            rxt[i, 1] = sg[1]
            rxt[i, 2] = sg[2]

        # pure-feedback control word (saturating 16-bit signal)
        u0 = _sat(_rhe(-k_raw[0] * e0 * csf, denom), max_raw)
        u1 = _sat(_rhe(-k_raw[1] * e1 * csf, denom), max_raw)
        u2 = _sat(_rhe(-k_raw[2] * e2 * csf, denom), max_raw)

        # adaptation during the training window, on the receiver regressor
        if i < train_steps:
            for a in range(n_ad):
                j = adapted_idx[a]
                # regressor value: sum of this coefficient's basis terms at sg
                phi = 0.0
                for k in range(n_terms):
                    if cidx[k] == j:
                        if vb[k] < 0:
                            bv = sg[va[k]] / scale
                        else:
                            bv = (sg[va[k]] / scale) * (sg[vb[k]] / scale)
                        phi += signs[k] * bv
                row = adapted_row[a]
                ev = (sg[row] - d[row]) / scale
                nv = theta_hat[j] - h * gamma[a] * phi * ev
                if nv > theta_clip:
                    nv = theta_clip
                elif nv < -theta_clip:
                    nv = -theta_clip
                theta_hat[j] = nv
                folded_hat[j] = np.int64(np.rint(nv * h * scale * sub))

        # receiver update: estimated field on the drive + feedback
        acc0 = np.int64(0)
        acc1 = np.int64(0)
        acc2 = np.int64(0)
        for k in range(n_terms):
            if vb[k] < 0:
                p = d[va[k]] * scale
            else:
                p = d[va[k]] * d[vb[k]]
            term = signs[k] * folded_hat[cidx[k]] * p
            if rows[k] == 0:
                acc0 += term
            elif rows[k] == 1:
                acc1 += term
            else:
                acc2 += term
        for r in range(3):
            if r == 0:
                acc = acc0 + h_folded * u0 * scale
            elif r == 1:
                acc = acc1 + h_folded * u1 * scale
            else:
                acc = acc2 + h_folded * u2 * scale
            total = acc + rs[r]
            inc = _rhe(total, denom)
            rem = total - inc * denom
            v = sg[r] + inc
            if v > max_raw or v < -max_raw:
                sat_counts[2] += 1
                rem = 0
            sg[r] = _sat(v, max_raw)
            rs[r] = rem

        # free transmitter update
        acc0 = np.int64(0)
        acc1 = np.int64(0)
        acc2 = np.int64(0)
        for k in range(n_terms):
            if vb[k] < 0:
                p = w[va[k]] * scale
            else:
                p = w[va[k]] * w[vb[k]]
            term = signs[k] * folded_true[cidx[k]] * p
            if rows[k] == 0:
                acc0 += term
            elif rows[k] == 1:
                acc1 += term
            else:
                acc2 += term
        for r in range(3):
            acc = acc0 if r == 0 else (acc1 if r == 1 else acc2)
            total = acc + rw[r]
            inc = _rhe(total, denom)
            rem = total - inc * denom
            v = w[r] + inc
            if v > max_raw or v < -max_raw:
                rem = 0
            w[r] = _sat(v, max_raw)
            rw[r] = rem

    return e3, err, txt, rxt, theta_hat, sat_counts, z_power


@njit(cache=True)
def detector_kernel(e3_raw, scale, start, alpha, lag, norm, threshold,
                    rearm, refractory, bit_period, n_bits,
                    initial_parity, level_nominal, watchdog_bits,
                    watchdog_margin):
    """Edge detector and parity decision over a raw error stream.

    Pipeline per sample from ``start``: first-order low-pass of the analog
    error, lagged difference normalized by the nominal transition response,
    then a single-pulse threshold detector (arm/fire with a refractory hold).
    Decisions sample the running edge-count parity at each bit midpoint;
    the parity reflects pulses up to the previous sample (one-sample memory
    in the feedback path).

    A lock supervisor guards the cumulative count: the low-passed error's
    sign independently indicates the current level (level_nominal is the
    expected magnitude, negative levels meaning bit 1), and when the sampled
    decisions disagree with a confident level reading for ``watchdog_bits``
    consecutive midpoints, one count is added to re-lock the parity.  Zero
    watchdog_bits disables the supervisor.

    Returns (decided_bits, edge_positions, n_edges, corrections).
    """
    n = e3_raw.shape[0]
    lp = 0.0
    ring = np.zeros(lag)
    armed = False
    hold = refractory
    edge_count = 0
    prev_edge_count = 0
    decided = np.empty(n_bits, dtype=np.int64)
    edges = np.empty(n - start if n > start else 1, dtype=np.int64)
    n_edges = 0
    got = 0
    disagree = 0
    corrections = 0
    abstain = watchdog_margin * level_nominal
    for i in range(start, n):
        k = i - start
        prev_edge_count = edge_count
        x = e3_raw[i] / scale
        lp += alpha * (x - lp)
        if k >= lag:
            stat = (lp - ring[k % lag]) / norm
        else:
            stat = 0.0
        ring[k % lag] = lp
        mag = stat if stat >= 0.0 else -stat
        if hold > 0:
            hold -= 1
        if not armed:
            if mag <= rearm and hold == 0:
                armed = True
        elif mag >= threshold and hold == 0:
            edge_count += 1
            armed = False
            hold = refractory
            if n_edges < edges.shape[0]:
                edges[n_edges] = k
            n_edges += 1
        if got < n_bits and k % bit_period == bit_period // 2:
            # decision uses the count as of the previous sample
            bit = (prev_edge_count + initial_parity) & 1
            decided[got] = bit
            got += 1
            if watchdog_bits > 0:
                if lp < -abstain:
                    level_bit = 1
                elif lp > abstain:
                    level_bit = 0
                else:
                    level_bit = -1
                if level_bit >= 0 and level_bit != bit:
                    disagree += 1
                    if disagree >= watchdog_bits:
                        edge_count += 1
                        corrections += 1
                        disagree = 0
                else:
                    disagree = 0
    last = (prev_edge_count + initial_parity) & 1
    for j in range(got, n_bits):
        decided[j] = last
    return decided, edges[:min(n_edges, edges.shape[0])], n_edges, corrections


@njit(cache=True)
def reference_loop_kernel(tx0, rx0,
                          rows, cidx, signs, va, vb,
                          theta_true, theta0, adapted_idx, adapted_row,
                          gamma, theta_clip, k_gain, h,
                          n_steps, train_steps, mask, record):
    """Double-precision closed loop with the same topology as link_kernel.

    Used for the Lyapunov-decrease check and reference-vs-fixed comparisons.
    Returns (err_trace, theta_trace, final_tx, final_rx).
    """
    n_terms = rows.shape[0]
    n_ad = adapted_idx.shape[0]
    w = tx0.copy()
    sg = rx0.copy()
    theta_hat = theta0.copy()
    err = np.empty((n_steps if record else 1, 3))
    th_tr = np.empty((n_steps if record else 1, n_ad))
    d = np.empty(3)
    fw = np.empty(3)
    fd = np.empty(3)
    for i in range(n_steps):
        d[0] = w[0]
        d[1] = w[1]
        d[2] = w[2] + mask[i]
        e0 = sg[0] - d[0]
        e1 = sg[1] - d[1]
        e2 = sg[2] - d[2]
        if record:
            err[i, 0] = e0
            err[i, 1] = e1
            err[i, 2] = e2
        if i < train_steps:
            for a in range(n_ad):
                j = adapted_idx[a]
                phi = 0.0
                for k in range(n_terms):
                    if cidx[k] == j:
                        if vb[k] < 0:
                            bv = sg[va[k]]
                        else:
                            bv = sg[va[k]] * sg[vb[k]]
                        phi += signs[k] * bv
                row = adapted_row[a]
                ev = e0 if row == 0 else (e1 if row == 1 else e2)
                nv = theta_hat[j] - h * gamma[a] * phi * ev
                if nv > theta_clip:
                    nv = theta_clip
                elif nv < -theta_clip:
                    nv = -theta_clip
                theta_hat[j] = nv
        if record:
            for a in range(n_ad):
                th_tr[i, a] = theta_hat[adapted_idx[a]]
        fd[:] = 0.0
        fw[:] = 0.0
        for k in range(n_terms):
            if vb[k] < 0:
                pd = d[va[k]]
                pw = w[va[k]]
            else:
                pd = d[va[k]] * d[vb[k]]
                pw = w[va[k]] * w[vb[k]]
            fd[rows[k]] += signs[k] * theta_hat[cidx[k]] * pd
            fw[rows[k]] += signs[k] * theta_true[cidx[k]] * pw
        sg[0] += h * (fd[0] - k_gain[0] * e0)
        sg[1] += h * (fd[1] - k_gain[1] * e1)
        sg[2] += h * (fd[2] - k_gain[2] * e2)
        for r in range(3):
            w[r] += h * fw[r]
    return err, th_tr, w, sg
