"""Masking modulation and the receiver-side recovery pipelines.

Bits ride on the carrier's z channel as a bipolar level (additive masking);
the synchronized receiver's z error is then an NRZ-like waveform whose
transitions mark bit boundaries.  Bit recovery is the edge-detector chain:
a threshold detector F1 marks transitions, a counter accumulates them, and
the mod-2 decision F2 reads the count parity at each bit midpoint.
Multi-level waveforms are recovered from the same error channel by
exponential smoothing with a fitted gain.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .fxp import FxpFormat, SaturationLog, quantize, sat_add

__all__ = [
    "InfoSignal",
    "DetectorConfig",
    "DetectorState",
    "SmootherConfig",
    "modulate",
    "make_bitstream",
    "make_sine",
    "detect_edges",
    "decide_bit",
    "demodulate_bits",
    "recover_waveform",
    "fit_recovered",
]


@dataclass(frozen=True)
class InfoSignal:
    """An information signal resampled to the system rate.

    samples are raw counts (one per system step).  For bitstreams, bits
    holds the original 0/1 sequence and rate_hz its bit rate.
    """

    kind: str                      # "bitstream" | "waveform"
    samples: np.ndarray            # int64 raw counts at the system rate
    rate_hz: float                 # source rate
    amplitude: float               # peak analog amplitude
    resolution_bits: int = 16
    bits: np.ndarray | None = None


@dataclass(frozen=True)
class DetectorConfig:
    """Edge-detector tuning.

    The detector consumes the delayed error stream: a low-pass (alpha) then
    a lag-difference of ``lag`` samples normalized so a nominal bit
    transition reads 1.0; a_threshold is in those normalized units.  After a
    pulse the detector holds off ``refractory`` samples and re-arms once the
    statistic falls below ``rearm``.
    """

    delay_steps: int
    a_threshold: float = 0.5
    refractory: int = 250
    rearm: float = 0.375
    alpha: float = 0.06
    lag: int = 100
    watchdog_bits: int = 6
    watchdog_margin: float = 0.3

    def __post_init__(self):
        if self.delay_steps < 0:
            raise ValueError("delay must be nonnegative")
        if self.a_threshold <= 0:
            raise ValueError("a_threshold must be positive")
        if self.refractory < 1:
            raise ValueError("refractory must be >= 1")
        if not 0 < self.alpha <= 1:
            raise ValueError("alpha must be in (0, 1]")
        if self.lag < 1:
            raise ValueError("lag must be >= 1")
        if not 0 < self.rearm < self.a_threshold:
            raise ValueError("rearm must lie in (0, a_threshold)")
        if self.watchdog_bits < 0:
            raise ValueError("watchdog_bits must be >= 0")

    def norm_for(self, amplitude: float) -> float:
        """Normalization: nominal low-passed transition swing.

        A bit transition flips the bipolar mask between +/-amplitude/2, so
        the raw error swing is ``amplitude`` and the low-pass sees it through
        one lag window.
        """
        return amplitude * (1.0 - math.exp(-self.alpha * self.lag))


@dataclass
class DetectorState:
    """Streaming state of the F1/counter/memory chain."""

    cfg: DetectorConfig
    norm: float
    lp: float = 0.0
    ring: np.ndarray = field(default=None)  # type: ignore[assignment]
    pos: int = 0
    armed: bool = False
    holdoff: int = 0
    edge_count: int = 0
    prev_edge_count: int = 0

    def __post_init__(self):
        if self.ring is None:
            self.ring = np.zeros(self.cfg.lag)
        self.holdoff = self.cfg.refractory

    @property
    def last_bit(self) -> int:
        return self.edge_count & 1


def modulate(carrier_z: int, info_sample: int, fmt: FxpFormat = FxpFormat(),
             log: SaturationLog | None = None) -> int:
    """Additive masking on the z channel (saturating)."""
    return sat_add(int(carrier_z), int(info_sample), fmt, log)


def make_bitstream(bits, bit_period: int, rate_hz: float = 1e6,
                   amplitude: float = 1.4,
                   fmt: FxpFormat = FxpFormat()) -> InfoSignal:
    """Bipolar NRZ mask: bit 1 -> +amplitude/2, bit 0 -> -amplitude/2.

    A transition therefore swings the full ``amplitude``.  One mask sample
    per system step, each bit held for bit_period steps.
    """
    bits = np.asarray(bits, dtype=np.int64)
    if bits.size and not np.all((bits == 0) | (bits == 1)):
        raise ValueError("bitstream values must be 0 or 1")
    level = quantize(amplitude / 2.0, fmt)
    samples = np.where(bits == 1, level, -level).astype(np.int64)
    samples = np.repeat(samples, bit_period)
    return InfoSignal(kind="bitstream", samples=samples, rate_hz=rate_hz,
                      amplitude=amplitude, resolution_bits=1, bits=bits)


def make_sine(freq_hz: float, amplitude: float, resolution_bits: int,
              rate_hz: float, n_system_steps: int,
              system_rate_hz: float = 450e6,
              fmt: FxpFormat = FxpFormat()) -> InfoSignal:
    """Zero-phase sine, quantized to the source resolution, sampled at
    rate_hz, and held to the system rate.

    The source amplitude grid has 2^(resolution_bits-1) - 1 positive levels
    (1-bit degenerates to a two-level signal).  The modulating frequency may
    not exceed its own sampling rate, and the source rate may not exceed the
    system rate.
    """
    if freq_hz > rate_hz:
        raise ValueError("modulating frequency must not exceed its sampling rate")
    if rate_hz > system_rate_hz:
        raise ValueError("source rate must not exceed the system rate")
    if resolution_bits < 1:
        raise ValueError("resolution must be >= 1 bit")
    hold = max(1, round(system_rate_hz / rate_hz))
    n_src = -(-n_system_steps // hold)  # ceil
    t = np.arange(n_src) / rate_hz
    wave = amplitude * np.sin(2 * math.pi * freq_hz * t)
    levels = max(1, (1 << (resolution_bits - 1)) - 1)
    lsb = amplitude / levels
    wave_q = np.rint(wave / lsb) * lsb if lsb > 0 else wave
    raw = np.array([quantize(float(v), fmt) for v in wave_q], dtype=np.int64)
    samples = np.repeat(raw, hold)[:n_system_steps]
    return InfoSignal(kind="waveform", samples=samples, rate_hz=rate_hz,
                      amplitude=amplitude, resolution_bits=resolution_bits)


def detect_edges(e3_delayed, cfg: DetectorConfig, st: DetectorState,
                 fmt: FxpFormat = FxpFormat()):
    """Run F1 over a raw error stream; returns the 0/1 pulse stream.

    Emits a one-sample pulse whenever the normalized transition statistic
    crosses a_threshold from below, then holds off for the refractory window
    and stays disarmed until the statistic returns below the re-arm level.
    """
    pulses = np.zeros(len(e3_delayed), dtype=np.int64)
    for i, raw in enumerate(e3_delayed):
        st.prev_edge_count = st.edge_count
        pulses[i] = _detect_one(raw, cfg, st, fmt)
    return pulses


def decide_bit(pulse: int, st: DetectorState) -> int:
    """Counter plus mod-2 decision with a one-sample feedback memory.

    The returned bit reflects pulses up to the previous sample; the counter
    then absorbs the current pulse.
    """
    out = st.edge_count & 1
    if pulse:
        st.edge_count += 1
    st.prev_edge_count = st.edge_count
    return out


def demodulate_bits(e3, cfg: DetectorConfig, bit_period: int, n_bits: int,
                    initial_parity: int = 0, amplitude: float = 1.4,
                    level_nominal: float | None = None,
                    fmt: FxpFormat = FxpFormat()):
    """Recover a bit sequence from the (already delayed) error stream.

    The decision samples the edge-count parity at each bit-period midpoint;
    initial_parity fixes the absolute polarity (the value of the bit in
    flight when the detector starts).  level_nominal is the expected
    low-passed error magnitude of a held bit (negative readings meaning
    bit 1), used by the lock supervisor; it defaults to 0.9 * amplitude / 2.
    Long streams use the compiled kernel; the streaming path here defines
    the semantics, and both are pinned to each other by tests.
    """
    e3 = np.asarray(e3, dtype=np.int64)
    norm = cfg.norm_for(amplitude)
    if level_nominal is None:
        level_nominal = 0.9 * amplitude / 2.0
    from .kernels import detector_kernel
    decided, _, _, _ = detector_kernel(
        e3, fmt.scale, 0, cfg.alpha, cfg.lag, norm, cfg.a_threshold,
        cfg.rearm, cfg.refractory, bit_period, n_bits,
        int(initial_parity), level_nominal, cfg.watchdog_bits,
        cfg.watchdog_margin)
    return decided


def demodulate_bits_streaming(e3, cfg: DetectorConfig, bit_period: int,
                              n_bits: int, initial_parity: int = 0,
                              amplitude: float = 1.4,
                              level_nominal: float | None = None,
                              fmt: FxpFormat = FxpFormat()):
    """Pure-Python reference of demodulate_bits (same semantics)."""
    e3 = np.asarray(e3, dtype=np.int64)
    norm = cfg.norm_for(amplitude)
    if level_nominal is None:
        level_nominal = 0.9 * amplitude / 2.0
    st = DetectorState(cfg=cfg, norm=norm)
    decided = np.empty(n_bits, dtype=np.int64)
    got = 0
    disagree = 0
    abstain = cfg.watchdog_margin * level_nominal
    for i, raw in enumerate(e3):
        _detect_one(raw, cfg, st, fmt)
        if got < n_bits and i % bit_period == bit_period // 2:
            bit = (st.prev_edge_count + initial_parity) & 1
            decided[got] = bit
            got += 1
            if cfg.watchdog_bits > 0:
                level_bit = 1 if st.lp < -abstain else (0 if st.lp > abstain else -1)
                if level_bit >= 0 and level_bit != bit:
                    disagree += 1
                    if disagree >= cfg.watchdog_bits:
                        st.edge_count += 1
                        disagree = 0
                else:
                    disagree = 0
        st.prev_edge_count = st.edge_count
    last = (st.prev_edge_count + initial_parity) & 1
    while got < n_bits:
        decided[got] = last
        got += 1
    return decided


def _detect_one(raw, cfg: DetectorConfig, st: DetectorState,
                fmt: FxpFormat) -> int:
    """Single-sample F1 update; shared by the streaming paths."""
    x = int(raw) / fmt.scale
    st.lp += cfg.alpha * (x - st.lp)
    if st.pos >= cfg.lag:
        stat = (st.lp - st.ring[st.pos % cfg.lag]) / st.norm
    else:
        stat = 0.0
    st.ring[st.pos % cfg.lag] = st.lp
    st.pos += 1
    mag = abs(stat)
    if st.holdoff > 0:
        st.holdoff -= 1
    if not st.armed:
        if mag <= cfg.rearm and st.holdoff == 0:
            st.armed = True
        return 0
    if mag >= cfg.a_threshold and st.holdoff == 0:
        st.edge_count += 1
        st.armed = False
        st.holdoff = cfg.refractory
        return 1
    return 0


@dataclass(frozen=True)
class SmootherConfig:
    """First-order exponential smoother with an output gain."""

    alpha: float = 0.01
    gain: float = 1.0

    def __post_init__(self):
        if not 0 < self.alpha <= 1:
            raise ValueError("alpha must be in (0, 1]")


def recover_waveform(e3, cfg: SmootherConfig, delay_steps: int = 0,
                     fmt: FxpFormat = FxpFormat()) -> np.ndarray:
    """Exponentially smoothed analog error, scaled by the gain.

    y[n] = alpha * x[n] + (1 - alpha) * y[n-1] on the dequantized stream;
    output starts after delay_steps.
    """
    x = np.asarray(e3, dtype=np.float64) / fmt.scale
    x = x[delay_steps:]
    y = np.empty_like(x)
    acc = 0.0
    a = cfg.alpha
    for i in range(len(x)):
        acc += a * (x[i] - acc)
        y[i] = acc
    return cfg.gain * y


def fit_recovered(recovered: np.ndarray, original: np.ndarray,
                  max_lag: int | None = None):
    """Align the recovered waveform to the original and fit a gain.

    The tracking loop responds to the modulating signal with a frequency-
    dependent phase lead, so fidelity is measured after shifting by the best
    integer lag and applying the least-squares gain and offset within a
    fixed comparison window.  Returns (gain, lag, rms_error, correlation);
    rms_error is the residual against the original after gain and alignment.
    """
    r = np.asarray(recovered, dtype=float)
    o = np.asarray(original, dtype=float)
    n = min(len(r), len(o))
    r = r[:n]
    o = o[:n]
    if max_lag is None:
        max_lag = n // 4
    max_lag = min(max_lag, (n - 16) // 2)
    if max_lag < 0:
        raise ValueError("waveforms too short to align")
    length = n - 2 * max_lag
    o_win = o[max_lag:max_lag + length]
    o_win = o_win - o_win.mean()
    ss_o = float(np.dot(o_win, o_win))
    if ss_o <= 0.0:
        # degenerate original (e.g. zero-amplitude request): report the raw
        # residual against it with no alignment
        a = r[max_lag:max_lag + length]
        rms = math.sqrt(float(np.mean((o_win - a) ** 2)))
        return 1.0, 0, rms, 0.0
    # windowed moments of r for every shift, via cumulative sums
    c1 = np.concatenate(([0.0], np.cumsum(r)))
    c2 = np.concatenate(([0.0], np.cumsum(r * r)))
    starts = np.arange(2 * max_lag + 1)
    sum_r = c1[starts + length] - c1[starts]
    sum_r2 = c2[starts + length] - c2[starts]
    var_r = sum_r2 - sum_r * sum_r / length
    # cross-correlation of r with the demeaned window (FFT); since o_win has
    # zero mean, demeaning each r window does not change the cross term
    size = 1
    while size < n + length:
        size <<= 1
    fo = np.fft.rfft(o_win, size)
    fr = np.fft.rfft(r, size)
    cross_full = np.fft.irfft(fr * np.conj(fo), size)
    cross = cross_full[starts]
    denom = np.sqrt(np.maximum(var_r, 1e-300) * ss_o)
    with np.errstate(invalid="ignore", divide="ignore"):
        corr_all = np.where(denom > 0, cross / denom, -np.inf)
    best = int(np.argmax(corr_all))
    corr = float(corr_all[best])
    lag = best - max_lag  # positive: recovered lags the original
    a = r[best:best + length]
    a = a - a.mean()
    ss_a = float(np.dot(a, a))
    gain = float(np.dot(a, o_win)) / ss_a if ss_a > 0 else 1.0
    resid = o_win - gain * a
    rms = math.sqrt(float(np.mean(resid ** 2)))
    return gain, lag, rms, corr
