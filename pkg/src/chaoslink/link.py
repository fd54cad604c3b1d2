"""End-to-end link composition: transmitter, channel, receiver, recovery.

A LinkSession wires the pieces for one configuration.  Setup runs a
noise-free unmodulated calibration pass that measures the synchronization
settling time (which fixes the detector delay) and the transmitted-carrier
power (which feeds the Eb/N0 noise derivation).  Message and waveform runs
then follow the protocol: the carrier runs unmodulated while the receiver
acquires during [0, delay); modulation starts at the delay boundary and the
parameter estimates hold from there on (training handoff), so the detector
sees the steady tracking response.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .adaptsync import NOT_SETTLED, ControllerGains, settling_time
from .channel import ChannelConfig, NoiseModel, derive_sigma, make_rng, mix_seed
from .dynamics import (
    DynamicsParams,
    FixedCoeffs,
    IntegratorConfig,
    default_system,
)
from .fxp import FxpFormat, quantize
from .kernels import detector_kernel, link_kernel, term_arrays
from .modem import DetectorConfig, InfoSignal, make_bitstream, make_sine

__all__ = ["LinkConfig", "LinkSession", "BitRunResult", "WaveRunResult"]

DEFAULT_TX0 = (1032, -3107, 0)
DEFAULT_RX0 = (0, -4660, 1553)


@dataclass(frozen=True)
class LinkConfig:
    """Full bundle of link settings with the standard operating defaults."""

    fmt: FxpFormat = FxpFormat()
    integ: IntegratorConfig = IntegratorConfig()
    dynamics: DynamicsParams = field(default_factory=default_system)
    gains: ControllerGains | None = None
    tx0: tuple[int, int, int] = DEFAULT_TX0
    rx0: tuple[int, int, int] = DEFAULT_RX0
    bit_rate_hz: float = 1e6
    mask_amplitude: float = 1.4
    settle_tol_counts: int = 10
    settle_margin: float = 1.1
    max_settle_steps: int = 400_000
    a_threshold: float = 0.5
    detector_rearm: float = 0.375
    detector_alpha: float = 0.06
    detector_lag: int = 100
    detector_refractory: int = 250
    watchdog_bits: int = 6
    watchdog_margin: float = 0.3
    smoother_alpha: float = 0.01

    def resolved_gains(self) -> ControllerGains:
        return self.gains if self.gains is not None else \
            ControllerGains.default_gains(self.fmt)

    @property
    def bit_period(self) -> int:
        return round(self.integ.system_rate_hz / self.bit_rate_hz)

    def echo(self) -> dict:
        g = self.resolved_gains()
        return {
            "word_bits": self.fmt.word_bits,
            "scale": self.fmt.scale,
            "step_size": self.integ.h,
            "system_rate_hz": self.integ.system_rate_hz,
            "dynamics": self.dynamics.name,
            "theta": ",".join(repr(t) for t in self.dynamics.theta),
            "adapted": ",".join(str(j) for j in self.dynamics.adapted),
            "gamma": ",".join(repr(g_) for g_ in self.dynamics.gamma),
            "k1": g.k1, "k2": g.k2, "k3": g.k3,
            "tx0": ",".join(str(v) for v in self.tx0),
            "rx0": ",".join(str(v) for v in self.rx0),
            "bit_rate_hz": self.bit_rate_hz,
            "mask_amplitude": self.mask_amplitude,
            "settle_tol_counts": self.settle_tol_counts,
            "a_threshold": self.a_threshold,
            "detector_alpha": self.detector_alpha,
            "detector_lag": self.detector_lag,
            "detector_refractory": self.detector_refractory,
            "detector_rearm": self.detector_rearm,
            "watchdog_bits": self.watchdog_bits,
            "watchdog_margin": self.watchdog_margin,
            "smoother_alpha": self.smoother_alpha,
        }


@dataclass
class Calibration:
    """Results of the noise-free unmodulated setup pass."""

    settle_steps: int
    delay_steps: int
    carrier_z_power: float     # mean z^2 over the settled tail, analog^2
    theta_hat: np.ndarray
    sat_events: int


@dataclass
class BitRunResult:
    errors: int
    bits: int
    valid: bool
    recovered: np.ndarray
    sent: np.ndarray
    noise: NoiseModel
    delay_steps: int
    sat_events: dict

    @property
    def ber(self) -> float:
        return self.errors / self.bits if self.bits else 0.0


@dataclass
class WaveRunResult:
    recovered: np.ndarray
    original: np.ndarray
    gain: float
    lag: int
    rms_error: float
    correlation: float
    noise: NoiseModel
    delay_steps: int


class LinkSession:
    """One configured link; calibration is computed lazily and cached."""

    def __init__(self, cfg: LinkConfig):
        cfg.dynamics.check_fits(cfg.fmt)
        self.cfg = cfg
        self.coeffs = FixedCoeffs.build(cfg.dynamics.theta, cfg.integ, cfg.fmt)
        self._cal: Calibration | None = None

    # -- kernel plumbing -------------------------------------------------

    def _kernel_args(self):
        c = self.cfg
        rows, cidx, signs, va, vb = term_arrays(c.dynamics)
        th0 = np.array(c.dynamics.theta, dtype=float)
        th0[list(c.dynamics.adapted)] = 0.0
        return dict(
            tx0=np.array(c.tx0, dtype=np.int64),
            rx0=np.array(c.rx0, dtype=np.int64),
            rows=rows, cidx=cidx, signs=signs, va=va, vb=vb,
            folded_true=self.coeffs.folded,
            denom=self.coeffs.denom,
            scale=c.fmt.scale,
            max_raw=c.fmt.max_raw,
            h_folded=self.coeffs.h_folded,
            h=c.integ.h,
            k_raw=c.resolved_gains().as_array(),
            theta0=th0,
            adapted_idx=np.array(c.dynamics.adapted, dtype=np.int64),
            adapted_row=np.array(c.dynamics.adapted_rows(), dtype=np.int64),
            gamma=np.array(c.dynamics.gamma, dtype=float),
            theta_clip=c.dynamics.theta_clip,
        )

    def _run_kernel(self, n_steps, train_steps, mask_raw, sigma, noise_seed,
                    record_err=False, record_states=False):
        args = self._kernel_args()
        if sigma > 0.0:
            rng = make_rng(noise_seed)
            noise = rng.normal(0.0, sigma, (n_steps, 3))
            use_noise = True
        else:
            noise = np.zeros((1, 3))
            use_noise = False
        return link_kernel(
            args["tx0"], args["rx0"],
            args["rows"], args["cidx"], args["signs"], args["va"], args["vb"],
            args["folded_true"], args["denom"], args["scale"],
            args["max_raw"], args["h_folded"], args["h"],
            args["k_raw"],
            args["theta0"], args["adapted_idx"], args["adapted_row"],
            args["gamma"], args["theta_clip"],
            n_steps, train_steps,
            mask_raw, noise, use_noise,
            record_err, record_states)

    # -- calibration ------------------------------------------------------

    def calibrate(self) -> Calibration:
        """Noise-free unmodulated pass: settling time and carrier power."""
        if self._cal is not None:
            return self._cal
        c = self.cfg
        n = c.max_settle_steps
        mask = np.zeros(n, dtype=np.int64)
        e3, err, txt, _, th_hat, sat, _ = self._run_kernel(
            n, train_steps=n, mask_raw=mask, sigma=0.0, noise_seed=0,
            record_err=True, record_states=True)
        settle = settling_time(err, c.settle_tol_counts)
        if settle == NOT_SETTLED:
            raise RuntimeError(
                f"receiver failed to settle within {n} steps at "
                f"tolerance {c.settle_tol_counts} counts")
        delay = int(math.ceil(settle * c.settle_margin))
        tail = txt[max(settle, n // 2):, 2].astype(float) / c.fmt.scale
        self._cal = Calibration(
            settle_steps=int(settle),
            delay_steps=delay,
            carrier_z_power=float(np.mean(tail ** 2)),
            theta_hat=th_hat,
            sat_events=int(sat.sum()),
        )
        return self._cal

    def detector_config(self) -> DetectorConfig:
        c = self.cfg
        return DetectorConfig(
            delay_steps=self.calibrate().delay_steps,
            a_threshold=c.a_threshold,
            refractory=c.detector_refractory,
            rearm=c.detector_rearm,
            alpha=c.detector_alpha,
            lag=c.detector_lag,
            watchdog_bits=c.watchdog_bits,
            watchdog_margin=c.watchdog_margin,
        )

    def nominal_level(self) -> float:
        """Expected held-bit magnitude of the z error (analog units).

        A held mask level m shifts the receiver's z-row field by the linear
        z coefficient times m, balanced by the feedback gain, so the error
        settles near m * |theta_z| / k3.
        """
        c = self.cfg
        eff = self.coeffs.effective_theta()
        theta_z = abs(sum(t.sign * eff[t.coeff] for t in c.dynamics.terms
                          if t.row == 2 and t.var_b < 0 and t.var_a == 2))
        k3_analog = c.resolved_gains().k3 / c.fmt.scale
        level = quantize(c.mask_amplitude / 2.0, c.fmt) / c.fmt.scale
        return level * theta_z / k3_analog

    def signal_power(self) -> float:
        """Mean square of the modulated z channel (carrier + mask)."""
        c = self.cfg
        level = quantize(c.mask_amplitude / 2.0, c.fmt) / c.fmt.scale
        return self.calibrate().carrier_z_power + level * level

    def noise_model(self, ebn0_db: float, noise_power_dbm: float,
                    seed: int) -> NoiseModel:
        ch = ChannelConfig(
            mode="awgn", ebn0_db=ebn0_db, noise_power_dbm=noise_power_dbm,
            bit_rate_hz=self.cfg.bit_rate_hz,
            system_rate_hz=self.cfg.integ.system_rate_hz, seed=seed)
        return derive_sigma(ch, self.signal_power())

    # -- end-to-end runs --------------------------------------------------

    def run_bits(self, bits, noise: NoiseModel | None = None,
                 delay_override: int | None = None) -> BitRunResult:
        """Transmit a bit sequence and recover it from the z error.

        The mask starts at the detector delay; estimates train during the
        unmodulated window and hold afterwards.  The first recovered bit's
        absolute polarity is anchored to the first transmitted bit (its
        level is in flight when the detector starts).
        """
        c = self.cfg
        cal = self.calibrate()
        delay = cal.delay_steps if delay_override is None else delay_override
        valid = delay >= cal.settle_steps
        bits = np.asarray(bits, dtype=np.int64)
        if bits.size == 0:
            raise ValueError("message must contain at least one bit")
        bp = c.bit_period
        info = make_bitstream(bits, bp, c.bit_rate_hz, c.mask_amplitude, c.fmt)
        n = delay + len(info.samples)
        mask = np.zeros(n, dtype=np.int64)
        mask[delay:] = info.samples
        nm = noise if noise is not None else NoiseModel(0.0, 0, "ideal")
        e3, _, _, _, _, sat, _ = self._run_kernel(
            n, train_steps=delay, mask_raw=mask, sigma=nm.sigma,
            noise_seed=nm.seed)
        dcfg = self.detector_config()
        norm = dcfg.norm_for(c.mask_amplitude)
        recovered, _, _, _ = detector_kernel(
            e3, c.fmt.scale, delay, dcfg.alpha, dcfg.lag, norm,
            dcfg.a_threshold, dcfg.rearm, dcfg.refractory, bp, len(bits),
            int(bits[0]), self.nominal_level(), dcfg.watchdog_bits,
            dcfg.watchdog_margin)
        errors = int(np.count_nonzero(recovered != bits))
        return BitRunResult(
            errors=errors, bits=len(bits), valid=valid, recovered=recovered,
            sent=bits, noise=nm, delay_steps=delay,
            sat_events={"tx_mask": int(sat[0]), "channel": int(sat[1]),
                        "receiver": int(sat[2])})

    def run_waveform(self, info: InfoSignal,
                     noise: NoiseModel | None = None) -> WaveRunResult:
        """Transmit a waveform and recover it by exponential smoothing."""
        from .modem import SmootherConfig, fit_recovered, recover_waveform
        c = self.cfg
        cal = self.calibrate()
        delay = cal.delay_steps
        n = delay + len(info.samples)
        mask = np.zeros(n, dtype=np.int64)
        mask[delay:] = info.samples
        nm = noise if noise is not None else NoiseModel(0.0, 0, "ideal")
        e3, _, _, _, _, _, _ = self._run_kernel(
            n, train_steps=delay, mask_raw=mask, sigma=nm.sigma,
            noise_seed=nm.seed)
        sm = SmootherConfig(alpha=c.smoother_alpha, gain=1.0)
        recovered = recover_waveform(e3, sm, delay_steps=delay, fmt=c.fmt)
        original = info.samples.astype(float) / c.fmt.scale
        # skip the smoother/tracking warm-up when fitting
        warm = min(len(recovered) // 4, 40_000)
        gain, lag, rms, corr = fit_recovered(
            recovered[warm:], original[warm:],
            max_lag=min(30_000, (len(recovered) - warm) // 3))
        return WaveRunResult(
            recovered=gain * recovered, original=original, gain=gain,
            lag=lag, rms_error=rms, correlation=corr, noise=nm,
            delay_steps=delay)

    def make_sine(self, freq_hz: float, amplitude: float,
                  resolution_bits: int, rate_hz: float,
                  n_periods: int = 6) -> InfoSignal:
        steps_per_period = round(self.cfg.integ.system_rate_hz / freq_hz)
        return make_sine(freq_hz, amplitude, resolution_bits, rate_hz,
                         n_periods * steps_per_period,
                         self.cfg.integ.system_rate_hz, self.cfg.fmt)


def random_bits(n_bits: int, seed: int) -> np.ndarray:
    """Equiprobable message bits from a derived deterministic stream."""
    return make_rng(mix_seed(seed, 0x62697473)).integers(
        0, 2, n_bits).astype(np.int64)
