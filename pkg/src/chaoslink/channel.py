"""Additive white Gaussian noise channel.

Two parameterizations are combined per run: an Eb/N0 target derived from the
measured transmitted power and bit rate, and an absolute noise power in dBm
(1 analog-unit^2 == 1 W into the reference load).  The injected noise
variance is the smaller of the two - the dBm setting is the generator's
absolute power budget - and which constraint bound the run is reported.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass

import numpy as np

from .fxp import FxpFormat, SaturationLog

__all__ = [
    "ChannelConfig",
    "NoiseModel",
    "dbm_to_power",
    "derive_sigma",
    "awgn_apply",
    "make_rng",
    "splitmix64",
]


def splitmix64(x: int) -> int:
    """One round of the SplitMix64 mixer; the seed-derivation primitive."""
    x = (x + 0x9E3779B97F4A7C15) & 0xFFFFFFFFFFFFFFFF
    z = x
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & 0xFFFFFFFFFFFFFFFF
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & 0xFFFFFFFFFFFFFFFF
    return z ^ (z >> 31)


def mix_seed(master_seed: int, *parts) -> int:
    """Deterministic 64-bit seed from a master seed and typed parts.

    Floats contribute their IEEE-754 bit patterns so equal values always mix
    identically.
    """
    acc = master_seed & 0xFFFFFFFFFFFFFFFF
    for p in parts:
        if isinstance(p, float):
            (bits,) = struct.unpack("<Q", struct.pack("<d", p))
        else:
            bits = int(p) & 0xFFFFFFFFFFFFFFFF
        acc = splitmix64(acc ^ bits)
    return acc


def make_rng(seed64: int) -> np.random.Generator:
    """Counter-based generator keyed by a derived 64-bit seed."""
    return np.random.Generator(np.random.Philox(key=seed64))


@dataclass(frozen=True)
class ChannelConfig:
    """Channel operating point."""

    mode: str = "awgn"                 # "ideal" | "awgn"
    ebn0_db: float = math.inf          # no SNR constraint by default
    noise_power_dbm: float = math.inf  # no absolute-power cap by default
    bit_rate_hz: float = 1e6
    system_rate_hz: float = 450e6
    seed: int = 0

    def __post_init__(self):
        if self.mode not in ("ideal", "awgn"):
            raise ValueError(f"unknown channel mode {self.mode!r}")


@dataclass(frozen=True)
class NoiseModel:
    """Resolved noise level plus the seed of its deterministic stream."""

    sigma: float
    seed: int
    binding: str                       # "ideal" | "ebn0" | "noise_dbm"

    def generator(self) -> np.random.Generator:
        return make_rng(self.seed)


def dbm_to_power(p_dbm: float) -> float:
    """Power in watt-equivalents (1 analog-unit^2 == 1 W reference)."""
    if math.isnan(p_dbm):
        raise ValueError("noise power must not be NaN")
    return 10.0 ** ((p_dbm - 30.0) / 10.0)


def derive_sigma(cfg: ChannelConfig, measured_signal_power: float) -> NoiseModel:
    """Resolve the per-sample noise standard deviation.

    Eb = measured power / bit rate; N0 = Eb / 10^(Eb/N0 dB / 10); the Eb/N0
    branch asks for sigma^2 = N0 * system rate / 2.  The absolute dBm power
    caps the injected variance so the configured noise power also holds;
    the binding (smaller) branch is recorded.
    """
    if cfg.mode == "ideal":
        return NoiseModel(sigma=0.0, seed=cfg.seed, binding="ideal")
    if measured_signal_power <= 0:
        raise ValueError(
            f"measured signal power must be positive, got {measured_signal_power}")
    eb = measured_signal_power / cfg.bit_rate_hz
    n0 = eb / (10.0 ** (cfg.ebn0_db / 10.0))
    var_ebn0 = n0 * cfg.system_rate_hz / 2.0
    var_dbm = dbm_to_power(cfg.noise_power_dbm)
    if var_ebn0 <= var_dbm:
        var, binding = var_ebn0, "ebn0"
    else:
        var, binding = var_dbm, "noise_dbm"
    return NoiseModel(sigma=math.sqrt(var), seed=cfg.seed, binding=binding)


def awgn_apply(samples, nm: NoiseModel, fmt: FxpFormat = FxpFormat(),
               rng: np.random.Generator | None = None,
               log: SaturationLog | None = None) -> np.ndarray:
    """Dequantize, add Gaussian noise, requantize with saturation.

    ``samples`` is an int64 array of raw counts with any shape; each entry
    gets an independent draw.  sigma == 0 is an exact pass-through.
    """
    arr = np.asarray(samples, dtype=np.int64)
    if nm.sigma == 0.0:
        return arr.copy()
    gen = rng if rng is not None else nm.generator()
    noisy = arr + gen.normal(0.0, nm.sigma, arr.shape) * fmt.scale
    raw = np.rint(noisy)
    clipped = np.clip(raw, -fmt.max_raw, fmt.max_raw)
    if log is not None:
        n_clip = int(np.count_nonzero(raw != clipped))
        if n_clip:
            log.record("awgn_apply", n_clip)
    return clipped.astype(np.int64)
