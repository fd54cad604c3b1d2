"""Bit-accurate simulator of a chaos-masked secure communication link.

A fixed-point chaotic transmitter, an adaptive-control synchronized
receiver, masking modulation of bitstreams and waveforms, an AWGN channel,
and a Monte Carlo BER harness.
"""

__version__ = "0.1.0"

from .fxp import FxpFormat, SaturationLog, quantize, dequantize  # noqa: F401
from .fxp import to_bitword, from_bitword, sat_add, mul_scaled  # noqa: F401
from .dynamics import (  # noqa: F401
    DynamicsParams,
    IntegratorConfig,
    default_system,
    simulate_fixed,
    simulate_reference,
)
from .adaptsync import ControllerGains, ControllerState, settling_time  # noqa: F401
from .modem import DetectorConfig, SmootherConfig, InfoSignal  # noqa: F401
from .channel import ChannelConfig, NoiseModel, dbm_to_power, derive_sigma  # noqa: F401
from .link import LinkConfig, LinkSession  # noqa: F401
from .berlab import SweepConfig, BerPoint, BerReport, sweep  # noqa: F401
