"""Adaptive master-slave synchronization of the receiver to the transmitter.

The receiver is driven by saturating feedback u = -k*e plus a compensation
that replaces its own estimated nonlinear terms with the same terms evaluated
on the received signal, which makes the error dynamics e' = -K e + Phi*dtheta
and gives the standard Lyapunov argument V = e'e/2 + dtheta'G^-1 dtheta/2,
V' <= 0 up to the estimation transient.  Parameter estimates integrate the
gradient rule on the receiver-state regressor.

These functions are the value-level reference semantics; long closed-loop
runs use the compiled kernels, which the tests pin to these exact results.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .dynamics import (
    COEFF_SUBSCALE,
    DynamicsParams,
    FixedCoeffs,
    IntegratorConfig,
    _acc_wide,
    _round_half_even_int,
)
from .fxp import FxpFormat, SaturationLog, saturate

__all__ = [
    "ControllerGains",
    "ControllerState",
    "NOT_SETTLED",
    "sync_error",
    "control",
    "adapt_step",
    "receiver_step",
    "settling_time",
    "write_error_csv",
]

NOT_SETTLED = -1


@dataclass(frozen=True)
class ControllerGains:
    """Feedback gains in raw scaled units (positive, enforced)."""

    k1: int
    k2: int
    k3: int

    def __post_init__(self):
        for name, v in (("k1", self.k1), ("k2", self.k2), ("k3", self.k3)):
            if v <= 0:
                raise ValueError(f"{name} must be positive, got {v}")

    @classmethod
    def default_gains(cls, fmt: FxpFormat = FxpFormat()) -> "ControllerGains":
        return cls(2 * fmt.scale, fmt.scale, 3 * fmt.scale)

    def as_array(self):
        return np.array([self.k1, self.k2, self.k3], dtype=np.int64)


@dataclass
class ControllerState:
    """Receiver state, parameter estimates, and adaptation accumulators.

    theta_hat holds the full coefficient vector; entries the dynamics marks
    as known stay at their true values and are never updated.  accum carries
    the fraction-saving residuals of the receiver's integrators.
    """

    receiver: tuple[int, int, int]
    theta_hat: np.ndarray
    params: DynamicsParams
    accum: tuple[int, int, int] = (0, 0, 0)
    frozen: bool = False

    @classmethod
    def initial(cls, params: DynamicsParams,
                receiver=(0, -4660, 1553)) -> "ControllerState":
        th = np.array(params.theta, dtype=float)
        th[list(params.adapted)] = 0.0
        return cls(receiver=tuple(int(v) for v in receiver), theta_hat=th,
                   params=params)


def sync_error(tx_out, rx):
    """Componentwise receiver-minus-received error, in raw counts."""
    return tuple(int(r) - int(t) for r, t in zip(rx, tx_out))


def control(e, rx, cs: ControllerState, gains: ControllerGains,
            cfg: IntegratorConfig = IntegratorConfig(),
            fmt: FxpFormat = FxpFormat(),
            log: SaturationLog | None = None):
    """Saturating control word: feedback plus estimated-term compensation.

    Each component is a wide sum of -k_i*e_i and theta_hat-weighted
    differences of the regressor terms between the received drive (rx - e)
    and the receiver state, rescaled and rounded once.
    """
    params = cs.params
    sub = COEFF_SUBSCALE
    denom = fmt.scale * fmt.scale * sub
    theta_w = np.array([round(t * fmt.scale * sub) for t in cs.theta_hat],
                       dtype=object)
    drive = tuple(int(r) - int(ev) for r, ev in zip(rx, e))
    acc_d = _acc_wide(drive, params, theta_w, fmt.scale)
    acc_r = _acc_wide(rx, params, theta_w, fmt.scale)
    k = (gains.k1, gains.k2, gains.k3)
    out = []
    for r in range(3):
        wide = acc_d[r] - acc_r[r] - int(k[r]) * int(e[r]) * sub * fmt.scale
        out.append(saturate(_round_half_even_int(wide, denom), fmt, log,
                            "control"))
    return tuple(out)


def adapt_step(e, rx, cs: ControllerState,
               cfg: IntegratorConfig = IntegratorConfig(),
               fmt: FxpFormat = FxpFormat()) -> ControllerState:
    """Gradient update of the adapted coefficients (Euler integration).

    theta_hat[j] <- theta_hat[j] - h * gamma_j * phi_j(rx) * e_row(j), with
    phi evaluated on the receiver state in analog units.  Estimates are
    projected onto [-theta_clip, theta_clip].  No-op when frozen or e = 0.
    """
    if cs.frozen:
        return cs
    params = cs.params
    th = cs.theta_hat.copy()
    rx_an = tuple(v / fmt.scale for v in rx)
    rows = params.adapted_rows()
    for a, j in enumerate(params.adapted):
        phi = 0.0
        for t in params.terms:
            if t.coeff == j:
                v = rx_an[t.var_a] if t.var_b < 0 else rx_an[t.var_a] * rx_an[t.var_b]
                phi += t.sign * v
        ev = e[rows[a]] / fmt.scale
        nv = th[j] - cfg.h * params.gamma[a] * phi * ev
        th[j] = min(max(nv, -params.theta_clip), params.theta_clip)
    return replace(cs, theta_hat=th)


def receiver_step(rx, u, cs: ControllerState,
                  cfg: IntegratorConfig = IntegratorConfig(),
                  fmt: FxpFormat = FxpFormat(),
                  drive=None,
                  log: SaturationLog | None = None) -> ControllerState:
    """One fixed-point receiver update.

    The estimated field is evaluated on the received drive when it is
    supplied (the closed-loop topology: the compensation in u already
    cancelled the receiver's own terms, so together the update equals
    sigma + h*(f(sigma; theta_hat) + u) in exact arithmetic); without a
    drive, the field is evaluated on the receiver state itself.
    """
    params = cs.params
    coeffs = FixedCoeffs.build(tuple(cs.theta_hat), cfg, fmt)
    at = drive if drive is not None else rx
    acc = _acc_wide(at, params, coeffs.folded, fmt.scale)
    new_state = []
    new_resid = []
    for r in range(3):
        total = acc[r] + coeffs.h_folded * int(u[r]) * fmt.scale + cs.accum[r]
        inc = _round_half_even_int(total, coeffs.denom)
        rem = total - inc * coeffs.denom
        v = int(rx[r]) + inc
        if abs(v) > fmt.max_raw:
            rem = 0
        new_state.append(saturate(v, fmt, log, "receiver_step"))
        new_resid.append(rem)
    return replace(cs, receiver=tuple(new_state), accum=tuple(new_resid))


def settling_time(error_trace, tol: int) -> int:
    """First index after which every component stays within +/-tol.

    Returns NOT_SETTLED when the trace never permanently enters the band.
    """
    if len(error_trace) == 0:
        raise ValueError("error trace must be nonempty")
    if tol <= 0:
        raise ValueError(f"tolerance must be positive, got {tol}")
    arr = np.asarray(error_trace)
    if arr.ndim == 1:
        arr = arr[:, None]
    over = np.any(np.abs(arr) > tol, axis=1)
    idx = np.nonzero(over)[0]
    if len(idx) == 0:
        return 0
    last = int(idx[-1]) + 1
    if last >= len(arr):
        return NOT_SETTLED
    return last


def write_error_csv(path, err_trace, header_lines=()) -> None:
    """Dump a raw-count error trace: step,e1,e2,e3."""
    arr = np.asarray(err_trace, dtype=np.int64)
    with open(path, "w", encoding="ascii", newline="\n") as f:
        for line in header_lines:
            f.write(f"# {line}\n")
        f.write("step,e1,e2,e3\n")
        for i, row in enumerate(arr):
            f.write(f"{i},{row[0]},{row[1]},{row[2]}\n")
