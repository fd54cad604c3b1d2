"""Chaotic carrier dynamics and the forward-Euler integrator.

The vector field family is quadratic with no constant term, described by a
term table so transmitter, receiver, and adaptation all share one structure:

    f_row(s) = sum_j  sign_j * theta[coeff_j] * basis_j(s)

where each basis term is a state component or a product of two components.
Two integration paths exist on the same model:

* a reference path in double precision, and
* a bit-accurate fixed-point path whose 16-bit state updates use wide
  multiply-accumulate with a single round/saturate per component per step.

The fixed-point integrator is fraction-saving: the sub-LSB remainder of each
state update is carried into the next step (a standard DSP accumulator
register), which keeps slow dynamics alive under quantization without
widening any on-bus signal.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .fxp import FxpFormat, SaturationLog, saturate

__all__ = [
    "Term",
    "DynamicsParams",
    "IntegratorConfig",
    "FixedCoeffs",
    "default_system",
    "derivative",
    "regressor",
    "euler_step_reference",
    "euler_step_fixed",
    "simulate_reference",
    "simulate_fixed",
    "write_trajectory_csv",
    "COEFF_SUBSCALE",
]

# Constant multipliers are held finer than the signal path (wider coefficient
# registers); signals stay at the 16-bit format.
COEFF_SUBSCALE = 64


@dataclass(frozen=True)
class Term:
    """One additive term of the vector field: sign * theta[coeff] * basis."""

    row: int          # state component the term drives (0=x, 1=y, 2=z)
    coeff: int        # index into the coefficient vector
    sign: int         # +1 or -1
    var_a: int        # first state index of the basis
    var_b: int = -1   # second state index, or -1 for a linear term


@dataclass(frozen=True)
class DynamicsParams:
    """Coefficient vector plus structure and adaptation metadata."""

    name: str
    theta: tuple[float, ...]
    terms: tuple[Term, ...]
    adapted: tuple[int, ...]           # coefficient indices the receiver estimates
    gamma: tuple[float, ...]           # adaptation rate per adapted coefficient
    attractor_bound: float             # documented max |component|, analog units
    theta_clip: float = 200.0          # projection bound for estimates

    def __post_init__(self):
        rows = {self.terms[k].row for k in range(len(self.terms))}
        if not rows <= {0, 1, 2}:
            raise ValueError("term rows must be 0..2")
        for j in self.adapted:
            if not 0 <= j < len(self.theta):
                raise ValueError(f"adapted index {j} out of range")
        if len(self.gamma) != len(self.adapted):
            raise ValueError("gamma must have one entry per adapted coefficient")
        # Each adapted coefficient must live on a single row so its error
        # channel is unambiguous.
        for j in self.adapted:
            rows_j = {t.row for t in self.terms if t.coeff == j}
            if len(rows_j) != 1:
                raise ValueError(f"adapted coefficient {j} spans rows {rows_j}")

    def adapted_rows(self) -> tuple[int, ...]:
        out = []
        for j in self.adapted:
            out.append(next(t.row for t in self.terms if t.coeff == j))
        return tuple(out)

    def check_fits(self, fmt: FxpFormat) -> None:
        if self.attractor_bound * fmt.scale > fmt.max_raw:
            raise ValueError(
                f"attractor bound {self.attractor_bound} does not fit "
                f"{fmt.word_bits}-bit range at scale {fmt.scale}")


@dataclass(frozen=True)
class IntegratorConfig:
    """Euler step size and the nominal hardware sample rate."""

    h: float = 0.001
    system_rate_hz: float = 450e6

    def __post_init__(self):
        if self.h <= 0:
            raise ValueError(f"step size must be positive, got {self.h}")
        if self.system_rate_hz <= 0:
            raise ValueError("system rate must be positive")


def default_system() -> DynamicsParams:
    """The shipped carrier: a classical three-variable chaotic system.

    States are the classical Lorenz variables divided by 60 so the attractor
    (|x| < 0.33, |y| < 0.46, z < 0.81) and its startup transients stay well
    inside the 16-bit range with headroom for masking and channel noise.
    Coefficients: dx = th0*(y-x); dy = th1*x - th2*y - th3*x*z;
    dz = th4*x*y - th5*z with th3 = th4 = 60 absorbing the rescale.

    The receiver estimates th0, th1, th5 (the classical sigma/rho/beta slots);
    the quadratic couplings and the unit y-damping are treated as known
    structure shared by both ends.  Adaptation rates are matched to the
    regressor power of this attractor at these gains.
    """
    c = 60.0
    return DynamicsParams(
        name="lorenz60",
        theta=(10.0, 28.0, 1.0, c, c, 8.0 / 3.0),
        terms=(
            Term(0, 0, +1, 1), Term(0, 0, -1, 0),
            Term(1, 1, +1, 0), Term(1, 2, -1, 1), Term(1, 3, -1, 0, 2),
            Term(2, 4, +1, 0, 1), Term(2, 5, -1, 2),
        ),
        adapted=(0, 1, 5),
        gamma=(150.0, 25.0, 8.0),
        attractor_bound=2.0,
    )


def derivative(state, params: DynamicsParams, theta=None):
    """Vector field value at an analog-valued state (reference path)."""
    th = params.theta if theta is None else theta
    out = [0.0, 0.0, 0.0]
    for t in params.terms:
        v = state[t.var_a] if t.var_b < 0 else state[t.var_a] * state[t.var_b]
        out[t.row] += t.sign * th[t.coeff] * v
    return tuple(out)


def regressor(state, params: DynamicsParams):
    """Per-adapted-coefficient basis value (the column driving its row)."""
    vals = []
    for j in params.adapted:
        acc = 0.0
        for t in params.terms:
            if t.coeff == j:
                v = state[t.var_a] if t.var_b < 0 else state[t.var_a] * state[t.var_b]
                acc += t.sign * v
        vals.append(acc)
    return tuple(vals)


@dataclass
class FixedCoeffs:
    """Precomputed integer images of the coefficients for the fixed path.

    folded[j] = round(theta[j] * h * scale * COEFF_SUBSCALE): the step size is
    folded into each constant multiplier once at setup.  ``denom`` is the
    common divisor of the wide per-component accumulator.
    """

    folded: np.ndarray
    denom: int
    scale: int
    h_folded: int

    h: float = 0.001

    @classmethod
    def build(cls, theta, cfg: IntegratorConfig, fmt: FxpFormat) -> "FixedCoeffs":
        sub = COEFF_SUBSCALE
        folded = np.array(
            [round(t * cfg.h * fmt.scale * sub) for t in theta], dtype=np.int64)
        return cls(
            folded=folded,
            denom=fmt.scale * fmt.scale * sub,
            scale=fmt.scale,
            h_folded=round(cfg.h * fmt.scale * sub),
            h=cfg.h,
        )

    def effective_theta(self) -> tuple[float, ...]:
        """The analog coefficients actually realized after quantization."""
        q = self.h * self.scale * COEFF_SUBSCALE
        return tuple(float(c) / q for c in self.folded)


def _round_half_even_int(num: int, den: int) -> int:
    """round(num/den) with ties to even, exact integer arithmetic, den > 0."""
    q, r = divmod(num, den)
    twice = 2 * r
    if twice > den or (twice == den and q % 2):
        q += 1
    return q


def _acc_wide(state, params: DynamicsParams, folded, scale: int):
    """Per-row wide accumulation of coeff * basis at scale^2 * subscale."""
    acc = [0, 0, 0]
    for t in params.terms:
        if t.var_b < 0:
            p = int(state[t.var_a]) * scale
        else:
            p = int(state[t.var_a]) * int(state[t.var_b])
        acc[t.row] += t.sign * int(folded[t.coeff]) * p
    return acc


def euler_step_reference(state, params: DynamicsParams, cfg: IntegratorConfig,
                         theta=None):
    """One explicit Euler step on analog values."""
    d = derivative(state, params, theta)
    return tuple(s + cfg.h * di for s, di in zip(state, d))


def euler_step_fixed(state, residual, coeffs: FixedCoeffs,
                     params: DynamicsParams, fmt: FxpFormat,
                     log: SaturationLog | None = None):
    """One fixed-point Euler step.

    Each component accumulates all coefficient*basis products at full width,
    adds the carried sub-LSB remainder, and is rounded (half-even) and
    saturated exactly once.  Returns (new_state, new_residual).
    """
    acc = _acc_wide(state, params, coeffs.folded, coeffs.scale)
    new_state = []
    new_resid = []
    for r in range(3):
        total = acc[r] + residual[r]
        inc = _round_half_even_int(total, coeffs.denom)
        rem = total - inc * coeffs.denom
        v = int(state[r]) + inc
        if abs(v) > fmt.max_raw:
            rem = 0  # remainder is meaningless across a clamp
        new_state.append(saturate(v, fmt, log, "euler_step"))
        new_resid.append(rem)
    return tuple(new_state), tuple(new_resid)


def simulate_reference(state0, params: DynamicsParams, cfg: IntegratorConfig,
                       n_steps: int, theta=None) -> np.ndarray:
    """Deterministic reference trajectory; returns (n_steps+1, 3) floats."""
    if n_steps < 0:
        raise ValueError("step count must be nonnegative")
    out = np.empty((n_steps + 1, 3))
    out[0] = state0
    s = tuple(state0)
    for i in range(n_steps):
        s = euler_step_reference(s, params, cfg, theta)
        out[i + 1] = s
    return out


def simulate_fixed(state0, params: DynamicsParams, cfg: IntegratorConfig,
                   n_steps: int, fmt: FxpFormat = FxpFormat(),
                   log: SaturationLog | None = None) -> np.ndarray:
    """Deterministic fixed-point trajectory of raw counts: (n_steps+1, 3).

    Long runs are delegated to the compiled kernel; semantics are identical
    to `euler_step_fixed` iterated (covered by the consistency tests).
    """
    if n_steps < 0:
        raise ValueError("step count must be nonnegative")
    coeffs = FixedCoeffs.build(params.theta, cfg, fmt)
    if n_steps >= 2000:
        from .kernels import transmitter_kernel, term_arrays
        rows, cidx, signs, va, vb = term_arrays(params)
        traj, sat_count = transmitter_kernel(
            np.asarray(state0, dtype=np.int64), rows, cidx, signs, va, vb,
            coeffs.folded, coeffs.denom, fmt.scale, fmt.max_raw, n_steps)
        if log is not None and sat_count:
            log.record("simulate_fixed", int(sat_count))
        return traj
    out = np.empty((n_steps + 1, 3), dtype=np.int64)
    out[0] = state0
    s = tuple(int(v) for v in state0)
    resid = (0, 0, 0)
    for i in range(n_steps):
        s, resid = euler_step_fixed(s, resid, coeffs, params, fmt, log)
        out[i + 1] = s
    return out


def write_trajectory_csv(path, traj_raw: np.ndarray, fmt: FxpFormat,
                         header_lines=()) -> None:
    """Dump a fixed-point trajectory: step,x_raw,y_raw,z_raw,x,y,z."""
    with open(path, "w", encoding="ascii", newline="\n") as f:
        for line in header_lines:
            f.write(f"# {line}\n")
        f.write("step,x_raw,y_raw,z_raw,x,y,z\n")
        for i, row in enumerate(traj_raw):
            xs = ",".join(str(int(v)) for v in row)
            an = ",".join(repr(int(v) / fmt.scale) for v in row)
            f.write(f"{i},{xs},{an}\n")


def estimate_top_lyapunov(params: DynamicsParams, cfg: IntegratorConfig,
                          state0, perturb: float = 1e-6,
                          n_steps: int = 200_000,
                          renorm_every: int = 500) -> float:
    """Largest Lyapunov exponent by two-trajectory divergence with
    periodic renormalization (reference arithmetic)."""
    a = np.array(state0, dtype=float)
    b = a + np.array([perturb, 0.0, 0.0])
    total = 0.0
    count = 0
    for i in range(n_steps):
        a = np.array(euler_step_reference(a, params, cfg))
        b = np.array(euler_step_reference(b, params, cfg))
        if (i + 1) % renorm_every == 0:
            dist = float(np.linalg.norm(b - a))
            if dist == 0.0:
                continue
            total += math.log(dist / perturb)
            count += 1
            b = a + (b - a) * (perturb / dist)
    span = count * renorm_every * cfg.h
    return total / span if span > 0 else 0.0
