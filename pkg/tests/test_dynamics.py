"""Carrier dynamics and the Euler integrator, both arithmetic paths."""

import math

import numpy as np
import pytest

from chaoslink.dynamics import (
    COEFF_SUBSCALE,
    DynamicsParams,
    FixedCoeffs,
    IntegratorConfig,
    Term,
    default_system,
    derivative,
    estimate_top_lyapunov,
    euler_step_fixed,
    euler_step_reference,
    regressor,
    simulate_fixed,
    simulate_reference,
)
from chaoslink.fxp import FxpFormat, SaturationLog

FMT = FxpFormat()
CFG = IntegratorConfig()

# scalar decaying system dx = -x, handy closed-form test model
DECAY = DynamicsParams(
    name="decay", theta=(1.0,), terms=(Term(0, 0, -1, 0),),
    adapted=(), gamma=(), attractor_bound=2.0)

ZERO = DynamicsParams(
    name="zero", theta=(0.0,), terms=(Term(0, 0, +1, 0),),
    adapted=(), gamma=(), attractor_bound=1.0)


class TestDerivative:
    def test_origin_is_equilibrium(self):
        assert derivative((0.0, 0.0, 0.0), default_system()) == (0.0, 0.0, 0.0)

    def test_nontrivial_equilibrium(self):
        # For theta = (t0, t1, t2, t3, t4, t5): y = x, z* = (t1 - t2)/t3,
        # x* = sqrt(t5 z*/t4); worked out by hand for the default numbers.
        p = default_system()
        t = p.theta
        z = (t[1] - t[2]) / t[3]
        x = math.sqrt(t[5] * z / t[4])
        d = derivative((x, x, z), p)
        assert max(abs(v) for v in d) < 1e-12

    def test_hand_computed_point(self):
        # s = (0.1, 0.2, 0.3):
        #   fx = 10*(0.2-0.1)                    = 1.0
        #   fy = 28*0.1 - 0.2 - 60*0.1*0.3       = 0.8
        #   fz = 60*0.1*0.2 - (8/3)*0.3          = 0.4
        d = derivative((0.1, 0.2, 0.3), default_system())
        assert d[0] == pytest.approx(1.0, abs=1e-12)
        assert d[1] == pytest.approx(0.8, abs=1e-12)
        assert d[2] == pytest.approx(0.4, abs=1e-12)

    def test_regressor_matches_adapted_columns(self):
        p = default_system()
        s = (0.11, -0.07, 0.42)
        vals = regressor(s, p)
        assert vals[0] == pytest.approx(s[1] - s[0])
        assert vals[1] == pytest.approx(s[0])
        assert vals[2] == pytest.approx(-s[2])


class TestEulerReference:
    def test_zero_field_identity(self):
        s = (0.3, -0.2, 0.0)
        assert euler_step_reference(s, ZERO, CFG) == s

    def test_single_decay_step(self):
        s = euler_step_reference((1.0, 0.0, 0.0), DECAY, CFG)
        assert s[0] == pytest.approx(0.999, abs=1e-15)

    def test_n_step_decay_matches_closed_form(self):
        n = 1000
        traj = simulate_reference((1.0, 0.0, 0.0), DECAY, CFG, n)
        assert traj[-1, 0] == pytest.approx((1 - CFG.h) ** n, rel=1e-12)
        # first-order global accuracy against exp(-n h)
        assert abs(traj[-1, 0] - math.exp(-n * CFG.h)) < 0.6 * CFG.h

    def test_halving_h_halves_global_error(self):
        errs = {}
        for h in (0.002, 0.001):
            cfg = IntegratorConfig(h=h)
            n = round(1.0 / h)
            traj = simulate_reference((1.0, 0.0, 0.0), DECAY, cfg, n)
            errs[h] = abs(traj[-1, 0] - math.exp(-1.0))
        ratio = errs[0.002] / errs[0.001]
        assert 1.8 <= ratio <= 2.2


class TestEulerFixed:
    def test_zero_field_identity(self):
        coeffs = FixedCoeffs.build(ZERO.theta, CFG, FMT)
        s, resid = euler_step_fixed((1032, -3107, 0), (0, 0, 0), coeffs, ZERO, FMT)
        assert s == (1032, -3107, 0)
        assert resid == (0, 0, 0)

    def test_simulate_zero_steps(self):
        traj = simulate_fixed((1032, -3107, 0), default_system(), CFG, 0, FMT)
        assert traj.shape == (1, 3)
        assert tuple(traj[0]) == (1032, -3107, 0)

    def test_deterministic(self):
        a = simulate_fixed((1032, -3107, 0), default_system(), CFG, 5000, FMT)
        b = simulate_fixed((1032, -3107, 0), default_system(), CFG, 5000, FMT)
        assert np.array_equal(a, b)

    def test_kernel_matches_scalar_path(self):
        # long-run path (compiled) against the pure-Python step, bit for bit
        p = default_system()
        n = 2500
        kernel = simulate_fixed((1032, -3107, 0), p, CFG, n, FMT)
        coeffs = FixedCoeffs.build(p.theta, CFG, FMT)
        s = (1032, -3107, 0)
        resid = (0, 0, 0)
        scalar = [s]
        for _ in range(n):
            s, resid = euler_step_fixed(s, resid, coeffs, p, FMT)
            scalar.append(s)
        assert np.array_equal(kernel, np.array(scalar))

    def test_fixed_tracks_reference_over_1000_steps(self):
        p = default_system()
        coeffs = FixedCoeffs.build(p.theta, CFG, FMT)
        fixed = simulate_fixed((1032, -3107, 0), p, CFG, 1000, FMT)
        ref = simulate_reference(
            (1032 / FMT.scale, -1.0, 0.0), p, CFG, 1000,
            theta=coeffs.effective_theta())
        diff = np.abs(fixed / FMT.scale - ref)
        assert diff.max() <= 50 / FMT.scale


class TestDefaultSystem:
    def test_bound_fits_word(self):
        p = default_system()
        assert p.attractor_bound * FMT.scale <= FMT.max_raw
        p.check_fits(FMT)

    def test_long_free_run_never_saturates(self):
        log = SaturationLog()
        traj = simulate_fixed((1032, -3107, 0), default_system(), CFG,
                              1_000_000, FMT, log)
        assert log.count == 0
        bound = default_system().attractor_bound * FMT.scale
        assert np.abs(traj).max() <= bound

    def test_positive_top_lyapunov_exponent(self):
        lam = estimate_top_lyapunov(
            default_system(), CFG, (1032 / FMT.scale, -1.0, 0.0),
            n_steps=150_000)
        assert lam > 0.1

    def test_sensitive_dependence_one_lsb(self):
        p = default_system()
        a = simulate_fixed((1032, -3107, 0), p, CFG, 60_000, FMT)
        b = simulate_fixed((1033, -3107, 0), p, CFG, 60_000, FMT)
        sep = np.abs(a - b).max(axis=1)
        horizon = int(np.argmax(sep > 1000))
        assert 0 < horizon < 60_000, "1-count twin runs must separate"
        # log the measured horizon for the record
        print(f"\n1-LSB separation to >1000 counts at step {horizon}")


class TestValidation:
    def test_rejects_negative_step(self):
        with pytest.raises(ValueError):
            IntegratorConfig(h=-0.1)

    def test_rejects_negative_count(self):
        with pytest.raises(ValueError):
            simulate_reference((0.0, 0.0, 0.0), default_system(), CFG, -1)

    def test_rejects_multi_row_adapted_coeff(self):
        with pytest.raises(ValueError):
            DynamicsParams(
                name="bad", theta=(1.0,),
                terms=(Term(0, 0, 1, 0), Term(1, 0, 1, 1)),
                adapted=(0,), gamma=(1.0,), attractor_bound=1.0)

    def test_oversized_attractor_rejected(self):
        p = DynamicsParams(name="big", theta=(1.0,), terms=(Term(0, 0, -1, 0),),
                           adapted=(), gamma=(), attractor_bound=20.0)
        with pytest.raises(ValueError):
            p.check_fits(FMT)


def test_coeff_subscale_precision():
    # constants land within 0.1% of their analog values at the sub-scale
    p = default_system()
    coeffs = FixedCoeffs.build(p.theta, CFG, FMT)
    eff = coeffs.effective_theta()
    for t_true, t_eff in zip(p.theta, eff):
        assert abs(t_eff - t_true) <= abs(t_true) * 1e-3 + 1e-12
    assert COEFF_SUBSCALE >= 16
