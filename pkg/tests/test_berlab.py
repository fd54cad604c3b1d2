"""Monte Carlo harness: trials, sweeps, reports."""

import math

import pytest

from chaoslink.berlab import (
    CSV_HEADER,
    BerPoint,
    SweepConfig,
    compute_ber,
    read_report,
    run_trial,
    sweep,
    trial_seed,
    write_report,
    plot_report,
)
from chaoslink.link import LinkConfig, LinkSession


@pytest.fixture(scope="module")
def session():
    s = LinkSession(LinkConfig())
    s.calibrate()
    return s


SMALL_GRID = dict(
    ebn0_grid_db=(0.0, 30.0),
    noise_powers_dbm=(10.0, 40.0),
    bits_per_trial=150,
    trials_per_point=1,
    master_seed=99,
)


class TestComputeBer:
    def test_exact_quotients(self):
        assert compute_ber(0, 1000) == 0.0
        assert compute_ber(5, 1000) == 0.005
        assert compute_ber(1000, 1000) == 1.0

    def test_rejects_zero_bits(self):
        with pytest.raises(ValueError):
            compute_ber(0, 0)

    def test_rejects_inconsistent_counts(self):
        with pytest.raises(ValueError):
            compute_ber(10, 5)


class TestTrialSeed:
    def test_deterministic_and_distinct(self):
        s = trial_seed(5, 20.0, 30.0, 0)
        assert s == trial_seed(5, 20.0, 30.0, 0)
        assert s != trial_seed(5, 20.0, 30.0, 1)
        assert s != trial_seed(5, 21.0, 30.0, 0)
        assert s != trial_seed(5, 20.0, 40.0, 0)
        assert s != trial_seed(6, 20.0, 30.0, 0)


class TestRunTrial:
    def test_ideal_channel_recovers_everything(self, session):
        errors, bits, valid, binding = run_trial(
            session, math.inf, -math.inf, 0, 200, master_seed=1)
        assert (errors, bits, valid) == (0, 200, True)
        assert binding == "ideal"

    def test_rerun_is_identical(self, session):
        a = run_trial(session, 10.0, 40.0, 0, 150, master_seed=7)
        b = run_trial(session, 10.0, 40.0, 0, 150, master_seed=7)
        assert a == b

    def test_noisy_trial_reports_binding(self, session):
        _, _, _, binding = run_trial(session, 0.0, 10.0, 0, 150, master_seed=7)
        assert binding == "noise_dbm"


class TestSweep:
    def test_small_grid_shape_and_order(self):
        rep = sweep(SweepConfig(**SMALL_GRID))
        assert len(rep.points) == 4
        keys = [(p.noise_dbm, p.ebn0_db) for p in rep.points]
        assert keys == sorted(keys)
        assert all(p.errors <= p.bits for p in rep.points)
        assert all(p.invalid_trials == 0 for p in rep.points)

    def test_parallel_schedule_is_bit_identical(self):
        serial = sweep(SweepConfig(**SMALL_GRID))
        parallel = sweep(SweepConfig(**{**SMALL_GRID, "workers": 2}))
        assert serial.points == parallel.points

    def test_trials_pool(self):
        cfg = SweepConfig(**{**SMALL_GRID,
                             "ebn0_grid_db": (10.0,),
                             "noise_powers_dbm": (10.0,),
                             "trials_per_point": 3})
        rep = sweep(cfg)
        assert rep.points[0].bits == 3 * 150

    def test_rejects_bad_config(self):
        with pytest.raises(ValueError):
            SweepConfig(ebn0_grid_db=())
        with pytest.raises(ValueError):
            SweepConfig(bits_per_trial=50)
        with pytest.raises(ValueError):
            SweepConfig(trials_per_point=0)


class TestReportIO:
    def test_round_trip_exact(self, tmp_path):
        rep = sweep(SweepConfig(**SMALL_GRID))
        path = tmp_path / "r.csv"
        write_report(rep, path)
        back = read_report(path)
        assert back.points == rep.points

    def test_header_and_counts(self, tmp_path):
        rep = sweep(SweepConfig(**SMALL_GRID))
        path = tmp_path / "r.csv"
        write_report(rep, path)
        lines = path.read_text().splitlines()
        data = [ln for ln in lines if not ln.startswith("#")]
        assert data[0] == CSV_HEADER
        assert len(data) == 1 + 4
        assert any(ln.startswith("# master_seed") for ln in lines)

    def test_empty_grid_is_rejected_but_header_writable(self, tmp_path):
        from chaoslink.berlab import BerReport
        rep = BerReport(points=[], config_echo={"note": "empty"})
        path = tmp_path / "empty.csv"
        write_report(rep, path)
        back = read_report(path)
        assert back.points == []

    def test_io_error_has_path_context(self):
        rep = sweep(SweepConfig(**SMALL_GRID))
        with pytest.raises(OSError, match="no/such/dir"):
            write_report(rep, "/no/such/dir/report.csv")

    def test_plot_is_best_effort(self, tmp_path):
        rep = sweep(SweepConfig(**SMALL_GRID))
        ok = plot_report(rep, tmp_path / "r.svg")
        assert ok in (True, False)
        if ok:
            head = (tmp_path / "r.svg").read_bytes()[:200]
            assert b"svg" in head.lower()

    def test_ber_property(self):
        p = BerPoint(ebn0_db=1.0, noise_dbm=10.0, bits=400, errors=3,
                     invalid_trials=0, binding_constraint="ebn0")
        assert p.ber == pytest.approx(0.0075)


class TestInvalidTrials:
    def test_short_delay_is_reported_not_dropped(self):
        # a settle margin below 1 makes the configured detector delay
        # shorter than the measured settling time
        link = LinkConfig(settle_margin=0.5)
        cfg = SweepConfig(ebn0_grid_db=(30.0,), noise_powers_dbm=(10.0,),
                          bits_per_trial=120, trials_per_point=2,
                          master_seed=3, link=link)
        rep = sweep(cfg)
        assert rep.points[0].invalid_trials == 2
        assert rep.points[0].bits == 240  # still counted, not dropped
