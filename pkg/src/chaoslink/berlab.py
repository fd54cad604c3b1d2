"""Monte Carlo BER harness: Eb/N0 x noise-power sweeps and reports.

Every grid cell and trial is seeded deterministically from the master seed
and its own coordinates, so results are bit-identical however the work is
scheduled.  The CSV report carries a config-echo header block and one row
per cell, sorted by (noise_dbm, ebn0_db).
"""

from __future__ import annotations

import concurrent.futures
import io
from dataclasses import dataclass, field

import numpy as np

from .channel import mix_seed, make_rng
from .link import LinkConfig, LinkSession

__all__ = [
    "SweepConfig",
    "BerPoint",
    "BerReport",
    "compute_ber",
    "run_trial",
    "sweep",
    "write_report",
    "read_report",
    "plot_report",
    "CSV_HEADER",
]

CSV_HEADER = "ebn0_db,noise_dbm,bits,errors,ber,invalid_trials,binding_constraint"


@dataclass(frozen=True)
class SweepConfig:
    """Sweep grid and trial sizing."""

    ebn0_grid_db: tuple = tuple(float(v) for v in range(0, 36))
    noise_powers_dbm: tuple = (10.0, 20.0, 30.0, 40.0)
    bits_per_trial: int = 2000
    trials_per_point: int = 1
    master_seed: int = 5
    link: LinkConfig = field(default_factory=LinkConfig)
    workers: int = 1

    def __post_init__(self):
        if not self.ebn0_grid_db or not self.noise_powers_dbm:
            raise ValueError("sweep grids must be nonempty")
        if self.bits_per_trial < 100:
            raise ValueError("bits_per_trial must be >= 100")
        if self.trials_per_point < 1:
            raise ValueError("trials_per_point must be >= 1")


@dataclass(frozen=True)
class BerPoint:
    """One grid cell's pooled Monte Carlo outcome."""

    ebn0_db: float
    noise_dbm: float
    bits: int
    errors: int
    invalid_trials: int
    binding_constraint: str

    @property
    def ber(self) -> float:
        return compute_ber(self.errors, self.bits)


@dataclass
class BerReport:
    points: list
    config_echo: dict

    def curve(self, noise_dbm: float):
        pts = sorted((p for p in self.points if p.noise_dbm == noise_dbm),
                     key=lambda p: p.ebn0_db)
        return pts


def compute_ber(errors: int, bits: int) -> float:
    """Exact error ratio; zero received bits is a caller bug."""
    if bits <= 0:
        raise ValueError("BER requires a positive number of received bits")
    if errors < 0 or errors > bits:
        raise ValueError(f"errors={errors} outside [0, bits={bits}]")
    return errors / bits


def trial_seed(master_seed: int, ebn0_db: float, noise_dbm: float,
               trial_index: int) -> int:
    """Deterministic 64-bit per-trial seed (SplitMix64 chain over the
    master seed, cell coordinates, and trial index)."""
    return mix_seed(master_seed, ebn0_db, noise_dbm, trial_index)


def run_trial(session: LinkSession, ebn0_db: float, noise_dbm: float,
              trial_index: int, bits_per_trial: int, master_seed: int):
    """One end-to-end trial; returns (errors, bits, valid)."""
    seed = trial_seed(master_seed, ebn0_db, noise_dbm, trial_index)
    message = make_rng(mix_seed(seed, 0x6D7367)).integers(
        0, 2, bits_per_trial).astype(np.int64)
    noise = session.noise_model(ebn0_db, noise_dbm, mix_seed(seed, 0x6E7A))
    res = session.run_bits(message, noise=noise)
    binding = "ideal" if noise.sigma == 0.0 else noise.binding
    return res.errors, res.bits, res.valid, binding


def _eval_cell(cfg: SweepConfig, session: LinkSession, ebn0_db: float,
               noise_dbm: float) -> BerPoint:
    errors = 0
    bits = 0
    invalid = 0
    binding = "ideal"
    for t in range(cfg.trials_per_point):
        e, b, valid, binding = run_trial(
            session, ebn0_db, noise_dbm, t, cfg.bits_per_trial,
            cfg.master_seed)
        if not valid:
            invalid += 1
        errors += e
        bits += b
    return BerPoint(ebn0_db=ebn0_db, noise_dbm=noise_dbm, bits=bits,
                    errors=errors, invalid_trials=invalid,
                    binding_constraint=binding)


def _eval_cells(cfg: SweepConfig, cells) -> list:
    session = LinkSession(cfg.link)
    session.calibrate()
    return [_eval_cell(cfg, session, e, d) for (e, d) in cells]


def sweep(cfg: SweepConfig) -> BerReport:
    """Evaluate the full grid; results do not depend on worker count."""
    cells = [(float(e), float(d)) for d in cfg.noise_powers_dbm
             for e in cfg.ebn0_grid_db]
    if cfg.workers <= 1:
        points = _eval_cells(cfg, cells)
    else:
        chunks = [cells[i::cfg.workers] for i in range(cfg.workers)]
        with concurrent.futures.ProcessPoolExecutor(cfg.workers) as pool:
            results = list(pool.map(_eval_cells, [cfg] * len(chunks), chunks))
        by_cell = {}
        for chunk, res in zip(chunks, results):
            for cell, point in zip(chunk, res):
                by_cell[cell] = point
        points = [by_cell[c] for c in cells]
    points.sort(key=lambda p: (p.noise_dbm, p.ebn0_db))
    session = LinkSession(cfg.link)
    from . import __version__
    echo = dict(cfg.link.echo())
    echo.update({
        "version": __version__,
        "master_seed": cfg.master_seed,
        "bits_per_trial": cfg.bits_per_trial,
        "trials_per_point": cfg.trials_per_point,
        "delay_steps": session.calibrate().delay_steps,
        "settle_steps": session.calibrate().settle_steps,
        "signal_power": repr(session.signal_power()),
    })
    return BerReport(points=points, config_echo=echo)


def write_report(report: BerReport, path) -> None:
    """CSV with a config-echo comment block; exact round-trip format."""
    buf = io.StringIO()
    for k in sorted(report.config_echo):
        buf.write(f"# {k} = {report.config_echo[k]}\n")
    buf.write(CSV_HEADER + "\n")
    for p in report.points:
        buf.write(f"{p.ebn0_db!r},{p.noise_dbm!r},{p.bits},{p.errors},"
                  f"{p.ber!r},{p.invalid_trials},{p.binding_constraint}\n")
    data = buf.getvalue()
    try:
        with open(path, "w", encoding="ascii", newline="\n") as f:
            f.write(data)
    except OSError as exc:
        raise OSError(f"cannot write BER report to {path}: {exc}") from exc


def read_report(path) -> BerReport:
    """Parse a report written by write_report (exact values)."""
    echo = {}
    points = []
    with open(path, "r", encoding="ascii") as f:
        header_seen = False
        for line in f:
            line = line.rstrip("\n")
            if line.startswith("#"):
                k, _, v = line[1:].partition("=")
                echo[k.strip()] = v.strip()
                continue
            if not header_seen:
                if line != CSV_HEADER:
                    raise ValueError(f"unexpected CSV header: {line!r}")
                header_seen = True
                continue
            if not line:
                continue
            e, d, b, er, _ber, inv, binding = line.split(",")
            points.append(BerPoint(
                ebn0_db=float(e), noise_dbm=float(d), bits=int(b),
                errors=int(er), invalid_trials=int(inv),
                binding_constraint=binding))
    return BerReport(points=points, config_echo=echo)


def plot_report(report: BerReport, path) -> bool:
    """Best-effort BER-vs-Eb/N0 plot (SVG, deterministic bytes).

    Returns False when plotting is unavailable; never raises.
    """
    try:
        import matplotlib
        matplotlib.use("Agg")
        import matplotlib.pyplot as plt
        plt.rcParams["svg.hashsalt"] = "chaoslink"
        fig, ax = plt.subplots(figsize=(7, 5))
        floor = None
        for p in report.points:
            if p.ber > 0:
                floor = p.ber if floor is None else min(floor, p.ber)
        floor = (floor or 1e-4) / 2
        for dbm in sorted({p.noise_dbm for p in report.points}):
            pts = report.curve(dbm)
            xs = [p.ebn0_db for p in pts]
            ys = [max(p.ber, floor) for p in pts]
            ax.semilogy(xs, ys, marker="o", markersize=3,
                        label=f"{dbm:g} dBm")
        ax.set_xlabel("Eb/N0 (dB)")
        ax.set_ylabel("BER (floor-clipped for log axis)")
        ax.grid(True, which="both", ls=":")
        ax.legend(title="noise power")
        fig.savefig(path, format="svg", metadata={"Date": None})
        plt.close(fig)
        return True
    except Exception:
        return False
