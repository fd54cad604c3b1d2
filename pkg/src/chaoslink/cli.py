"""Command-line front end.

Commands: sync, bits, txbits, txwave, bersweep.  Settings resolve in three
layers: built-in defaults, then a key = value config file, then flags.
Every output file embeds the resolved configuration.  Exit codes: 0 success,
1 usage error, 2 unsettled or invalid experiment, 3 I/O error.
"""

from __future__ import annotations

import argparse
import math
import sys

import numpy as np

from . import __version__
from .adaptsync import NOT_SETTLED, settling_time
from .berlab import SweepConfig, plot_report, sweep, write_report
from .channel import mix_seed
from .dynamics import simulate_fixed
from .fxp import FxpFormat, to_bitword
from .link import LinkConfig, LinkSession, random_bits

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_INVALID = 2
EXIT_IO = 3

CONFIG_KEYS = {
    "scale": int,
    "word_bits": int,
    "step_size": float,
    "system_rate_hz": float,
    "bit_rate_hz": float,
    "mask_amplitude": float,
    "a_threshold": float,
    "detector_alpha": float,
    "detector_lag": int,
    "detector_refractory": int,
    "detector_rearm": float,
    "watchdog_bits": int,
    "watchdog_margin": float,
    "smoother_alpha": float,
    "settle_tol_counts": int,
    "seed": int,
    "steps": int,
    "bits": int,
    "trials": int,
    "ebn0_db": float,
    "noise_dbm": float,
    "component": str,
    "freq_hz": float,
    "amplitude": float,
    "resolution_bits": int,
    "rate_hz": float,
}


class UsageError(Exception):
    pass


def parse_config_file(path) -> dict:
    """Flat `key = value` document; '#' starts a comment."""
    out = {}
    try:
        with open(path, "r", encoding="utf-8") as f:
            for ln, line in enumerate(f, start=1):
                line = line.split("#", 1)[0].strip()
                if not line:
                    continue
                if "=" not in line:
                    raise UsageError(f"{path}:{ln}: expected key = value")
                k, _, v = line.partition("=")
                k = k.strip()
                if k not in CONFIG_KEYS:
                    raise UsageError(f"{path}:{ln}: unknown key {k!r}")
                try:
                    out[k] = CONFIG_KEYS[k](v.strip())
                except ValueError as exc:
                    raise UsageError(f"{path}:{ln}: bad value for {k}: {exc}")
    except OSError as exc:
        raise UsageError(f"cannot read config {path}: {exc}")
    return out


def resolve(args, file_cfg: dict, key: str, default):
    """Flag > file > default."""
    flag = getattr(args, key, None)
    if flag is not None:
        return flag
    if key in file_cfg:
        return file_cfg[key]
    return default


def build_link(args, fc: dict) -> LinkConfig:
    from .dynamics import IntegratorConfig
    fmt = FxpFormat(word_bits=resolve(args, fc, "word_bits", 16),
                    scale=resolve(args, fc, "scale", 3107))
    integ = IntegratorConfig(
        h=resolve(args, fc, "step_size", 0.001),
        system_rate_hz=resolve(args, fc, "system_rate_hz", 450e6))
    return LinkConfig(
        fmt=fmt, integ=integ,
        bit_rate_hz=resolve(args, fc, "bit_rate_hz", 1e6),
        mask_amplitude=resolve(args, fc, "mask_amplitude", 1.4),
        settle_tol_counts=resolve(args, fc, "settle_tol_counts", 10),
        a_threshold=resolve(args, fc, "a_threshold", 0.5),
        detector_rearm=resolve(args, fc, "detector_rearm", 0.375),
        detector_alpha=resolve(args, fc, "detector_alpha", 0.06),
        detector_lag=resolve(args, fc, "detector_lag", 100),
        detector_refractory=resolve(args, fc, "detector_refractory", 250),
        watchdog_bits=resolve(args, fc, "watchdog_bits", 6),
        watchdog_margin=resolve(args, fc, "watchdog_margin", 0.3),
        smoother_alpha=resolve(args, fc, "smoother_alpha", 0.01),
    )


def echo_lines(link: LinkConfig, extra: dict):
    d = dict(link.echo())
    d["version"] = __version__
    d.update(extra)
    return [f"{k} = {d[k]}" for k in sorted(d)]


def write_text(path, lines) -> None:
    try:
        with open(path, "w", encoding="ascii", newline="\n") as f:
            for line in lines:
                f.write(line + "\n")
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc}") from exc


def cmd_sync(args, fc) -> int:
    link = build_link(args, fc)
    steps = resolve(args, fc, "steps", 200_000)
    session = LinkSession(link)
    out = args.out or "sync_error.csv"
    header = echo_lines(link, {"command": "sync", "steps": steps})
    if steps == 0:
        write_text(out, [f"# {h}" for h in header] + ["step,e1,e2,e3"])
        print("steps = 0; header-only trace written")
        return EXIT_OK
    mask = np.zeros(steps, dtype=np.int64)
    _, err, _, _, _, sat, _ = session._run_kernel(
        steps, train_steps=steps, mask_raw=mask, sigma=0.0, noise_seed=0,
        record_err=True)
    settle = settling_time(err, link.settle_tol_counts)
    lines = [f"# {h}" for h in header]
    lines.append(f"# settle_steps = {settle}")
    lines.append("step,e1,e2,e3")
    for i in range(steps):
        lines.append(f"{i},{err[i,0]},{err[i,1]},{err[i,2]}")
    write_text(out, lines)
    if settle == NOT_SETTLED:
        print(f"loop did not settle within {steps} steps "
              f"(tolerance {link.settle_tol_counts} counts)")
        return EXIT_INVALID
    tail = np.abs(err[settle:]).max() if settle < steps else 0
    print(f"settled at step {settle}; max |e| afterwards {tail} counts; "
          f"saturation events {int(sat.sum())}; trace in {out}")
    return EXIT_OK


def cmd_bits(args, fc) -> int:
    link = build_link(args, fc)
    steps = resolve(args, fc, "steps", 64)
    comp = resolve(args, fc, "component", "x")
    if comp not in ("x", "y", "z"):
        raise UsageError(f"component must be x, y, or z, got {comp!r}")
    idx = "xyz".index(comp)
    traj = simulate_fixed(link.tx0, link.dynamics, link.integ, max(steps - 1, 0),
                          link.fmt)
    words = [to_bitword(int(v), link.fmt) for v in traj[:steps, idx]]
    out = args.out or f"bits_{comp}.txt"
    header = echo_lines(link, {"command": "bits", "component": comp,
                               "steps": steps})
    write_text(out, [f"# {h}" for h in header] + words)
    print(f"{len(words)} bit words of component {comp} written to {out}")
    return EXIT_OK


def cmd_txbits(args, fc) -> int:
    link = build_link(args, fc)
    n_bits = resolve(args, fc, "bits", 2000)
    seed = resolve(args, fc, "seed", 1)
    ebn0 = resolve(args, fc, "ebn0_db", None)
    dbm = resolve(args, fc, "noise_dbm", None)
    if args.message is not None:
        if not args.message or any(ch not in "01" for ch in args.message):
            raise UsageError("message must be a nonempty string of 0/1")
        bits = np.array([int(ch) for ch in args.message], dtype=np.int64)
    else:
        if n_bits <= 0:
            raise UsageError("bit count must be positive")
        bits = random_bits(n_bits, seed)
    session = LinkSession(link)
    noise = None
    if ebn0 is not None or dbm is not None:
        noise = session.noise_model(
            ebn0 if ebn0 is not None else math.inf,
            dbm if dbm is not None else math.inf,
            mix_seed(seed, 0xA11CE))
    res = session.run_bits(bits, noise=noise)
    out = args.out or "recovered_bits.txt"
    header = echo_lines(link, {
        "command": "txbits", "seed": seed,
        "ebn0_db": "ideal" if ebn0 is None else ebn0,
        "noise_dbm": "ideal" if dbm is None else dbm,
        "noise_sigma": res.noise.sigma,
        "binding_constraint": res.noise.binding,
        "delay_steps": res.delay_steps,
        "valid": res.valid,
    })
    write_text(out, [f"# {h}" for h in header]
               + ["".join(str(int(b)) for b in res.recovered)])
    print(f"errors/bits/ber: {res.errors}/{res.bits}/{res.ber:.6g}")
    print(f"recovered bits in {out}")
    if not res.valid:
        print("experiment invalid: detector delay shorter than settling")
        return EXIT_INVALID
    return EXIT_OK


def cmd_txwave(args, fc) -> int:
    link = build_link(args, fc)
    freq = resolve(args, fc, "freq_hz", 50e3)
    amp = resolve(args, fc, "amplitude", 0.5)
    res_bits = resolve(args, fc, "resolution_bits", 16)
    rate = resolve(args, fc, "rate_hz", 450e6)
    session = LinkSession(link)
    info = session.make_sine(freq, amp, res_bits, rate)
    res = session.run_waveform(info)
    out = args.out or "waveform.csv"
    header = echo_lines(link, {
        "command": "txwave", "freq_hz": freq, "amplitude": amp,
        "resolution_bits": res_bits, "rate_hz": rate,
        "gain": res.gain, "lag": res.lag,
        "rms_error": res.rms_error, "correlation": res.correlation,
    })
    lines = [f"# {h}" for h in header]
    lines.append("step,recovered,original")
    for i in range(len(res.recovered)):
        lines.append(f"{i},{float(res.recovered[i])!r},{float(res.original[i])!r}")
    write_text(out, lines)
    print(f"rms error {res.rms_error:.6g}, correlation {res.correlation:.4f}; "
          f"waveform in {out}")
    return EXIT_OK


def cmd_bersweep(args, fc) -> int:
    link = build_link(args, fc)
    seed = resolve(args, fc, "seed", 5)
    bits = resolve(args, fc, "bits", 2000)
    trials = resolve(args, fc, "trials", 1)
    cfg = SweepConfig(
        bits_per_trial=bits, trials_per_point=trials, master_seed=seed,
        link=link, workers=args.workers or 1)
    report = sweep(cfg)
    out = args.out or "ber_report.csv"
    write_report(report, out)
    plotted = plot_report(report, out.rsplit(".", 1)[0] + ".svg")
    zeros = {d: next((p.ebn0_db for p in report.curve(d) if p.ber == 0.0), None)
             for d in cfg.noise_powers_dbm}
    print(f"{len(report.points)} grid points written to {out}"
          + (" (plot alongside)" if plotted else " (plotting unavailable)"))
    for d, z in sorted(zeros.items()):
        print(f"  {d:g} dBm: first zero-BER point at "
              + (f"{z:g} dB" if z is not None else "none"))
    return EXIT_OK


def make_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="chaoslink",
        description="Bit-accurate chaos-masked communication link simulator")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="key = value settings file")
        sp.add_argument("--seed", type=int, help="master seed")
        sp.add_argument("--steps", type=int, help="simulation steps")
        sp.add_argument("--out", help="output path")

    s = sub.add_parser("sync", help="unmodulated closed loop, error trace")
    common(s)
    s = sub.add_parser("bits", help="per-sample bit words of a state component")
    common(s)
    s.add_argument("--component", choices=("x", "y", "z"))
    s = sub.add_parser("txbits", help="end-to-end single bitstream trial")
    common(s)
    s.add_argument("--bits", type=int, help="message length")
    s.add_argument("--message", help="explicit 0/1 message string")
    s.add_argument("--ebn0-db", dest="ebn0_db", type=float)
    s.add_argument("--noise-dbm", dest="noise_dbm", type=float)
    s = sub.add_parser("txwave", help="end-to-end waveform transmission")
    common(s)
    s.add_argument("--freq-hz", dest="freq_hz", type=float)
    s.add_argument("--amplitude", type=float)
    s.add_argument("--resolution-bits", dest="resolution_bits", type=int)
    s.add_argument("--rate-hz", dest="rate_hz", type=float)
    s = sub.add_parser("bersweep", help="Monte Carlo BER sweep and report")
    common(s)
    s.add_argument("--bits", type=int, help="bits per trial")
    s.add_argument("--trials", type=int, help="trials per grid point")
    s.add_argument("--workers", type=int, help="parallel workers")
    return p


COMMANDS = {
    "sync": cmd_sync,
    "bits": cmd_bits,
    "txbits": cmd_txbits,
    "txwave": cmd_txwave,
    "bersweep": cmd_bersweep,
}


def main(argv=None) -> int:
    parser = make_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    try:
        fc = parse_config_file(args.config) if args.config else {}
        return COMMANDS[args.command](args, fc)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (ValueError, RuntimeError) as exc:
        print(f"invalid experiment: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
