"""Command-line entry point: ``raptarkit <subcommand>``.

Exit codes: 0 success, 1 configuration or validation error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import logging
import signal
import sys
from pathlib import Path

from . import __version__
from .acquisition import AnalyzerClient, ConnectionLost, RealClock, SimClock, run_scan
from .analyzer import AnalyzerServer, expected_reading, serve_in_thread
from .calibration import calibrate, write_offset
from .config import ConfigError, ScanConfig, load_config
from .metrics import (
    KeyMismatch, PatternGrid, compare, coverage, format_repeatability, repeatability, write_point_errors,
)
from .planner import benchmark_scan
from .scanlog import CorruptLog, IoError, read_log
from .se3 import EmptyGrid, SphericalCoord, final_pose

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2

log = logging.getLogger("raptarkit")


def _global_flags(p: argparse.ArgumentParser, suppress: bool) -> None:
    d = argparse.SUPPRESS if suppress else None
    p.add_argument("--config", default=d, help="scan configuration file (INI)")
    p.add_argument("--seed", type=int, default=d, help="random seed (planner, analyzer noise, calibration)")
    p.add_argument("--resume", action="store_true", default=argparse.SUPPRESS if suppress else False,
                   help="continue an existing scan log, skipping logged indices")
    p.add_argument("--real-clock", action="store_true", default=argparse.SUPPRESS if suppress else False,
                   help="dwell in real time instead of on the simulated clock")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="raptarkit", description="Robotic antenna pattern scan toolkit")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    _global_flags(ap, suppress=False)
    sub = ap.add_subparsers(dest="command", required=True)

    def add(name, help_):
        p = sub.add_parser(name, help=help_)
        _global_flags(p, suppress=True)
        return p

    p = add("grid", "list scan points with their Cartesian probe targets")
    p.add_argument("--out", help="write the listing to a file instead of stdout")
    p.add_argument("--header", action="store_true", help="prefix a column header line")

    p = add("serve-analyzer", "run the spectrum-analyzer emulator")
    p.add_argument("--host", help="bind address (default from config)")
    p.add_argument("--port", type=int, help="TCP port (default from config, 5025)")
    p.add_argument("--quiet", action="store_true", help="do not log each command")

    p = add("scan", "run a full scan against the analyzer and compare to the pattern model")
    p.add_argument("--log", help="scan log path (default from config)")
    p.add_argument("--report-dir", help="directory for reports (default from config)")
    p.add_argument("--local-analyzer", action="store_true", help="start an in-process analyzer on a free port")
    p.add_argument("--plots", action="store_true", help="also render a cut-plot PNG")

    p = add("bench", "benchmark the planner over the configured grid")
    p.add_argument("--seeds", help="comma-separated seed list (default: config, else --seed)")
    p.add_argument("--out", help="write the report to a file")
    p.add_argument("--no-timing", action="store_true", help="omit wall-clock columns")

    p = add("metrics", "compare logged scans to a reference")
    p.add_argument("logs", nargs="+", help="scan log(s); with several, repeatability is reported too")
    p.add_argument("--reference", help="reference scan log (default: the configured pattern model)")
    p.add_argument("--report-dir", help="directory for reports (default from config)")
    p.add_argument("--plots", action="store_true", help="also render a cut-plot PNG")

    p = add("calibrate", "simulate a dial-gauge session and fit the bracket offset")
    p.add_argument("--out", help="offset file to write (default from config)")
    p.add_argument("--points", type=int, help="number of probe points")
    p.add_argument("--noise-mm", type=float, help="gauge noise sigma in mm")
    return ap


def _config(args) -> ScanConfig:
    cfg = load_config(args.config)
    over = {}
    if args.seed is not None:
        over["seed"] = args.seed
    if args.real_clock:
        over["real_clock"] = True
    return cfg.with_overrides(**over) if over else cfg


def cmd_grid(cfg: ScanConfig, args) -> int:
    grid = cfg.grid.build()
    arm, scene = cfg.load_arm(), cfg.load_scene()
    base = cfg.base(scene, arm)
    lines = ["index,phi_deg,theta_deg,radius_m,x_m,y_m,z_m"] if args.header else []
    for i, c in enumerate(grid):
        x, y, z = final_pose(base, c, cfg.offset).translation
        lines.append(f"{i},{c.phi:g},{c.theta:g},{c.r:g},{x:.6f},{y:.6f},{z:.6f}")
    text = "\n".join(lines) + "\n"
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_serve_analyzer(cfg: ScanConfig, args) -> int:
    host = args.host or cfg.host
    port = cfg.port if args.port is None else args.port
    try:
        srv = AnalyzerServer(cfg.pattern, host, port, cfg.seed, verbose=not args.quiet)
    except OSError as exc:
        print(f"error: cannot bind {host}:{port}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME

    def stop(signum, frame):
        raise KeyboardInterrupt

    signal.signal(signal.SIGTERM, stop)
    h, p = srv.address
    print(f"analyzer listening on {h}:{p}", flush=True)
    try:
        srv.serve_forever(poll_interval=0.1)
    except KeyboardInterrupt:
        pass
    finally:
        srv.server_close()
    print("analyzer stopped", flush=True)
    return EXIT_OK


def _reference_for(cfg: ScanConfig, measured: PatternGrid) -> PatternGrid:
    return PatternGrid.from_items(
        (k, expected_reading(cfg.pattern, SphericalCoord(*k))) for k in measured.keys
    )


def _write_reports(cfg, out_dir: Path, measured: PatternGrid, reference: PatternGrid, cov: float, plots: bool):
    out_dir.mkdir(parents=True, exist_ok=True)
    rep = compare(measured, reference, cov)
    (out_dir / "metrics.txt").write_text(rep.to_text())
    (out_dir / "metrics.kv").write_text(rep.to_keyvalue())
    write_point_errors(out_dir / "points.csv", measured, reference)
    if plots:
        from .plotting import render_cuts

        render_cuts(out_dir / "points.csv", out_dir / "cuts.png")
    return rep


def cmd_scan(cfg: ScanConfig, args) -> int:
    grid = cfg.grid.build()
    arm, scene = cfg.load_arm(), cfg.load_scene()
    log_path = Path(args.log) if args.log else cfg.log_path
    out_dir = Path(args.report_dir) if args.report_dir else cfg.report_dir
    server = None
    if args.local_analyzer:
        server = serve_in_thread(cfg.pattern, "127.0.0.1", 0, cfg.seed)
        host, port = server.address
    else:
        host, port = cfg.host, cfg.port
    clock = RealClock() if cfg.real_clock else SimClock()
    try:
        try:
            conn = AnalyzerClient(host, port)
        except ConnectionLost as exc:
            print(f"coverage_pct: 0.00\nerror: ConnectionLost: {exc}", file=sys.stdout)
            return EXIT_RUNTIME
        with conn:
            scan_log, summary = run_scan(
                scene, arm, grid, conn, log_path, cfg.dwell, cfg.seed,
                base=cfg.base(scene, arm), offset=cfg.offset, sweeps_per_dwell=cfg.sweeps_per_dwell,
                max_retries=cfg.max_retries, max_recoveries=cfg.max_recoveries, nu_max=cfg.nu_max,
                clock=clock, resume=args.resume,
                metadata={"pattern": repr(cfg.pattern)},
            )
    finally:
        if server is not None:
            server.shutdown()
            server.server_close()
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "summary.txt").write_text(summary.to_text())
    sys.stdout.write(summary.to_text())
    if summary.acquired >= 2:
        # metrics come from the file as written, so a later `metrics` run matches exactly
        measured = PatternGrid.from_log(read_log(log_path))
        rep = _write_reports(cfg, out_dir, measured, _reference_for(cfg, measured), summary.coverage,
                             args.plots or cfg.plots)
        sys.stdout.write(rep.to_text())
    return EXIT_OK if summary.coverage == 100.0 and not summary.error else EXIT_RUNTIME


def cmd_bench(cfg: ScanConfig, args) -> int:
    if args.seeds:
        seeds = tuple(int(s) for s in args.seeds.split(",") if s.strip())
    else:
        seeds = cfg.bench_seeds or (cfg.seed,)
    try:
        grid = cfg.grid.build()
    except EmptyGrid:
        grid = None
    arm, scene = cfg.load_arm(), cfg.load_scene()
    rep = benchmark_scan(scene, arm, grid, seeds, base=cfg.base(scene, arm), offset=cfg.offset,
                         max_recoveries=cfg.max_recoveries, nu_max=cfg.nu_max)
    text = rep.to_text(timing=not args.no_timing)
    if args.out:
        Path(args.out).write_text(text)
    sys.stdout.write(text)
    return EXIT_OK if rep.failures == 0 else EXIT_RUNTIME


def cmd_metrics(cfg: ScanConfig, args) -> int:
    out_dir = Path(args.report_dir) if args.report_dir else cfg.report_dir
    logs = [read_log(p) for p in args.logs]
    measured = PatternGrid.from_log(logs[0])
    if args.reference:
        reference = PatternGrid.from_log(read_log(args.reference))
        measured.aligned(reference)  # raises KeyMismatch early
    else:
        reference = _reference_for(cfg, measured)
    cov = coverage(logs[0], cfg.grid.build())
    rep = _write_reports(cfg, out_dir, measured, reference, cov, args.plots or cfg.plots)
    sys.stdout.write(rep.to_text())
    if len(logs) > 1:
        text = format_repeatability(repeatability([PatternGrid.from_log(lg) for lg in logs]))
        (out_dir / "repeatability.kv").write_text(text)
        sys.stdout.write(text)
    return EXIT_OK


def cmd_calibrate(cfg: ScanConfig, args) -> int:
    n = args.points or cfg.calib_points
    sigma = cfg.calib_noise if args.noise_mm is None else args.noise_mm * 1e-3
    est, rms = calibrate(cfg.offset, n, sigma, cfg.seed)
    out = Path(args.out) if args.out else cfg.calib_output
    write_offset(out, est, rms)
    print(f"points: {n}\nnoise_sigma_mm: {sigma * 1e3:g}\nrms_residual_mm: {rms * 1e3:.4f}\noffset_file: {out}")
    return EXIT_OK


COMMANDS = {
    "grid": cmd_grid,
    "serve-analyzer": cmd_serve_analyzer,
    "scan": cmd_scan,
    "bench": cmd_bench,
    "metrics": cmd_metrics,
    "calibrate": cmd_calibrate,
}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s", stream=sys.stderr)
    try:
        cfg = _config(args)
        return COMMANDS[args.command](cfg, args)
    except (ConfigError, KeyMismatch, CorruptLog, EmptyGrid) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (IoError, OSError, RuntimeError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
