"""Measurement loop: position the probe, dwell, read the analyzer, log atomically."""

from __future__ import annotations

import datetime as dt
import hashlib
import socket
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .analyzer import CENTER_BIN, TRACE_POINTS
from .arm import ArmDescription
from .planner import NU_MAX, MAX_RECOVERIES, Status, Trajectory, plan_pose, pose_seed
from .scanlog import (
    VALID_RANGE_DBM, IoError, ScanLog, ScanSample, append_atomic, append_note, read_log,
)
from .scene import Scene
from .se3 import BracketOffset, RigidTransform, ScanGrid, SphericalCoord, final_pose

DEFAULT_DWELL = 20.0  # s; 18 s stabilisation plus planning buffer, rounded as in the cycle time
SWEEPS_PER_DWELL = 10
MAX_RETRIES = 3
SIM_EPOCH = dt.datetime(2024, 1, 1, tzinfo=dt.timezone.utc)

__all__ = [
    "AnalyzerClient", "ConnectionLost", "ProtocolError", "ValidationExhausted", "IoError",
    "SimClock", "RealClock", "acquire_point", "run_scan", "ScanSummary", "append_atomic", "read_log",
]


class AcquisitionError(RuntimeError):
    pass


class ValidationExhausted(AcquisitionError):
    pass


class ProtocolError(AcquisitionError):
    pass


class ConnectionLost(AcquisitionError):
    pass


class SimClock:
    """Deterministic clock: ``sleep`` only advances a counter."""

    real = False

    def __init__(self, start: dt.datetime = SIM_EPOCH):
        self.start = start
        self.elapsed = 0.0

    def sleep(self, seconds: float) -> None:
        self.elapsed += max(0.0, seconds)

    def advance(self, seconds: float) -> None:
        self.sleep(seconds)

    def now(self) -> float:
        return self.elapsed

    def timestamp(self) -> str:
        return (self.start + dt.timedelta(seconds=self.elapsed)).isoformat(timespec="milliseconds")


class RealClock:
    real = True

    def __init__(self):
        self._t0 = time.monotonic()

    def sleep(self, seconds: float) -> None:
        if seconds > 0:
            time.sleep(seconds)

    def advance(self, seconds: float) -> None:
        # execution and planning already consumed real time
        pass

    def now(self) -> float:
        return time.monotonic() - self._t0

    def timestamp(self) -> str:
        return dt.datetime.now(dt.timezone.utc).isoformat(timespec="milliseconds")


class AnalyzerClient:
    """Line-oriented TCP session with the analyzer."""

    def __init__(self, host: str = "127.0.0.1", port: int = 5025, timeout: float = 10.0):
        self.address = (host, port)
        try:
            self.sock = socket.create_connection(self.address, timeout=timeout)
        except OSError as exc:
            raise ConnectionLost(f"cannot connect to analyzer at {host}:{port}: {exc}") from exc
        self.sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        self._buf = b""

    def close(self) -> None:
        try:
            self.sock.close()
        except OSError:
            pass

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def send(self, line: str) -> None:
        try:
            self.sock.sendall(line.encode("ascii") + b"\n")
        except OSError as exc:
            raise ConnectionLost(str(exc)) from exc

    def readline(self) -> str:
        while b"\n" not in self._buf:
            try:
                chunk = self.sock.recv(65536)
            except OSError as exc:
                raise ConnectionLost(str(exc)) from exc
            if not chunk:
                raise ConnectionLost("analyzer closed the connection")
            self._buf += chunk
        line, _, self._buf = self._buf.partition(b"\n")
        return line.decode("ascii", errors="replace")

    def query(self, line: str) -> str:
        self.send(line)
        reply = self.readline()
        if reply.startswith("ERR"):
            raise ProtocolError(f"{line!r} -> {reply}")
        return reply

    def command(self, line: str) -> None:
        """Send a command and confirm it was accepted (commands are silent, so sync with *IDN?)."""
        self.send(line)
        reply = self.query("*IDN?")
        if reply.startswith("ERR"):
            raise ProtocolError(f"{line!r} -> {reply}")


def parse_trace(reply: str) -> tuple[np.ndarray, np.ndarray]:
    try:
        vals = np.array([float(v) for v in reply.split(",")])
    except ValueError as exc:
        raise ProtocolError(f"malformed trace: {exc}") from exc
    if len(vals) != 2 * TRACE_POINTS:
        raise ProtocolError(f"trace has {len(vals) // 2} bins, expected {TRACE_POINTS}")
    return vals[0::2], vals[1::2]


def configure(conn: AnalyzerClient, center_freq: float = 60e9, span: float = 2e9) -> None:
    conn.send(f":FREQ:CENT {center_freq:.6e}")
    conn.send(f":FREQ:SPAN {span:.6e}")
    idn = conn.query("*IDN?")
    if not idn:
        raise ProtocolError("empty identity reply")


def acquire_point(
    conn: AnalyzerClient,
    c: SphericalCoord,
    dwell: float = DEFAULT_DWELL,
    sweeps_per_dwell: int = SWEEPS_PER_DWELL,
    max_retries: int = MAX_RETRIES,
    clock=None,
    index: int = 0,
) -> ScanSample:
    """Reset max-hold, dwell while sweeping, then read the centre bin.

    Out-of-range readings are retried up to ``max_retries`` more times.
    """
    if dwell < 0:
        raise ValueError("dwell must be non-negative")
    if sweeps_per_dwell < 1:
        raise ValueError("sweeps_per_dwell must be >= 1")
    clock = clock or SimClock()
    lo, hi = VALID_RANGE_DBM
    conn.send(f":SYST:PROBe {c.phi!r},{c.theta!r},{c.r!r}")
    last = float("nan")
    for attempt in range(1, max_retries + 2):
        conn.send(":INIT:REST")
        conn.send(":TRAC1:TYPE MAXH")
        for _ in range(sweeps_per_dwell):
            clock.sleep(dwell / sweeps_per_dwell)
            conn.send(":SWE:IMM")
        conn.send(":FETCh:SAN1?")
        reply = conn.readline()
        if reply.startswith("ERR"):
            raise ProtocolError(f"fetch failed: {reply}")
        _, power = parse_trace(reply)
        last = float(power[CENTER_BIN])
        if lo < last < hi:
            return ScanSample(clock.timestamp(), index, c.phi, c.theta, c.r, last, attempt)
    raise ValidationExhausted(f"reading {last} dBm out of range after {max_retries + 1} attempts")


@dataclass
class ScanSummary:
    total: int
    acquired: int
    coverage: float
    failures: list[tuple[int, str]] = field(default_factory=list)
    recovered: int = 0
    retried: list[int] = field(default_factory=list)
    wall_time: float = 0.0  # clock seconds (simulated unless real-clock mode)
    planning_time: float = 0.0
    execution_time: float = 0.0
    dwell_time: float = 0.0
    error: str = ""
    note: str = ""
    trajectories: list[Trajectory] = field(default_factory=list, repr=False)

    @property
    def per_point_time(self) -> float:
        n = max(self.acquired, 1)
        return (self.dwell_time + self.planning_time + self.execution_time) / n

    def to_text(self) -> str:
        lines = [
            f"points: {self.total}",
            f"acquired: {self.acquired}",
            f"coverage_pct: {self.coverage:.2f}",
            f"recovered_plans: {self.recovered}",
            f"end_of_scan_retries: {len(self.retried)}",
            f"failures: {len(self.failures)}",
            f"dwell_s: {self.dwell_time:.3f}",
            f"planning_s: {self.planning_time:.3f}",
            f"execution_s: {self.execution_time:.3f}",
            f"per_point_s: {self.per_point_time:.3f}",
            f"wall_time_s: {self.wall_time:.3f}",
        ]
        lines += [f"failure: index={i} {why}" for i, why in self.failures]
        if self.error:
            lines.append(f"error: {self.error}")
        if self.note:
            lines.append(f"note: {self.note}")
        return "\n".join(lines) + "\n"


def grid_digest(grid: ScanGrid) -> str:
    h = hashlib.sha256()
    for c in grid:
        h.update(repr(c.key).encode())
    return h.hexdigest()[:16]


def run_scan(
    scene: Scene,
    arm: ArmDescription,
    grid: ScanGrid,
    conn: AnalyzerClient,
    log_path: str | Path,
    dwell: float = DEFAULT_DWELL,
    seed: int = 0,
    *,
    base: RigidTransform | None = None,
    offset: BracketOffset | None = None,
    sweeps_per_dwell: int = SWEEPS_PER_DWELL,
    max_retries: int = MAX_RETRIES,
    max_recoveries: int = MAX_RECOVERIES,
    nu_max: float = NU_MAX,
    clock=None,
    resume: bool = False,
    metadata: dict[str, str] | None = None,
) -> tuple[ScanLog, ScanSummary]:
    """Plan, move, measure and log every grid point in order.

    Points whose plan fails or whose reading cannot be validated get a
    ``# skip`` note and are retried once after the main pass. A lost
    analyzer connection ends the scan; the summary names it.
    """
    clock = clock or SimClock()
    base = base if base is not None else scene.scan_anchor()
    offset = offset if offset is not None else BracketOffset()
    log_path = Path(log_path)
    meta = {"grid": grid.describe(), "grid_digest": grid_digest(grid), "dwell_s": f"{dwell:g}",
            "sweeps_per_dwell": str(sweeps_per_dwell), "seed": str(seed)}
    meta.update(metadata or {})

    existing = read_log(log_path) if log_path.exists() else ScanLog()
    if log_path.exists() and not resume:
        raise IoError(f"{log_path} already exists; pass resume to continue it")
    if existing.samples and existing.metadata.get("grid_digest") not in (None, meta["grid_digest"]):
        raise IoError(f"{log_path} belongs to a different grid")
    done = existing.indices()

    summary = ScanSummary(total=len(grid), acquired=0, coverage=0.0)
    if len(grid) == 0:
        summary.coverage = 100.0
        summary.note = "empty grid: coverage is 100% of zero points"
        return existing, summary

    q = np.array(arm.home)
    t_start = clock.now()
    pending: list[tuple[int, str]] = []

    def visit(i: int, attempt: int) -> str:
        nonlocal q
        c = grid[i]
        target = final_pose(base, c, offset)
        out = plan_pose(scene, arm, q, target, max_recoveries, pose_seed(seed, i, attempt), nu_max=nu_max)
        summary.planning_time += out.planning_time
        if not clock.real:
            clock.advance(out.planning_time)
        if out.trajectory is not None:
            summary.trajectories.append(out.trajectory)
            summary.execution_time += out.trajectory.duration
            clock.advance(out.trajectory.duration)
            q = np.array(out.trajectory.waypoints[-1].q)
        if out.status is Status.FAILURE:
            return f"plan failed: {out.reason}"
        if out.status is Status.RECOVERED:
            summary.recovered += 1
        t0 = clock.now()
        try:
            sample = acquire_point(conn, c, dwell, sweeps_per_dwell, max_retries, clock, index=i)
        except ValidationExhausted as exc:
            return f"ValidationExhausted: {exc}"
        finally:
            summary.dwell_time += clock.now() - t0
        append_atomic(log_path, sample, meta)
        existing.samples.append(sample)
        return ""

    try:
        configure(conn)
        for i in range(len(grid)):
            if i in done:
                continue
            why = visit(i, 0)
            if why:
                append_note(log_path, f"skip index={i} {why}", meta)
                pending.append((i, why))
        for i, _ in pending:  # exactly one end-of-scan retry pass
            summary.retried.append(i)
            why = visit(i, 1)
            if why:
                append_note(log_path, f"skip index={i} retry {why}", meta)
                summary.failures.append((i, why))
    except (ConnectionLost, ProtocolError) as exc:
        summary.error = f"{type(exc).__name__}: {exc}"

    acquired = existing.indices() & set(range(len(grid)))
    summary.acquired = len(acquired)
    summary.coverage = 100.0 * len(acquired) / len(grid)
    summary.wall_time = clock.now() - t_start
    return existing, summary
