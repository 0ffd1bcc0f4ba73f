"""Spectrum-analyzer emulator speaking a small SCPI dialect over TCP.

The probe position is not coupled physically here, so a mock-only verb
``:SYST:PROBe phi,theta,r`` tells the emulator where the virtual probe is.
Readings are synthesized from a :class:`PatternModel`.
"""

from __future__ import annotations

import logging
import math
import socket
import socketserver
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .se3 import SphericalCoord

log = logging.getLogger(__name__)

IDN = "RAPTARKIT,MOCK-PXA,0,1.0"
DEFAULT_PORT = 5025
TRACE_POINTS = 1001
CENTER_BIN = TRACE_POINTS // 2
MAX_LINE = 4096
DECIMALS = 2  # 0.01 dB reading resolution
TONE_ROLLOFF_DB = 3.0  # per bin squared away from the carrier
TONE_DEPTH_DB = 80.0


class OutOfTableRange(ValueError):
    pass


@dataclass(frozen=True)
class PatternTable:
    """Gain grid in dB on regular ascending phi / theta axes (degrees)."""

    phi: np.ndarray
    theta: np.ndarray
    gain: np.ndarray  # shape (len(phi), len(theta))

    def __post_init__(self):
        if self.gain.shape != (len(self.phi), len(self.theta)):
            raise ValueError("gain table shape does not match its axes")
        if len(self.phi) < 2 or len(self.theta) < 2:
            raise ValueError("pattern table needs at least two samples per axis")
        if np.any(np.diff(self.phi) <= 0) or np.any(np.diff(self.theta) <= 0):
            raise ValueError("pattern table axes must be strictly ascending")
        if self.phi[0] > 0 or self.theta[0] > 0 or self.theta[-1] < 90:
            raise ValueError("pattern table must cover phi from 0 and theta 0..90 deg")
        step = 360.0 - self.phi[-1]
        if step <= 0:
            raise ValueError("phi axis must stay below 360 deg")

    def lookup(self, phi: float, theta: float) -> float:
        if not (0.0 <= phi < 360.0 and self.theta[0] <= theta <= self.theta[-1]):
            raise OutOfTableRange(f"(phi={phi}, theta={theta}) outside the pattern table")
        # phi wraps: append the first column at 360
        ph = np.append(self.phi, 360.0)
        g = np.vstack([self.gain, self.gain[:1]])
        i = min(int(np.searchsorted(ph, phi, side="right")) - 1, len(ph) - 2)
        j = min(int(np.searchsorted(self.theta, theta, side="right")) - 1, len(self.theta) - 2)
        u = (phi - ph[i]) / (ph[i + 1] - ph[i])
        v = (theta - self.theta[j]) / (self.theta[j + 1] - self.theta[j])
        return float(
            (1 - u) * (1 - v) * g[i, j] + u * (1 - v) * g[i + 1, j]
            + (1 - u) * v * g[i, j + 1] + u * v * g[i + 1, j + 1]
        )


def parse_pattern_table(text: str) -> PatternTable:
    """Parse ``phi_deg,theta_deg,gain_db`` rows, row-major phi then theta."""
    lines = [ln.strip() for ln in text.splitlines() if ln.strip() and not ln.lstrip().startswith("#")]
    if not lines or lines[0].replace(" ", "") != "phi_deg,theta_deg,gain_db":
        raise ValueError("pattern table header must be phi_deg,theta_deg,gain_db")
    rows = np.array([[float(v) for v in ln.split(",")] for ln in lines[1:]])
    if rows.ndim != 2 or rows.shape[1] != 3:
        raise ValueError("pattern table rows need three columns")
    phi = np.unique(rows[:, 0])
    theta = np.unique(rows[:, 1])
    if len(rows) != len(phi) * len(theta):
        raise ValueError("pattern table is not a full phi x theta grid")
    expect = np.array([[p, t] for p in phi for t in theta])
    if not np.array_equal(rows[:, :2], expect):
        raise ValueError("pattern table rows must be ordered phi-major then theta")
    return PatternTable(phi, theta, rows[:, 2].reshape(len(phi), len(theta)))


def load_pattern_table(path: str | Path) -> PatternTable:
    return parse_pattern_table(Path(path).read_text())


@dataclass(frozen=True)
class PatternModel:
    kind: str = "analytic"
    boresight_power_dbm: float = -30.0
    theta_3db: float = 25.0
    sidelobe_floor_db: float = -25.0
    azimuth_ripple_db: float = 0.0
    r_ref: float = 0.15
    noise_sigma: float = 0.0
    table: PatternTable | None = field(default=None, compare=False)

    def __post_init__(self):
        if self.kind not in ("analytic", "tabulated"):
            raise ValueError(f"unknown pattern kind {self.kind!r}")
        if self.theta_3db <= 0:
            raise ValueError("theta_3db must be positive")
        if self.sidelobe_floor_db >= 0:
            raise ValueError("sidelobe floor must be negative (dB relative to peak)")
        if self.r_ref <= 0:
            raise ValueError("r_ref must be positive")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be non-negative")
        if self.kind == "tabulated" and self.table is None:
            raise ValueError("tabulated pattern needs a table")


def true_power(model: PatternModel, c: SphericalCoord) -> float:
    """Noise-free received power in dBm at probe position ``c``."""
    spread = 20.0 * math.log10(c.r / model.r_ref)
    if model.kind == "tabulated":
        return model.table.lookup(c.phi, c.theta) - spread
    taper = min(12.0 * (c.theta / model.theta_3db) ** 2, abs(model.sidelobe_floor_db))
    ripple = model.azimuth_ripple_db * math.cos(math.radians(2.0 * c.phi))
    return model.boresight_power_dbm - taper + ripple - spread


def quantize(power_dbm: float) -> float:
    """Reading as reported by the instrument (0.01 dB resolution)."""
    return float(f"{power_dbm:.{DECIMALS}f}")


def expected_reading(model: PatternModel, c: SphericalCoord) -> float:
    """Zero-noise instrument reading, the reference a scan is compared against."""
    return quantize(true_power(model, c))


@dataclass
class AnalyzerState:
    center_freq: float = 60e9
    span: float = 2e9
    trace_mode: str = "MaxHold"
    held_trace: np.ndarray | None = None
    probe_coord: SphericalCoord = field(default_factory=lambda: SphericalCoord(0.0, 0.0, 0.15))
    points: int = TRACE_POINTS
    rng: np.random.Generator = field(default_factory=lambda: np.random.default_rng(0))
    power_fn: Callable[[SphericalCoord], float] | None = None

    def frequencies(self) -> np.ndarray:
        return np.linspace(self.center_freq - self.span / 2, self.center_freq + self.span / 2, self.points)


def _tone_shape(points: int) -> np.ndarray:
    k = np.arange(points) - points // 2
    return -np.minimum(TONE_ROLLOFF_DB * k.astype(float) ** 2, TONE_DEPTH_DB)


def sweep(state: AnalyzerState, model: PatternModel) -> np.ndarray:
    """One sweep: carrier at the centre bin plus per-bin gaussian noise, folded per trace mode."""
    p = state.power_fn(state.probe_coord) if state.power_fn else true_power(model, state.probe_coord)
    trace = p + _tone_shape(state.points)
    if model.noise_sigma > 0:
        trace = trace + state.rng.normal(0.0, model.noise_sigma, state.points)
    if state.trace_mode == "MaxHold" and state.held_trace is not None:
        state.held_trace = np.maximum(state.held_trace, trace)
    else:
        state.held_trace = trace
    return trace


def _number(text: str) -> float:
    v = float(text)
    if not math.isfinite(v):
        raise ValueError("non-finite")
    return v


def handle_command(state: AnalyzerState, model: PatternModel, line: str) -> str | None:
    """Apply one command line; return the response line for queries and errors."""
    line = line.strip()
    if not line:
        return None
    head, _, arg = line.partition(" ")
    verb = head.upper()
    arg = arg.strip()
    try:
        if verb == "*IDN?" and not arg:
            return IDN
        if verb == ":INIT:REST" and not arg:
            state.held_trace = None
            return None
        if verb == ":TRAC1:TYPE":
            mode = arg.upper()
            if mode == "MAXH":
                state.trace_mode = "MaxHold"
            elif mode in ("CLEARW", "WRIT"):
                state.trace_mode = "ClearWrite"
            else:
                return "ERR:BAD_ARG"
            return None
        if verb == ":FREQ:CENT":
            v = _number(arg)
            if v <= 0:
                return "ERR:BAD_ARG"
            state.center_freq = v
            return None
        if verb == ":FREQ:SPAN":
            v = _number(arg)
            if v < 0:
                return "ERR:BAD_ARG"
            state.span = v
            return None
        if verb == ":SWE:IMM" and not arg:
            sweep(state, model)
            return None
        if verb == ":FETCH:SAN1?" and not arg:
            if state.held_trace is None:
                sweep(state, model)  # a free-running instrument always has a trace
            f = state.frequencies()
            return ",".join(f"{fi:.6e},{pi:.{DECIMALS}f}" for fi, pi in zip(f, state.held_trace))
        if verb == ":SYST:PROBE":
            parts = arg.split(",")
            if len(parts) != 3:
                return "ERR:BAD_ARG"
            phi, theta, r = (_number(p) for p in parts)
            state.probe_coord = SphericalCoord(phi, theta, r)
            return None
    except (ValueError, OverflowError):
        return "ERR:BAD_ARG"
    return f"ERR:UNKNOWN_CMD {head[:64]}"


class _Session(socketserver.StreamRequestHandler):
    def setup(self):
        super().setup()
        # small request/reply lines: disable Nagle so replies are not held for delayed ACKs
        self.request.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)

    def handle(self):
        srv: AnalyzerServer = self.server  # type: ignore[assignment]
        srv.sessions += 1
        state = AnalyzerState(rng=np.random.default_rng([srv.seed, srv.sessions]), power_fn=srv.power_fn)
        while True:
            try:
                raw = self.rfile.readline(MAX_LINE + 1)
            except OSError:
                return
            if not raw:
                return
            if len(raw) > MAX_LINE and not raw.endswith(b"\n"):
                # drain the rest of an oversized line, answer once
                while raw and not raw.endswith(b"\n"):
                    raw = self.rfile.readline(MAX_LINE + 1)
                reply = "ERR:UNKNOWN_CMD <oversized>"
            else:
                try:
                    text = raw.decode("ascii")
                except UnicodeDecodeError:
                    text = None
                reply = "ERR:UNKNOWN_CMD <non-ascii>" if text is None else handle_command(state, srv.model, text)
                if srv.verbose and text is not None:
                    log.info("cmd %r -> %s", text.strip()[:80], "-" if reply is None else reply[:40])
            if reply is not None:
                try:
                    self.wfile.write(reply.encode("ascii") + b"\n")
                except OSError:
                    return


class AnalyzerServer(socketserver.TCPServer):
    """Single-session TCP server: connections are served one after another."""

    allow_reuse_address = True

    def __init__(self, model: PatternModel, host: str = "127.0.0.1", port: int = DEFAULT_PORT, seed: int = 0,
                 power_fn: Callable[[SphericalCoord], float] | None = None, verbose: bool = False):
        self.model = model
        self.seed = int(seed)
        self.power_fn = power_fn
        self.verbose = verbose
        self.sessions = 0
        super().__init__((host, port), _Session)

    @property
    def address(self) -> tuple[str, int]:
        host, port = self.server_address[:2]
        return host, port


def serve_in_thread(model: PatternModel, host: str = "127.0.0.1", port: int = 0, seed: int = 0,
                    power_fn: Callable[[SphericalCoord], float] | None = None) -> AnalyzerServer:
    """Start a server on a daemon thread; call ``shutdown()`` then ``server_close()`` to stop."""
    srv = AnalyzerServer(model, host, port, seed, power_fn)
    threading.Thread(target=srv.serve_forever, kwargs={"poll_interval": 0.05}, daemon=True).start()
    return srv
