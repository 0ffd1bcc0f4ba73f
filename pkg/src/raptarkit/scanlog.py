"""Append-only CSV scan log with atomic, durable appends."""

from __future__ import annotations

import math
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

HEADER = "timestamp,index,phi_deg,theta_deg,radius_m,power_dbm,attempts"
VALID_RANGE_DBM = (-100.0, 30.0)


class IoError(OSError):
    pass


class CorruptLog(ValueError):
    pass


@dataclass(frozen=True)
class ScanSample:
    timestamp: str
    index: int
    phi: float
    theta: float
    r: float
    power: float
    attempts: int = 1

    def __post_init__(self):
        lo, hi = VALID_RANGE_DBM
        if not (math.isfinite(self.power) and lo < self.power < hi):
            raise ValueError(f"power {self.power} dBm outside the valid range ({lo:g}, {hi:g})")
        if self.attempts < 1:
            raise ValueError("attempts must be >= 1")
        if self.index < 0:
            raise ValueError("index must be non-negative")
        if "," in self.timestamp or "\n" in self.timestamp:
            raise ValueError("timestamp must not contain commas or newlines")

    @property
    def key(self) -> tuple[float, float, float]:
        return (round(self.phi, 9), round(self.theta, 9), round(self.r, 9))

    def to_row(self) -> str:
        # repr keeps floats bit-exact through a write/read cycle
        return ",".join(
            [self.timestamp, str(self.index), repr(float(self.phi)), repr(float(self.theta)),
             repr(float(self.r)), repr(float(self.power)), str(self.attempts)]
        )

    @classmethod
    def from_row(cls, row: str) -> "ScanSample":
        parts = row.split(",")
        if len(parts) != 7:
            raise CorruptLog(f"expected 7 fields, got {len(parts)}: {row[:80]!r}")
        try:
            return cls(parts[0], int(parts[1]), float(parts[2]), float(parts[3]), float(parts[4]),
                       float(parts[5]), int(parts[6]))
        except ValueError as exc:
            raise CorruptLog(f"bad row {row[:80]!r}: {exc}") from exc


@dataclass
class ScanLog:
    samples: list[ScanSample] = field(default_factory=list)
    metadata: dict[str, str] = field(default_factory=dict)
    notes: list[str] = field(default_factory=list)

    def indices(self) -> set[int]:
        return {s.index for s in self.samples}

    def ordered(self) -> list[ScanSample]:
        return sorted(self.samples, key=lambda s: s.index)


def _fsync_dir(path: Path) -> None:
    try:
        fd = os.open(path, os.O_RDONLY)
    except OSError:
        return
    try:
        os.fsync(fd)
    except OSError:
        pass
    finally:
        os.close(fd)


def _replace_with(path: Path, data: bytes) -> None:
    parent = path.parent
    if not parent.is_dir():
        raise IoError(f"log directory {parent} does not exist")
    try:
        fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", suffix=".tmp", dir=parent)
    except OSError as exc:
        raise IoError(str(exc)) from exc
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except OSError as exc:
        try:
            os.unlink(tmp)
        except OSError:
            pass
        raise IoError(str(exc)) from exc
    _fsync_dir(parent)


def _header_block(metadata: dict[str, str] | None) -> str:
    lines = [f"# {k}={v}" for k, v in (metadata or {}).items()]
    return "".join(ln + "\n" for ln in lines) + HEADER + "\n"


def append_lines(log_path: str | Path, lines: list[str], metadata: dict[str, str] | None = None) -> None:
    """Atomically append complete lines; a new file gets the metadata block and header first.

    The file is rewritten to a temporary sibling, fsynced and renamed over
    the original, so readers only ever see the old or the new content.
    """
    path = Path(log_path)
    try:
        old = path.read_bytes()
    except FileNotFoundError:
        old = _header_block(metadata).encode()
    except OSError as exc:
        raise IoError(str(exc)) from exc
    if old and not old.endswith(b"\n"):
        raise CorruptLog(f"{path} does not end with a complete line")
    _replace_with(path, old + "".join(ln + "\n" for ln in lines).encode())


def append_atomic(log_path: str | Path, sample: ScanSample, metadata: dict[str, str] | None = None) -> None:
    append_lines(log_path, [sample.to_row()], metadata)


def append_note(log_path: str | Path, note: str, metadata: dict[str, str] | None = None) -> None:
    """Record a ``#``-prefixed note (skip entries, retries) without touching data rows."""
    append_lines(log_path, ["# " + note.replace("\n", " ")], metadata)


def read_log(log_path: str | Path) -> ScanLog:
    path = Path(log_path)
    try:
        text = path.read_text()
    except FileNotFoundError:
        return ScanLog()
    except OSError as exc:
        raise IoError(str(exc)) from exc
    out = ScanLog()
    seen_header = False
    for ln in text.splitlines():
        if ln.startswith("#"):
            body = ln[1:].strip()
            if not seen_header and "=" in body:
                k, _, v = body.partition("=")
                out.metadata[k.strip()] = v.strip()
            else:
                out.notes.append(body)
            continue
        if not ln.strip():
            continue
        if not seen_header:
            if ln.strip() != HEADER:
                raise CorruptLog(f"unexpected header {ln[:80]!r}")
            seen_header = True
            continue
        out.samples.append(ScanSample.from_row(ln))
    return out
