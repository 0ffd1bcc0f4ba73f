"""Pattern comparison statistics, repeatability, coverage and report writers."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np

from .scanlog import ScanLog, ScanSample
from .se3 import ScanGrid

SNR_CAP_DB = 99.0
Key = tuple[float, float, float]


class KeyMismatch(ValueError):
    pass


class DegenerateVariance(ValueError):
    pass


def _key(phi: float, theta: float, r: float) -> Key:
    return (round(float(phi), 9), round(float(theta), 9), round(float(r), 9))


@dataclass(frozen=True)
class PatternGrid:
    """Ordered mapping (phi, theta, r) -> power in dBm."""

    keys: tuple[Key, ...]
    values: np.ndarray

    def __post_init__(self):
        if len(set(self.keys)) != len(self.keys):
            raise ValueError("duplicate keys in pattern grid")
        if len(self.keys) != len(self.values):
            raise ValueError("keys and values differ in length")

    def __len__(self) -> int:
        return len(self.keys)

    def as_dict(self) -> dict[Key, float]:
        return dict(zip(self.keys, (float(v) for v in self.values)))

    @classmethod
    def from_items(cls, items: Iterable[tuple[tuple[float, float, float], float]]) -> "PatternGrid":
        items = list(items)
        return cls(tuple(_key(*k) for k, _ in items), np.array([v for _, v in items], dtype=float))

    @classmethod
    def from_log(cls, log: ScanLog) -> "PatternGrid":
        return cls.from_items(((s.phi, s.theta, s.r), s.power) for s in log.ordered())

    @classmethod
    def from_function(cls, grid: ScanGrid, fn) -> "PatternGrid":
        return cls.from_items((c.key, fn(c)) for c in grid)

    def aligned(self, other: "PatternGrid") -> np.ndarray:
        """``other``'s values reordered to this grid's key order."""
        if set(self.keys) != set(other.keys):
            missing = len(set(self.keys) ^ set(other.keys))
            raise KeyMismatch(f"pattern grids differ in {missing} keys")
        lookup = other.as_dict()
        return np.array([lookup[k] for k in self.keys])


@dataclass(frozen=True)
class MetricsReport:
    n: int
    mae: float
    rmse: float
    std_error: float
    snr: float | None
    r_squared: float | None
    max_power: float
    main_lobe: tuple[float, float]
    coverage: float
    error_median: float
    error_std: float
    error_max: float
    error_min: float
    notes: tuple[str, ...] = field(default=())

    def as_dict(self) -> dict[str, object]:
        return {
            "n": self.n, "mae_db": self.mae, "rmse_db": self.rmse, "std_error_db": self.std_error,
            "snr_db": self.snr, "r_squared": self.r_squared, "max_power_dbm": self.max_power,
            "main_lobe_phi_deg": self.main_lobe[0], "main_lobe_theta_deg": self.main_lobe[1],
            "coverage_pct": self.coverage, "abs_error_median_db": self.error_median,
            "abs_error_std_db": self.error_std, "abs_error_max_db": self.error_max,
            "abs_error_min_db": self.error_min,
        }

    def to_keyvalue(self) -> str:
        lines = [f"{k}={'absent' if v is None else repr(v)}" for k, v in self.as_dict().items()]
        lines += [f"note={n}" for n in self.notes]
        return "\n".join(lines) + "\n"

    def to_text(self, label: str = "scan") -> str:
        fmt = lambda v, p=3: "-" if v is None else f"{v:.{p}f}"
        head = ["Scan", "MAE (dB)", "RMSE (dB)", "Std. Error (dB)", "SNR (dB)", "R2",
                "Max Power (dBm)", "Main Lobe (phi,theta deg)", "Coverage (%)"]
        row = [label, fmt(self.mae), fmt(self.rmse), fmt(self.std_error), fmt(self.snr, 2),
               fmt(self.r_squared, 4), fmt(self.max_power, 2),
               f"{self.main_lobe[0]:g},{self.main_lobe[1]:g}", fmt(self.coverage, 2)]
        dist = ["", "|error| median/std/max/min (dB):",
                f"{self.error_median:.3f} / {self.error_std:.3f} / {self.error_max:.3f} / {self.error_min:.3f}"]
        return "\t".join(head) + "\n" + "\t".join(row) + "\n" + " ".join(dist).strip() + "\n"


def compare(measured: PatternGrid, reference: PatternGrid, coverage: float = 100.0,
            strict: bool = False) -> MetricsReport:
    """Error statistics of ``measured`` against ``reference`` in the dB domain.

    SNR is ``10 log10(Var(reference) / MSE)``, capped at 99 dB. With a
    constant reference, SNR and r² are absent (``strict`` raises instead).
    """
    if len(measured) < 2:
        raise ValueError("compare needs at least two points")
    m = measured.values
    ref = measured.aligned(reference)
    e = m - ref
    a = np.abs(e)
    mse = float(np.mean(e * e))
    notes = []
    var_ref = float(np.var(ref))
    var_m = float(np.var(m))
    if var_ref == 0.0 or var_m == 0.0:
        if strict:
            raise DegenerateVariance("constant pattern: r-squared and SNR undefined")
        notes.append("DegenerateVariance: r_squared and snr absent")
        r2 = snr = None
    else:
        prod = var_m * var_ref
        denom = math.sqrt(prod) if prod > 0.0 else math.sqrt(var_m) * math.sqrt(var_ref)  # underflow guard
        rho = float(np.mean((m - m.mean()) * (ref - ref.mean())) / denom)
        r2 = min(rho * rho, 1.0)
        snr = SNR_CAP_DB if mse == 0.0 else min(10.0 * math.log10(var_ref / mse), SNR_CAP_DB)
    imax = int(np.argmax(m))
    return MetricsReport(
        n=len(m),
        mae=float(a.mean()),
        rmse=math.sqrt(mse),
        std_error=float(np.std(e)),
        snr=snr,
        r_squared=r2,
        max_power=float(m[imax]),
        main_lobe=(measured.keys[imax][0], measured.keys[imax][1]),
        coverage=coverage,
        error_median=float(np.median(a)),
        error_std=float(np.std(a)),
        error_max=float(a.max()),
        error_min=float(a.min()),
        notes=tuple(notes),
    )


@dataclass(frozen=True)
class Repeatability:
    mean_mad: float
    worst_pair: float
    pairs: tuple[tuple[int, int, float], ...]


def repeatability(runs: list[PatternGrid]) -> Repeatability:
    """Mean and worst pairwise mean-absolute-difference over unordered run pairs."""
    if len(runs) < 2:
        raise ValueError("repeatability needs at least two runs")
    first = runs[0]
    aligned = [first.values] + [first.aligned(r) for r in runs[1:]]
    pairs = tuple(
        (i, j, float(np.mean(np.abs(aligned[i] - aligned[j]))))
        for i, j in itertools.combinations(range(len(runs)), 2)
    )
    vals = [p[2] for p in pairs]
    return Repeatability(float(np.mean(vals)), float(max(vals)), pairs)


def coverage(log: ScanLog | Iterable[ScanSample], grid: ScanGrid) -> float:
    """Percent of grid points with a valid logged row (duplicates count once)."""
    if len(grid) == 0:
        return 100.0
    samples = log.samples if isinstance(log, ScanLog) else list(log)
    wanted = {c.key for c in grid}
    got = {s.key for s in samples} & wanted
    return 100.0 * len(got) / len(grid)


def write_point_errors(path: str | Path, measured: PatternGrid, reference: PatternGrid) -> None:
    """Per-point export for external cut plots."""
    ref = measured.aligned(reference)
    rows = ["phi,theta,r,measured_dbm,reference_dbm,error_db"]
    for (phi, th, r), m, rf in zip(measured.keys, measured.values, ref):
        rows.append(f"{phi!r},{th!r},{r!r},{float(m)!r},{float(rf)!r},{float(m - rf)!r}")
    Path(path).write_text("\n".join(rows) + "\n")


def read_point_errors(path: str | Path) -> list[dict[str, float]]:
    lines = Path(path).read_text().splitlines()
    cols = lines[0].split(",")
    return [dict(zip(cols, (float(v) for v in ln.split(",")))) for ln in lines[1:] if ln]


def format_repeatability(rep: Repeatability) -> str:
    lines = [f"repeat_mad_db={rep.mean_mad!r}", f"worst_pair_db={rep.worst_pair!r}"]
    lines += [f"pair_{i}_{j}_db={v!r}" for i, j, v in rep.pairs]
    return "\n".join(lines) + "\n"


def from_mapping(values: Mapping[Key, float]) -> PatternGrid:
    return PatternGrid.from_items(values.items())
