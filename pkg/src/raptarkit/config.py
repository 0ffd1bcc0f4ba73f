"""Scan configuration: INI sections, validated against the operating ranges."""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field, replace
from pathlib import Path

from .analyzer import DEFAULT_PORT, PatternModel, load_pattern_table
from .arm import ArmDescription, base_transform, load_arm
from .scene import Scene, load_scene
from .se3 import MAX_POLAR_DEG, BracketOffset, RigidTransform, ScanGrid, generate_grid

RADIUS_RANGE = (0.03, 0.20)  # m
NU_RANGE = (0.05, 0.10)


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class GridSpec:
    phi_step: float = 20.0
    theta_min: float = 0.0
    theta_max: float = 60.0
    theta_step: float = 20.0
    radii: tuple[float, ...] = (0.08,)

    def build(self) -> ScanGrid:
        return generate_grid(self.phi_step, self.theta_min, self.theta_max, self.theta_step, self.radii)


@dataclass(frozen=True)
class ScanConfig:
    grid: GridSpec = field(default_factory=GridSpec)
    scene_path: Path | None = None
    riser_height: float | None = None
    arm_path: Path | None = None
    anchor: str = "dut"
    offset: BracketOffset = field(default_factory=BracketOffset)
    pattern: PatternModel = field(default_factory=PatternModel)
    dwell: float = 20.0
    sweeps_per_dwell: int = 10
    max_retries: int = 3
    nu_max: float = 0.05
    max_recoveries: int = 2
    real_clock: bool = False
    seed: int = 0
    bench_seeds: tuple[int, ...] = ()
    host: str = "127.0.0.1"
    port: int = DEFAULT_PORT
    log_path: Path = Path("scan.csv")
    report_dir: Path = Path(".")
    plots: bool = False
    calib_points: int = 50
    calib_noise: float = 0.3e-3
    calib_output: Path = Path("bracket_offset.ini")
    source: str = "<defaults>"

    def load_arm(self) -> ArmDescription:
        return load_arm(self.arm_path)

    def load_scene(self) -> Scene:
        return load_scene(self.scene_path, self.riser_height)

    def base(self, scene: Scene, arm: ArmDescription) -> RigidTransform:
        return scene.scan_anchor() if self.anchor == "dut" else base_transform(arm)

    def with_overrides(self, **kw) -> "ScanConfig":
        return replace(self, **kw)


def _floats(text: str, what: str) -> tuple[float, ...]:
    try:
        return tuple(float(v) for v in text.replace(";", ",").split(",") if v.strip())
    except ValueError as exc:
        raise ConfigError(f"{what}: {exc}") from exc


def validate(cfg: ScanConfig) -> ScanConfig:
    g = cfg.grid
    lo, hi = RADIUS_RANGE
    if not g.radii:
        raise ConfigError("grid.radii must list at least one radius")
    for r in g.radii:
        if not lo <= r <= hi:
            raise ConfigError(f"radius {r:g} m outside the supported {lo:g}-{hi:g} m range")
    if g.theta_max > MAX_POLAR_DEG:
        raise ConfigError(f"theta_max {g.theta_max:g} deg exceeds the {MAX_POLAR_DEG:g} deg polar bound")
    if g.theta_min < 0 or g.theta_min > g.theta_max:
        raise ConfigError("theta_min must lie in [0, theta_max]")
    if g.phi_step <= 0 or g.theta_step <= 0:
        raise ConfigError("angular steps must be positive")
    if not NU_RANGE[0] <= cfg.nu_max <= NU_RANGE[1]:
        raise ConfigError(f"nu_max {cfg.nu_max:g} outside {NU_RANGE[0]:g}-{NU_RANGE[1]:g}")
    if cfg.dwell < 0:
        raise ConfigError("dwell must be non-negative")
    if cfg.sweeps_per_dwell < 1 or cfg.max_retries < 0 or cfg.max_recoveries < 0:
        raise ConfigError("sweeps_per_dwell >= 1, max_retries >= 0, max_recoveries >= 0 required")
    if cfg.anchor not in ("dut", "home"):
        raise ConfigError("scene.anchor must be 'dut' or 'home'")
    for p, what in ((cfg.scene_path, "scene file"), (cfg.arm_path, "arm file")):
        if p is not None and not Path(p).is_file():
            raise ConfigError(f"{what} {p} does not exist")
    if not 0 < cfg.port < 65536:
        raise ConfigError("analyzer port out of range")
    if cfg.calib_points < 3 or cfg.calib_noise < 0:
        raise ConfigError("calibration needs >= 3 points and non-negative noise")
    return cfg


def parse_config(text: str, source: str = "<string>", base_dir: Path | None = None) -> ScanConfig:
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    try:
        cp.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError(str(exc)) from exc
    base_dir = base_dir or Path(".")

    def path(sec, key):
        v = cp.get(sec, key, fallback="").strip()
        if not v:
            return None
        p = Path(v)
        return p if p.is_absolute() else base_dir / p

    try:
        g = cp["grid"] if cp.has_section("grid") else {}
        d = GridSpec()
        grid = GridSpec(
            float(g.get("phi_step", d.phi_step)),
            float(g.get("theta_min", d.theta_min)),
            float(g.get("theta_max", d.theta_max)),
            float(g.get("theta_step", d.theta_step)),
            _floats(g["radii"], "grid.radii") if "radii" in g else d.radii,
        )
        off = BracketOffset()
        if cp.has_section("bracket_offset"):
            s = cp["bracket_offset"]
            off = BracketOffset(**{k: float(s.get(k, getattr(off, k))) for k in ("yaw", "pitch", "roll", "x", "y", "z")})
        pm = PatternModel()
        if cp.has_section("pattern"):
            s = cp["pattern"]
            kind = s.get("kind", pm.kind).strip()
            table = load_pattern_table(path("pattern", "table")) if kind == "tabulated" else None
            pm = PatternModel(
                kind=kind,
                boresight_power_dbm=float(s.get("boresight_power_dbm", pm.boresight_power_dbm)),
                theta_3db=float(s.get("theta_3db", pm.theta_3db)),
                sidelobe_floor_db=float(s.get("sidelobe_floor_db", pm.sidelobe_floor_db)),
                azimuth_ripple_db=float(s.get("azimuth_ripple_db", pm.azimuth_ripple_db)),
                r_ref=float(s.get("r_ref", pm.r_ref)),
                noise_sigma=float(s.get("noise_sigma", pm.noise_sigma)),
                table=table,
            )
        dflt = ScanConfig()
        sc = cp["scene"] if cp.has_section("scene") else {}
        acq = cp["acquisition"] if cp.has_section("acquisition") else {}
        an = cp["analyzer"] if cp.has_section("analyzer") else {}
        out = cp["output"] if cp.has_section("output") else {}
        run = cp["run"] if cp.has_section("run") else {}
        cal = cp["calibration"] if cp.has_section("calibration") else {}
        bench = cp["bench"] if cp.has_section("bench") else {}
        cfg = ScanConfig(
            grid=grid,
            scene_path=path("scene", "path") if cp.has_section("scene") else None,
            riser_height=float(sc["riser_height"]) if "riser_height" in sc else None,
            arm_path=path("arm", "path") if cp.has_section("arm") else None,
            anchor=sc.get("anchor", dflt.anchor).strip(),
            offset=off,
            pattern=pm,
            dwell=float(acq.get("dwell", dflt.dwell)),
            sweeps_per_dwell=int(acq.get("sweeps_per_dwell", dflt.sweeps_per_dwell)),
            max_retries=int(acq.get("max_retries", dflt.max_retries)),
            nu_max=float(acq.get("nu_max", dflt.nu_max)),
            max_recoveries=int(acq.get("max_recoveries", dflt.max_recoveries)),
            real_clock=str(acq.get("clock", "simulated")).strip() == "real",
            seed=int(run.get("seed", dflt.seed)),
            bench_seeds=tuple(int(v) for v in _floats(bench["seeds"], "bench.seeds")) if "seeds" in bench else (),
            host=an.get("host", dflt.host).strip(),
            port=int(an.get("port", dflt.port)),
            log_path=path("output", "log") or dflt.log_path,
            report_dir=path("output", "report_dir") or dflt.report_dir,
            plots=str(out.get("plots", "no")).strip().lower() in ("yes", "true", "1", "on"),
            calib_points=int(cal.get("points", dflt.calib_points)),
            calib_noise=float(cal.get("noise_sigma_mm", dflt.calib_noise * 1e3)) * 1e-3,
            calib_output=path("calibration", "output") or dflt.calib_output,
            source=source,
        )
    except ConfigError:
        raise
    except (ValueError, KeyError, OSError) as exc:
        raise ConfigError(f"{source}: {exc}") from exc
    return validate(cfg)


def load_config(path: str | Path | None) -> ScanConfig:
    if path is None:
        return validate(ScanConfig())
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {p}: {exc}") from exc
    return parse_config(text, str(p), p.parent)
