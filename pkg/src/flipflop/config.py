"""Run configuration: one sectioned INI file with a versioned header line.

The first line must read ``# flipflop-config 1``. Angles are in degrees in
the file and converted to radians on load. Every section is validated at
load time so a bad value never surfaces mid-run. Unknown sections or keys
are rejected.

Sections and keys (units in the key names)::

    [lattice]        path, site
    [spin]           nuclear_spin, g_kHz_per_mT, zeeman_euler_deg, D_MHz, E_MHz,
                     quad_euler_deg, orientation_0_deg .. orientation_3_deg
    [zero_field]     field_mT, T2_s
    [applied_field]  field_mT, T2_s
    [linewidths]     gamma_kHz, kappa
    [ensemble]       sphere_radius_nm, doping_fraction, seed, neighbor_count,
                     core_margin_nm, max_centers
    [kinetics]       t_min_s, t_max_s, n_times, t0_s, normalize
    [spectrum]       ground_splittings_MHz, excited_splittings_MHz, strengths,
                     optical_linewidth_MHz, scan_range_MHz, burn_interval_MHz,
                     grid_points
    [fit]            gamma_bounds_kHz, kappa_bounds, budget, restarts

All randomness derives from ``[ensemble] seed``; the fit restarts use a
separate stream spawned from it.

Relative paths resolve against the config file's directory first, then the
bundled data directory.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, replace
from importlib import resources
from pathlib import Path

import numpy as np

from .holeburn import SpectrumConfig
from .rates import DensityParams, FieldRegime
from .spinham import SpinParams

HEADER = "# flipflop-config 1"


class ConfigError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class FieldSetting:
    field: np.ndarray  # mT
    T2: float  # s


@dataclass(frozen=True)
class EnsembleSettings:
    sphere_radius: float = 100.0
    doping_fraction: float = 5e-4
    seed: int = 42
    neighbor_count: int = 20
    core_margin: float = 20.0
    max_centers: int = 0  # 0: every core ion


@dataclass(frozen=True)
class KineticsSettings:
    t_min: float = 1e-3
    t_max: float = 3000.0
    n_times: int = 200
    t0: float = 4.6
    normalize: str = "exact"

    def times(self) -> np.ndarray:
        return np.geomspace(self.t_min, self.t_max, self.n_times)


@dataclass(frozen=True)
class FitSettings:
    gamma_bounds: tuple[float, float] = (0.01, 100.0)
    kappa_bounds: tuple[float, float] = (1.0, 20.0)
    budget: int = 5000
    restarts: int = 16


@dataclass(frozen=True, eq=False)
class RunConfig:
    lattice_path: Path
    site: int
    spin: SpinParams
    zero_field: FieldSetting
    applied_field: FieldSetting
    gamma: tuple[float, float, float]
    kappa: tuple[float, float, float]
    ensemble: EnsembleSettings
    kinetics: KineticsSettings
    spectrum: SpectrumConfig
    spectrum_points: int
    fit: FitSettings
    source: Path | None = None

    def density(self, regime: FieldRegime | str, gamma=None, kappa=None) -> DensityParams:
        regime = FieldRegime(regime)
        gamma = self.gamma if gamma is None else gamma
        if regime is FieldRegime.ZERO:
            return DensityParams(self.zero_field.T2, gamma, (1.0, 1.0, 1.0), regime)
        return DensityParams(self.applied_field.T2, gamma, self.kappa if kappa is None else kappa, regime)

    def field_setting(self, regime: FieldRegime | str) -> FieldSetting:
        return self.zero_field if FieldRegime(regime) is FieldRegime.ZERO else self.applied_field

    def with_seed(self, seed: int) -> "RunConfig":
        return replace(self, ensemble=replace(self.ensemble, seed=int(seed)))

    def fit_seed(self) -> int:
        ss = np.random.SeedSequence(self.ensemble.seed, spawn_key=(2,))
        return int(ss.generate_state(1)[0])


_SCHEMA = {
    "lattice": {"path", "site"},
    "spin": {
        "nuclear_spin",
        "g_kHz_per_mT",
        "zeeman_euler_deg",
        "D_MHz",
        "E_MHz",
        "quad_euler_deg",
        "orientation_0_deg",
        "orientation_1_deg",
        "orientation_2_deg",
        "orientation_3_deg",
    },
    "zero_field": {"field_mT", "T2_s"},
    "applied_field": {"field_mT", "T2_s"},
    "linewidths": {"gamma_kHz", "kappa"},
    "ensemble": {"sphere_radius_nm", "doping_fraction", "seed", "neighbor_count", "core_margin_nm", "max_centers"},
    "kinetics": {"t_min_s", "t_max_s", "n_times", "t0_s", "normalize"},
    "spectrum": {
        "ground_splittings_MHz",
        "excited_splittings_MHz",
        "strengths",
        "optical_linewidth_MHz",
        "scan_range_MHz",
        "burn_interval_MHz",
        "grid_points",
    },
    "fit": {"gamma_bounds_kHz", "kappa_bounds", "budget", "restarts"},
}
_REQUIRED = {"lattice", "spin", "zero_field", "applied_field", "linewidths"}


def default_config_path() -> Path:
    return Path(str(resources.files("flipflop") / "data" / "pr_yso.cfg"))


def _vector(section, key, n=None) -> tuple[float, ...]:
    raw = section[key]
    try:
        vals = tuple(float(v) for v in raw.replace(",", " ").split())
    except ValueError as exc:
        raise ConfigError(f"[{section.name}] {key}: expected numbers, got {raw!r}") from exc
    if n is not None and len(vals) != n:
        raise ConfigError(f"[{section.name}] {key}: expected {n} values, got {len(vals)}")
    if not all(np.isfinite(vals)):
        raise ConfigError(f"[{section.name}] {key}: values must be finite")
    return vals


def _number(section, key, kind=float, default=None):
    if key not in section:
        if default is None:
            raise ConfigError(f"[{section.name}] missing key {key!r}")
        return default
    try:
        return kind(section[key])
    except ValueError as exc:
        raise ConfigError(f"[{section.name}] {key}: cannot parse {section[key]!r}") from exc


def _resolve(path_text: str, base: Path | None) -> Path:
    p = Path(path_text)
    if p.is_absolute():
        return p
    if base is not None and (base / p).exists():
        return base / p
    bundled = Path(str(resources.files("flipflop") / "data")) / p
    if bundled.exists():
        return bundled
    return (base / p) if base is not None else p


def _checked(build, where):
    try:
        return build()
    except ConfigError:
        raise
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"[{where}] {exc}") from exc


def parse_config(text: str, base: Path | None = None, source: Path | None = None) -> RunConfig:
    first = text.lstrip("﻿").splitlines()[0].strip() if text.strip() else ""
    if first != HEADER:
        raise ConfigError(f"config must start with {HEADER!r}, found {first!r}")
    cp = configparser.ConfigParser(inline_comment_prefixes=(";",), interpolation=None)
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(str(exc)) from exc
    for name in cp.sections():
        if name not in _SCHEMA:
            raise ConfigError(f"unknown section [{name}]")
        unknown = set(cp[name]) - _SCHEMA[name]
        if unknown:
            raise ConfigError(f"[{name}] unknown keys: {sorted(unknown)}")
    missing = _REQUIRED - set(cp.sections())
    if missing:
        raise ConfigError(f"missing sections: {sorted(missing)}")
    for name in _SCHEMA:
        if not cp.has_section(name):
            cp.add_section(name)

    lat = cp["lattice"]
    if "path" not in lat:
        raise ConfigError("[lattice] missing key 'path'")
    lattice_path = _resolve(lat["path"], base)
    if not lattice_path.is_file():
        raise ConfigError(f"[lattice] file not found: {lattice_path}")
    site = _number(lat, "site", int, 1)

    sp = cp["spin"]
    for key in _SCHEMA["spin"]:
        if key not in sp:
            raise ConfigError(f"[spin] missing key {key!r}")
    spin = _checked(
        lambda: SpinParams(
            nuclear_spin=_number(sp, "nuclear_spin"),
            g_principal=_vector(sp, "g_kHz_per_mT", 3),
            zeeman_euler=tuple(np.radians(_vector(sp, "zeeman_euler_deg", 3))),
            D=_number(sp, "D_MHz"),
            E=_number(sp, "E_MHz"),
            quad_euler=tuple(np.radians(_vector(sp, "quad_euler_deg", 3))),
            orientation_euler=tuple(tuple(np.radians(_vector(sp, f"orientation_{k}_deg", 3))) for k in range(4)),
        ),
        "spin",
    )
    if int(round(2 * spin.nuclear_spin)) + 1 != 6:
        raise ConfigError("[spin] the hyperfine labelling needs nuclear_spin = 2.5")

    def field_setting(name):
        s = cp[name]
        for key in ("field_mT", "T2_s"):
            if key not in s:
                raise ConfigError(f"[{name}] missing key {key!r}")
        T2 = _number(s, "T2_s")
        if not T2 > 0:
            raise ConfigError(f"[{name}] T2_s must be > 0")
        return FieldSetting(np.array(_vector(s, "field_mT", 3)), T2)

    zero, applied = field_setting("zero_field"), field_setting("applied_field")

    lw = cp["linewidths"]
    for key in ("gamma_kHz", "kappa"):
        if key not in lw:
            raise ConfigError(f"[linewidths] missing key {key!r}")
    gamma, kappa = _vector(lw, "gamma_kHz", 3), _vector(lw, "kappa", 3)
    _checked(lambda: DensityParams(zero.T2, gamma, (1.0, 1.0, 1.0), "zero"), "linewidths")
    _checked(lambda: DensityParams(applied.T2, gamma, kappa, "applied"), "linewidths")

    en = cp["ensemble"]
    d = EnsembleSettings()
    ensemble = EnsembleSettings(
        _number(en, "sphere_radius_nm", float, d.sphere_radius),
        _number(en, "doping_fraction", float, d.doping_fraction),
        _number(en, "seed", int, d.seed),
        _number(en, "neighbor_count", int, d.neighbor_count),
        _number(en, "core_margin_nm", float, d.core_margin),
        _number(en, "max_centers", int, d.max_centers),
    )
    if not ensemble.sphere_radius > 0:
        raise ConfigError("[ensemble] sphere_radius_nm must be > 0")
    if not 0 < ensemble.doping_fraction < 1:
        raise ConfigError("[ensemble] doping_fraction must be in (0, 1)")
    if ensemble.neighbor_count < 1:
        raise ConfigError("[ensemble] neighbor_count must be >= 1")
    if not 0 <= ensemble.core_margin < ensemble.sphere_radius:
        raise ConfigError("[ensemble] core_margin_nm must be in [0, sphere_radius_nm)")
    if ensemble.max_centers < 0:
        raise ConfigError("[ensemble] max_centers must be >= 0")

    kn = cp["kinetics"]
    d = KineticsSettings()
    kinetics = KineticsSettings(
        _number(kn, "t_min_s", float, d.t_min),
        _number(kn, "t_max_s", float, d.t_max),
        _number(kn, "n_times", int, d.n_times),
        _number(kn, "t0_s", float, d.t0),
        kn.get("normalize", d.normalize).strip(),
    )
    if not 0 < kinetics.t_min < kinetics.t_max:
        raise ConfigError("[kinetics] need 0 < t_min_s < t_max_s")
    if kinetics.n_times < 2:
        raise ConfigError("[kinetics] n_times must be >= 2")
    if kinetics.t0 < 0:
        raise ConfigError("[kinetics] t0_s must be >= 0")
    if kinetics.normalize not in ("exact", "first"):
        raise ConfigError("[kinetics] normalize must be 'exact' or 'first'")

    sc = cp["spectrum"]
    strengths = None
    if "strengths" in sc:
        rows = [r for r in sc["strengths"].split(";") if r.strip()]
        try:
            strengths = np.array([[float(v) for v in r.replace(",", " ").split()] for r in rows])
        except ValueError as exc:
            raise ConfigError(f"[spectrum] strengths: {exc}") from exc
    d = SpectrumConfig()
    spectrum = _checked(
        lambda: SpectrumConfig(
            _vector(sc, "ground_splittings_MHz", 2) if "ground_splittings_MHz" in sc else d.ground_splittings,
            _vector(sc, "excited_splittings_MHz", 2) if "excited_splittings_MHz" in sc else d.excited_splittings,
            strengths,
            _number(sc, "optical_linewidth_MHz", float, d.optical_linewidth),
            _vector(sc, "scan_range_MHz", 2) if "scan_range_MHz" in sc else d.scan_range,
            _number(sc, "burn_interval_MHz", float, d.burn_interval),
        ),
        "spectrum",
    )
    points = _number(sc, "grid_points", int, 2001)
    if points < 3:
        raise ConfigError("[spectrum] grid_points must be >= 3")

    ft = cp["fit"]
    d = FitSettings()
    fit = FitSettings(
        _vector(ft, "gamma_bounds_kHz", 2) if "gamma_bounds_kHz" in ft else d.gamma_bounds,
        _vector(ft, "kappa_bounds", 2) if "kappa_bounds" in ft else d.kappa_bounds,
        _number(ft, "budget", int, d.budget),
        _number(ft, "restarts", int, d.restarts),
    )
    if not 0 < fit.gamma_bounds[0] < fit.gamma_bounds[1]:
        raise ConfigError("[fit] gamma_bounds_kHz must satisfy 0 < lo < hi")
    if not 1 <= fit.kappa_bounds[0] < fit.kappa_bounds[1]:
        raise ConfigError("[fit] kappa_bounds must satisfy 1 <= lo < hi")
    if fit.budget < 100:
        raise ConfigError("[fit] budget must be >= 100")
    if fit.restarts < 1:
        raise ConfigError("[fit] restarts must be >= 1")

    return RunConfig(
        lattice_path, site, spin, zero, applied, gamma, kappa, ensemble, kinetics, spectrum, points, fit, source
    )


def load_config(path: str | Path | None = None) -> RunConfig:
    path = default_config_path() if path is None else Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    text = path.read_text(encoding="utf-8")
    return parse_config(text, base=path.parent, source=path)
