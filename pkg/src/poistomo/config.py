"""Typed run configuration parsed from INI files.

A run is described by a flat INI file layered on top of a named preset:
preset defaults, then the file, then explicit overrides (the CLI uses this
for --seed).  Unknown sections or keys are hard errors so that a typo never
silently falls back to a default.  The canonical form of the merged
configuration, and the hash derived from it, are what reproducibility
guarantees are stated against.
"""

from __future__ import annotations

import configparser
import hashlib
from dataclasses import dataclass, field

from .admm import AdmmConfig
from .fields import Grid
from .forward import Reparam
from .klbasis import CovarianceSpec
from .samplers import SamplerConfig

__all__ = [
    "ConfigError",
    "CalibrationSettings",
    "RunConfig",
    "PRESETS",
    "parse_config",
    "write_config",
]


class ConfigError(ValueError):
    """Raised for any malformed, unknown, or out-of-range configuration."""


def _parse_bool(raw: str) -> bool:
    states = configparser.ConfigParser.BOOLEAN_STATES
    key = raw.strip().lower()
    if key not in states:
        raise ValueError(f"not a boolean: {raw!r}")
    return states[key]


def _parse_opt_int(raw: str):
    s = raw.strip().lower()
    if s in ("", "none"):
        return None
    return int(raw)


def _parse_float_list(raw: str) -> tuple[float, ...]:
    parts = [p.strip() for p in raw.split(",") if p.strip()]
    if not parts:
        raise ValueError("empty list")
    return tuple(float(p) for p in parts)


_SCHEMA = {
    "grid": {"nx": int, "ny": int},
    "reparam": {"a": float, "b": float, "c": float},
    "prior": {"gamma": float, "corr_len": float, "n_modes": int,
              "mean": float},
    "operator": {"n_angles": int, "n_det": int, "kappa": float},
    "model": {"tv_weight": float},
    "sampler": {"kind": str, "n_samples": int, "burn_in": _parse_opt_int,
                "thinning": int, "beta": float, "delta": float,
                "k_proj": _parse_opt_int, "seed": int,
                "autotune": _parse_bool},
    "map": {"rho_pen": float, "max_outer": int, "tol": float,
            "inner_iters": int, "inner_tol": float,
            "paper_dual_sign": _parse_bool},
    "calibration": {"weight_grid": _parse_float_list, "chain_steps": int,
                    "band_lo": float, "band_hi": float, "denominator": str,
                    "max_eval_samples": _parse_opt_int, "select_iters": int,
                    "select_inner_steps": int},
    "detect": {"thin": int},
}

_DEFAULTS = {
    "grid": {"nx": "32", "ny": "32"},
    "reparam": {"a": "2.0", "b": "2.0", "c": "1.0"},
    "prior": {"gamma": "2.0", "corr_len": "1e-3", "n_modes": "500",
              "mean": "0.0"},
    "operator": {"n_angles": "30", "n_det": "32", "kappa": "1.0"},
    "model": {"tv_weight": "1.0"},
    "sampler": {"kind": "pdpcn", "n_samples": "20000", "burn_in": "2000",
                "thinning": "1", "beta": "0.1", "delta": "0.1",
                "k_proj": "none", "seed": "0", "autotune": "false"},
    "map": {"rho_pen": "1.0", "max_outer": "200", "tol": "1e-4",
            "inner_iters": "50", "inner_tol": "1e-6",
            "paper_dual_sign": "false"},
    "calibration": {"weight_grid": "0.0, 1.0, 2.0, 3.0",
                    "chain_steps": "20000", "band_lo": "0.1",
                    "band_hi": "0.7", "denominator": "theta_sq",
                    "max_eval_samples": "2000", "select_iters": "60",
                    "select_inner_steps": "200"},
    "detect": {"thin": "1"},
}

# Presets are overlays on the defaults above.  "desk" is sized to run in
# seconds on one core; "paper" reproduces the full-scale tomography setup
# (128x128 image, 60 projection angles, half-strength source, long chains).
PRESETS = {
    "desk": {},
    "paper": {
        "grid": {"nx": "128", "ny": "128"},
        "prior": {"n_modes": "6000"},
        "operator": {"n_angles": "60", "n_det": "128", "kappa": "0.5"},
        "model": {"tv_weight": "2.4"},
        "sampler": {"n_samples": "550000", "burn_in": "50000",
                    "beta": "0.09", "delta": "0.23"},
        "calibration": {"weight_grid": "0.0, 1.0, 2.0, 3.0, 4.0, 5.0",
                        "chain_steps": "100000"},
    },
}


@dataclass(frozen=True)
class CalibrationSettings:
    weight_grid: tuple[float, ...]
    chain_steps: int
    band: tuple[float, float]
    denominator: str
    max_eval_samples: int | None
    select_iters: int
    select_inner_steps: int

    def __post_init__(self):
        lo, hi = self.band
        if not 0.0 < lo < hi < 1.0:
            raise ValueError(f"band must satisfy 0 < lo < hi < 1, got {self.band}")
        if self.chain_steps < 1:
            raise ValueError(f"chain_steps must be >= 1, got {self.chain_steps}")
        if self.select_iters < 1 or self.select_inner_steps < 1:
            raise ValueError("selection iteration counts must be >= 1")


@dataclass(frozen=True)
class RunConfig:
    grid: Grid
    reparam: Reparam
    cov: CovarianceSpec
    n_modes: int
    prior_mean: float
    n_angles: int
    n_det: int
    kappa: float
    tv_weight: float
    sampler: SamplerConfig
    autotune: bool
    admm: AdmmConfig
    calibration: CalibrationSettings
    detect_thin: int
    canonical: dict = field(repr=False, compare=False)

    def config_hash(self) -> str:
        """Hex sha256 of the canonical key=value lines."""
        lines = []
        for section in sorted(self.canonical):
            for key in sorted(self.canonical[section]):
                lines.append(f"{section}.{key}={self.canonical[section][key]}")
        return hashlib.sha256("\n".join(lines).encode()).hexdigest()


def _canonical_value(value) -> str:
    if value is None:
        return "none"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, tuple):
        return ", ".join(repr(float(v)) for v in value)
    return str(value)


def _merge_layers(preset: str, path, overrides) -> dict:
    merged = {s: dict(kv) for s, kv in _DEFAULTS.items()}
    if preset not in PRESETS:
        raise ConfigError(
            f"unknown preset {preset!r}; choose from {sorted(PRESETS)}")
    for section, kv in PRESETS[preset].items():
        merged[section].update(kv)

    if path is not None:
        parser = configparser.ConfigParser(interpolation=None)
        try:
            with open(path, encoding="utf-8") as fh:
                parser.read_file(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config file {path}: {exc}") from exc
        except configparser.Error as exc:
            raise ConfigError(f"malformed config file {path}: {exc}") from exc
        for section in parser.sections():
            if section not in _SCHEMA:
                raise ConfigError(
                    f"unknown section [{section}]; known sections: "
                    f"{sorted(_SCHEMA)}")
            for key, raw in parser.items(section):
                if key not in _SCHEMA[section]:
                    raise ConfigError(
                        f"unknown key {key!r} in [{section}]; known keys: "
                        f"{sorted(_SCHEMA[section])}")
                merged[section][key] = raw

    for section, kv in (overrides or {}).items():
        if section not in _SCHEMA:
            raise ConfigError(f"unknown override section [{section}]")
        for key, raw in kv.items():
            if key not in _SCHEMA[section]:
                raise ConfigError(f"unknown override key [{section}] {key}")
            merged[section][key] = str(raw)
    return merged


def parse_config(path=None, preset: str = "desk", overrides=None) -> RunConfig:
    """Build a validated RunConfig from preset + optional file + overrides."""
    merged = _merge_layers(preset, path, overrides)

    parsed: dict = {}
    for section, keys in _SCHEMA.items():
        parsed[section] = {}
        for key, conv in keys.items():
            raw = merged[section][key]
            try:
                parsed[section][key] = conv(raw)
            except ValueError as exc:
                raise ConfigError(
                    f"[{section}] {key}: cannot parse {raw!r}: {exc}") from exc

    canonical = {
        section: {key: _canonical_value(val) for key, val in kv.items()}
        for section, kv in parsed.items()
    }

    def build(section, ctor, **kwargs):
        try:
            return ctor(**kwargs)
        except ValueError as exc:
            raise ConfigError(f"[{section}] {exc}") from exc

    g = parsed["grid"]
    grid = build("grid", Grid, nx=g["nx"], ny=g["ny"])
    r = parsed["reparam"]
    rep = build("reparam", Reparam, a=r["a"], b=r["b"], c=r["c"])
    p = parsed["prior"]
    cov = build("prior", CovarianceSpec, gamma=p["gamma"],
                corr_len=p["corr_len"])
    if p["n_modes"] < 1 or p["n_modes"] > grid.npix:
        raise ConfigError(
            f"[prior] n_modes must be in [1, {grid.npix}], got {p['n_modes']}")
    o = parsed["operator"]
    if o["n_angles"] < 1 or o["n_det"] < 1:
        raise ConfigError("[operator] n_angles and n_det must be >= 1")
    if o["kappa"] <= 0.0:
        raise ConfigError(f"[operator] kappa must be positive, got {o['kappa']}")
    m = parsed["model"]
    if m["tv_weight"] < 0.0:
        raise ConfigError(
            f"[model] tv_weight must be nonnegative, got {m['tv_weight']}")
    s = parsed["sampler"]
    sampler = build("sampler", SamplerConfig, kind=s["kind"],
                    n_samples=s["n_samples"], beta=s["beta"],
                    delta=s["delta"], burn_in=s["burn_in"],
                    thinning=s["thinning"], seed=s["seed"],
                    k_proj=s["k_proj"])
    a = parsed["map"]
    admm = build("map", AdmmConfig, rho_pen=a["rho_pen"],
                 max_outer=a["max_outer"], tol=a["tol"],
                 inner_iters=a["inner_iters"], inner_tol=a["inner_tol"],
                 paper_dual_sign=a["paper_dual_sign"])
    c = parsed["calibration"]
    calibration = build("calibration", CalibrationSettings,
                        weight_grid=c["weight_grid"],
                        chain_steps=c["chain_steps"],
                        band=(c["band_lo"], c["band_hi"]),
                        denominator=c["denominator"],
                        max_eval_samples=c["max_eval_samples"],
                        select_iters=c["select_iters"],
                        select_inner_steps=c["select_inner_steps"])
    if calibration.denominator not in ("theta_sq", "theta"):
        raise ConfigError(
            "[calibration] denominator must be 'theta_sq' or 'theta', "
            f"got {calibration.denominator!r}")
    d = parsed["detect"]
    if d["thin"] < 1:
        raise ConfigError(f"[detect] thin must be >= 1, got {d['thin']}")

    return RunConfig(grid=grid, reparam=rep, cov=cov, n_modes=p["n_modes"],
                     prior_mean=p["mean"], n_angles=o["n_angles"],
                     n_det=o["n_det"], kappa=o["kappa"],
                     tv_weight=m["tv_weight"], sampler=sampler,
                     autotune=s["autotune"], admm=admm,
                     calibration=calibration, detect_thin=d["thin"],
                     canonical=canonical)


def write_config(cfg: RunConfig, path) -> None:
    """Dump the effective configuration as a normalized INI file."""
    parser = configparser.ConfigParser(interpolation=None)
    for section in sorted(cfg.canonical):
        parser[section] = {k: cfg.canonical[section][k]
                           for k in sorted(cfg.canonical[section])}
    with open(path, "w", encoding="utf-8") as fh:
        parser.write(fh)
