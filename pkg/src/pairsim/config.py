"""JSON run configuration.

Every section maps one-to-one onto a parameter dataclass and every key
carries its unit, e.g. ``jitter_fwhm_ps`` or ``dark_rate_hz``::

    {
      "source": {"mu": 0.12, "rep_rate_hz": 1e10, "mu_noise_signal": 0,
                 "mu_noise_idler": 0, "crosstalk": 0},
      "detector_signal": {"efficiency": 9.17e-4, "dark_rate_hz": 100,
                          "jitter_fwhm_ps": 65, "dead_time_ps": 10000},
      "detector_idler": {"efficiency": 4.0e-3, ...},
      "coincidence_window_ps": 60,
      "train": {"n_pulses": 100000000, "pulse_fwhm_ps": 10,
                "dispersion_fwhm_signal_ps": 0, "dispersion_fwhm_idler_ps": 0},
      "run": {"seed": 0, "block_size": 16777216},
      "tia": {"stop_delay_ps": 50000, "start_dead_time_ps": 50000,
              "max_interval_ps": 20000, "swap_channels": false},
      "car": {"window_ps": 60, "slot_spacing_ps": 200, "n_accidental": 10,
              "peak_search_ps": 100, "slot_side": "both"},
      "power_map": {"mu_per_watt": 4800, "noise_signal_per_watt": 0,
                    "noise_idler_per_watt": 0},
      "sweep": {"powers_w": [1e-8, 2.5e-5], "mode": "analytic",
                "n_pulses": 100000000,
                "mu_overrides": [{"power_w": 2e-8, "mu": 0.0002}]}
    }

Missing sections and keys fall back to the nominal operating point.
"""

from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass, field

from .model import CoincidenceWindow, DetectorParams, SourceParams
from .simulator import PulseTrainConfig, RunConfig
from .sweep import PowerMap
from .tia import CarConfig, TiaConfig


class ConfigError(ValueError):
    pass


# singles rates 1.1 MHz / 4.8 MHz at mu = 0.12 and 10 GHz give these overall efficiencies
NOMINAL_ETA_SIGNAL = 9.17e-4
NOMINAL_ETA_IDLER = 4.0e-3


@dataclass(frozen=True)
class SweepSettings:
    powers_w: tuple = ()
    mode: str = "analytic"
    n_pulses: int | None = None
    mu_overrides: tuple = ()

    def __post_init__(self):
        if self.mode not in ("analytic", "montecarlo"):
            raise ValueError("sweep mode must be 'analytic' or 'montecarlo'")

    def override_map(self) -> dict:
        return {float(o["power_w"]): float(o["mu"]) for o in self.mu_overrides}


@dataclass(frozen=True)
class Config:
    source: SourceParams = SourceParams(mu=0.12)
    detector_signal: DetectorParams = DetectorParams(NOMINAL_ETA_SIGNAL, 100.0, 65.0)
    detector_idler: DetectorParams = DetectorParams(NOMINAL_ETA_IDLER, 100.0, 65.0)
    coincidence_window_ps: float = 60.0
    train: PulseTrainConfig = PulseTrainConfig(n_pulses=10**8)
    run: RunConfig = RunConfig()
    tia: TiaConfig = TiaConfig()
    car: CarConfig = CarConfig()
    power_map: PowerMap = PowerMap()
    sweep: SweepSettings = field(default_factory=SweepSettings)

    @property
    def window(self) -> CoincidenceWindow:
        return CoincidenceWindow(self.coincidence_window_ps)

    def to_dict(self) -> dict:
        d = {}
        for f in dataclasses.fields(self):
            value = getattr(self, f.name)
            if dataclasses.is_dataclass(value):
                value = dataclasses.asdict(value)
                value = {k: list(v) if isinstance(v, tuple) else v for k, v in value.items()}
            d[f.name] = value
        return d

    def replace(self, **sections) -> Config:
        return dataclasses.replace(self, **sections)


_SECTIONS = {
    "source": SourceParams,
    "detector_signal": DetectorParams,
    "detector_idler": DetectorParams,
    "train": PulseTrainConfig,
    "run": RunConfig,
    "tia": TiaConfig,
    "car": CarConfig,
    "power_map": PowerMap,
    "sweep": SweepSettings,
}


def _build(cls, base, values, section):
    if not isinstance(values, dict):
        raise ConfigError(f"section {section!r} must be a JSON object")
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(values) - names)
    if unknown:
        raise ConfigError(f"unknown key(s) in section {section!r}: {', '.join(unknown)}")
    merged = dataclasses.asdict(base)
    merged.update(values)
    if cls is SweepSettings:
        merged["powers_w"] = tuple(merged["powers_w"])
        merged["mu_overrides"] = tuple(merged["mu_overrides"])
    try:
        return cls(**merged)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid section {section!r}: {exc}") from None


def config_from_dict(d: dict, base: Config | None = None) -> Config:
    base = base or Config()
    if not isinstance(d, dict):
        raise ConfigError("configuration must be a JSON object")
    unknown = sorted(set(d) - set(_SECTIONS) - {"coincidence_window_ps"})
    if unknown:
        raise ConfigError(f"unknown top-level key(s): {', '.join(unknown)}")
    sections = {}
    for name, cls in _SECTIONS.items():
        if name in d:
            sections[name] = _build(cls, getattr(base, name), d[name], name)
    if "train" not in d or "rep_rate_hz" not in d.get("train", {}):
        source = sections.get("source", base.source)
        train = sections.get("train", base.train)
        try:
            sections["train"] = dataclasses.replace(train, rep_rate_hz=source.rep_rate_hz)
        except ValueError as exc:
            raise ConfigError(f"invalid section 'train': {exc}") from None
    if "coincidence_window_ps" in d:
        sections["coincidence_window_ps"] = d["coincidence_window_ps"]
    cfg = dataclasses.replace(base, **sections)
    try:
        _ = cfg.window
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    return cfg


def load_config(path) -> Config:
    path = os.fspath(path)
    try:
        with open(path, encoding="utf-8") as fh:
            d = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror or exc}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from None
    return config_from_dict(d)


def nominal_config() -> Config:
    """Operating point of the high-pump measurement (mu = 0.12 at 10 GHz)."""
    return Config()
