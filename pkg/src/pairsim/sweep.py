"""Pump-power sweeps: singles rates and CAR versus 781.5-nm pump power."""

from __future__ import annotations

import csv
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from . import model
from .model import PS, CoincidenceWindow, DetectorParams, ModelError, SourceParams
from .simulator import Channel, PulseTrainConfig, RunConfig, simulate_run
from .tia import AnalysisError, CarConfig, TiaConfig, estimate_car, start_stop_intervals

CSV_FIELDS = (
    "power_w",
    "mu",
    "singles_signal_hz",
    "singles_idler_hz",
    "coincidence_hz",
    "car",
    "car_stderr",
    "mode",
)

# 25 uW coupled pump gives 0.12 pairs per pulse
NOMINAL_MU_PER_WATT = 0.12 / 25e-6


@dataclass(frozen=True)
class PowerMap:
    mu_per_watt: float = NOMINAL_MU_PER_WATT
    noise_signal_per_watt: float = 0.0
    noise_idler_per_watt: float = 0.0

    def __post_init__(self):
        for name in ("mu_per_watt", "noise_signal_per_watt", "noise_idler_per_watt"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value >= 0):
                raise ValueError(f"{name} must be finite and >= 0")


@dataclass
class SweepPoint:
    power_w: float
    mu: float
    singles_signal_hz: float
    singles_idler_hz: float
    coincidence_hz: float
    car: float
    car_stderr: float
    mode: str
    flagged: bool = False

    def row(self):
        return [
            repr(float(self.power_w)),
            repr(float(self.mu)),
            repr(float(self.singles_signal_hz)),
            repr(float(self.singles_idler_hz)),
            repr(float(self.coincidence_hz)),
            repr(float(self.car)),
            repr(float(self.car_stderr)),
            self.mode,
        ]


def mu_from_power(power_w: float, power_map: PowerMap) -> float:
    if power_w < 0:
        raise ValueError("pump power must be >= 0")
    return power_map.mu_per_watt * power_w


def fit_eta_from_singles(
    singles_rate_hz: float,
    mu: float,
    mu_noise: float,
    dark_rate_hz: float,
    rep_rate_hz: float,
) -> float:
    """Overall efficiency that reproduces a measured singles rate.

    Inverts ``singles = nu * (mu + mu_noise) * eta + d``.
    """
    if mu + mu_noise <= 0:
        raise ModelError("mu + mu_noise must be > 0 to fit an efficiency")
    if singles_rate_hz < dark_rate_hz:
        raise ModelError("singles rate is below the dark count rate")
    return (singles_rate_hz - dark_rate_hz) / (rep_rate_hz * (mu + mu_noise))


def _source_at(power_w, power_map, template: SourceParams, overrides):
    mu = overrides.get(float(power_w), mu_from_power(power_w, power_map))
    return replace(
        template,
        mu=mu,
        mu_noise_signal=power_map.noise_signal_per_watt * power_w,
        mu_noise_idler=power_map.noise_idler_per_watt * power_w,
    )


def analytic_point(power_w, source, det_s, det_i, window) -> SweepPoint:
    nu = source.rep_rate_hz
    singles_s = nu * (source.mu + source.mu_noise_signal) * det_s.efficiency + det_s.dark_rate_hz
    singles_i = nu * (source.mu + source.mu_noise_idler) * det_i.efficiency + det_i.dark_rate_hz
    coinc = model.coincidence_rate(source, det_s.efficiency, det_i.efficiency)
    try:
        car = model.car(source, det_s, det_i, window)
        flagged = False
    except model.UndefinedCARError:
        car, flagged = math.nan, True
    return SweepPoint(power_w, source.mu, singles_s, singles_i, coinc, car, 0.0, "analytic", flagged)


def montecarlo_point(
    power_w, source, det_s, det_i, train, seed, tia, car_cfg, block_size
) -> SweepPoint:
    tags = simulate_run(source, det_s, det_i, train, RunConfig(seed, block_size), workers=1)
    duration_s = train.duration_ps * PS
    singles_s = tags.count(Channel.SIGNAL) / duration_s
    singles_i = tags.count(Channel.IDLER) / duration_s
    intervals = start_stop_intervals(tags, tia)
    try:
        est = estimate_car(intervals, car_cfg)
    except AnalysisError:
        return SweepPoint(power_w, source.mu, singles_s, singles_i, 0.0, math.nan, math.nan, "montecarlo", True)
    coinc = max(est.peak_counts - est.accidental_mean, 0.0) / duration_s
    return SweepPoint(
        power_w,
        source.mu,
        singles_s,
        singles_i,
        coinc,
        est.car,
        est.stderr,
        "montecarlo",
        est.lower_bound,
    )


def point_seed(master_seed: int, index: int) -> int:
    ss = np.random.SeedSequence(master_seed, spawn_key=(0x5EE9, index))
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def run_sweep(
    powers_w,
    power_map: PowerMap,
    det_s: DetectorParams,
    det_i: DetectorParams,
    window: CoincidenceWindow,
    mode: str = "analytic",
    n_pulses: int | None = None,
    source_template: SourceParams | None = None,
    train_template: PulseTrainConfig | None = None,
    tia: TiaConfig = TiaConfig(),
    car_cfg: CarConfig = CarConfig(),
    seed: int = 0,
    mu_overrides: dict | None = None,
    workers: int = 1,
    block_size: int = 1 << 24,
) -> list[SweepPoint]:
    """Evaluate a power grid analytically or by Monte Carlo.

    ``mu_overrides`` maps a power (W) to a mean pair number that replaces the
    linear map at that point.  Monte Carlo points use independent seeds
    derived from ``seed`` and the point index, so ``workers`` does not change
    the result.
    """
    powers = [float(p) for p in powers_w]
    if not powers:
        raise ValueError("power grid is empty")
    if any(b <= a for a, b in zip(powers, powers[1:])):
        raise ValueError("power grid must be strictly increasing")
    if mode not in ("analytic", "montecarlo"):
        raise ValueError(f"unknown sweep mode {mode!r}")
    overrides = {float(k): float(v) for k, v in (mu_overrides or {}).items()}
    template = source_template or SourceParams(mu=0.0)
    sources = [_source_at(p, power_map, template, overrides) for p in powers]

    if mode == "analytic":
        return [analytic_point(p, s, det_s, det_i, window) for p, s in zip(powers, sources)]

    if not n_pulses:
        raise ValueError("montecarlo sweeps need a pulse budget")
    train = replace(
        train_template or PulseTrainConfig(n_pulses=1, rep_rate_hz=template.rep_rate_hz),
        n_pulses=int(n_pulses),
    )

    def work(k):
        return montecarlo_point(
            powers[k], sources[k], det_s, det_i, train, point_seed(seed, k), tia, car_cfg, block_size
        )

    if workers <= 1:
        return [work(k) for k in range(len(powers))]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(work, range(len(powers))))


def write_sweep_csv(points, out) -> None:
    """Write points to a path or an open text stream."""
    if isinstance(out, (str, os.PathLike)):
        with open(out, "w", newline="", encoding="utf-8") as fh:
            write_sweep_csv(points, fh)
        return
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(CSV_FIELDS)
    for p in points:
        writer.writerow(p.row())


def read_sweep_csv(path) -> list[SweepPoint]:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    return [
        SweepPoint(
            **{k: float(r[k]) for k in CSV_FIELDS if k != "mode"},
            mode=r["mode"],
        )
        for r in rows
    ]


def plot_sweep_svg(points, prefix) -> list[str]:
    """Singles-rate and CAR figures as SVG files ``<prefix>_singles.svg`` and ``<prefix>_car.svg``."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    matplotlib.rcParams["svg.hashsalt"] = "pairsim"
    power_uw = np.array([p.power_w for p in points]) * 1e6
    paths = []

    fig, ax = plt.subplots(figsize=(5, 4))
    ax.plot(power_uw, [p.singles_signal_hz for p in points], "s-", color="black", label="signal")
    ax.plot(power_uw, [p.singles_idler_hz for p in points], "o-", color="red", label="idler")
    ax.set_xlabel("pump power (uW)")
    ax.set_ylabel("count rate (Hz)")
    ax.legend()
    path = f"{prefix}_singles.svg"
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
    paths.append(path)

    car = np.array([p.car for p in points])
    err = np.array([p.car_stderr for p in points])
    ok = np.isfinite(car) & (car > 0)
    fig, ax = plt.subplots(figsize=(5, 4))
    ax.errorbar(power_uw[ok], car[ok], yerr=np.nan_to_num(err[ok]), fmt="o-", color="black", capsize=2)
    if ok.any():
        ax.set_xscale("log")
        ax.set_yscale("log")
    ax.set_xlabel("pump power (uW)")
    ax.set_ylabel("CAR")
    path = f"{prefix}_car.svg"
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
    paths.append(path)
    return paths
