"""Closed-form rate model for a pulsed photon-pair source.

All times cross the API as integer (or float) picoseconds and are converted
to seconds only inside the rate formulas.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

PS = 1e-12
FWHM_PER_SIGMA = 2.354820045


class ModelError(ValueError):
    """Raised when a model quantity is undefined for the given inputs."""


class UndefinedCARError(ModelError):
    pass


class NoInteriorOptimumError(ModelError):
    pass


def _check_finite(name, value):
    if not math.isfinite(value):
        raise ValueError(f"{name} must be finite, got {value!r}")


@dataclass(frozen=True)
class SourceParams:
    """Pair source seen at the demultiplexer output.

    ``mu`` is the mean number of pairs per pump pulse, ``mu_noise_*`` the
    mean number of uncorrelated noise photons per pulse in each arm and
    ``crosstalk`` the probability that a photon leaves through the wrong port.
    """

    mu: float
    rep_rate_hz: float = 1e10
    mu_noise_signal: float = 0.0
    mu_noise_idler: float = 0.0
    crosstalk: float = 0.0

    def __post_init__(self):
        for name in ("mu", "rep_rate_hz", "mu_noise_signal", "mu_noise_idler", "crosstalk"):
            _check_finite(name, getattr(self, name))
        if self.mu < 0 or self.mu_noise_signal < 0 or self.mu_noise_idler < 0:
            raise ValueError("mean photon numbers must be >= 0")
        if self.rep_rate_hz <= 0:
            raise ValueError("rep_rate_hz must be > 0")
        if not 0.0 <= self.crosstalk <= 1.0:
            raise ValueError("crosstalk must lie in [0, 1]")

    @property
    def period_ps(self) -> float:
        return 1.0 / (self.rep_rate_hz * PS)


@dataclass(frozen=True)
class DetectorParams:
    efficiency: float
    dark_rate_hz: float = 0.0
    jitter_fwhm_ps: float = 0.0
    dead_time_ps: int = 10_000

    def __post_init__(self):
        for name in ("efficiency", "dark_rate_hz", "jitter_fwhm_ps", "dead_time_ps"):
            _check_finite(name, getattr(self, name))
        if not 0.0 <= self.efficiency <= 1.0:
            raise ValueError("efficiency must lie in [0, 1]")
        if self.dark_rate_hz < 0 or self.jitter_fwhm_ps < 0 or self.dead_time_ps < 0:
            raise ValueError("dark_rate_hz, jitter_fwhm_ps and dead_time_ps must be >= 0")

    @property
    def jitter_sigma_ps(self) -> float:
        return self.jitter_fwhm_ps / FWHM_PER_SIGMA


@dataclass(frozen=True)
class CoincidenceWindow:
    width_ps: float = 60.0

    def __post_init__(self):
        _check_finite("width_ps", self.width_ps)
        if self.width_ps <= 0:
            raise ValueError("coincidence window width must be > 0")

    @property
    def seconds(self) -> float:
        return self.width_ps * PS


@dataclass(frozen=True)
class RatePrediction:
    coincidence_rate: float
    accidental_rate: float
    car: float

    def to_dict(self):
        return {
            "coincidence_rate_hz": self.coincidence_rate,
            "accidental_rate_hz": self.accidental_rate,
            "car": self.car,
        }


def pair_number_pmf(mu: float, n: int) -> float:
    """Poisson probability of ``n`` pairs in one pulse with mean ``mu``."""
    if not mu >= 0 or not math.isfinite(mu):
        raise ModelError(f"mean pair number must be finite and >= 0, got {mu!r}")
    if n < 0 or int(n) != n:
        raise ModelError(f"pair number must be a nonnegative integer, got {n!r}")
    n = int(n)
    if mu == 0.0:
        return 1.0 if n == 0 else 0.0
    return math.exp(n * math.log(mu) - mu - math.lgamma(n + 1))


def coincidence_rate(source: SourceParams, eta_s: float, eta_i: float) -> float:
    """True pair coincidences per second, ``nu * mu * eta_s * eta_i``."""
    return source.rep_rate_hz * source.mu * eta_s * eta_i


def singles_per_pulse(mu: float, mu_noise: float, eta: float, dark_rate_hz: float, window_s: float) -> float:
    # (mu + mu_noise) * eta + t * d
    return (mu + mu_noise) * eta + window_s * dark_rate_hz


def accidental_rate(
    source: SourceParams,
    det_s: DetectorParams,
    det_i: DetectorParams,
    window: CoincidenceWindow,
) -> float:
    t = window.seconds
    signal = singles_per_pulse(source.mu, source.mu_noise_signal, det_s.efficiency, det_s.dark_rate_hz, t)
    idler = singles_per_pulse(source.mu, source.mu_noise_idler, det_i.efficiency, det_i.dark_rate_hz, t)
    return source.rep_rate_hz * signal * idler


def car(
    source: SourceParams,
    det_s: DetectorParams,
    det_i: DetectorParams,
    window: CoincidenceWindow,
) -> float:
    """Coincidence-to-accidental ratio ``(C + C_a) / C_a``.

    Raises
    ------
    UndefinedCARError
        If the accidental rate vanishes (no noise, no dark counts and either
        no pairs or a blind detector).
    """
    t = window.seconds
    signal = singles_per_pulse(source.mu, source.mu_noise_signal, det_s.efficiency, det_s.dark_rate_hz, t)
    idler = singles_per_pulse(source.mu, source.mu_noise_idler, det_i.efficiency, det_i.dark_rate_hz, t)
    denom = signal * idler
    if denom <= 0.0:
        raise UndefinedCARError("accidental rate is zero; CAR is undefined")
    return 1.0 + source.mu * det_s.efficiency * det_i.efficiency / denom


def predict(
    source: SourceParams,
    det_s: DetectorParams,
    det_i: DetectorParams,
    window: CoincidenceWindow,
) -> RatePrediction:
    return RatePrediction(
        coincidence_rate=coincidence_rate(source, det_s.efficiency, det_i.efficiency),
        accidental_rate=accidental_rate(source, det_s, det_i, window),
        car=car(source, det_s, det_i, window),
    )


def effective_noise(mu_noise: float, eta: float, dark_rate_hz: float, window: CoincidenceWindow) -> float:
    """Per-pulse click probability not caused by pairs: ``mu_noise * eta + t * d``."""
    return mu_noise * eta + window.seconds * dark_rate_hz


def optimal_mu(noise_s: float, noise_i: float, eta_s: float, eta_i: float) -> float:
    """Mean pair number that maximises the CAR.

    Setting the derivative of ``log(CAR - 1)`` to zero gives
    ``mu* = sqrt(a * b / (eta_s * eta_i))`` where ``a`` and ``b`` are the
    per-pulse noise click probabilities of the two arms.
    """
    if not (eta_s > 0 and eta_i > 0):
        raise ModelError("efficiencies must be > 0")
    if noise_s < 0 or noise_i < 0:
        raise ModelError("noise terms must be >= 0")
    if noise_s * noise_i == 0:
        raise NoInteriorOptimumError(
            "a noise-free arm makes the CAR monotone decreasing in mu; no interior optimum"
        )
    return math.sqrt(noise_s * noise_i / (eta_s * eta_i))


def optimal_mu_for(
    source: SourceParams,
    det_s: DetectorParams,
    det_i: DetectorParams,
    window: CoincidenceWindow,
) -> float:
    a = effective_noise(source.mu_noise_signal, det_s.efficiency, det_s.dark_rate_hz, window)
    b = effective_noise(source.mu_noise_idler, det_i.efficiency, det_i.dark_rate_hz, window)
    return optimal_mu(a, b, det_s.efficiency, det_i.efficiency)


def dead_time_corrected_rate(rate_hz: float, dead_time_ps: float) -> float:
    """Observed rate of a non-paralyzable counter, ``r / (1 + r * tau)``."""
    return rate_hz / (1.0 + rate_hz * dead_time_ps * PS)
