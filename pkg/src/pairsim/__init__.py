"""Monte Carlo simulation and CAR analysis of pulsed correlated photon-pair sources."""

__version__ = "0.1.0"

from .model import (
    CoincidenceWindow,
    DetectorParams,
    RatePrediction,
    SourceParams,
    accidental_rate,
    car,
    coincidence_rate,
    optimal_mu,
    pair_number_pmf,
)
from .simulator import (
    Channel,
    PulseTrainConfig,
    RunConfig,
    TagStream,
    TimeTag,
    simulate_run,
)
from .tia import (
    CarConfig,
    CarEstimate,
    Histogram,
    TiaConfig,
    estimate_car,
    start_stop_intervals,
)

__all__ = [
    "CarConfig",
    "CarEstimate",
    "Channel",
    "CoincidenceWindow",
    "DetectorParams",
    "Histogram",
    "PulseTrainConfig",
    "RatePrediction",
    "RunConfig",
    "SourceParams",
    "TagStream",
    "TiaConfig",
    "TimeTag",
    "accidental_rate",
    "car",
    "coincidence_rate",
    "estimate_car",
    "optimal_mu",
    "pair_number_pmf",
    "simulate_run",
    "start_stop_intervals",
]
