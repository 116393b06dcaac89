"""Start/stop time-interval analyzer emulation and CAR estimation."""

from __future__ import annotations

import io
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import _kernels
from .model import FWHM_PER_SIGMA
from .simulator import Channel, TagStream


class AnalysisError(ValueError):
    pass


@dataclass(frozen=True)
class TiaConfig:
    stop_delay_ps: int = 50_000
    start_dead_time_ps: int = 50_000
    max_interval_ps: int = 20_000
    swap_channels: bool = False

    def __post_init__(self):
        for name in ("stop_delay_ps", "start_dead_time_ps", "max_interval_ps"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")

    @property
    def start_channel(self) -> Channel:
        return Channel.SIGNAL if self.swap_channels else Channel.IDLER

    @property
    def stop_channel(self) -> Channel:
        return Channel.IDLER if self.swap_channels else Channel.SIGNAL


@dataclass(frozen=True)
class CarConfig:
    """Peak/accidental counting windows.

    ``peak_search_ps`` limits the peak search to window centres within that
    distance of zero interval (``None`` searches everywhere).  ``slot_side``
    selects accidental slots on ``"both"`` sides, or only ``"left"`` or
    ``"right"`` of the peak.
    """

    window_ps: int = 60
    slot_spacing_ps: int = 200
    n_accidental: int = 10
    peak_search_ps: int | None = 100
    slot_side: str = "both"

    def __post_init__(self):
        if self.window_ps <= 0:
            raise ValueError("window_ps must be > 0")
        if self.slot_spacing_ps < self.window_ps:
            raise ValueError("slot_spacing_ps must be >= window_ps")
        if self.n_accidental < 1:
            raise ValueError("n_accidental must be >= 1")
        if self.peak_search_ps is not None and self.peak_search_ps < 0:
            raise ValueError("peak_search_ps must be >= 0")
        if self.slot_side not in ("both", "left", "right"):
            raise ValueError("slot_side must be 'both', 'left' or 'right'")


@dataclass
class Histogram:
    bin_width_ps: int
    origin_ps: int
    counts: np.ndarray
    discarded: int = 0

    @property
    def n_bins(self) -> int:
        return self.counts.size

    @property
    def left_edges(self) -> np.ndarray:
        return self.origin_ps + self.bin_width_ps * np.arange(self.n_bins, dtype=np.int64)

    @property
    def centers(self) -> np.ndarray:
        return self.left_edges + 0.5 * self.bin_width_ps

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("bin_left_ps,count\n")
        for left, c in zip(self.left_edges.tolist(), self.counts.tolist()):
            buf.write(f"{left},{c}\n")
        return buf.getvalue()

    def to_dict(self):
        return {
            "bin_width_ps": int(self.bin_width_ps),
            "origin_ps": int(self.origin_ps),
            "counts": [int(c) for c in self.counts],
            "discarded": int(self.discarded),
        }


@dataclass
class CarEstimate:
    peak_counts: int
    accidental_mean: float
    car: float
    stderr: float
    peak_center_ps: int
    accidental_counts: list = field(default_factory=list)
    accidental_centers_ps: list = field(default_factory=list)
    lower_bound: bool = False
    n_intervals: int = 0

    def to_dict(self):
        return asdict(self)


def _split_channels(tags):
    if isinstance(tags, TagStream):
        return tags.time_ps, tags.channel
    if isinstance(tags, tuple) and len(tags) == 2:
        return np.asarray(tags[0], np.int64), np.asarray(tags[1], np.uint8)
    tags = list(tags)
    times = np.fromiter((t.time_ps for t in tags), dtype=np.int64, count=len(tags))
    chans = np.fromiter((int(t.channel) for t in tags), dtype=np.uint8, count=len(tags))
    return times, chans


def start_stop_intervals(tags, tia: TiaConfig = TiaConfig()) -> np.ndarray:
    """Intervals recorded by a single-stop TIA, re-centred so true pairs sit near 0.

    Stops are delayed by ``stop_delay_ps``; a start that arrives within
    ``start_dead_time_ps`` of the previously accepted start is ignored.  Each
    accepted start records the first delayed stop that is not earlier than
    the start and lies within ``max_interval_ps`` of zero after re-centring.
    """
    times, chans = _split_channels(tags)
    starts = times[chans == tia.start_channel]
    stops = times[chans == tia.stop_channel]
    if starts.size == 0 or stops.size == 0:
        return np.empty(0, dtype=np.int64)
    lower = -min(tia.max_interval_ps, tia.stop_delay_ps)
    intervals, _ = _kernels.tia_intervals(
        starts, stops, tia.start_dead_time_ps, lower, tia.max_interval_ps
    )
    return intervals


def build_histogram(intervals, bin_width_ps: int, origin_ps: int, n_bins: int) -> Histogram:
    if n_bins < 1:
        raise AnalysisError("histogram needs at least one bin")
    if bin_width_ps < 1:
        raise AnalysisError("bin width must be >= 1 ps")
    x = np.asarray(intervals, dtype=np.int64)
    idx = (x - origin_ps) // bin_width_ps
    inside = (idx >= 0) & (idx < n_bins)
    counts = np.bincount(idx[inside], minlength=n_bins).astype(np.int64)
    return Histogram(bin_width_ps, origin_ps, counts, discarded=int(x.size - np.count_nonzero(inside)))


def _window_counts(x, centers, window):
    lo = np.asarray(centers, dtype=np.int64) - window // 2
    return np.searchsorted(x, lo + window, side="left") - np.searchsorted(x, lo, side="left")


def find_peak(x: np.ndarray, window: int, search: int | None) -> tuple[int, int]:
    """Centre and count of the fullest window; ties go to the smallest centre.

    ``x`` must be sorted.  A window centred at ``c`` covers
    ``[c - window//2, c - window//2 + window)``.
    """
    half = window // 2
    # the smallest maximising centre puts some interval on the window's right edge
    cand = x - window + 1 + half
    if search is not None:
        cand = np.concatenate((np.clip(cand, -search, search), [-search]))
    cand = np.unique(cand)
    counts = _window_counts(x, cand, window)
    best = int(np.argmax(counts))
    return int(cand[best]), int(counts[best])


def accidental_centers(peak_center: int, cfg: CarConfig) -> list[int]:
    k_max = cfg.n_accidental if cfg.slot_side != "both" else math.ceil(cfg.n_accidental / 2)
    centers = []
    for k in range(1, k_max + 1):
        if cfg.slot_side in ("both", "right"):
            centers.append(peak_center + k * cfg.slot_spacing_ps)
        if cfg.slot_side in ("both", "left"):
            centers.append(peak_center - k * cfg.slot_spacing_ps)
    return centers[: cfg.n_accidental]


def estimate_car(intervals, car_cfg: CarConfig = CarConfig()) -> CarEstimate:
    """CAR as peak-window counts over the mean of off-peak window counts.

    The peak counts include the accidentals that fall under the peak.  If
    every accidental slot is empty the result is flagged ``lower_bound`` and
    the mean is replaced by one count spread over all slots.
    """
    x = np.sort(np.asarray(intervals, dtype=np.int64))
    if x.size == 0:
        raise AnalysisError("no intervals to analyse")
    w = int(car_cfg.window_ps)
    center, peak = find_peak(x, w, car_cfg.peak_search_ps)
    slot_c = accidental_centers(center, car_cfg)
    slots = _window_counts(x, slot_c, w)
    total = int(slots.sum())
    n = len(slot_c)
    if total > 0:
        mean = total / n
        car = peak / mean
        stderr = car * math.sqrt(1.0 / peak + 1.0 / total) if peak > 0 else 1.0 / mean
        lower = False
    else:
        mean = 0.0
        car = peak * n
        stderr = car * math.sqrt(1.0 / max(peak, 1) + 1.0)
        lower = True
    return CarEstimate(
        peak_counts=peak,
        accidental_mean=mean,
        car=float(car),
        stderr=float(stderr),
        peak_center_ps=center,
        accidental_counts=[int(s) for s in slots],
        accidental_centers_ps=[int(c) for c in slot_c],
        lower_bound=lower,
        n_intervals=int(x.size),
    )


def histogram_fwhm(h: Histogram) -> float:
    """Full width at half maximum with linear interpolation between bin centres."""
    y = np.asarray(h.counts, dtype=np.float64)
    if y.size == 0 or not y.any():
        raise AnalysisError("cannot take the FWHM of an empty histogram")
    y = np.concatenate(([0.0], y, [0.0]))
    p = int(np.argmax(y))
    half = y[p] / 2.0
    i = p
    while y[i - 1] >= half:
        i -= 1
    # crossing between i-1 (below) and i (at or above)
    left = (i - 1) + (half - y[i - 1]) / (y[i] - y[i - 1])
    j = p
    while y[j + 1] >= half:
        j += 1
    right = j + (y[j] - half) / (y[j] - y[j + 1])
    return float((right - left) * h.bin_width_ps)


def singles_phase_histogram(tags, channel: Channel, rep_rate_hz: float, bin_width_ps: int) -> Histogram:
    """Histogram of detection times modulo the pulse period."""
    period = 1e12 / rep_rate_hz
    if abs(period - round(period)) > 1e-9 * period:
        raise AnalysisError("pulse period is not an integer number of picoseconds")
    period = int(round(period))
    times, chans = _split_channels(tags)
    phase = times[chans == channel] % period
    n_bins = -(-period // bin_width_ps)
    return build_histogram(phase, bin_width_ps, 0, n_bins)


def fit_periodic_peak(h: Histogram, period_ps: int, floor: float | None = 0.0) -> dict:
    """Fit a wrapped Gaussian plus a flat floor to a phase histogram.

    Neighbouring pulses overlap when the timing spread is a sizeable fraction
    of the period, so the raw half-maximum width overstates the single-pulse
    width; the fit recovers it.  ``floor`` is the expected flat background per
    bin (e.g. from the dark-count rate).  Pass ``None`` to fit it as well, but
    note that width and floor are nearly degenerate once sigma approaches a
    quarter of the period.
    """
    from scipy.optimize import curve_fit

    x = h.centers
    y = h.counts.astype(np.float64)
    if not y.any():
        raise AnalysisError("cannot fit an empty histogram")
    shifts = period_ps * np.arange(-4, 5)

    def wrapped(x, amp, center, sigma):
        d = x[:, None] - center - shifts[None, :]
        return amp * np.exp(-0.5 * (d / sigma) ** 2).sum(axis=1)

    c0 = float(x[np.argmax(y)])
    p0 = [y.max() - y.min(), c0, period_ps / 6.0]
    if floor is None:
        def model(x, amp, center, sigma, fl):
            return wrapped(x, amp, center, sigma) + fl

        p0.append(max(y.min(), 0.0))
    else:
        def model(x, amp, center, sigma):
            return wrapped(x, amp, center, sigma) + floor

    sigma_y = np.sqrt(np.maximum(y, 1.0))
    popt, pcov = curve_fit(model, x, y, p0=p0, sigma=sigma_y, absolute_sigma=True, maxfev=20000)
    perr = np.sqrt(np.diag(pcov))
    return {
        "fwhm_ps": float(abs(popt[2]) * FWHM_PER_SIGMA),
        "fwhm_err_ps": float(perr[2] * FWHM_PER_SIGMA),
        "center_ps": float(popt[1] % period_ps),
        "amplitude": float(popt[0]),
        "floor": float(popt[3]) if floor is None else float(floor),
    }


def recorded_range(tia: TiaConfig) -> tuple[int, int]:
    """Smallest and largest re-centred interval the TIA can record."""
    return -min(tia.max_interval_ps, tia.stop_delay_ps), tia.max_interval_ps


def analyze(tags, tia: TiaConfig = TiaConfig(), car_cfg: CarConfig = CarConfig()) -> CarEstimate:
    """Intervals plus CAR estimate, refusing slots the TIA could never fill."""
    lo, hi = recorded_range(tia)
    intervals = start_stop_intervals(tags, tia)
    est = estimate_car(intervals, car_cfg)
    half = car_cfg.window_ps // 2
    edges = [c - half for c in est.accidental_centers_ps] + [est.peak_center_ps - half]
    if min(edges) < lo or max(edges) + car_cfg.window_ps - 1 > hi:
        raise AnalysisError(
            f"counting windows reach outside the recorded interval range [{lo}, {hi}] ps; "
            "raise max_interval_ps / stop_delay_ps or use fewer accidental slots"
        )
    return est
