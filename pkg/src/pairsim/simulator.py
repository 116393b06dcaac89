"""Event-driven Monte Carlo of the pulsed pair source and its detectors.

A run is cut into blocks of pulses.  Each block draws from its own
counter-based generator keyed by ``(seed, block index, role)``, so blocks
can be simulated in any order, on any number of threads, and the merged
stream is always the same.

Per pulse the number of pairs and noise photons is Poissonian.  When the
total occupancy per pulse is small the engine jumps between occupied pulses
with geometric gaps instead of visiting every pulse, which keeps 1e11-pulse
runs at the low-pump operating point tractable.
"""

from __future__ import annotations

import math
import os
from collections.abc import Iterator
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import IntEnum
from typing import NamedTuple

import numpy as np

from . import _kernels
from .model import FWHM_PER_SIGMA, PS, DetectorParams, SourceParams

SPARSE_THRESHOLD = 0.05
DENSE_CHUNK = 1 << 20
INT64_MAX = np.iinfo(np.int64).max

ROLE_SOURCE = 0
ROLE_TIMING = 1
ROLE_DETECT = 2
ROLE_DARK_SIGNAL = 3
ROLE_DARK_IDLER = 4


class ConfigurationError(ValueError):
    pass


class Channel(IntEnum):
    SIGNAL = 0
    IDLER = 1


class TimeTag(NamedTuple):
    time_ps: int
    channel: Channel


@dataclass(frozen=True)
class PulseTrainConfig:
    n_pulses: int
    rep_rate_hz: float = 1e10
    pulse_fwhm_ps: float = 10.0
    dispersion_fwhm_signal_ps: float = 0.0
    dispersion_fwhm_idler_ps: float = 0.0

    def __post_init__(self):
        if int(self.n_pulses) != self.n_pulses or self.n_pulses < 1:
            raise ConfigurationError(f"n_pulses must be a positive integer, got {self.n_pulses!r}")
        object.__setattr__(self, "n_pulses", int(self.n_pulses))
        if not (math.isfinite(self.rep_rate_hz) and self.rep_rate_hz > 0):
            raise ConfigurationError("rep_rate_hz must be finite and > 0")
        period = 1.0 / (self.rep_rate_hz * PS)
        if abs(period - round(period)) > 1e-9 * period or round(period) < 1:
            raise ConfigurationError(
                f"pulse period {period!r} ps is not an integer number of picoseconds"
            )
        for name in ("pulse_fwhm_ps", "dispersion_fwhm_signal_ps", "dispersion_fwhm_idler_ps"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value >= 0):
                raise ConfigurationError(f"{name} must be finite and >= 0")

    @property
    def period_ps(self) -> int:
        return int(round(1.0 / (self.rep_rate_hz * PS)))

    @property
    def duration_ps(self) -> int:
        return int(self.n_pulses) * self.period_ps


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    block_size: int = 1 << 24

    def __post_init__(self):
        if int(self.block_size) != self.block_size or self.block_size < 1:
            raise ConfigurationError("block_size must be a positive integer")
        if int(self.seed) != self.seed or not 0 <= self.seed < 2**64:
            raise ConfigurationError("seed must be a 64-bit unsigned integer")
        object.__setattr__(self, "seed", int(self.seed))
        object.__setattr__(self, "block_size", int(self.block_size))


@dataclass
class Emissions:
    """Photons leaving the source, before detection."""

    time_ps: np.ndarray  # float64, absolute
    channel: np.ndarray  # uint8, output port after crosstalk
    origin: np.ndarray  # uint8, port the photon was born for
    pair_id: np.ndarray  # int64, -1 for noise photons

    def __len__(self):
        return self.time_ps.size


@dataclass
class TagStream:
    """Time-sorted detection tags of one run."""

    time_ps: np.ndarray
    channel: np.ndarray
    duration_ps: int = 0
    diagnostics: dict = field(default_factory=dict)

    def __len__(self):
        return self.time_ps.size

    def __iter__(self) -> Iterator[TimeTag]:
        for t, c in zip(self.time_ps.tolist(), self.channel.tolist()):
            yield TimeTag(t, Channel(c))

    def times(self, channel: Channel) -> np.ndarray:
        return self.time_ps[self.channel == channel]

    def count(self, channel: Channel) -> int:
        return int(np.count_nonzero(self.channel == channel))


def block_rng(seed: int, block: int, role: int) -> np.random.Generator:
    ss = np.random.SeedSequence(seed, spawn_key=(block, role))
    return np.random.Generator(np.random.Philox(ss))


def _sigma(fwhm: float) -> float:
    return fwhm / FWHM_PER_SIGMA


# --------------------------------------------------------------------------
# building blocks


def generate_dark_counts(rate_hz: float, duration_ps: int, rng: np.random.Generator) -> np.ndarray:
    """Homogeneous Poisson arrival times (float ps) in ``[0, duration_ps)``."""
    if rate_hz < 0:
        raise ValueError("dark count rate must be >= 0")
    if rate_hz == 0 or duration_ps <= 0:
        return np.empty(0, dtype=np.float64)
    mean_gap = 1.0 / (rate_hz * PS)
    expected = duration_ps / mean_gap
    chunk = int(expected + 6.0 * math.sqrt(expected) + 16)
    pieces = []
    t = 0.0
    while True:
        arrivals = t + np.cumsum(rng.exponential(mean_gap, size=chunk))
        inside = arrivals < duration_ps
        if not inside.all():
            pieces.append(arrivals[inside])
            break
        pieces.append(arrivals)
        t = arrivals[-1]
    return np.concatenate(pieces)


def dead_time_filter(times: np.ndarray, dead_time_ps: float) -> np.ndarray:
    """Non-paralyzable dead time over sorted integer timestamps."""
    times = np.asarray(times, dtype=np.int64)
    if dead_time_ps <= 0 or times.size < 2:
        return times
    return times[_kernels.dead_time_mask(times, int(math.ceil(dead_time_ps)))]


def apply_detector(
    photon_times: np.ndarray,
    det: DetectorParams,
    rng: np.random.Generator,
    dark_times: np.ndarray | None = None,
) -> np.ndarray:
    """Efficiency, Gaussian jitter, 1-ps quantisation and dead time.

    ``dark_times`` are merged in after jitter and before the dead-time filter.
    Tags that jitter to negative times are dropped.
    """
    photon_times = np.asarray(photon_times, dtype=np.float64)
    survived = photon_times[rng.random(photon_times.size) < det.efficiency]
    if det.jitter_fwhm_ps > 0:
        survived = survived + rng.normal(0.0, det.jitter_sigma_ps, survived.size)
    tags = np.rint(survived)
    if dark_times is not None:
        tags = np.concatenate((tags, np.rint(dark_times)))
    tags = np.sort(tags[tags >= 0]).astype(np.int64)
    return dead_time_filter(tags, det.dead_time_ps)


def _truncated_poisson_cdf(lam: float) -> np.ndarray:
    # CDF of Poisson(lam) conditioned on k >= 1, for k = 1..kmax
    pmf = []
    k = 1
    term = lam * math.exp(-lam)
    norm = -math.expm1(-lam)
    while True:
        pmf.append(term / norm)
        if (term / norm < 1e-18 and k > lam) or k > 200:
            break
        k += 1
        term *= lam / k
    cdf = np.cumsum(pmf)
    cdf[-1] = 1.0
    return cdf


def _occupied_pulses(n: int, lam: float, rng: np.random.Generator):
    """Indices (block-relative) of pulses with at least one event and their event counts."""
    if lam <= 0:
        return np.empty(0, np.int64), np.empty(0, np.int64)
    if lam < SPARSE_THRESHOLD:
        p = -math.expm1(-lam)
        expected = n * p
        chunk = int(expected + 6.0 * math.sqrt(expected) + 16)
        pieces = []
        last = -1
        while True:
            pos = last + np.cumsum(rng.geometric(p, size=chunk))
            if pos[-1] >= n:
                pieces.append(pos[pos < n])
                break
            pieces.append(pos)
            last = int(pos[-1])
        index = np.concatenate(pieces).astype(np.int64)
        cdf = _truncated_poisson_cdf(lam)
        counts = np.searchsorted(cdf, rng.random(index.size), side="right").astype(np.int64) + 1
        return index, counts
    idx_pieces, cnt_pieces = [], []
    for lo in range(0, n, DENSE_CHUNK):
        k = rng.poisson(lam, size=min(DENSE_CHUNK, n - lo))
        nz = np.flatnonzero(k)
        idx_pieces.append(nz + lo)
        cnt_pieces.append(k[nz])
    return np.concatenate(idx_pieces).astype(np.int64), np.concatenate(cnt_pieces).astype(np.int64)


def _split_counts(counts, source: SourceParams, rng):
    lam = source.mu + source.mu_noise_signal + source.mu_noise_idler
    p = np.array([source.mu, source.mu_noise_signal, source.mu_noise_idler]) / lam
    nonzero = p > 0
    if nonzero.sum() == 1:
        out = np.zeros((counts.size, 3), dtype=np.int64)
        out[:, int(np.flatnonzero(nonzero)[0])] = counts
        return out
    return rng.multinomial(counts, p)


def _expand_photons(pulse, split):
    """Per-photon pulse index, origin port and pair id from per-pulse event counts."""
    pairs, noise_s, noise_i = split[:, 0], split[:, 1], split[:, 2]
    pair_pulse = np.repeat(pulse, pairs)
    n_pairs = pair_pulse.size
    pair_id = np.arange(n_pairs, dtype=np.int64)
    ns_pulse = np.repeat(pulse, noise_s)
    ni_pulse = np.repeat(pulse, noise_i)
    ph_pulse = np.concatenate((pair_pulse, pair_pulse, ns_pulse, ni_pulse))
    origin = np.concatenate(
        (
            np.zeros(n_pairs, np.uint8),
            np.ones(n_pairs, np.uint8),
            np.zeros(ns_pulse.size, np.uint8),
            np.ones(ni_pulse.size, np.uint8),
        )
    )
    ph_pair = np.concatenate(
        (pair_id, pair_id, np.full(ns_pulse.size + ni_pulse.size, -1, np.int64))
    )
    return ph_pulse, origin, ph_pair


def _route(origin, crosstalk, rng):
    if crosstalk == 0.0:
        return origin.copy()
    if crosstalk == 1.0:
        return origin ^ np.uint8(1)
    return origin ^ (rng.random(origin.size) < crosstalk).astype(np.uint8)


def _emission_offsets(ph_pair, channel, train: PulseTrainConfig, rng):
    """Pump-pulse and dispersion offsets (float ps); pair photons share the pump offset."""
    offsets = np.zeros(ph_pair.size)
    sigma_pulse = _sigma(train.pulse_fwhm_ps)
    if sigma_pulse > 0 and ph_pair.size:
        is_pair = ph_pair >= 0
        ids, inverse = np.unique(ph_pair[is_pair], return_inverse=True)
        offsets[is_pair] = rng.normal(0.0, sigma_pulse, ids.size)[inverse]
        offsets[~is_pair] = rng.normal(0.0, sigma_pulse, int(np.count_nonzero(~is_pair)))
    disp = np.array([_sigma(train.dispersion_fwhm_signal_ps), _sigma(train.dispersion_fwhm_idler_ps)])
    if disp.any() and ph_pair.size:
        offsets += rng.normal(0.0, 1.0, ph_pair.size) * disp[channel]
    return offsets


def generate_pulse_events(
    pulse_index: int,
    source: SourceParams,
    train: PulseTrainConfig,
    rng: np.random.Generator,
) -> Emissions:
    """Photons emitted by one pump pulse, with crosstalk already applied."""
    if not 0 <= pulse_index < train.n_pulses:
        raise ConfigurationError("pulse_index outside the pulse train")
    split = np.array(
        [[rng.poisson(source.mu), rng.poisson(source.mu_noise_signal), rng.poisson(source.mu_noise_idler)]],
        dtype=np.int64,
    )
    _, origin, ph_pair = _expand_photons(np.array([pulse_index], np.int64), split)
    channel = _route(origin, source.crosstalk, rng)
    offsets = _emission_offsets(ph_pair, channel, train, rng)
    return Emissions(
        time_ps=pulse_index * float(train.period_ps) + offsets,
        channel=channel,
        origin=origin,
        pair_id=ph_pair,
    )


# --------------------------------------------------------------------------
# full runs


def _simulate_block(block, first_pulse, n, source, dets, train, seed):
    period = train.period_ps
    lam = source.mu + source.mu_noise_signal + source.mu_noise_idler
    rng_src = block_rng(seed, block, ROLE_SOURCE)
    rel, counts = _occupied_pulses(n, lam, rng_src)
    split = _split_counts(counts, source, rng_src) if counts.size else np.zeros((0, 3), np.int64)
    ph_pulse, origin, ph_pair = _expand_photons(rel + first_pulse, split)
    channel = _route(origin, source.crosstalk, rng_src)

    rng_det = block_rng(seed, block, ROLE_DETECT)
    eta = np.array([dets[0].efficiency, dets[1].efficiency])
    hit = rng_det.random(channel.size) < eta[channel]
    ph_pulse, ph_pair, channel = ph_pulse[hit], ph_pair[hit], channel[hit]

    rng_time = block_rng(seed, block, ROLE_TIMING)
    offsets = _emission_offsets(ph_pair, channel, train, rng_time)
    jitter = np.array([dets[0].jitter_sigma_ps, dets[1].jitter_sigma_ps])
    if jitter.any():
        offsets += rng_det.normal(0.0, 1.0, channel.size) * jitter[channel]
    times = ph_pulse * period + np.rint(offsets).astype(np.int64)

    out = []
    negative = 0
    span = n * period
    for ch, role in ((0, ROLE_DARK_SIGNAL), (1, ROLE_DARK_IDLER)):
        t = times[channel == ch]
        neg = t < 0
        negative += int(np.count_nonzero(neg))
        dark = generate_dark_counts(dets[ch].dark_rate_hz, span, block_rng(seed, block, role))
        dark = np.rint(dark).astype(np.int64) + first_pulse * period
        out.append(np.concatenate((t[~neg], dark)))
    stats = {"pairs": int(split[:, 0].sum()), "negative_dropped": negative}
    return out, stats


def _resolve_workers(workers):
    if workers is None:
        env = os.environ.get("PAIRSIM_THREADS")
        workers = int(env) if env else (os.cpu_count() or 1)
    if workers < 1:
        raise ConfigurationError("worker count must be >= 1")
    return workers


def simulate_run(
    source: SourceParams,
    det_s: DetectorParams,
    det_i: DetectorParams,
    train: PulseTrainConfig,
    run: RunConfig = RunConfig(),
    workers: int | None = None,
) -> TagStream:
    """Simulate ``train.n_pulses`` pump pulses and return the sorted tag stream.

    The result depends only on the parameters, the seed and the block size,
    never on ``workers``.
    """
    if not math.isclose(source.rep_rate_hz, train.rep_rate_hz, rel_tol=1e-12):
        raise ConfigurationError("source and pulse train disagree on the repetition rate")
    period = train.period_ps
    max_sigma = max(
        _sigma(train.pulse_fwhm_ps)
        + max(_sigma(train.dispersion_fwhm_signal_ps), _sigma(train.dispersion_fwhm_idler_ps))
        + max(det_s.jitter_sigma_ps, det_i.jitter_sigma_ps),
        1.0,
    )
    if train.n_pulses * period + 100 * max_sigma + period >= INT64_MAX:
        raise ConfigurationError("run too long: timestamps would overflow 64-bit picoseconds")

    n_pulses = int(train.n_pulses)
    bs = int(run.block_size)
    blocks = [(b, lo, min(bs, n_pulses - lo)) for b, lo in enumerate(range(0, n_pulses, bs))]
    dets = (det_s, det_i)

    def work(job):
        b, lo, n = job
        return _simulate_block(b, lo, n, source, dets, train, run.seed)

    workers = _resolve_workers(workers)
    if workers == 1 or len(blocks) == 1:
        results = [work(job) for job in blocks]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(work, blocks))

    per_channel = []
    diagnostics = {
        "pairs": sum(r[1]["pairs"] for r in results),
        "negative_dropped": sum(r[1]["negative_dropped"] for r in results),
    }
    for ch in (0, 1):
        t = np.concatenate([r[0][ch] for r in results]) if results else np.empty(0, np.int64)
        t = np.sort(t, kind="stable")
        before = t.size
        t = dead_time_filter(t, dets[ch].dead_time_ps)
        diagnostics[f"dead_time_dropped_{Channel(ch).name.lower()}"] = before - t.size
        per_channel.append(t)
    times, chan = _kernels.merge_sorted(per_channel[0], per_channel[1])
    return TagStream(
        time_ps=times,
        channel=chan,
        duration_ps=train.duration_ps,
        diagnostics=diagnostics,
    )
