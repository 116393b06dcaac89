import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pairsim.model import DetectorParams, SourceParams
from pairsim.simulator import (
    Channel,
    PulseTrainConfig,
    RunConfig,
    TimeTag,
    simulate_run,
)
from pairsim.tia import (
    AnalysisError,
    CarConfig,
    TiaConfig,
    accidental_centers,
    analyze,
    build_histogram,
    estimate_car,
    fit_periodic_peak,
    histogram_fwhm,
    singles_phase_histogram,
    start_stop_intervals,
)

S, I = Channel.SIGNAL, Channel.IDLER


def stream(pairs):
    pairs = sorted(pairs)
    return np.array([p[0] for p in pairs], np.int64), np.array([p[1] for p in pairs], np.uint8)


def test_no_stops_gives_no_intervals():
    assert start_stop_intervals(stream([(0, I), (100, I)])).size == 0
    assert start_stop_intervals(stream([])).size == 0


def test_start_dead_time():
    tags = stream([(0, I), (20_000, I), (70_000, I), (10, S), (20_010, S), (70_030, S)])
    x = start_stop_intervals(tags, TiaConfig(start_dead_time_ps=50_000, max_interval_ps=1000, stop_delay_ps=1000))
    # the 20 ns start falls in the dead time of the first one
    assert x.tolist() == [10, 30]


def test_delay_cancels():
    tags = [TimeTag(1_000_000, I), TimeTag(1_000_010, S)]
    assert start_stop_intervals(tags).tolist() == [10]


def test_stop_before_start_within_delay_is_recorded_negative():
    tags = stream([(1_000_000, S), (1_000_300, I)])
    assert start_stop_intervals(tags).tolist() == [-300]


def test_swap_channels():
    tags = stream([(1_000_000, I), (1_000_010, S)])
    assert start_stop_intervals(tags, TiaConfig(swap_channels=True)).tolist() == [-10]


def test_histogram_examples():
    h = build_histogram([], 10, -50, 20)
    assert h.total == 0 and h.counts.size == 20
    h = build_histogram([0, 0, 0, 100], 10, -50, 20)
    assert h.counts[5] == 3 and h.counts[15] == 1 and h.total == 4
    with pytest.raises(AnalysisError):
        build_histogram([1], 10, 0, 0)
    csv = build_histogram([0, 5], 4, -4, 3).to_csv().splitlines()
    assert csv == ["bin_left_ps,count", "-4,0", "0,1", "4,1"]


@given(st.lists(st.integers(-10_000, 10_000), max_size=200), st.integers(1, 50), st.integers(-5000, 5000), st.integers(1, 300))
def test_histogram_conserves_counts(x, width, origin, n_bins):
    h = build_histogram(x, width, origin, n_bins)
    assert h.total + h.discarded == len(x)


def synthetic(peak=1000, per_slot=10, cfg=CarConfig()):
    x = [0] * peak
    for c in accidental_centers(0, cfg):
        x += [c] * per_slot
    return np.array(x)


def test_synthetic_car_100():
    est = estimate_car(synthetic())
    assert est.car == pytest.approx(100.0)
    # every centre in (-30, 30] captures the spike; the smallest wins
    assert est.peak_center_ps == -29
    assert est.accidental_mean == 10
    assert est.stderr == pytest.approx(100 * np.sqrt(1 / 1000 + 1 / 100))
    assert not est.lower_bound


def test_slot_order_and_sides():
    assert accidental_centers(0, CarConfig(n_accidental=3)) == [200, -200, 400]
    assert accidental_centers(5, CarConfig(n_accidental=2, slot_side="left")) == [-195, -395]
    assert accidental_centers(5, CarConfig(n_accidental=2, slot_side="right")) == [205, 405]


def test_left_and_right_slots_agree_on_flat_background():
    rng = np.random.default_rng(0)
    x = np.concatenate([rng.integers(-5000, 5000, 200_000), np.zeros(2000, np.int64)])
    left = estimate_car(x, CarConfig(slot_side="left"))
    right = estimate_car(x, CarConfig(slot_side="right"))
    assert abs(left.car - right.car) < 3 * np.hypot(left.stderr, right.stderr)


def test_lower_bound_flag():
    est = estimate_car(np.zeros(7, np.int64))
    assert est.lower_bound
    assert est.car == 70
    assert est.accidental_mean == 0


def test_empty_input_is_error():
    with pytest.raises(AnalysisError):
        estimate_car([])


def test_window_is_half_open():
    # window 60 around 0 covers [-30, 30)
    x = np.array([-30, 29, 30] + [200] * 0)
    est = estimate_car(x, CarConfig(peak_search_ps=0))
    assert est.peak_counts == 2


def test_peak_tie_goes_to_smallest_center():
    est = estimate_car(np.array([0, 1000]), CarConfig(peak_search_ps=None))
    assert est.peak_center_ps == 0 - 60 + 1 + 30


@settings(max_examples=50)
@given(st.lists(st.integers(-3000, 3000), min_size=1, max_size=150), st.integers(-100_000, 100_000))
def test_peak_search_shift_invariant(x, shift):
    cfg = CarConfig(peak_search_ps=None)
    a = estimate_car(np.array(x), cfg)
    b = estimate_car(np.array(x) + shift, cfg)
    assert b.peak_center_ps == a.peak_center_ps + shift
    assert b.car == a.car and b.peak_counts == a.peak_counts


@settings(max_examples=50)
@given(st.lists(st.tuples(st.integers(0, 500_000), st.sampled_from([0, 1])), max_size=120), st.integers(0, 60_000), st.integers(0, 60_000))
def test_start_dead_time_monotone(tags, d1, d2):
    lo, hi = sorted((d1, d2))
    t = stream(tags)
    n_lo = start_stop_intervals(t, TiaConfig(start_dead_time_ps=lo)).size
    n_hi = start_stop_intervals(t, TiaConfig(start_dead_time_ps=hi)).size
    assert n_hi <= n_lo


def test_fwhm_single_bin():
    h = build_histogram([7] * 50, 4, 0, 10)
    assert histogram_fwhm(h) <= 4


def test_fwhm_gaussian():
    rng = np.random.default_rng(1)
    x = np.rint(rng.normal(0, 27.6, 10**6)).astype(np.int64)
    h = build_histogram(x, 2, -300, 300)
    assert histogram_fwhm(h) == pytest.approx(65.0, abs=2.0)


def test_fwhm_empty_is_error():
    with pytest.raises(AnalysisError):
        histogram_fwhm(build_histogram([], 2, 0, 10))


def test_phase_histogram_trivial_cases():
    h = singles_phase_histogram(stream([]), S, 1e10, 4)
    assert h.total == 0 and h.counts.size == 25
    det = DetectorParams(1.0, 0.0, 0.0, 0)
    tags = simulate_run(SourceParams(mu=0.01), det, det, PulseTrainConfig(10**6, pulse_fwhm_ps=0.0), RunConfig(2))
    h = singles_phase_histogram(tags, S, 1e10, 4)
    assert np.count_nonzero(h.counts) == 1 and h.total == tags.count(S)


def test_phase_fit_recovers_width():
    rng = np.random.default_rng(3)
    times = 100 * rng.integers(1, 10**7, 400_000) + np.rint(rng.normal(50, 27.6, 400_000)).astype(np.int64)
    times = np.sort(times)
    h = singles_phase_histogram((times, np.zeros(times.size, np.uint8)), S, 1e10, 2)
    fit = fit_periodic_peak(h, 100)
    assert fit["fwhm_ps"] == pytest.approx(65.0, abs=1.0)
    assert fit["fwhm_err_ps"] < 1.0
    # the wrapped peak is broader than the single-pulse response
    assert histogram_fwhm(h) > 68


def test_phase_fit_with_floor():
    rng = np.random.default_rng(4)
    n, n_dark = 400_000, 50_000
    times = 100 * rng.integers(1, 10**7, n) + np.rint(rng.normal(30, 20.0, n)).astype(np.int64)
    times = np.sort(np.concatenate([times, rng.integers(0, 10**9, n_dark)]))
    h = singles_phase_histogram((times, np.zeros(times.size, np.uint8)), S, 1e10, 2)
    fit = fit_periodic_peak(h, 100, floor=n_dark / h.n_bins)
    assert fit["fwhm_ps"] == pytest.approx(20.0 * 2.354820045, abs=1.0)
    assert fit["center_ps"] == pytest.approx(31.0, abs=1.0)


def test_mc_histogram_peaks_at_period():
    det = DetectorParams(0.2, 100.0, 65.0, 0)
    tags = simulate_run(SourceParams(mu=0.12), det, det, PulseTrainConfig(5 * 10**7), RunConfig(5))
    x = start_stop_intervals(tags, TiaConfig(max_interval_ps=1000, stop_delay_ps=1000, start_dead_time_ps=0))
    h = build_histogram(x, 10, -450, 90)
    centers = h.left_edges + 5
    peak = centers[np.argmax(h.counts)]
    assert abs(peak) <= 10
    assert h.counts.max() > 5 * np.median(h.counts)
    # off-peak intervals cluster at multiples of the 100 ps period
    off = x[np.abs(x) >= 150]
    phase = (off + 50) % 100 - 50
    near = np.count_nonzero(np.abs(phase) < 15) / 30
    far = np.count_nonzero(np.abs(phase) >= 35) / 30
    assert near > 1.05 * far


def test_analyze_range_check():
    x = stream([(1_000_000, I), (1_000_010, S)])
    analyze(x)
    with pytest.raises(AnalysisError):
        analyze(x, TiaConfig(max_interval_ps=20_000), CarConfig(n_accidental=400))
    with pytest.raises(AnalysisError):
        analyze(x, TiaConfig(stop_delay_ps=500), CarConfig())


def test_car_config_validation():
    for bad in (dict(window_ps=0), dict(slot_spacing_ps=10), dict(n_accidental=0), dict(slot_side="up"), dict(peak_search_ps=-1)):
        with pytest.raises(ValueError):
            CarConfig(**bad)
    with pytest.raises(ValueError):
        TiaConfig(stop_delay_ps=-1)
