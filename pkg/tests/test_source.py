import math

import numpy as np
import pytest
from scipy import stats

from heraldsim.errors import InvalidChannel, InvalidParam
from heraldsim.source import (
    DetectorParams,
    SourceParams,
    herald_delays,
    herald_partner,
    poisson_in_windows,
    sample_dark_counts,
    sample_pair_times,
)
from heraldsim.timetag import Channel

MS = 10**9  # ps


def test_defaults():
    src, det = SourceParams(), DetectorParams()
    assert src.resonant_rate == 3500.0
    assert src.tau_cav == 7.0e-9
    assert src.p_abs == 1.0e-3
    assert det.eta_393 == 0.0186
    # APD herald clicks plus dark clicks add up to the measured 550/s
    assert src.resonant_rate * src.eta_854_herald + det.dark_rate_apd == pytest.approx(550.0)
    assert det.dark_rate_pmt == 55.0


@pytest.mark.parametrize(
    "make",
    [
        lambda: SourceParams(resonant_rate=-1),
        lambda: SourceParams(p_abs=2),
        lambda: SourceParams(tau_cav=0),
        lambda: DetectorParams(eta_393=-0.1),
        lambda: DetectorParams(dark_rate_pmt=-5),
    ],
)
def test_param_validation(make):
    with pytest.raises(InvalidParam):
        make()


class TestPairTimes:
    def test_zero_rate(self, rng):
        assert len(sample_pair_times(0.0, 0, 2 * MS, rng)) == 0

    def test_empty_window(self, rng):
        assert len(sample_pair_times(3500.0, 5, 5, rng)) == 0

    def test_bad_args(self, rng):
        with pytest.raises(InvalidParam):
            sample_pair_times(-1.0, 0, 1, rng)
        with pytest.raises(InvalidParam):
            sample_pair_times(1.0, 10, 0, rng)

    def test_mean_count_per_window(self, rng):
        # 3500/s over 2 ms windows: 7 pairs on average
        counts = np.array([len(sample_pair_times(3500.0, 0, 2 * MS, rng)) for _ in range(20_000)])
        assert abs(counts.mean() - 7.0) < 3 * math.sqrt(7.0 / len(counts))
        assert counts.var() == pytest.approx(7.0, rel=0.05)

    def test_sorted_and_in_range(self, rng):
        t = sample_pair_times(1e6, 100, 100 + 10**12, rng)
        assert np.all(np.diff(t) >= 0)
        assert t.min() >= 100 and t.max() < 100 + 10**12

    def test_inter_arrival_exponential(self, rng):
        rate = 3500.0
        t = sample_pair_times(rate, 0, 100 * 10**12, rng)
        gaps = np.diff(t) / 1e12
        assert gaps.mean() == pytest.approx(1 / rate, rel=0.05)
        assert stats.kstest(gaps, "expon", args=(0, 1 / rate)).pvalue > 0.001


class TestWindows:
    def test_disjoint_windows_are_poisson(self, rng):
        # concatenated windows must look like one homogeneous process
        W = 2 * MS
        starts = np.arange(50_000, dtype=np.int64) * (5 * MS)
        t, idx = poisson_in_windows(3500.0, starts, W, rng)
        assert np.all(np.diff(t) >= 0)
        off = t - starts[idx]
        assert off.min() >= 0 and off.max() < W
        live = idx * W + off  # remove the dead time between windows
        gaps = np.diff(np.sort(live)) / 1e12
        assert stats.kstest(gaps, "expon", args=(0, 1 / 3500.0)).pvalue > 0.001
        counts = np.bincount(idx, minlength=len(starts))
        assert abs(counts.mean() - 7.0) < 3 * math.sqrt(7.0 / len(starts))

    def test_zero_rate(self, rng):
        t, idx = poisson_in_windows(0.0, np.arange(10), 5, rng)
        assert len(t) == len(idx) == 0


class TestHerald:
    def test_no_efficiency_no_herald(self, rng):
        src = SourceParams(eta_854_herald=0.0)
        assert all(herald_partner(10**6, src, DetectorParams(), rng) is None for _ in range(10_000))

    def test_default_probability(self, rng):
        src, det = SourceParams(), DetectorParams()
        n = 200_000
        hits = [herald_partner(0, src, det, rng) for _ in range(n)]
        frac = sum(h is not None for h in hits) / n
        p = src.eta_854_herald
        assert abs(frac - p) < 3 * math.sqrt(p * (1 - p) / n)
        assert all(h.channel == Channel.APD854 for h in hits if h is not None)

    def test_delay_distribution(self, rng):
        d = herald_delays(200_000, SourceParams(), DetectorParams(), rng)
        assert d.min() >= 0
        assert d.mean() == pytest.approx(7000.0, rel=0.01)
        assert stats.kstest(d, "expon", args=(0, 7000.0)).pvalue > 0.001

    def test_jitter_widens(self, rng):
        plain = herald_delays(100_000, SourceParams(), DetectorParams(), rng)
        jittered = herald_delays(100_000, SourceParams(), DetectorParams(jitter_sigma=300.0), rng)
        assert jittered.var() == pytest.approx(plain.var() + 300.0**2, rel=0.05)


class TestDarkCounts:
    def test_marker_channel_rejected(self, rng):
        with pytest.raises(InvalidChannel):
            sample_dark_counts(10.0, Channel.CYCLE_START, 0, 10, rng)

    def test_poisson_total(self, rng):
        # 55/s over the 24 540 s interaction time
        T = 24_540 * 10**12
        s = sample_dark_counts(55.0, Channel.PMT393_A, 0, T, rng)
        mean = 55.0 * 24_540
        assert mean == pytest.approx(1.35e6, rel=1e-3)
        assert abs(len(s) - mean) < 3 * math.sqrt(mean)
        assert set(np.unique(s.channels)) == {int(Channel.PMT393_A)}

    def test_rate_product_closed_form(self):
        # accidental coincidences per 50 ns bin for the measured detector rates
        assert 550.0 * 55.0 * 50e-9 * 24_540 == pytest.approx(37.1, abs=0.05)
