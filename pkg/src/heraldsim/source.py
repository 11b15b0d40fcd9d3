"""SPDC pair generation, partner heralds on the APD, and detector dark counts.

All times are integer picoseconds. The pump is continuous, so pair creation
is a homogeneous Poisson process.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import InvalidChannel, InvalidParam
from .timetag import Channel, TagStream, TimeTag

PS_PER_S = 10**12

# Herald efficiency is a calibration: it puts the expected background-subtracted
# zero-delay coincidence count of the default 10 h run at 89.
DEFAULT_ETA_854 = 0.0623
DEFAULT_RESONANT_RATE = 3500.0
APD_TOTAL_RATE = 550.0
PMT_TOTAL_RATE = 55.0


@dataclass(frozen=True)
class SourceParams:
    resonant_rate: float = DEFAULT_RESONANT_RATE
    eta_854_herald: float = DEFAULT_ETA_854
    tau_cav: float = 7.0e-9
    p_abs: float = 1.0e-3

    def __post_init__(self):
        if not self.resonant_rate >= 0:
            raise InvalidParam("source.resonant_rate must be nonnegative")
        for name in ("eta_854_herald", "p_abs"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise InvalidParam(f"source.{name} must lie in [0, 1]")
        if not self.tau_cav > 0:
            raise InvalidParam("source.tau_cav must be positive")


@dataclass(frozen=True)
class DetectorParams:
    eta_393: float = 0.0186
    dark_rate_pmt: float = PMT_TOTAL_RATE
    # APD dark + stray-light clicks; with the default herald rate the APD totals 550/s
    dark_rate_apd: float = APD_TOTAL_RATE - DEFAULT_RESONANT_RATE * DEFAULT_ETA_854
    jitter_sigma: float = 0.0  # ps

    def __post_init__(self):
        if not 0.0 <= self.eta_393 <= 1.0:
            raise InvalidParam("detector.eta_393 must lie in [0, 1]")
        for name in ("dark_rate_pmt", "dark_rate_apd", "jitter_sigma"):
            if not getattr(self, name) >= 0:
                raise InvalidParam(f"detector.{name} must be nonnegative")


def _check_rate(rate: float, t0: int, t1: int) -> None:
    if not rate >= 0:
        raise InvalidParam(f"rate must be nonnegative, got {rate}")
    if t1 < t0:
        raise InvalidParam(f"window end {t1} precedes start {t0}")


def sample_pair_times(rate: float, t0: int, t1: int, rng: np.random.Generator) -> np.ndarray:
    """Sorted arrival times (ps) of a homogeneous Poisson process on [t0, t1)."""
    _check_rate(rate, t0, t1)
    n = rng.poisson(rate * (t1 - t0) / PS_PER_S) if rate else 0
    times = t0 + np.floor(rng.random(n) * (t1 - t0)).astype(np.int64)
    times.sort()
    return times


def poisson_in_windows(
    rate: float, starts: np.ndarray, length: int, rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray]:
    """Poisson events in many equal-length windows at once.

    Returns ``(times, window_index)`` sorted by time, assuming ``starts`` is
    increasing and the windows do not overlap.
    """
    if not rate >= 0:
        raise InvalidParam(f"rate must be nonnegative, got {rate}")
    if rate == 0 or len(starts) == 0:
        return np.empty(0, np.int64), np.empty(0, np.int64)
    counts = rng.poisson(rate * length / PS_PER_S, size=len(starts))
    idx = np.repeat(np.arange(len(starts)), counts)
    offsets = np.floor(rng.random(len(idx)) * length).astype(np.int64)
    times = starts[idx] + offsets
    order = np.argsort(times, kind="stable")
    return times[order], idx[order]


def herald_delays(
    n: int, params: SourceParams, detector: DetectorParams, rng: np.random.Generator
) -> np.ndarray:
    """Heralded-partner delay after pair creation: cavity ring-down plus detector jitter."""
    delay = rng.exponential(params.tau_cav * PS_PER_S, size=n)
    if detector.jitter_sigma:
        delay += rng.normal(0.0, detector.jitter_sigma, size=n)
    return np.rint(delay).astype(np.int64)


def herald_partner(
    pair_time: int, params: SourceParams, detector: DetectorParams, rng: np.random.Generator
) -> Optional[TimeTag]:
    if rng.random() >= params.eta_854_herald:
        return None
    t = pair_time + int(herald_delays(1, params, detector, rng)[0])
    return TimeTag(Channel.APD854, max(t, 0))


def sample_dark_counts(
    rate: float, channel: Channel, t0: int, t1: int, rng: np.random.Generator
) -> TagStream:
    channel = Channel(channel)
    if channel.is_marker:
        raise InvalidChannel(f"{channel.name} is a marker channel")
    times = sample_pair_times(rate, t0, t1, rng)
    return TagStream(times, np.full(len(times), int(channel), np.uint8), check=False)
