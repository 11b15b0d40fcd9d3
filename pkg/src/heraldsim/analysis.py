"""Coincidence metrics, bright/dark post-selection and peak-shape fitting."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Collection

import numpy as np
from scipy.optimize import minimize
from scipy.special import gammaln

from .errors import DegenerateInput, FitDiverged, InvalidParam, OrphanTag, UndefinedMetric
from .ionphysics import Outcome
from .sequence import CycleRecords, _MEAS_CODE
from .timetag import (
    PMT_CHANNELS,
    Channel,
    Histogram,
    TagStream,
    TagsLike,
    as_stream,
    centered_grid,
    cross_correlate,
)

TAU_GUESS = 7000.0  # ps


@dataclass(frozen=True)
class CoincidenceMetrics:
    signal: float
    background_per_bin: float
    sbr: float
    snr: float
    peak_bin_index: int
    n_background_bins: int

    @property
    def has_peak(self) -> bool:
        return self.signal > 0

    def as_dict(self) -> dict:
        return asdict(self)


def compute_metrics(hist: Histogram, exclude_halfwidth: int = 3) -> CoincidenceMetrics:
    """Zero-delay signal over the mean off-peak background.

    The background is the mean of all bins farther than ``exclude_halfwidth``
    bins from the zero-delay bin; the signal is the zero bin minus that mean.
    """
    if exclude_halfwidth < 0:
        raise InvalidParam("exclude_halfwidth must be nonnegative")
    if hist.n_bins < 2 * exclude_halfwidth + 10:
        raise InvalidParam(
            f"{hist.n_bins} bins is too few for exclude_halfwidth={exclude_halfwidth}"
        )
    z = hist.zero_bin
    if z is None:
        raise InvalidParam("histogram has no bin centered on zero delay")
    off = np.ones(hist.n_bins, bool)
    off[max(0, z - exclude_halfwidth) : z + exclude_halfwidth + 1] = False
    background = float(hist.counts[off].mean())
    if background <= 0:
        raise UndefinedMetric("background per bin is zero; SBR and SNR are undefined")
    signal = float(hist.counts[z]) - background
    return CoincidenceMetrics(
        signal=signal,
        background_per_bin=background,
        sbr=signal / background,
        snr=signal / math.sqrt(background),
        peak_bin_index=int(z),
        n_background_bins=int(off.sum()),
    )


def herald_histogram(tags: TagsLike, bin_width: int, half_range: int) -> Histogram:
    """APD-to-PMT delay histogram (both PMTs pooled) on a zero-centered grid."""
    t_min, t_max = centered_grid(bin_width, half_range)
    return cross_correlate(tags, Channel.APD854, PMT_CHANNELS, bin_width, t_min, t_max)


# ---------------------------------------------------------------------------
# post-selection


def cycle_of(times: np.ndarray, records: CycleRecords) -> np.ndarray:
    """Row index into ``records`` of the cycle containing each time.

    Cycle ``i`` spans from its window start to the next cycle's window start;
    the last cycle ends one cycle period after its window start.
    """
    ws = records.window_start
    if len(ws) == 0:
        if len(times):
            raise OrphanTag(f"{len(times)} tags but no cycle records")
        return np.empty(0, np.int64)
    if len(ws) > 1:
        span = (ws[-1] - ws[0]) / max(1, records.cycle_index[-1] - records.cycle_index[0])
        last_end = ws[-1] + int(math.ceil(span))
    else:
        last_end = np.iinfo(np.int64).max
    idx = np.searchsorted(ws, times, side="right") - 1
    orphan = (idx < 0) | (times >= last_end)
    if orphan.any():
        t = int(times[np.argmax(orphan)])
        raise OrphanTag(f"{int(orphan.sum())} tags lie outside every cycle (first at t={t} ps)")
    return idx


def postselect(
    tags: TagsLike,
    records: CycleRecords,
    keep: Collection[Outcome] = (Outcome.DARK,),
) -> TagStream:
    """Drop PMT tags from cycles whose state measurement is not in ``keep``.

    APD and marker tags pass through untouched.
    """
    stream = as_stream(tags)
    is_pmt = np.isin(stream.channels, np.array([int(c) for c in PMT_CHANNELS], np.uint8))
    rows = cycle_of(stream.times[is_pmt], records)
    codes = np.array([_MEAS_CODE[Outcome(k)] for k in keep], np.int8)
    ok = np.isin(records.measurement[rows], codes)
    keep_mask = np.ones(len(stream), bool)
    keep_mask[np.flatnonzero(is_pmt)[~ok]] = False
    return stream.mask(keep_mask)


def dark_exposure_fraction(records: CycleRecords) -> float:
    """Share of unblocked interaction windows whose cycle measured DARK.

    Accidental coincidences come from these windows only, so this is the
    expected ratio of post-selected to raw background.
    """
    active = ~records.locked_out
    n = int(active.sum())
    if n == 0:
        return float("nan")
    return float((records.dark & active).sum() / n)


# ---------------------------------------------------------------------------
# peak shape


@dataclass(frozen=True)
class FitResult:
    amplitude: float
    tau_minus: float
    tau_plus: float
    offset: float
    log_likelihood: float
    iterations: int = 0

    def as_dict(self) -> dict:
        return asdict(self)


def expected_shape(delta, amplitude, tau_minus, tau_plus, offset):
    """Expected counts per bin at delay ``delta`` (ps) for a double-sided exponential.

    Positive delays (PMT after APD) decay with ``tau_plus``, negative ones with
    ``tau_minus``.
    """
    delta = np.asarray(delta, dtype=float)
    tau = np.where(delta >= 0, tau_plus, tau_minus)
    return offset + amplitude * np.exp(-np.abs(delta) / tau)


def binned_shape(edges, amplitude, tau_minus, tau_plus, offset):
    """``expected_shape`` averaged over each bin [edges[i], edges[i+1])."""
    edges = np.asarray(edges, dtype=float)
    a, b = edges[:-1], edges[1:]
    pa, pb = np.maximum(a, 0.0), np.maximum(b, 0.0)
    pos = tau_plus * (np.exp(-pa / tau_plus) - np.exp(-pb / tau_plus))
    na, nb = np.minimum(a, 0.0), np.minimum(b, 0.0)
    neg = tau_minus * (np.exp(nb / tau_minus) - np.exp(na / tau_minus))
    return offset + amplitude * (pos + neg) / (b - a)


def _nll(theta, edges, counts, log_fact):
    # the simplex may stray far out in log-space; treat overflow as infinitely unlikely
    with np.errstate(all="ignore"):
        amp, tm, tp, off = np.exp(theta)
        mu = binned_shape(edges, amp, tm, tp, off)
        mu = np.maximum(mu, 1e-300)
        val = float(np.sum(mu - counts * np.log(mu)) + log_fact)
    return val if math.isfinite(val) else math.inf


def fit_peak(hist: Histogram, max_iter: int = 10_000) -> FitResult:
    """Poisson maximum-likelihood fit of the double-sided exponential to a fine histogram.

    Nelder-Mead in log-parameters (all four are positive); stops once the
    simplex spans less than 1e-6 in log-likelihood.
    """
    if hist.bin_width > 3000:
        raise InvalidParam(f"peak fit needs bins of at most 3 ns, got {hist.bin_width} ps")
    if hist.n_bins < 20:
        raise InvalidParam(f"peak fit needs at least 20 bins, got {hist.n_bins}")
    counts = hist.counts.astype(float)
    if not counts.any():
        raise DegenerateInput("histogram is empty")
    median = float(np.median(counts))
    amp0 = counts.max() - median
    if amp0 <= 0:
        amp0 = counts.max()
    off0 = median if median > 0 else max(1e-3, counts.mean() * 1e-2)
    theta0 = np.log([amp0, TAU_GUESS, TAU_GUESS, off0])
    edges = hist.edges.astype(float)
    log_fact = float(np.sum(gammaln(counts + 1)))
    res = minimize(
        _nll,
        theta0,
        args=(edges, counts, log_fact),
        method="Nelder-Mead",
        options={"maxiter": max_iter, "maxfev": 4 * max_iter, "fatol": 1e-6, "xatol": 1e6},
    )
    if not res.success or not np.isfinite(res.fun):
        raise FitDiverged(f"simplex did not converge: {res.message}")
    amp, tm, tp, off = np.exp(res.x)
    return FitResult(
        amplitude=float(amp),
        tau_minus=float(tm),
        tau_plus=float(tp),
        offset=float(off),
        log_likelihood=-float(res.fun),
        iterations=int(res.nit),
    )
