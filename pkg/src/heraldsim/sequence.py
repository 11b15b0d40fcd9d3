"""The repeating experimental cycle: preparation, interaction window, state measurement.

``run_experiment`` simulates every cycle of a run and returns the merged
time-tag stream together with one ground-truth record per cycle. Cycles are
processed in fixed-size chunks; chunk ``k`` draws from its own random
substream derived from ``(seed, k)``, so results do not depend on how chunks
are distributed over workers.
"""
from __future__ import annotations

import enum
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, fields
from typing import Iterator, Optional

import numpy as np
import pandas as pd

from . import ionphysics as ip
from .errors import FormatError, InvalidParam
from .ionphysics import IonParams, Outcome
from .source import DetectorParams, SourceParams, herald_delays, poisson_in_windows
from .timetag import Channel, TagStream

PS_PER_S = 10**12
CHUNK_CYCLES = 1 << 16

_MEAS_CODE = {Outcome.BRIGHT: 0, Outcome.DARK: 1, Outcome.SKIPPED: 2}
_MEAS_NAME = np.array(["BRIGHT", "DARK", "SKIPPED"], dtype=object)


def _ps(seconds: float) -> int:
    return int(round(seconds * PS_PER_S))


@dataclass(frozen=True)
class SequenceParams:
    rep_rate: float = 401.0
    t_cool: float = 100e-6
    t_pump: float = 60e-6
    t_prep: float = 7e-6
    t_window: float = 2e-3
    t_measure: float = 250e-6
    t_postseq: float = 300e-6  # pi-pulses + fluorescence detection, contains t_measure
    lock_duty: float = 0.85
    enable_shelving_397: bool = False
    run_duration: float = 36000.0
    # calibration: BRIGHT cycles misread as DARK, reproduces the residual
    # post-selected background; not part of the level physics
    p_dark_extra: float = 0.044

    def __post_init__(self):
        if not self.rep_rate > 0:
            raise InvalidParam("sequence.rep_rate must be positive")
        for f in fields(self):
            v = getattr(self, f.name)
            if f.name.startswith("t_") and not v >= 0:
                raise InvalidParam(f"sequence.{f.name} must be nonnegative")
        if self.t_measure > self.t_postseq:
            raise InvalidParam("sequence.t_measure must fit inside sequence.t_postseq")
        used = self.t_cool + self.t_pump + self.t_prep + self.t_window + self.t_postseq
        if used > 1.0 / self.rep_rate * (1 + 1e-12):
            raise InvalidParam(
                f"phases take {used * 1e3:.4f} ms, longer than the "
                f"{1e3 / self.rep_rate:.4f} ms cycle period"
            )
        for name in ("lock_duty", "p_dark_extra"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise InvalidParam(f"sequence.{name} must lie in [0, 1]")
        if not self.run_duration >= 0:
            raise InvalidParam("sequence.run_duration must be nonnegative")

    @property
    def n_cycles(self) -> int:
        return int(math.floor(self.run_duration * self.rep_rate + 1e-9))

    @property
    def period_ps(self) -> int:
        return _ps(1.0 / self.rep_rate)

    @property
    def window_offset_ps(self) -> int:
        return _ps(self.t_cool + self.t_pump + self.t_prep)

    @property
    def window_ps(self) -> int:
        return _ps(self.t_window)

    def expected_interaction_time(self) -> float:
        return self.n_cycles * self.t_window * self.lock_duty


@dataclass(frozen=True)
class CycleRecord:
    cycle_index: int
    window_start: int
    window_end: int
    prep_ok: bool
    absorbed: bool
    absorption_time: Optional[int]
    herald_emitted: bool
    spont_decayed: bool
    measurement: Outcome
    locked_out: bool


class Truth(enum.Enum):
    TRUE_ABSORPTION = "TRUE_ABSORPTION"
    SPONT_DECAY = "SPONT_DECAY"
    PREP_FAIL = "PREP_FAIL"
    CLEAN = "CLEAN"


def classify_cycle(record: CycleRecord) -> Truth:
    if record.absorbed:
        return Truth.TRUE_ABSORPTION
    if record.spont_decayed:
        return Truth.SPONT_DECAY
    if not record.prep_ok:
        return Truth.PREP_FAIL
    return Truth.CLEAN


_BOOL_COLS = ("prep_ok", "absorbed", "herald_emitted", "spont_decayed", "locked_out")
CSV_COLUMNS = [
    "cycle",
    "window_start_ps",
    "prep_ok",
    "absorbed",
    "absorption_time_ps",
    "herald_emitted",
    "spont_decayed",
    "measurement",
    "locked_out",
]


class CycleRecords:
    """Columnar store of per-cycle records; iterating yields ``CycleRecord``.

    ``absorption_time`` is -1 where no absorption happened. ``window_end`` is
    derived from ``window_ps`` when loaded from CSV.
    """

    def __init__(
        self,
        cycle_index,
        window_start,
        window_ps: int,
        prep_ok,
        absorbed,
        absorption_time,
        herald_emitted,
        spont_decayed,
        measurement,
        locked_out,
    ):
        self.cycle_index = np.asarray(cycle_index, np.int64)
        self.window_start = np.asarray(window_start, np.int64)
        self.window_ps = int(window_ps)
        self.prep_ok = np.asarray(prep_ok, bool)
        self.absorbed = np.asarray(absorbed, bool)
        self.absorption_time = np.asarray(absorption_time, np.int64)
        self.herald_emitted = np.asarray(herald_emitted, bool)
        self.spont_decayed = np.asarray(spont_decayed, bool)
        self.measurement = np.asarray(measurement, np.int8)
        self.locked_out = np.asarray(locked_out, bool)

    @property
    def window_end(self) -> np.ndarray:
        return self.window_start + self.window_ps

    @property
    def dark(self) -> np.ndarray:
        return self.measurement == _MEAS_CODE[Outcome.DARK]

    def __len__(self) -> int:
        return len(self.cycle_index)

    def __getitem__(self, i: int) -> CycleRecord:
        t = int(self.absorption_time[i])
        return CycleRecord(
            cycle_index=int(self.cycle_index[i]),
            window_start=int(self.window_start[i]),
            window_end=int(self.window_start[i]) + self.window_ps,
            prep_ok=bool(self.prep_ok[i]),
            absorbed=bool(self.absorbed[i]),
            absorption_time=t if t >= 0 else None,
            herald_emitted=bool(self.herald_emitted[i]),
            spont_decayed=bool(self.spont_decayed[i]),
            measurement=Outcome(_MEAS_NAME[self.measurement[i]]),
            locked_out=bool(self.locked_out[i]),
        )

    def __iter__(self) -> Iterator[CycleRecord]:
        for i in range(len(self)):
            yield self[i]

    def __eq__(self, other) -> bool:
        if not isinstance(other, CycleRecords):
            return NotImplemented
        return self.window_ps == other.window_ps and all(
            np.array_equal(getattr(self, k), getattr(other, k)) for k in self._columns()
        )

    @staticmethod
    def _columns():
        return (
            "cycle_index",
            "window_start",
            "prep_ok",
            "absorbed",
            "absorption_time",
            "herald_emitted",
            "spont_decayed",
            "measurement",
            "locked_out",
        )

    @classmethod
    def concat(cls, parts: list["CycleRecords"], window_ps: int) -> "CycleRecords":
        if not parts:
            return cls(*[[]] * 2, window_ps, *[[]] * 7)
        cols = {k: np.concatenate([getattr(p, k) for p in parts]) for k in cls._columns()}
        return cls(window_ps=window_ps, **cols)

    def truth(self) -> np.ndarray:
        """Vectorized ``classify_cycle``: array of Truth values."""
        out = np.full(len(self), Truth.CLEAN, dtype=object)
        out[~self.prep_ok] = Truth.PREP_FAIL
        out[self.spont_decayed] = Truth.SPONT_DECAY
        out[self.absorbed] = Truth.TRUE_ABSORPTION
        return out

    def interaction_time(self) -> float:
        """Summed length (s) of interaction windows with the source unblocked."""
        return int((~self.locked_out).sum()) * self.window_ps / PS_PER_S

    def to_csv(self, path, provenance: str | None = None) -> None:
        abs_t = pd.array(self.absorption_time, dtype="Int64")
        abs_t[self.absorption_time < 0] = pd.NA
        df = pd.DataFrame(
            {
                "cycle": self.cycle_index,
                "window_start_ps": self.window_start,
                "prep_ok": self.prep_ok.astype(np.int8),
                "absorbed": self.absorbed.astype(np.int8),
                "absorption_time_ps": abs_t,
                "herald_emitted": self.herald_emitted.astype(np.int8),
                "spont_decayed": self.spont_decayed.astype(np.int8),
                "measurement": _MEAS_NAME[self.measurement],
                "locked_out": self.locked_out.astype(np.int8),
            }
        )
        with open(path, "w", newline="") as fh:
            fh.write(f"# window_ps={self.window_ps}")
            fh.write(f" {provenance}\n" if provenance else "\n")
            df.to_csv(fh, index=False)

    @classmethod
    def from_csv(cls, path, window_ps: int | None = None) -> "CycleRecords":
        try:
            with open(path) as fh:
                first = fh.readline()
            df = pd.read_csv(path, comment="#", dtype={"measurement": str})
        except (OSError, pd.errors.ParserError, pd.errors.EmptyDataError) as exc:
            raise FormatError(f"{path}: {exc}") from exc
        if list(df.columns) != CSV_COLUMNS:
            raise FormatError(f"{path}: expected header {','.join(CSV_COLUMNS)}")
        if window_ps is None:
            for tok in first.lstrip("#").split():
                if tok.startswith("window_ps="):
                    window_ps = int(tok.split("=", 1)[1])
        if window_ps is None:
            window_ps = SequenceParams().window_ps
        codes = {v: k for k, v in enumerate(_MEAS_NAME)}
        try:
            meas = np.array([codes[m] for m in df["measurement"]], np.int8)
        except KeyError as exc:
            raise FormatError(f"{path}: unknown measurement {exc.args[0]!r}") from None
        for col in _BOOL_COLS:
            if not df[col].isin([0, 1]).all():
                raise FormatError(f"{path}: column {col} must be 0/1")
        return cls(
            df["cycle"].to_numpy(np.int64),
            df["window_start_ps"].to_numpy(np.int64),
            window_ps,
            df["prep_ok"].to_numpy(bool),
            df["absorbed"].to_numpy(bool),
            df["absorption_time_ps"].fillna(-1).to_numpy(np.int64),
            df["herald_emitted"].to_numpy(bool),
            df["spont_decayed"].to_numpy(bool),
            meas,
            df["locked_out"].to_numpy(bool),
        )


@dataclass
class ChunkResult:
    times: np.ndarray
    channels: np.ndarray
    records: CycleRecords


def _simulate_chunk(
    k: int,
    i0: int,
    i1: int,
    seq: SequenceParams,
    src: SourceParams,
    det: DetectorParams,
    ion: IonParams,
    seed: int,
) -> ChunkResult:
    phys_ss, extra_ss = np.random.SeedSequence([seed, k]).spawn(2)
    rng = np.random.default_rng(phys_ss)
    n = i1 - i0
    W = seq.window_ps
    cycle = np.arange(i0, i1, dtype=np.int64)
    starts = cycle * seq.period_ps
    ws = starts + seq.window_offset_ps

    locked = rng.random(n) >= seq.lock_duty
    prep_ok = rng.random(n) >= ion.p_prep_fail
    level = np.where(prep_ok, np.int8(ip.D_PREP), np.int8(ip.S))
    if seq.enable_shelving_397:
        level = ip.shelve_397_array(level)
    decay_t = ip.sample_decay_times(n, seq.t_window, ion, rng)
    decay_t[~prep_ok] = -1

    active = np.flatnonzero(~locked)
    pair_t, pair_w = poisson_in_windows(src.resonant_rate, ws[active], W, rng)
    pair_c = active[pair_w]
    heralded = rng.random(len(pair_t)) < src.eta_854_herald
    candidate = rng.random(len(pair_t)) < src.p_abs
    apd_t = pair_t[heralded] + herald_delays(int(heralded.sum()), src, det, rng)

    absorbed = np.zeros(n, bool)
    abs_time = np.full(n, -1, np.int64)
    herald_emitted = np.zeros(n, bool)
    pmt_t, pmt_ch = [], []
    for t, c in zip(pair_t[candidate].tolist(), pair_c[candidate].tolist()):
        if level[c] != ip.D_PREP or (0 <= decay_t[c] <= t - ws[c]):
            continue
        new_level, delay = ip.absorb_photon(ip.D_PREP, ion, rng)
        if delay is None:
            continue
        level[c] = new_level
        absorbed[c] = True
        abs_time[c] = t
        if rng.random() < det.eta_393:
            jitter = rng.normal(0.0, det.jitter_sigma) if det.jitter_sigma else 0.0
            pmt_t.append(t + delay + int(round(jitter)))
            pmt_ch.append(Channel.PMT393_A if rng.random() < 0.5 else Channel.PMT393_B)
            herald_emitted[c] = True

    spont = (decay_t >= 0) & ~absorbed
    level[spont] = ip.S

    apd_dark, _ = poisson_in_windows(det.dark_rate_apd, ws[active], W, rng)
    pmt_dark, _ = poisson_in_windows(det.dark_rate_pmt, ws[active], W, rng)
    pmt_dark_ch = np.where(rng.random(len(pmt_dark)) < 0.5, Channel.PMT393_A, Channel.PMT393_B)

    level = ip.pi_pulse_array(level, ip.S, ip.D_AUX, ion, rng)
    level = ip.pi_pulse_array(level, ip.D_PREP, ip.S, ion, rng)
    dark = ip.fluorescence_measure_array(level)
    if seq.p_dark_extra:
        misread = np.random.default_rng(extra_ss).random(n) < seq.p_dark_extra
        dark = dark | misread

    meas_t = ws + W + _ps(seq.t_postseq)
    times = np.concatenate(
        [
            starts,
            meas_t,
            apd_t,
            apd_dark,
            np.asarray(pmt_t, np.int64),
            pmt_dark,
        ]
    )
    channels = np.concatenate(
        [
            np.full(n, Channel.CYCLE_START, np.uint8),
            np.where(dark, Channel.CYCLE_DARK, Channel.CYCLE_BRIGHT).astype(np.uint8),
            np.full(len(apd_t), Channel.APD854, np.uint8),
            np.full(len(apd_dark), Channel.APD854, np.uint8),
            np.asarray(pmt_ch, np.uint8),
            pmt_dark_ch.astype(np.uint8),
        ]
    )
    order = np.lexsort((channels, times))
    records = CycleRecords(
        cycle,
        ws,
        W,
        prep_ok,
        absorbed,
        abs_time,
        herald_emitted,
        spont,
        dark.astype(np.int8),
        locked,
    )
    return ChunkResult(times[order], channels[order], records)


def _chunk_job(args):
    return _simulate_chunk(*args)


def run_experiment(
    seq: SequenceParams,
    src: SourceParams,
    det: DetectorParams,
    ion: IonParams,
    seed: int,
    workers: int = 1,
) -> tuple[TagStream, CycleRecords]:
    """Simulate the full run; returns the time-ordered tag stream and per-cycle records."""
    n = seq.n_cycles
    jobs = [
        (k, i0, min(i0 + CHUNK_CYCLES, n), seq, src, det, ion, int(seed))
        for k, i0 in enumerate(range(0, n, CHUNK_CYCLES))
    ]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(workers) as pool:
            parts = list(pool.map(_chunk_job, jobs, chunksize=4))
    else:
        parts = [_chunk_job(j) for j in jobs]
    if not parts:
        return TagStream.empty(), CycleRecords.concat([], seq.window_ps)
    # chunks cover disjoint, increasing time spans, so concatenation stays sorted
    times = np.concatenate([p.times for p in parts])
    channels = np.concatenate([p.channels for p in parts])
    records = CycleRecords.concat([p.records for p in parts], seq.window_ps)
    del parts
    return TagStream(times, channels, check=False), records


def predicted_dark_fraction(seq: SequenceParams, src: SourceParams, ion: IonParams) -> float:
    """Expected fraction of DARK outcomes per cycle, for error-free pi-pulses.

    A cycle reads DARK when the prepared ion has left D5/2(m=-5/2) for S1/2
    during the window (Raman transfer or spontaneous decay) or when the
    preparation failed and the ion was not shelved.
    """
    lam = 1.0 / ion.tau_D
    k = src.resonant_rate * src.p_abs * ion.branch_to_S
    W = seq.t_window
    left_active = -math.expm1(-(k + lam) * W)
    left_locked = -math.expm1(-lam * W)
    fail = 0.0 if seq.enable_shelving_397 else ion.p_prep_fail
    ok = 1.0 - ion.p_prep_fail
    q = seq.lock_duty * (fail + ok * left_active) + (1 - seq.lock_duty) * (fail + ok * left_locked)
    return q + (1 - q) * seq.p_dark_extra
