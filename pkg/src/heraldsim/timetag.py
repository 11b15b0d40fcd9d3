"""Time-tag streams: representation, binary/CSV IO, merging and cross-correlation.

A stream is held columnar (one int64 array of picosecond times, one uint8
array of channel codes) because a full simulated run holds ~10^8 tags.
"""
from __future__ import annotations

import enum
import io
import os
import struct
from dataclasses import dataclass
from typing import BinaryIO, Iterable, Iterator, NamedTuple, Sequence, Union

import numpy as np
import pandas as pd

from .errors import FormatError, InvalidChannel, InvalidParam, IoError, OrderViolation

MAGIC = b"HTAG"
VERSION = 1
HEADER = struct.Struct("<4sB3xQ")
RECORD_DTYPE = np.dtype([("channel", "u1"), ("reserved", "V7"), ("time", "<i8")])
assert HEADER.size == 16 and RECORD_DTYPE.itemsize == 16

PS_PER_S = 10**12
_WRITE_CHUNK = 1 << 20


class Channel(enum.IntEnum):
    APD854 = 0
    PMT393_A = 1
    PMT393_B = 2
    CYCLE_START = 3
    CYCLE_DARK = 4
    CYCLE_BRIGHT = 5

    @property
    def is_marker(self) -> bool:
        return self >= Channel.CYCLE_START


PHOTON_CHANNELS = (Channel.APD854, Channel.PMT393_A, Channel.PMT393_B)
PMT_CHANNELS = (Channel.PMT393_A, Channel.PMT393_B)
MARKER_CHANNELS = (Channel.CYCLE_START, Channel.CYCLE_DARK, Channel.CYCLE_BRIGHT)


class TimeTag(NamedTuple):
    channel: Channel
    time: int


class TagStream:
    """Immutable, time-ordered sequence of time tags stored as two arrays."""

    __slots__ = ("times", "channels")

    def __init__(self, times, channels, *, check: bool = True):
        times = np.ascontiguousarray(times, dtype=np.int64)
        channels = np.ascontiguousarray(channels, dtype=np.uint8)
        if times.shape != channels.shape or times.ndim != 1:
            raise ValueError("times and channels must be 1-d arrays of equal length")
        if check:
            _check_order(times, channels)
        times.flags.writeable = False
        channels.flags.writeable = False
        self.times = times
        self.channels = channels

    @classmethod
    def empty(cls) -> "TagStream":
        return cls(np.empty(0, np.int64), np.empty(0, np.uint8), check=False)

    @classmethod
    def from_tags(cls, tags: Iterable[TimeTag]) -> "TagStream":
        tags = list(tags)
        if not tags:
            return cls.empty()
        ch, t = zip(*((int(tag[0]), int(tag[1])) for tag in tags))
        return cls(np.array(t, np.int64), np.array(ch, np.uint8))

    @classmethod
    def from_unsorted(cls, times, channels) -> "TagStream":
        times = np.asarray(times, dtype=np.int64)
        channels = np.asarray(channels, dtype=np.uint8)
        order = np.lexsort((channels, times))
        return cls(times[order], channels[order], check=False)

    def __len__(self) -> int:
        return len(self.times)

    def __iter__(self) -> Iterator[TimeTag]:
        for c, t in zip(self.channels.tolist(), self.times.tolist()):
            yield TimeTag(Channel(c), t)

    def __getitem__(self, i):
        if isinstance(i, slice):
            return TagStream(self.times[i], self.channels[i], check=False)
        return TimeTag(Channel(int(self.channels[i])), int(self.times[i]))

    def __eq__(self, other) -> bool:
        if not isinstance(other, TagStream):
            return NotImplemented
        return np.array_equal(self.times, other.times) and np.array_equal(
            self.channels, other.channels
        )

    def __repr__(self) -> str:
        return f"TagStream(n={len(self)})"

    def select(self, channels: Iterable[Channel]) -> np.ndarray:
        """Times of all tags on any of ``channels`` (sorted)."""
        mask = np.isin(self.channels, np.array([int(c) for c in channels], np.uint8))
        return self.times[mask]

    def mask(self, keep: np.ndarray) -> "TagStream":
        return TagStream(self.times[keep], self.channels[keep], check=False)

    def shifted(self, offset: int) -> "TagStream":
        return TagStream(self.times + np.int64(offset), self.channels, check=False)


TagsLike = Union[TagStream, Sequence[TimeTag]]


def as_stream(tags: TagsLike) -> TagStream:
    if isinstance(tags, TagStream):
        return tags
    return TagStream.from_tags(tags)


def _check_order(times: np.ndarray, channels: np.ndarray) -> None:
    if len(times) < 2:
        return
    dt = np.diff(times)
    bad = (dt < 0) | ((dt == 0) & (np.diff(channels.astype(np.int16)) < 0))
    if bad.any():
        i = int(np.argmax(bad))
        raise OrderViolation(
            f"tag {i + 1} (t={times[i + 1]}, ch={channels[i + 1]}) precedes "
            f"tag {i} (t={times[i]}, ch={channels[i]})"
        )


# ---------------------------------------------------------------------------
# binary / CSV IO


def _open(target, mode):
    if isinstance(target, (str, os.PathLike)):
        try:
            return open(target, mode), True
        except OSError as exc:
            raise IoError(str(exc)) from exc
    return target, False


def write_stream(tags: TagsLike, sink: Union[BinaryIO, str, os.PathLike]) -> int:
    """Write ``tags`` in the HTAG binary format; returns the number of bytes written."""
    stream = tags if isinstance(tags, TagStream) else as_stream(tags)
    if isinstance(tags, TagStream):
        _check_order(stream.times, stream.channels)
    fh, owned = _open(sink, "wb")
    n = len(stream)
    try:
        fh.write(HEADER.pack(MAGIC, VERSION, n))
        for lo in range(0, n, _WRITE_CHUNK):
            hi = min(lo + _WRITE_CHUNK, n)
            rec = np.zeros(hi - lo, dtype=RECORD_DTYPE)
            rec["channel"] = stream.channels[lo:hi]
            rec["time"] = stream.times[lo:hi]
            fh.write(rec.tobytes())
    except OSError as exc:
        raise IoError(str(exc)) from exc
    finally:
        if owned:
            fh.close()
    return HEADER.size + RECORD_DTYPE.itemsize * n


def read_stream(source: Union[BinaryIO, bytes, str, os.PathLike]) -> TagStream:
    if isinstance(source, (bytes, bytearray, memoryview)):
        data = bytes(source)
    else:
        fh, owned = _open(source, "rb")
        try:
            data = fh.read()
        except OSError as exc:
            raise IoError(str(exc)) from exc
        finally:
            if owned:
                fh.close()
    if len(data) < HEADER.size:
        raise FormatError(f"stream too short for header ({len(data)} bytes)")
    magic, version, count = HEADER.unpack_from(data)
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}")
    if version != VERSION:
        raise FormatError(f"unsupported format version {version}")
    if data[5:8] != b"\x00\x00\x00":
        raise FormatError("reserved header bytes must be zero")
    payload = len(data) - HEADER.size
    if payload % RECORD_DTYPE.itemsize:
        raise FormatError(f"truncated record: {payload} payload bytes is not a multiple of 16")
    if payload // RECORD_DTYPE.itemsize != count:
        raise FormatError(
            f"header announces {count} records, payload holds {payload // RECORD_DTYPE.itemsize}"
        )
    rec = np.frombuffer(data, dtype=RECORD_DTYPE, offset=HEADER.size)
    channels = rec["channel"].copy()
    if count and channels.max() > max(Channel):
        raise FormatError(f"unknown channel code {channels.max()}")
    return TagStream(rec["time"].copy(), channels)


def write_csv(tags: TagsLike, path, provenance: str | None = None) -> None:
    stream = as_stream(tags)
    names = np.array([c.name for c in Channel], dtype=object)
    df = pd.DataFrame({"channel": names[stream.channels], "time_ps": stream.times})
    with open(path, "w", newline="") as fh:
        if provenance:
            fh.write(f"# {provenance}\n")
        df.to_csv(fh, index=False)


def read_csv(path) -> TagStream:
    try:
        df = pd.read_csv(path, comment="#", dtype={"channel": str})
    except (OSError, pd.errors.ParserError, pd.errors.EmptyDataError) as exc:
        raise FormatError(f"{path}: {exc}") from exc
    if list(df.columns) != ["channel", "time_ps"]:
        raise FormatError(f"{path}: expected header 'channel,time_ps', got {list(df.columns)}")
    lookup = {c.name: int(c) for c in Channel} | {str(int(c)): int(c) for c in Channel}
    try:
        channels = np.array([lookup[s] for s in df["channel"]], np.uint8)
    except KeyError as exc:
        raise FormatError(f"{path}: unknown channel {exc.args[0]!r}") from None
    return TagStream(df["time_ps"].to_numpy(np.int64), channels)


def save_tags(tags: TagsLike, path, provenance: str | None = None) -> None:
    """Write to ``path``, choosing CSV for ``*.csv`` and HTAG binary otherwise."""
    if str(path).endswith(".csv"):
        write_csv(tags, path, provenance)
    else:
        write_stream(tags, path)


def load_tags(path) -> TagStream:
    if str(path).endswith(".csv"):
        return read_csv(path)
    return read_stream(path)


def merge_streams(a: TagsLike, b: TagsLike) -> TagStream:
    a, b = as_stream(a), as_stream(b)
    # as_stream on plain sequences already validated; arrays are re-checked here
    _check_order(a.times, a.channels)
    _check_order(b.times, b.channels)
    if not len(b):
        return a
    if not len(a):
        return b
    return TagStream.from_unsorted(
        np.concatenate([a.times, b.times]), np.concatenate([a.channels, b.channels])
    )


# ---------------------------------------------------------------------------
# histogramming


@dataclass(frozen=True)
class Histogram:
    bin_width: int
    t_min: int
    t_max: int
    counts: np.ndarray

    def __post_init__(self):
        check_grid(self.bin_width, self.t_min, self.t_max)
        counts = np.asarray(self.counts, dtype=np.int64)
        if counts.shape != (self.n_bins,):
            raise InvalidParam(f"expected {self.n_bins} counts, got {counts.shape}")
        if (counts < 0).any():
            raise InvalidParam("histogram counts must be nonnegative")
        object.__setattr__(self, "counts", counts)

    @property
    def n_bins(self) -> int:
        return (self.t_max - self.t_min) // self.bin_width

    @property
    def edges(self) -> np.ndarray:
        return self.t_min + self.bin_width * np.arange(self.n_bins + 1, dtype=np.int64)

    @property
    def centers(self) -> np.ndarray:
        return self.edges[:-1] + self.bin_width / 2

    @property
    def zero_bin(self) -> int | None:
        """Index of the bin centered on zero delay, or None."""
        twice_offset = -2 * self.t_min - self.bin_width
        if twice_offset < 0 or twice_offset % (2 * self.bin_width):
            return None
        idx = twice_offset // (2 * self.bin_width)
        return idx if idx < self.n_bins else None

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def to_csv(self, path, provenance: str | None = None) -> None:
        with open(path, "w", newline="") as fh:
            if provenance:
                fh.write(f"# {provenance}\n")
            fh.write("bin_center_ps,count\n")
            for c, n in zip(self.centers.tolist(), self.counts.tolist()):
                fh.write(f"{c:g},{n}\n" if c != int(c) else f"{int(c)},{n}\n")

    @classmethod
    def from_csv(cls, path) -> "Histogram":
        try:
            df = pd.read_csv(path, comment="#")
        except (OSError, pd.errors.ParserError, pd.errors.EmptyDataError) as exc:
            raise FormatError(f"{path}: {exc}") from exc
        if list(df.columns) != ["bin_center_ps", "count"]:
            raise FormatError(f"{path}: expected header 'bin_center_ps,count'")
        centers = df["bin_center_ps"].to_numpy(float)
        if len(centers) < 2:
            raise FormatError(f"{path}: need at least two bins")
        steps = np.diff(centers)
        width = steps[0]
        if width <= 0 or not np.allclose(steps, width) or width != round(width):
            raise FormatError(f"{path}: bin centers are not uniformly spaced on integer ps")
        width = int(round(width))
        t_min = centers[0] - width / 2
        if t_min != round(t_min):
            raise FormatError(f"{path}: bin edges are not integer picoseconds")
        t_min = int(round(t_min))
        counts = df["count"].to_numpy()
        if (counts != np.round(counts)).any():
            raise FormatError(f"{path}: non-integer counts")
        return cls(width, t_min, t_min + width * len(centers), counts.astype(np.int64))


def check_grid(bin_width: int, t_min: int, t_max: int) -> None:
    if bin_width <= 0:
        raise InvalidParam(f"bin_width must be positive, got {bin_width}")
    if t_max <= t_min:
        raise InvalidParam(f"empty range [{t_min}, {t_max})")
    if (t_max - t_min) % bin_width:
        raise InvalidParam(
            f"range {t_max - t_min} ps is not a whole number of {bin_width} ps bins"
        )


def centered_grid(bin_width: int, half_range: int) -> tuple[int, int]:
    """(t_min, t_max) for a grid with one bin centered on zero, covering ±half_range."""
    if bin_width <= 0 or bin_width % 2:
        raise InvalidParam("a zero-centered grid needs a positive, even bin width in ps")
    side = max(0, -(-(half_range - bin_width // 2) // bin_width))
    t_min = -bin_width // 2 - side * bin_width
    return t_min, -t_min


def _channel_set(ch) -> tuple[int, ...]:
    chans = (ch,) if isinstance(ch, (int, Channel, str)) else tuple(ch)
    out = []
    for c in chans:
        c = Channel[c] if isinstance(c, str) else Channel(c)
        if c.is_marker:
            raise InvalidChannel(f"{c.name} is a marker channel, not a photon channel")
        out.append(int(c))
    if not out:
        raise InvalidChannel("no channel given")
    return tuple(sorted(set(out)))


def pair_delays(times_a: np.ndarray, times_b: np.ndarray, t_min: int, t_max: int) -> np.ndarray:
    """All delays t_b - t_a falling in [t_min, t_max), via a sorted sweep.

    Cost is O((N_a + N_b) log N_b + pairs); both inputs must be sorted.
    """
    lo = np.searchsorted(times_b, times_a + t_min, side="left")
    hi = np.searchsorted(times_b, times_a + t_max, side="left")
    n = hi - lo
    total = int(n.sum())
    if total == 0:
        return np.empty(0, np.int64)
    has = n > 0
    a_idx = np.repeat(np.flatnonzero(has), n[has])
    starts = np.repeat(lo[has], n[has])
    within = np.arange(total) - np.repeat(np.cumsum(n[has]) - n[has], n[has])
    return times_b[starts + within] - times_a[a_idx]


def cross_correlate(
    tags: TagsLike,
    ch_a,
    ch_b,
    bin_width: int,
    t_min: int,
    t_max: int,
) -> Histogram:
    """Histogram of delays t_b - t_a for every (a, b) tag pair inside [t_min, t_max).

    ``ch_a`` and ``ch_b`` are a photon channel or a collection of them (e.g. both
    PMTs); the two sets must be disjoint.
    """
    stream = as_stream(tags)
    a, b = _channel_set(ch_a), _channel_set(ch_b)
    if set(a) & set(b):
        raise InvalidChannel("ch_a and ch_b must differ")
    check_grid(bin_width, t_min, t_max)
    delays = pair_delays(stream.select(a), stream.select(b), t_min, t_max)
    n_bins = (t_max - t_min) // bin_width
    idx = (delays - t_min) // bin_width
    counts = np.bincount(idx, minlength=n_bins)
    return Histogram(bin_width, t_min, t_max, counts)
