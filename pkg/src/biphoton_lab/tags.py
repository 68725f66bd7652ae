"""Time-tag streams, merging, delays and the TTAG file format."""
from __future__ import annotations

import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, FormatError, OrderingError

log = logging.getLogger(__name__)

DEFAULT_RESOLUTION = 1e-12  # one tick = 1 ps
MIXED_CHANNEL = -1

MAGIC = b"TTAG"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<4sHQB")
RECORD_DTYPE = np.dtype([("channel", "u1"), ("ticks", "<u8")])  # packed, 9 bytes


def _frozen(a, dtype):
    a = np.array(a, dtype=dtype, copy=True)
    a.setflags(write=False)
    return a


def duration_ticks(duration, resolution=DEFAULT_RESOLUTION):
    return int(round(duration / resolution))


@dataclass(frozen=True, eq=False)
class TagStream:
    """Sorted detection times of one channel (or a merge of several).

    Ticks are held as int64 internally (the file format stores u64);
    `channels` is only set for merged streams and gives the per-tag id.
    """

    ticks: np.ndarray
    duration: float
    channel: int = 0
    resolution: float = DEFAULT_RESOLUTION
    channels: np.ndarray | None = None
    validate: bool = field(default=True, repr=False)

    def __post_init__(self):
        ticks = _frozen(self.ticks, np.int64)
        object.__setattr__(self, "ticks", ticks)
        if self.channels is not None:
            ch = _frozen(self.channels, np.int64)
            if ch.shape != ticks.shape:
                raise ConfigError("channels must match ticks in length")
            object.__setattr__(self, "channels", ch)
        if not (self.resolution > 0):
            raise ConfigError("resolution must be positive")
        if not (self.duration >= 0):
            raise ConfigError("duration must be non-negative")
        if self.validate and ticks.size:
            if np.any(ticks[1:] < ticks[:-1]):
                raise OrderingError(f"channel {self.channel}: ticks are not nondecreasing")
            if ticks[0] < 0 or ticks[-1] > self.max_tick:
                raise ConfigError(f"channel {self.channel}: ticks outside [0, duration]")

    @property
    def max_tick(self):
        return duration_ticks(self.duration, self.resolution)

    def __len__(self):
        return int(self.ticks.size)

    @property
    def times(self):
        """Tag times in seconds."""
        return self.ticks * self.resolution

    def with_ticks(self, ticks, channels=None):
        """Same metadata, new (already sorted) ticks."""
        return TagStream(ticks, self.duration, self.channel, self.resolution, channels)

    def select(self, channel):
        """Tags of one channel from a merged stream."""
        if self.channels is None:
            ticks = self.ticks if channel == self.channel else self.ticks[:0]
        else:
            ticks = self.ticks[self.channels == channel]
        return TagStream(ticks, self.duration, channel, self.resolution, validate=False)


def check_sorted(stream, name="stream"):
    t = stream.ticks
    if t.size > 1 and np.any(t[1:] < t[:-1]):
        raise OrderingError(f"{name} is not sorted")
    return stream


def check_stream(x, duration=None, channel=0, resolution=DEFAULT_RESOLUTION):
    """Coerce an array of ticks (or a TagStream) into a validated TagStream."""
    if isinstance(x, TagStream):
        return check_sorted(x)
    ticks = np.asarray(x)
    if ticks.ndim != 1:
        raise ConfigError("tick array must be one-dimensional")
    if ticks.size and not np.issubdtype(ticks.dtype, np.integer):
        raise ConfigError("ticks must be integers")
    if duration is None:
        duration = (int(ticks.max()) if ticks.size else 0) * resolution
    return TagStream(ticks.astype(np.int64), duration, channel, resolution)


def merge_streams(streams):
    """k-way merge; equal ticks are ordered by channel id, then input order."""
    streams = list(streams)
    if not streams:
        raise ConfigError("nothing to merge")
    res = streams[0].resolution
    if any(s.resolution != res for s in streams):
        raise ConfigError("cannot merge streams with different resolutions")
    for s in streams:
        check_sorted(s, f"channel {s.channel}")
    ids = {s.channel for s in streams if s.channels is None}
    for s in streams:
        if s.channels is not None:
            ids.update(np.unique(s.channels).tolist())
    duration = max(s.duration for s in streams)
    channel = ids.pop() if len(ids) == 1 else MIXED_CHANNEL
    if len(streams) == 1 and channel != MIXED_CHANNEL:
        return TagStream(streams[0].ticks, duration, channel, res, validate=False)

    ticks = np.concatenate([s.ticks for s in streams])
    chans = np.concatenate(
        [s.channels if s.channels is not None else np.full(len(s), s.channel, np.int64) for s in streams]
    )
    order = np.lexsort((np.arange(ticks.size), chans, ticks))
    ticks = ticks[order]
    chans = chans[order]
    if channel != MIXED_CHANNEL:
        return TagStream(ticks, duration, channel, res, validate=False)
    return TagStream(ticks, duration, channel, res, chans, validate=False)


def delay_stream(stream, delay, return_dropped=False):
    """Shift every tag by round(delay/resolution) ticks.

    Tags pushed past the duration (or below zero for negative delays) are
    dropped; the count is logged and optionally returned.
    """
    check_sorted(stream)
    shift = int(round(delay / stream.resolution))
    t = stream.ticks + shift
    keep = (t >= 0) & (t <= stream.max_tick)
    dropped = int(t.size - np.count_nonzero(keep))
    if dropped:
        log.info("delay_stream: dropped %d tags outside [0, duration]", dropped)
        t = t[keep]
        chans = stream.channels[keep] if stream.channels is not None else None
    else:
        chans = stream.channels
    out = TagStream(t, stream.duration, stream.channel, stream.resolution, chans, validate=False)
    return (out, dropped) if return_dropped else out


# --- TTAG files -------------------------------------------------------------

def write_ttag(path, streams):
    """Write one or more streams to a TTAG file; returns bytes written."""
    if isinstance(streams, TagStream):
        streams = [streams]
    merged = merge_streams(streams)
    chans = merged.channels if merged.channels is not None else np.full(len(merged), merged.channel, np.int64)
    ids = np.unique(np.concatenate([chans, [s.channel for s in streams if s.channels is None]]).astype(np.int64))
    if ids.size and (ids.min() < 0 or ids.max() > 255):
        raise ConfigError("channel ids must fit in u8")
    res_fs = int(round(merged.resolution * 1e15))
    rec = np.empty(len(merged), dtype=RECORD_DTYPE)
    rec["channel"] = chans
    rec["ticks"] = merged.ticks
    header = _HEADER.pack(MAGIC, FORMAT_VERSION, res_fs, len(ids))
    path = Path(path)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(rec.tobytes())
    return _HEADER.size + rec.nbytes


def read_ttag(path, duration=None):
    """Read a TTAG file into a dict {channel: TagStream}.

    The file carries no duration; pass it (from the run manifest) or the
    last tick is used.
    """
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size:
        raise FormatError(f"{path}: truncated header")
    magic, version, res_fs, n_ch = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    if version != FORMAT_VERSION:
        raise FormatError(f"{path}: unsupported format version {version}")
    if res_fs == 0:
        raise FormatError(f"{path}: zero resolution")
    body = memoryview(data)[_HEADER.size:]
    if len(body) % RECORD_DTYPE.itemsize:
        raise FormatError(f"{path}: truncated record")
    rec = np.frombuffer(body, dtype=RECORD_DTYPE)
    res = res_fs * 1e-15
    ticks = rec["ticks"]
    if ticks.size and ticks.max() > np.iinfo(np.int64).max:
        raise FormatError(f"{path}: tick overflow")
    ticks = ticks.astype(np.int64)
    chans = rec["channel"].astype(np.int64)
    if duration is None:
        duration = (int(ticks.max()) if ticks.size else 0) * res
    out = {}
    ids = np.unique(chans)
    if len(ids) > n_ch:
        raise FormatError(f"{path}: header declares {n_ch} channels, found {len(ids)}")
    for c in ids.tolist():
        t = ticks[chans == c]
        if t.size > 1 and np.any(t[1:] < t[:-1]):
            raise FormatError(f"{path}: channel {c} ticks are not nondecreasing")
        try:
            out[c] = TagStream(t, duration, c, res, validate=False)
        except ConfigError as e:
            raise FormatError(f"{path}: {e}") from e
        if t.size and t[-1] > out[c].max_tick:
            raise FormatError(f"{path}: channel {c} ticks exceed duration")
    return out


def poisson_ticks(rng, rate, start, stop, resolution=DEFAULT_RESOLUTION):
    """Sorted ticks of a homogeneous Poisson process on [start, stop) ticks."""
    span = stop - start
    if rate <= 0 or span <= 0:
        return np.empty(0, np.int64)
    n = rng.poisson(rate * span * resolution)
    t = rng.integers(start, stop, size=n, dtype=np.int64)
    t.sort()
    return t


def thin(rng, ticks, p):
    """Keep each entry independently with probability p."""
    if p >= 1:
        return ticks
    if p <= 0:
        return ticks[:0]
    return ticks[rng.random(ticks.size) < p]
