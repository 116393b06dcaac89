"""PTAG time-tag files.

Layout, all integers little-endian::

    b"PTAG"  u16 version (=1)  u32 header_len  header_len bytes of UTF-8 JSON
    then 9-byte records: u64 time_ps, u8 channel (0 = signal, 1 = idler)

Records must be sorted by time.  The reader streams them in chunks.
"""

from __future__ import annotations

import json
import os
import struct
from collections.abc import Iterator
from dataclasses import dataclass, field

import numpy as np

from .simulator import Channel, TagStream, TimeTag

MAGIC = b"PTAG"
VERSION = 1
PREAMBLE = struct.Struct("<4sHI")
RECORD = np.dtype([("time_ps", "<u8"), ("channel", "u1")])
assert RECORD.itemsize == 9

DEFAULT_CHUNK = 1 << 20


class TagFileError(ValueError):
    """Base class for malformed or unusable PTAG files."""


class BadMagicError(TagFileError):
    pass


class UnsupportedVersionError(TagFileError):
    pass


class TruncatedFileError(TagFileError):
    pass


class UnsortedTagsError(TagFileError):
    pass


class HeaderError(TagFileError):
    pass


class TagFileIOError(OSError):
    pass


@dataclass
class TagFileHeader:
    rep_rate_hz: float
    n_pulses: int
    master_seed: int
    parameters: dict = field(default_factory=dict)
    created: dict = field(default_factory=dict)
    format_version: int = VERSION
    # exact header bytes as read from disk, reused on rewrite
    raw_json: bytes | None = field(default=None, repr=False, compare=False)

    def to_dict(self):
        return {
            "format_version": self.format_version,
            "rep_rate_hz": self.rep_rate_hz,
            "n_pulses": self.n_pulses,
            "master_seed": self.master_seed,
            "parameters": self.parameters,
            "created": self.created,
        }

    def to_json_bytes(self) -> bytes:
        if self.raw_json is not None:
            return self.raw_json
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":")).encode("utf-8")

    @classmethod
    def from_json_bytes(cls, raw: bytes) -> TagFileHeader:
        try:
            d = json.loads(raw.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise HeaderError(f"header is not valid UTF-8 JSON: {exc}") from None
        if not isinstance(d, dict):
            raise HeaderError("header JSON must be an object")
        try:
            return cls(
                rep_rate_hz=d["rep_rate_hz"],
                n_pulses=d["n_pulses"],
                master_seed=d["master_seed"],
                parameters=d.get("parameters", {}),
                created=d.get("created", {}),
                format_version=d.get("format_version", VERSION),
                raw_json=raw,
            )
        except KeyError as exc:
            raise HeaderError(f"header is missing field {exc}") from None


def _as_arrays(tags):
    if isinstance(tags, TagStream):
        return tags.time_ps, tags.channel
    if isinstance(tags, tuple) and len(tags) == 2 and not isinstance(tags[0], TimeTag):
        return np.asarray(tags[0]), np.asarray(tags[1])
    tags = list(tags)
    return (
        np.array([t.time_ps for t in tags], dtype=np.int64),
        np.array([int(t.channel) for t in tags], dtype=np.uint8),
    )


class TagWriter:
    """Append sorted tag chunks to a new PTAG file."""

    def __init__(self, path, header: TagFileHeader):
        self.path = os.fspath(path)
        self._last = -1
        self.count = 0
        raw = header.to_json_bytes()
        try:
            self._fh = open(self.path, "wb")
            self._fh.write(PREAMBLE.pack(MAGIC, header.format_version, len(raw)))
            self._fh.write(raw)
        except OSError as exc:
            raise TagFileIOError(f"cannot write {self.path}: {exc.strerror or exc}") from exc

    def write(self, times, channels):
        times = np.asarray(times)
        channels = np.asarray(channels)
        if times.shape != channels.shape:
            raise ValueError("times and channels differ in length")
        if times.size == 0:
            return
        _check_chunk(times, channels, self._last)
        rec = np.empty(times.size, dtype=RECORD)
        rec["time_ps"] = times
        rec["channel"] = channels
        try:
            self._fh.write(rec.tobytes())
        except OSError as exc:
            raise TagFileIOError(f"cannot write {self.path}: {exc.strerror or exc}") from exc
        self._last = int(times[-1])
        self.count += times.size

    def close(self):
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def _check_chunk(times, channels, last):
    if times.min() < 0:
        raise ValueError("timestamps must be >= 0")
    if channels.min() < 0 or channels.max() > 255:
        raise ValueError("channel ids must fit in one byte")
    if int(times[0]) < last or (times.size > 1 and np.any(np.diff(times) < 0)):
        raise UnsortedTagsError("tags are not sorted by time")


def write_tags(path, header: TagFileHeader, tags, chunk: int = DEFAULT_CHUNK) -> None:
    """Write a complete PTAG file.  Unsorted input is rejected before any byte is written."""
    times, channels = _as_arrays(tags)
    if times.size:
        _check_chunk(times, channels, -1)
    with TagWriter(path, header) as w:
        for lo in range(0, times.size, chunk):
            w.write(times[lo : lo + chunk], channels[lo : lo + chunk])


class TagReader:
    """Streaming access to the records of an open PTAG file."""

    def __init__(self, fh, path, data_offset):
        self._fh = fh
        self.path = path
        self.data_offset = data_offset

    def chunks(self, size: int = DEFAULT_CHUNK) -> Iterator[tuple[np.ndarray, np.ndarray]]:
        """Yield ``(time_ps int64, channel uint8)`` arrays of at most ``size`` records."""
        fh = self._fh
        fh.seek(self.data_offset)
        offset = self.data_offset
        last = -1
        nbytes = size * RECORD.itemsize
        while True:
            buf = fh.read(nbytes)
            if not buf:
                return
            n_full, rest = divmod(len(buf), RECORD.itemsize)
            if rest:
                raise TruncatedFileError(
                    f"{self.path}: truncated record at byte offset "
                    f"{offset + n_full * RECORD.itemsize} ({rest} of {RECORD.itemsize} bytes)"
                )
            rec = np.frombuffer(buf, dtype=RECORD, count=n_full)
            t = rec["time_ps"]
            if t.size and t.max() > np.iinfo(np.int64).max:
                raise TagFileError(f"{self.path}: timestamp exceeds the signed 64-bit range")
            times = t.astype(np.int64)
            chans = rec["channel"].copy()
            if times.size:
                bad = np.flatnonzero(np.diff(np.concatenate(([last], times))) < 0)
                if bad.size:
                    pos = offset + int(bad[0]) * RECORD.itemsize
                    raise UnsortedTagsError(f"{self.path}: tags out of order at byte offset {pos}")
                last = int(times[-1])
            offset += len(buf)
            yield times, chans

    def __iter__(self) -> Iterator[TimeTag]:
        for times, chans in self.chunks():
            for t, c in zip(times.tolist(), chans.tolist()):
                yield TimeTag(t, Channel(c) if c <= 1 else c)

    def read_all(self) -> TagStream:
        parts = list(self.chunks())
        if not parts:
            return TagStream(np.empty(0, np.int64), np.empty(0, np.uint8))
        return TagStream(
            np.concatenate([p[0] for p in parts]), np.concatenate([p[1] for p in parts])
        )

    def close(self):
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def read_tags(path) -> tuple[TagFileHeader, TagReader]:
    """Open a PTAG file, validate its preamble and header, and return a streaming reader.

    The caller owns the reader and should close it (it is a context manager).
    """
    path = os.fspath(path)
    try:
        fh = open(path, "rb")
    except OSError as exc:
        raise TagFileIOError(f"cannot open {path}: {exc.strerror or exc}") from exc
    try:
        pre = fh.read(PREAMBLE.size)
        if len(pre) < 4 or pre[:4] != MAGIC:
            raise BadMagicError(f"{path}: bad magic {pre[:4]!r}, expected {MAGIC!r}")
        if len(pre) < PREAMBLE.size:
            raise TruncatedFileError(f"{path}: truncated preamble ({len(pre)} of {PREAMBLE.size} bytes)")
        _, version, header_len = PREAMBLE.unpack(pre)
        if version != VERSION:
            raise UnsupportedVersionError(f"{path}: unsupported format version {version}")
        raw = fh.read(header_len)
        if len(raw) < header_len:
            raise TruncatedFileError(
                f"{path}: truncated header at byte offset {PREAMBLE.size + len(raw)} "
                f"({len(raw)} of {header_len} bytes)"
            )
        header = TagFileHeader.from_json_bytes(raw)
    except BaseException:
        fh.close()
        raise
    return header, TagReader(fh, path, PREAMBLE.size + header_len)
