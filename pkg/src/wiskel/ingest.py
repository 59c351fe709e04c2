"""CSI record parsing, multi-receiver synchronization, and windowing.

Wire format (123 bytes per record, little-endian):

    magic        2 bytes   0xC5 0x1D
    receiver_id  u8
    seq          u32       transmitter packet counter
    amplitudes   114 x u8  per-subcarrier amplitude, raw 0..255
    crc          u16       CRC-16/CCITT-FALSE over the preceding 121 bytes

A session file (extension ``.csis``) is a plain concatenation of records from
any mix of receivers. A CSV debug format with header ``receiver,seq,a0..a113``
carries the same fields.

Synchronization aligns R per-receiver streams on the packet sequence number:
a sample is emitted only for seqs present on every receiver; seqs missing on
any receiver are dropped and counted. Sequence numbers may wrap at 2^32; a
decrease larger than the wrap window (default 2^31) is treated as a wrap,
any smaller decrease as stream corruption.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Iterable, Iterator, NamedTuple

import numpy as np

from .errors import (
    BadMagicError,
    ChecksumError,
    DataError,
    StreamCorruptionError,
    TruncatedRecordError,
)

__all__ = [
    "RECORD_SIZE",
    "MAGIC",
    "SUBCARRIERS",
    "NORMALIZATION",
    "DEFAULT_WRAP_WINDOW",
    "CsiRecord",
    "AlignedSample",
    "CsiWindow",
    "SyncStats",
    "crc16_ccitt",
    "encode_records",
    "encode_record",
    "parse_record",
    "parse_stream",
    "write_csv_records",
    "read_csv_records",
    "read_session_records",
    "split_by_receiver",
    "synchronize",
    "window",
    "windows_to_array",
    "ingest_session",
]

RECORD_SIZE = 123
MAGIC = b"\xc5\x1d"
SUBCARRIERS = 114
NORMALIZATION = 256.0
DEFAULT_WRAP_WINDOW = 2 ** 31
_SEQ_MODULUS = 2 ** 32


class CsiRecord(NamedTuple):
    receiver_id: int
    seq: int
    amplitudes: np.ndarray  # (114,) uint8


class AlignedSample(NamedTuple):
    seq: int
    vectors: np.ndarray  # (R, 114) float64, amplitudes / 256


class CsiWindow(NamedTuple):
    frame_index: int
    seqs: np.ndarray  # (w,) uint64, strictly increasing
    tensors: np.ndarray  # (R, 1, 114, w) float64


@dataclass
class SyncStats:
    aligned: int = 0
    dropped: int = 0
    duplicates: list = field(default_factory=list)
    wraps: int = 0

    def summary(self):
        dup = ", ".join(str(d) for d in self.duplicates)
        return (
            f"aligned={self.aligned} dropped={self.dropped} "
            f"duplicates=[{dup}] wraps={self.wraps}"
        )


# -- CRC ----------------------------------------------------------------------

def _make_crc_table():
    table = np.empty(256, dtype=np.uint16)
    for byte in range(256):
        crc = byte << 8
        for _ in range(8):
            crc = ((crc << 1) ^ 0x1021) if crc & 0x8000 else (crc << 1)
            crc &= 0xFFFF
        table[byte] = crc
    return table


_CRC_TABLE = _make_crc_table()


def crc16_ccitt(data):
    """CRC-16/CCITT-FALSE (poly 0x1021, init 0xFFFF, no reflection).

    ``data``: uint8 array of shape (..., L); the CRC runs along the last axis,
    so a batch of records is checksummed in one vectorized pass.
    """
    data = np.asarray(data, dtype=np.uint8)
    crc = np.full(data.shape[:-1], 0xFFFF, dtype=np.uint16)
    for i in range(data.shape[-1]):
        index = ((crc >> 8) ^ data[..., i]).astype(np.uint8)
        crc = ((crc << np.uint16(8)) ^ _CRC_TABLE[index]).astype(np.uint16)
    return crc if crc.ndim else np.uint16(crc)


# -- record encode/parse --------------------------------------------------------

def encode_records(receiver_ids, seqs, amplitudes):
    """Vectorized encoder: N records -> N * 123 bytes."""
    receiver_ids = np.asarray(receiver_ids, dtype=np.uint64)
    seqs = np.asarray(seqs, dtype=np.uint64)
    amplitudes = np.asarray(amplitudes)
    n = receiver_ids.shape[0]
    if seqs.shape != (n,) or amplitudes.shape != (n, SUBCARRIERS):
        raise DataError(
            f"encode_records got inconsistent shapes: receivers {receiver_ids.shape}, "
            f"seqs {seqs.shape}, amplitudes {amplitudes.shape}"
        )
    if receiver_ids.max(initial=0) > 0xFF:
        raise DataError("receiver_id exceeds one byte")
    if seqs.max(initial=0) >= _SEQ_MODULUS:
        raise DataError("seq exceeds 32 bits")
    amp = amplitudes.astype(np.float64)
    if amp.min(initial=0.0) < 0 or amp.max(initial=0.0) > 255:
        raise DataError("amplitudes must lie in [0, 255]")

    buf = np.empty((n, RECORD_SIZE), dtype=np.uint8)
    buf[:, 0] = MAGIC[0]
    buf[:, 1] = MAGIC[1]
    buf[:, 2] = receiver_ids.astype(np.uint8)
    for i in range(4):
        buf[:, 3 + i] = ((seqs >> np.uint64(8 * i)) & np.uint64(0xFF)).astype(np.uint8)
    buf[:, 7 : 7 + SUBCARRIERS] = amplitudes.astype(np.uint8)
    crc = crc16_ccitt(buf[:, : RECORD_SIZE - 2])
    buf[:, RECORD_SIZE - 2] = (crc & 0xFF).astype(np.uint8)
    buf[:, RECORD_SIZE - 1] = (crc >> 8).astype(np.uint8)
    return buf.tobytes()


def encode_record(record):
    """Encode a single CsiRecord to its 123-byte form."""
    return encode_records(
        np.array([record.receiver_id]),
        np.array([record.seq]),
        np.asarray(record.amplitudes, dtype=np.uint8)[None, :],
    )


def parse_record(data, offset=0):
    """Parse one record at ``offset``; validates magic, length, and CRC."""
    if len(data) - offset < RECORD_SIZE:
        raise TruncatedRecordError(
            f"record needs {RECORD_SIZE} bytes, found {len(data) - offset}",
            offset=offset,
        )
    raw = np.frombuffer(data, dtype=np.uint8, count=RECORD_SIZE, offset=offset)
    if bytes(raw[:2]) != MAGIC:
        raise BadMagicError(
            f"expected magic {MAGIC.hex()}, got {bytes(raw[:2]).hex()}", offset=offset
        )
    expected = int(raw[RECORD_SIZE - 2]) | (int(raw[RECORD_SIZE - 1]) << 8)
    actual = int(crc16_ccitt(raw[: RECORD_SIZE - 2]))
    if expected != actual:
        raise ChecksumError(
            f"CRC mismatch: stored 0x{expected:04x}, computed 0x{actual:04x}",
            offset=offset,
        )
    seq = int.from_bytes(bytes(raw[3:7]), "little")
    return CsiRecord(int(raw[2]), seq, raw[7 : 7 + SUBCARRIERS].copy())


def parse_stream(data):
    """Parse a concatenation of records -> (receiver_ids, seqs, amplitudes).

    Vectorized over the whole buffer; the first malformed record raises with
    its byte offset. A trailing partial record is a truncation error.
    """
    total = len(data)
    n, rem = divmod(total, RECORD_SIZE)
    if rem:
        raise TruncatedRecordError(
            f"trailing {rem} bytes do not form a whole {RECORD_SIZE}-byte record",
            offset=n * RECORD_SIZE,
        )
    if n == 0:
        return (
            np.zeros(0, dtype=np.uint8),
            np.zeros(0, dtype=np.uint64),
            np.zeros((0, SUBCARRIERS), dtype=np.uint8),
        )
    buf = np.frombuffer(data, dtype=np.uint8).reshape(n, RECORD_SIZE)
    bad_magic = (buf[:, 0] != MAGIC[0]) | (buf[:, 1] != MAGIC[1])
    if bad_magic.any():
        i = int(np.argmax(bad_magic))
        raise BadMagicError(
            f"expected magic {MAGIC.hex()}, got {bytes(buf[i, :2]).hex()}",
            offset=i * RECORD_SIZE,
        )
    stored = buf[:, RECORD_SIZE - 2].astype(np.uint16) | (
        buf[:, RECORD_SIZE - 1].astype(np.uint16) << np.uint16(8)
    )
    computed = crc16_ccitt(buf[:, : RECORD_SIZE - 2])
    bad_crc = stored != computed
    if bad_crc.any():
        i = int(np.argmax(bad_crc))
        raise ChecksumError(
            f"CRC mismatch: stored 0x{int(stored[i]):04x}, "
            f"computed 0x{int(computed[i]):04x}",
            offset=i * RECORD_SIZE,
        )
    receiver_ids = buf[:, 2].copy()
    seqs = sum(
        buf[:, 3 + i].astype(np.uint64) << np.uint64(8 * i) for i in range(4)
    )
    amplitudes = buf[:, 7 : 7 + SUBCARRIERS].copy()
    return receiver_ids, seqs, amplitudes


# -- CSV debug format -----------------------------------------------------------

_CSV_HEADER = ["receiver", "seq"] + [f"a{i}" for i in range(SUBCARRIERS)]


def write_csv_records(path, receiver_ids, seqs, amplitudes):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(_CSV_HEADER)
        for rid, seq, amp in zip(receiver_ids, seqs, amplitudes):
            writer.writerow([int(rid), int(seq)] + [int(a) for a in amp])


def read_csv_records(path):
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"empty CSV record file: {path}") from None
        if header != _CSV_HEADER:
            raise DataError(
                f"bad CSV record header in {path}: expected "
                f"'receiver,seq,a0..a{SUBCARRIERS - 1}'"
            )
        rows = list(reader)
    receiver_ids = np.empty(len(rows), dtype=np.uint8)
    seqs = np.empty(len(rows), dtype=np.uint64)
    amplitudes = np.empty((len(rows), SUBCARRIERS), dtype=np.uint8)
    for i, row in enumerate(rows):
        if len(row) != len(_CSV_HEADER):
            raise DataError(f"CSV row {i + 2} in {path} has {len(row)} fields")
        values = [int(v) for v in row]
        if not 0 <= values[0] <= 0xFF:
            raise DataError(f"CSV row {i + 2}: receiver {values[0]} out of range")
        if not 0 <= values[1] < _SEQ_MODULUS:
            raise DataError(f"CSV row {i + 2}: seq {values[1]} out of range")
        if any(not 0 <= a <= 255 for a in values[2:]):
            raise DataError(f"CSV row {i + 2}: amplitude out of range")
        receiver_ids[i] = values[0]
        seqs[i] = values[1]
        amplitudes[i] = values[2:]
    return receiver_ids, seqs, amplitudes


def read_session_records(path):
    """Read a ``.csis`` binary or ``.csv`` debug file into record arrays."""
    path = str(path)
    if path.endswith(".csv"):
        return read_csv_records(path)
    with open(path, "rb") as fh:
        return parse_stream(fh.read())


def split_by_receiver(receiver_ids, seqs, amplitudes):
    """Group record arrays into per-receiver (seqs, amplitudes) streams.

    Receiver ids must be exactly 0..R-1 for some R; file order is preserved
    within each receiver.
    """
    present = sorted(int(r) for r in np.unique(receiver_ids))
    if not present:
        raise DataError("no records found")
    if present != list(range(len(present))):
        raise DataError(
            f"receiver ids must be contiguous from 0, got {present}"
        )
    streams = []
    for rid in present:
        mask = receiver_ids == rid
        streams.append((seqs[mask], amplitudes[mask]))
    return streams


# -- synchronization --------------------------------------------------------------

class _Cursor:
    """Tracks one receiver stream: duplicate skipping, wrap unwrapping, ordering."""

    def __init__(self, receiver_id, iterator, wrap_window, stats):
        self.receiver_id = receiver_id
        self.iterator = iterator
        self.wrap_window = wrap_window
        self.stats = stats
        self.epoch = 0
        self.raw = None
        self.logical = None
        self.amplitudes = None
        self.exhausted = False

    def advance(self):
        """Move to the next non-duplicate record; returns False at end of stream."""
        while True:
            try:
                raw, amp = next(self.iterator)
            except StopIteration:
                self.exhausted = True
                return False
            raw = int(raw)
            if self.raw is not None:
                if raw == self.raw:
                    self.stats.duplicates[self.receiver_id] += 1
                    continue
                if raw < self.raw:
                    if self.raw - raw > self.wrap_window:
                        self.epoch += 1
                        self.stats.wraps += 1
                    else:
                        raise StreamCorruptionError(
                            f"seq decreased from {self.raw} to {raw} "
                            f"(not a wrap within window {self.wrap_window})",
                            receiver_id=self.receiver_id,
                        )
            self.raw = raw
            self.logical = self.epoch * _SEQ_MODULUS + raw
            self.amplitudes = amp
            return True


def synchronize(streams, wrap_window=DEFAULT_WRAP_WINDOW):
    """Align R per-receiver record streams by sequence number.

    ``streams[i]`` is an iterable of ``(seq, amplitudes)`` pairs for receiver
    ``i`` (or an ``(seqs, amplitudes)`` array pair). Emits one
    :class:`AlignedSample` per seq present on ALL receivers, in increasing
    order; seqs missing on any receiver are dropped and counted; consecutive
    duplicate seqs keep the first record. Returns ``(samples, stats)``.

    Inputs are consumed lazily, one record per receiver per round, so
    generator-backed streams need only O(1) buffering per receiver.
    """
    iterators = []
    for stream in streams:
        if isinstance(stream, tuple) and len(stream) == 2:
            seqs, amps = stream
            iterators.append(zip(np.asarray(seqs), np.asarray(amps)))
        else:
            iterators.append(iter(stream))
    stats = SyncStats(duplicates=[0] * len(iterators))
    cursors = [
        _Cursor(i, it, wrap_window, stats) for i, it in enumerate(iterators)
    ]
    samples = []
    if not cursors:
        return samples, stats
    for cursor in cursors:
        if not cursor.advance():
            return samples, stats
    while True:
        lowest = min(c.logical for c in cursors)
        if all(c.logical == lowest for c in cursors):
            vectors = np.stack(
                [np.asarray(c.amplitudes, dtype=np.float64) for c in cursors]
            )
            samples.append(
                AlignedSample(lowest % _SEQ_MODULUS, vectors / NORMALIZATION)
            )
            stats.aligned += 1
            movers = cursors
        else:
            stats.dropped += 1
            movers = [c for c in cursors if c.logical == lowest]
        done = False
        for cursor in movers:
            if not cursor.advance():
                done = True
        if done:
            return samples, stats


# -- windowing ----------------------------------------------------------------------

def window(samples, w=10, hop=10):
    """Group aligned samples into windows of ``w`` with stride ``hop``.

    Window j holds samples ``j*hop .. j*hop + w - 1``; any trailing partial
    window is discarded. Each window carries per-receiver tensors of shape
    (1, 114, w): subcarriers down the rows, time across the columns.
    """
    if w < 1 or hop < 1:
        raise DataError(f"window size and hop must be >= 1, got w={w}, hop={hop}")
    samples = list(samples)
    windows = []
    frame = 0
    start = 0
    while start + w <= len(samples):
        chunk = samples[start : start + w]
        seqs = np.array([s.seq for s in chunk], dtype=np.uint64)
        # (w, R, 114) -> (R, 114, w) -> (R, 1, 114, w)
        stacked = np.stack([s.vectors for s in chunk]).transpose(1, 2, 0)
        tensors = stacked[:, None, :, :]
        windows.append(CsiWindow(frame, seqs, tensors))
        frame += 1
        start += hop
    return windows


def windows_to_array(windows):
    """Stack CsiWindows into one (N, R, 1, 114, w) float64 array."""
    if not windows:
        return np.zeros((0, 0, 1, SUBCARRIERS, 0))
    return np.stack([wd.tensors for wd in windows])


def ingest_session(path, w=10, hop=10, wrap_window=DEFAULT_WRAP_WINDOW):
    """File -> aligned windows: parse, split by receiver, synchronize, window.

    Returns ``(windows, stats)``.
    """
    receiver_ids, seqs, amplitudes = read_session_records(path)
    streams = split_by_receiver(receiver_ids, seqs, amplitudes)
    samples, stats = synchronize(streams, wrap_window=wrap_window)
    return window(samples, w=w, hop=hop), stats
