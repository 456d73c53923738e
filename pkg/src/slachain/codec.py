"""Canonical byte encoding of blocks and ledger files.

All integers are big-endian.  ``str`` is a u32 byte length followed by UTF-8,
``blob`` is a u32 length followed by raw bytes.  A block body is::

    u64 height | 32 prev_hash | i64 timestamp (µs since 1970-01-01Z) | u32 n_tx | tx*

and a transaction::

    32 tx_id | str method | u32 n_args, str* | str submitter | u64 nonce
    | u32 n_endorsers, str* | u8 response_status | str response_tag
    | u8 validation | u32 n_reads, (str key, u8 present, [32 digest])*
    | u32 n_writes, (str key, blob value)*

``block_hash = SHA-256(body)``.  Decoding is strict (every byte is
accounted for and every flag is range-checked) so that any change to the
bytes either fails to decode or decodes to a different block.
"""

from __future__ import annotations

import datetime as dt
import hashlib
import struct

MAGIC = b"SLACHAIN"
FORMAT_VERSION = 1
HEADER = MAGIC + struct.pack(">H", FORMAT_VERSION)
RECORD_BLOCK = 1
RECORD_STATE = 2
EPOCH = dt.datetime(1970, 1, 1, tzinfo=dt.timezone.utc)

_U8 = struct.Struct(">B")
_U32 = struct.Struct(">I")
_U64 = struct.Struct(">Q")
_I64 = struct.Struct(">q")


class DecodeError(ValueError):
    pass


def sha256(data: bytes) -> bytes:
    return hashlib.sha256(data).digest()


def to_micros(instant: dt.datetime) -> int:
    delta = instant - EPOCH
    return (delta.days * 86400 + delta.seconds) * 1_000_000 + delta.microseconds


def from_micros(micros: int) -> dt.datetime:
    try:
        return EPOCH + dt.timedelta(microseconds=micros)
    except OverflowError:
        raise DecodeError(f"timestamp {micros} out of range") from None


class Writer:
    def __init__(self):
        self.parts: list[bytes] = []

    def u8(self, v):
        self.parts.append(_U8.pack(v))

    def u32(self, v):
        self.parts.append(_U32.pack(v))

    def u64(self, v):
        self.parts.append(_U64.pack(v))

    def i64(self, v):
        self.parts.append(_I64.pack(v))

    def raw(self, b: bytes):
        self.parts.append(bytes(b))

    def blob(self, b: bytes):
        self.u32(len(b))
        self.raw(b)

    def str(self, s: str):
        self.blob(s.encode("utf-8"))

    def getvalue(self) -> bytes:
        return b"".join(self.parts)


class Reader:
    def __init__(self, data: bytes, pos: int = 0, end: int | None = None):
        self.data = data
        self.pos = pos
        self.end = len(data) if end is None else end

    def take(self, n: int) -> bytes:
        if n < 0 or self.pos + n > self.end:
            raise DecodeError(f"need {n} bytes at offset {self.pos}, only {self.end - self.pos} left")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def u8(self):
        return _U8.unpack(self.take(1))[0]

    def u32(self):
        return _U32.unpack(self.take(4))[0]

    def u64(self):
        return _U64.unpack(self.take(8))[0]

    def i64(self):
        return _I64.unpack(self.take(8))[0]

    def blob(self) -> bytes:
        return self.take(self.u32())

    def str(self) -> str:
        raw = self.blob()
        try:
            return raw.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise DecodeError(f"invalid UTF-8 ending at offset {self.pos}: {exc}") from None

    def flag(self) -> bool:
        v = self.u8()
        if v not in (0, 1):
            raise DecodeError(f"flag byte {v} at offset {self.pos - 1}")
        return bool(v)

    def count(self, item_size: int = 1) -> int:
        n = self.u32()
        if n * item_size > self.end - self.pos:
            raise DecodeError(f"count {n} exceeds remaining bytes at offset {self.pos - 4}")
        return n

    def done(self):
        if self.pos != self.end:
            raise DecodeError(f"{self.end - self.pos} trailing bytes at offset {self.pos}")
