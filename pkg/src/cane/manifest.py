"""Canonical binary encodings for directory manifests and chunk lists.

Manifest layout (all integers big-endian)::

    0xCA 0x01
    prev flag (0|1)     [64-byte prev digest]
    history flag (0|1)  [64-byte history digest]
    u32 entry count
    per entry:
        u16 name length, name bytes
        u8 kind (0=file 1=dir 2=lwf 3=receptor)
        64-byte target digest (zero for lwf)
        [u16 inline length, inline bytes]   lwf only
        64-byte ACL digest (zero = default, world readable)

Entries are sorted bytewise by name, so equal directory contents always
encode to equal bytes. Decoding is strict: anything ``encode`` would not
produce is rejected, which makes ``encode(decode(x)) == x``.
"""

from __future__ import annotations

import enum
import re
import struct
from dataclasses import dataclass, field
from datetime import datetime, timedelta, timezone
from typing import Optional

from .castore import DEFAULT_HASH_BITS, ZERO_ID, BlockId
from .errors import InvalidNameError, KindError, StampError

MANIFEST_MAGIC = 0xCA
MANIFEST_VERSION = 0x01
CHUNKLIST_MAGIC = 0xC1
CHUNKLIST_VERSION = 0x01
DIGEST_LEN = DEFAULT_HASH_BITS // 8

RESERVED_NAMES = frozenset({b".", b"..", b"..."})
MAX_NAME_LEN = 0xFFFF


class EntryKind(enum.IntEnum):
    FILE = 0
    DIR = 1
    LWF = 2
    RECEPTOR = 3


def check_name(name: bytes) -> bytes:
    if isinstance(name, str):
        name = name.encode("utf-8")
    if not name:
        raise InvalidNameError("empty name")
    if name in RESERVED_NAMES:
        raise InvalidNameError(f"reserved name {name!r}")
    if b"/" in name or b"\x00" in name:
        raise InvalidNameError(f"illegal byte in name {name!r}")
    if len(name) > MAX_NAME_LEN:
        raise InvalidNameError("name too long")
    return name


@dataclass(frozen=True)
class ManifestEntry:
    name: bytes
    kind: EntryKind
    target: Optional[BlockId] = None
    inline: Optional[bytes] = None
    perms: Optional[BlockId] = None

    def __post_init__(self):
        object.__setattr__(self, "name", check_name(self.name))
        object.__setattr__(self, "kind", EntryKind(self.kind))
        if (self.inline is not None) != (self.kind is EntryKind.LWF):
            raise KindError("inline bytes are present iff the entry is a light-weight file")
        if self.kind is EntryKind.LWF:
            if self.target is not None:
                raise KindError("light-weight files carry no target")
            if len(self.inline) > 0xFFFF:
                raise KindError("inline data too long")
        elif self.target is None:
            raise KindError(f"{self.kind.name.lower()} entry needs a target")
        if self.perms == ZERO_ID:
            object.__setattr__(self, "perms", None)

    @property
    def text_name(self) -> str:
        return self.name.decode("utf-8", "surrogateescape")


@dataclass(frozen=True)
class Manifest:
    entries: tuple[ManifestEntry, ...] = ()
    prev: Optional[BlockId] = None
    history: Optional[BlockId] = None

    def __post_init__(self):
        ordered = tuple(sorted(self.entries, key=lambda e: e.name))
        for a, b in zip(ordered, ordered[1:]):
            if a.name == b.name:
                raise InvalidNameError(f"duplicate entry {a.name!r}")
        object.__setattr__(self, "entries", ordered)

    def get(self, name) -> Optional[ManifestEntry]:
        if isinstance(name, str):
            name = name.encode("utf-8")
        for e in self.entries:
            if e.name == name:
                return e
        return None

    def as_dict(self) -> dict[bytes, ManifestEntry]:
        return {e.name: e for e in self.entries}

    def encode(self) -> bytes:
        out = bytearray((MANIFEST_MAGIC, MANIFEST_VERSION))
        for link in (self.prev, self.history):
            if link is None:
                out.append(0)
            else:
                out.append(1)
                out += link.digest
        out += struct.pack(">I", len(self.entries))
        for e in self.entries:
            out += struct.pack(">H", len(e.name)) + e.name
            out.append(int(e.kind))
            out += (e.target or ZERO_ID).digest
            if e.kind is EntryKind.LWF:
                out += struct.pack(">H", len(e.inline)) + e.inline
            out += (e.perms or ZERO_ID).digest
        return bytes(out)

    @classmethod
    def decode(cls, data: bytes) -> "Manifest":
        r = _Reader(data)
        if r.u8() != MANIFEST_MAGIC or r.u8() != MANIFEST_VERSION:
            raise KindError("not a manifest block")
        links = []
        for _ in range(2):
            flag = r.u8()
            if flag not in (0, 1):
                raise KindError("bad link flag in manifest")
            links.append(BlockId(r.take(DIGEST_LEN)) if flag else None)
        count = r.u32()
        entries = []
        last = None
        for _ in range(count):
            name = r.take(r.u16())
            if last is not None and name <= last:
                raise KindError("manifest entries not in canonical order")
            last = name
            try:
                kind = EntryKind(r.u8())
            except ValueError:
                raise KindError("unknown entry kind") from None
            target = BlockId(r.take(DIGEST_LEN))
            inline = None
            if kind is EntryKind.LWF:
                if target != ZERO_ID:
                    raise KindError("light-weight file with non-zero target")
                target = None
                inline = r.take(r.u16())
            perms = BlockId(r.take(DIGEST_LEN))
            try:
                entries.append(ManifestEntry(name, kind, target, inline, perms))
            except InvalidNameError as exc:
                raise KindError(f"bad entry name: {exc}") from None
        r.finish()
        return cls(tuple(entries), links[0], links[1])


def encode_chunk_list(total_length: int, chunks: list[BlockId]) -> bytes:
    out = bytearray((CHUNKLIST_MAGIC, CHUNKLIST_VERSION))
    out += struct.pack(">QI", total_length, len(chunks))
    for c in chunks:
        out += c.digest
    return bytes(out)


def decode_chunk_list(data: bytes) -> tuple[int, list[BlockId]]:
    r = _Reader(data)
    if r.u8() != CHUNKLIST_MAGIC or r.u8() != CHUNKLIST_VERSION:
        raise KindError("not a chunk-list block")
    total, count = struct.unpack(">QI", r.take(12))
    chunks = [BlockId(r.take(DIGEST_LEN)) for _ in range(count)]
    r.finish()
    return total, chunks


class _Reader:
    def __init__(self, data: bytes):
        self.data = memoryview(data)
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise KindError("truncated block")
        out = bytes(self.data[self.pos:self.pos + n])
        self.pos += n
        return out

    def u8(self) -> int:
        return self.take(1)[0]

    def u16(self) -> int:
        return struct.unpack(">H", self.take(2))[0]

    def u32(self) -> int:
        return struct.unpack(">I", self.take(4))[0]

    def finish(self):
        if self.pos != len(self.data):
            raise KindError("trailing bytes after block payload")


# version stamps ---------------------------------------------------------------

_EPOCH = datetime(1970, 1, 1, tzinfo=timezone.utc)
_STAMP_RE = re.compile(
    r"^(\d{4}-\d{2}-\d{2}T\d{2}:\d{2}:\d{2})\.(\d{6})Z\.(\d+)$"
)


@dataclass(frozen=True, order=True)
class VersionStamp:
    """UTC time with microsecond precision plus a sequence disambiguator.

    Renders as ``2005-07-14T14:23:17.000001Z.1``.
    """

    utc_time: datetime = field(compare=True)
    seq: int = 0

    def __post_init__(self):
        t = self.utc_time
        if t.tzinfo is None:
            t = t.replace(tzinfo=timezone.utc)
        object.__setattr__(self, "utc_time", t.astimezone(timezone.utc))
        if self.seq < 0:
            raise StampError("sequence number must be non-negative")

    @classmethod
    def parse(cls, text: str) -> "VersionStamp":
        m = _STAMP_RE.match(text.strip())
        if not m:
            raise StampError(f"not a version stamp: {text!r}")
        base = datetime.strptime(m.group(1), "%Y-%m-%dT%H:%M:%S")
        t = base.replace(microsecond=int(m.group(2)), tzinfo=timezone.utc)
        return cls(t, int(m.group(3)))

    @classmethod
    def from_micros(cls, micros: int, seq: int = 0) -> "VersionStamp":
        t = _EPOCH + timedelta(microseconds=micros)
        return cls(t, seq)

    @property
    def micros(self) -> int:
        delta = self.utc_time - _EPOCH
        return (delta.days * 86400 + delta.seconds) * 1_000_000 + delta.microseconds

    def __str__(self):
        return self.utc_time.strftime("%Y-%m-%dT%H:%M:%S.%fZ") + f".{self.seq}"

