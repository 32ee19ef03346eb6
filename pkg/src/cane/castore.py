"""Immutable, deduplicating block store addressed by digest.

Every block is named by the digest of its bytes. Reads are verified: a block
whose bytes no longer hash to its id raises :class:`CorruptionError`, which is
distinct from :class:`NotFoundError` so callers can re-fetch from elsewhere.

Two backends share one implementation: :class:`BlockStore` keeps blocks in a
dict, :class:`FileBlockStore` keeps one file per block under
``blocks/<hex[0:2]>/<hex>``.
"""

from __future__ import annotations

import enum
import hashlib
import math
import os
import tempfile
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterator, Optional

import numpy as np

from .errors import BlockSizeError, CorruptionError, NotFoundError, SpecError, StoreIOError

DEFAULT_CHUNK_SIZE = 4096
DEFAULT_HASH_BITS = 512
DEFAULT_ALGORITHM = "sha512"
# Manifests, chunk lists and other metadata may exceed one data chunk.
DEFAULT_MAX_META_SIZE = 64 * 1024 * 1024

_ALGORITHMS: dict[str, Callable[[], "hashlib._Hash"]] = {
    "sha512": hashlib.sha512,
    "sha3_512": hashlib.sha3_512,
    "blake2b": lambda: hashlib.blake2b(digest_size=64),
}


def digest_bytes(data: bytes, algorithm: str = DEFAULT_ALGORITHM) -> bytes:
    try:
        h = _ALGORITHMS[algorithm]()
    except KeyError:
        raise SpecError(f"unknown digest algorithm {algorithm!r}") from None
    h.update(data)
    return h.digest()


@dataclass(frozen=True)
class BlockId:
    """Address of an immutable byte string.

    Equality and hashing use the digest bytes only; the algorithm tag is
    carried for display and for swapping digest families.
    """

    digest: bytes
    algorithm: str = field(default=DEFAULT_ALGORITHM, compare=False)

    def __post_init__(self):
        if len(self.digest) != DEFAULT_HASH_BITS // 8:
            raise ValueError(f"digest must be {DEFAULT_HASH_BITS // 8} bytes, got {len(self.digest)}")

    @classmethod
    def of(cls, data: bytes, algorithm: str = DEFAULT_ALGORITHM) -> "BlockId":
        return cls(digest_bytes(data, algorithm), algorithm)

    @classmethod
    def from_hex(cls, text: str, algorithm: str = DEFAULT_ALGORITHM) -> "BlockId":
        try:
            raw = bytes.fromhex(text.strip())
        except ValueError:
            raise NotFoundError(f"not a block id: {text!r}") from None
        if len(raw) != DEFAULT_HASH_BITS // 8:
            raise NotFoundError(f"not a block id: {text!r}")
        return cls(raw, algorithm)

    @property
    def hex(self) -> str:
        return self.digest.hex()

    def short(self, n: int = 12) -> str:
        return self.hex[:n]

    def __str__(self):
        return self.hex

    def __repr__(self):
        return f"BlockId({self.short()}…)"


ZERO_ID = BlockId(bytes(DEFAULT_HASH_BITS // 8))


class BlockKind(enum.Enum):
    DATA = "data"
    MANIFEST = "manifest"


@dataclass(frozen=True)
class StoreStats:
    unique_blocks: int = 0
    logical_bytes: int = 0
    physical_bytes: int = 0
    data_blocks: int = 0
    manifest_blocks: int = 0

    def as_dict(self) -> dict[str, int]:
        return {
            "unique_blocks": self.unique_blocks,
            "logical_bytes": self.logical_bytes,
            "physical_bytes": self.physical_bytes,
            "data_blocks": self.data_blocks,
            "manifest_blocks": self.manifest_blocks,
        }


class BlockStore:
    """In-memory block store; the base for on-disk stores.

    ``fallback`` is an optional callable ``BlockId -> bytes`` consulted when a
    block is absent or corrupt locally (the network tier). Fetched bytes are
    verified before they are cached.
    """

    def __init__(
        self,
        chunk_size: int = DEFAULT_CHUNK_SIZE,
        algorithm: str = DEFAULT_ALGORITHM,
        hash_bits: int = DEFAULT_HASH_BITS,
        max_meta_size: int = DEFAULT_MAX_META_SIZE,
        fallback: Optional[Callable[[BlockId], bytes]] = None,
    ):
        if chunk_size <= 0:
            raise SpecError("chunk_size must be positive")
        if hash_bits != DEFAULT_HASH_BITS:
            raise SpecError(f"only {DEFAULT_HASH_BITS}-bit digests are supported")
        if algorithm not in _ALGORITHMS:
            raise SpecError(f"unknown digest algorithm {algorithm!r}")
        self.chunk_size = chunk_size
        self.algorithm = algorithm
        self.hash_bits = hash_bits
        self.max_meta_size = max_meta_size
        self.fallback = fallback
        self._lock = threading.Lock()
        self._blocks: dict[bytes, bytes] = {}
        self._counters = StoreStats().as_dict()

    # backend hooks -------------------------------------------------------

    def _load(self, block_id: BlockId) -> Optional[bytes]:
        return self._blocks.get(block_id.digest)

    def _save(self, block_id: BlockId, data: bytes) -> None:
        self._blocks[block_id.digest] = bytes(data)

    def _exists(self, block_id: BlockId) -> bool:
        return block_id.digest in self._blocks

    def _iter_ids(self) -> Iterator[BlockId]:
        for d in list(self._blocks):
            yield BlockId(d, self.algorithm)

    def _persist_counters(self) -> None:
        pass

    # public API ----------------------------------------------------------

    def block_id(self, data: bytes) -> BlockId:
        return BlockId.of(data, self.algorithm)

    def put_block(self, data: bytes, kind: BlockKind = BlockKind.DATA) -> BlockId:
        limit = self.chunk_size if kind is BlockKind.DATA else self.max_meta_size
        if len(data) > limit:
            raise BlockSizeError(f"{kind.value} block of {len(data)} bytes exceeds limit {limit}")
        block_id = self.block_id(data)
        with self._lock:
            self._counters["logical_bytes"] += len(data)
            if not self._exists(block_id):
                self._save(block_id, data)
                self._counters["unique_blocks"] += 1
                self._counters["physical_bytes"] += len(data)
                key = "data_blocks" if kind is BlockKind.DATA else "manifest_blocks"
                self._counters[key] += 1
            self._persist_counters()
        return block_id

    def get_block(self, block_id: BlockId) -> bytes:
        data = self._load(block_id)
        if data is None:
            if self.fallback is not None:
                return self._fetch(block_id)
            raise NotFoundError(f"block {block_id.hex} not found")
        if digest_bytes(data, self.algorithm) != block_id.digest:
            if self.fallback is not None:
                return self._fetch(block_id, repair=True)
            raise CorruptionError(f"block {block_id.hex} fails digest check")
        return data

    def _fetch(self, block_id: BlockId, repair: bool = False) -> bytes:
        data = self.fallback(block_id)
        if data is None:
            raise NotFoundError(f"block {block_id.hex} not found")
        if digest_bytes(data, self.algorithm) != block_id.digest:
            raise CorruptionError(f"fetched block {block_id.hex} fails digest check")
        if repair:
            with self._lock:
                self._save(block_id, data)
        else:
            # kind is unknown here; anything that fits a chunk counts as data
            kind = BlockKind.DATA if len(data) <= self.chunk_size else BlockKind.MANIFEST
            self.put_block(data, kind)
        return data

    def has_block(self, block_id: BlockId) -> bool:
        return self._exists(block_id)

    def __contains__(self, block_id: BlockId) -> bool:
        return self._exists(block_id)

    def block_ids(self) -> list[BlockId]:
        return sorted(self._iter_ids(), key=lambda b: b.digest)

    def chunk_and_store(self, data: bytes, chunk_size: Optional[int] = None) -> list[BlockId]:
        """Split ``data`` into fixed-size chunks and store each one."""
        size = self.chunk_size if chunk_size is None else chunk_size
        if size <= 0:
            raise SpecError("chunk_size must be positive")
        view = memoryview(data)
        return [self.put_block(bytes(view[i:i + size])) for i in range(0, len(data), size)]

    def reassemble(self, ids: list[BlockId]) -> bytes:
        return b"".join(self.get_block(i) for i in ids)

    def stats(self) -> StoreStats:
        with self._lock:
            return StoreStats(**self._counters)


class FileBlockStore(BlockStore):
    """Block store kept in a directory.

    Layout::

        <root>/store.cfg                 hash_bits=512 / chunk_size=4096
        <root>/stats.cfg                 persisted counters
        <root>/blocks/<hex[0:2]>/<hex>   raw block bytes, no header
    """

    CONFIG_NAME = "store.cfg"
    STATS_NAME = "stats.cfg"

    def __init__(self, root, chunk_size: Optional[int] = None, create: bool = True, **kwargs):
        self.root = Path(root)
        cfg_path = self.root / self.CONFIG_NAME
        if cfg_path.exists():
            cfg = _read_kv(cfg_path)
            stored_chunk = int(cfg.get("chunk_size", DEFAULT_CHUNK_SIZE))
            if chunk_size is not None and chunk_size != stored_chunk:
                raise SpecError(f"store at {self.root} uses chunk_size={stored_chunk}")
            super().__init__(
                chunk_size=stored_chunk,
                hash_bits=int(cfg.get("hash_bits", DEFAULT_HASH_BITS)),
                algorithm=cfg.get("algorithm", DEFAULT_ALGORITHM),
                **kwargs,
            )
        elif create:
            super().__init__(chunk_size=chunk_size or DEFAULT_CHUNK_SIZE, **kwargs)
            try:
                (self.root / "blocks").mkdir(parents=True, exist_ok=True)
                _write_kv_atomic(cfg_path, {
                    "hash_bits": self.hash_bits,
                    "chunk_size": self.chunk_size,
                    "algorithm": self.algorithm,
                })
            except OSError as exc:
                raise StoreIOError(str(exc)) from exc
        else:
            raise NotFoundError(f"no block store at {self.root}")
        stats_path = self.root / self.STATS_NAME
        if stats_path.exists():
            for key, value in _read_kv(stats_path).items():
                if key in self._counters:
                    self._counters[key] = int(value)

    def block_path(self, block_id: BlockId) -> Path:
        h = block_id.hex
        return self.root / "blocks" / h[:2] / h

    def _load(self, block_id):
        try:
            return self.block_path(block_id).read_bytes()
        except FileNotFoundError:
            return None
        except OSError as exc:
            raise StoreIOError(str(exc)) from exc

    def _save(self, block_id, data):
        path = self.block_path(block_id)
        try:
            path.parent.mkdir(parents=True, exist_ok=True)
            _atomic_write(path, data)
        except OSError as exc:
            raise StoreIOError(str(exc)) from exc

    def _exists(self, block_id):
        return self.block_path(block_id).exists()

    def _iter_ids(self):
        base = self.root / "blocks"
        if not base.exists():
            return
        for shard in base.iterdir():
            for f in shard.iterdir():
                if len(f.name) == 2 * DEFAULT_HASH_BITS // 8:
                    yield BlockId.from_hex(f.name, self.algorithm)

    def _persist_counters(self):
        try:
            _write_kv_atomic(self.root / self.STATS_NAME, self._counters)
        except OSError as exc:
            raise StoreIOError(str(exc)) from exc


def _atomic_write(path: Path, data: bytes) -> None:
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=".tmp-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _read_kv(path: Path) -> dict[str, str]:
    out = {}
    for line in path.read_text().splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, _, value = line.partition("=")
        out[key.strip()] = value.strip()
    return out


def _write_kv_atomic(path: Path, values: dict) -> None:
    text = "".join(f"{k}={v}\n" for k, v in values.items())
    _atomic_write(path, text.encode())


# collision probability -------------------------------------------------------

# Largest hash space for which the exact product is evaluated.
EXACT_SPACE_LIMIT_BITS = 20


def birthday_bound(n_items: int, hash_bits: int) -> float:
    """Union bound n(n-1)/2 * 2**-hash_bits, evaluated in log2 space, capped at 1."""
    if hash_bits < 1:
        raise ValueError("hash_bits must be >= 1")
    if n_items <= 1:
        return 0.0
    log2_pairs = math.log2(n_items) + math.log2(n_items - 1) - 1
    exponent = log2_pairs - hash_bits
    if exponent >= 0:
        return 1.0
    return 2.0 ** exponent


def exact_collision_probability(n_items: int, hash_bits: int) -> float:
    """1 - prod_{i<n} (1 - i/2**bits), summed as logs."""
    if hash_bits < 1:
        raise ValueError("hash_bits must be >= 1")
    if n_items <= 1:
        return 0.0
    space = 1 << hash_bits
    if n_items > space:
        return 1.0
    i = np.arange(1, n_items, dtype=np.float64)
    return float(-np.expm1(np.log1p(-i / space).sum()))


def collision_probability(n_items: int, hash_bits: int) -> float:
    """Probability that ``n_items`` uniformly random digests are not all distinct.

    Small hash spaces (at most ``2**EXACT_SPACE_LIMIT_BITS`` outcomes) use the
    exact product; larger ones use the birthday bound, which is tight there
    whenever the result is small.
    """
    if hash_bits < 1:
        raise ValueError("hash_bits must be >= 1")
    if n_items < 0:
        raise ValueError("n_items must be >= 0")
    if n_items <= 1:
        return 0.0
    if hash_bits <= EXACT_SPACE_LIMIT_BITS:
        return exact_collision_probability(n_items, hash_bits)
    return birthday_bound(n_items, hash_bits)
