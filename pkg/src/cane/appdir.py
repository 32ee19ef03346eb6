"""Fat recursive AppDirs.

An AppDir manifest names a directory tree per platform and lists its
dependencies as AppDir manifest ids. Only hashes are embedded, so a
dependency shared by many applications is stored once, and materializing
for one platform touches only that platform's blocks.

Encoding (big-endian)::

    0xAD 0x01
    u16 name length, name (UTF-8)
    u16 platform count, each: u16 tag length, tag, 64-byte tree digest
    u16 dependency count, each: 64-byte AppDir manifest digest

Platforms are sorted by tag and dependencies by digest, so equal inputs give
equal ids regardless of argument order.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Optional, Union

from .castore import BlockId, BlockKind, BlockStore, digest_bytes
from .errors import CorruptionError, CycleError, FetchError, KindError, NotFoundError, PlatformError
from .manifest import DIGEST_LEN, EntryKind, Manifest, decode_chunk_list
from .merklefs import TreeHandle

APPDIR_MAGIC = 0xAD
APPDIR_VERSION = 0x01


@dataclass(frozen=True)
class AppDirManifest:
    name: str
    platforms: tuple[tuple[str, BlockId], ...]
    dependencies: tuple[BlockId, ...] = ()

    def __post_init__(self):
        plats = dict(self.platforms.items() if isinstance(self.platforms, Mapping) else self.platforms)
        object.__setattr__(self, "platforms", tuple(sorted(plats.items())))
        deps = sorted(set(self.dependencies), key=lambda b: b.digest)
        object.__setattr__(self, "dependencies", tuple(deps))

    def platform(self, tag: str) -> Optional[BlockId]:
        return dict(self.platforms).get(tag)

    def encode(self) -> bytes:
        name = self.name.encode("utf-8")
        out = bytearray((APPDIR_MAGIC, APPDIR_VERSION))
        out += struct.pack(">H", len(name)) + name
        out += struct.pack(">H", len(self.platforms))
        for tag, tree in self.platforms:
            t = tag.encode("utf-8")
            out += struct.pack(">H", len(t)) + t + tree.digest
        out += struct.pack(">H", len(self.dependencies))
        for dep in self.dependencies:
            out += dep.digest
        return bytes(out)

    @classmethod
    def decode(cls, data: bytes) -> "AppDirManifest":
        if data[:2] != bytes((APPDIR_MAGIC, APPDIR_VERSION)):
            raise KindError("not an AppDir manifest")
        pos = 2

        def take(n):
            nonlocal pos
            if pos + n > len(data):
                raise KindError("truncated AppDir manifest")
            chunk = data[pos:pos + n]
            pos += n
            return chunk

        def u16():
            return struct.unpack(">H", take(2))[0]

        name = take(u16()).decode("utf-8")
        platforms = []
        for _ in range(u16()):
            tag = take(u16()).decode("utf-8")
            platforms.append((tag, BlockId(take(DIGEST_LEN))))
        deps = [BlockId(take(DIGEST_LEN)) for _ in range(u16())]
        if pos != len(data):
            raise KindError("trailing bytes in AppDir manifest")
        return cls(name, tuple(platforms), tuple(deps))


def load_appdir(store: BlockStore, app: BlockId) -> AppDirManifest:
    return AppDirManifest.decode(store.get_block(app))


def build_appdir(
    store: BlockStore,
    name: str,
    platform_trees: Mapping[str, Union[TreeHandle, BlockId]],
    deps: Iterable[BlockId] = (),
) -> BlockId:
    """Store an AppDir manifest and return its id.

    Every dependency must already be in the store and decode as an AppDir.
    """
    plats = {tag: (t.root if isinstance(t, TreeHandle) else t) for tag, t in platform_trees.items()}
    deps = list(deps)
    for dep in deps:
        if not store.has_block(dep):
            raise NotFoundError(f"dependency {dep.hex} not in store")
        load_appdir(store, dep)
    manifest = AppDirManifest(name, tuple(plats.items()), tuple(deps))
    app_id = store.block_id(manifest.encode())
    _check_acyclic(store, app_id, manifest)
    return store.put_block(manifest.encode(), BlockKind.MANIFEST)


def _check_acyclic(store: BlockStore, app_id: BlockId, manifest: AppDirManifest) -> None:
    # Content addressing makes cycles unconstructible short of a digest
    # collision; the walk still guards against a corrupted graph.
    on_path = {app_id}
    done: set[BlockId] = set()

    def visit(m: AppDirManifest):
        for dep in m.dependencies:
            if dep in on_path:
                raise CycleError(f"dependency cycle through {dep.hex}")
            if dep in done:
                continue
            on_path.add(dep)
            visit(load_appdir(store, dep))
            on_path.discard(dep)
            done.add(dep)

    visit(manifest)


APP, TREE, DATA = "app", "tree", "data"


def _walk(read: Callable[[BlockId, str], bytes], app: BlockId, platform: str,
          empty: Optional[BlockId] = None) -> list[BlockId]:
    """Ordered, duplicate-free list of blocks needed to run ``app`` on ``platform``.

    ``read(id, role)`` supplies block bytes; ``role`` is ``"app"``, ``"tree"``
    or ``"data"``. Trees are walked by entry kind (directories to manifests,
    files to chunk lists, chunk lists to data), so data is never parsed and
    history links are never followed. The empty listing ``empty`` has no
    block and is skipped.
    """
    order: list[BlockId] = []
    seen: set[BlockId] = set()

    def add(b: BlockId) -> bool:
        if b in seen:
            return False
        seen.add(b)
        order.append(b)
        return True

    def walk_tree(dir_id: BlockId):
        if dir_id == empty or not add(dir_id):
            return
        for e in Manifest.decode(read(dir_id, TREE)).entries:
            if e.kind is EntryKind.DIR:
                walk_tree(e.target)
            elif e.kind is not EntryKind.LWF and add(e.target):
                for chunk in decode_chunk_list(read(e.target, TREE))[1]:
                    if add(chunk):
                        read(chunk, DATA)

    def walk_app(app_id: BlockId):
        if not add(app_id):
            return
        m = AppDirManifest.decode(read(app_id, APP))
        tree = m.platform(platform)
        if tree is None:
            raise PlatformError(platform, f"AppDir {m.name!r} ({app_id.short()})")
        walk_tree(tree)
        for dep in m.dependencies:
            walk_app(dep)

    walk_app(app)
    return order


def closure(store: BlockStore, app: BlockId, platform: str) -> set[BlockId]:
    return set(_walk(lambda b, role: store.get_block(b), app, platform, _empty_id(store)))


def _empty_id(store: BlockStore) -> BlockId:
    return store.block_id(Manifest().encode())


@dataclass
class FetchLog:
    """Blocks that had to be fetched, in first-request order.

    ``bytes_fetched`` counts platform tree blocks (manifests, chunk lists,
    data); AppDir manifests themselves are tallied in ``index_bytes_fetched``.
    """

    requested: list[BlockId] = field(default_factory=list)
    bytes_fetched: int = 0
    index_bytes_fetched: int = 0

    @property
    def total_bytes(self) -> int:
        return self.bytes_fetched + self.index_bytes_fetched


def materialize(
    app: BlockId,
    platform: str,
    fetcher: Union[BlockStore, Callable[[BlockId], bytes]],
    local: BlockStore,
) -> FetchLog:
    """Make every block of ``closure(app, platform)`` local, fetching each missing one once."""
    fetch = fetcher.get_block if isinstance(fetcher, BlockStore) else fetcher
    log = FetchLog()

    def read(block_id: BlockId, role: str) -> bytes:
        if local.has_block(block_id):
            return local.get_block(block_id)
        try:
            data = fetch(block_id)
        except Exception as exc:
            raise FetchError(block_id, exc) from exc
        if data is None:
            raise FetchError(block_id)
        if digest_bytes(data, local.algorithm) != block_id.digest:
            raise CorruptionError(f"fetched block {block_id.hex} fails digest check")
        local.put_block(data, BlockKind.DATA if role == DATA else BlockKind.MANIFEST)
        log.requested.append(block_id)
        if role == APP:
            log.index_bytes_fetched += len(data)
        else:
            log.bytes_fetched += len(data)
        return data

    _walk(read, app, platform, _empty_id(local))
    return log
