"""Versioned directory trees over a block store.

A tree is named by the digest of its root manifest. Every mutation rewrites
the manifests along the mutated path; each rewritten manifest records

* ``prev``: its own digest from before the write (reached with ``"."``), and
* ``history``: a manifest of ``stamp -> previous version`` links (``"..."``).

Old roots are never modified, so every root ever returned stays readable.
``".."`` is lexical: it returns to the directory the walk came from.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator, Mapping, Optional, Union

from .castore import BlockId, BlockKind, BlockStore
from .errors import (
    CorruptionError,
    InvalidNameError,
    KindError,
    NoHistoryError,
    NotFoundError,
    StampError,
)
from .manifest import (
    EntryKind,
    Manifest,
    ManifestEntry,
    VersionStamp,
    check_name,
    decode_chunk_list,
    encode_chunk_list,
)

DEFAULT_LWF_THRESHOLD = 64
EMPTY_MANIFEST = Manifest()

PathLike = Union[str, bytes, list, tuple]


@dataclass(frozen=True)
class TreeHandle:
    root: BlockId

    def __str__(self):
        return self.root.hex


@dataclass(frozen=True)
class Node:
    """Result of resolving a path: a directory, file, LWF, or receptor."""

    kind: EntryKind
    id: Optional[BlockId]
    inline: Optional[bytes] = None
    perms: Optional[BlockId] = None

    @property
    def is_dir(self) -> bool:
        return self.kind is EntryKind.DIR


@dataclass(frozen=True)
class ForkReport:
    linear: bool
    ancestor: Optional[BlockId]
    heads: tuple[BlockId, ...]


@dataclass(frozen=True)
class ReceptorFile:
    """Marker for :meth:`MerkleFS.build_tree`: create an event-receptor entry."""

    data: bytes = b""


@dataclass(frozen=True)
class LinkedEntry:
    """Marker for :meth:`MerkleFS.build_tree`: reuse an existing entry as-is."""

    entry: ManifestEntry = field()


def split_path(path: PathLike) -> list[bytes]:
    if isinstance(path, (list, tuple)):
        parts = [p.encode("utf-8") if isinstance(p, str) else bytes(p) for p in path]
    else:
        if isinstance(path, str):
            path = path.encode("utf-8")
        parts = path.split(b"/")
    return [p for p in parts if p]


def join_path(parts) -> str:
    return "/".join(p.decode("utf-8", "surrogateescape") if isinstance(p, bytes) else p for p in parts)


class MerkleFS:
    """Operations on immutable trees stored in ``store``.

    All methods are pure functions from (tree, arguments) to new trees; the
    only side effect is adding blocks to the store.
    """

    def __init__(self, store: BlockStore, lwf_threshold: int = DEFAULT_LWF_THRESHOLD):
        self.empty_id = store.block_id(EMPTY_MANIFEST.encode())
        self.store = store
        self.lwf_threshold = lwf_threshold

    # blocks --------------------------------------------------------------

    def load_manifest(self, block_id: BlockId) -> Manifest:
        if block_id == self.empty_id:
            return EMPTY_MANIFEST
        return Manifest.decode(self.store.get_block(block_id))

    def put_manifest(self, manifest: Manifest) -> BlockId:
        # The empty listing is a well-known constant and never occupies a block.
        if not manifest.entries and manifest.prev is None and manifest.history is None:
            return self.empty_id
        return self.store.put_block(manifest.encode(), BlockKind.MANIFEST)

    def empty_tree(self) -> TreeHandle:
        return TreeHandle(self.empty_id)

    def store_contents(self, data: bytes) -> BlockId:
        """Chunk ``data`` and return the id of its chunk list."""
        chunks = self.store.chunk_and_store(data)
        return self.store.put_block(encode_chunk_list(len(data), chunks), BlockKind.MANIFEST)

    def load_contents(self, chunk_list: BlockId) -> bytes:
        total, chunks = decode_chunk_list(self.store.get_block(chunk_list))
        data = self.store.reassemble(chunks)
        if len(data) != total:
            raise CorruptionError(f"chunk list {chunk_list.hex} length mismatch")
        return data

    def _file_entry(self, name: bytes, data: bytes, kind: EntryKind, perms) -> ManifestEntry:
        if kind is EntryKind.FILE and len(data) <= self.lwf_threshold:
            return ManifestEntry(name, EntryKind.LWF, inline=bytes(data), perms=perms)
        kind = EntryKind.RECEPTOR if kind is EntryKind.RECEPTOR else EntryKind.FILE
        return ManifestEntry(name, kind, self.store_contents(data), perms=perms)

    # reading -------------------------------------------------------------

    def lookup(self, tree: TreeHandle, path: PathLike) -> Node:
        """Walk ``path`` from the root honouring ".", "..", and "..."."""
        node = Node(EntryKind.DIR, tree.root)
        stack: list[Node] = []
        walked: list[bytes] = []
        for comp in split_path(path):
            if comp == b"..":
                if stack:
                    node = stack.pop()
                    walked.pop()
                continue
            if not node.is_dir:
                raise KindError(f"{join_path(walked) or '/'} is not a directory")
            manifest = self.load_manifest(node.id)
            if comp == b".":
                if manifest.prev is None:
                    raise NoHistoryError(f"{join_path(walked) or '/'} has no previous version")
                nxt = Node(EntryKind.DIR, manifest.prev)
            elif comp == b"...":
                hist = manifest.history if manifest.history is not None else self.put_manifest(Manifest())
                nxt = Node(EntryKind.DIR, hist)
            else:
                entry = manifest.get(comp)
                if entry is None:
                    raise NotFoundError(f"{join_path(walked + [comp])}: no such entry")
                nxt = Node(entry.kind, entry.target, entry.inline, entry.perms)
            stack.append(node)
            walked.append(comp)
            node = nxt
        return node

    def resolve(self, tree: TreeHandle, path: PathLike) -> BlockId:
        """Block id addressed by ``path``.

        Directories resolve to their manifest, files and receptors to their
        chunk list. A light-weight file has no block of its own; its id is the
        digest of its inline bytes.
        """
        node = self.lookup(tree, path)
        if node.kind is EntryKind.LWF:
            return self.store.block_id(node.inline)
        return node.id

    def read_file(self, tree: TreeHandle, path: PathLike) -> bytes:
        node = self.lookup(tree, path)
        if node.kind is EntryKind.DIR:
            raise KindError(f"{join_path(split_path(path))} is a directory")
        if node.kind is EntryKind.LWF:
            return node.inline
        return self.load_contents(node.id)

    def listdir(self, tree: TreeHandle, path: PathLike = "") -> tuple[ManifestEntry, ...]:
        node = self.lookup(tree, path)
        if not node.is_dir:
            raise KindError(f"{join_path(split_path(path))} is not a directory")
        return self.load_manifest(node.id).entries

    def history(self, tree: TreeHandle, path: PathLike = "") -> list[tuple[VersionStamp, BlockId]]:
        """(stamp, version-before-that-mutation) pairs, oldest first."""
        node = self.lookup(tree, path)
        if not node.is_dir:
            raise KindError(f"{join_path(split_path(path))} is not a directory")
        return self._history_of(self.load_manifest(node.id))

    def _history_of(self, manifest: Manifest) -> list[tuple[VersionStamp, BlockId]]:
        if manifest.history is None:
            return []
        hist = self.load_manifest(manifest.history)
        out = [(VersionStamp.parse(e.text_name), e.target) for e in hist.entries]
        out.sort(key=lambda p: p[0])
        return out

    def last_stamp(self, tree: TreeHandle, path: PathLike = "") -> Optional[VersionStamp]:
        """Latest stamp on any directory along ``path`` (None if untouched)."""
        best = None
        node = Node(EntryKind.DIR, tree.root)
        parts = split_path(path)
        for i in range(len(parts) + 1):
            if node is None or not node.is_dir:
                break
            manifest = self.load_manifest(node.id)
            h = self._history_of(manifest)
            if h and (best is None or h[-1][0] > best):
                best = h[-1][0]
            if i < len(parts):
                e = manifest.get(parts[i])
                node = Node(e.kind, e.target) if e is not None else None
        return best

    def walk(self, tree: TreeHandle, path: PathLike = "") -> Iterator[tuple[str, ManifestEntry]]:
        """Depth-first listing of the current version (no history)."""
        base = split_path(path)

        def rec(dir_id, prefix):
            for e in self.load_manifest(dir_id).entries:
                p = prefix + [e.name]
                yield join_path(p), e
                if e.kind is EntryKind.DIR:
                    yield from rec(e.target, p)

        node = self.lookup(tree, base)
        if not node.is_dir:
            raise KindError(f"{join_path(base)} is not a directory")
        yield from rec(node.id, [])

    # mutation ------------------------------------------------------------

    def _check_plain(self, parts: list[bytes]) -> None:
        for p in parts:
            check_name(p)

    def _mutate(self, root: BlockId, dir_parts: list[bytes], change, stamp: VersionStamp,
                create: bool = True) -> BlockId:
        """Apply ``change(entries_dict)`` to the directory at ``dir_parts``.

        Every manifest from that directory up to the root is rewritten with
        ``prev`` set to its old digest and ``stamp`` appended to its history.
        """
        if not isinstance(stamp, VersionStamp):
            raise StampError(f"expected a VersionStamp, got {stamp!r}")
        self._check_plain(dir_parts)

        chain: list[tuple[Optional[BlockId], Manifest]] = []
        current: Optional[BlockId] = root
        for i in range(len(dir_parts) + 1):
            if current is None:
                manifest = Manifest()
                current = self.put_manifest(manifest)
            else:
                manifest = self.load_manifest(current)
            chain.append((current, manifest))
            if i == len(dir_parts):
                break
            entry = manifest.get(dir_parts[i])
            if entry is None:
                if not create:
                    raise NotFoundError(f"{join_path(dir_parts[:i + 1])}: no such directory")
                current = None
            elif entry.kind is not EntryKind.DIR:
                raise KindError(f"{join_path(dir_parts[:i + 1])} is not a directory")
            else:
                current = entry.target

        for old_id, manifest in chain:
            h = self._history_of(manifest)
            if h and not stamp > h[-1][0]:
                raise StampError(f"stamp {stamp} does not follow {h[-1][0]}")

        new_child: Optional[ManifestEntry] = None
        for depth in range(len(chain) - 1, -1, -1):
            old_id, manifest = chain[depth]
            entries = manifest.as_dict()
            if depth == len(chain) - 1:
                entries = change(dict(entries))
            else:
                entries[new_child.name] = new_child
            new_id = self.put_manifest(Manifest(
                tuple(entries.values()),
                prev=old_id,
                history=self._extend_history(manifest, stamp, old_id),
            ))
            if depth > 0:
                name = dir_parts[depth - 1]
                old_entry = chain[depth - 1][1].get(name)
                perms = old_entry.perms if old_entry is not None else None
                new_child = ManifestEntry(name, EntryKind.DIR, new_id, perms=perms)
        return new_id

    def _extend_history(self, manifest: Manifest, stamp: VersionStamp, old_id: BlockId) -> BlockId:
        entries = ()
        if manifest.history is not None:
            entries = self.load_manifest(manifest.history).entries
        link = ManifestEntry(str(stamp).encode(), EntryKind.DIR, old_id)
        return self.put_manifest(Manifest(entries + (link,)))

    def write_file(self, tree: TreeHandle, path: PathLike, data: bytes, stamp: VersionStamp,
                   kind: Optional[EntryKind] = None, perms: Optional[BlockId] = None) -> TreeHandle:
        """Store ``data`` at ``path`` and return the new tree.

        Small files become light-weight entries inlined in the parent
        manifest. ``kind=EntryKind.RECEPTOR`` creates an event-receptor file;
        writing to an existing receptor keeps it a receptor.
        """
        parts = split_path(path)
        if not parts:
            raise InvalidNameError("cannot write to the root directory")
        self._check_plain(parts)
        name = parts[-1]

        def change(entries):
            old = entries.get(name)
            if old is not None and old.kind is EntryKind.DIR:
                raise KindError(f"{join_path(parts)} is a directory")
            k = kind
            if k is None:
                k = EntryKind.RECEPTOR if old is not None and old.kind is EntryKind.RECEPTOR else EntryKind.FILE
            p = perms if perms is not None else (old.perms if old is not None else None)
            entries[name] = self._file_entry(name, data, k, p)
            return entries

        return TreeHandle(self._mutate(tree.root, parts[:-1], change, stamp))

    def make_dir(self, tree: TreeHandle, path: PathLike, stamp: VersionStamp) -> TreeHandle:
        parts = split_path(path)
        if not parts:
            raise InvalidNameError("the root directory already exists")
        self._check_plain(parts)
        name = parts[-1]
        empty = self.put_manifest(Manifest())

        def change(entries):
            old = entries.get(name)
            if old is not None:
                if old.kind is EntryKind.DIR:
                    return entries
                raise KindError(f"{join_path(parts)} exists and is not a directory")
            entries[name] = ManifestEntry(name, EntryKind.DIR, empty)
            return entries

        return TreeHandle(self._mutate(tree.root, parts[:-1], change, stamp))

    def link(self, tree: TreeHandle, path: PathLike, entry: ManifestEntry,
             stamp: VersionStamp) -> TreeHandle:
        """Place an existing entry (any kind) at ``path``: an O(1) copy."""
        parts = split_path(path)
        if not parts:
            raise InvalidNameError("cannot replace the root directory")
        self._check_plain(parts)
        name = parts[-1]
        placed = ManifestEntry(name, entry.kind, entry.target, entry.inline, entry.perms)

        def change(entries):
            entries[name] = placed
            return entries

        return TreeHandle(self._mutate(tree.root, parts[:-1], change, stamp))

    def copy(self, tree: TreeHandle, src: PathLike, dst: PathLike, stamp: VersionStamp) -> TreeHandle:
        src_parts = split_path(src)
        if not src_parts:
            raise InvalidNameError("cannot copy the root directory into itself")
        parent = self.lookup(tree, src_parts[:-1])
        if not parent.is_dir:
            raise KindError(f"{join_path(src_parts[:-1])} is not a directory")
        entry = self.load_manifest(parent.id).get(src_parts[-1])
        if entry is None:
            raise NotFoundError(f"{join_path(src_parts)}: no such entry")
        return self.link(tree, dst, entry, stamp)

    def remove(self, tree: TreeHandle, path: PathLike, stamp: VersionStamp) -> TreeHandle:
        parts = split_path(path)
        if not parts:
            raise InvalidNameError("cannot remove the root directory")
        name = parts[-1]

        def change(entries):
            if name not in entries:
                raise NotFoundError(f"{join_path(parts)}: no such entry")
            del entries[name]
            return entries

        return TreeHandle(self._mutate(tree.root, parts[:-1], change, stamp, create=False))

    def revert(self, tree: TreeHandle, path: PathLike, stamp, new_stamp: VersionStamp) -> TreeHandle:
        """Restore ``path`` to the version recorded under ``stamp``.

        A directory path takes the listing its own history recorded at
        ``stamp``; any other path (a file, or an entry that has since been
        removed) takes the entry from its parent's recorded listing. The revert
        is itself a mutation and is appended to history. Only manifests are
        written, never data blocks.
        """
        if isinstance(stamp, str):
            stamp = VersionStamp.parse(stamp)
        parts = split_path(path)
        self._check_plain(parts)
        try:
            node = self.lookup(tree, parts)
        except NotFoundError:
            node = None

        if node is not None and node.is_dir:
            old = self._version_at(self.load_manifest(node.id), stamp, parts)
            restored = self.load_manifest(old).as_dict()

            def change(entries):
                return dict(restored)

            return TreeHandle(self._mutate(tree.root, parts, change, new_stamp, create=False))

        if not parts:
            raise KindError("root is not a directory")
        parent = self.lookup(tree, parts[:-1])
        if not parent.is_dir:
            raise KindError(f"{join_path(parts[:-1])} is not a directory")
        old = self._version_at(self.load_manifest(parent.id), stamp, parts[:-1])
        old_entry = self.load_manifest(old).get(parts[-1])
        name = parts[-1]

        def change(entries):
            if old_entry is None:
                entries.pop(name, None)
            else:
                entries[name] = old_entry
            return entries

        return TreeHandle(self._mutate(tree.root, parts[:-1], change, new_stamp, create=False))

    def _version_at(self, manifest: Manifest, stamp: VersionStamp, parts) -> BlockId:
        for s, version in self._history_of(manifest):
            if s == stamp:
                return version
        raise NotFoundError(f"{join_path(parts) or '/'}: no version stamped {stamp}")

    # construction --------------------------------------------------------

    def build_tree(self, spec: Mapping) -> TreeHandle:
        """Build a history-free tree from a nested mapping.

        Values may be bytes (a file), a mapping (a directory),
        :class:`ReceptorFile`, or :class:`LinkedEntry`. Equal sub-mappings
        produce one shared manifest block.
        """
        return TreeHandle(self._build_dir(spec))

    def _build_dir(self, spec: Mapping) -> BlockId:
        entries = []
        for key, value in spec.items():
            name = check_name(key)
            if isinstance(value, Mapping):
                entries.append(ManifestEntry(name, EntryKind.DIR, self._build_dir(value)))
            elif isinstance(value, ReceptorFile):
                entries.append(self._file_entry(name, value.data, EntryKind.RECEPTOR, None))
            elif isinstance(value, LinkedEntry):
                e = value.entry
                entries.append(ManifestEntry(name, e.kind, e.target, e.inline, e.perms))
            elif isinstance(value, str):
                entries.append(self._file_entry(name, value.encode("utf-8"), EntryKind.FILE, None))
            else:
                entries.append(self._file_entry(name, bytes(value), EntryKind.FILE, None))
        return self.put_manifest(Manifest(tuple(entries)))

    # forks ---------------------------------------------------------------

    def version_chain(self, root: BlockId) -> list[BlockId]:
        """``root`` followed by each earlier version reachable through ``prev``."""
        chain = []
        seen = set()
        current: Optional[BlockId] = root
        while current is not None:
            if current in seen:
                raise CorruptionError(f"cycle in version chain at {current.hex}")
            seen.add(current)
            chain.append(current)
            try:
                current = self.load_manifest(current).prev
            except NotFoundError as exc:
                raise CorruptionError(f"version chain references missing block {current.hex}") from exc
        return chain

    def detect_forks(self, a: TreeHandle, b: TreeHandle) -> ForkReport:
        chain_a = self.version_chain(a.root)
        chain_b = self.version_chain(b.root)
        if b.root in set(chain_a):
            return ForkReport(True, b.root, (a.root,))
        if a.root in set(chain_b):
            return ForkReport(True, a.root, (b.root,))
        in_a = set(chain_a)
        ancestor = next((v for v in chain_b if v in in_a), None)
        return ForkReport(False, ancestor, (a.root, b.root))
