"""Content-addressed storage, versioned Merkle trees, identities, AppDirs,
a caching network simulator and scene rendering over the same tree model."""

from .castore import BlockId, BlockKind, BlockStore, FileBlockStore, StoreStats
from .errors import (AccessDeniedError, CaneError, CorruptionError, InvalidOperationError,
                     NotFoundError, SceneError, SpecError)
from .manifest import EntryKind, Manifest, ManifestEntry, VersionStamp
from .merklefs import MerkleFS, TreeHandle

__version__ = "0.1.0"

__all__ = [
    "AccessDeniedError", "BlockId", "BlockKind", "BlockStore", "CaneError", "CorruptionError",
    "EntryKind", "FileBlockStore", "InvalidOperationError", "Manifest", "ManifestEntry",
    "MerkleFS", "NotFoundError", "SceneError", "SpecError", "StoreStats", "TreeHandle",
    "VersionStamp",
]
