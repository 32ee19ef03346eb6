"""
Continuous backup and time travel
=================================

Every write produces a new root. Old roots stay readable, each directory
remembers its previous version under ``.`` and its history under ``...``.
"""

import os

from cane import BlockStore, MerkleFS, VersionStamp

store = BlockStore()
fs = MerkleFS(store)
root = fs.empty_tree()

# A megabyte of zeros costs a single data block.
root = fs.write_file(root, "zeros.bin", bytes(1 << 20), VersionStamp.parse("2005-07-14T14:23:17.000000Z.0"))
print("after zeros:", store.stats().data_blocks, "data block(s)")

# Edit one byte of a 256-chunk document: one new data block.
doc = bytearray(os.urandom(256 * 4096))
root = fs.write_file(root, "Documents/File.doc", bytes(doc), VersionStamp.parse("2005-07-14T14:23:17.000001Z.0"))
before = store.stats().data_blocks
doc[12345] ^= 1
edit = VersionStamp.parse("2005-07-14T14:23:17.000001Z.1")
root = fs.write_file(root, "Documents/File.doc", bytes(doc), edit)
print("edit added", store.stats().data_blocks - before, "data block(s)")

# The pre-edit file is one path away.
old = fs.read_file(root, f"Documents/.../{edit}/File.doc")
print("old version differs at byte 12345:", old[12345] != doc[12345])

# Revert costs no new data at all.
before = store.stats().data_blocks
root = fs.revert(root, "Documents/File.doc", edit, VersionStamp.parse("2005-07-14T14:30:00.000000Z.0"))
print("revert added", store.stats().data_blocks - before, "data block(s)")

for stamp, version in fs.history(root, "Documents"):
    print(f"  {stamp}  {version.short()}")
