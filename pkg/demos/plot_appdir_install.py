"""
Fat AppDirs install lazily
==========================

One AppDir can carry builds for many platforms. Installing fetches only the
requested platform, and dependencies already present locally are skipped.
"""

import os

from cane import BlockStore, MerkleFS
from cane.appdir import build_appdir, closure, materialize

remote = MerkleFS(BlockStore())
platforms = {tag: remote.build_tree({"bin": {"tool": os.urandom(30000)}})
             for tag in ("linux-x86_64", "linux-arm64", "macos-arm64", "windows-x86_64")}
libfoo = build_appdir(remote.store, "libfoo", {tag: remote.build_tree({"libfoo.so": os.urandom(50000)})
                                             for tag in platforms})
tool = build_appdir(remote.store, "tool", platforms, [libfoo])
editor = build_appdir(remote.store, "editor",
                      {t: remote.build_tree({"editor": os.urandom(20000)}) for t in platforms}, [libfoo])

local = BlockStore()
first = materialize(tool, "linux-arm64", remote.store, local)
print("tool:  ", len(first.requested), "blocks,", first.bytes_fetched, "bytes")
second = materialize(editor, "linux-arm64", remote.store, local)
print("editor:", len(second.requested), "blocks,", second.bytes_fetched, "bytes (libfoo already local)")
print("editor closure size:", len(closure(remote.store, editor, "linux-arm64")))
