"""
Groups without a membership server
==================================

A group is just a key pair. It signs time-limited certificates for its
members; when a certificate runs out, membership lapses on its own.
"""

from datetime import datetime, timedelta, timezone

from cane import BlockStore, MerkleFS
from cane.identity import Acl, check_access, generate_identity, issue_certificate, sign_manifest, verify_manifest

team = generate_identity(b"team")
alice = generate_identity(b"alice")
start = datetime(2026, 1, 1, tzinfo=timezone.utc)
cert = issue_certificate(team, alice.public_key, start, start + timedelta(days=30))

acl = Acl(readers=[team.public_key], writers=[team.public_key])
for day in (-1, 0, 15, 30, 31):
    when = start + timedelta(days=day)
    print(f"day {day:3d}: read {check_access(acl, alice.public_key, [cert], None, 'read', when)}")

fs = MerkleFS(BlockStore())
tree = fs.build_tree({"report.txt": "quarterly numbers"})
evidence = sign_manifest(alice, tree.root)
print("signed tree verifies:", verify_manifest(evidence))
