"""Public-key identities, signed manifests, group certificates and ACLs.

An identity's address is its raw Ed25519 public key; nothing is registered
anywhere to create one. Groups are ordinary identities that sign
:class:`Certificate` objects vouching for members over a time window.
Access decisions depend only on keys, signatures and time.

An anonymous identity is simply ``generate_identity()`` used once and thrown
away.
"""

from __future__ import annotations

import enum
import hashlib
import os
import struct
from dataclasses import dataclass
from datetime import datetime, timezone
from typing import Iterable, Optional, Sequence

from cryptography.exceptions import InvalidSignature
from cryptography.hazmat.primitives import serialization
from cryptography.hazmat.primitives.asymmetric.ed25519 import Ed25519PrivateKey, Ed25519PublicKey

from .castore import BlockId, BlockKind, BlockStore
from .errors import KindError, MissingKeyError, WindowError

SIGNATURE_ALGORITHM = "ed25519"
# Ed25519 targets 128-bit security, comparable to 3072-bit RSA.
SECURITY_BITS = 128
RSA_EQUIVALENT_BITS = 3072

CERT_MAGIC = 0xCE
CERT_VERSION = 0x01
SIGNED_MANIFEST_MAGIC = 0x5D
SIGNED_MANIFEST_VERSION = 0x01

_RAW = dict(encoding=serialization.Encoding.Raw, format=serialization.PublicFormat.Raw)


@dataclass(frozen=True)
class Identity:
    public_key: bytes
    private_key: Optional[bytes] = None

    @property
    def address(self) -> str:
        return self.public_key.hex()

    @property
    def can_sign(self) -> bool:
        return self.private_key is not None

    def public_only(self) -> "Identity":
        return Identity(self.public_key)

    def sign(self, message: bytes) -> bytes:
        if self.private_key is None:
            raise MissingKeyError(f"identity {self.address[:16]} has no private key")
        return Ed25519PrivateKey.from_private_bytes(self.private_key).sign(message)

    def __repr__(self):
        return f"Identity({self.address[:16]}…, private={self.can_sign})"


def generate_identity(seed: Optional[bytes] = None) -> Identity:
    """Fresh key pair; a fixed ``seed`` gives a reproducible one."""
    if seed is None:
        secret = os.urandom(32)
    else:
        if isinstance(seed, str):
            seed = seed.encode("utf-8")
        secret = hashlib.sha512(b"cane-identity\x00" + bytes(seed)).digest()[:32]
    sk = Ed25519PrivateKey.from_private_bytes(secret)
    return Identity(sk.public_key().public_bytes(**_RAW), secret)


def verify_signature(public_key: bytes, signature: bytes, message: bytes) -> bool:
    try:
        Ed25519PublicKey.from_public_bytes(public_key).verify(signature, message)
    except (InvalidSignature, ValueError):
        return False
    return True


# signed manifests -------------------------------------------------------------


@dataclass(frozen=True)
class SignedManifest:
    manifest: BlockId
    signer: bytes
    signature: bytes

    def encode(self) -> bytes:
        return (bytes((SIGNED_MANIFEST_MAGIC, SIGNED_MANIFEST_VERSION))
                + self.manifest.digest + _lp(self.signer) + _lp(self.signature))

    @classmethod
    def decode(cls, data: bytes) -> "SignedManifest":
        if data[:2] != bytes((SIGNED_MANIFEST_MAGIC, SIGNED_MANIFEST_VERSION)):
            raise KindError("not a signed manifest")
        pos = 2
        digest = data[pos:pos + 64]
        pos += 64
        signer, pos = _read_lp(data, pos)
        sig, pos = _read_lp(data, pos)
        if pos != len(data) or len(digest) != 64:
            raise KindError("malformed signed manifest")
        return cls(BlockId(digest), signer, sig)


def _manifest_message(manifest: BlockId) -> bytes:
    return b"cane-manifest\x00" + manifest.digest


def sign_manifest(identity: Identity, manifest: BlockId) -> SignedManifest:
    return SignedManifest(manifest, identity.public_key, identity.sign(_manifest_message(manifest)))


def verify_manifest(sm: SignedManifest) -> bool:
    return verify_signature(sm.signer, sm.signature, _manifest_message(sm.manifest))


# certificates -----------------------------------------------------------------


def to_micros(t) -> int:
    """Microseconds since the Unix epoch for a datetime or an int."""
    if isinstance(t, int):
        return t
    if t.tzinfo is None:
        t = t.replace(tzinfo=timezone.utc)
    delta = t - datetime(1970, 1, 1, tzinfo=timezone.utc)
    return (delta.days * 86400 + delta.seconds) * 1_000_000 + delta.microseconds


@dataclass(frozen=True)
class Certificate:
    """Group-signed statement that ``member`` belongs to ``group``.

    Valid for ``valid_from <= t < valid_to`` (microseconds, UTC).
    """

    group: bytes
    member: bytes
    valid_from: int
    valid_to: int
    signature: bytes = b""

    def body(self) -> bytes:
        return (bytes((CERT_MAGIC, CERT_VERSION)) + _lp(self.group) + _lp(self.member)
                + struct.pack(">qq", self.valid_from, self.valid_to))

    def encode(self) -> bytes:
        return self.body() + _lp(self.signature)

    @classmethod
    def decode(cls, data: bytes) -> "Certificate":
        if data[:2] != bytes((CERT_MAGIC, CERT_VERSION)):
            raise KindError("not a certificate")
        group, pos = _read_lp(data, 2)
        member, pos = _read_lp(data, pos)
        if pos + 16 > len(data):
            raise KindError("truncated certificate")
        valid_from, valid_to = struct.unpack(">qq", data[pos:pos + 16])
        sig, pos = _read_lp(data, pos + 16)
        if pos != len(data):
            raise KindError("trailing bytes in certificate")
        return cls(group, member, valid_from, valid_to, sig)

    def signature_ok(self) -> bool:
        return verify_signature(self.group, self.signature, self.body())

    def in_window(self, now) -> bool:
        return self.valid_from <= to_micros(now) < self.valid_to


def issue_certificate(group: Identity, member: bytes, valid_from, valid_to) -> Certificate:
    start, end = to_micros(valid_from), to_micros(valid_to)
    if not start < end:
        raise WindowError("valid_from must precede valid_to")
    unsigned = Certificate(group.public_key, bytes(member), start, end)
    return Certificate(unsigned.group, unsigned.member, start, end, group.sign(unsigned.body()))


def check_certificate(cert: Certificate, now) -> Optional["DenyReason"]:
    if not cert.signature_ok():
        return DenyReason.CERT_INVALID
    if not cert.in_window(now):
        return DenyReason.CERT_EXPIRED
    return None


# access control ---------------------------------------------------------------


@dataclass(frozen=True)
class Acl:
    """Readers and writers by public key; an empty reader list is world-readable."""

    readers: tuple[bytes, ...] = ()
    writers: tuple[bytes, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "readers", tuple(sorted(set(map(bytes, self.readers)))))
        object.__setattr__(self, "writers", tuple(sorted(set(map(bytes, self.writers)))))

    def encode(self) -> bytes:
        out = bytearray()
        for keys in (self.readers, self.writers):
            out += struct.pack(">H", len(keys))
            for k in keys:
                out += _lp(k)
        return bytes(out)

    @classmethod
    def decode(cls, data: bytes) -> "Acl":
        pos = 0
        lists = []
        for _ in range(2):
            if pos + 2 > len(data):
                raise KindError("truncated ACL")
            (n,) = struct.unpack(">H", data[pos:pos + 2])
            pos += 2
            keys = []
            for _ in range(n):
                k, pos = _read_lp(data, pos)
                keys.append(k)
            lists.append(tuple(keys))
        if pos != len(data):
            raise KindError("trailing bytes in ACL")
        return cls(*lists)

    def store(self, store: BlockStore) -> BlockId:
        return store.put_block(self.encode(), BlockKind.MANIFEST)

    @classmethod
    def load(cls, store: BlockStore, block_id: Optional[BlockId]) -> "Acl":
        if block_id is None:
            return cls()
        return cls.decode(store.get_block(block_id))


class Mode(enum.Enum):
    READ = "read"
    WRITE = "write"


class DenyReason(enum.Enum):
    NOT_LISTED = "not-listed"
    CERT_EXPIRED = "cert-expired"
    CERT_INVALID = "cert-invalid"
    BAD_EVIDENCE = "bad-evidence"


@dataclass(frozen=True)
class AccessDecision:
    allowed: bool
    reason: Optional[DenyReason] = None

    def __bool__(self):
        return self.allowed

    def __str__(self):
        return "allow" if self.allowed else f"deny({self.reason.value})"


ALLOW = AccessDecision(True)

# Reason reported when several certificates fail, most specific first.
_REASON_RANK = [DenyReason.CERT_EXPIRED, DenyReason.CERT_INVALID]


def check_access(
    acl: Acl,
    requester: bytes,
    certs: Sequence[Certificate],
    evidence: Optional[SignedManifest],
    mode,
    now,
) -> AccessDecision:
    mode = Mode(mode)
    if evidence is not None and not verify_manifest(evidence):
        return AccessDecision(False, DenyReason.BAD_EVIDENCE)
    listed = acl.readers if mode is Mode.READ else acl.writers
    if mode is Mode.READ and not listed:
        return ALLOW
    if requester in listed:
        return ALLOW
    failures = set()
    for cert in certs:
        if cert.member != requester or cert.group not in listed:
            continue
        problem = check_certificate(cert, now)
        if problem is None:
            return ALLOW
        failures.add(problem)
    for reason in _REASON_RANK:
        if reason in failures:
            return AccessDecision(False, reason)
    return AccessDecision(False, DenyReason.NOT_LISTED)


def _lp(b: bytes) -> bytes:
    return struct.pack(">H", len(b)) + bytes(b)


def _read_lp(data: bytes, pos: int) -> tuple[bytes, int]:
    if pos + 2 > len(data):
        raise KindError("truncated field")
    (n,) = struct.unpack(">H", data[pos:pos + 2])
    end = pos + 2 + n
    if end > len(data):
        raise KindError("truncated field")
    return bytes(data[pos + 2:end]), end


def load_identity(text: str) -> Identity:
    """Parse the ``public=``/``private=`` key file written by :func:`dump_identity`."""
    values = {}
    for line in text.splitlines():
        key, _, value = line.partition("=")
        values[key.strip()] = value.strip()
    private = bytes.fromhex(values["private"]) if values.get("private") else None
    return Identity(bytes.fromhex(values["public"]), private)


def dump_identity(identity: Identity, include_private: bool = True) -> str:
    lines = [f"algorithm={SIGNATURE_ALGORITHM}", f"public={identity.public_key.hex()}"]
    if include_private and identity.private_key is not None:
        lines.append(f"private={identity.private_key.hex()}")
    return "\n".join(lines) + "\n"


def keys(items: Iterable) -> list[bytes]:
    """Coerce identities or raw keys to raw public keys."""
    return [i.public_key if isinstance(i, Identity) else bytes(i) for i in items]
